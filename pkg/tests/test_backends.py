"""Compiled extension vs pure numpy fallback: same results, different speed."""

import time

import numpy as np
import pytest

from lsgattn import backends, tensor
from lsgattn.attention import LsgAttention
from lsgattn.config import LsgConfig
from lsgattn.rng import Rng

HAVE_COMPILED = "compiled" in backends.available()

needs_compiled = pytest.mark.skipif(not HAVE_COMPILED, reason="extension not built")


@pytest.fixture
def restore_backend():
    current = backends.active()
    yield
    backends.use(current)


@needs_compiled
@pytest.mark.parametrize("dtype", [np.float32, np.float64])
def test_matmul_bitwise_identical_across_backends(dtype, restore_backend):
    r = Rng(21)
    a = r.normal((13, 9)).astype(dtype)
    b = r.normal((9, 7)).astype(dtype)
    backends.use("compiled")
    out_c = tensor.matmul(a, b)
    backends.use("pure")
    out_p = tensor.matmul(a, b)
    assert np.array_equal(out_c, out_p)


@needs_compiled
def test_softmax_agrees_across_backends(restore_backend):
    r = Rng(22)
    s = r.normal((17, 23))
    mask = r.normal((17, 23)) > -0.3
    mask[:, 0] = True
    mask[4] = False
    backends.use("compiled")
    wc, fc = tensor.softmax_masked(s, mask)
    backends.use("pure")
    wp, fp = tensor.softmax_masked(s, mask)
    assert np.array_equal(fc, fp)
    assert np.abs(wc - wp).max() <= 1e-14  # transcendental ulps only


@needs_compiled
def test_rng_stream_bitwise_identical_across_backends(restore_backend):
    backends.use("compiled")
    a = Rng(31).normal((257,))
    backends.use("pure")
    b = Rng(31).normal((257,))
    assert np.array_equal(a, b)


@needs_compiled
@pytest.mark.parametrize("strategy,f,g,causal", [
    ("none", 0, 0, False),
    ("pooling", 2, 2, False),
    ("lsh", 2, 0, False),
    ("norm", 2, 1, False),
    ("strided", 2, 0, True),
])
def test_forward_agrees_across_backends(strategy, f, g, causal, restore_backend):
    cfg = LsgConfig(block_size=8, sparsity_factor=f, strategy=strategy,
                    num_global=g, heads=3, head_dim=4, causal=causal, seed=77)
    r = Rng(88)
    n = 37
    q, k, v = (r.normal((n, cfg.model_dim)) for _ in range(3))
    gq = gk = gv = None
    if g:
        gq, gk, gv = (r.normal((g, cfg.model_dim)) for _ in range(3))
    backends.use("compiled")
    out_c = LsgAttention(cfg).forward(q, k, v, gq, gk, gv)
    backends.use("pure")
    out_p = LsgAttention(cfg).forward(q, k, v, gq, gk, gv)
    assert np.abs(out_c.out - out_p.out).max() <= 1e-13
    if g:
        assert np.abs(out_c.global_out - out_p.global_out).max() <= 1e-13


@needs_compiled
def test_backward_agrees_across_backends(restore_backend):
    cfg = LsgConfig(block_size=4, sparsity_factor=2, strategy="pooling",
                    num_global=1, heads=2, head_dim=4, seed=5)
    r = Rng(6)
    n = 12
    q, k, v = (r.normal((n, cfg.model_dim)) for _ in range(3))
    gq, gk, gv = (r.normal((1, cfg.model_dim)) for _ in range(3))
    u = r.normal((n, cfg.model_dim))
    ug = r.normal((1, cfg.model_dim))
    grads = {}
    for name in ("compiled", "pure"):
        backends.use(name)
        inst = LsgAttention(cfg)
        inst.forward(q, k, v, gq, gk, gv, keep_state=True)
        grads[name] = inst.backward(u, ug)
    for field in ("q", "k", "v", "global_q", "global_k", "global_v"):
        diff = np.abs(getattr(grads["compiled"], field) - getattr(grads["pure"], field))
        assert diff.max() <= 1e-13, field


def test_backend_selection_api(restore_backend):
    assert backends.name() in backends.available()
    backends.use("pure")
    assert backends.name() == "pure"
    with pytest.raises(RuntimeError):
        backends.use("nonexistent")


@needs_compiled
def test_compiled_is_faster_on_hot_kernel(restore_backend):
    """The point of the extension: time both backends on one forward."""
    cfg = LsgConfig(block_size=32, sparsity_factor=2, strategy="strided",
                    heads=2, head_dim=16, seed=9, precision="single")
    r = Rng(10)
    n = 2048
    q, k, v = (r.normal((n, cfg.model_dim), "single") for _ in range(3))
    timings = {}
    for name in ("compiled", "pure"):
        backends.use(name)
        inst = LsgAttention(cfg)
        inst.forward(q, k, v)  # warmup
        t0 = time.perf_counter()
        inst.forward(q, k, v)
        timings[name] = time.perf_counter() - t0
    print(
        f"\nforward n={n}: compiled {timings['compiled']*1e3:.1f} ms, "
        f"pure {timings['pure']*1e3:.1f} ms, "
        f"speedup x{timings['pure']/timings['compiled']:.1f}"
    )
    # regression guard only; exact speedups are machine-dependent
    assert timings["compiled"] <= timings["pure"] * 1.5
