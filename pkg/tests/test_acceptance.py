"""Acceptance gate: one test per criterion, each printing a PASS/FAIL line.

Run with `pytest tests/test_acceptance.py -v -s` to see the per-criterion
lines and measured runtimes. The scaling criterion times real forwards at
n up to 16384 and takes a couple of minutes on a desktop CPU.
"""

import time

import numpy as np
import pytest

from lsgattn import bench, check
from lsgattn.attention import (
    LsgAttention,
    attended_token_span,
    forward,
    per_query_key_counts,
    score_entry_count,
)
from lsgattn.bundle import WeightBundle, convert, extend_positional, init_globals, load, save
from lsgattn.config import LsgConfig
from lsgattn.rng import Rng


def report(number, name, passed, detail):
    status = "PASS" if passed else "FAIL"
    print(f"\nACCEPTANCE {number} {name}: {status} ({detail})")
    assert passed, f"criterion {number} {name}: {detail}"


def test_criterion_1_oracle_equivalence():
    t0 = time.monotonic()
    reports = []
    for precision in ("double", "single"):
        reports.extend(check.run_equivalence(quick=False, seed=0, precision=precision))
    elapsed = time.monotonic() - t0
    equiv = [r for r in reports if r.name.startswith("oracle-equivalence")]
    ok = all(r.passed for r in equiv) and elapsed < 300
    detail = "; ".join(f"{r.name} max_err={r.max_err:.2e} tol={r.tolerance:.0e}" for r in equiv)
    report(1, "oracle-equivalence", ok, f"{detail}; {elapsed:.1f}s < 300s")


def test_criterion_2_structural_counts():
    rep = check.run_structural_counts(seed=0)
    counts = per_query_key_counts(2, 4)
    span = attended_token_span(2, 4)
    figure_ok = counts == (6, 4) and span == 3 * 2 + 2 * 2 * 4

    # per-block key width 5*bt + g, asserted on the assembled buffers
    widths_ok = True
    for bt, f, g in [(4, 2, 0), (8, 2, 1), (16, 4, 4)]:
        cfg = LsgConfig(block_size=bt, sparsity_factor=f, strategy="pooling",
                        num_global=g, heads=2, head_dim=4, seed=1)
        r = Rng(2)
        n = (2 * f + 5) * bt
        q, k, v = (r.normal((n, cfg.model_dim)) for _ in range(3))
        gq = gk = gv = None
        if g:
            gq, gk, gv = (r.normal((g, cfg.model_dim)) for _ in range(3))
        inst = LsgAttention(cfg)
        inst.forward(q, k, v, gq, gk, gv, keep_state=True)
        widths_ok &= inst._state.k_aug.shape[2] == 5 * bt + g

    ok = rep.passed and figure_ok and widths_ok
    report(2, "structural-counts", ok,
           f"width=5*bt+g and span=3*bt+2*bt*f exact; bt=2,f=4 gives {counts[0]} local + {counts[1]} sparse keys")


def test_criterion_3_gradient_correctness():
    t0 = time.monotonic()
    worst = 0.0
    for strategy in ("strided", "block_strided", "pooling", "norm", "lsh"):
        cfg = LsgConfig(block_size=4, sparsity_factor=2, strategy=strategy,
                        num_global=2, heads=2, head_dim=4, seed=55, precision="double")
        worst = max(worst, check.finite_difference_gradients(cfg, n=12, step=1e-5))
    elapsed = time.monotonic() - t0
    ok = worst <= 1e-4 and elapsed < 60
    report(3, "gradient-fd", ok,
           f"n=12 bt=4 f=2 heads=2 d_h=4, all strategies, worst rel err {worst:.2e} <= 1e-4; {elapsed:.1f}s < 60s")


def test_criterion_4_causal_independence():
    rep = check.run_causal_independence(seed=0, draws=20)
    report(4, "causal-independence", rep.passed,
           f"20 draws per config, max leak {rep.max_err:.2e} <= 1e-6")


def test_criterion_5_complexity_scaling():
    t0 = time.monotonic()
    cfg = LsgConfig(block_size=128, sparsity_factor=2, strategy="strided",
                    num_global=1, heads=4, head_dim=32, seed=3, precision="single")
    lengths = (4096, 8192, 16384)

    g = cfg.num_global
    doubling = all(
        score_entry_count(cfg, 2 * n) - g * (2 * n + g)
        == 2 * (score_entry_count(cfg, n) - g * (n + g))
        for n in lengths
    )

    times = {}
    for attn in ("lsg", "full"):
        for n in lengths:
            rec = bench.bench_point(attn, cfg, n, repeats=3, seed=3, mem="analytic")
            times[(attn, n)] = rec.time_ns
    lsg_ratios = [times[("lsg", 2 * n)] / times[("lsg", n)] for n in (4096, 8192)]
    full_ratios = [times[("full", 2 * n)] / times[("full", n)] for n in (4096, 8192)]
    elapsed = time.monotonic() - t0
    ok = (
        doubling
        and all(r <= 2.6 for r in lsg_ratios)
        and all(r >= 3.0 for r in full_ratios)
        and elapsed < 600
    )
    report(5, "complexity-scaling", ok,
           f"entries double exactly; lsg t(2n)/t(n)={[f'{r:.2f}' for r in lsg_ratios]} <= 2.6, "
           f"full={[f'{r:.2f}' for r in full_ratios]} >= 3.0; {elapsed:.0f}s < 600s")


def test_criterion_6_conversion(tmp_path):
    # modularity sweep
    modular = True
    for L in range(1, 9):
        p = Rng(L).normal((L, 3))
        for target in range(L, 4 * L + 1):
            out = extend_positional(p, target)
            modular &= all(np.array_equal(out[i], p[i % L]) for i in range(target))

    # initialization rules
    r = Rng(4)
    p = r.normal((8, 3))
    e_cls, e_mask = r.normal((3,)), r.normal((3,))
    init = init_globals(e_cls, e_mask, p, 3)
    rules = (
        np.array_equal(init[0], e_cls + p[0])
        and np.array_equal(init[1], e_mask + p[1])
        and np.array_equal(init[2], e_mask + p[2])
    )

    # byte-identical round-trip and untouched-entries contract
    bundle = WeightBundle(
        {
            "embeddings.tokens": r.normal((12, 4), "single"),
            "embeddings.positions": r.normal((16, 4), "single"),
            "layer.w": r.normal((4, 4), "double"),
        },
        {
            "positional_embeddings": "embeddings.positions",
            "token_embeddings": "embeddings.tokens",
            "cls_token_id": "0",
            "mask_token_id": "5",
        },
    )
    p1, p2 = tmp_path / "a.lsgw", tmp_path / "b.lsgw"
    save(bundle, p1)
    save(load(p1), p2)
    roundtrip = p1.read_bytes() == p2.read_bytes()

    cfg = LsgConfig(block_size=4, sparsity_factor=2, strategy="pooling",
                    num_global=2, heads=2, head_dim=2, precision="single")
    converted = convert(bundle, cfg, 64)
    untouched = all(
        converted.entries[name].tobytes() == arr.tobytes()
        for name, arr in bundle.entries.items()
        if name != "embeddings.positions"
    )

    ok = modular and rules and roundtrip and untouched
    report(6, "conversion", ok,
           "modularity sweep, init rules, byte-identical round-trip, untouched tensors bitwise")


def test_criterion_7_degeneracy():
    worst = 0.0
    for bt, n in [(8, 8), (16, 11), (16, 16), (32, 5)]:
        cfg = LsgConfig(block_size=bt, heads=2, head_dim=4, seed=9, precision="double")
        r = Rng(40 + n)
        q, k, v = (r.normal((n, cfg.model_dim)) for _ in range(3))
        got, _ = forward(q, k, v, cfg=cfg)
        ref = np.empty_like(q)
        for h in range(2):
            cols = slice(h * 4, (h + 1) * 4)
            s = q[:, cols] @ k[:, cols].T / np.sqrt(4)
            w = np.exp(s - s.max(axis=1, keepdims=True))
            w /= w.sum(axis=1, keepdims=True)
            ref[:, cols] = w @ v[:, cols]
        worst = max(worst, float(np.abs(got.out - ref).max()))
    report(7, "degeneracy-full-attention", worst <= 1e-10,
           f"n <= bt, f=0, g=0: max diff to textbook dense {worst:.2e} <= 1e-10")
