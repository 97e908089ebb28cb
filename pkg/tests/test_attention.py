import numpy as np
import pytest

from lsgattn.attention import (
    attended_token_span,
    chunk,
    forward,
    gather_local,
    gather_sparse,
    per_query_key_counts,
    score_entry_count,
    unchunk,
)
from lsgattn.config import LsgConfig
from lsgattn.rng import Rng
from lsgattn.sparse import build_sparse


def cfg_for(bt=4, f=0, strategy="none", g=0, heads=2, d=4, causal=False, precision="double", seed=0):
    return LsgConfig(block_size=bt, sparsity_factor=f, strategy=strategy,
                     num_global=g, heads=heads, head_dim=d, causal=causal,
                     seed=seed, precision=precision)


def textbook_attention(q, k, v, heads, causal=False):
    """Independent dense reference: plain numpy softmax attention."""
    n, dim = q.shape
    d = dim // heads
    out = np.empty_like(q)
    for h in range(heads):
        cols = slice(h * d, (h + 1) * d)
        scores = q[:, cols] @ k[:, cols].T / np.sqrt(d)
        if causal:
            scores = np.where(np.arange(n)[None, :] <= np.arange(n)[:, None], scores, -np.inf)
        w = np.exp(scores - scores.max(axis=1, keepdims=True))
        w /= w.sum(axis=1, keepdims=True)
        out[:, cols] = w @ v[:, cols]
    return out


def seeded_inputs(cfg, n, seed=50):
    r = Rng(seed)
    q, k, v = (r.normal((n, cfg.model_dim), cfg.precision) for _ in range(3))
    if cfg.num_global:
        extra = tuple(r.normal((cfg.num_global, cfg.model_dim), cfg.precision) for _ in range(3))
    else:
        extra = (None, None, None)
    return (q, k, v) + extra


def test_chunk_exact_division():
    cfg = cfg_for(bt=4)
    b = chunk(Rng(1).normal((8, cfg.model_dim)), cfg)
    assert b.blocks.shape == (2, 2, 4, 4)
    assert not b.pad_mask.any()


def test_chunk_remainder_pads_and_masks():
    cfg = cfg_for(bt=4)
    b = chunk(Rng(1).normal((5, cfg.model_dim)), cfg)
    assert b.blocks.shape[1] == 2
    assert b.pad_mask.sum() == 3
    assert np.array_equal(b.blocks[:, 1, 1:, :], np.zeros((2, 3, 4)))


def test_chunk_unchunk_roundtrip():
    cfg = cfg_for(bt=4, heads=3, d=5)
    x = Rng(2).normal((11, cfg.model_dim))
    assert np.array_equal(unchunk(chunk(x, cfg).blocks, 11), x)


def test_gather_local_single_block():
    cfg = cfg_for(bt=4)
    b = chunk(Rng(3).normal((4, cfg.model_dim)), cfg)
    idx, mask = gather_local(b)
    assert idx.tolist() == [[1, 0, 1]]  # sentinel n_b = 1 on both sides
    assert mask.tolist() == [[False] * 4 + [True] * 4 + [False] * 4]


def test_gather_local_interior_and_boundary():
    cfg = cfg_for(bt=2)
    b = chunk(Rng(3).normal((6, cfg.model_dim)), cfg)
    idx, mask = gather_local(b)
    assert idx[1].tolist() == [0, 1, 2]
    assert mask[1].all()
    assert not mask[0, :2].any()  # block 0: previous segment fully masked
    assert not mask[2, -2:].any()


def test_gather_local_causal_drops_next_block():
    cfg = cfg_for(bt=2, causal=True)
    b = chunk(Rng(3).normal((6, cfg.model_dim)), cfg)
    idx, mask = gather_local(b, causal=True)
    assert idx.shape == (3, 2)
    assert idx[1].tolist() == [0, 1]


def test_gather_sparse_boundary_and_span():
    cfg = cfg_for(bt=4, f=2, strategy="pooling")
    r = Rng(4)
    n_b = 10
    bk = np.stack([r.normal((n_b, 4, 4)) for _ in range(2)])
    bv = np.stack([r.normal((n_b, 4, 4)) for _ in range(2)])
    sp = build_sparse(bk, bv, np.ones((n_b, 4), bool), cfg)
    ctx0 = gather_sparse(sp, 0, cfg)
    assert not ctx0["left"]["mask"].any()  # nothing to the left of block 0
    ctx5 = gather_sparse(sp, 5, cfg)
    left_positions = [p for row in ctx5["left"]["provenance"][0] for p in row]
    right_positions = [p for row in ctx5["right"]["provenance"][0] for p in row]
    # left covers blocks [i-1-f, i-2] = [2, 3], right covers [7, 8]
    assert min(left_positions) == 2 * 4 and max(left_positions) == 4 * 4 - 1
    assert min(right_positions) == 7 * 4 and max(right_positions) == 9 * 4 - 1
    span = max(right_positions) - (5 - 1 - 2) * 4 + 1
    assert span == attended_token_span(4, 2) == 3 * 4 + 2 * 4 * 2


def test_max_context_formula():
    assert attended_token_span(128, 2) == 896
    assert per_query_key_counts(2, 4) == (6, 4)  # 6 local + 4 sparse keys


def test_forward_single_token_returns_value_row():
    cfg = cfg_for(bt=4, heads=2, d=3)
    q, k, v, *_ = seeded_inputs(cfg, 1)
    out, _ = forward(q, k, v, cfg=cfg)
    assert np.abs(out.out - v).max() <= 1e-15
    assert out.weights_checksum[0] == pytest.approx(1.0, abs=1e-12)


def test_degenerate_case_equals_textbook_dense():
    # n <= block size, no sparse, no globals: plain full attention
    cfg = cfg_for(bt=16, heads=2, d=4)
    q, k, v, *_ = seeded_inputs(cfg, 11)
    out, _ = forward(q, k, v, cfg=cfg)
    assert np.abs(out.out - textbook_attention(q, k, v, 2)).max() <= 1e-10


def test_causal_small_case_equals_textbook_causal():
    cfg = cfg_for(bt=16, causal=True, heads=2, d=4)
    q, k, v, *_ = seeded_inputs(cfg, 9)
    out, _ = forward(q, k, v, cfg=cfg)
    assert np.abs(out.out - textbook_attention(q, k, v, 2, causal=True)).max() <= 1e-10


def test_score_entry_count_examples():
    cfg = cfg_for(bt=128, f=2, strategy="strided", g=1, heads=8, d=64)
    assert score_entry_count(cfg, 1024) == 8 * 128 * (5 * 128 + 1) + 1 * (1024 + 1) == 657409
    # doubling n doubles the non-global term exactly
    g = 1
    for n in (1024, 4096):
        a = score_entry_count(cfg, n) - g * (n + g)
        b = score_entry_count(cfg, 2 * n) - g * (2 * n + g)
        assert b == 2 * a
    local_only = cfg_for(bt=8, heads=2, d=4)
    assert score_entry_count(local_only, 24) == 3 * 8 * (3 * 8)


def test_score_entry_count_causal_widths():
    causal_sparse = cfg_for(bt=8, f=2, strategy="strided", causal=True)
    assert score_entry_count(causal_sparse, 32) == 4 * 8 * (3 * 8)
    causal_local = cfg_for(bt=8, causal=True)
    assert score_entry_count(causal_local, 32) == 4 * 8 * (2 * 8)


def test_forward_reports_entry_count():
    cfg = cfg_for(bt=4, f=2, strategy="pooling", g=2, heads=2)
    q, k, v, gq, gk, gv = seeded_inputs(cfg, 13)
    out, _ = forward(q, k, v, gq, gk, gv, cfg=cfg)
    assert out.score_entries == score_entry_count(cfg, 13)


@pytest.mark.parametrize("strategy,f,g,causal", [
    ("none", 0, 0, False),
    ("pooling", 2, 3, False),
    ("norm", 2, 0, True),
    ("lsh", 2, 0, False),
])
def test_padding_neutrality_is_bitwise(strategy, f, g, causal):
    cfg = cfg_for(bt=4, f=f, strategy=strategy, g=g, causal=causal, heads=2, d=4)
    n = 11
    q, k, v, gq, gk, gv = seeded_inputs(cfg, n)
    base, _ = forward(q, k, v, gq, gk, gv, cfg=cfg)
    pad = np.zeros((n + 9, cfg.model_dim))
    qp, kp, vp = pad.copy(), pad.copy(), pad.copy()
    qp[:n], kp[:n], vp[:n] = q, k, v
    padded, _ = forward(qp, kp, vp, gq, gk, gv, cfg=cfg, length=n)
    assert np.array_equal(base.out, padded.out)
    if g:
        assert np.array_equal(base.global_out, padded.global_out)


def test_threads_do_not_change_results():
    cfg = cfg_for(bt=4, f=2, strategy="strided", g=2, heads=4, d=4)
    q, k, v, gq, gk, gv = seeded_inputs(cfg, 23)
    a, _ = forward(q, k, v, gq, gk, gv, cfg=cfg, threads=1)
    b, _ = forward(q, k, v, gq, gk, gv, cfg=cfg, threads=3)
    assert np.array_equal(a.out, b.out)
    assert np.array_equal(a.global_out, b.global_out)


def test_forward_input_validation():
    cfg = cfg_for(bt=4, g=0)
    q, k, v, *_ = seeded_inputs(cfg, 6)
    with pytest.raises(ValueError):
        forward(q, k[:5], v, cfg=cfg)
    with pytest.raises(TypeError):
        forward(q.astype(np.float32), k.astype(np.float32), v.astype(np.float32), cfg=cfg)
    with pytest.raises(ValueError):
        forward(q, k, v, np.zeros((1, 8)), np.zeros((1, 8)), np.zeros((1, 8)), cfg=cfg)
    cfg_g = cfg_for(bt=4, g=2)
    with pytest.raises(ValueError):
        forward(q, k, v, cfg=cfg_g)  # globals required


def test_causal_with_globals_is_rejected():
    with pytest.raises(ValueError):
        cfg_for(bt=4, g=1, causal=True)


def test_config_validation():
    with pytest.raises(ValueError):
        cfg_for(bt=4, f=3, strategy="strided")  # does not divide
    with pytest.raises(ValueError):
        cfg_for(bt=4, f=0, strategy="pooling")  # none <-> 0 pairing
    with pytest.raises(ValueError):
        cfg_for(bt=4, f=4, strategy="lsh")  # c = 1
    assert cfg_for(bt=12, f=6, strategy="pooling").nonstandard_sparsity
    assert not cfg_for(bt=8, f=2, strategy="pooling").nonstandard_sparsity
