"""Sparse token selection: compress each block of keys/values into
block_size/factor slots, per head, with provenance.

All five strategies return fixed-shape slot arrays plus a validity mask and,
per valid slot, the original sequence positions that produced it. Selection
strategies (strided, block_strided, norm) copy rows verbatim; compression
strategies (pooling, lsh) average them. Padding positions never contribute:
a slot whose sources are all padding is emitted as a masked zero slot so
shapes stay block-aligned.
"""

from dataclasses import dataclass

import numpy as np

from . import tensor
from .config import LsgConfig
from .rng import Rng


@dataclass
class SparseBlockSet:
    """Per-head compressed keys/values: arrays [heads, n_b, s, d_h] with
    s = block_size // factor slots per block.

    provenance[h][b][slot] is a tuple of original positions (empty iff the
    slot is invalid). valid slots always hold a convex combination of their
    provenance rows (weight 1 for copies, 1/count for averages).
    """

    keys: np.ndarray
    values: np.ndarray
    valid: np.ndarray  # bool [heads, n_b, s]
    provenance: list
    factor: int
    block_size: int

    @property
    def slots_per_block(self) -> int:
        return self.block_size // self.factor


@dataclass
class LshProjection:
    """One fixed random projection per head, R[h]: [d_h, c/2], drawn once
    per configured attention instance and reused for every forward pass."""

    matrices: np.ndarray  # [heads, d_h, c_half]

    @classmethod
    def draw(cls, cfg: LsgConfig) -> "LshProjection":
        c = cfg.slots_per_block
        rng = Rng(cfg.seed)
        mats = np.stack(
            [rng.normal((cfg.head_dim, c // 2), cfg.precision) for _ in range(cfg.heads)]
        )
        return cls(mats)


def _check_factor(block_size, factor):
    if factor < 2:
        raise ValueError(f"sparsity factor must be >= 2, got {factor}")
    if block_size % factor:
        raise ValueError(f"factor {factor} does not divide block size {block_size}")


def _positions(block, block_size, offsets):
    return block * block_size + np.asarray(offsets)


def select_strided(keys, values, factor, head, real=None):
    """Head h keeps offsets {o, o+f, ...} with o = h mod f inside each block."""
    n_b, bt, _ = keys.shape
    _check_factor(bt, factor)
    if real is None:
        real = np.ones((n_b, bt), dtype=bool)
    offs = np.arange(head % factor, bt, factor)
    k_sel = keys[:, offs, :].copy()
    v_sel = values[:, offs, :].copy()
    valid = real[:, offs].copy()
    k_sel[~valid] = 0
    v_sel[~valid] = 0
    prov = [
        [(int(b * bt + o),) if valid[b, i] else () for i, o in enumerate(offs)]
        for b in range(n_b)
    ]
    return k_sel, v_sel, valid, prov


def select_block_strided(keys, values, factor, head, real=None):
    """Head h keeps the contiguous segment [(h mod f)*s, (h mod f + 1)*s)."""
    n_b, bt, _ = keys.shape
    _check_factor(bt, factor)
    if real is None:
        real = np.ones((n_b, bt), dtype=bool)
    s = bt // factor
    start = (head % factor) * s
    offs = np.arange(start, start + s)
    k_sel = keys[:, offs, :].copy()
    v_sel = values[:, offs, :].copy()
    valid = real[:, offs].copy()
    k_sel[~valid] = 0
    v_sel[~valid] = 0
    prov = [
        [(int(b * bt + o),) if valid[b, i] else () for i, o in enumerate(offs)]
        for b in range(n_b)
    ]
    return k_sel, v_sel, valid, prov


def pool_average(keys, values, factor, real=None):
    """Mean over non-overlapping windows of f tokens; identical for all heads.

    Windows mix real and padding near the tail: the mean runs over the real
    members only, and an all-padding window yields a masked zero slot.
    """
    n_b, bt, d = keys.shape
    _check_factor(bt, factor)
    if real is None:
        real = np.ones((n_b, bt), dtype=bool)
    s = bt // factor
    kw = keys.reshape(n_b, s, factor, d)
    vw = values.reshape(n_b, s, factor, d)
    rw = real.reshape(n_b, s, factor)
    dt = keys.dtype
    k_acc = np.zeros((n_b, s, d), dtype=dt)
    v_acc = np.zeros((n_b, s, d), dtype=dt)
    for j in range(factor):  # ascending window offset: fixed reduction order
        m = rw[:, :, j : j + 1].astype(dt)
        k_acc = k_acc + kw[:, :, j, :] * m
        v_acc = v_acc + vw[:, :, j, :] * m
    count = rw.sum(axis=2)
    valid = count > 0
    div = np.where(valid, count, 1).astype(dt)[:, :, None]
    k_sel = k_acc / div
    v_sel = v_acc / div
    k_sel[~valid] = 0
    v_sel[~valid] = 0
    prov = [
        [
            tuple(int(b * bt + w * factor + j) for j in range(factor) if rw[b, w, j])
            for w in range(s)
        ]
        for b in range(n_b)
    ]
    return k_sel, v_sel, valid, prov


def select_max_norm(keys, values, factor, head, real=None):
    """Top block_size/f positions by key L2 norm (this head), original order.

    Ties break toward the lower index; padding ranks below everything. When a
    block holds fewer real tokens than slots, the surplus slots are masked.
    """
    n_b, bt, d = keys.shape
    _check_factor(bt, factor)
    if real is None:
        real = np.ones((n_b, bt), dtype=bool)
    s = bt // factor
    norms = tensor.l2_norm_rows(keys.reshape(n_b * bt, d)).reshape(n_b, bt)
    ranked = np.where(real, norms, keys.dtype.type(-1.0))
    k_sel = np.zeros((n_b, s, d), dtype=keys.dtype)
    v_sel = np.zeros_like(k_sel)
    valid = np.zeros((n_b, s), dtype=bool)
    prov = []
    for b in range(n_b):
        order = np.argsort(-ranked[b], kind="stable")
        take = min(s, int(real[b].sum()))
        chosen = np.sort(order[:take])
        k_sel[b, :take] = keys[b, chosen]
        v_sel[b, :take] = values[b, chosen]
        valid[b, :take] = True
        row = [(int(b * bt + o),) for o in chosen]
        row += [()] * (s - take)
        prov.append(row)
    return k_sel, v_sel, valid, prov


def lsh_cluster(keys, values, factor, head, proj: LshProjection, real=None):
    """Single-round LSH: cluster index argmax([xR; -xR]) from the key row,
    cluster members averaged into one slot, empty clusters masked out."""
    n_b, bt, d = keys.shape
    _check_factor(bt, factor)
    c = bt // factor
    if c < 2 or c % 2:
        raise ValueError(f"cluster count must be even and >= 2, got {c}")
    if real is None:
        real = np.ones((n_b, bt), dtype=bool)
    r_mat = proj.matrices[head]
    proj_scores = tensor.matmul(keys.reshape(n_b * bt, d), r_mat)
    hashes = np.concatenate([proj_scores, -proj_scores], axis=1)
    assign = np.argmax(hashes, axis=1).reshape(n_b, bt)  # ties -> lowest index
    dt = keys.dtype
    k_sel = np.zeros((n_b, c, d), dtype=dt)
    v_sel = np.zeros((n_b, c, d), dtype=dt)
    count = np.zeros((n_b, c), dtype=np.int64)
    prov = [[[] for _ in range(c)] for _ in range(n_b)]
    for b in range(n_b):
        for t in range(bt):  # ascending position: fixed accumulation order
            if not real[b, t]:
                continue
            cl = assign[b, t]
            k_sel[b, cl] = k_sel[b, cl] + keys[b, t]
            v_sel[b, cl] = v_sel[b, cl] + values[b, t]
            count[b, cl] += 1
            prov[b][cl].append(int(b * bt + t))
    valid = count > 0
    div = np.where(valid, count, 1).astype(dt)[:, :, None]
    k_sel = k_sel / div
    v_sel = v_sel / div
    prov = [[tuple(slot) for slot in row] for row in prov]
    return k_sel, v_sel, valid, prov


def build_sparse(blocked_keys, blocked_values, real, cfg: LsgConfig,
                 projection: LshProjection = None) -> SparseBlockSet:
    """Run the configured strategy over every head of blocked [H, n_b, bt, d]
    keys/values; real[n_b, bt] is False at padding positions."""
    heads, n_b, bt, d = blocked_keys.shape
    s = cfg.slots_per_block
    keys = np.empty((heads, n_b, s, d), dtype=blocked_keys.dtype)
    values = np.empty_like(keys)
    valid = np.empty((heads, n_b, s), dtype=bool)
    prov = []
    for h in range(heads):
        if cfg.strategy == "strided":
            res = select_strided(blocked_keys[h], blocked_values[h], cfg.sparsity_factor, h, real)
        elif cfg.strategy == "block_strided":
            res = select_block_strided(blocked_keys[h], blocked_values[h], cfg.sparsity_factor, h, real)
        elif cfg.strategy == "norm":
            res = select_max_norm(blocked_keys[h], blocked_values[h], cfg.sparsity_factor, h, real)
        elif cfg.strategy == "lsh":
            if projection is None:
                raise ValueError("lsh strategy needs a drawn LshProjection")
            res = lsh_cluster(blocked_keys[h], blocked_values[h], cfg.sparsity_factor, h, projection, real)
        elif cfg.strategy == "pooling":
            # the window rule is head-independent; the content is this head's
            res = pool_average(blocked_keys[h], blocked_values[h], cfg.sparsity_factor, real)
        else:
            raise ValueError(f"strategy {cfg.strategy!r} has no sparse selection")
        keys[h], values[h], valid[h] = res[0], res[1], res[2]
        prov.append(res[3])
    return SparseBlockSet(keys, values, valid, prov, cfg.sparsity_factor, bt)
