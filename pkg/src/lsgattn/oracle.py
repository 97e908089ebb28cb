"""Dense reference for the blocked computation.

Compression strategies create keys that exist at no original position, so a
mask over the n original keys cannot express the mechanism. The oracle
therefore augments the key list: original keys, then every sparse slot (block
ascending, slot ascending), then the global keys, and runs plain dense masked
attention over that list. The connection rules are re-derived here from the
block geometry, independently of the gather code in attention.py, so a bug
on either side breaks the equivalence instead of cancelling out.

Row layout equals the blocked path's reduction order, which keeps the two
results within rounding noise of each other.
"""

from dataclasses import dataclass

import numpy as np

from . import tensor
from .attention import AttentionOutput, _alpha, chunk
from .config import LsgConfig
from .sparse import LshProjection, build_sparse


@dataclass
class AugmentedAttention:
    """aug_k/aug_v: [heads, n_aug, d_h]; mask: [heads, n+g, n_aug] with the n
    sequence queries first and the g global queries after them.

    provenance[h][slot] lists the original positions behind each augmented
    slot: (j,) for original key j, the contributing positions for a sparse
    slot, and () for a global key.
    """

    aug_k: np.ndarray
    aug_v: np.ndarray
    mask: np.ndarray
    provenance: list
    cfg: LsgConfig
    n: int
    n_blocks: int

    @property
    def n_aug(self) -> int:
        return self.aug_k.shape[1]


def build_augmented(k, v, global_k, global_v, cfg: LsgConfig, length=None) -> AugmentedAttention:
    """Augmented key/value list and exact boolean attention pattern."""
    dt = cfg.dtype
    heads, d, bt, g, f = cfg.heads, cfg.head_dim, cfg.block_size, cfg.num_global, cfg.sparsity_factor
    kb = chunk(k, cfg, length)
    vb = chunk(v, cfg, length)
    n, n_b = kb.original_len, kb.n_blocks

    sp = None
    n_sparse = 0
    if f:
        sp = build_sparse(kb.blocks, vb.blocks, ~kb.pad_mask, cfg, LshProjection.draw(cfg))
        n_sparse = n_b * cfg.slots_per_block
    n_aug = n + n_sparse + g

    aug_k = np.zeros((heads, n_aug, d), dtype=dt)
    aug_v = np.zeros((heads, n_aug, d), dtype=dt)
    provenance = []
    for h in range(heads):
        hcols = slice(h * d, (h + 1) * d)
        aug_k[h, :n] = k[:n, hcols]
        aug_v[h, :n] = v[:n, hcols]
        prov = [(j,) for j in range(n)]
        if sp is not None:
            aug_k[h, n : n + n_sparse] = sp.keys[h].reshape(n_sparse, d)
            aug_v[h, n : n + n_sparse] = sp.values[h].reshape(n_sparse, d)
            for b in range(n_b):
                prov.extend(tuple(p) for p in sp.provenance[h][b])
        if g:
            aug_k[h, n + n_sparse :] = global_k[:, hcols]
            aug_v[h, n + n_sparse :] = global_v[:, hcols]
            prov.extend(() for _ in range(g))
        provenance.append(prov)

    # connection rules, derived from block arithmetic alone
    qblk = np.arange(n) // bt
    jblk = np.arange(n) // bt
    diff = qblk[:, None] - jblk[None, :]
    if cfg.causal:
        local = ((diff == 0) | (diff == 1)) & (np.arange(n)[None, :] <= np.arange(n)[:, None])
    else:
        local = np.abs(diff) <= 1

    mask = np.zeros((heads, n + g, n_aug), dtype=bool)
    mask[:, :n, :n] = local[None]
    if sp is not None:
        src_blk = np.repeat(np.arange(n_b), cfg.slots_per_block)
        sdiff = qblk[:, None] - src_blk[None, :]
        sees = (sdiff >= 2) & (sdiff <= 1 + f)
        if not cfg.causal:
            sees |= (sdiff <= -2) & (sdiff >= -(1 + f))
        for h in range(heads):
            mask[h, :n, n : n + n_sparse] = sees & sp.valid[h].reshape(-1)[None, :]
    if g:
        mask[:, :n, n + n_sparse :] = True
        mask[:, n:, :n] = True
        mask[:, n:, n + n_sparse :] = True
    return AugmentedAttention(aug_k, aug_v, mask, provenance, cfg, n, n_b)


def oracle_forward(q, global_q, aug: AugmentedAttention, cfg: LsgConfig) -> AttentionOutput:
    """Dense masked attention over the augmented slots; no blocking anywhere."""
    dt = cfg.dtype
    heads, d, g, n = cfg.heads, cfg.head_dim, cfg.num_global, aug.n
    alpha = _alpha(cfg)
    out = np.empty((n, cfg.model_dim), dtype=dt)
    global_out = np.empty((g, cfg.model_dim), dtype=dt)
    sums = np.empty((heads, n + g), dtype=dt)
    for h in range(heads):
        hcols = slice(h * d, (h + 1) * d)
        rows = q[:n, hcols]
        if g:
            rows = np.concatenate([rows, global_q[:, hcols]])
        scores = tensor.matmul_nt(rows, aug.aug_k[h]) * alpha
        w, _ = tensor.softmax_masked(scores, aug.mask[h])
        ctx = tensor.matmul(w, aug.aug_v[h])
        out[:, hcols] = ctx[:n]
        if g:
            global_out[:, hcols] = ctx[n:]
        sums[h] = w.sum(axis=1)
    worst = sums[0].copy()
    for h in range(1, heads):
        take = np.abs(sums[h] - 1) > np.abs(worst - 1)
        worst = np.where(take, sums[h], worst)
    return AttentionOutput(out, global_out, worst, heads * (n + g) * aug.n_aug)


def scored_pairs_oracle(aug: AugmentedAttention):
    """Per head, (query row, original position) pairs implied by mask and
    provenance; the blocked path must score exactly the same set."""
    out = []
    for h in range(aug.mask.shape[0]):
        pairs = set()
        rows, cols = np.nonzero(aug.mask[h])
        for r, c in zip(rows.tolist(), cols.tolist()):
            for p in aug.provenance[h][c]:
                pairs.add((r, p))
        out.append(pairs)
    return out


def render_pattern(aug: AugmentedAttention, head: int):
    """One head's pattern as (pgm_bytes, csv_text).

    The PGM is binary P5, maxval 1, (n+g) rows by n_aug columns, pixel 1
    where the pair is scored. The CSV lists one row per scored (query, slot)
    pair; the positions cell space-joins the slot's original positions and
    is empty for global slots.
    """
    m = aug.mask[head]
    rows, cols = m.shape
    pgm = b"P5\n%d %d\n1\n" % (cols, rows) + m.astype(np.uint8).tobytes()
    lines = ["query,slot,positions"]
    for r, c in zip(*np.nonzero(m)):
        positions = " ".join(str(p) for p in aug.provenance[head][c])
        lines.append(f"{r},{c},{positions}")
    return pgm, "\n".join(lines) + "\n"
