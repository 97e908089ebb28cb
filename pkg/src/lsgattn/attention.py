"""Blocked attention over local, sparse and global contexts.

The sequence is cut into n_b blocks of block_size tokens. Each query block
scores, in one fixed-width row, the keys of its previous/current/next blocks
(3*bt), one compressed block summarizing the f blocks further left (bt
slots), one summarizing the f blocks further right (bt slots), and the g
global tokens: width 5*bt + g. Out-of-range and padding slots stay in the
row but are masked. Causal mode keeps only the previous/current local blocks
plus the left sparse block and applies a lower-triangular mask inside the
current block, so no future position ever contributes.

Global tokens are separate rows: their outputs come from dense attention of
the g global queries over all n real keys plus the g global keys.

Assembled row layout (reduction order is left to right within a row):
    [local blocks ascending | left sparse | right sparse | globals]
Global query rows use [sequence keys ascending | global keys].
"""

import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass

import numpy as np

from . import tensor
from .config import LsgConfig
from .sparse import LshProjection, SparseBlockSet, build_sparse


@dataclass
class BlockedSequence:
    """Per-head blocks [heads, n_b, bt, d_h]; pad_mask is True at padding
    (zero-filled) positions; original_len is the logical token count."""

    blocks: np.ndarray
    pad_mask: np.ndarray
    original_len: int

    @property
    def n_blocks(self) -> int:
        return self.blocks.shape[1]


@dataclass
class AttentionOutput:
    """out: [n, heads*d_h]; global_out: [g, heads*d_h].

    weights_checksum[row] is the attention-weight row sum farthest from 1
    across heads, for the n sequence rows then the g global rows; every
    non-padded row must sit at 1 up to rounding. score_entries counts the
    score entries the producing path actually computed; for the blocked
    path it equals score_entry_count(cfg, n) whenever the inputs carry no
    extra caller-side padding.
    """

    out: np.ndarray
    global_out: np.ndarray
    weights_checksum: np.ndarray
    score_entries: int


@dataclass
class Gradients:
    q: np.ndarray
    k: np.ndarray
    v: np.ndarray
    global_q: np.ndarray
    global_k: np.ndarray
    global_v: np.ndarray


def chunk(x, cfg: LsgConfig, length=None) -> BlockedSequence:
    """Split [m, heads*d_h] rows into zero-padded per-head blocks.

    Rows at index >= length (default: all of them are real) are padding:
    zero-filled and masked, regardless of their content.
    """
    m = x.shape[0]
    n = m if length is None else length
    if n < 1 or n > m:
        raise ValueError(f"length {n} out of range for {m} rows")
    if x.ndim != 2 or x.shape[1] != cfg.model_dim:
        raise ValueError(f"expected [*, {cfg.model_dim}] input, got {x.shape}")
    bt = cfg.block_size
    n_b = -(-m // bt)
    padded = np.zeros((n_b * bt, cfg.heads, cfg.head_dim), dtype=x.dtype)
    padded[:n] = x[:n].reshape(n, cfg.heads, cfg.head_dim)
    blocks = np.ascontiguousarray(padded.transpose(1, 0, 2)).reshape(
        cfg.heads, n_b, bt, cfg.head_dim
    )
    pad_mask = (np.arange(n_b * bt) >= n).reshape(n_b, bt)
    return BlockedSequence(blocks, pad_mask, n)


def unchunk(blocks, n) -> np.ndarray:
    """Inverse of chunk on the first n rows: [H, n_b, bt, d] -> [n, H*d]."""
    heads, n_b, bt, d = blocks.shape
    flat = blocks.reshape(heads, n_b * bt, d).transpose(1, 0, 2)
    return np.ascontiguousarray(flat[:n]).reshape(n, heads * d)


def gather_local(blocked: BlockedSequence, causal=False):
    """Local window block indices and key mask for every query block.

    Returns (idx, mask): idx[i] lists the source blocks [i-1, i, i+1]
    (causal: [i-1, i]) with out-of-range entries set to the sentinel n_b;
    mask[i] is True per candidate key that is in range and not padding.
    """
    n_b = blocked.n_blocks
    rel = (-1, 0) if causal else (-1, 0, 1)
    idx = np.arange(n_b)[:, None] + np.array(rel)[None, :]
    oob = (idx < 0) | (idx >= n_b)
    idx = np.where(oob, n_b, idx)
    real_ext = np.vstack([~blocked.pad_mask, np.zeros((1, blocked.pad_mask.shape[1]), dtype=bool)])
    mask = real_ext[idx].reshape(n_b, len(rel) * blocked.pad_mask.shape[1])
    return idx, mask


def sparse_sources(n_b, factor, slots):
    """Source-block/slot grids for the two sparse context blocks.

    For query block i the left sparse block concatenates the slots of source
    blocks [i-1-f, i-2] and the right one those of [i+2, i+1+f]; both are
    bt = f*slots wide. Out-of-range sources keep the sentinel value n_b.
    """
    bt = factor * slots
    t = np.arange(bt)
    base = np.arange(n_b)[:, None]
    left = base - 1 - factor + t[None, :] // slots
    right = base + 2 + t[None, :] // slots
    left = np.where((left < 0) | (left >= n_b), n_b, left)
    right = np.where((right < 0) | (right >= n_b), n_b, right)
    return left, right, t % slots


def gather_sparse(sp: SparseBlockSet, query_block: int, cfg: LsgConfig):
    """Assembled sparse context of one query block, per head.

    Returns a dict with keys/values/mask/provenance for the 'left' and
    'right' sparse blocks (right omitted in causal mode), each bt slots wide.
    """
    heads, n_b = sp.keys.shape[0], sp.keys.shape[1]
    s = sp.slots_per_block
    left, right, slot = sparse_sources(n_b, sp.factor, s)
    out = {}
    sides = [("left", left[query_block])]
    if not cfg.causal:
        sides.append(("right", right[query_block]))
    for name, src in sides:
        keys = np.zeros((heads, len(src), sp.keys.shape[3]), dtype=sp.keys.dtype)
        values = np.zeros_like(keys)
        mask = np.zeros((heads, len(src)), dtype=bool)
        prov = [[() for _ in src] for _ in range(heads)]
        for h in range(heads):
            for t, b in enumerate(src):
                if b == n_b:
                    continue
                keys[h, t] = sp.keys[h, b, slot[t]]
                values[h, t] = sp.values[h, b, slot[t]]
                mask[h, t] = sp.valid[h, b, slot[t]]
                prov[h][t] = sp.provenance[h][b][slot[t]]
        out[name] = {"keys": keys, "values": values, "mask": mask, "provenance": prov}
    return out


def local_width(cfg: LsgConfig) -> int:
    return (2 if cfg.causal else 3) * cfg.block_size


def sparse_width(cfg: LsgConfig) -> int:
    if not cfg.sparsity_factor:
        return 0
    return (1 if cfg.causal else 2) * cfg.block_size


def row_width(cfg: LsgConfig) -> int:
    """Assembled key-row width per query block."""
    return local_width(cfg) + sparse_width(cfg) + cfg.num_global


def score_entry_count(cfg: LsgConfig, n: int) -> int:
    """Exact number of score entries the blocked forward computes.

    ceil(n/bt)*bt*row_width for the block rows (padded query rows included:
    the fixed-shape kernels compute them) plus g*(n+g) for the global rows.
    Linear in n for fixed hyperparameters.
    """
    n_b = -(-n // cfg.block_size)
    g = cfg.num_global
    return n_b * cfg.block_size * row_width(cfg) + g * (n + g)


def attended_token_span(block_size, factor, causal=False) -> int:
    """Count of original positions reachable from a query's block: the
    3 + 2f local+source blocks around it (2 + f in causal mode)."""
    if causal:
        return (2 + factor) * block_size
    return 3 * block_size + 2 * block_size * factor


def per_query_key_counts(block_size, factor, causal=False):
    """(local, sparse) key counts per interior query, for any factor >= 0."""
    if causal:
        return (2 * block_size, block_size if factor else 0)
    return (3 * block_size, 2 * block_size if factor else 0)


@dataclass
class _State:
    """Everything backward needs from a forward pass."""

    cfg: LsgConfig
    n: int
    n_b: int
    q_blocks: np.ndarray      # [H, n_b, bt, d]
    k: np.ndarray
    v: np.ndarray
    global_q: np.ndarray
    global_k: np.ndarray
    global_v: np.ndarray
    k_aug: np.ndarray         # [H, n_b, W, d]
    v_aug: np.ndarray
    weights: np.ndarray       # [H, n_b, bt, W]
    loc_idx: np.ndarray       # [n_b, wloc]
    sparse: SparseBlockSet
    left_src: np.ndarray
    right_src: np.ndarray
    slot_grid: np.ndarray
    global_weights: np.ndarray  # [H, g, n+g]


def _alpha(cfg: LsgConfig):
    return cfg.dtype.type(1.0 / math.sqrt(cfg.head_dim))


class LsgAttention:
    """A configured attention instance.

    Construction draws any per-instance randomness (the LSH projections)
    from cfg.seed, so two instances with equal configs behave identically.
    """

    def __init__(self, cfg: LsgConfig):
        self.cfg = cfg
        self.projection = LshProjection.draw(cfg) if cfg.strategy == "lsh" else None
        self._state = None

    def _check_inputs(self, q, k, v, global_q, global_k, global_v):
        cfg = self.cfg
        for name, t in (("q", q), ("k", k), ("v", v)):
            if t.ndim != 2 or t.shape[1] != cfg.model_dim:
                raise ValueError(f"{name}: expected [n, {cfg.model_dim}], got {t.shape}")
            if t.dtype != cfg.dtype:
                raise TypeError(f"{name}: expected {cfg.dtype}, got {t.dtype}")
        if not (q.shape == k.shape == v.shape):
            raise ValueError("q, k, v must share one shape")
        g = cfg.num_global
        globs = (global_q, global_k, global_v)
        if g == 0:
            if any(t is not None and t.size for t in globs):
                raise ValueError("config has num_global == 0 but global tensors were given")
            z = np.zeros((0, cfg.model_dim), dtype=cfg.dtype)
            return z, z, z
        if any(t is None for t in globs):
            raise ValueError(f"config has num_global == {g}: global q/k/v are required")
        for name, t in (("global_q", global_q), ("global_k", global_k), ("global_v", global_v)):
            if t.shape != (g, cfg.model_dim):
                raise ValueError(f"{name}: expected {(g, cfg.model_dim)}, got {t.shape}")
            if t.dtype != cfg.dtype:
                raise TypeError(f"{name}: expected {cfg.dtype}, got {t.dtype}")
        return global_q, global_k, global_v

    def forward(self, q, k, v, global_q=None, global_k=None, global_v=None,
                *, length=None, keep_state=False, threads=1) -> AttentionOutput:
        cfg = self.cfg
        global_q, global_k, global_v = self._check_inputs(q, k, v, global_q, global_k, global_v)
        g = cfg.num_global
        dt = cfg.dtype
        alpha = _alpha(cfg)
        heads, d = cfg.heads, cfg.head_dim
        bt = cfg.block_size

        qb = chunk(q, cfg, length)
        kb = chunk(k, cfg, length)
        vb = chunk(v, cfg, length)
        n, n_b = qb.original_len, qb.n_blocks
        real = ~kb.pad_mask

        loc_idx, loc_mask = gather_local(kb, cfg.causal)
        wloc = loc_idx.shape[1]

        sp = None
        left_src = right_src = slot_grid = None
        if cfg.sparsity_factor:
            sp = build_sparse(kb.blocks, vb.blocks, real, cfg, self.projection)
            left_src, right_src, slot_grid = sparse_sources(
                n_b, cfg.sparsity_factor, cfg.slots_per_block
            )

        width = row_width(cfg)
        k_aug = np.zeros((heads, n_b, width, d), dtype=dt)
        v_aug = np.zeros_like(k_aug)
        key_mask = np.zeros((heads, n_b, width), dtype=bool)
        zero_block = np.zeros((1, bt, d), dtype=dt)

        for h in range(heads):
            k_ext = np.concatenate([kb.blocks[h], zero_block])
            v_ext = np.concatenate([vb.blocks[h], zero_block])
            pos = 0
            k_aug[h, :, pos : pos + wloc * bt] = k_ext[loc_idx].reshape(n_b, wloc * bt, d)
            v_aug[h, :, pos : pos + wloc * bt] = v_ext[loc_idx].reshape(n_b, wloc * bt, d)
            key_mask[h, :, pos : pos + wloc * bt] = loc_mask
            pos += wloc * bt
            if sp is not None:
                sk_ext = np.concatenate([sp.keys[h], np.zeros((1, cfg.slots_per_block, d), dtype=dt)])
                sv_ext = np.concatenate([sp.values[h], np.zeros((1, cfg.slots_per_block, d), dtype=dt)])
                valid_ext = np.vstack([sp.valid[h], np.zeros((1, cfg.slots_per_block), dtype=bool)])
                sides = [left_src] if cfg.causal else [left_src, right_src]
                for src in sides:
                    k_aug[h, :, pos : pos + bt] = sk_ext[src, slot_grid[None, :]]
                    v_aug[h, :, pos : pos + bt] = sv_ext[src, slot_grid[None, :]]
                    key_mask[h, :, pos : pos + bt] = valid_ext[src, slot_grid[None, :]]
                    pos += bt
            if g:
                k_aug[h, :, pos:] = global_k[:, h * d : (h + 1) * d]
                v_aug[h, :, pos:] = global_v[:, h * d : (h + 1) * d]
                key_mask[h, :, pos:] = True

        # per-row masks; causal adds the in-block triangle on the current block
        mask_rows = np.broadcast_to(key_mask[:, :, None, :], (heads, n_b, bt, width)).copy()
        if cfg.causal:
            tri = np.tril(np.ones((bt, bt), dtype=bool))
            cur = slice((wloc - 1) * bt, wloc * bt)
            mask_rows[:, :, :, cur] &= tri[None, None, :, :]

        out_blocks = np.empty((heads, n_b, bt, d), dtype=dt)
        weights = np.empty((heads, n_b, bt, width), dtype=dt) if keep_state else None
        checksums = np.zeros((heads, n_b * bt), dtype=dt)
        global_out = np.zeros((g, heads * d), dtype=dt)
        gw_all = np.empty((heads, g, n + g), dtype=dt)

        def run_head(h):
            for i in range(n_b):
                scores = tensor.matmul_nt(qb.blocks[h, i], k_aug[h, i]) * alpha
                w, _ = tensor.softmax_masked(scores, mask_rows[h, i])
                if weights is not None:
                    weights[h, i] = w
                out_blocks[h, i] = tensor.matmul(w, v_aug[h, i])
                checksums[h, i * bt : (i + 1) * bt] = w.sum(axis=1)
            if g:
                kg = np.concatenate([k[:n, h * d : (h + 1) * d], global_k[:, h * d : (h + 1) * d]])
                vg = np.concatenate([v[:n, h * d : (h + 1) * d], global_v[:, h * d : (h + 1) * d]])
                scores = tensor.matmul_nt(global_q[:, h * d : (h + 1) * d], kg) * alpha
                gw, _ = tensor.softmax_masked(scores, np.ones(scores.shape, dtype=bool))
                gw_all[h] = gw
                global_out[:, h * d : (h + 1) * d] = tensor.matmul(gw, vg)

        if threads > 1:
            with ThreadPoolExecutor(max_workers=threads) as pool:
                list(pool.map(run_head, range(heads)))
        else:
            for h in range(heads):
                run_head(h)

        out = unchunk(out_blocks, n)
        checksum = np.empty(n + g, dtype=dt)
        row_sums = checksums[:, :n]
        worst = row_sums[0].copy()
        for h in range(1, heads):
            take = np.abs(row_sums[h] - 1) > np.abs(worst - 1)
            worst = np.where(take, row_sums[h], worst)
        checksum[:n] = worst
        if g:
            gsums = gw_all.sum(axis=2)
            worst = gsums[0].copy()
            for h in range(1, heads):
                take = np.abs(gsums[h] - 1) > np.abs(worst - 1)
                worst = np.where(take, gsums[h], worst)
            checksum[n:] = worst

        entries = n_b * bt * width + g * (n + g)
        if keep_state:
            self._state = _State(
                cfg=cfg, n=n, n_b=n_b, q_blocks=qb.blocks, k=k, v=v,
                global_q=global_q, global_k=global_k, global_v=global_v,
                k_aug=k_aug, v_aug=v_aug, weights=weights, loc_idx=loc_idx,
                sparse=sp, left_src=left_src, right_src=right_src,
                slot_grid=slot_grid, global_weights=gw_all,
            )
        else:
            self._state = None
        return AttentionOutput(out, global_out, checksum, entries)

    def backward(self, d_out, d_global_out=None) -> Gradients:
        """Analytic gradients; requires forward(..., keep_state=True).

        Discrete choices (norm top-k, LSH assignments) are constants;
        averaging slots route 1/count of their gradient to each member and
        copied slots route all of it. Accumulation runs heads outward,
        blocks ascending, slots ascending, then the global rows.
        """
        st = self._state
        if st is None:
            raise RuntimeError("backward needs a prior forward(..., keep_state=True)")
        cfg = st.cfg
        dt = cfg.dtype
        heads, d, bt, g = cfg.heads, cfg.head_dim, cfg.block_size, cfg.num_global
        n, n_b = st.n, st.n_b
        alpha = _alpha(cfg)
        if d_out.shape != (n, cfg.model_dim):
            raise ValueError(f"d_out: expected {(n, cfg.model_dim)}, got {d_out.shape}")
        if d_global_out is None:
            d_global_out = np.zeros((g, cfg.model_dim), dtype=dt)

        do_blocks = chunk(d_out.astype(dt, copy=False), cfg).blocks
        # chunk() pads to ceil(n/bt) blocks; match the forward block count
        if do_blocks.shape[1] != n_b:
            padded = np.zeros((heads, n_b, bt, d), dtype=dt)
            padded[:, : do_blocks.shape[1]] = do_blocks
            do_blocks = padded

        wloc = st.loc_idx.shape[1]
        s = cfg.slots_per_block
        dq_blocks = np.zeros((heads, n_b, bt, d), dtype=dt)
        dk = np.zeros((n, cfg.model_dim), dtype=dt)
        dv = np.zeros_like(dk)
        dgq = np.zeros((g, cfg.model_dim), dtype=dt)
        dgk = np.zeros_like(dgq)
        dgv = np.zeros_like(dgq)

        def run_head(h):
            hcols = slice(h * d, (h + 1) * d)
            width = st.k_aug.shape[2]
            dk_aug = np.zeros((n_b, width, d), dtype=dt)
            dv_aug = np.zeros_like(dk_aug)
            for i in range(n_b):
                w = st.weights[h, i]
                d_o = do_blocks[h, i]
                dw = tensor.matmul_nt(d_o, st.v_aug[h, i])
                dv_aug[i] = tensor.matmul_tn(w, d_o)
                ds = tensor.softmax_masked_backward(w, dw) * alpha
                dq_blocks[h, i] = tensor.matmul(ds, st.k_aug[h, i])
                dk_aug[i] = tensor.matmul_tn(ds, st.q_blocks[h, i])

            dk_blk = np.zeros((n_b, bt, d), dtype=dt)
            dv_blk = np.zeros_like(dk_blk)
            for wpos in range(wloc):
                src = st.loc_idx[:, wpos]
                sel = src < n_b
                seg = slice(wpos * bt, (wpos + 1) * bt)
                dk_blk[src[sel]] += dk_aug[sel, seg]
                dv_blk[src[sel]] += dv_aug[sel, seg]

            d_slots_k = d_slots_v = None
            if st.sparse is not None:
                d_slots_k = np.zeros((n_b, s, d), dtype=dt)
                d_slots_v = np.zeros((n_b, s, d), dtype=dt)
                sides = [st.left_src] if cfg.causal else [st.left_src, st.right_src]
                pos = wloc * bt
                for src in sides:
                    seg = slice(pos, pos + bt)
                    sel = src < n_b  # [n_b, bt]
                    idx_b = src[sel]
                    idx_s = np.broadcast_to(st.slot_grid[None, :], src.shape)[sel]
                    np.add.at(d_slots_k, (idx_b, idx_s), dk_aug[:, seg][sel])
                    np.add.at(d_slots_v, (idx_b, idx_s), dv_aug[:, seg][sel])
                    pos += bt
                averaged = cfg.strategy in ("pooling", "lsh")
                prov = st.sparse.provenance[h]
                for b in range(n_b):
                    for slot in range(s):
                        members = prov[b][slot]
                        if not members:
                            continue
                        gk_part = d_slots_k[b, slot]
                        gv_part = d_slots_v[b, slot]
                        if averaged:
                            cnt = dt.type(len(members))
                            gk_part = gk_part / cnt
                            gv_part = gv_part / cnt
                        for p in members:
                            blk, off = divmod(p, bt)
                            dk_blk[blk, off] += gk_part
                            dv_blk[blk, off] += gv_part

            if g:
                gseg = slice(wloc * bt + (0 if st.sparse is None else (1 if cfg.causal else 2) * bt), None)
                for i in range(n_b):  # ascending: fixed accumulation order
                    dgk[:, hcols] += dk_aug[i, gseg]
                    dgv[:, hcols] += dv_aug[i, gseg]

                kg = np.concatenate([st.k[:n, hcols], st.global_k[:, hcols]])
                vg = np.concatenate([st.v[:n, hcols], st.global_v[:, hcols]])
                gw = st.global_weights[h]
                d_og = d_global_out[:, hcols]
                dgw = tensor.matmul_nt(d_og, vg)
                dvg = tensor.matmul_tn(gw, d_og)
                dsg = tensor.softmax_masked_backward(gw, dgw) * alpha
                dgq[:, hcols] = tensor.matmul(dsg, kg)
                dkg = tensor.matmul_tn(dsg, st.global_q[:, hcols])
                dk[:, hcols] += dkg[:n]
                dv[:, hcols] += dvg[:n]
                dgk[:, hcols] += dkg[n:]
                dgv[:, hcols] += dvg[n:]

            dk[:, hcols] += unchunk(dk_blk[None], n)
            dv[:, hcols] += unchunk(dv_blk[None], n)

        for h in range(heads):
            run_head(h)

        dq = unchunk(dq_blocks, n)
        return Gradients(dq, dk, dv, dgq, dgk, dgv)


def forward(q, k, v, global_q=None, global_k=None, global_v=None, *,
            cfg: LsgConfig, length=None, keep_state=False, threads=1):
    """One-shot functional forward. Returns (output, instance); pass the
    instance to backward() when keep_state is True."""
    inst = LsgAttention(cfg)
    out = inst.forward(q, k, v, global_q, global_k, global_v,
                       length=length, keep_state=keep_state, threads=threads)
    return out, inst


def backward(d_out, instance: LsgAttention, d_global_out=None) -> Gradients:
    """Functional spelling of LsgAttention.backward."""
    return instance.backward(d_out, d_global_out)


def scored_pairs(instance: LsgAttention):
    """Per head, the set of (query row, original position) pairs the blocked
    path scored, derived from gather structure and slot provenance. Global
    query rows are indexed n..n+g-1."""
    st = instance._state
    if st is None:
        raise RuntimeError("scored_pairs needs a prior forward(..., keep_state=True)")
    cfg = st.cfg
    bt, g, n, n_b = cfg.block_size, cfg.num_global, st.n, st.n_b
    wloc = st.loc_idx.shape[1]
    pairs = [set() for _ in range(cfg.heads)]
    for h in range(cfg.heads):
        for i in range(n_b):
            rows = [i * bt + r for r in range(bt) if i * bt + r < n]
            if not rows:
                continue
            for wpos in range(wloc):
                src = st.loc_idx[i, wpos]
                if src >= n_b:
                    continue
                for off in range(bt):
                    p = src * bt + off
                    if p >= n:
                        continue
                    for q_row in rows:
                        if cfg.causal and src * bt + off > q_row:
                            continue
                        pairs[h].add((q_row, p))
            if st.sparse is not None:
                sides = [st.left_src] if cfg.causal else [st.left_src, st.right_src]
                for src_grid in sides:
                    for t in range(src_grid.shape[1]):
                        b = src_grid[i, t]
                        if b >= n_b:
                            continue
                        for p in st.sparse.provenance[h][b][st.slot_grid[t]]:
                            for q_row in rows:
                                pairs[h].add((q_row, p))
        for gi in range(g):
            for p in range(n):
                pairs[h].add((n + gi, p))
    return pairs
