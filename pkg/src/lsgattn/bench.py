"""Scaling benchmarks: wall time, exact score-entry counts, peak memory.

Timing is the median of r repeats after one discarded warmup run, measured
with perf_counter_ns on untraced runs. Peak memory comes from a separate
untimed pass under tracemalloc (mem_kind "measured") or from a documented
analytic lower bound (mem_kind "analytic"): inputs and outputs plus the
gathered key/value buffers and one score block for the blocked path, or one
row-chunk of scores plus the transposed key table for the dense path.
"""

import io
import time
import tracemalloc
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass
from statistics import median

import numpy as np

from . import tensor
from .attention import LsgAttention, row_width, score_entry_count
from .config import LsgConfig
from .rng import Rng

CSV_HEADER = "attn,n,bt,f,g,strategy,causal,precision,time_ns,entries,peak_bytes,mem_kind"

_DENSE_CHUNK = 256


@dataclass
class BenchRecord:
    attn: str
    n: int
    bt: int
    f: int
    g: int
    strategy: str
    causal: bool
    precision: str
    time_ns: int
    entries: int
    peak_bytes: int
    mem_kind: str

    def csv_row(self) -> str:
        return ",".join(
            str(x)
            for x in (
                self.attn, self.n, self.bt, self.f, self.g, self.strategy,
                str(self.causal).lower(), self.precision, self.time_ns,
                self.entries, self.peak_bytes, self.mem_kind,
            )
        )


def full_attention(q, k, v, heads, causal=False, threads=1):
    """Textbook dense softmax attention, row-chunked so the score matrix
    never materializes whole. The quadratic baseline for the benchmarks."""
    n, dim = q.shape
    d = dim // heads
    alpha = q.dtype.type(1.0 / np.sqrt(d))
    out = np.empty_like(q)
    rows = np.arange(n)

    def run_head(h):
        cols = slice(h * d, (h + 1) * d)
        kt = np.ascontiguousarray(k[:, cols].T)
        vh = np.ascontiguousarray(v[:, cols])
        for start in range(0, n, _DENSE_CHUNK):
            stop = min(start + _DENSE_CHUNK, n)
            scores = tensor.matmul(np.ascontiguousarray(q[start:stop, cols]), kt) * alpha
            if causal:
                mask = rows[None, :] <= rows[start:stop, None]
            else:
                mask = np.ones(scores.shape, dtype=bool)
            w, _ = tensor.softmax_masked(scores, mask)
            out[start:stop, cols] = tensor.matmul(w, vh)

    if threads > 1:
        with ThreadPoolExecutor(max_workers=threads) as pool:
            list(pool.map(run_head, range(heads)))
    else:
        for h in range(heads):
            run_head(h)
    return out


def _analytic_peak(attn, cfg: LsgConfig, n) -> int:
    item = cfg.dtype.itemsize
    dim = cfg.model_dim
    g = cfg.num_global
    io_bytes = 4 * (n + g) * dim * item
    if attn == "full":
        transient = _DENSE_CHUNK * (n + g) * 2 * item + (n + g) * cfg.head_dim * item
    else:
        n_b = -(-n // cfg.block_size)
        w = row_width(cfg)
        transient = 2 * cfg.heads * n_b * w * cfg.head_dim * item + 2 * cfg.block_size * w * item
    return io_bytes + transient


def _make_inputs(cfg: LsgConfig, n, seed):
    r = Rng(seed).derive(n)
    q, k, v = (r.normal((n, cfg.model_dim), cfg.precision) for _ in range(3))
    if cfg.num_global:
        gq, gk, gv = (r.normal((cfg.num_global, cfg.model_dim), cfg.precision) for _ in range(3))
    else:
        gq = gk = gv = None
    return q, k, v, gq, gk, gv


def bench_point(attn, cfg: LsgConfig, n, repeats=3, threads=1, seed=0,
                mem="measured") -> BenchRecord:
    """Median-of-repeats timing of one (attention kind, length) point."""
    if repeats < 3:
        raise ValueError("repeats must be >= 3")
    q, k, v, gq, gk, gv = _make_inputs(cfg, n, seed)
    if attn == "full":
        if cfg.num_global:
            q = np.concatenate([gq, q])
            k = np.concatenate([gk, k])
            v = np.concatenate([gv, v])

        def run():
            return full_attention(q, k, v, cfg.heads, cfg.causal, threads)

        entries = (n + cfg.num_global) ** 2
    elif attn == "lsg":
        inst = LsgAttention(cfg)

        def run():
            return inst.forward(q, k, v, gq, gk, gv, threads=threads)

        entries = score_entry_count(cfg, n)
    else:
        raise ValueError(f"unknown attention kind {attn!r}")

    run()  # warmup, discarded
    times = []
    for _ in range(repeats):
        t0 = time.perf_counter_ns()
        run()
        times.append(time.perf_counter_ns() - t0)

    if mem == "measured":
        tracemalloc.start()
        run()
        peak = tracemalloc.get_traced_memory()[1]
        tracemalloc.stop()
        kind = "measured"
    else:
        peak = _analytic_peak(attn, cfg, n)
        kind = "analytic"

    return BenchRecord(
        attn=attn, n=n, bt=cfg.block_size, f=cfg.sparsity_factor,
        g=cfg.num_global, strategy=cfg.strategy, causal=cfg.causal,
        precision=cfg.precision, time_ns=int(median(times)), entries=entries,
        peak_bytes=int(peak), mem_kind=kind,
    )


def run_bench(lens, cfg: LsgConfig, attns=("full", "lsg"), repeats=3,
              threads=1, seed=0, mem="measured"):
    if any(n < 1 for n in lens):
        raise ValueError("sequence lengths must be positive")
    records = []
    for attn in attns:
        for n in lens:
            records.append(bench_point(attn, cfg, n, repeats, threads, seed, mem))
    return records


def render_csv(records) -> str:
    buf = io.StringIO()
    buf.write(CSV_HEADER + "\n")
    for rec in records:
        buf.write(rec.csv_row() + "\n")
    return buf.getvalue()
