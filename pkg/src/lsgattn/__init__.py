"""Blocked local-sparse-global attention with O(n) cost.

Self-contained: a minimal deterministic tensor substrate, five sparse
token-selection strategies, global tokens, causal support, analytic
gradients, a dense reference oracle for exact equivalence checks, a
bit-exact weight-bundle format with conversion tools, and a scaling
benchmark CLI (`lsg`).

Hot kernels run on a compiled extension when it is importable and fall back
to a pure numpy implementation otherwise; see lsgattn.backends.
"""

from . import backends
from .attention import (
    AttentionOutput,
    BlockedSequence,
    Gradients,
    LsgAttention,
    backward,
    chunk,
    forward,
    gather_local,
    gather_sparse,
    score_entry_count,
    unchunk,
)
from .bundle import WeightBundle, convert, extend_positional, init_globals, load, save
from .config import LsgConfig
from .oracle import AugmentedAttention, build_augmented, oracle_forward, render_pattern
from .rng import Rng, rng_normal
from .sparse import (
    LshProjection,
    SparseBlockSet,
    build_sparse,
    lsh_cluster,
    pool_average,
    select_block_strided,
    select_max_norm,
    select_strided,
)
from .tensor import l2_norm_rows, matmul, softmax_masked

__all__ = [
    "AttentionOutput",
    "AugmentedAttention",
    "BlockedSequence",
    "Gradients",
    "LsgAttention",
    "LsgConfig",
    "LshProjection",
    "Rng",
    "SparseBlockSet",
    "WeightBundle",
    "backends",
    "backward",
    "build_augmented",
    "build_sparse",
    "chunk",
    "convert",
    "extend_positional",
    "forward",
    "gather_local",
    "gather_sparse",
    "init_globals",
    "l2_norm_rows",
    "load",
    "lsh_cluster",
    "matmul",
    "oracle_forward",
    "pool_average",
    "render_pattern",
    "rng_normal",
    "save",
    "score_entry_count",
    "select_block_strided",
    "select_max_norm",
    "select_strided",
    "softmax_masked",
    "unchunk",
]
