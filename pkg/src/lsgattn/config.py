"""Mechanism hyperparameters and their validity rules."""

from dataclasses import dataclass

import numpy as np

from .tensor import dtype_for

STRATEGIES = ("none", "strided", "block_strided", "pooling", "norm", "lsh")

# Factors outside this set are accepted when they divide the block size, but
# the config is flagged nonstandard (see warnings()).
STANDARD_FACTORS = (0, 2, 4, 8)


@dataclass(frozen=True)
class LsgConfig:
    """Everything the blocked attention needs to know.

    block_size: tokens per block.
    sparsity_factor: compression ratio of the sparse context; 0 disables it
        and is the only value allowed with strategy "none" (and vice versa).
    num_global: count of global tokens; they carry their own embeddings and
        are not part of the n sequence positions.
    causal: masks future positions; requires num_global == 0.
    seed: drives every random choice tied to the instance (LSH projections).
    """

    block_size: int
    sparsity_factor: int = 0
    strategy: str = "none"
    num_global: int = 0
    heads: int = 1
    head_dim: int = 8
    causal: bool = False
    seed: int = 0
    precision: str = "double"

    def __post_init__(self):
        if self.block_size < 1:
            raise ValueError(f"block_size must be >= 1, got {self.block_size}")
        if self.strategy not in STRATEGIES:
            raise ValueError(f"unknown strategy {self.strategy!r}")
        if (self.strategy == "none") != (self.sparsity_factor == 0):
            raise ValueError(
                "strategy 'none' and sparsity_factor 0 imply each other "
                f"(got strategy={self.strategy!r}, factor={self.sparsity_factor})"
            )
        if self.sparsity_factor:
            if self.sparsity_factor < 2:
                raise ValueError("sparsity_factor must be 0 or >= 2")
            if self.block_size % self.sparsity_factor:
                raise ValueError(
                    f"sparsity_factor {self.sparsity_factor} does not divide "
                    f"block_size {self.block_size}"
                )
        if self.strategy == "lsh":
            c = self.block_size // self.sparsity_factor
            if c < 2 or c % 2:
                raise ValueError(
                    f"lsh needs an even cluster count >= 2 per block, got {c}"
                )
        if self.num_global < 0:
            raise ValueError("num_global must be >= 0")
        if self.causal and self.num_global:
            raise ValueError("causal mode requires num_global == 0")
        if self.heads < 1 or self.head_dim < 1:
            raise ValueError("heads and head_dim must be >= 1")
        dtype_for(self.precision)

    @property
    def dtype(self) -> np.dtype:
        return dtype_for(self.precision)

    @property
    def slots_per_block(self) -> int:
        """Sparse slots each block contributes (0 when sparse is off)."""
        return self.block_size // self.sparsity_factor if self.sparsity_factor else 0

    @property
    def model_dim(self) -> int:
        return self.heads * self.head_dim

    @property
    def nonstandard_sparsity(self) -> bool:
        return self.sparsity_factor not in STANDARD_FACTORS

    def warnings(self) -> list:
        out = []
        if self.nonstandard_sparsity:
            out.append(
                f"sparsity_factor {self.sparsity_factor} is outside the usual "
                f"set {STANDARD_FACTORS}; accepted because it divides block_size"
            )
        return out
