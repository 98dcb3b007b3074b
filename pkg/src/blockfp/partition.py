"""Matrix partitioning for shared-exponent formatting, and its storage cost.

Weights and inputs of a GEMM can each be formatted as one block, per row, or
per column.  Finer partitions track local magnitude better (smaller shared
exponents, smaller quantization steps) at the price of storing more block
exponents.
"""

from __future__ import annotations

import enum
from dataclasses import dataclass
from fractions import Fraction

import numpy as np

from .core import (
    BfpBlock,
    DomainError,
    MantissaWidth,
    RoundingMode,
    as_width,
    block_format,
    to_floats,
)

__all__ = [
    "PartitionScheme",
    "PartitionAxis",
    "BfpMatrix",
    "CostReport",
    "partition_matrix",
    "storage_cost",
    "DEFAULT_EXPONENT_BITS",
]

#: Default stored width of a block exponent (signed).
DEFAULT_EXPONENT_BITS = 8


class PartitionScheme(enum.Enum):
    """Granularity at which W (left operand) and I (right operand) share exponents."""

    WHOLE_WHOLE = "whole-whole"  # W whole, I whole
    ROW_COLUMN = "row-column"  # W per row, I per column
    ROW_WHOLE = "row-whole"  # W per row, I whole
    WHOLE_COLUMN = "whole-column"  # W whole, I per column

    @classmethod
    def from_name(cls, name: str) -> "PartitionScheme":
        for scheme in cls:
            if scheme.value == name:
                return scheme
        names = ", ".join(s.value for s in cls)
        raise DomainError(f"unknown partition scheme {name!r} (expected one of {names})")

    def weight_axis(self) -> "PartitionAxis":
        if self in (PartitionScheme.ROW_COLUMN, PartitionScheme.ROW_WHOLE):
            return PartitionAxis.ROW
        return PartitionAxis.WHOLE

    def input_axis(self) -> "PartitionAxis":
        if self in (PartitionScheme.ROW_COLUMN, PartitionScheme.WHOLE_COLUMN):
            return PartitionAxis.COLUMN
        return PartitionAxis.WHOLE


class PartitionAxis(enum.Enum):
    WHOLE = "whole"
    ROW = "row"
    COLUMN = "column"


@dataclass(frozen=True)
class BfpMatrix:
    """A matrix stored as one shared-exponent block per partition cell."""

    rows: int
    cols: int
    axis: PartitionAxis
    blocks: tuple[BfpBlock, ...]  # 1 block, or rows blocks, or cols blocks
    width: MantissaWidth

    def __post_init__(self):
        expected = {
            PartitionAxis.WHOLE: 1,
            PartitionAxis.ROW: self.rows,
            PartitionAxis.COLUMN: self.cols,
        }[self.axis]
        if len(self.blocks) != expected:
            raise DomainError(
                f"{self.axis.value} partition of {self.rows}x{self.cols} needs "
                f"{expected} blocks, got {len(self.blocks)}"
            )

    def mantissa_matrix(self) -> np.ndarray:
        """Integer mantissas reassembled into rows x cols layout."""
        if self.axis is PartitionAxis.WHOLE:
            return self.blocks[0].mantissas.reshape(self.rows, self.cols)
        if self.axis is PartitionAxis.ROW:
            return np.stack([b.mantissas for b in self.blocks], axis=0)
        return np.stack([b.mantissas for b in self.blocks], axis=1)

    def block_exponents(self) -> np.ndarray:
        """One exponent per block, in row (or column) order."""
        return np.array([b.block_exponent for b in self.blocks], dtype=np.int64)

    def to_array(self) -> np.ndarray:
        """Reconstructed float matrix; the inverse layout of partition_matrix."""
        if self.axis is PartitionAxis.WHOLE:
            return to_floats(self.blocks[0]).reshape(self.rows, self.cols)
        if self.axis is PartitionAxis.ROW:
            return np.stack([to_floats(b) for b in self.blocks], axis=0)
        return np.stack([to_floats(b) for b in self.blocks], axis=1)


def partition_matrix(
    matrix: np.ndarray,
    role: str,
    scheme: PartitionScheme,
    width: MantissaWidth | int,
    mode: RoundingMode = RoundingMode.ROUND_HALF_AWAY,
) -> BfpMatrix:
    """Block format a 2D matrix at the granularity the scheme assigns its role.

    ``role`` is ``"weight"`` (left operand, row-partitioned schemes apply per
    row) or ``"input"`` (right operand, column-partitioned schemes apply per
    column).
    """
    mat = np.asarray(matrix, dtype=np.float64)
    if mat.ndim != 2 or mat.size == 0:
        raise DomainError(f"expected a non-empty 2D matrix, got shape {mat.shape}")
    if role == "weight":
        axis = scheme.weight_axis()
    elif role == "input":
        axis = scheme.input_axis()
    else:
        raise DomainError(f"role must be 'weight' or 'input', got {role!r}")

    width = as_width(width)
    if axis is PartitionAxis.WHOLE:
        blocks = (block_format(mat.ravel(), width, mode),)
    elif axis is PartitionAxis.ROW:
        blocks = tuple(block_format(mat[r, :], width, mode) for r in range(mat.shape[0]))
    else:
        blocks = tuple(block_format(mat[:, c], width, mode) for c in range(mat.shape[1]))
    return BfpMatrix(mat.shape[0], mat.shape[1], axis, blocks, width)


@dataclass(frozen=True)
class CostReport:
    """Storage cost of formatting W (M x K) and I (K x N) under one scheme.

    Average lengths are exact rationals in bits per number; ``total_bits``
    counts sign + mantissa words for both matrices plus the stored exponents.
    """

    scheme: PartitionScheme
    avg_len_w: Fraction
    avg_len_i: Fraction
    num_block_exponents: int
    total_bits: int


def storage_cost(
    scheme: PartitionScheme,
    m: int,
    k: int,
    n: int,
    lw: MantissaWidth | int,
    li: MantissaWidth | int,
    le: int = DEFAULT_EXPONENT_BITS,
) -> CostReport:
    """Average stored bits per number and exponent count for one scheme."""
    if min(m, k, n) < 1:
        raise DomainError(f"dimensions must be positive, got M={m} K={k} N={n}")
    if le < 1:
        raise DomainError(f"exponent bit length must be positive, got {le}")
    lw = as_width(lw).fraction_bits
    li = as_width(li).fraction_bits

    w_exponents = {
        PartitionScheme.WHOLE_WHOLE: 1,
        PartitionScheme.ROW_COLUMN: m,
        PartitionScheme.ROW_WHOLE: m,
        PartitionScheme.WHOLE_COLUMN: 1,
    }[scheme]
    i_exponents = {
        PartitionScheme.WHOLE_WHOLE: 1,
        PartitionScheme.ROW_COLUMN: n,
        PartitionScheme.ROW_WHOLE: 1,
        PartitionScheme.WHOLE_COLUMN: n,
    }[scheme]

    avg_len_w = 1 + lw + Fraction(w_exponents * le, m * k)
    avg_len_i = 1 + li + Fraction(i_exponents * le, k * n)
    nbe = w_exponents + i_exponents
    total_bits = m * k * (1 + lw) + k * n * (1 + li) + nbe * le
    return CostReport(scheme, avg_len_w, avg_len_i, nbe, total_bits)
