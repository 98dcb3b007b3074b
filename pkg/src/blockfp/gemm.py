"""Exact integer GEMM over block-formatted mantissas, with a checked
fixed-point width plan, plus im2col lowering of convolutions.

The multiply-accumulate path never rounds: products and sums are exact
integers, and the width plan is a hardware contract verified against the
observed magnitudes rather than a storage type.
"""

from __future__ import annotations

import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass

import numpy as np

from .core import DomainError, MantissaWidth, as_width
from .partition import BfpMatrix, PartitionAxis

__all__ = [
    "BitWidthPlan",
    "ProductMatrix",
    "PlanViolationError",
    "bit_width_plan",
    "im2col",
    "bfp_gemm",
    "dequantize",
]


class PlanViolationError(Exception):
    """An accumulator or product exceeded the planned fixed-point width."""

    def __init__(self, message: str, entry: tuple[int, int] | None = None):
        super().__init__(message)
        self.entry = entry


@dataclass(frozen=True)
class BitWidthPlan:
    """Multiplier/accumulator widths for a rounding-free K-term fixed-point GEMM.

    ``multiplier_bits`` is the planned product width including sign; it is one
    bit wider than ``tight_multiplier_bits``, the width sufficient when no
    mantissa uses the rounded-up maximal code point.  ``carry_margin`` extra
    accumulator bits absorb the carries of K-term accumulation.
    """

    multiplier_bits: int
    accumulator_bits: int
    carry_margin: int
    reduction_length: int
    tight_multiplier_bits: int


def bit_width_plan(
    lw: MantissaWidth | int, li: MantissaWidth | int, k: int
) -> BitWidthPlan:
    """Width plan for multiplying lw- by li-bit mantissas over a length-k reduction."""
    if k < 1:
        raise DomainError(f"reduction length must be positive, got {k}")
    lw = as_width(lw).fraction_bits
    li = as_width(li).fraction_bits
    s = int(math.floor(math.log2(k)))
    multiplier = lw + li + 2
    return BitWidthPlan(
        multiplier_bits=multiplier,
        accumulator_bits=multiplier + s,
        carry_margin=s,
        reduction_length=k,
        tight_multiplier_bits=lw + li + 1,
    )


def im2col(
    inp: np.ndarray,
    kernel_h: int,
    kernel_w: int,
    stride: int = 1,
    pad: int = 0,
) -> np.ndarray:
    """Unfold a C x H x W tensor so each output pixel's receptive field is a column.

    Rows are ordered channel-major, then kernel-row-major; column n corresponds
    to output pixel n in row-major order.  Padding contributes zeros.
    """
    x = np.asarray(inp, dtype=np.float64)
    if x.ndim != 3:
        raise DomainError(f"expected a C x H x W tensor, got shape {x.shape}")
    c, h, w = x.shape
    if kernel_h < 1 or kernel_w < 1 or stride < 1 or pad < 0:
        raise DomainError(
            f"invalid geometry: kernel {kernel_h}x{kernel_w}, stride {stride}, pad {pad}"
        )
    span_h = h + 2 * pad - kernel_h
    span_w = w + 2 * pad - kernel_w
    if span_h < 0 or span_w < 0 or span_h % stride or span_w % stride:
        raise DomainError(
            f"kernel {kernel_h}x{kernel_w} stride {stride} pad {pad} does not tile "
            f"a {h}x{w} input to an integral output size"
        )
    out_h = span_h // stride + 1
    out_w = span_w // stride + 1

    padded = np.pad(x, ((0, 0), (pad, pad), (pad, pad)))
    cols = np.empty((c * kernel_h * kernel_w, out_h * out_w), dtype=np.float64)
    row = 0
    for ch in range(c):
        for u in range(kernel_h):
            for v in range(kernel_w):
                patch = padded[
                    ch,
                    u : u + out_h * stride : stride,
                    v : v + out_w * stride : stride,
                ]
                cols[row, :] = patch.ravel()
                row += 1
    return cols


@dataclass(frozen=True)
class ProductMatrix:
    """Exact integer GEMM result plus the exponents needed to rescale it.

    Entry (m, n) reconstructs as
    ``accumulators[m, n] * 2**(row_exponents[m] + col_exponents[n] - (lw-1) - (li-1))``.
    Exponent vectors are broadcast from scalars for whole-matrix partitions.
    """

    accumulators: np.ndarray  # M x N exact integers (int64 or object)
    row_exponents: np.ndarray  # length M
    col_exponents: np.ndarray  # length N
    lw: MantissaWidth
    li: MantissaWidth
    max_abs_accumulator: int
    plan: BitWidthPlan

    @property
    def shape(self) -> tuple[int, int]:
        return self.accumulators.shape


def _exponents_for(mat: BfpMatrix, length: int, axis: PartitionAxis) -> np.ndarray:
    if mat.axis is PartitionAxis.WHOLE:
        return np.full(length, mat.blocks[0].block_exponent, dtype=np.int64)
    if mat.axis is not axis:
        raise DomainError(
            f"operand partitioned per {mat.axis.value} cannot provide per-"
            f"{axis.value} scales"
        )
    return mat.block_exponents()


def _chunked_matmul(a: np.ndarray, b: np.ndarray, threads: int) -> np.ndarray:
    if threads <= 1 or a.shape[0] < 2 * threads:
        return a @ b
    bounds = np.linspace(0, a.shape[0], threads + 1, dtype=int)
    with ThreadPoolExecutor(max_workers=threads) as pool:
        parts = list(pool.map(lambda i: a[bounds[i] : bounds[i + 1]] @ b, range(threads)))
    return np.concatenate(parts, axis=0)


def bfp_gemm(
    w: BfpMatrix, i: BfpMatrix, plan: BitWidthPlan, threads: int = 1
) -> ProductMatrix:
    """Multiply mantissa matrices exactly and check the plan's widths.

    Results are bit-identical for any thread count: output tiles are disjoint
    and integer accumulation is exact.
    """
    if w.cols != i.rows:
        raise DomainError(f"inner dimensions differ: {w.cols} vs {i.rows}")
    if plan.reduction_length != w.cols:
        raise DomainError(
            f"plan covers K={plan.reduction_length} but operands have K={w.cols}"
        )
    if w.axis is PartitionAxis.COLUMN:
        raise DomainError("left operand cannot be column partitioned")
    if i.axis is PartitionAxis.ROW:
        raise DomainError("right operand cannot be row partitioned")

    wm = w.mantissa_matrix()
    im = i.mantissa_matrix()
    # int64 is safe when the worst-case |accumulator| provably fits; otherwise
    # fall back to Python integers (exact, any width).
    wmax = int(np.abs(wm).max(initial=0))
    imax = int(np.abs(im).max(initial=0))
    worst = w.cols * wmax * imax
    if worst < 2**62:
        acc = _chunked_matmul(wm, im, threads)
        abs_acc = _chunked_matmul(np.abs(wm), np.abs(im), threads)
    else:
        acc = _chunked_matmul(wm.astype(object), im.astype(object), threads)
        abs_acc = _chunked_matmul(
            np.abs(wm).astype(object), np.abs(im).astype(object), threads
        )

    prod_limit = 1 << (plan.multiplier_bits - 1)
    if wmax * imax >= prod_limit:
        raise PlanViolationError(
            f"product magnitude {wmax * imax} exceeds the "
            f"{plan.multiplier_bits}-bit multiplier plan"
        )
    # The absolute-product sum bounds every partial sum in any accumulation
    # order, so the check is order independent.
    acc_limit = 1 << (plan.accumulator_bits - 1)
    peak = int(abs_acc.max())
    if peak >= acc_limit:
        m, n = np.unravel_index(int(np.argmax(abs_acc)), abs_acc.shape)
        raise PlanViolationError(
            f"accumulator magnitude {peak} at entry ({m}, {n}) exceeds the "
            f"{plan.accumulator_bits}-bit accumulator plan",
            entry=(int(m), int(n)),
        )

    return ProductMatrix(
        accumulators=acc,
        row_exponents=_exponents_for(w, w.rows, PartitionAxis.ROW),
        col_exponents=_exponents_for(i, i.cols, PartitionAxis.COLUMN),
        lw=w.width,
        li=i.width,
        max_abs_accumulator=int(np.abs(acc).max()),
        plan=plan,
    )


def dequantize(p: ProductMatrix) -> np.ndarray:
    """Rescale integer accumulators to binary64 (exact for plans <= 52 bits)."""
    scale = (
        p.row_exponents[:, None]
        + p.col_exponents[None, :]
        - (p.lw.fraction_bits - 1)
        - (p.li.fraction_bits - 1)
    )
    return np.ldexp(p.accumulators.astype(np.float64), scale.astype(np.int64))
