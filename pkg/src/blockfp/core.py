"""Block formatting of float vectors: shared-exponent quantization and its
measured error statistics.

A block stores signed integer mantissas aligned to one shared exponent.  With
``L`` mantissa magnitude bits (sign kept separately in the integer sign), the
stored word is one integer bit plus ``L - 1`` fraction bits, so element ``i``
reconstructs as ``mantissa[i] * 2**(block_exponent - (L - 1))``.
"""

from __future__ import annotations

import enum
import math
from dataclasses import dataclass
from typing import Iterable, Sequence

import numpy as np

__all__ = [
    "MantissaWidth",
    "RoundingMode",
    "BfpBlock",
    "QuantStats",
    "DomainError",
    "ZERO_BLOCK_EXPONENT",
    "extract_exponent",
    "block_format",
    "to_floats",
    "quant_stats",
    "measure_quant_stats",
]


class DomainError(ValueError):
    """Raised when an input is outside an operation's domain."""


#: Exponent stored for a block whose elements are all zero: the minimum value
#: of a signed 8-bit exponent field, so reconstruction is exact and downstream
#: scale arithmetic stays total.
ZERO_BLOCK_EXPONENT = -128


@dataclass(frozen=True)
class MantissaWidth:
    """Mantissa magnitude bit count, excluding the sign bit."""

    fraction_bits: int

    def __post_init__(self):
        if not (1 <= self.fraction_bits <= 52):
            raise DomainError(
                f"mantissa width must be in [1, 52], got {self.fraction_bits}"
            )


def as_width(width: MantissaWidth | int) -> MantissaWidth:
    return width if isinstance(width, MantissaWidth) else MantissaWidth(width)


class RoundingMode(enum.Enum):
    """How bits shifted out during mantissa alignment are dropped."""

    TRUNCATE = "truncate"
    ROUND_HALF_AWAY = "half-away"


@dataclass(frozen=True)
class BfpBlock:
    """A group of values sharing one block exponent.

    ``mantissas`` are signed integers with ``|q| <= 2**width.fraction_bits``.
    The maximal code point ``2**fraction_bits`` occurs only when the largest
    element rounds up to exactly ``2**(block_exponent + 1)``; the extra
    multiplier headroom in the fixed-point GEMM width plan absorbs it.
    """

    mantissas: np.ndarray  # int64
    block_exponent: int
    width: MantissaWidth

    def __post_init__(self):
        limit = 1 << self.width.fraction_bits
        if self.mantissas.size == 0:
            raise DomainError("block must contain at least one element")
        if np.abs(self.mantissas).max(initial=0) > limit:
            raise DomainError(f"mantissa magnitude exceeds {limit}")

    def __len__(self) -> int:
        return int(self.mantissas.size)

    @property
    def scale_exponent(self) -> int:
        """Power of two each mantissa is weighted by on reconstruction."""
        return self.block_exponent - (self.width.fraction_bits - 1)


@dataclass(frozen=True)
class QuantStats:
    """Moments of the per-element quantization error of one block."""

    error_mean: float
    error_variance: float
    signal_energy: float  # mean square of the original values
    error_energy: float  # mean square of the errors
    snr_db: float  # +inf when error_energy == 0


def extract_exponent(x: float) -> int:
    """floor(log2|x|) of a finite nonzero value, i.e. e with 2^e <= |x| < 2^(e+1)."""
    if x == 0:
        raise DomainError("exponent of zero is undefined")
    if not math.isfinite(x):
        raise DomainError(f"exponent of non-finite value {x!r} is undefined")
    # frexp gives x = m * 2**e with 0.5 <= |m| < 1, exactly.
    _, e = math.frexp(x)
    return e - 1


def block_format(
    values: Iterable[float] | np.ndarray,
    width: MantissaWidth | int,
    mode: RoundingMode = RoundingMode.ROUND_HALF_AWAY,
) -> BfpBlock:
    """Quantize a group of floats onto one shared-exponent grid.

    The block exponent is the maximum element exponent; smaller elements lose
    low bits in the alignment.  Rounding keeps every element within half a
    quantization step of its original value; truncation drops shifted-out bits
    toward zero and is within one full step.
    """
    vals = np.asarray(values, dtype=np.float64).ravel()
    if vals.size == 0:
        raise DomainError("cannot block format an empty sequence")
    if not np.all(np.isfinite(vals)):
        raise DomainError("cannot block format non-finite values")

    width = as_width(width)
    nonzero = vals[vals != 0.0]
    if nonzero.size == 0:
        return BfpBlock(
            mantissas=np.zeros(vals.size, dtype=np.int64),
            block_exponent=ZERO_BLOCK_EXPONENT,
            width=width,
        )

    _, exps = np.frexp(nonzero)
    eps = int(exps.max()) - 1
    # Scaling by a power of two is exact while the result stays normal; the
    # aligned magnitudes are < 2**fraction_bits <= 2**52 so no bits are lost.
    aligned = np.ldexp(vals, -(eps - (width.fraction_bits - 1)))
    if mode is RoundingMode.ROUND_HALF_AWAY:
        q = np.copysign(np.floor(np.abs(aligned) + 0.5), aligned)
    elif mode is RoundingMode.TRUNCATE:
        q = np.trunc(aligned)
    else:
        raise DomainError(f"unknown rounding mode {mode!r}")
    return BfpBlock(q.astype(np.int64), eps, width)


def to_floats(block: BfpBlock) -> np.ndarray:
    """Reconstruct block elements as binary64 values (exact for widths <= 52)."""
    return np.ldexp(block.mantissas.astype(np.float64), block.scale_exponent)


def quant_stats(
    original: np.ndarray | Sequence[float], reconstructed: np.ndarray | Sequence[float]
) -> QuantStats:
    """Error statistics of reconstructed values against their originals."""
    orig = np.asarray(original, dtype=np.float64).ravel()
    recon = np.asarray(reconstructed, dtype=np.float64).ravel()
    if orig.size != recon.size:
        raise DomainError(
            f"length mismatch: {orig.size} original values vs {recon.size} reconstructed"
        )
    err = recon - orig
    signal_energy = float(np.mean(orig * orig))
    error_energy = float(np.mean(err * err))
    if error_energy > 0.0:
        snr_db = 10.0 * math.log10(signal_energy / error_energy)
    else:
        snr_db = math.inf
    return QuantStats(
        error_mean=float(err.mean()),
        error_variance=float(err.var()),
        signal_energy=signal_energy,
        error_energy=error_energy,
        snr_db=snr_db,
    )


def measure_quant_stats(
    original: Sequence[float] | np.ndarray, block: BfpBlock
) -> QuantStats:
    """Error statistics of a block against the values it was formatted from."""
    orig = np.asarray(original, dtype=np.float64).ravel()
    if orig.size != len(block):
        raise DomainError(
            f"length mismatch: {orig.size} original values vs block of {len(block)}"
        )
    return quant_stats(orig, to_floats(block))
