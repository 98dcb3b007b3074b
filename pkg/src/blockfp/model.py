"""Analytical SNR/NSR model of block-floating-point convolution in three
stages: quantization noise of one block, noise accumulation through one
matrix product, and noise inheritance across layers.

The model threads actual signal energies and block exponents from a reference
forward pass; only the error statistics are analytical.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .core import DomainError, MantissaWidth, RoundingMode, as_width, block_format, to_floats
from .gemm import im2col
from .network import NetworkSpec, forward_reference

__all__ = [
    "ExponentPmf",
    "SnrValue",
    "LayerPrediction",
    "quant_variance",
    "quant_variance_pmf",
    "block_noise_variance",
    "input_snr",
    "weight_snr",
    "combine_snr",
    "inherit_nsr",
    "predict_network",
    "validate_inner_product_moment",
]


@dataclass(frozen=True)
class ExponentPmf:
    """Probability mass function over block-exponent levels."""

    levels: tuple[int, ...]
    probabilities: tuple[float, ...]

    def __post_init__(self):
        if len(self.levels) != len(self.probabilities) or not self.levels:
            raise DomainError("levels and probabilities must be non-empty and aligned")
        if any(p < 0 for p in self.probabilities):
            raise DomainError("probabilities must be non-negative")
        if abs(sum(self.probabilities) - 1.0) > 1e-12:
            raise DomainError("probabilities must sum to 1")

    @classmethod
    def point_mass(cls, level: int) -> "ExponentPmf":
        return cls(levels=(level,), probabilities=(1.0,))


@dataclass(frozen=True)
class SnrValue:
    """An SNR in dB paired with its linear noise-to-signal ratio."""

    snr_db: float
    nsr: float

    @classmethod
    def from_db(cls, snr_db: float) -> "SnrValue":
        return cls(snr_db=snr_db, nsr=10.0 ** (-snr_db / 10.0))

    @classmethod
    def from_nsr(cls, nsr: float) -> "SnrValue":
        if nsr < 0:
            raise DomainError(f"NSR must be non-negative, got {nsr}")
        snr_db = math.inf if nsr == 0.0 else -10.0 * math.log10(nsr)
        return cls(snr_db=snr_db, nsr=nsr)


def quant_variance(width: MantissaWidth | int, eps: int) -> float:
    """Noise variance ``2**(-2*L) / 12 * 2**(2*eps)`` of rounding to an
    ``L``-bit mantissa scaled by ``2**eps``.

    ``eps`` is the exponent of a pure-fraction mantissa (quantization step
    ``2**(eps - L)``).  A stored block exponent, which tags the octave of the
    largest element, is one less than that; see block_noise_variance.
    """
    lm = as_width(width).fraction_bits
    return math.ldexp(1.0, 2 * eps - 2 * lm) / 12.0


def quant_variance_pmf(width: MantissaWidth | int, pmf: ExponentPmf) -> float:
    """Noise variance averaged over a distribution of exponent levels."""
    lm = as_width(width).fraction_bits
    mix = sum(p * math.ldexp(1.0, 2 * g) for g, p in zip(pmf.levels, pmf.probabilities))
    return math.ldexp(1.0, -2 * lm) / 12.0 * mix


def block_noise_variance(width: MantissaWidth | int, block_exponent: int) -> float:
    """Quantization noise variance of a block with the given stored exponent.

    The block's step is ``2**(block_exponent - (L - 1))``, so this is
    quant_variance evaluated one exponent level up.
    """
    return quant_variance(width, block_exponent + 1)


def _max_exponent(values: np.ndarray) -> int | None:
    nonzero = values[values != 0.0]
    if nonzero.size == 0:
        return None
    _, exps = np.frexp(nonzero)
    return int(exps.max()) - 1


def input_snr(i_matrix: np.ndarray, width: MantissaWidth | int) -> SnrValue:
    """Predicted SNR of a whole-matrix block-formatted input.

    Signal is the mean square of the entries; noise is the quantization
    variance at the matrix's maximum element exponent.
    """
    mat = np.asarray(i_matrix, dtype=np.float64)
    if mat.size == 0:
        raise DomainError("input matrix is empty")
    eps = _max_exponent(mat.ravel())
    if eps is None:
        return SnrValue(snr_db=math.inf, nsr=0.0)
    energy = float(np.mean(mat * mat))
    return SnrValue.from_nsr(block_noise_variance(width, eps) / energy)


def weight_snr(w_matrix: np.ndarray, width: MantissaWidth | int) -> SnrValue:
    """Predicted SNR of a per-row block-formatted weight matrix.

    Rows are aggregated as total signal energy over total noise energy; an
    all-zero row contributes nothing to either sum.
    """
    mat = np.asarray(w_matrix, dtype=np.float64)
    if mat.ndim != 2 or mat.size == 0:
        raise DomainError(f"expected a non-empty 2D matrix, got shape {mat.shape}")
    signal = 0.0
    noise = 0.0
    for row in mat:
        eps = _max_exponent(row)
        if eps is None:
            continue
        signal += float(np.mean(row * row))
        noise += block_noise_variance(width, eps)
    if noise == 0.0:
        return SnrValue(snr_db=math.inf, nsr=0.0)
    return SnrValue.from_nsr(noise / signal)


def combine_snr(snr_i: SnrValue, snr_w: SnrValue) -> SnrValue:
    """Output SNR of a product of two independently quantized operands:
    the noise-to-signal ratios add."""
    return SnrValue.from_nsr(snr_i.nsr + snr_w.nsr)


def inherit_nsr(eta1: float, eta2: float) -> float:
    """Fresh-quantization NSR rebased to the clean signal.

    ``eta2`` is measured against signal plus inherited noise; relative to the
    clean signal alone it grows to ``eta2 + eta1 * eta2``.
    """
    if eta1 < 0 or eta2 < 0:
        raise DomainError("NSR values must be non-negative")
    return eta2 + eta1 * eta2


@dataclass(frozen=True)
class LayerPrediction:
    """Model-predicted SNRs for one conv layer, in one prediction mode.

    ``single`` treats the layer's input as error-free; ``multi`` carries the
    inherited noise of every earlier layer.
    """

    index: int
    name: str
    mode: str  # "single" | "multi"
    input_snr: SnrValue
    weight_snr: SnrValue
    output_snr: SnrValue


def predict_network(
    net: NetworkSpec,
    representative_input: np.ndarray,
    pool_output_snr_db: dict[int, float] | None = None,
) -> list[LayerPrediction]:
    """Per-conv-layer single and multi mode SNR predictions.

    The reference forward pass supplies each layer's true operand magnitudes.
    ReLU layers pass inherited noise through unchanged; a maxpool layer resets
    it to a measured post-pooling SNR when one is supplied (keyed by layer
    index), and passes it through otherwise.
    """
    x = np.asarray(representative_input, dtype=np.float64)
    reference = forward_reference(net, x)
    ref_inputs = [x] + reference[:-1]
    names = net.layer_names()

    predictions: list[LayerPrediction] = []
    eta1 = 0.0  # inherited NSR entering the next conv layer
    for idx, layer in enumerate(net.layers):
        if layer.kind == "relu":
            continue
        if layer.kind == "maxpool":
            if pool_output_snr_db and idx in pool_output_snr_db:
                eta1 = SnrValue.from_db(pool_output_snr_db[idx]).nsr
            continue

        m = layer.weights.shape[0]
        _, _, kh, kw = layer.weights.shape
        cols = im2col(ref_inputs[idx], kh, kw, layer.stride, layer.pad)
        wmat = layer.weights.reshape(m, -1)

        in_single = input_snr(cols, layer.li)
        w_pred = weight_snr(wmat, layer.lw)
        out_single = combine_snr(in_single, w_pred)
        predictions.append(
            LayerPrediction(idx, names[idx], "single", in_single, w_pred, out_single)
        )

        # Fresh quantization error is measured against signal + inherited
        # noise, then rebased to the clean signal and added to what carried in.
        energy = float(np.mean(cols * cols))
        eps = _max_exponent(cols.ravel())
        sigma2 = 0.0 if eps is None else block_noise_variance(layer.li, eps)
        eta2 = sigma2 / (energy * (1.0 + eta1)) if energy > 0 else 0.0
        in_multi_nsr = eta1 + inherit_nsr(eta1, eta2)
        in_multi = SnrValue.from_nsr(in_multi_nsr)
        out_multi = SnrValue.from_nsr(in_multi_nsr + w_pred.nsr)
        predictions.append(
            LayerPrediction(idx, names[idx], "multi", in_multi, w_pred, out_multi)
        )
        eta1 = out_multi.nsr
    return predictions


def validate_inner_product_moment(
    k: int,
    width: MantissaWidth | int,
    trials: int = 2000,
    seed: int = 0,
    scale_p: float = 1.0,
    scale_q: float = 1.0,
) -> dict[str, float]:
    """Monte-Carlo check of the inner-product second-moment expansion.

    Draws i.i.d. Gaussian vector pairs, block formats each, and compares the
    empirical mean square of the quantized inner product with the model
    ``(1/K) * (1 + eta_p + eta_q) * E||P||^2 * E||Q||^2``.  Also reports the
    neglected higher-order and cross terms so the approximation error is
    visible rather than assumed.
    """
    if k < 1 or trials < 1:
        raise DomainError("k and trials must be positive")
    rng = np.random.default_rng(seed)
    width = as_width(width)

    sq_full = np.empty(trials)
    sq_clean = np.empty(trials)
    sq_pe_q = np.empty(trials)
    sq_p_qe = np.empty(trials)
    sq_pe_qe = np.empty(trials)
    norm_p = np.empty(trials)
    norm_q = np.empty(trials)
    err_p = np.empty(trials)
    err_q = np.empty(trials)
    for t in range(trials):
        p = rng.standard_normal(k) * scale_p
        q = rng.standard_normal(k) * scale_q
        pb = to_floats(block_format(p, width, RoundingMode.ROUND_HALF_AWAY))
        qb = to_floats(block_format(q, width, RoundingMode.ROUND_HALF_AWAY))
        pe = pb - p
        qe = qb - q
        sq_full[t] = np.dot(pb, qb) ** 2
        sq_clean[t] = np.dot(p, q) ** 2
        sq_pe_q[t] = np.dot(pe, q) ** 2
        sq_p_qe[t] = np.dot(p, qe) ** 2
        sq_pe_qe[t] = np.dot(pe, qe) ** 2
        norm_p[t] = np.dot(p, p)
        norm_q[t] = np.dot(q, q)
        err_p[t] = np.dot(pe, pe)
        err_q[t] = np.dot(qe, qe)

    eta_p = err_p.mean() / norm_p.mean()
    eta_q = err_q.mean() / norm_q.mean()
    model = (1.0 + eta_p + eta_q) / k * norm_p.mean() * norm_q.mean()
    empirical = sq_full.mean()
    term_sum = sq_clean.mean() + sq_pe_q.mean() + sq_p_qe.mean() + sq_pe_qe.mean()
    return {
        "empirical_mean_square": float(empirical),
        "model_mean_square": float(model),
        "relative_gap": float(abs(empirical - model) / empirical),
        "higher_order_share": float(sq_pe_qe.mean() / empirical),
        "cross_term_share": float((empirical - term_sum) / empirical),
        "eta_p": float(eta_p),
        "eta_q": float(eta_q),
    }
