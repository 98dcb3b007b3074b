"""Small-CNN forward execution in reference (binary64) and block-floating-point
modes, with per-layer signal/error taps and energy-distribution histograms.

The reference pass is the signal definition: the BFP pass of the same input is
compared against it layer by layer to obtain empirical SNRs.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from .core import DomainError, MantissaWidth, RoundingMode, as_width
from .gemm import PlanViolationError, bfp_gemm, bit_width_plan, dequantize, im2col
from .partition import PartitionScheme, partition_matrix

__all__ = [
    "LayerSpec",
    "NetworkSpec",
    "LayerTap",
    "EnergyHistogram",
    "forward_reference",
    "forward_bfp",
    "measure_layer_snr",
    "snr_db",
    "energy_histogram",
    "random_gaussian_network",
]


@dataclass(frozen=True)
class LayerSpec:
    """One layer of a small CNN: conv (with BFP settings), relu, or maxpool."""

    kind: str  # "conv" | "relu" | "maxpool"
    weights: np.ndarray | None = None  # conv: M x C x kh x kw
    stride: int = 1
    pad: int = 0
    lw: MantissaWidth = field(default_factory=lambda: MantissaWidth(8))
    li: MantissaWidth = field(default_factory=lambda: MantissaWidth(8))
    scheme: PartitionScheme = PartitionScheme.ROW_WHOLE
    rounding: RoundingMode = RoundingMode.ROUND_HALF_AWAY
    window: int = 2
    pool_stride: int = 2

    def __post_init__(self):
        if self.kind not in ("conv", "relu", "maxpool"):
            raise DomainError(f"unknown layer kind {self.kind!r}")
        if self.kind == "conv":
            if self.weights is None or np.asarray(self.weights).ndim != 4:
                raise DomainError("conv layer needs M x C x kh x kw weights")
            if not np.all(np.isfinite(self.weights)):
                raise DomainError("conv weights must be finite")


@dataclass(frozen=True)
class NetworkSpec:
    """An ordered layer stack and the C x H x W shape it consumes."""

    input_shape: tuple[int, int, int]
    layers: tuple[LayerSpec, ...]

    def __post_init__(self):
        shape = self.input_shape
        for idx, layer in enumerate(self.layers):
            try:
                shape = layer_output_shape(layer, shape)
            except DomainError as exc:
                raise DomainError(f"layer {idx} ({layer.kind}): {exc}") from exc

    def layer_names(self) -> list[str]:
        counts: dict[str, int] = {}
        names = []
        for layer in self.layers:
            counts[layer.kind] = counts.get(layer.kind, 0) + 1
            names.append(f"{layer.kind}{counts[layer.kind]}")
        return names


def layer_output_shape(
    layer: LayerSpec, shape: tuple[int, int, int]
) -> tuple[int, int, int]:
    c, h, w = shape
    if layer.kind == "conv":
        m, cw, kh, kw = layer.weights.shape
        if cw != c:
            raise DomainError(f"weights expect {cw} channels, input has {c}")
        span_h = h + 2 * layer.pad - kh
        span_w = w + 2 * layer.pad - kw
        if span_h < 0 or span_w < 0 or span_h % layer.stride or span_w % layer.stride:
            raise DomainError(f"kernel {kh}x{kw} does not tile the {h}x{w} input")
        return (m, span_h // layer.stride + 1, span_w // layer.stride + 1)
    if layer.kind == "relu":
        return shape
    out_h = (h - layer.window) // layer.pool_stride + 1
    out_w = (w - layer.window) // layer.pool_stride + 1
    if out_h < 1 or out_w < 1:
        raise DomainError(f"pool window {layer.window} exceeds the {h}x{w} input")
    return (c, out_h, out_w)


def _conv_reference(layer: LayerSpec, x: np.ndarray) -> np.ndarray:
    m = layer.weights.shape[0]
    _, _, kh, kw = layer.weights.shape
    cols = im2col(x, kh, kw, layer.stride, layer.pad)
    out = layer.weights.reshape(m, -1) @ cols
    _, out_h, out_w = layer_output_shape(layer, x.shape)
    return out.reshape(m, out_h, out_w)


def _maxpool(layer: LayerSpec, x: np.ndarray) -> np.ndarray:
    c, h, w = x.shape
    _, out_h, out_w = layer_output_shape(layer, x.shape)
    out = np.empty((c, out_h, out_w), dtype=np.float64)
    k, s = layer.window, layer.pool_stride
    for oy in range(out_h):
        for ox in range(out_w):
            tile = x[:, oy * s : oy * s + k, ox * s : ox * s + k]
            out[:, oy, ox] = tile.max(axis=(1, 2))
    return out


def forward_reference(net: NetworkSpec, inp: np.ndarray) -> list[np.ndarray]:
    """Exact binary64 activations after every layer."""
    x = np.asarray(inp, dtype=np.float64)
    if x.shape != net.input_shape:
        raise DomainError(f"input shape {x.shape} != network shape {net.input_shape}")
    acts = []
    for layer in net.layers:
        if layer.kind == "conv":
            x = _conv_reference(layer, x)
        elif layer.kind == "relu":
            x = np.maximum(x, 0.0)
        else:
            x = _maxpool(layer, x)
        acts.append(x)
    return acts


def snr_db(reference: np.ndarray, observed: np.ndarray) -> float:
    """10*log10(signal energy / error energy); +inf when the error is zero."""
    return measure_layer_snr(reference, observed)[0]


@dataclass(frozen=True)
class LayerTap:
    """Empirical per-layer SNRs of a BFP pass against the reference pass.

    ``input_snr_db``/``weight_snr_db`` are populated for conv layers only; the
    input tap compares the block-formatted (error-carrying) input matrix to the
    reference layer input.
    """

    index: int
    name: str
    kind: str
    output_snr_db: float
    signal_energy: float
    error_energy: float
    input_snr_db: float | None = None
    weight_snr_db: float | None = None


def measure_layer_snr(reference: np.ndarray, observed: np.ndarray) -> tuple[float, float, float]:
    """(snr_db, signal_energy, error_energy) of observed against reference."""
    ref = np.asarray(reference, dtype=np.float64)
    obs = np.asarray(observed, dtype=np.float64)
    if ref.shape != obs.shape:
        raise DomainError(f"shape mismatch: {ref.shape} vs {obs.shape}")
    signal = float(np.sum(ref * ref))
    noise = float(np.sum((obs - ref) ** 2))
    value = math.inf if (noise == 0.0 or signal == 0.0) else 10.0 * math.log10(signal / noise)
    return value, signal, noise


def forward_bfp(
    net: NetworkSpec, inp: np.ndarray, threads: int = 1
) -> tuple[list[np.ndarray], list[LayerTap]]:
    """Run the BFP dataflow: quantize conv operands, exact integer GEMM,
    rescale to floats; relu and maxpool operate on the rescaled values.

    Taps are pure observations against forward_reference on the same input and
    never alter an activation bit.
    """
    x = np.asarray(inp, dtype=np.float64)
    reference = forward_reference(net, x)
    names = net.layer_names()
    ref_inputs = [x] + reference[:-1]

    taps: list[LayerTap] = []
    acts: list[np.ndarray] = []
    cur = x
    for idx, layer in enumerate(net.layers):
        if layer.kind == "conv":
            m, _, kh, kw = layer.weights.shape
            wmat = layer.weights.reshape(m, -1)
            cols = im2col(cur, kh, kw, layer.stride, layer.pad)
            wq = partition_matrix(wmat, "weight", layer.scheme, layer.lw, layer.rounding)
            iq = partition_matrix(cols, "input", layer.scheme, layer.li, layer.rounding)
            plan = bit_width_plan(layer.lw, layer.li, wmat.shape[1])
            try:
                prod = bfp_gemm(wq, iq, plan, threads=threads)
            except PlanViolationError as exc:
                raise PlanViolationError(
                    f"layer {idx} ({names[idx]}): {exc}", entry=exc.entry
                ) from exc
            out = dequantize(prod)
            _, out_h, out_w = layer_output_shape(layer, cur.shape)
            cur = out.reshape(m, out_h, out_w)

            ref_cols = im2col(ref_inputs[idx], kh, kw, layer.stride, layer.pad)
            in_snr, _, _ = measure_layer_snr(ref_cols, iq.to_array())
            w_snr, _, _ = measure_layer_snr(wmat, wq.to_array())
            out_snr, sig, err = measure_layer_snr(reference[idx], cur)
            taps.append(
                LayerTap(idx, names[idx], "conv", out_snr, sig, err, in_snr, w_snr)
            )
        else:
            if layer.kind == "relu":
                cur = np.maximum(cur, 0.0)
            else:
                cur = _maxpool(layer, cur)
            out_snr, sig, err = measure_layer_snr(reference[idx], cur)
            taps.append(LayerTap(idx, names[idx], layer.kind, out_snr, sig, err))
        acts.append(cur)
    return acts, taps


@dataclass(frozen=True)
class EnergyHistogram:
    """Energy shares binned by magnitude normalized to the largest value."""

    bin_edges: np.ndarray  # bins + 1 edges over [lo, hi]
    shares: np.ndarray  # per-bin energy share, sums to 1 over the range


def energy_histogram(
    values: np.ndarray, bins: int, lo: float = 0.0, hi: float = 1.0
) -> EnergyHistogram:
    """Distribution of squared magnitude over (lo, hi] of normalized magnitude.

    Bins are right-inclusive so the peak value lands in the last bin; shares
    are normalized by the energy inside the analyzed range.
    """
    vals = np.asarray(values, dtype=np.float64).ravel()
    if bins < 1:
        raise DomainError(f"bins must be >= 1, got {bins}")
    if not hi > lo:
        raise DomainError(f"empty range [{lo}, {hi}]")
    if vals.size == 0:
        raise DomainError("no values to histogram")
    peak = float(np.abs(vals).max())
    if peak == 0.0:
        raise DomainError("cannot normalize an all-zero value set")

    mags = np.abs(vals) / peak
    width = (hi - lo) / bins
    idx = np.ceil((mags - lo) / width).astype(np.int64) - 1
    keep = (idx >= 0) & (idx < bins)
    energy = np.zeros(bins, dtype=np.float64)
    np.add.at(energy, idx[keep], vals[keep] ** 2)
    total = energy.sum()
    if total == 0.0:
        raise DomainError(f"no energy inside the ({lo}, {hi}] magnitude range")
    edges = lo + width * np.arange(bins + 1)
    edges[-1] = hi
    return EnergyHistogram(bin_edges=edges, shares=energy / total)


def random_gaussian_network(
    depth: int,
    input_shape: tuple[int, int, int],
    channels: int,
    kernel: int,
    lw: MantissaWidth | int,
    li: MantissaWidth | int,
    seed: int,
    relu_between: bool = True,
    scheme: PartitionScheme = PartitionScheme.ROW_WHOLE,
) -> NetworkSpec:
    """Conv stack with unit-variance Gaussian weights from a seeded stream."""
    rng = np.random.default_rng(seed)
    lw, li = as_width(lw), as_width(li)
    layers: list[LayerSpec] = []
    c = input_shape[0]
    for d in range(depth):
        weights = rng.standard_normal((channels, c, kernel, kernel))
        layers.append(
            LayerSpec(
                kind="conv",
                weights=weights,
                stride=1,
                pad=kernel // 2,
                lw=lw,
                li=li,
                scheme=scheme,
            )
        )
        if relu_between and d < depth - 1:
            layers.append(LayerSpec(kind="relu"))
        c = channels
    return NetworkSpec(input_shape=input_shape, layers=tuple(layers))
