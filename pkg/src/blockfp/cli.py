"""Command-line front end: quantize, run, predict, cost, gemm, histogram.

File formats owned here: the binary tensor container (see tensorfile), the
network JSON schema (documented in the README), CSV reports, and JSON stats.
Undefined SNRs are serialized as the literal string "inf".  Exit codes:
0 success, 2 usage error, 3 data error, 4 width-plan violation.
"""

from __future__ import annotations

import argparse
import csv
import json
import math
import sys
from fractions import Fraction
from pathlib import Path

import numpy as np

from .core import DomainError, MantissaWidth, RoundingMode, quant_stats
from .gemm import PlanViolationError, bfp_gemm, bit_width_plan, dequantize
from .model import predict_network
from .network import (
    LayerSpec,
    NetworkSpec,
    energy_histogram,
    forward_bfp,
    snr_db,
)
from .partition import (
    DEFAULT_EXPONENT_BITS,
    PartitionScheme,
    partition_matrix,
    storage_cost,
)
from .tensorfile import TensorFileError, read_tensor, write_tensor

EXIT_OK = 0
EXIT_USAGE = 2
EXIT_DATA = 3
EXIT_PLAN = 4

_SCHEME_NAMES = [s.value for s in PartitionScheme]
_ROUND_NAMES = {
    "truncate": RoundingMode.TRUNCATE,
    "half-away": RoundingMode.ROUND_HALF_AWAY,
}


class UsageError(Exception):
    pass


def _fmt(value) -> str:
    """CSV cell: shortest round-trip decimal; '' for n/a; 'inf' sentinels."""
    if value is None:
        return ""
    v = float(value)
    if math.isinf(v):
        return "inf" if v > 0 else "-inf"
    return repr(v)


def _jsonify(obj):
    """JSON-safe copy: non-finite floats become their sentinel strings."""
    if isinstance(obj, dict):
        return {k: _jsonify(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_jsonify(v) for v in obj]
    if isinstance(obj, Fraction):
        return f"{obj.numerator}/{obj.denominator}"
    if isinstance(obj, (np.floating, float)):
        v = float(obj)
        if math.isinf(v):
            return "inf" if v > 0 else "-inf"
        if math.isnan(v):
            return "nan"
        return v
    if isinstance(obj, np.integer):
        return int(obj)
    return obj


def _write_json(path: Path, payload: dict) -> None:
    path.write_text(json.dumps(_jsonify(payload), indent=2) + "\n")


def _write_csv(path: Path, header: list[str], rows: list[list[str]]) -> None:
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(header)
        writer.writerows(rows)


def _width(bits: int, flag: str) -> MantissaWidth:
    try:
        return MantissaWidth(bits)
    except DomainError as exc:
        raise UsageError(f"{flag}: {exc}") from exc


def _outdir(args) -> Path:
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    return out


# ---------------------------------------------------------------------------
# network JSON

def load_network(
    path: str | Path,
    rng: np.random.Generator,
    overrides: dict | None = None,
) -> NetworkSpec:
    """Build a NetworkSpec from its JSON description.

    Conv weights come from a tensor file path (relative to the JSON file) or
    from ``{"init": "gaussian", "std": ...}`` drawn from ``rng`` in layer
    order.  ``overrides`` may force lw/li/scheme/rounding on every conv layer.
    """
    path = Path(path)
    try:
        doc = json.loads(path.read_text())
    except (OSError, json.JSONDecodeError) as exc:
        raise DomainError(f"cannot read network spec {path}: {exc}") from exc
    overrides = overrides or {}

    try:
        input_shape = tuple(int(v) for v in doc["input_shape"])
        if len(input_shape) != 3:
            raise DomainError("input_shape must be [C, H, W]")
        in_channels = input_shape[0]
        layers: list[LayerSpec] = []
        for entry in doc["layers"]:
            kind = entry["kind"]
            if kind == "conv":
                m = int(entry["out_channels"])
                kh, kw = (int(v) for v in entry["kernel"])
                wspec = entry["weights"]
                if isinstance(wspec, str):
                    weights = read_tensor(path.parent / wspec)
                    if weights.shape != (m, in_channels, kh, kw):
                        raise DomainError(
                            f"weight tensor {wspec} has shape {weights.shape}, "
                            f"expected {(m, in_channels, kh, kw)}"
                        )
                else:
                    if wspec.get("init") != "gaussian":
                        raise DomainError(f"unknown weight init {wspec!r}")
                    std = float(wspec.get("std", 1.0))
                    weights = rng.standard_normal((m, in_channels, kh, kw)) * std
                layers.append(
                    LayerSpec(
                        kind="conv",
                        weights=weights,
                        stride=int(entry.get("stride", 1)),
                        pad=int(entry.get("pad", 0)),
                        lw=MantissaWidth(int(overrides.get("lw") or entry.get("lw", 8))),
                        li=MantissaWidth(int(overrides.get("li") or entry.get("li", 8))),
                        scheme=PartitionScheme.from_name(
                            overrides.get("scheme") or entry.get("scheme", "row-whole")
                        ),
                        rounding=_ROUND_NAMES[
                            overrides.get("round") or entry.get("round", "half-away")
                        ],
                    )
                )
                in_channels = m
            elif kind == "relu":
                layers.append(LayerSpec(kind="relu"))
            elif kind == "maxpool":
                layers.append(
                    LayerSpec(
                        kind="maxpool",
                        window=int(entry.get("window", 2)),
                        pool_stride=int(entry.get("stride", 2)),
                    )
                )
            else:
                raise DomainError(f"unknown layer kind {kind!r}")
    except (KeyError, TypeError, ValueError) as exc:
        raise DomainError(f"malformed network spec {path}: {exc}") from exc
    return NetworkSpec(input_shape=input_shape, layers=tuple(layers))


# ---------------------------------------------------------------------------
# commands

def cmd_quantize(args) -> int:
    if args.role == "weight":
        width = _width(args.lw, "--lw")
    else:
        width = _width(args.li, "--li")
    scheme = PartitionScheme.from_name(args.scheme)
    mode = _ROUND_NAMES[args.round]

    tensor = read_tensor(args.tensor)
    matrix = tensor if tensor.ndim == 2 else tensor.reshape(1, -1)
    bfp = partition_matrix(matrix, args.role, scheme, width, mode)
    stats = quant_stats(matrix, bfp.to_array())

    out = _outdir(args)
    _write_json(
        out / "bfp.json",
        {
            "rows": bfp.rows,
            "cols": bfp.cols,
            "role": args.role,
            "scheme": scheme.value,
            "axis": bfp.axis.value,
            "mantissa_bits": width.fraction_bits,
            "rounding": args.round,
            "block_exponents": [b.block_exponent for b in bfp.blocks],
            "mantissas": [b.mantissas.tolist() for b in bfp.blocks],
        },
    )
    _write_json(
        out / "stats.json",
        {
            "error_mean": stats.error_mean,
            "error_variance": stats.error_variance,
            "signal_energy": stats.signal_energy,
            "error_energy": stats.error_energy,
            "snr_db": stats.snr_db,
        },
    )
    print(f"wrote {out / 'bfp.json'} and {out / 'stats.json'}")
    return EXIT_OK


def _report_rows(taps, predictions) -> list[dict]:
    single = {p.index: p for p in predictions if p.mode == "single"}
    multi = {p.index: p for p in predictions if p.mode == "multi"}
    rows: list[dict] = []
    for tap in taps:
        if tap.kind == "conv":
            s, m = single[tap.index], multi[tap.index]
            rows.append(
                {
                    "layer": tap.name,
                    "stage": "input",
                    "ex_snr_db": tap.input_snr_db,
                    "single_snr_db": s.input_snr.snr_db,
                    "multi_snr_db": m.input_snr.snr_db,
                }
            )
            rows.append(
                {
                    "layer": tap.name,
                    "stage": "weight",
                    "ex_snr_db": tap.weight_snr_db,
                    "single_snr_db": s.weight_snr.snr_db,
                    "multi_snr_db": m.weight_snr.snr_db,
                }
            )
            rows.append(
                {
                    "layer": tap.name,
                    "stage": "output",
                    "ex_snr_db": tap.output_snr_db,
                    "single_snr_db": s.output_snr.snr_db,
                    "multi_snr_db": m.output_snr.snr_db,
                    "deviation_db": abs(tap.output_snr_db - m.output_snr.snr_db),
                }
            )
        else:
            stage = "relu" if tap.kind == "relu" else "pool"
            rows.append(
                {"layer": tap.name, "stage": stage, "ex_snr_db": tap.output_snr_db}
            )
    return rows


_REPORT_HEADER = [
    "layer",
    "stage",
    "ex_snr_db",
    "single_snr_db",
    "multi_snr_db",
    "deviation_db",
]


def _rows_to_csv(rows: list[dict]) -> list[list[str]]:
    return [[row.get("layer", ""), row.get("stage", "")]
            + [_fmt(row.get(col)) for col in _REPORT_HEADER[2:]]
            for row in rows]


def _load_run_inputs(args):
    rng = np.random.default_rng(args.seed)
    overrides = {
        "lw": args.lw,
        "li": args.li,
        "scheme": args.scheme,
        "round": args.round,
    }
    net = load_network(args.net, rng, overrides)
    if args.input:
        inp = read_tensor(args.input)
        if tuple(inp.shape) != net.input_shape:
            raise DomainError(
                f"input tensor shape {inp.shape} != network input {net.input_shape}"
            )
    else:
        inp = rng.standard_normal(net.input_shape)
    return net, inp


def cmd_run(args) -> int:
    net, inp = _load_run_inputs(args)
    _, taps = forward_bfp(net, inp, threads=args.threads)
    pool_snrs = {t.index: t.output_snr_db for t in taps if t.kind == "maxpool"}
    predictions = predict_network(net, inp, pool_output_snr_db=pool_snrs)

    rows = _report_rows(taps, predictions)
    out = _outdir(args)
    _write_csv(out / "layers.csv", _REPORT_HEADER, _rows_to_csv(rows))
    if not args.no_figures:
        from .figures import render_layer_snr_figure

        render_layer_snr_figure(rows, out / "layers.png")

    conv_outputs = [r for r in rows if r.get("stage") == "output"]
    _write_json(
        out / "run.json",
        {
            "net": str(args.net),
            "seed": args.seed,
            "threads": args.threads,
            "final_output_snr_db": conv_outputs[-1]["ex_snr_db"] if conv_outputs else None,
            "max_deviation_db": max(
                (r["deviation_db"] for r in conv_outputs), default=None
            ),
        },
    )
    width = max(len(r["layer"]) for r in rows)
    print(f"{'layer':<{width}}  {'stage':<6}  {'ex':>10}  {'single':>10}  {'multi':>10}")
    for r in rows:
        print(
            f"{r['layer']:<{width}}  {r['stage']:<6}  {_fmt(r.get('ex_snr_db')):>10.10s}  "
            f"{_fmt(r.get('single_snr_db')):>10.10s}  {_fmt(r.get('multi_snr_db')):>10.10s}"
        )
    print(f"wrote {out / 'layers.csv'}")
    return EXIT_OK


def cmd_predict(args) -> int:
    net, inp = _load_run_inputs(args)
    predictions = predict_network(net, inp)
    single = {p.index: p for p in predictions if p.mode == "single"}
    multi = {p.index: p for p in predictions if p.mode == "multi"}
    rows = []
    for idx in sorted(single):
        s, m = single[idx], multi[idx]
        for stage, sv, mv in (
            ("input", s.input_snr, m.input_snr),
            ("weight", s.weight_snr, m.weight_snr),
            ("output", s.output_snr, m.output_snr),
        ):
            rows.append(
                {
                    "layer": s.name,
                    "stage": stage,
                    "single_snr_db": sv.snr_db,
                    "multi_snr_db": mv.snr_db,
                }
            )
    out = _outdir(args)
    header = ["layer", "stage", "single_snr_db", "multi_snr_db"]
    _write_csv(
        out / "predictions.csv",
        header,
        [[r["layer"], r["stage"], _fmt(r["single_snr_db"]), _fmt(r["multi_snr_db"])]
         for r in rows],
    )
    if not args.no_figures:
        from .figures import render_layer_snr_figure

        render_layer_snr_figure(rows, out / "predictions.png")
    print(f"wrote {out / 'predictions.csv'}")
    return EXIT_OK


def cmd_cost(args) -> int:
    if min(args.m, args.k, args.n) < 1:
        raise UsageError("--m/--k/--n must be positive")
    if args.le < 1:
        raise UsageError("--le must be positive")
    lw = _width(args.lw, "--lw")
    li = _width(args.li, "--li")
    chosen = PartitionScheme.from_name(args.scheme)

    schemes = {}
    for scheme in PartitionScheme:
        report = storage_cost(scheme, args.m, args.k, args.n, lw, li, args.le)
        schemes[scheme.value] = {
            "avg_len_w_bits": float(report.avg_len_w),
            "avg_len_i_bits": float(report.avg_len_i),
            "avg_len_w_exact": report.avg_len_w,
            "avg_len_i_exact": report.avg_len_i,
            "num_block_exponents": report.num_block_exponents,
            "total_bits": report.total_bits,
        }
    payload = {
        "m": args.m,
        "k": args.k,
        "n": args.n,
        "lw": lw.fraction_bits,
        "li": li.fraction_bits,
        "le": args.le,
        "chosen_scheme": chosen.value,
        "schemes": schemes,
    }
    text = json.dumps(_jsonify(payload), indent=2)
    print(text)
    if args.out:
        out = _outdir(args)
        (out / "cost.json").write_text(text + "\n")
    return EXIT_OK


def cmd_gemm(args) -> int:
    lw = _width(args.lw, "--lw")
    li = _width(args.li, "--li")
    scheme = PartitionScheme.from_name(args.scheme)
    mode = _ROUND_NAMES[args.round]

    w = read_tensor(args.weights)
    i = read_tensor(args.inputs)
    if w.ndim != 2 or i.ndim != 2:
        raise DomainError(
            f"gemm operands must be 2D, got shapes {w.shape} and {i.shape}"
        )
    wq = partition_matrix(w, "weight", scheme, lw, mode)
    iq = partition_matrix(i, "input", scheme, li, mode)
    plan = bit_width_plan(lw, li, w.shape[1])
    product = bfp_gemm(wq, iq, plan, threads=args.threads)
    result = dequantize(product)

    out = _outdir(args)
    write_tensor(out / "product.bfpt", result)
    _write_json(
        out / "gemm.json",
        {
            "m": w.shape[0],
            "k": w.shape[1],
            "n": i.shape[1],
            "scheme": scheme.value,
            "multiplier_bits": plan.multiplier_bits,
            "tight_multiplier_bits": plan.tight_multiplier_bits,
            "accumulator_bits": plan.accumulator_bits,
            "carry_margin": plan.carry_margin,
            "max_abs_accumulator": product.max_abs_accumulator,
            "snr_db_vs_float64": snr_db(w @ i, result),
        },
    )
    print(f"wrote {out / 'product.bfpt'} and {out / 'gemm.json'}")
    return EXIT_OK


def cmd_histogram(args) -> int:
    tensor = read_tensor(args.tensor)
    hist = energy_histogram(tensor, args.bins, args.lo, args.hi)
    out = _outdir(args)
    rows = [
        [f"{hist.bin_edges[b]:.17g}", f"{hist.bin_edges[b + 1]:.17g}", _fmt(hist.shares[b])]
        for b in range(len(hist.shares))
    ]
    _write_csv(out / "histogram.csv", ["bin_lo", "bin_hi", "share"], rows)
    if not args.no_figures:
        from .figures import render_energy_histogram_figure

        render_energy_histogram_figure(hist, out / "histogram.png")
    print(f"wrote {out / 'histogram.csv'}")
    return EXIT_OK


# ---------------------------------------------------------------------------
# parser

def _add_common(sub, *, widths=True, scheme=True, rounding=True, out_required=True):
    if widths:
        sub.add_argument("--lw", type=int, default=8,
                         help="weight mantissa magnitude bits, sign excluded")
        sub.add_argument("--li", type=int, default=8,
                         help="input mantissa magnitude bits, sign excluded")
    if scheme:
        sub.add_argument("--scheme", choices=_SCHEME_NAMES, default="row-whole")
    if rounding:
        sub.add_argument("--round", choices=sorted(_ROUND_NAMES), default="half-away")
    sub.add_argument("--out", required=out_required, help="output directory")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="blockfp",
        description="Block floating point quantization, exact fixed-point GEMM, "
        "and SNR error modeling for small CNNs.",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("quantize", help="block format a tensor and report error stats")
    p.add_argument("--tensor", required=True, help="input tensor file")
    p.add_argument("--role", choices=["weight", "input"], default="input")
    _add_common(p)
    p.set_defaults(func=cmd_quantize)

    p = sub.add_parser("run", help="BFP forward pass with per-layer SNR report")
    p.add_argument("--net", required=True, help="network spec JSON")
    p.add_argument("--input", help="input tensor file (default: seeded gaussian)")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--threads", type=int, default=1)
    p.add_argument("--lw", type=int, help="override every conv layer's weight width")
    p.add_argument("--li", type=int, help="override every conv layer's input width")
    p.add_argument("--scheme", choices=_SCHEME_NAMES, help="override partition scheme")
    p.add_argument("--round", choices=sorted(_ROUND_NAMES), help="override rounding")
    p.add_argument("--no-figures", action="store_true")
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_run)

    p = sub.add_parser("predict", help="analytical SNR predictions only")
    p.add_argument("--net", required=True)
    p.add_argument("--input", help="representative input tensor")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--lw", type=int)
    p.add_argument("--li", type=int)
    p.add_argument("--scheme", choices=_SCHEME_NAMES)
    p.add_argument("--round", choices=sorted(_ROUND_NAMES))
    p.add_argument("--no-figures", action="store_true")
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_predict)

    p = sub.add_parser("cost", help="storage cost of the four partition schemes")
    p.add_argument("--m", type=int, required=True)
    p.add_argument("--k", type=int, required=True)
    p.add_argument("--n", type=int, required=True)
    p.add_argument("--le", type=int, default=DEFAULT_EXPONENT_BITS,
                   help="stored block-exponent bits")
    _add_common(p, out_required=False, rounding=False)
    p.set_defaults(func=cmd_cost)

    p = sub.add_parser("gemm", help="BFP matrix multiply of two tensor files")
    p.add_argument("--weights", required=True, help="left operand (M x K)")
    p.add_argument("--inputs", required=True, help="right operand (K x N)")
    p.add_argument("--threads", type=int, default=1)
    _add_common(p)
    p.set_defaults(func=cmd_gemm)

    p = sub.add_parser("histogram", help="energy distribution over normalized magnitude")
    p.add_argument("--tensor", required=True)
    p.add_argument("--bins", type=int, default=20)
    p.add_argument("--lo", type=float, default=0.0)
    p.add_argument("--hi", type=float, default=1.0)
    p.add_argument("--no-figures", action="store_true")
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_histogram)

    return parser


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return args.func(args)
    except UsageError as exc:
        print(f"usage error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except PlanViolationError as exc:
        print(f"plan violation: {exc}", file=sys.stderr)
        return EXIT_PLAN
    except (DomainError, TensorFileError, OSError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_DATA


if __name__ == "__main__":
    sys.exit(main())
