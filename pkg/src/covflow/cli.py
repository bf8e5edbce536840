"""Command-line entry point.

Subcommands: decompose (Hermite series of an activation), flow (iterate
the covariance map and classify its fixed point), figure1 (tabulate the
map for the three reference activations), simulate (Monte Carlo
verification of the covariance theory), and conjecture (all-negative
rarity harness).

Every run writes a manifest.json next to its outputs holding the
subcommand, resolved parameters, seed, and tool version; JSON outputs
reference it via "manifest_file" and CSV outputs via a leading comment
line.  Worker counts are execution detail, not configuration: they are
deliberately left out of all output files so reports are bit-identical
for any worker count.

Exit codes: 0 success, 1 validation error, 2 numerically inconclusive,
3 simulation z-score failure.
"""

from __future__ import annotations

import argparse
import json
import sys
from pathlib import Path

import numpy as np

from . import __version__
from .activations import (
    classify,
    gaussian_mean,
    gaussian_second_moment,
    hermite_coefficients,
    get_activation,
    spec_from_dict,
    spec_to_dict,
)
from .conjecture import (
    conjecture_config,
    estimate_rarity,
    estimate_rarity_synthetic,
    generate_sign_dataset,
)
from .errors import InconclusiveError
from .flow import figure1_curve, find_fixed_point, iterate_flow
from .simulator import (
    config_to_dict,
    covariance_with_diagnostics,
    covariance_zscores,
    doubled_width_config,
    four_point_scaling,
    load_simulation_file,
    theory_covariance,
)

_EXIT_OK = 0
_EXIT_VALIDATION = 1
_EXIT_INCONCLUSIVE = 2
_EXIT_ZSCORE = 3

_Z_LIMIT = 6.0

_FIGURE1_PANELS = ("relu", "tanh4", "relu-shifted")


def _write_json(path: Path, doc: dict) -> None:
    path.write_text(json.dumps(doc, indent=2, sort_keys=True) + "\n", encoding="utf-8")


def _write_csv(path: Path, header: list[str], rows) -> None:
    lines = ["# manifest: manifest.json", ",".join(header)]
    for row in rows:
        lines.append(",".join(repr(v) if isinstance(v, float) else str(v) for v in row))
    path.write_text("\n".join(lines) + "\n", encoding="utf-8")


def _write_manifest(outdir: Path, subcommand: str, parameters: dict, seed: int | None, outputs: list[str]) -> None:
    _write_json(
        outdir / "manifest.json",
        {
            "subcommand": subcommand,
            "version": __version__,
            "seed": seed,
            "parameters": parameters,
            "outputs": sorted(outputs),
        },
    )


def _resolve_activation(args) -> "ActivationSpec":
    if args.spec_file:
        with open(args.spec_file, encoding="utf-8") as handle:
            return spec_from_dict(json.load(handle))
    return get_activation(args.activation)


def _series_doc(spec, degree: int) -> dict:
    series = hermite_coefficients(spec, degree)
    return {
        "activation": spec_to_dict(spec),
        "coefficients": series.coefficients.tolist(),
        "truncation_degree": series.truncation_degree,
        "residual": series.residual,
        "gaussian_mean": gaussian_mean(spec),
        "second_moment": gaussian_second_moment(spec),
        "classification": classify(spec, series).value,
    }


def _cmd_decompose(args) -> int:
    spec = _resolve_activation(args)
    outdir = Path(args.out)
    outdir.mkdir(parents=True, exist_ok=True)
    doc = _series_doc(spec, args.degree)
    doc["manifest_file"] = "manifest.json"
    _write_manifest(
        outdir,
        "decompose",
        {"activation": doc["activation"], "degree": args.degree},
        None,
        ["decompose.json"],
    )
    _write_json(outdir / "decompose.json", doc)
    print(json.dumps(doc, indent=2, sort_keys=True))
    return _EXIT_OK


def _cmd_flow(args) -> int:
    spec = _resolve_activation(args)
    if abs(args.k0) >= 1.0:
        raise ValueError(
            f"k0 = {args.k0} is excluded: scalar multiples of one input "
            "(|k0| = 1) are outside the flow analysis"
        )
    outdir = Path(args.out)
    outdir.mkdir(parents=True, exist_ok=True)
    series = hermite_coefficients(spec, args.degree)
    report = find_fixed_point(series, activation_id=spec.id)
    trajectory = iterate_flow(args.k0, series, args.depth)
    doc = report.to_dict()
    doc["manifest_file"] = "manifest.json"
    _write_manifest(
        outdir,
        "flow",
        {
            "activation": spec_to_dict(spec),
            "k0": args.k0,
            "depth": args.depth,
            "degree": args.degree,
        },
        None,
        ["flow_report.json", "trajectory.csv"],
    )
    _write_json(outdir / "flow_report.json", doc)
    _write_csv(
        outdir / "trajectory.csv",
        ["layer", "k"],
        [(layer + 1, float(k)) for layer, k in enumerate(trajectory.k_values)],
    )
    print(
        f"{spec.id}: fixed point {report.fixed_point!r}, "
        f"{report.classification.value}, derivative {report.derivative_at_fp!r}"
    )
    return _EXIT_OK


def _cmd_figure1(args) -> int:
    if args.grid_size < 2:
        raise ValueError(f"grid size must be >= 2, got {args.grid_size}")
    outdir = Path(args.out)
    outdir.mkdir(parents=True, exist_ok=True)
    grid = np.linspace(-1.0, 1.0, args.grid_size)
    outputs = []
    for name in _FIGURE1_PANELS:
        spec = get_activation(name)
        curve = figure1_curve(spec, grid)
        filename = f"figure1_{name}.csv"
        outputs.append(filename)
        _write_csv(
            outdir / filename,
            ["k_in", "k_out", "diagonal"],
            [(float(k), float(c), float(k)) for k, c in curve],
        )
    _write_manifest(outdir, "figure1", {"grid_size": args.grid_size, "panels": list(_FIGURE1_PANELS)}, None, outputs)
    print(f"wrote {len(outputs)} panel tables to {outdir}")
    return _EXIT_OK


def _simulate_covariance(config, dataset, args, outdir: Path) -> int:
    empirical, kurtosis = covariance_with_diagnostics(config, dataset, args.samples, args.workers)
    theory = theory_covariance(config, dataset)
    scores = covariance_zscores(empirical, theory)
    doc = {
        "manifest_file": "manifest.json",
        "config": config_to_dict(config),
        "samples": args.samples,
        "covariance": empirical.to_dict(),
        "theory": theory.tolist(),
        "zscores": {"same": scores["same"].tolist(), "cross": scores["cross"].tolist()},
        "kurtosis": kurtosis.to_dict(),
    }
    _write_json(outdir / "simulation_report.json", doc)
    same_rows, cross_rows = [], []
    m = dataset.size
    for layer in range(config.depth):
        for a in range(m):
            for b in range(m):
                same_rows.append(
                    (
                        layer + 1,
                        a,
                        b,
                        float(empirical.same_neuron[layer, a, b]),
                        float(empirical.same_stderr[layer, a, b]),
                        float(theory[layer, a, b]),
                        float(scores["same"][layer, a, b]),
                    )
                )
                cross_rows.append(
                    (
                        layer + 1,
                        a,
                        b,
                        float(empirical.cross_neuron[layer, a, b]),
                        float(empirical.cross_stderr[layer, a, b]),
                        float(scores["cross"][layer, a, b]),
                    )
                )
    _write_csv(
        outdir / "covariance.csv",
        ["layer", "alpha1", "alpha2", "empirical", "stderr", "theory", "zscore"],
        same_rows,
    )
    _write_csv(
        outdir / "cross_neuron.csv",
        ["layer", "alpha1", "alpha2", "empirical", "stderr", "zscore"],
        cross_rows,
    )
    worst = max(
        float(np.max(np.abs(scores["same"]))), float(np.max(np.abs(scores["cross"])))
    )
    print(f"max |z| = {worst:.3f} over {config.depth} layers, {m} inputs")
    if worst > _Z_LIMIT:
        print(f"FAIL: |z| exceeds {_Z_LIMIT}", file=sys.stderr)
        return _EXIT_ZSCORE
    return _EXIT_OK


def _simulate_four_point(config, dataset, args, outdir: Path) -> int:
    small, large = four_point_scaling(
        config, doubled_width_config(config), dataset, args.samples, args.workers
    )
    doc = {
        "manifest_file": "manifest.json",
        "config": config_to_dict(config),
        "samples": args.samples,
        "small": small.to_dict(),
        "large": large.to_dict(),
    }
    _write_json(outdir / "four_point.json", doc)
    _write_csv(
        outdir / "four_point.csv",
        ["width", "connected_correlator", "stderr", "samples"],
        [
            (r.width, r.connected_correlator, r.stderr, r.sample_count)
            for r in (small, large)
        ],
    )
    print(
        f"connected 4-point: width {small.width}: {small.connected_correlator:.3e} "
        f"+- {small.stderr:.1e}; width {large.width}: {large.connected_correlator:.3e} "
        f"+- {large.stderr:.1e}"
    )
    return _EXIT_OK


def _cmd_simulate(args) -> int:
    config, dataset, mode = load_simulation_file(args.config, args.seed)
    outdir = Path(args.out)
    outdir.mkdir(parents=True, exist_ok=True)
    parameters = {
        "config": config_to_dict(config),
        "dataset_rows": dataset.size,
        "samples": args.samples,
        "mode": mode,
    }
    if mode == "four_point":
        outputs = ["four_point.json", "four_point.csv"]
    else:
        outputs = ["simulation_report.json", "covariance.csv", "cross_neuron.csv"]
    _write_manifest(outdir, "simulate", parameters, args.seed, outputs)
    if mode == "four_point":
        return _simulate_four_point(config, dataset, args, outdir)
    return _simulate_covariance(config, dataset, args, outdir)


def _cmd_conjecture(args) -> int:
    outdir = Path(args.out)
    outdir.mkdir(parents=True, exist_ok=True)
    if args.mode == "synthetic":
        report = estimate_rarity_synthetic(args.n, args.m, args.trials, args.seed, args.workers)
    else:
        config = conjecture_config(args.n, args.seed, args.depth_constant, args.activation)
        dataset = generate_sign_dataset(args.n, args.m, args.seed)
        report = estimate_rarity(config, dataset, args.trials, args.workers)
    doc = report.to_dict()
    doc["manifest_file"] = "manifest.json"
    _write_manifest(
        outdir,
        "conjecture",
        {
            "n": args.n,
            "m": args.m,
            "trials": args.trials,
            "depth_constant": args.depth_constant,
            "mode": args.mode,
            "activation": args.activation,
        },
        args.seed,
        ["rarity_report.json"],
    )
    _write_json(outdir / "rarity_report.json", doc)
    print(report.summary())
    return _EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="covflow",
        description="Covariance flow of wide random networks: decomposition, "
        "fixed points, and Monte Carlo verification.",
    )
    parser.add_argument("--version", action="version", version=f"covflow {__version__}")
    sub = parser.add_subparsers(dest="subcommand", required=True)

    def add_activation(p):
        group = p.add_mutually_exclusive_group(required=True)
        group.add_argument("--activation", help="registered activation id")
        group.add_argument("--spec-file", help="JSON file holding an activation spec")

    p = sub.add_parser("decompose", help="Hermite series, moments, and classification")
    add_activation(p)
    p.add_argument("--degree", type=int, default=30, help="truncation degree (default 30)")
    p.add_argument("--out", default=".", help="output directory")
    p.set_defaults(fn=_cmd_decompose)

    p = sub.add_parser("flow", help="iterate the covariance map and classify its fixed point")
    add_activation(p)
    p.add_argument("--k0", type=float, required=True, help="initial covariance in (-1, 1)")
    p.add_argument("--depth", type=int, default=200, help="number of map applications")
    p.add_argument("--degree", type=int, default=30, help="series truncation degree")
    p.add_argument("--out", default=".", help="output directory")
    p.set_defaults(fn=_cmd_flow)

    p = sub.add_parser("figure1", help="tabulate the map for relu, tanh4, relu-shifted")
    p.add_argument("--grid-size", type=int, default=201, help="points on [-1, 1]")
    p.add_argument("--out", default=".", help="output directory")
    p.set_defaults(fn=_cmd_figure1)

    p = sub.add_parser("simulate", help="Monte Carlo covariance verification")
    p.add_argument("--config", required=True, help="JSON config file (network + dataset)")
    p.add_argument("--samples", type=int, required=True, help="number of weight draws")
    p.add_argument("--seed", type=int, required=True, help="base seed (64-bit)")
    p.add_argument("--workers", type=int, default=None, help="worker processes (default COVFLOW_WORKERS or 1)")
    p.add_argument("--out", default=".", help="output directory")
    p.set_defaults(fn=_cmd_simulate)

    p = sub.add_parser("conjecture", help="all-negative rarity harness")
    p.add_argument("--n", type=int, required=True, help="input/output dimension")
    p.add_argument("--m", type=int, required=True, help="dataset rows")
    p.add_argument("--trials", type=int, required=True, help="network draws")
    p.add_argument("--seed", type=int, required=True, help="base seed (64-bit)")
    p.add_argument("--depth-constant", type=float, default=1.0, help="depth = ceil(c*log2(n))")
    p.add_argument("--mode", choices=("network", "synthetic"), default="network")
    p.add_argument("--activation", default="tanh", help="registered activation id")
    p.add_argument("--workers", type=int, default=None, help="worker processes")
    p.add_argument("--out", default=".", help="output directory")
    p.set_defaults(fn=_cmd_conjecture)
    return parser


def main(argv: list[str] | None = None) -> int:
    args = build_parser().parse_args(argv)
    try:
        return args.fn(args)
    except InconclusiveError as exc:
        print(f"inconclusive: {exc}", file=sys.stderr)
        return _EXIT_INCONCLUSIVE
    except (ValueError, OSError, KeyError, json.JSONDecodeError, FloatingPointError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return _EXIT_VALIDATION


if __name__ == "__main__":
    sys.exit(main())
