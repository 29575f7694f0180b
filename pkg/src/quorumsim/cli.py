"""Command-line interface.

Subcommands: ``run``, ``sweep``, ``bounds``, ``kde``, ``report``, and
``serve``. The CLI is a thin layer over the core package; ``serve``
exposes the same operations over HTTP. Exit codes: 0 on success, 2 on
configuration errors (including bad usage), 3 on I/O errors.
"""

from __future__ import annotations

import argparse
import sys
from pathlib import Path

import numpy as np

from . import analysis, harness
from .config import ConfigError, config_hash, format_float, load_config
from .harness import dump_json

EXIT_OK = 0
EXIT_CONFIG = 2
EXIT_IO = 3


def _build_parser():
    parser = argparse.ArgumentParser(
        prog="quorumsim",
        description="Coupled-agent stochastic gradient simulator and bound checker",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    def add_common(p):
        p.add_argument("--seed", type=int, default=None, help="override the master seed")
        p.add_argument("--out", type=Path, default=Path("out"), help="output root directory")
        p.add_argument("--workers", type=int, default=1, help="worker pool size")
        p.add_argument("--per-run-csv", action="store_true",
                       help="also write one diagnostics CSV per run")
        p.add_argument("--full-scale", action="store_true",
                       help="run at full size (1000 agents, 250 runs) instead of "
                            "the config's desk-scale sizes")

    p_run = sub.add_parser("run", help="execute one ensemble")
    p_run.add_argument("config", type=Path)
    add_common(p_run)
    p_run.add_argument("--name", default=None, help="output subdirectory name")

    p_sweep = sub.add_parser("sweep", help="run an ensemble per axis value")
    p_sweep.add_argument("config", type=Path)
    p_sweep.add_argument("--axis", choices=harness.SWEEP_AXES, required=True)
    p_sweep.add_argument("--values", required=True,
                         help="comma-separated axis values, e.g. 0,0.4,0.8")
    add_common(p_sweep)
    p_sweep.add_argument("--name", default=None)

    p_bounds = sub.add_parser("bounds", help="print the bound table for a config")
    p_bounds.add_argument("config", type=Path)
    for name in ("c", "q", "lambda-bar", "lambda-strong", "eta"):
        p_bounds.add_argument(f"--{name}", type=float, default=None,
                              help=f"override the {name.replace('-', '_')} constant")
    p_bounds.add_argument("--json", action="store_true", help="emit JSON instead of a table")

    p_kde = sub.add_parser("kde", help="kernel density of a sample CSV")
    p_kde.add_argument("samples", type=Path)
    p_kde.add_argument("--column", default=None,
                       help="column name when the input has a header")
    p_kde.add_argument("--bandwidth", type=float, default=None)
    p_kde.add_argument("--grid-points", type=int, default=512)
    p_kde.add_argument("--out", type=Path, default=None,
                       help="output CSV (default: stdout)")

    p_report = sub.add_parser("report", help="pair ensemble statistics with bounds")
    p_report.add_argument("ensemble_dir", type=Path)
    p_report.add_argument("--burn-in", type=float, default=0.2)
    for name in ("c", "q", "lambda-bar", "lambda-strong"):
        p_report.add_argument(f"--{name}", type=float, default=None)

    p_serve = sub.add_parser("serve", help="start the HTTP service")
    p_serve.add_argument("--host", default="127.0.0.1")
    p_serve.add_argument("--port", type=int, default=8000)
    return parser


def _overrides(args):
    mapping = {"c": "C", "q": "Q", "lambda_bar": "lambda_bar",
               "lambda_strong": "lambda_strong", "eta": "eta"}
    out = {}
    for attr, key in mapping.items():
        value = getattr(args, attr, None)
        if value is not None:
            out[key] = value
    return out


FULL_SCALE_AGENTS = 1000
FULL_SCALE_RUNS = 250


def _load(args):
    cfg = load_config(args.config)
    if getattr(args, "seed", None) is not None:
        cfg.master_seed = int(args.seed)
    if getattr(args, "full_scale", False):
        cfg.agents = FULL_SCALE_AGENTS
        cfg.runs = FULL_SCALE_RUNS
    cfg.validate()
    return cfg


def _cmd_run(args):
    cfg = _load(args)
    result = harness.run_ensemble(cfg, workers=args.workers)
    name = args.name or f"run_{config_hash(cfg)[:12]}"
    out = harness.write_ensemble(result, args.out / name, per_run_csv=args.per_run_csv)
    print(f"wrote {out} ({result.summary['runs']} runs, "
          f"{result.summary['diverged']} diverged)")
    return EXIT_OK


def _cmd_sweep(args):
    cfg = _load(args)
    try:
        values = [float(v) for v in args.values.split(",") if v.strip() != ""]
    except ValueError as exc:
        raise ConfigError(f"bad sweep values: {exc}") from None
    if not values:
        raise ConfigError("sweep needs at least one value")
    if args.axis == "p":
        values = [int(v) for v in values]
    results = harness.run_sweep(cfg, args.axis, values, workers=args.workers)
    name = args.name or f"sweep_{args.axis}_{config_hash(cfg)[:12]}"
    out = harness.write_sweep(results, args.out / name, per_run_csv=args.per_run_csv)
    print(f"wrote {out} ({len(values)} values)")
    return EXIT_OK


def _cmd_bounds(args):
    cfg = load_config(args.config)
    table = harness.bounds_table(cfg, overrides=_overrides(args))
    if args.json:
        print(dump_json(table))
        return EXIT_OK
    width = max(len(row["name"]) for row in table)
    for row in table:
        value = format_float(row["value"]) if row["value"] is not None else "-"
        detail = f"  [{row['detail']}]" if row.get("detail") else ""
        print(f"{row['name']:<{width}}  {value:>24}  {row['status']}{detail}")
    return EXIT_OK


def _read_samples(path: Path, column):
    text = path.read_text().strip().splitlines()
    if not text:
        raise ConfigError(f"no samples in {path}")
    header = text[0].split(",")
    has_header = any(not _is_float(cell) for cell in header)
    if has_header:
        names = [h.strip() for h in header]
        col = column or ("coord_0" if "coord_0" in names else names[-1])
        if col not in names:
            raise ConfigError(f"column {col!r} not in {names}")
        idx = names.index(col)
        rows = text[1:]
    else:
        idx = 0 if column is None else int(column)
        rows = text
    try:
        return np.array([float(line.split(",")[idx]) for line in rows if line.strip()])
    except (ValueError, IndexError) as exc:
        raise ConfigError(f"bad sample file {path}: {exc}") from None


def _is_float(cell):
    try:
        float(cell)
        return True
    except ValueError:
        return False


def _cmd_kde(args):
    samples = _read_samples(args.samples, args.column)
    estimate = analysis.kde(samples, bandwidth=args.bandwidth, grid_points=args.grid_points)
    if estimate.spike:
        print(f"all samples equal {format_float(estimate.spike_location)}; no density")
        return EXIT_OK
    lines = ["grid,density"]
    for g, d in zip(estimate.grid, estimate.density):
        lines.append(f"{format_float(float(g))},{format_float(float(d))}")
    text = "\n".join(lines) + "\n"
    if args.out is None:
        sys.stdout.write(text)
    else:
        args.out.write_text(text)
        print(f"wrote {args.out} (bandwidth {format_float(estimate.bandwidth)})")
    return EXIT_OK


def _cmd_report(args):
    import json

    directory = args.ensemble_dir
    summary_path = directory / "summary.json"
    config_path = directory / "config.toml"
    if not summary_path.is_file() or not config_path.is_file():
        raise FileNotFoundError(f"{directory} is not an ensemble output directory")
    summary = json.loads(summary_path.read_text())
    cfg = load_config(config_path)
    report = build_report(cfg, summary, burn_in=args.burn_in, overrides=_overrides(args))
    text = dump_json(report) + "\n"
    (directory / "report.json").write_text(text)
    sys.stdout.write(text)
    return EXIT_OK


def build_report(cfg, summary, burn_in=0.2, overrides=None):
    """Bound-versus-experiment rows from a written ensemble summary."""
    dm = summary.get("diagnostics_mean")
    if not dm:
        raise ConfigError("summary has no diagnostics (all runs diverged?)")
    diag = analysis.TrajectoryDiagnostics(
        steps=np.asarray(dm["step"]),
        sync_measure=np.asarray(dm["sync_measure"], dtype=float),
        eps_norm=np.asarray(dm["eps_norm"], dtype=float),
        loss_quorum=np.asarray(dm["loss_quorum"], dtype=float),
        loss_mean_agents=np.asarray(dm["loss_mean_agents"], dtype=float),
    )
    inputs = harness.bound_inputs_for(cfg, overrides=overrides)
    com_distances = None
    if cfg.objective_kind == "quadratic" and summary.get("final_com"):
        finals = np.asarray(summary["final_com"], dtype=float)
        com_distances = np.linalg.norm(finals, axis=1)  # minimum at the origin
    entries = analysis.bound_report(
        [diag], inputs, burn_in=burn_in, com_distances=com_distances
    )
    return {
        "schema_version": summary.get("schema_version"),
        "config_hash": summary.get("config_hash"),
        "burn_in": burn_in,
        "entries": entries,
    }


def _cmd_serve(args):
    import uvicorn

    from .service.app import app

    uvicorn.run(app, host=args.host, port=args.port)
    return EXIT_OK


_COMMANDS = {
    "run": _cmd_run,
    "sweep": _cmd_sweep,
    "bounds": _cmd_bounds,
    "kde": _cmd_kde,
    "report": _cmd_report,
    "serve": _cmd_serve,
}


def cli_main(argv=None) -> int:
    parser = _build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return EXIT_CONFIG if exc.code not in (0, None) else EXIT_OK
    try:
        return _COMMANDS[args.command](args)
    except ConfigError as exc:
        print(f"configuration error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except (OSError, FileNotFoundError) as exc:
        print(f"i/o error: {exc}", file=sys.stderr)
        return EXIT_IO


def main():
    raise SystemExit(cli_main())


if __name__ == "__main__":
    main()
