"""Command-line entry point: ``cbmp run | aggregate | plot | list-settings``.

Exit codes are 0 on success, 1 on runtime failure and 2 on usage or
configuration errors. ``CBMP_OUT_DIR`` sets the default output directory.
"""

from __future__ import annotations

import argparse
import csv
import json
import os
import sys
from html import escape
from pathlib import Path

import numpy as np

from cbmp import __version__
from cbmp.environments import SETTINGS
from cbmp.harness import (
    AGGREGATE_COLUMNS,
    TRIAL_COLUMNS,
    AggregateResult,
    ConfigError,
    ExperimentConfig,
    aggregate_csv_name,
    read_aggregate_csv,
    run_experiment,
    write_csv,
)

OUT_DIR_ENV = "CBMP_OUT_DIR"

PALETTE = ["#1f77b4", "#d62728", "#2ca02c", "#9467bd", "#ff7f0e", "#8c564b"]


class UsageError(Exception):
    """Bad input from the user; reported with exit code 2."""


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        raise UsageError(message)


def _default_out() -> str | None:
    return os.environ.get(OUT_DIR_ENV)


def cmd_run(args) -> int:
    try:
        text = Path(args.config).read_text()
    except OSError as exc:
        raise UsageError(f"cannot read config {args.config}: {exc.strerror}") from None
    try:
        config = ExperimentConfig.from_json(text)
        overrides = {k: v for k, v in (("trials", args.trials), ("seed", args.seed)) if v is not None}
        if overrides:
            config = ExperimentConfig.from_dict({**config.to_dict(), **overrides})
    except ConfigError as exc:
        raise UsageError(f"config error: {exc}") from None
    out = args.out or _default_out()
    if out is None:
        raise UsageError(f"--out is required when {OUT_DIR_ENV} is unset")
    out = Path(out)
    result = run_experiment(config, out, workers=args.workers)
    manifest = {"version": __version__, "config": config.to_dict(),
                "aggregate": aggregate_csv_name(config),
                "failed_trials": [i for i, _ in result.failed]}
    (out / "manifest.json").write_text(json.dumps(manifest, indent=2, sort_keys=True) + "\n")
    print(f"{config.setting} {config.algorithm} m={config.unmatched_size}: "
          f"terminal mean {result.mean[-1]:.3f} over {result.n_trials} trials -> {out}")
    return 0


def _read_trials(path: Path) -> list[dict]:
    with open(path, newline="") as fh:
        reader = csv.DictReader(fh)
        if reader.fieldnames != TRIAL_COLUMNS:
            raise UsageError(f"{path}: expected columns {TRIAL_COLUMNS}, got {reader.fieldnames}")
        rows = list(reader)
    if not rows:
        raise UsageError(f"{path}: no data rows")
    return rows


def cmd_aggregate(args) -> int:
    """Rebuild an aggregate CSV from per-trial CSVs of one setting and algorithm."""
    curves, keys = [], set()
    for p in args.inputs:
        rows = _read_trials(Path(p))
        keys.add((rows[0]["setting"], rows[0]["algorithm"]))
        curves.append([float(r["cumulative"]) for r in rows])
    if len(keys) != 1:
        raise UsageError(f"inputs mix settings/algorithms: {sorted(keys)}")
    if len({len(c) for c in curves}) != 1:
        raise UsageError("inputs cover different numbers of rounds")
    cum = np.array(curves)
    setting, algorithm = keys.pop()
    result = AggregateResult(setting, algorithm, cum.mean(axis=0), np.percentile(cum, 5, axis=0),
                             np.percentile(cum, 95, axis=0), cum[:, -1])
    write_csv(Path(args.out), AGGREGATE_COLUMNS, result.rows())
    print(f"aggregated {len(curves)} trials -> {args.out}")
    return 0


def render_svg(results: list[AggregateResult], width: int = 720, height: int = 440) -> str:
    """Mean cumulative reward with a shaded 5-95% band per result."""
    left, right, top, bottom = 70, 190, 30, 50
    pw, ph = width - left - right, height - top - bottom
    rounds = max(r.mean.size for r in results)
    lo = min(float(np.min(r.q05)) for r in results)
    hi = max(float(np.max(r.q95)) for r in results)
    if hi == lo:
        lo, hi = lo - 1.0, hi + 1.0

    def sx(t):
        return left + pw * (t - 1) / max(rounds - 1, 1)

    def sy(v):
        return top + ph * (hi - v) / (hi - lo)

    def path(xs, ys):
        return " ".join(f"{sx(x):.2f},{sy(y):.2f}" for x, y in zip(xs, ys))

    out = [f'<svg xmlns="http://www.w3.org/2000/svg" width="{width}" height="{height}" '
           f'viewBox="0 0 {width} {height}" font-family="sans-serif" font-size="12">',
           f'<rect x="{left}" y="{top}" width="{pw}" height="{ph}" fill="none" stroke="#333"/>']
    for v in np.linspace(lo, hi, 5):
        out.append(f'<text x="{left - 6}" y="{sy(v) + 4:.2f}" text-anchor="end">{v:.1f}</text>')
    for t in np.unique(np.linspace(1, rounds, 5).round().astype(int)):
        out.append(f'<text x="{sx(t):.2f}" y="{top + ph + 16}" text-anchor="middle">{t}</text>')
    out.append(f'<text x="{left + pw / 2}" y="{height - 10}" text-anchor="middle">round</text>')
    out.append(f'<text x="16" y="{top + ph / 2}" text-anchor="middle" '
               f'transform="rotate(-90 16 {top + ph / 2})">cumulative reward</text>')
    for i, res in enumerate(results):
        color = PALETTE[i % len(PALETTE)]
        t = np.arange(1, res.mean.size + 1)
        band = path(t, res.q95) + " " + path(t[::-1], res.q05[::-1])
        label = escape(f"{res.algorithm} ({res.setting})")
        out.append(f'<polygon class="band" points="{band}" fill="{color}" fill-opacity="0.2" stroke="none"/>')
        out.append(f'<polyline class="mean" points="{path(t, res.mean)}" fill="none" '
                   f'stroke="{color}" stroke-width="2"/>')
        ly = top + 10 + 20 * i
        out.append(f'<g class="legend"><line x1="{left + pw + 12}" y1="{ly}" x2="{left + pw + 36}" '
                   f'y2="{ly}" stroke="{color}" stroke-width="2"/>'
                   f'<text x="{left + pw + 42}" y="{ly + 4}">{label}</text></g>')
    out.append("</svg>")
    return "\n".join(out) + "\n"


def cmd_plot(args) -> int:
    results = []
    for p in args.inputs:
        try:
            results.append(read_aggregate_csv(p))
        except OSError as exc:
            raise UsageError(f"cannot read {p}: {exc.strerror}") from None
        except (ValueError, KeyError) as exc:
            raise UsageError(str(exc)) from None
    Path(args.out).write_text(render_svg(results))
    print(f"wrote {args.out}")
    return 0


def cmd_list_settings(args) -> int:
    rows = [spec.describe() for spec in SETTINGS.values()]
    if args.json:
        print(json.dumps(rows, indent=2))
        return 0
    print(f"{'setting':<8}{'d_r':>4}  {'action grid':<22}{'context grid':<22}{'r noise':>8}{'y noise':>8}")
    for row in rows:
        grid = "[{}, {}] x {}".format(*row["action_grid"])
        cgrid = "[{}, {}] x {}".format(*row["context_grid"])
        print(f"{row['setting']:<8}{row['d_r']:>4}  {grid:<22}{cgrid:<22}"
              f"{row['intermediate_noise']:>8}{row['ultimate_noise']:>8}")
    return 0


def build_parser() -> argparse.ArgumentParser:
    parser = _Parser(prog="cbmp", description="CBMP-UCB and CME-UCB contextual bandit experiments")
    parser.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    sub = parser.add_subparsers(dest="command", required=True, parser_class=_Parser)

    run = sub.add_parser("run", help="run an experiment from a JSON config")
    run.add_argument("--config", required=True)
    run.add_argument("--out", default=None, help=f"output directory (default ${OUT_DIR_ENV})")
    run.add_argument("--trials", type=int, default=None)
    run.add_argument("--seed", type=int, default=None)
    run.add_argument("--workers", type=int, default=1)
    run.set_defaults(func=cmd_run)

    agg = sub.add_parser("aggregate", help="aggregate per-trial CSVs")
    agg.add_argument("--inputs", nargs="+", required=True)
    agg.add_argument("--out", required=True)
    agg.set_defaults(func=cmd_aggregate)

    plot = sub.add_parser("plot", help="SVG chart of aggregate CSVs")
    plot.add_argument("--inputs", nargs="+", required=True)
    plot.add_argument("--out", required=True)
    plot.set_defaults(func=cmd_plot)

    ls = sub.add_parser("list-settings", help="describe settings A-D")
    ls.add_argument("--json", action="store_true", help="machine-readable output")
    ls.set_defaults(func=cmd_list_settings)
    return parser


def main(argv=None) -> int:
    try:
        args = build_parser().parse_args(argv)
        return args.func(args)
    except UsageError as exc:
        print(f"cbmp: error: {exc}", file=sys.stderr)
        return 2
    except Exception as exc:  # runtime failure
        print(f"cbmp: failed: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
