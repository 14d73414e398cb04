"""Command-line front end: ``simulate``, ``scan`` and ``analyze``.

Exit codes: 0 success, 2 invalid configuration or input, 3 a run had no
pairwise interference to normalize by.
"""

from __future__ import annotations

import argparse
import io
import json
import logging
import os
import sys
import tempfile

import numpy as np

from tripleslit.config import ConfigError, PRESETS, Scenario, load_scenario, parse_assignment
from tripleslit.hierarchy import DegenerateRegimeError, kappa
from tripleslit.protocol import (
    IngestError,
    anchor_position,
    ingest_octets,
    records_to_rows,
    run_experiment,
    write_octets_csv,
)
from tripleslit.stats import summarize

log = logging.getLogger("tripleslit")

EXIT_CONFIG = 2
EXIT_DEGENERATE = 3


def _atomic_write(path: str, text: str) -> None:
    directory = os.path.dirname(os.path.abspath(path))
    os.makedirs(directory, exist_ok=True)
    fd, tmp = tempfile.mkstemp(dir=directory, prefix=".tmp-")
    try:
        with os.fdopen(fd, "w", newline="") as fh:
            fh.write(text)
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise


def _provenance(scenario: Scenario) -> list[str]:
    return [f"seed={scenario.seed}", f"config={scenario.resolved_json()}"]


def _parse_positions(text: str) -> list[float]:
    parts = [p for p in text.split(",") if p.strip()]
    try:
        return [float(p) for p in parts]
    except ValueError:
        raise ConfigError("positions", f"cannot parse {text!r} as comma-separated meters") from None


def _scenario_from_args(args) -> Scenario:
    overrides = [parse_assignment(s) for s in args.set or []]
    if args.seed is not None:
        overrides.append({"plan": {"master_seed": args.seed}})
    if args.positions is not None:
        overrides.append({"plan": {"positions": _parse_positions(args.positions)}})
    if args.out is not None:
        overrides.append({"output": {"dir": args.out}})
    if args.error_method is not None:
        overrides.append({"error_method": args.error_method})
    if args.config is None and args.preset is None:
        raise ConfigError("config", "give --config PATH or --preset NAME")
    return load_scenario(args.config, args.preset, overrides)


def _kappa_csv(rows, comments) -> str:
    buf = io.StringIO()
    for line in comments:
        buf.write(f"# {line}\n")
    buf.write("run,position_m,kappa\n")
    for run, pos, k in rows:
        pos_text = "" if pos is None else repr(float(pos))
        buf.write(f"{run},{pos_text},{float(k)!r}\n")
    return buf.getvalue()


def cmd_simulate(args) -> int:
    sc = _scenario_from_args(args)
    positions = list(sc.plan.positions)
    if len(positions) > 1:
        raise ConfigError("plan.positions", "simulate takes one position; use 'scan' for several")
    position = positions[0] if positions else anchor_position(sc.geometry, sc.law)
    series = run_experiment(sc.geometry, sc.law, sc.instruments, sc.plan, position)

    out = sc.output_dir
    comments = _provenance(sc)
    _atomic_write(os.path.join(out, "kappa_series.csv"),
                  _kappa_csv([(i, position, k) for i, k in enumerate(series.kappa_values)], comments))
    buf = io.StringIO()
    write_octets_csv(buf, records_to_rows(series.records), comments)
    _atomic_write(os.path.join(out, "octets.csv"), buf.getvalue())
    summary = _summary_json(series.kappa_values, sc.error_method, position)
    summary.update(seed=sc.seed, config=sc.resolved)
    _atomic_write(os.path.join(out, "summary.json"), json.dumps(summary, indent=2) + "\n")
    print(f"{sc.name}: x={position:.6g} m  mean kappa={summary['mean']:.6g} "
          f"+/- {summary['std_error']:.3g} ({sc.error_method}, {summary['n_runs']} runs) -> {out}")
    return 0


def _summary_json(values, method: str, position) -> dict:
    if len(values) >= 2:
        summary, _ = summarize(values, method)
        return summary.to_json(position)
    return {"position_m": position, "mean": float(values[0]), "std": 0.0, "std_error": 0.0,
            "method": method, "n_runs": len(values)}


def cmd_scan(args) -> int:
    sc = _scenario_from_args(args)
    positions = list(sc.plan.positions)
    if args.positions is not None and not positions:
        raise ConfigError("positions", "empty position list")
    if not positions:
        anchor = anchor_position(sc.geometry, sc.law)
        span = 3 * sc.geometry.fringe_period
        positions = list(anchor + np.linspace(-span, span, 11))

    rows, summaries = [], []
    for i, x in enumerate(positions):
        series = run_experiment(sc.geometry, sc.law, sc.instruments, sc.plan, x, position_index=i)
        s = _summary_json(series.kappa_values, sc.error_method, x)
        summaries.append(s)
        rows.append((x, s["mean"], s["std_error"]))
        log.info("x=%g m mean kappa=%g", x, s["mean"])

    out = sc.output_dir
    buf = io.StringIO()
    for line in _provenance(sc):
        buf.write(f"# {line}\n")
    buf.write("position_m,mean,std_error\n")
    for x, mean, se in rows:
        buf.write(f"{float(x)!r},{float(mean)!r},{float(se)!r}\n")
    _atomic_write(os.path.join(out, "scan.csv"), buf.getvalue())
    doc = {"seed": sc.seed, "config": sc.resolved, "summaries": summaries}
    _atomic_write(os.path.join(out, "summary.json"), json.dumps(doc, indent=2) + "\n")
    print(f"{sc.name}: scanned {len(rows)} positions, max |mean kappa|="
          f"{max(abs(r[1]) for r in rows):.3g} -> {out}")
    return 0


def cmd_analyze(args) -> int:
    method = args.error_method or "allan"
    try:
        runs = ingest_octets(args.csv_path)
    except FileNotFoundError:
        raise ConfigError("csv_path", f"file not found: {args.csv_path}") from None
    if not runs:
        raise IngestError("no measurement rows")
    values = [(run, kappa(octet)) for run, octet in runs]
    out = args.out or "out"
    comments = [f"source={os.path.abspath(args.csv_path)}"]
    _atomic_write(os.path.join(out, "kappa_series.csv"),
                  _kappa_csv([(r, None, k) for r, k in values], comments))
    summary = _summary_json([k for _, k in values], method, None)
    summary["source"] = os.path.abspath(args.csv_path)
    _atomic_write(os.path.join(out, "summary.json"), json.dumps(summary, indent=2) + "\n")
    print(f"analyzed {len(values)} runs: mean kappa={summary['mean']:.6g} "
          f"+/- {summary['std_error']:.3g} ({method}) -> {out}")
    return 0


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="tripleslit", description=__doc__.splitlines()[0])
    parser.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", required=True)

    def scenario_flags(p):
        p.add_argument("--config", metavar="PATH", help="scenario TOML file")
        p.add_argument("--preset", choices=sorted(PRESETS), help="built-in scenario")
        p.add_argument("--seed", type=int, help="master seed")
        p.add_argument("--positions", metavar="A,B,C", help="detector positions in meters")
        p.add_argument("--out", metavar="DIR", help="output directory")
        p.add_argument("--error-method", choices=("standard", "allan"))
        p.add_argument("--set", action="append", metavar="KEY=VALUE",
                       help="override any config key, e.g. plan.n_runs=20")

    p = sub.add_parser("simulate", help="one session at one detector position")
    scenario_flags(p)
    p.set_defaults(func=cmd_simulate)

    p = sub.add_parser("scan", help="independent sessions across detector positions")
    scenario_flags(p)
    p.set_defaults(func=cmd_scan)

    p = sub.add_parser("analyze", help="kappa from a measured octet CSV")
    p.add_argument("csv_path")
    p.add_argument("--out", metavar="DIR")
    p.add_argument("--error-method", choices=("standard", "allan"))
    p.set_defaults(func=cmd_analyze)
    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(message)s")
    try:
        return args.func(args)
    except (ConfigError, IngestError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except DegenerateRegimeError as exc:
        print(f"error: degenerate regime: {exc}", file=sys.stderr)
        return EXIT_DEGENERATE
    except ValueError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_CONFIG


if __name__ == "__main__":
    sys.exit(main())
