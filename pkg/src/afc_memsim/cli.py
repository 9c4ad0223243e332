"""Command line entry point: ``afc-memsim <experiment> --config <path|preset>``.

Exit codes: 0 success, 1 configuration error, 2 runtime error.
"""
from __future__ import annotations

import argparse
import csv
import io
import json
import logging
import sys
from pathlib import Path

import numpy as np

from . import __version__
from .config import ConfigError, ExperimentConfig, load
from .runner import EXPERIMENTS, RunReport
from .tomo import chi_table, write_chi_csv

log = logging.getLogger("afc_memsim")


def _parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="afc-memsim", description=__doc__.splitlines()[0])
    p.add_argument("--version", action="version", version=__version__)
    sub = p.add_subparsers(dest="command", required=True)
    for name in EXPERIMENTS:
        s = sub.add_parser(name)
        s.add_argument("--config", help="config file or preset name (paper_200ns, paper_500ns, ideal)")
        s.add_argument("--seed", type=int, help="override the config seed")
        s.add_argument("--out", type=Path, help="directory for CSV/JSON output files")
        s.add_argument("--format", choices=("csv", "json"), help="stdout format (default from config)")
        s.add_argument("--trials", type=int, help="override tomography.trials_per_setting")
        s.add_argument("-v", "--verbose", action="store_true")
    return p


def _apply_overrides(cfg: ExperimentConfig, args) -> ExperimentConfig:
    changes = {}
    if args.seed is not None:
        if not 0 <= args.seed < 2**64:
            raise ConfigError("--seed", "must be an unsigned 64-bit integer")
        changes["seed"] = args.seed
    if args.trials is not None:
        changes["tomography"] = {"trials_per_setting": args.trials}
    if args.format is not None:
        changes["output"] = {"format": args.format}
    if args.out is not None:
        changes.setdefault("output", {})["dir"] = str(args.out)
    return cfg.replace(**changes) if changes else cfg


def _csv_text(header, rows) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(header)
    for r in rows:
        w.writerow([repr(float(x)) if isinstance(x, (float, np.floating)) else x for x in r])
    return buf.getvalue()


def _primary_csv(report: RunReport) -> str:
    if report.experiment == "echo":
        t = report.tables["echo_trace"]
        return _csv_text(["time_ns", "counts_per_bin"], zip(t["time_ns"], t["counts_per_bin"]))
    if report.experiment == "efficiency":
        t = report.tables["efficiency_curve"]
        return _csv_text(["storage_time_ns", "efficiency"], zip(t["storage_time_ns"], t["efficiency"]))
    if report.experiment == "qpt":
        return _csv_text(["row", "col", "re", "im"], chi_table(report.tables["chi_mle"]))
    items = [(k, v) for k, v in report.results.items() if not isinstance(v, (dict, list))]
    return _csv_text(["key", "value"], items)


def report_json(report: RunReport) -> str:
    return json.dumps(report.as_dict(), indent=2, sort_keys=True) + "\n"


def write_outputs(report: RunReport, out: Path) -> list[Path]:
    out.mkdir(parents=True, exist_ok=True)
    written = []
    path = out / f"{report.experiment}_report.json"
    path.write_text(report_json(report))
    written.append(path)
    if report.experiment == "echo":
        path = out / "echo_trace.csv"
    elif report.experiment == "efficiency":
        path = out / "efficiency_curve.csv"
    elif report.experiment == "qpt":
        write_chi_csv(report.tables["chi_mle"], out / "chi_mle.csv")
        write_chi_csv(report.tables["chi_linear"], out / "chi_linear.csv")
        report.artifacts["dataset"].to_csv(out / "tomography_counts.csv")
        written += [out / "chi_mle.csv", out / "chi_linear.csv", out / "tomography_counts.csv"]
        return written
    else:
        path = out / f"{report.experiment}.csv"
    path.write_text(_primary_csv(report))
    written.append(path)
    return written


def main(argv=None) -> int:
    args = _parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(levelname)s %(message)s")
    try:
        if not args.config:
            raise ConfigError("--config", "required (a config file path or preset name)")
        cfg = _apply_overrides(load(args.config), args)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return 1
    try:
        report = EXPERIMENTS[args.command](cfg)
        if args.out is not None:
            for path in write_outputs(report, args.out):
                log.info("wrote %s", path)
        if cfg.output.format == "json":
            sys.stdout.write(report_json(report))
        else:
            sys.stdout.write(_primary_csv(report))
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return 1
    except Exception as exc:  # noqa: BLE001 - surfaced as exit code 2
        log.debug("runtime failure", exc_info=True)
        print(f"error: {exc}", file=sys.stderr)
        return 2
    return 0


if __name__ == "__main__":
    sys.exit(main())
