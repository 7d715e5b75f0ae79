"""Command line entry point: ``fedchain run | sweep | verify``.

Exit status is 0 on success, 1 for invalid input (config, arguments, or a
digest that does not match) and 2 for runtime failures.
"""
from __future__ import annotations

import argparse
import csv
import logging
import sys
from concurrent.futures import ProcessPoolExecutor
from dataclasses import replace
from pathlib import Path

from . import config as config_mod
from .cas import Cid
from .config import ConfigError
from .protocol import run_experiment
from .report import write_reports
from .sealbox import digest

EXIT_OK = 0
EXIT_INVALID = 1
EXIT_RUNTIME = 2

SWEEPABLE = ("n_collaborators", "failures_count")
SUMMARY_COLUMNS = [
    "vary", "value", "method", "final_accuracy", "final_macro_f1", "final_weighted_f1",
    "centralized_accuracy", "min_submitters", "total_gas",
]

log = logging.getLogger("fedchain")


class UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        raise UsageError(message)


def _build_parser():
    p = _Parser(prog="fedchain", description=__doc__.splitlines()[0])
    p.add_argument("-v", "--verbose", action="store_true")
    sub = p.add_subparsers(dest="command", required=True, parser_class=_Parser)

    run = sub.add_parser("run", help="run one experiment and write its reports")
    run.add_argument("--config", help="YAML config (default: bundled default.yaml)")
    run.add_argument("--out", required=True, help="output directory")

    sweep = sub.add_parser("sweep", help="run one experiment per value of a parameter")
    sweep.add_argument("--config", help="YAML config (default: bundled default.yaml)")
    sweep.add_argument("--vary", required=True, choices=SWEEPABLE)
    sweep.add_argument("--values", required=True, help="comma-separated integers")
    sweep.add_argument("--methods", default="fedavg,fedprox",
                       help="comma-separated aggregation methods (default: both)")
    sweep.add_argument("--jobs", type=int, default=1, help="parallel runs")
    sweep.add_argument("--out", required=True)

    verify = sub.add_parser("verify", help="check a file against a hex digest")
    verify.add_argument("--weights", required=True)
    verify.add_argument("--digest", required=True)

    sub.add_parser("default-config", help="print the bundled default config")
    return p


def _load_config(path):
    if path is None:
        text = config_mod.default_config_text()
        return config_mod.loads(text), text
    return config_mod.load(path)


def _run_one(cfg, out_dir, config_text):
    out_dir = Path(out_dir)
    persist = out_dir / "cas" if cfg.cas.persist else None
    art = run_experiment(cfg, persist_dir=persist)
    return write_reports(art, out_dir, config_text)


def cmd_run(args):
    cfg, text = _load_config(args.config)
    report = _run_one(cfg, args.out, text)
    final = report["final"]
    print(f"wrote {args.out}: final accuracy {final['accuracy']:.4f}, "
          f"weighted F1 {final['weighted_f1']:.4f}, total gas {report['gas']['total_gas']}")
    return EXIT_OK


def _parse_values(text):
    items = [v.strip() for v in text.split(",") if v.strip()]
    if not items:
        raise ConfigError("values", "empty value list")
    try:
        return [int(v) for v in items]
    except ValueError:
        raise ConfigError("values", f"expected integers, got {text!r}") from None


def sweep_configs(base, vary, values, methods):
    """Yield ``(value, method, config)`` for every sweep point, validated up front."""
    points = []
    for value in values:
        for method in methods:
            if vary == "n_collaborators":
                cfg = replace(base, n_collaborators=value, method=method)
            else:
                if value < 0:
                    raise ConfigError("values", "failure counts must be non-negative")
                cfg = replace(base, method=method).with_failures(value, 1)
            try:
                config_mod.validate(cfg)
            except ConfigError as exc:
                raise ConfigError(f"values[{value}].{exc.field}", str(exc).split(": ", 1)[-1]) from None
            points.append((value, method, cfg))
    return points


def _sweep_point(args):
    value, method, cfg, out_dir = args
    text = config_mod.dumps(cfg)
    report = _run_one(cfg, out_dir, text)
    sizes = [len(r["submitters"]) for r in report["rounds"]]
    central = report["centralized"]["accuracy"] if report["centralized"] else ""
    return [value, method, report["final"]["accuracy"], report["final"]["macro_f1"],
            report["final"]["weighted_f1"], central, min(sizes), report["gas"]["total_gas"]]


def cmd_sweep(args):
    base, _ = _load_config(args.config)
    values = _parse_values(args.values)
    methods = [m.strip() for m in args.methods.split(",") if m.strip()]
    if not methods:
        raise ConfigError("methods", "empty method list")
    out = Path(args.out)
    points = sweep_configs(base, args.vary, values, methods)
    jobs = [(v, m, cfg, out / f"{args.vary}={v}" / m) for v, m, cfg in points]
    if args.jobs > 1:
        with ProcessPoolExecutor(max_workers=args.jobs) as pool:
            rows = list(pool.map(_sweep_point, jobs))
    else:
        rows = [_sweep_point(j) for j in jobs]

    out.mkdir(parents=True, exist_ok=True)
    with open(out / "summary.csv", "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(SUMMARY_COLUMNS)
        for row in rows:
            w.writerow([args.vary, *row])
    print(f"wrote {len(rows)} runs and {out / 'summary.csv'}")
    return EXIT_OK


def cmd_verify(args):
    try:
        expected = Cid.from_hex(args.digest.strip().lower())
    except ValueError as exc:
        raise UsageError(f"--digest: {exc}") from None
    data = Path(args.weights).read_bytes()
    actual = digest(data)
    if actual != expected:
        print(f"MISMATCH {args.weights}: digest {actual.hex}, expected {expected.hex}")
        return EXIT_INVALID
    print(f"OK {args.weights} {actual.hex}")
    return EXIT_OK


def main(argv=None):
    try:
        args = _build_parser().parse_args(argv)
    except UsageError as exc:
        print(f"fedchain: error: {exc}", file=sys.stderr)
        return EXIT_INVALID
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    handlers = {"run": cmd_run, "sweep": cmd_sweep, "verify": cmd_verify}
    try:
        if args.command == "default-config":
            sys.stdout.write(config_mod.default_config_text())
            return EXIT_OK
        return handlers[args.command](args)
    except ConfigError as exc:
        print(f"fedchain: invalid config: {exc}", file=sys.stderr)
        return EXIT_INVALID
    except UsageError as exc:
        print(f"fedchain: error: {exc}", file=sys.stderr)
        return EXIT_INVALID
    except (OSError, RuntimeError) as exc:
        print(f"fedchain: {exc}", file=sys.stderr)
        return EXIT_RUNTIME


if __name__ == "__main__":
    sys.exit(main())
