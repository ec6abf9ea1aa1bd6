"""Command-line harness: ``tinyptr <command> [flags]``.

Prints a JSON report (``--output json``) or CSV rows (``--output csv``) to
stdout or ``--out``.  Exit status is 0 when every threshold check passes,
1 when one fails and 2 on a configuration or runtime error, which is also
written to stderr as a JSON record.
"""

import argparse
import csv
import io
import json
import sys

from .core import TinyPtrError
from .experiments import COMMANDS, ExperimentConfig, run

CSV_FIELDS = {
    "ballsbins": ["trial", "rule", "n", "h", "d", "tau", "max_load", "exposed", "q_max", "level3"],
    "probe": ["n", "delta", "mean", "p99", "max", "failures"],
}


def _floats(text):
    return [eval_fraction(x) for x in text.split(",") if x]


def _ints(text):
    return [int(x) for x in text.split(",") if x]


def eval_fraction(text):
    """Parse ``0.125`` or ``1/8``."""
    if "/" in text:
        num, den = text.split("/", 1)
        return float(num) / float(den)
    return float(text)


def build_parser():
    p = argparse.ArgumentParser(prog="tinyptr", description="Tiny-pointer tables and balls-into-bins experiments.")
    sub = p.add_subparsers(dest="command", required=True)
    for name in COMMANDS:
        c = sub.add_parser(name)
        c.add_argument("--n", type=int, default=1 << 16, help="slots, keys or bins depending on the command")
        c.add_argument("--delta", type=eval_fraction, default=0.125)
        c.add_argument("--h", type=int, default=2, help="average balls per bin")
        c.add_argument("--d", type=int, default=3, help="number of choices")
        c.add_argument("--ops", type=int, default=1_000_000, help="steady-state ops after the fill")
        c.add_argument("--trials", type=int, default=1)
        c.add_argument("--seed", type=int, default=0)
        c.add_argument("--output", choices=["json", "csv"], default="json")
        c.add_argument("--workload", default="churn", help="churn, fifo, reinsert or file:<path>")
        c.add_argument("--out", default=None, help="write here instead of stdout")
        c.add_argument("--check", action="store_true", help="track slot ownership during replay")
        if name == "bench-fixed":
            c.add_argument("--table", choices=["fixed", "lbt"], default="fixed")
        if name == "bench-variable":
            c.add_argument("--table", choices=["wrapped", "raw"], default="wrapped")
        if name == "stable-dict":
            c.add_argument("--v", type=int, default=16, help="value width in bits")
        if name == "ballsbins":
            c.add_argument("--rule", choices=["single", "dleft", "iceberg"], default="iceberg")
            c.add_argument("--taus", type=_ints, default=None, help="comma list of exposure thresholds")
        if name == "probe":
            c.add_argument("--deltas", type=_floats, default=None, help="comma list, e.g. 1/2,1/4")
    return p


def config_from_args(args):
    kw = {k: v for k, v in vars(args).items() if k not in ("out",)}
    if kw.get("table") in ("fixed", "wrapped"):
        kw["table"] = None
    return ExperimentConfig(**kw)


def render(report, output):
    if output == "json":
        return json.dumps(report.to_dict(), indent=2) + "\n"
    buf = io.StringIO()
    if report.rows:
        fields = CSV_FIELDS.get(report.command, list(report.rows[0]))
        w = csv.DictWriter(buf, fieldnames=fields, lineterminator="\n")
        w.writeheader()
        w.writerows(report.rows)
    else:
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(["name", "value", "threshold", "cmp", "pass"])
        for m in report.metrics:
            d = m.to_dict()
            w.writerow([d["name"], d["value"], d["threshold"], d["cmp"], d["pass"]])
    return buf.getvalue()


def main(argv=None):
    args = build_parser().parse_args(argv)
    try:
        report = run(config_from_args(args))
    except (TinyPtrError, ValueError, OSError) as exc:
        json.dump({"error": type(exc).__name__, "message": str(exc)}, sys.stderr)
        sys.stderr.write("\n")
        return 2
    text = render(report, args.output)
    if args.out:
        with open(args.out, "w") as fh:
            fh.write(text)
    else:
        sys.stdout.write(text)
    return 0 if report.passed else 1


if __name__ == "__main__":
    sys.exit(main())
