"""Command line: ``memlearn simulate | paired | gen-trace | report-diff``.

Exit codes: 0 success, 1 reports differ (report-diff), 2 config error,
3 trace error.
"""

import argparse
import dataclasses
import json
import sys

from .harness import (Simulation, emit_report, load_config, paired_run, parse_report,
                      report_diff)
from .pythia import ConfigError
from .trace import Pattern, SyntheticSpec, TraceError, generate, write_trace

EXIT_OK = 0
EXIT_DIFFERENT = 1
EXIT_CONFIG = 2
EXIT_TRACE = 3


def parse_spec(text):
    """``"generator=stride length=1000 stride_lines=3"`` -> SyntheticSpec."""
    fields = {f.name: f for f in dataclasses.fields(SyntheticSpec)}
    kw = {}
    for tok in text.replace(",", " ").split():
        key, sep, val = tok.partition("=")
        if not sep or key not in fields:
            raise ConfigError(f"spec.{key}", "expected key=value with a known key")
        if key == "generator":
            try:
                kw[key] = Pattern(val)
            except ValueError:
                raise ConfigError("spec.generator", f"unknown generator {val!r}") from None
            continue
        typ = type(getattr(SyntheticSpec(Pattern.STRIDE, 1), key))
        try:
            kw[key] = typ(int(val, 0)) if typ is int else typ(val)
        except ValueError:
            raise ConfigError(f"spec.{key}", f"cannot parse {val!r}") from None
    if "generator" not in kw or "length" not in kw:
        raise ConfigError("spec", "'generator' and 'length' are required")
    return SyntheticSpec(**kw)


def _config(args):
    cfg = load_config(args.config, seed=args.seed)
    if args.trace:
        cfg = dataclasses.replace(cfg, trace_path=args.trace, synthetic=None)
    if getattr(args, "athena_log", None):
        cfg = dataclasses.replace(cfg, athena_log=args.athena_log)
    if args.format:
        cfg = dataclasses.replace(cfg, report_format=args.format)
    return cfg


def _write(report, fmt, path):
    text = emit_report(report, fmt, path)
    if path is None:
        sys.stdout.write(text)


def cmd_simulate(args):
    cfg = _config(args)
    sim = Simulation(cfg)
    report = sim.run()
    if cfg.athena_log:
        sim.write_athena_log(cfg.athena_log)
    _write(report, cfg.report_format, args.out)


def cmd_paired(args):
    cfg = _config(args)
    out = paired_run(cfg)
    if args.baseline_out:
        emit_report(out["baseline"], cfg.report_format, args.baseline_out)
    _write(out["with_mechanisms"], cfg.report_format, args.out)


def cmd_gen_trace(args):
    spec = parse_spec(args.spec)
    n = write_trace(generate(spec), args.out)
    print(f"wrote {n} records to {args.out}", file=sys.stderr)


def cmd_report_diff(args):
    reports = []
    for p in (args.a, args.b):
        try:
            with open(p, encoding="utf-8") as fh:
                reports.append(parse_report(fh.read()))
        except (OSError, ValueError, TypeError) as e:
            raise ConfigError("report", f"cannot read {p}: {e}") from None
    diff = report_diff(*reports)
    for k in args.ignore or ():
        diff.pop(k, None)
    for k, (va, vb) in diff.items():
        print(f"{k}: {json.dumps(va)} -> {json.dumps(vb)}")
    return EXIT_DIFFERENT if diff else EXIT_OK


def build_parser():
    p = argparse.ArgumentParser(prog="memlearn", description=__doc__.splitlines()[0])
    sub = p.add_subparsers(dest="command", required=True)

    for name, fn, help_ in (("simulate", cmd_simulate, "run one simulation"),
                            ("paired", cmd_paired, "run baseline and mechanisms, report coverage")):
        s = sub.add_parser(name, help=help_)
        s.add_argument("--config", required=True, help="TOML config file")
        s.add_argument("--trace", help="trace file; overrides the config's trace section")
        s.add_argument("--seed", type=int, help="master seed; overrides config and MEMLEARN_SEED")
        s.add_argument("--out", help="report path (default: stdout)")
        s.add_argument("--format", choices=("json", "csv"), help="report format")
        s.add_argument("--athena-log", help="write one CSV line per Athena epoch")
        if name == "paired":
            s.add_argument("--baseline-out", help="also write the baseline report here")
        s.set_defaults(func=fn)

    g = sub.add_parser("gen-trace", help="write a synthetic trace")
    g.add_argument("--spec", required=True,
                   help='e.g. "generator=stride length=100000 stride_lines=3 seed=1"')
    g.add_argument("--out", required=True, help="output path (.gz compresses)")
    g.set_defaults(func=cmd_gen_trace)

    d = sub.add_parser("report-diff", help="compare two JSON reports")
    d.add_argument("a")
    d.add_argument("b")
    d.add_argument("--ignore", action="append", help="field to ignore (repeatable)")
    d.set_defaults(func=cmd_report_diff)
    return p


def main(argv=None):
    args = build_parser().parse_args(argv)
    try:
        rc = args.func(args)
    except ConfigError as e:
        print(f"config error: {e}", file=sys.stderr)
        return EXIT_CONFIG
    except TraceError as e:
        print(f"trace error: {e}", file=sys.stderr)
        return EXIT_TRACE
    return rc or EXIT_OK


if __name__ == "__main__":
    sys.exit(main())
