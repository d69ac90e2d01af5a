"""Command-line entry point: gen, profile, oracle, compare, suite."""

from __future__ import annotations

import argparse
import json
import sys
import time
from contextlib import contextmanager
from pathlib import Path

from . import report
from .config import ConfigError, RunConfig, resolve
from .pipeline import run_oracle, run_profile, simulate
from .trace import TraceError, load_trace, save_trace
from .workloads import (SIX_CLASSES, GroundTruth, WorkloadError, WorkloadKind, WorkloadSpec,
                        generate, ground_truth)

EXIT_OK, EXIT_MISMATCH, EXIT_ERROR = 0, 1, 2


class CliError(Exception):
    pass


@contextmanager
def _sink(path: str | None):
    if path in (None, "-"):
        yield sys.stdout
    else:
        with open(path, "w", encoding="utf-8", newline="\n") as f:
            yield f


def _add_run_flags(p: argparse.ArgumentParser, cache: bool = False) -> None:
    p.add_argument("--config", help="key=value settings file")
    p.add_argument("--seed", type=int)
    p.add_argument("--load-period", type=int)
    p.add_argument("--store-period", type=int)
    p.add_argument("--window", type=int)
    p.add_argument("--window-ratio", type=float)
    p.add_argument("--expiry-events", type=int)
    p.add_argument("--format", choices=("text", "structured"))
    p.add_argument("--set", action="append", default=[], metavar="KEY=VALUE",
                   help="override any setting (repeatable)")
    p.add_argument("-o", "--output", help="write here instead of stdout")
    if cache:
        p.add_argument("--line-size", type=int)
        p.add_argument("--sets", type=int)
        p.add_argument("--assoc", type=int)
        p.add_argument("--cores", type=int)


_RUN_FLAGS = ("seed", "load_period", "store_period", "window", "window_ratio",
              "expiry_events", "format", "line_size", "sets", "assoc", "cores")


def _run_config(args) -> RunConfig:
    flags = {}
    for kv in args.set:
        if "=" not in kv:
            raise ConfigError(f"--set expects KEY=VALUE, got {kv!r}")
        k, v = kv.split("=", 1)
        flags[k] = v
    for k in _RUN_FLAGS:
        v = getattr(args, k, None)
        if v is not None:
            flags[k] = v
    return resolve(flags, args.config)


def _load(path: str):
    try:
        return load_trace(path)
    except OSError as e:
        raise CliError(f"cannot read {path}: {e.strerror}") from None


# -- commands ------------------------------------------------------------------

def cmd_gen(args) -> int:
    cfg = _run_config(args)
    spec = WorkloadSpec(
        WorkloadKind.parse(args.kind), threads=args.threads, iterations=args.iterations,
        seed=cfg.seed, scale=args.scale, lines=args.lines,
        **({"objects": args.objects} if args.objects is not None else {}))
    trace = generate(spec, cfg.cache())
    if args.output in (None, "-"):
        trace.write(sys.stdout)
    else:
        save_trace(trace, args.output)
    return EXIT_OK


def cmd_profile(args) -> int:
    cfg = _run_config(args)
    trace = _load(args.trace)
    res = run_profile(trace, cfg.profile())
    with _sink(args.output) as out:
        if cfg.format == "structured":
            out.write(report.dumps(report.profile_document(res, cfg, ground_truth(trace))))
        else:
            out.write(report.render_profile_text(res))
    return EXIT_OK


def cmd_oracle(args) -> int:
    cfg = _run_config(args)
    trace = _load(args.trace)
    res = run_oracle(trace, warmup=cfg.warmup)
    with _sink(args.output) as out:
        if cfg.format == "structured":
            out.write(report.dumps(report.oracle_document(res)))
        else:
            out.write(report.render_oracle_text(res))
    return EXIT_OK


def _read_json(path: str) -> dict:
    try:
        return json.loads(Path(path).read_text(encoding="utf-8"))
    except OSError as e:
        raise CliError(f"cannot read {path}: {e.strerror}") from None
    except json.JSONDecodeError as e:
        raise CliError(f"{path} is not a structured report: {e}") from None


def cmd_compare(args) -> int:
    prof = _read_json(args.profile)
    orac = _read_json(args.oracle) if args.oracle else None
    if args.trace:
        trace = _load(args.trace)
        if trace.trace_id() != prof.get("trace_id"):
            raise CliError(f"trace id mismatch: {args.trace} is {trace.trace_id()}, "
                           f"profile is {prof.get('trace_id')}")
        gt = ground_truth(trace)
    else:
        gt = GroundTruth.from_meta(prof.get("ground_truth", {}))
    if gt is None:
        raise CliError("no ground truth: pass --trace or profile a generated trace")
    try:
        verdict, summary = report.compare(prof, orac, gt)
    except ValueError as e:
        raise CliError(str(e)) from None
    fmt = args.format or "text"
    with _sink(args.output) as out:
        if fmt == "structured":
            summary["confusion"] = report.confusion([verdict])
            out.write(report.dumps(summary))
        else:
            status = "match" if verdict.ok else f"MISMATCH ({verdict.reason})"
            out.write(f"{verdict.workload}: expected {verdict.expected}, "
                      f"reported {verdict.reported}: {status}\n")
    return EXIT_OK if verdict.ok else EXIT_MISMATCH


def run_suite(cfg: RunConfig, seeds: list[int], kinds=SIX_CLASSES):
    """Profile every (kind, seed) pair in memory; returns verdicts and per-run documents."""
    verdicts, docs = [], []
    for seed in seeds:
        run_cfg = RunConfig(**{**cfg.as_dict(), "seed": seed})
        for kind in kinds:
            trace = generate(WorkloadSpec(kind, seed=seed), run_cfg.cache())
            gt = ground_truth(trace)
            res = run_profile(trace, run_cfg.profile(), kinds=simulate(trace))
            verdicts.append(report.judge(res.reports, gt))
            docs.append(report.profile_document(res, run_cfg, gt))
    return verdicts, docs


def cmd_suite(args) -> int:
    cfg = _run_config(args)
    seeds = list(range(args.first_seed, args.first_seed + args.seeds))
    t0 = time.perf_counter()
    verdicts, docs = run_suite(cfg, seeds)
    elapsed = time.perf_counter() - t0
    passed = sum(v.ok for v in verdicts)
    with _sink(args.output) as out:
        if cfg.format == "structured":
            out.write(report.dumps({
                "kind": "suite",
                "seeds": seeds,
                "runs": [{"seed": s, **v.__dict__} for s, v in
                         zip([s for s in seeds for _ in SIX_CLASSES], verdicts)],
                "passed": passed,
                "total": len(verdicts),
                "confusion": report.confusion(verdicts),
            }))
        else:
            for seed_i, seed in enumerate(seeds):
                row = verdicts[seed_i * len(SIX_CLASSES):(seed_i + 1) * len(SIX_CLASSES)]
                ok = sum(v.ok for v in row)
                out.write(f"seed {seed}: {ok}/{len(row)}")
                bad = [f"{v.workload} ({v.reason}: {v.reported})" for v in row if not v.ok]
                out.write(("  " + "; ".join(bad)) if bad else "")
                out.write("\n")
            out.write("\n" + report.render_confusion(verdicts))
            out.write(f"\n{passed}/{len(verdicts)} correct in {elapsed:.1f}s\n")
    return EXIT_OK if passed == len(verdicts) else EXIT_MISMATCH


# -- parser --------------------------------------------------------------------

def build_parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(prog="cachescope",
                                 description="Trace-driven cache miss profiler with hybrid sampling.")
    sub = ap.add_subparsers(dest="command", required=True)

    p = sub.add_parser("gen", help="generate a synthetic workload trace")
    p.add_argument("--kind", required=True,
                   help="one of: " + ", ".join(k.value for k in WorkloadKind))
    p.add_argument("--threads", type=int)
    p.add_argument("--iterations", type=int)
    p.add_argument("--scale", type=int, default=4, help="capacity: array size in cache sizes")
    p.add_argument("--lines", type=int, help="conflict-stride: lines per set")
    p.add_argument("--objects", type=int, help="alloc-conflict: number of same-set objects")
    _add_run_flags(p, cache=True)
    p.set_defaults(func=cmd_gen)

    p = sub.add_parser("profile", help="run the sampling profiler over a trace")
    p.add_argument("trace")
    _add_run_flags(p)
    p.set_defaults(func=cmd_profile)

    p = sub.add_parser("oracle", help="label every miss of a trace (unsampled)")
    p.add_argument("trace")
    _add_run_flags(p)
    p.set_defaults(func=cmd_oracle)

    p = sub.add_parser("compare", help="check a structured profile against ground truth")
    p.add_argument("profile", help="structured profile report")
    p.add_argument("--oracle", help="structured oracle output for the same trace")
    p.add_argument("--trace", help="trace holding the ground truth")
    p.add_argument("--format", choices=("text", "structured"))
    p.add_argument("-o", "--output")
    p.set_defaults(func=cmd_compare)

    p = sub.add_parser("suite", help="profile the six bug classes over several seeds")
    p.add_argument("--seeds", type=int, default=5, help="number of seeds")
    p.add_argument("--first-seed", type=int, default=1)
    _add_run_flags(p)
    p.set_defaults(func=cmd_suite)
    return ap


def main(argv: list[str] | None = None) -> int:
    args = build_parser().parse_args(argv)
    try:
        return args.func(args)
    except (CliError, ConfigError, TraceError, WorkloadError) as e:
        print(f"cachescope {args.command}: error: {e}", file=sys.stderr)
        return EXIT_ERROR
    except ValueError as e:
        print(f"cachescope {args.command}: error: {e}", file=sys.stderr)
        return EXIT_ERROR


if __name__ == "__main__":
    sys.exit(main())
