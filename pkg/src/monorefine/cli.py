"""Command-line entry point: ``monorefine {run,resume,simulate,report,coverage}``.

Exit codes: 0 success, 1 usage or config error, 2 dataset error,
3 backend outage (some theorem truncated or failed), 4 internal invariant
violation.
"""

from __future__ import annotations

import argparse
import logging
import sys
from pathlib import Path
from typing import Sequence

from .config import ConfigError, apply_overrides, build_process, load_config, public_config
from .dataset import DatasetError, load_dataset
from .model import InvariantViolation, MarginConfig, NLTheorem
from .objective import aggregate_uncertainty
from .process import run_dataset
from .report import emit_report
from .simulation import SimWorld, coverage_margins, monte_carlo_lcb_coverage, simulate_process
from .tracefile import TraceFileError, TraceSink, load_trace_file, write_traces

logger = logging.getLogger("monorefine")

EXIT_OK, EXIT_CONFIG, EXIT_DATASET, EXIT_OUTAGE, EXIT_INVARIANT = 0, 1, 2, 3, 4


class _Parser(argparse.ArgumentParser):
    def error(self, message: str):  # usage errors share the config exit code
        self.print_usage(sys.stderr)
        self.exit(EXIT_CONFIG, f"{self.prog}: error: {message}\n")


def _common(p: argparse.ArgumentParser) -> None:
    p.add_argument("--seed", type=int, default=None, help="override the configured seed")
    p.add_argument("--set", dest="overrides", action="append", default=[], metavar="KEY=VALUE",
                   help="override a config key (dotted path, JSON value)")
    p.add_argument("-v", "--verbose", action="store_true")


def build_parser() -> argparse.ArgumentParser:
    parser = _Parser(prog="monorefine", description="Monotonic multi-generator autoformalization runs.")
    sub = parser.add_subparsers(dest="command", required=True, parser_class=_Parser)

    run = sub.add_parser("run", help="run the process over a dataset")
    run.add_argument("--config", required=True)
    run.add_argument("--dataset", required=True)
    run.add_argument("--out", required=True, help="trace file (JSON lines)")
    run.add_argument("--report", help="directory for the report suite")
    run.add_argument("--max-steps", type=int)
    run.add_argument("--parallelism", type=int)
    run.add_argument("--allow-empty-proof", action="store_true")
    _common(run)

    res = sub.add_parser("resume", help="continue an interrupted trace file")
    res.add_argument("--trace", required=True)
    res.add_argument("--dataset", required=True)
    res.add_argument("--config", help="defaults to the config recorded in the trace file")
    res.add_argument("--report")
    res.add_argument("--parallelism", type=int)
    res.add_argument("--allow-empty-proof", action="store_true")
    _common(res)

    sim = sub.add_parser("simulate", help="run the process in simulated worlds")
    sim.add_argument("--config")
    sim.add_argument("--worlds", type=int, default=10)
    sim.add_argument("--max-steps", type=int, default=6)
    sim.add_argument("--sigma", type=float, help="judge noise sigma for all dimensions")
    sim.add_argument("--out", required=True, help="output directory")
    _common(sim)

    rep = sub.add_parser("report", help="aggregate a trace file into tables and curves")
    rep.add_argument("--trace", required=True)
    rep.add_argument("--out", required=True)
    rep.add_argument("--steps", type=int)
    _common(rep)

    cov = sub.add_parser("coverage", help="Monte-Carlo check of the lower confidence bound")
    cov.add_argument("--config")
    cov.add_argument("--n", type=int, default=10_000)
    cov.add_argument("--delta", type=float, default=0.05)
    cov.add_argument("--sigma", type=float)
    cov.add_argument("--mu", type=float, help="fix the true soft scores at this value")
    _common(cov)
    return parser


def _config(args, path: str | None, recorded: dict | None = None) -> dict:
    cfg = load_config(path)
    if recorded:
        cfg.update(recorded)
    apply_overrides(cfg, args.overrides)
    if args.seed is not None:
        cfg["seed"] = args.seed
    for attr, key in (("max_steps", "max_steps"), ("parallelism", "parallelism")):
        v = getattr(args, attr, None)
        if v is not None:
            cfg[key] = v
    return cfg


def _world(cfg: dict, seed: int, sigma: float | None) -> SimWorld:
    sim = dict(cfg.get("simulation") or {})
    sim["seed"] = seed
    if sigma is not None:
        sim["noise_sigma"] = sigma
    return SimWorld.from_dict(sim)


def cmd_run(args) -> int:
    cfg = _config(args, args.config)
    theorems = load_dataset(args.dataset, allow_empty_proof=args.allow_empty_proof)
    built = build_process(cfg)
    with TraceSink(args.out, public_config(cfg)) as sink:
        result = run_dataset(built.process, theorems, sink, parallelism=built.parallelism)
    return _finish(args, result.traces, result.failed, cfg)


def cmd_resume(args) -> int:
    loaded = load_trace_file(args.trace)
    if args.config:
        cfg = _config(args, args.config)
    else:
        cfg = _config(args, None, loaded.config)
    theorems = load_dataset(args.dataset, allow_empty_proof=args.allow_empty_proof)
    built = build_process(cfg)
    finished = [tid for tid, st in loaded.states.items() if st.finished]
    prior = {tid: st.records for tid, st in loaded.states.items() if not st.finished}
    with TraceSink(args.trace, resume=True) as sink:
        result = run_dataset(built.process, theorems, sink, parallelism=built.parallelism,
                             prior=prior, finished=finished)
    traces = load_trace_file(args.trace).traces()
    order = {t.id: i for i, t in enumerate(theorems)}
    traces = sorted((t for t in traces if t.theorem_id in order), key=lambda t: order[t.theorem_id])
    return _finish(args, traces, result.failed, cfg)


def _finish(args, traces, failed, cfg) -> int:
    truncated = [t.theorem_id for t in traces if t.truncated]
    for t in traces:
        print(f"{t.theorem_id}: {t.terminal_reason} after {len(t.records)} steps, "
              f"estimate {t.final.estimate:.4f}", flush=True)
    if args.report and traces:
        emit_report(traces, args.report, config=public_config(cfg), steps=int(cfg["max_steps"]))
    if truncated or failed:
        print(f"incomplete theorems: {', '.join(truncated + list(failed))}", file=sys.stderr)
        return EXIT_OUTAGE
    return EXIT_OK


def cmd_simulate(args) -> int:
    cfg = _config(args, args.config)
    base_seed = int(cfg.get("seed", 0))
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    traces = []
    violations = 0
    for k in range(args.worlds):
        world = _world(cfg, base_seed + k, args.sigma)
        theorem = NLTheorem(f"world-{world.seed}", "A synthetic statement.", "A synthetic proof.")
        res = simulate_process(world, max_steps=int(cfg["max_steps"]), epsilon=float(cfg["epsilon"]),
                               margins=MarginConfig(**cfg.get("margins", {})), theorem=theorem)
        trace = res.trace
        est = trace.incumbent_estimates()
        violations += sum(1 for a, b in zip(est, est[1:]) if b < a)
        traces.append(trace)
        print(f"world {world.seed}: {trace.terminal_reason}, steps {len(trace.records)}, "
              f"estimate {trace.final.estimate:.4f}, true {res.true_objective[-1]:.4f}", flush=True)
    header = public_config(cfg)
    write_traces(out / "traces.jsonl", traces, header)
    emit_report(traces, out, config=header, steps=int(cfg["max_steps"]))
    print(f"monotonicity violations: {violations}")
    return EXIT_OK if violations == 0 else EXIT_INVARIANT


def cmd_report(args) -> int:
    loaded = load_trace_file(args.trace)
    traces = loaded.traces()
    if not traces:
        print("trace file holds no completed traces", file=sys.stderr)
        return EXIT_DATASET
    cfg = dict(loaded.config or {})
    if args.seed is not None:
        cfg["seed"] = args.seed
    steps = args.steps if args.steps is not None else cfg.get("max_steps")
    paths = emit_report(traces, args.out, config=cfg, steps=None if steps is None else int(steps))
    for p in paths.values():
        print(p)
    return EXIT_OK


def cmd_coverage(args) -> int:
    cfg = _config(args, args.config)
    world = _world(cfg, int(cfg.get("seed", 0)), args.sigma)
    if args.mu is not None:
        world = SimWorld(world.seed, world.generators, world.noise_sigma, (args.mu, args.mu))
    margins = coverage_margins(world, args.delta, args.mu)
    cov = monte_carlo_lcb_coverage(world, margins, args.n)
    delta = aggregate_uncertainty(*margins.deltas)
    print(f"margins: {margins.margin_lp:.6f} {margins.margin_mc:.6f} {margins.margin_fq:.6f}")
    print(f"coverage: {cov:.4f} (guaranteed >= {1 - delta:.6f}, seed {world.seed}, n {args.n})")
    return EXIT_OK if cov >= 1 - delta - 0.02 else EXIT_INVARIANT


COMMANDS = {"run": cmd_run, "resume": cmd_resume, "simulate": cmd_simulate,
            "report": cmd_report, "coverage": cmd_coverage}


def main(argv: Sequence[str] | None = None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(asctime)s %(levelname)s %(name)s: %(message)s", stream=sys.stderr)
    try:
        sys.stdout.reconfigure(line_buffering=True)
    except (AttributeError, ValueError):
        pass
    try:
        return COMMANDS[args.command](args)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except (DatasetError, TraceFileError) as exc:
        print(f"dataset error: {exc}", file=sys.stderr)
        return EXIT_DATASET
    except InvariantViolation as exc:
        print(f"invariant violation: {exc}", file=sys.stderr)
        return EXIT_INVARIANT


if __name__ == "__main__":
    sys.exit(main())
