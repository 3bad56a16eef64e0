"""Command-line entry point: ``mpar {run,verify,trace,opt}``.

Set ``MPAR_LOG_LEVEL`` (DEBUG, INFO, WARNING, ...) to control log verbosity.
"""
from __future__ import annotations

import argparse
import json
import logging
import os
import sys

from .experiment import ConfigError, parse_config, run_experiment
from .fixtures import FixtureError, load_fixture, verify_fixtures
from .optimizer import TabuParams, brute_force_opt, local_search, tabu_search, unit_vector
from .sim import InvariantFault, run

log = logging.getLogger("mpar")


def _configure_logging():
    level = os.environ.get("MPAR_LOG_LEVEL", "WARNING").upper()
    logging.basicConfig(level=getattr(logging, level, logging.WARNING), format="%(levelname)s %(name)s: %(message)s")


def cmd_run(args) -> int:
    spec = parse_config(args.config)
    if args.out:
        spec.output["dir"] = args.out
    table, results = run_experiment(spec)
    sys.stdout.write(table.to_csv())
    faults = [r for r in results if r.fault]
    for r in faults:
        print(f"fault: {r.protocol} {spec.axis}={r.value} seed_index={r.index} seed={r.seed}: {r.fault}; "
              f"trace in {spec.out_dir / 'logs' / f'{r.protocol}_{r.value}_seed{r.index}.ndjson'}",
              file=sys.stderr)
    log.info("wrote %s", spec.out_dir)
    return 1 if faults else 0


def cmd_verify(args) -> int:
    try:
        report = verify_fixtures(args.fixtures)
    except FixtureError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    print("\n".join(report.lines()))
    return 0 if report.ok else 1


def cmd_trace(args) -> int:
    spec = parse_config(args.config)
    protocol = args.protocol or spec.protocols[0]
    value = spec.values[0] if args.value is None else type(spec.values[0])(args.value)
    scen = spec.scenario_for(protocol, value, args.seed_index, strict=False)
    _, events = run(scen)
    found = [ev for ev in events if ev["msg"] == args.message]
    if not found:
        print(f"error: message {args.message} does not occur in this run", file=sys.stderr)
        return 1
    for ev in found:
        print(json.dumps(ev, sort_keys=True))
    return 0


def _parse_bits(text: str, n: int) -> tuple:
    bits = tuple(int(b) for b in text.replace(" ", "").split(","))
    if len(bits) != n or any(b not in (0, 1) for b in bits):
        raise SystemExit(f"--start needs {n} comma-separated bits")
    return bits


def cmd_opt(args) -> int:
    fx = load_fixture(args.fixture)
    model = fx.model()
    n = model.size
    if args.start:
        start = _parse_bits(args.start, n)
    elif fx.source in model.candidates:
        start = unit_vector(n, model.candidates.index(fx.source))
    else:
        start = (0,) * n
    trace = None
    if args.algo == "brute":
        best = brute_force_opt(model, n)
    elif args.algo == "local":
        best, trace = local_search(start, model)
    else:
        params = TabuParams(theta=args.theta, fixed_length=args.fixed_L, seed=args.seed)
        best, trace = tabu_search(start, model, params)
    doc = {"algo": args.algo, "start": list(start), "x": list(best),
           "relays": [str(x) for x in sorted(model.relays(best))], "P": model.probability(best)}
    print(json.dumps(doc))
    if args.trace:
        if trace is None:
            print("note: brute force keeps no trace", file=sys.stderr)
        else:
            with open(args.trace, "w") as fh:
                json.dump(trace.to_json(), fh, indent=2)
    return 0


def build_parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(prog="mpar", description="Movement-pattern-aware DTN routing toolkit")
    sub = ap.add_subparsers(dest="cmd", required=True)

    p = sub.add_parser("run", help="run an experiment sweep from a YAML config")
    p.add_argument("config")
    p.add_argument("--out", help="override the output directory")
    p.set_defaults(func=cmd_run)

    p = sub.add_parser("verify", help="recompute the shipped regression fixtures")
    p.add_argument("--fixtures", help="fixture directory (default: the packaged fixtures)")
    p.set_defaults(func=cmd_verify)

    p = sub.add_parser("trace", help="print the event log of one message")
    p.add_argument("config")
    p.add_argument("--message", type=int, required=True)
    p.add_argument("--protocol")
    p.add_argument("--value", help="sweep value (default: the first)")
    p.add_argument("--seed-index", type=int, default=0)
    p.set_defaults(func=cmd_trace)

    p = sub.add_parser("opt", help="optimize the relay set of a fixture")
    p.add_argument("fixture")
    p.add_argument("--algo", choices=("local", "tabu", "brute"), default="tabu")
    p.add_argument("--fixed-L", type=int, dest="fixed_L")
    p.add_argument("--theta", type=int)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--start", help="comma-separated start bits")
    p.add_argument("--trace", help="write the search trace as JSON")
    p.set_defaults(func=cmd_opt)
    return ap


def main(argv=None) -> int:
    _configure_logging()
    args = build_parser().parse_args(argv)
    try:
        return args.func(args)
    except (ConfigError, FileNotFoundError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    except InvariantFault as exc:
        print(f"fault: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
