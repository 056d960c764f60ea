"""Command-line entry point: ``slicesim run|builtin|validate|verify|report``."""

from __future__ import annotations

import argparse
import dataclasses
import logging
import sys

from . import builtins, report, sim
from .scenario import ScenarioError, ValidationError, dump_scenario, load_scenario, validate_scenario

log = logging.getLogger("slicesim")


def _print_run(rep: sim.RunReport) -> None:
    print(f"{rep.name}: {rep.slots} slots, {rep.control_messages} control message(s), "
          f"wall {rep.wall_s:.1f}s -> {rep.out_dir}")


def _run_and_report(scn, out, tcp) -> int:
    rep = sim.run(scn, out, tcp=tcp)
    _print_run(rep)
    return report.write_report(out)


def cmd_run(args) -> int:
    scn = load_scenario(args.scenario)
    if args.seed is not None:
        scn = dataclasses.replace(scn, seed=args.seed)
    return _run_and_report(scn, args.out, args.tcp)


def cmd_builtin(args) -> int:
    kwargs = {"seed": args.seed or 0}
    if args.prbs is not None:
        kwargs["total_prbs"] = args.prbs
    scn = builtins.BUILTINS[args.name](**kwargs)
    problems = validate_scenario(scn)
    if problems:
        raise ValidationError(problems)
    if args.print_scenario:
        sys.stdout.write(dump_scenario(scn).decode() + "\n")
        return 0
    return _run_and_report(scn, args.out, args.tcp)


def cmd_validate(args) -> int:
    scn = load_scenario(args.scenario)
    sys.stdout.write(dump_scenario(scn).decode() + "\n")
    return 0


def cmd_verify(args) -> int:
    problems = report.verify(args.out)
    for p in problems[:50]:
        print(p)
    print(f"{len(problems)} invariant violation(s)")
    return 0 if not problems else 1


def cmd_report(args) -> int:
    return report.write_report(args.out)


def cmd_ric(args) -> int:
    scn = load_scenario(args.scenario)
    sim.serve_ric(scn, args.out, port=args.port)
    return 0


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="slicesim", description="Sliced gNB MAC scheduler under Near-RT RIC control")
    p.add_argument("-v", "--verbose", action="store_true")
    sub = p.add_subparsers(dest="command", required=True)

    r = sub.add_parser("run", help="run a scenario file")
    r.add_argument("--scenario", required=True)
    r.add_argument("--out", required=True)
    r.add_argument("--seed", type=int)
    r.add_argument("--tcp", action="store_true", help="run the RIC in a separate process over TCP (E2_PORT)")
    r.set_defaults(func=cmd_run)

    b = sub.add_parser("builtin", help="run a built-in experiment")
    b.add_argument("name", choices=sorted(builtins.BUILTINS))
    b.add_argument("--out")
    b.add_argument("--prbs", type=int, help="override the cell size (e.g. 273)")
    b.add_argument("--seed", type=int)
    b.add_argument("--tcp", action="store_true")
    b.add_argument("--print-scenario", action="store_true", help="print the scenario document and exit")
    b.set_defaults(func=cmd_builtin)

    v = sub.add_parser("validate", help="check a scenario and print its normalized form")
    v.add_argument("--scenario", required=True)
    v.set_defaults(func=cmd_validate)

    vf = sub.add_parser("verify", help="re-check invariants over a run's CSVs")
    vf.add_argument("--out", required=True)
    vf.set_defaults(func=cmd_verify)

    rp = sub.add_parser("report", help="summarize a run directory")
    rp.add_argument("--out", required=True)
    rp.set_defaults(func=cmd_report)

    ric = sub.add_parser("ric", help="serve the RIC side of a --tcp run")
    ric.add_argument("--scenario", required=True)
    ric.add_argument("--out", required=True)
    ric.add_argument("--port", type=int)
    ric.set_defaults(func=cmd_ric)
    return p


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.DEBUG if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    if args.command == "builtin" and not args.print_scenario and not args.out:
        print("slicesim builtin: --out is required unless --print-scenario is given", file=sys.stderr)
        return 2
    try:
        return args.func(args)
    except ScenarioError as e:
        print(f"error: {e}", file=sys.stderr)
        return 2
    except OSError as e:
        print(f"I/O error: {e}", file=sys.stderr)
        return 3


if __name__ == "__main__":
    sys.exit(main())
