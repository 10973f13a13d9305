"""Command-line entry point: ``nochainpos <command> [<subcommand>] [options]``."""

from __future__ import annotations

import argparse
import csv
import sys
from fractions import Fraction
from pathlib import Path

from . import ballmodel, genesis
from .consensus import InvalidA, derive_params
from .core import DEFAULT_SCHEME
from .netsim import ConfigError, load_model, load_scenario, run

EXIT_OK, EXIT_INVARIANT, EXIT_CONFIG = 0, 1, 2


def _positive(text: str) -> int:
    value = int(text)
    if value < 1:
        raise argparse.ArgumentTypeError(f"expected a positive integer, got {text}")
    return value


def _non_negative(text: str) -> int:
    value = int(text)
    if value < 0:
        raise argparse.ArgumentTypeError(f"expected a non-negative integer, got {text}")
    return value


def _grid(text: str) -> list[int]:
    try:
        values = sorted({int(x) for x in text.split(",") if x.strip()})
    except ValueError as exc:
        raise argparse.ArgumentTypeError(f"bad grid {text!r}") from exc
    if not values or values[0] < 0:
        raise argparse.ArgumentTypeError("grid needs non-negative step counts")
    return values


# -- commands ---------------------------------------------------------------------


def cmd_sim_run(args) -> int:
    try:
        scenario = load_scenario(args.scenario)
        if args.seed is not None:
            scenario.seed = args.seed
        report = run(scenario)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    out = Path(args.out) if args.out else Path("out") / scenario.name
    metrics, summary = report.write(out)
    s = report.summary
    print(f"scenario={s['scenario']} seed={s['seed']} converged={s['converged']} "
          f"time_to_consensus={s['time_to_consensus']} baseview_sn={s['final_baseview_sn']} "
          f"messages={s['messages']}")
    print(f"wrote {metrics} {summary}")
    if not report.ok:
        for v in s["invariant_violations"]:
            print(f"invariant violated: {v['invariant']} at tick {v['tick']}: {v['detail']}", file=sys.stderr)
        return EXIT_INVARIANT
    if scenario.expect_convergence and not report.converged:
        print("expected convergence was not reached", file=sys.stderr)
    return EXIT_OK


def cmd_urn_run(args) -> int:
    if args.red + args.black < args.sample_size:
        print("error: fewer balls than the sample size", file=sys.stderr)
        return EXIT_CONFIG
    if args.trials == 1:
        steps = ballmodel.run_to_absorption(
            ballmodel.UrnState(args.red, args.black, args.sample_size), args.max_steps, args.seed
        )
        print(f"steps={steps if steps is not None else 'cap'}")
        return EXIT_OK
    result = ballmodel.absorption_times(args.red, args.black, args.sample_size, args.trials, args.max_steps, args.seed)
    done = result.steps[result.steps >= 0]
    print(f"trials={args.trials} absorbed={done.size} red_won={int(result.red_won.sum())}")
    if done.size:
        print(f"max_steps={int(done.max())} mean_steps={float(done.mean()):.3f}")
    return EXIT_OK


def cmd_urn_curve(args) -> int:
    if args.red + args.black < args.sample_size:
        print("error: fewer balls than the sample size", file=sys.stderr)
        return EXIT_CONFIG
    curve = ballmodel.absorption_curve(args.red, args.black, args.sample_size, args.grid, args.trials, args.seed)
    fh = open(args.out, "w", newline="", encoding="utf-8") if args.out else sys.stdout
    try:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(["n", "fraction_absorbed"])
        for n, frac in curve:
            writer.writerow([n, f"{frac:.6f}"])
    finally:
        if args.out:
            fh.close()
    return EXIT_OK


def cmd_genesis_build(args) -> int:
    """Synthetic registration round: ``--registrants`` legacy keys each claim one new key."""
    try:
        fraction = Fraction(args.sponsor_fraction)
        sponsor = DEFAULT_SCHEME.keygen(f"sponsor:{args.seed}")
        policy = genesis.DistributionPolicy(
            sponsor.public, args.total, fraction, args.max_registrants,
            split=args.split, unclaimed_to=args.unclaimed_to,
        )
    except (ValueError, ZeroDivisionError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    olds = [DEFAULT_SCHEME.keygen(f"legacy:{args.seed}:{i}") for i in range(args.registrants)]
    registrar = genesis.Registrar(policy, frozenset(k.public for k in olds))
    rejected = 0
    for i, old in enumerate(olds):
        new = DEFAULT_SCHEME.keygen(f"new:{args.seed}:{i}")
        if registrar.register(genesis.RegistrationMessage.create(old, new.public)) is not None:
            rejected += 1
    try:
        view = genesis.build_initial_view(policy, registrar.accepted)
    except genesis.NoRegistrants as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    if args.out:
        genesis.write_view(view, args.out)
    print(f"accepted={len(registrar.accepted)} rejected={rejected}")
    print(f"sponsor={view.balance_of(sponsor.public)} recycled={view.recycled.balance}")
    print(f"view_hash={view.hash.hex()}")
    return EXIT_OK


def cmd_genesis_import(args) -> int:
    try:
        view = genesis.import_snapshot(args.snapshot, args.total)
    except (OSError, genesis.ParseError, genesis.EmptySnapshot, genesis.AllZero) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    if args.out:
        genesis.write_view(view, args.out)
    print(f"accounts={len(view.records)} recycled={view.recycled.balance}")
    print(f"view_hash={view.hash.hex()}")
    return EXIT_OK


def cmd_load_model(args) -> int:
    try:
        est = load_model(args.vesters, args.txs, args.tx_rate, args.period)
    except ValueError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    print(f"vester_list_len={est.vester_list_len}")
    print(f"package_bytes={est.package_bytes}")
    print(f"verifications_per_sec={est.verifications_per_sec}")
    return EXIT_OK


def cmd_params(args) -> int:
    try:
        p = derive_params(args.A)
    except InvalidA as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    print(f"B={p.B}")
    print(f"M={p.M}")
    print(f"N={p.N}")
    return EXIT_OK


# -- parser -------------------------------------------------------------------------


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="nochainpos", description="Balance-view PoS simulation lab")
    sub = parser.add_subparsers(dest="command", required=True)

    sim = sub.add_parser("sim", help="network simulation").add_subparsers(dest="action", required=True)
    p = sim.add_parser("run", help="run a scenario file")
    p.add_argument("--scenario", required=True)
    p.add_argument("--seed", type=_non_negative)
    p.add_argument("--out", help="output directory (default out/<scenario name>)")
    p.set_defaults(func=cmd_sim_run)

    urn = sub.add_parser("urn", help="urn (ball model) experiments").add_subparsers(dest="action", required=True)
    for name, func in (("run", cmd_urn_run), ("curve", cmd_urn_curve)):
        p = urn.add_parser(name)
        p.add_argument("--red", type=_non_negative, default=100)
        p.add_argument("--black", type=_non_negative, default=100)
        p.add_argument("--sample-size", type=_positive, default=5)
        p.add_argument("--seed", type=_non_negative, default=0)
        p.add_argument("--trials", type=_positive, default=1 if name == "run" else 1000)
        p.set_defaults(func=func)
        if name == "run":
            p.add_argument("--max-steps", type=_non_negative, default=10_000)
        else:
            p.add_argument("--grid", type=_grid, default=_grid("0,100,200,400,800,1600"))
            p.add_argument("--out", help="CSV path (default stdout)")

    gen = sub.add_parser("genesis", help="initial balance views").add_subparsers(dest="action", required=True)
    p = gen.add_parser("build", help="transparent distribution over synthetic registrants")
    p.add_argument("--registrants", type=_positive, required=True)
    p.add_argument("--total", type=_positive, default=genesis.DEFAULT_TOTAL_SUPPLY)
    p.add_argument("--sponsor-fraction", default="3/10")
    p.add_argument("--max-registrants", type=_positive, default=50_000)
    p.add_argument("--split", choices=("equal", "quota"), default="equal")
    p.add_argument("--unclaimed-to", choices=("recycled", "sponsor"), default="recycled")
    p.add_argument("--seed", type=_non_negative, default=0)
    p.add_argument("--out", help="write the serialized view here")
    p.set_defaults(func=cmd_genesis_build)
    p = gen.add_parser("import", help="proportional import of a legacy snapshot")
    p.add_argument("--snapshot", required=True)
    p.add_argument("--total", type=_positive, default=1_000_000_000)
    p.add_argument("--out", help="write the serialized view here")
    p.set_defaults(func=cmd_genesis_import)

    p = sub.add_parser("load-model", help="package size and verification load")
    p.add_argument("--vesters", type=_positive, help="vester list length (default: derived)")
    p.add_argument("--txs", type=_non_negative, default=480)
    p.add_argument("--tx-rate", type=float, help="transactions per second; overrides --txs")
    p.add_argument("--period", type=_positive, default=600, help="seconds per package")
    p.set_defaults(func=cmd_load_model)

    p = sub.add_parser("params", help="B, M and N for A serious accounts")
    p.add_argument("A", type=int)
    p.set_defaults(func=cmd_params)
    return parser


def main(argv: list[str] | None = None) -> int:
    args = build_parser().parse_args(argv)
    return args.func(args)


if __name__ == "__main__":  # pragma: no cover
    sys.exit(main())
