"""Command-line front door: simulations, ensembles, exact oracles, checks.

Exit codes: 0 success, 1 usage or validation problem, 2 a verification or
hard bound check failed.  Seeds are always explicit; no command falls back
to entropy, so every emitted number is reproducible from the flags alone.
"""

from __future__ import annotations

import argparse
import io
import json
import sys
import time
from fractions import Fraction
from pathlib import Path
from typing import Optional, Sequence

from . import __version__, chain, ensemble, oracle, process, verification

#: Hard bound checks are only enforced (exit 2) at horizons where the
#: asymptotic bands are meaningful; shorter runs still report them.
BOUND_ENFORCEMENT_MIN_T = 1000

EXIT_OK = 0
EXIT_USAGE = 1
EXIT_CHECK_FAILED = 2


class _UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):  # argparse defaults to exit code 2
        raise _UsageError(message)


def _provenance(args: argparse.Namespace, elapsed: float) -> dict:
    flags = {k: v for k, v in vars(args).items() if k != "func"}
    return {"version": __version__, "elapsed_seconds": elapsed, "flags": flags}


def _write_text(path: Path, text: str) -> None:
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, "w", newline="") as fh:
        fh.write(text)


def _write_json(path: Path, doc: dict) -> None:
    _write_text(path, json.dumps(doc, indent=2, sort_keys=True) + "\n")


def _parse_t_list(text: str) -> list[int]:
    try:
        values = [int(part) for part in text.split(",") if part.strip()]
    except ValueError:
        raise _UsageError(f"bad t list {text!r}") from None
    if not values:
        raise _UsageError("empty t list")
    return values


def _parse_deltas(text: str) -> tuple[float, ...]:
    try:
        values = tuple(float(part) for part in text.split(",") if part.strip())
    except ValueError:
        raise _UsageError(f"bad delta list {text!r}") from None
    if not values:
        raise _UsageError("empty delta list")
    return values


# -- subcommands ---------------------------------------------------------------


def _cmd_simulate(args) -> int:
    if args.t < 1:
        raise _UsageError(f"--t must be >= 1, got {args.t}")
    cadence = args.cadence if args.cadence is not None else max(1, args.t // 100_000)
    start = time.perf_counter()
    record = process.run_trajectory(args.t, args.seed, cadence=cadence)
    elapsed = time.perf_counter() - start
    state = record.final_state
    ratio = Fraction(state.total_olives, args.t)
    lo, hi = Fraction(1, 342), Fraction(2, 3)
    summary = {
        "final_olives": state.total_olives,
        "plates": state.num_plates,
        "nonempty": state.num_nonempty,
        "olives_over_t": float(ratio),
        "olives_over_t_exact": f"{ratio.numerator}/{ratio.denominator}",
        "bounds_band": [str(lo), str(hi)],
        "within_bounds": lo <= ratio <= hi,
        "t_plate": state.plate_moves,
        "tau1": record.tau.get(1, 0),
        "two_to_one": record.num_returns,
        "max_other_olives": record.max_other_olives,
        "first_plate_olives": record.first_plate_olives,
        "series_rows": len(record.series),
    }
    if args.format == "json":
        doc = {"summary": summary, "provenance": _provenance(args, elapsed)}
        text = json.dumps(doc, indent=2, sort_keys=True) + "\n"
        if args.out:
            _write_text(Path(args.out), text)
        else:
            sys.stdout.write(text)
    else:
        buf = io.StringIO()
        process.write_trajectory_csv(record, buf)
        if args.out:
            _write_text(Path(args.out), buf.getvalue())
            _write_json(Path(args.out + ".meta.json"), _provenance(args, elapsed))
        else:
            sys.stdout.write(buf.getvalue())
    line = (
        f"simulate t={args.t} seed={args.seed}: O={state.total_olives} "
        f"plates={state.num_plates} O/t={float(ratio):.6f}"
    )
    # Keep stdout machine-readable when the payload was written to it.
    print(line, file=sys.stdout if args.out else sys.stderr)
    return EXIT_OK


def _cmd_ensemble(args) -> int:
    deltas = _parse_deltas(args.deltas) if args.deltas else (0.005, 0.01, 0.02, 0.05)
    try:
        config = ensemble.EnsembleConfig(
            t=args.t,
            replicas=args.replicas,
            master_seed=args.seed,
            deltas=deltas,
            cadence=args.cadence or 0,
        )
    except ValueError as exc:
        raise _UsageError(str(exc)) from None
    start = time.perf_counter()
    stats = ensemble.run_ensemble(config, threads=args.threads)
    elapsed = time.perf_counter() - start
    doc = ensemble.summary_json(stats, elapsed, __version__)
    doc["provenance"]["flags"] = _provenance(args, elapsed)["flags"]
    if args.out:
        buf = io.StringIO()
        ensemble.write_ensemble_csv(stats, buf)
        _write_text(Path(args.out + ".csv"), buf.getvalue())
        _write_json(Path(args.out + ".summary.json"), doc)
    else:
        sys.stdout.write(json.dumps(doc, indent=2, sort_keys=True) + "\n")
    checks = doc["checks"]
    print(
        f"ensemble t={config.t} R={config.replicas}: mean O/t="
        f"{doc['estimates']['ratio']:.6f} sd={checks['sd']:.2f} "
        f"bounds_pass={checks['bounds_pass']} tau1_pass={checks['tau1_pass']}"
    )
    if config.t >= BOUND_ENFORCEMENT_MIN_T and not (checks["bounds_pass"] and checks["tau1_pass"]):
        print("hard bound check failed", file=sys.stderr)
        return EXIT_CHECK_FAILED
    return EXIT_OK


def _cmd_chain(args) -> int:
    if args.t_max < 2:
        raise _UsageError(f"--t-max must be >= 2, got {args.t_max}")
    if args.simulate_steps < 1:
        raise _UsageError(f"--simulate-steps must be >= 1, got {args.simulate_steps}")
    start = time.perf_counter()
    report = chain.chain_report(args.t_max, args.simulate_steps, args.seed)
    elapsed = time.perf_counter() - start
    report["provenance"] = _provenance(args, elapsed)
    if args.out:
        buf = io.StringIO()
        chain.write_chain_csv(args.t_max, buf)
        _write_text(Path(args.out + ".csv"), buf.getvalue())
        _write_json(Path(args.out + ".report.json"), report)
    else:
        sys.stdout.write(json.dumps(report, indent=2, sort_keys=True) + "\n")
    mrt = report["mean_return_time"]
    sim = report["simulation"]
    verdict = report["return_rate_inequality"]
    print(
        f"mean return time: validated {mrt['validated_stationary']['exact']} "
        f"(series in {mrt['series_interval']}, tail {mrt['series_tail_bound']:.2e}); "
        f"published claim {mrt['published_claim']['exact']}"
    )
    print(
        f"simulated N11/t = {sim['n11_over_t']:.6f} over {sim['steps']} steps; "
        f"N11/t >= 1/19 holds: {verdict['holds']}"
    )
    return EXIT_OK


def _cmd_exact(args) -> int:
    if args.t < 1:
        raise _UsageError(f"--t must be >= 1, got {args.t}")
    start = time.perf_counter()
    try:
        rows = oracle.olive_distribution_table(args.t, budget=args.budget)
    except oracle.BudgetExceededError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    elapsed = time.perf_counter() - start
    mean = sum((o * p for o, p in rows[-1][1].items()), Fraction(0))
    if args.out:
        buf = io.StringIO()
        oracle.write_olive_pmf_csv(rows, buf)
        _write_text(Path(args.out + ".pmf.csv"), buf.getvalue())
        buf = io.StringIO()
        oracle.write_expected_olives_csv(rows, buf)
        _write_text(Path(args.out + ".mean.csv"), buf.getvalue())
        _write_json(Path(args.out + ".meta.json"), _provenance(args, elapsed))
    print(
        f"exact t={args.t}: E(O_t) = {mean.numerator}/{mean.denominator} "
        f"~= {float(mean):.6f} ({len(rows[-1][1])} support points)"
    )
    return EXIT_OK


def _cmd_verify(args) -> int:
    start = time.perf_counter()
    results = verification.run_suite(args.level, emit=print)
    failed = [r for r in results if not r.passed]
    print(f"{len(results) - len(failed)}/{len(results)} checks passed")
    if args.out:
        doc = verification.suite_report(results, args.level)
        doc["provenance"] = _provenance(args, time.perf_counter() - start)
        _write_json(Path(args.out + ".verify.json"), doc)
    return EXIT_CHECK_FAILED if failed else EXIT_OK


def _cmd_sweep(args) -> int:
    t_list = _parse_t_list(args.t_list)
    if any(t < 1000 for t in t_list):
        raise _UsageError("sweep horizons must be >= 1000")
    if args.replicas < 1:
        raise _UsageError(f"--replicas must be >= 1, got {args.replicas}")
    start = time.perf_counter()
    c_report = ensemble.estimate_c(t_list, args.replicas, args.seed, threads=args.threads)
    growth = ensemble.log_growth_check(
        sorted(set(t_list)), min(args.replicas, 50), args.seed, threads=args.threads
    )
    elapsed = time.perf_counter() - start
    doc = {
        "c_estimate": c_report,
        "log_growth": growth,
        "provenance": _provenance(args, elapsed),
    }
    if args.out:
        _write_json(Path(args.out + ".sweep.json"), doc)
    else:
        sys.stdout.write(json.dumps(doc, indent=2, sort_keys=True) + "\n")
    for row in c_report["rows"]:
        print(
            f"t={row['t']}: c_hat={row['ratio']:.6f} "
            f"CI99=[{row['ci_low']:.6f}, {row['ci_high']:.6f}]"
        )
    print(f"max pairwise ratio difference: {c_report['max_ratio_difference']:.6f}")
    return EXIT_OK


# -- parser --------------------------------------------------------------------


def build_parser() -> _Parser:
    parser = _Parser(
        prog="olivetable",
        description="Simulation and exact-analytics lab for the random plates-and-olives process.",
    )
    parser.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("simulate", help="run one trajectory")
    p.add_argument("--t", type=int, required=True, help="number of steps (>= 1)")
    p.add_argument("--seed", type=int, required=True)
    p.add_argument("--cadence", type=int, default=None, help="series sampling stride (default auto)")
    p.add_argument("--out", type=str, default=None, help="output file path")
    p.add_argument("--format", choices=["csv", "json"], default="csv")
    p.set_defaults(func=_cmd_simulate)

    p = sub.add_parser("ensemble", help="run replicated trajectories")
    p.add_argument("--t", type=int, required=True)
    p.add_argument("--replicas", type=int, required=True)
    p.add_argument("--seed", type=int, required=True)
    p.add_argument("--deltas", type=str, default=None, help="comma list, e.g. 0.01,0.02")
    p.add_argument("--cadence", type=int, default=0)
    p.add_argument("--threads", type=int, default=None)
    p.add_argument("--out", type=str, default=None, help="output prefix (.csv / .summary.json)")
    p.set_defaults(func=_cmd_ensemble)

    p = sub.add_parser("chain", help="auxiliary-walk analytics and simulation")
    p.add_argument("--t-max", dest="t_max", type=int, required=True, help="pmf horizon (>= 2)")
    p.add_argument("--simulate-steps", dest="simulate_steps", type=int, default=1_000_000)
    p.add_argument("--seed", type=int, required=True)
    p.add_argument("--out", type=str, default=None, help="output prefix (.csv / .report.json)")
    p.set_defaults(func=_cmd_chain)

    p = sub.add_parser("exact", help="exact olive distribution by pushforward")
    p.add_argument("--t", type=int, required=True)
    p.add_argument("--budget", type=int, default=oracle.DEFAULT_STATE_BUDGET)
    p.add_argument("--out", type=str, default=None, help="output prefix (.pmf.csv / .mean.csv)")
    p.set_defaults(func=_cmd_exact)

    p = sub.add_parser("verify", help="run the exact verification suite")
    p.add_argument("--level", choices=["quick", "full"], default="quick")
    p.add_argument("--out", type=str, default=None, help="output prefix (.verify.json)")
    p.set_defaults(func=_cmd_verify)

    p = sub.add_parser("sweep", help="linearity-constant and log-growth sweep")
    p.add_argument("--t-list", dest="t_list", type=str, required=True, help="comma list of horizons")
    p.add_argument("--replicas", type=int, required=True)
    p.add_argument("--seed", type=int, required=True)
    p.add_argument("--threads", type=int, default=None)
    p.add_argument("--out", type=str, default=None, help="output prefix (.sweep.json)")
    p.set_defaults(func=_cmd_sweep)

    return parser


def main(argv: Optional[Sequence[str]] = None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
        return args.func(args)
    except _UsageError as exc:
        print(f"error: {exc}", file=sys.stderr)
        parser.print_usage(sys.stderr)
        return EXIT_USAGE
    except SystemExit as exc:  # --help / --version
        code = exc.code or 0
        return EXIT_USAGE if code not in (0,) else EXIT_OK
    except (ValueError, process.InvalidMoveError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_USAGE


if __name__ == "__main__":
    sys.exit(main())
