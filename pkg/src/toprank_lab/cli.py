"""Command-line laboratory: runs, sweeps, and verification suites.

Exit codes: 0 success (and, for verification commands, a passing check),
1 runtime or verification failure, 2 bad flags (including capacity limits
of the exhaustive checks). All verification output is one JSON report per
line with the keys {check, parameters, statistic, bound, pass}. Every
command is deterministic given --seed. The environment variable
TOPRANK_THREADS caps worker parallelism (0 means one worker per CPU).
"""

from __future__ import annotations

import argparse
import json
import sys
from pathlib import Path

import numpy as np

from . import analysis, harness
from .baselines import AGENT_IDS
from .env import (
    CapacityError,
    ClickModelSpec,
    Family,
    check_assumptions,
    load_model_spec,
    save_model_spec,
)
from .toprank import RelationGraph, compute_partition

__all__ = ["main", "main_entry"]


class CliUsageError(ValueError):
    """Flag combination or value that cannot be interpreted."""


def _number(text: str) -> float:
    try:
        return float(text)
    except ValueError:
        raise argparse.ArgumentTypeError(f"not a number: {text!r}") from None


def _integer(text: str) -> int:
    # Accept scientific notation for integer flags, e.g. --n 1e5.
    value = _number(text)
    if not float(value).is_integer():
        raise argparse.ArgumentTypeError(f"expected an integer, got {text!r}")
    return int(value)


def _parse_alpha(text: str) -> tuple[float, ...]:
    try:
        values = tuple(float(x) for x in text.split(",") if x.strip() != "")
    except ValueError:
        raise CliUsageError(f"cannot parse --alpha list {text!r}") from None
    if not values:
        raise CliUsageError("--alpha must contain at least one value")
    return values


def _parse_linspace(text: str) -> tuple[float, ...]:
    parts = text.split(":")
    if len(parts) != 3:
        raise CliUsageError(f"--alpha-linspace expects hi:lo:L, got {text!r}")
    try:
        hi, lo, count = float(parts[0]), float(parts[1]), int(parts[2])
    except ValueError:
        raise CliUsageError(f"cannot parse --alpha-linspace {text!r}") from None
    if count < 1:
        raise CliUsageError("--alpha-linspace needs L >= 1")
    return tuple(float(x) for x in np.linspace(hi, lo, count))


def _parse_edges(text: str) -> RelationGraph:
    """Parse "3>1,5>2" into edges (3,1), (5,2): "j>i" reads "j worse than i"."""
    pairs = []
    for token in text.split(","):
        token = token.strip()
        if not token:
            continue
        parts = token.split(">")
        if len(parts) != 2:
            raise CliUsageError(f"malformed edge {token!r}; expected j>i")
        try:
            pairs.append((int(parts[0]), int(parts[1])))
        except ValueError:
            raise CliUsageError(f"malformed edge {token!r}; expected integer ids") from None
    try:
        return RelationGraph.from_pairs(pairs)
    except ValueError as exc:
        raise CliUsageError(str(exc)) from None


def _model_from_args(args: argparse.Namespace) -> ClickModelSpec:
    if getattr(args, "model_file", None):
        try:
            return load_model_spec(args.model_file)
        except (OSError, ValueError, KeyError) as exc:
            raise CliUsageError(f"cannot load model file {args.model_file}: {exc}") from None
    if args.model is None:
        raise CliUsageError("provide --model (with --alpha/--alpha-linspace) or --model-file")
    if args.alpha is not None and args.alpha_linspace is not None:
        raise CliUsageError("--alpha and --alpha-linspace are mutually exclusive")
    if args.alpha is not None:
        alpha = _parse_alpha(args.alpha)
    elif args.alpha_linspace is not None:
        alpha = _parse_linspace(args.alpha_linspace)
    else:
        raise CliUsageError("an inline model needs --alpha or --alpha-linspace")
    if args.K is None:
        raise CliUsageError("an inline model needs --K")
    chi = _parse_alpha(args.chi) if getattr(args, "chi", None) else None
    try:
        return ClickModelSpec(Family(args.model), alpha, args.K, chi=chi)
    except CapacityError:
        raise
    except ValueError as exc:
        raise CliUsageError(str(exc)) from None


def _add_model_flags(sub: argparse.ArgumentParser) -> None:
    sub.add_argument("--model", choices=["dbm", "pbm", "cascade"], help="model family")
    sub.add_argument("--model-file", type=Path, help="JSON model spec file (alternative to inline flags)")
    sub.add_argument("--alpha", help="comma-separated attraction weights, e.g. 0.9,0.5")
    sub.add_argument("--alpha-linspace", help="hi:lo:L evenly spaced attraction weights")
    sub.add_argument("--K", type=_integer, help="number of displayed positions")
    sub.add_argument("--chi", help="comma-separated examination probabilities (pbm only, length K)")


def _print_report(report: dict) -> None:
    print(json.dumps(report, sort_keys=True))


def _fmt_set(items) -> str:
    return "{" + ",".join(str(i) for i in items) + "}"


def cmd_run(args: argparse.Namespace) -> int:
    model = _model_from_args(args)
    if args.agent not in AGENT_IDS:
        raise CliUsageError(f"unknown agent {args.agent!r}")
    try:
        config = harness.ExperimentConfig(
            model=model,
            agent=args.agent,
            n=args.n,
            runs=args.runs,
            base_seed=args.seed,
            delta=args.delta,
            output_dir=args.out,
            stride=args.stride,
        )
    except ValueError as exc:
        raise CliUsageError(str(exc)) from None
    aggregate = harness.run_batch(config)
    print(f"final mean cumulative regret: {aggregate.final_mean!r}")
    return 0


def cmd_sweep(args: argparse.Namespace) -> int:
    model = _model_from_args(args)
    agents = [a.strip() for a in args.agents.split(",") if a.strip()]
    if not agents:
        raise CliUsageError("--agents must name at least one agent")
    for agent in agents:
        if agent not in AGENT_IDS:
            raise CliUsageError(f"unknown agent {agent!r}")
    configs = []
    for agent in agents:
        try:
            configs.append(
                harness.ExperimentConfig(
                    model=model,
                    agent=agent,
                    n=args.n,
                    runs=args.runs,
                    base_seed=args.seed,
                    delta=args.delta,
                    output_dir=(args.out / agent) if args.out else None,
                    stride=args.stride,
                )
            )
        except ValueError as exc:
            raise CliUsageError(str(exc)) from None
    for agent, config in zip(agents, configs):
        aggregate = harness.run_batch(config)
        print(
            json.dumps(
                {
                    "agent": agent,
                    "final_mean_cum_regret": aggregate.final_mean,
                    "stderr": aggregate.final_stderr,
                    "runs": aggregate.runs,
                },
                sort_keys=True,
            )
        )
    return 0


def cmd_partition_demo(args: argparse.Namespace) -> int:
    graph = _parse_edges(args.edges)
    try:
        partition = compute_partition(graph, args.L)
    except ValueError as exc:
        raise CliUsageError(str(exc)) from None
    for d, (block, slots) in enumerate(zip(partition.blocks, partition.slots), start=1):
        print(f"P{d}={_fmt_set(block)} I{d}={_fmt_set(slots)}")
    if partition.cycle_fallback:
        print(
            "warning: relation contains a cycle; remaining items were grouped "
            "into the final block",
            file=sys.stderr,
        )
    return 0


def cmd_check_assumptions(args: argparse.Namespace) -> int:
    model = _model_from_args(args)
    report = check_assumptions(model, tol=args.tol)
    payload = {
        "check": "click-model-assumptions",
        "parameters": {
            "family": model.family.value,
            "alpha": list(model.alpha),
            "K": model.K,
            "tol": args.tol,
        },
        "statistic": sum(len(v) for v in report.counterexamples.values()),
        "bound": 0,
        "pass": report.passed,
        "detail": report.to_dict(),
    }
    _print_report(payload)
    return 0 if report.passed else 1


def cmd_verify_concentration(args: argparse.Namespace) -> int:
    try:
        spec = analysis.ConcentrationTrialSpec(
            n=args.n,
            p_neg=args.p_neg,
            p_zero=max(0.0, 1.0 - args.p_neg - args.p_pos),
            p_pos=args.p_pos,
            trials=args.trials,
            delta=args.delta,
        )
    except ValueError as exc:
        raise CliUsageError(str(exc)) from None
    report = analysis.concentration_report(spec, args.seed)
    _print_report(report)
    return 0 if report["pass"] else 1


def cmd_verify_lemma1(args: argparse.Namespace) -> int:
    model = _model_from_args(args)
    partition = compute_partition(RelationGraph(frozenset()), model.L)
    if not (1 <= args.i <= model.L and 1 <= args.j <= model.L) or args.i == args.j:
        raise CliUsageError(f"--i and --j must be distinct items in 1..{model.L}")
    report = analysis.lemma1_report(
        model, partition, 1, args.i, args.j, args.samples, args.seed
    )
    _print_report(report)
    return 0 if report["pass"] else 1


def cmd_lowerbound(args: argparse.Namespace) -> int:
    m = None
    if args.m is not None:
        try:
            m = tuple(int(x) for x in args.m.split(","))
        except ValueError:
            raise CliUsageError(f"cannot parse --m list {args.m!r}") from None
    try:
        instance = analysis.make_lowerbound_instance(
            args.N, args.K, args.n, m=m, rng=np.random.default_rng(args.seed)
        )
    except ValueError as exc:
        raise CliUsageError(str(exc)) from None
    if args.out is not None:
        save_model_spec(instance.model, args.out)
    _print_report(
        {
            "check": "lowerbound-instance",
            "parameters": {"N": args.N, "K": args.K, "n": args.n, "m": list(instance.m)},
            "statistic": instance.Delta,
            "bound": analysis.theorem2_lower_bound(instance.K, instance.L, instance.n),
            "pass": True,
        }
    )
    return 0


def cmd_bounds(args: argparse.Namespace) -> int:
    if args.alpha is not None and args.alpha_linspace is not None:
        raise CliUsageError("--alpha and --alpha-linspace are mutually exclusive")
    if args.alpha is not None:
        alpha = _parse_alpha(args.alpha)
    elif args.alpha_linspace is not None:
        alpha = _parse_linspace(args.alpha_linspace)
    else:
        raise CliUsageError("bounds needs --alpha or --alpha-linspace")
    delta = args.delta if args.delta is not None else 1.0 / args.n
    try:
        inputs = analysis.BoundInputs(alpha=alpha, K=args.K, n=args.n, delta=delta)
    except ValueError as exc:
        raise CliUsageError(str(exc)) from None
    L = len(alpha)
    strictly_decreasing = all(alpha[x] > alpha[x + 1] for x in range(L - 1))
    if strictly_decreasing:
        _print_report(
            {
                "check": "gap-dependent-regret-ceiling",
                "parameters": {"alpha": list(alpha), "K": args.K, "n": args.n, "delta": delta},
                "statistic": analysis.theorem1_bound(inputs),
                "bound": None,
                "pass": True,
            }
        )
    _print_report(
        {
            "check": "gap-free-regret-ceiling",
            "parameters": {"K": args.K, "L": L, "n": args.n, "delta": delta},
            "statistic": analysis.theorem1_minimax_bound(args.K, L, args.n, delta),
            "bound": None,
            "pass": True,
        }
    )
    return 0


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="toprank-lab",
        description="Online ranking laboratory: simulate click models, run ranking "
        "agents, and verify the learner's guarantees empirically.",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    p_run = sub.add_parser("run", help="run one agent on one model and log regret")
    _add_model_flags(p_run)
    p_run.add_argument("--agent", required=True, choices=list(AGENT_IDS))
    p_run.add_argument("--n", type=_integer, required=True, help="horizon (rounds)")
    p_run.add_argument("--runs", type=_integer, default=1, help="seeded replicates")
    p_run.add_argument("--seed", type=_integer, default=0, help="base seed; run r uses seed+r")
    p_run.add_argument("--delta", type=_number, default=None, help="confidence (default 1/n)")
    p_run.add_argument("--stride", type=_integer, default=None, help="logging stride (default ~100 checkpoints)")
    p_run.add_argument("--out", type=Path, default=None, help="directory for CSV/JSON outputs")
    p_run.set_defaults(handler=cmd_run)

    p_sweep = sub.add_parser("sweep", help="run several agents on one model with shared seeds")
    _add_model_flags(p_sweep)
    p_sweep.add_argument("--agents", required=True, help="comma-separated agent ids")
    p_sweep.add_argument("--n", type=_integer, required=True)
    p_sweep.add_argument("--runs", type=_integer, default=1)
    p_sweep.add_argument("--seed", type=_integer, default=0)
    p_sweep.add_argument("--delta", type=_number, default=None)
    p_sweep.add_argument("--stride", type=_integer, default=None)
    p_sweep.add_argument("--out", type=Path, default=None)
    p_sweep.set_defaults(handler=cmd_sweep)

    p_demo = sub.add_parser("partition-demo", help="show the block partition of a relation")
    p_demo.add_argument("--L", type=_integer, required=True, help="number of items")
    p_demo.add_argument("--edges", default="", help='comma-separated edges "j>i" (j worse than i)')
    p_demo.set_defaults(handler=cmd_partition_demo)

    p_check = sub.add_parser("check-assumptions", help="exhaustively verify assumptions A1-A4 (L <= 7)")
    _add_model_flags(p_check)
    p_check.add_argument("--tol", type=_number, default=1e-12, help="comparison slack")
    p_check.set_defaults(handler=cmd_check_assumptions)

    p_conc = sub.add_parser("verify-concentration", help="Monte-Carlo check of the admission boundary")
    p_conc.add_argument("--n", type=_integer, required=True, help="steps per trial")
    p_conc.add_argument("--trials", type=_integer, required=True)
    p_conc.add_argument("--delta", type=_number, required=True)
    p_conc.add_argument("--p-pos", type=_number, default=0.5, help="P(step = +1)")
    p_conc.add_argument("--p-neg", type=_number, default=0.5, help="P(step = -1)")
    p_conc.add_argument("--seed", type=_integer, default=0)
    p_conc.set_defaults(handler=cmd_verify_concentration)

    p_lem1 = sub.add_parser("verify-lemma1", help="conditional pairwise bias vs. its closed-form floor")
    _add_model_flags(p_lem1)
    p_lem1.add_argument("--i", type=_integer, default=1, help="first item of the pair")
    p_lem1.add_argument("--j", type=_integer, default=2, help="second item of the pair")
    p_lem1.add_argument("--samples", type=_integer, default=100_000)
    p_lem1.add_argument("--seed", type=_integer, default=0)
    p_lem1.set_defaults(handler=cmd_verify_lemma1)

    p_low = sub.add_parser("lowerbound", help="build a hard minimax instance and its regret floor")
    p_low.add_argument("--N", type=_integer, required=True, help="items per block (>= 8)")
    p_low.add_argument("--K", type=_integer, required=True, help="blocks / displayed positions")
    p_low.add_argument("--n", type=_integer, required=True, help="horizon")
    p_low.add_argument("--m", default=None, help="comma-separated planted winners (default: random)")
    p_low.add_argument("--seed", type=_integer, default=0)
    p_low.add_argument("--out", type=Path, default=None, help="write the instance's model JSON here")
    p_low.set_defaults(handler=cmd_lowerbound)

    p_bounds = sub.add_parser("bounds", help="evaluate the closed-form regret ceilings")
    p_bounds.add_argument("--alpha", help="comma-separated attraction weights")
    p_bounds.add_argument("--alpha-linspace", help="hi:lo:L evenly spaced attraction weights")
    p_bounds.add_argument("--K", type=_integer, required=True)
    p_bounds.add_argument("--n", type=_integer, required=True)
    p_bounds.add_argument("--delta", type=_number, default=None, help="confidence (default 1/n)")
    p_bounds.set_defaults(handler=cmd_bounds)

    return parser


def main(argv: list[str] | None = None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return args.handler(args)
    except (CliUsageError, CapacityError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    except Exception as exc:  # runtime failure
        print(f"error: {exc}", file=sys.stderr)
        return 1


def main_entry() -> None:
    raise SystemExit(main(sys.argv[1:]))
