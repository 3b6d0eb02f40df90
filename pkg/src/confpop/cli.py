"""Command-line interface: ``solve``, ``assess`` and ``simulate``.

Exit status is 0 on success, 2 when no plan is found and 1 on input errors.
Statistics are written as ``key=value`` lines; wall-clock time is left out so
identical invocations give identical bytes.
"""

from __future__ import annotations

import argparse
import logging
import sys
from pathlib import Path

from .assess import DEFAULT_PARTICLE_CAP, ParticleBlowup, ground_plan, linearize, propagate, simulate_actions
from .domain import Problem
from .goals import GOAL_ORDER_MODES, IncrementalResult, PhaseFailure, incremental_solve, read_goal_order
from .heuristics import STRATEGIES
from .plan import transitive_reduction
from .ppddl import (
    GOAL_NAME,
    INIT_NAME,
    PPDDLError,
    format_probability,
    listing_actions,
    listing_order,
    parse_domain,
    parse_problem,
    read_plan,
    write_listing,
    write_plan,
)
from .search import NoPlanFound, SearchConfig, TerminationCriteria, probapop

HEURISTICS = ("ADD", "ADDR")


class InputError(Exception):
    """Bad flags or unreadable input; reported with exit status 1."""


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        self.exit(1, f"{self.prog}: error: {message}\n")


def _read(path: str) -> str:
    try:
        return Path(path).read_text(encoding="utf-8")
    except OSError as err:
        raise InputError(f"cannot read {path}: {err.strerror}") from None


def _load(args) -> Problem:
    domain = parse_domain(_read(args.domain))
    return parse_problem(_read(args.problem), domain)


def _emit(text: str, path: str | None) -> None:
    if path is None:
        sys.stdout.write(text)
    else:
        try:
            Path(path).write_text(text, encoding="utf-8")
        except OSError as err:
            raise InputError(f"cannot write {path}: {err.strerror}") from None


def _stats_text(stats: dict) -> str:
    def fmt(v):
        if isinstance(v, float):
            return format_probability(v)
        if isinstance(v, bool):
            return str(v).lower()
        return str(v)

    return "".join(f"{k}={fmt(v)}\n" for k, v in stats.items())


def _write_stats(stats: dict, path: str | None) -> None:
    text = _stats_text(stats)
    if path is None:
        sys.stderr.write(text)
    else:
        _emit(text, path)


# ---------------------------------------------------------------------------
# solve


def _config(args) -> SearchConfig:
    if args.strategy not in STRATEGIES:
        raise InputError(f"unknown strategy {args.strategy!r}; valid names: {', '.join(STRATEGIES)}")
    for name, value in (("timeout", args.timeout), ("node-limit", args.node_limit)):
        if value is not None and value <= 0:
            raise InputError(f"--{name} must be positive")
    try:
        criteria = TerminationCriteria(
            time_limit=args.timeout,
            node_limit=args.node_limit,
            probability_threshold=args.prob_threshold,
            progress_epsilon=args.epsilon,
        )
    except ValueError as err:
        raise InputError(str(err)) from None
    return SearchConfig(heuristic=args.heuristic, strategy=args.strategy, reopen=args.reopen, criteria=criteria)


def _incremental_listing(result: IncrementalResult) -> str:
    """Phase sub-plans renumbered consecutively; every step of a phase precedes the next phase."""
    steps, orderings, phases = {}, [], []
    previous: list[int] = []
    offset = 0
    for ph in result.phases:
        plan = ph.search.best_plan
        _, ground = ground_plan(plan)
        body = linearize(plan)
        number = {sid: offset + i for i, sid in enumerate(body, 1)}
        for sid in body:
            act = ground[sid]
            steps[number[sid]] = (act.name, tuple(v for v, _ in act.parameters))
        reduced = transitive_reduction(plan.ord, body)
        orderings.extend((number[a], number[b]) for a, b in reduced)
        sources = [number[s] for s in body if not any(b == s for _, b in reduced)]
        orderings.extend((a, b) for a in previous for b in sources)
        previous = [number[s] for s in body if not any(a == s for a, _ in reduced)] or previous
        phases.append([number[s] for s in body])
        offset += len(body)
    return write_listing(
        steps,
        orderings,
        probability=result.probability,
        linearization=range(1, offset + 1),
        phases=phases,
    )


def cmd_solve(args) -> int:
    config = _config(args)
    problem = _load(args)
    stats: dict = {
        "domain": problem.domain.name,
        "problem": problem.name,
        "heuristic": config.heuristic,
        "strategy": config.strategy,
        "reopen": config.reopen,
        "incremental": bool(args.incremental),
        "seed": args.seed,
    }
    if args.incremental:
        if args.goal_order == "file":
            if args.goal_file is None:
                raise InputError("--goal-order file needs --goal-file PATH")
            text = _read(args.goal_file)
            try:
                order = read_goal_order(text, problem)
            except PPDDLError:
                raise
            except ValueError as err:
                raise InputError(str(err)) from None
        else:
            order = args.goal_order
        try:
            result = incremental_solve(problem, config, order, seed=args.seed)
        except PhaseFailure as err:
            stats.update(termination_reason="phase_failure", failed_phase=err.index, failed_goal=str(err.goal))
            _write_stats(stats, args.stats)
            print(f"no plan: {err}", file=sys.stderr)
            return 2
        stats["goal_order"] = " ".join(str(g) for g in result.goal_order)
        stats.update(result.statistics())
        _emit(_incremental_listing(result), args.plan_out)
        _write_stats(stats, args.stats)
        return 0
    try:
        result = probapop(problem, config)
    except NoPlanFound as err:
        stats.update(termination_reason="exhausted")
        _write_stats(stats, args.stats)
        print(f"no plan: {err}", file=sys.stderr)
        return 2
    stats.update(result.statistics())
    if result.best_plan is None:
        _write_stats(stats, args.stats)
        print(f"no plan: search stopped ({result.termination_reason})", file=sys.stderr)
        return 2
    stats["accepted_risks"] = len(result.best_plan.accepted_risks)
    _emit(write_plan(result.best_plan, result.best_probability), args.plan_out)
    _write_stats(stats, args.stats)
    return 0


# ---------------------------------------------------------------------------
# assess / simulate


def _plan_actions(args, problem: Problem):
    listing = read_plan(_read(args.plan))
    return listing, listing_actions(listing, problem)


def cmd_assess(args) -> int:
    problem = _load(args)
    listing, actions = _plan_actions(args, problem)
    order = listing_order(listing)
    position = {sid: i for i, sid in enumerate(order)}
    position[GOAL_NAME] = len(order)
    checks: dict[int, list] = {}
    for producer, lit, consumer in listing.links:
        key = consumer if consumer == GOAL_NAME else _step_id(consumer, listing)
        checks.setdefault(position[key], []).append(((producer, lit, consumer), lit))
    for g in problem.goal:
        checks.setdefault(len(order), []).append((("goal", g), g))
    try:
        success, support, _ = propagate(problem, actions, checks, DEFAULT_PARTICLE_CAP)
    except ParticleBlowup as err:
        raise InputError(f"exact assessment needs too many particles: {err}") from None
    lines = [f"prob {format_probability(success)}"]
    for producer, lit, consumer in listing.links:
        lines.append(f"support {producer} {lit} {consumer} {format_probability(support[(producer, lit, consumer)])}")
    for g in problem.goal:
        lines.append(f"goal {g} {format_probability(support[('goal', g)])}")
    sys.stdout.write("\n".join(lines) + "\n")
    return 0


def _step_id(name: str, listing) -> int:
    if name == INIT_NAME:
        raise InputError("a link cannot be consumed by the initial step")
    try:
        sid = int(name)
    except ValueError:
        raise InputError(f"unknown step {name!r} in link") from None
    if sid not in listing.steps:
        raise InputError(f"unknown step {name!r} in link")
    return sid


def cmd_simulate(args) -> int:
    if args.trials <= 0:
        raise InputError("--trials must be positive")
    problem = _load(args)
    _, actions = _plan_actions(args, problem)
    count, rate = simulate_actions(problem, actions, args.trials, args.seed)
    sys.stdout.write(_stats_text({"trials": args.trials, "seed": args.seed, "successes": count, "rate": rate}))
    return 0


# ---------------------------------------------------------------------------


def build_parser() -> argparse.ArgumentParser:
    parser = _Parser(prog="confpop", description="Conformant probabilistic partial-order planner.")
    parser.add_argument("-v", "--verbose", action="store_true", help="log search progress to standard error")
    sub = parser.add_subparsers(dest="command", required=True, parser_class=_Parser)

    def files(p):
        p.add_argument("domain", help="PPDDL domain file")
        p.add_argument("problem", help="PPDDL problem file")

    solve = sub.add_parser("solve", help="search for a maximal-probability plan")
    files(solve)
    solve.add_argument("--heuristic", choices=HEURISTICS, default="ADD")
    solve.add_argument("--strategy", default="static", help="flaw selection strategy: " + ", ".join(STRATEGIES))
    solve.add_argument("--reopen", choices=("selective", "all"), default="selective")
    solve.add_argument("--timeout", type=float, default=300.0, help="seconds (default 300)")
    solve.add_argument("--node-limit", type=int)
    solve.add_argument("--prob-threshold", type=float)
    solve.add_argument("--epsilon", type=float, default=1e-6, help="minimum probability gain per round")
    solve.add_argument("--incremental", action="store_true", help="plan goal by goal")
    solve.add_argument("--goal-order", choices=GOAL_ORDER_MODES, default="auto")
    solve.add_argument("--goal-file", help="goal order, one goal literal per line (with --goal-order file)")
    solve.add_argument("--seed", type=int, default=0, help="seed for any simulation fallback")
    solve.add_argument("--stats", help="write key=value statistics here instead of standard error")
    solve.add_argument("--plan-out", help="write the plan listing here instead of standard output")
    solve.set_defaults(run=cmd_solve)

    assess = sub.add_parser("assess", help="exact success probability of a plan listing")
    files(assess)
    assess.add_argument("plan", help="plan listing")
    assess.set_defaults(run=cmd_assess)

    simulate = sub.add_parser("simulate", help="Monte Carlo estimate of a plan listing")
    files(simulate)
    simulate.add_argument("plan", help="plan listing")
    simulate.add_argument("--trials", type=int, default=1000)
    simulate.add_argument("--seed", type=int, default=0)
    simulate.set_defaults(run=cmd_simulate)
    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(levelname)s %(message)s")
    try:
        return args.run(args)
    except (InputError, PPDDLError) as err:
        print(f"error: {err}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
