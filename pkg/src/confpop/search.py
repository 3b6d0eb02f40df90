"""Plan-space A* with plan improvement by reopening conditions."""

from __future__ import annotations

import contextlib
import gc
import heapq
import itertools
import logging
import math
import time
from dataclasses import dataclass, field

from .assess import DEFAULT_PARTICLE_CAP, Assessment, UngroundablePlan, assess
from .domain import Problem
from .heuristics import RelaxedGraph, build_relaxed_graph, get_strategy, ground_splits, rank, select_flaw
from .plan import Plan, make_minimal_plan, validate_plan
from .refine import refine_plan, reopen_conditions

log = logging.getLogger(__name__)


class NoPlanFound(Exception):
    pass


@dataclass
class TerminationCriteria:
    time_limit: float | None = None
    node_limit: int | None = None
    probability_threshold: float | None = None
    progress_epsilon: float | None = 1e-6

    def __post_init__(self):
        if all(
            v is None
            for v in (self.time_limit, self.node_limit, self.probability_threshold, self.progress_epsilon)
        ):
            raise ValueError("at least one termination criterion must be set")
        if self.progress_epsilon is not None and not 0 <= self.progress_epsilon < 1:
            raise ValueError("progress_epsilon must lie in [0, 1)")
        if self.probability_threshold is not None and not 0 <= self.probability_threshold <= 1:
            raise ValueError("probability_threshold must lie in [0, 1]")


@dataclass
class SearchConfig:
    heuristic: str = "ADD"
    strategy: str = "static"
    reopen: str = "selective"
    criteria: TerminationCriteria = field(default_factory=TerminationCriteria)
    improve: bool = True
    # nodes one improvement round may generate before giving up on it
    round_node_limit: int | None = 5000
    particle_cap: int = DEFAULT_PARTICLE_CAP
    validate: bool = False
    # drop children identical to a plan generated earlier in the same round
    dedupe: bool = True


@dataclass
class SearchResult:
    best_plan: Plan | None
    best_probability: float
    assessment: Assessment | None = None
    nodes_generated: int = 0
    nodes_expanded: int = 0
    queue_peak: int = 0
    wall_time: float = 0.0
    improvement_rounds: int = 0
    termination_reason: str = ""
    progress: list[dict] = field(default_factory=list)
    reopened: list[list] = field(default_factory=list)

    def statistics(self) -> dict[str, object]:
        """Deterministic statistics (wall time is excluded)."""
        return {
            "nodes_generated": self.nodes_generated,
            "nodes_expanded": self.nodes_expanded,
            "queue_peak": self.queue_peak,
            "improvement_rounds": self.improvement_rounds,
            "final_probability": self.best_probability,
            "steps": self.best_plan.g if self.best_plan is not None else -1,
            "termination_reason": self.termination_reason,
        }


class PlanQueue:
    """Priority queue ordered by f, then g, then insertion order."""

    def __init__(self):
        self._heap: list = []
        self._tick = itertools.count()

    def push(self, plan: Plan, f: float) -> None:
        heapq.heappush(self._heap, (f, plan.g, next(self._tick), plan))

    def pop(self) -> Plan:
        return heapq.heappop(self._heap)[-1]

    def __len__(self) -> int:
        return len(self._heap)


def merge(queue: PlanQueue, children, graph: RelaxedGraph, heuristic: str, seen: set | None = None) -> int:
    """Insert ranked children; plans with infinite rank are dropped. Returns how many were kept.

    With ``seen``, children equal to an already queued plan are dropped too.
    """
    kept = 0
    for child in children:
        if seen is not None:
            key = child.signature()
            if key in seen:
                continue
            seen.add(key)
        f = rank(child, graph, heuristic)
        if f == math.inf:
            continue
        queue.push(child, f)
        kept += 1
    return kept


@contextlib.contextmanager
def _gc_paused():
    """Suspend cyclic garbage collection; plans hold no reference cycles, and
    full collections over a large open list dominate the run time otherwise."""
    enabled = gc.isenabled()
    gc.disable()
    try:
        yield
    finally:
        if enabled:
            gc.enable()


def probapop(problem: Problem, config: SearchConfig | None = None, graph: RelaxedGraph | None = None) -> SearchResult:
    """Find a maximal-probability plan; see ``SearchConfig`` for the knobs.

    The first flawless plan found is assessed and becomes the base plan; the
    queue is then discarded and every later round refines the reopened best
    plan. Raises ``NoPlanFound`` when the queue empties before any flawless
    plan is found.
    """
    with _gc_paused():
        return _probapop(problem, config, graph)


def _probapop(problem: Problem, config: SearchConfig | None, graph: RelaxedGraph | None) -> SearchResult:
    config = config or SearchConfig()
    crit = config.criteria
    strategy = get_strategy(config.strategy)
    if graph is None:
        graph = build_relaxed_graph(ground_splits(problem), problem.init)
    start = time.monotonic()
    result = SearchResult(None, 0.0)
    queue = PlanQueue()
    seen: set | None = set() if config.dedupe else None
    minimal = make_minimal_plan(problem)
    merge(queue, [minimal], graph, config.heuristic, seen)
    result.queue_peak = len(queue)
    round_start = 0
    base_links = -1

    def finish(reason: str) -> SearchResult:
        result.termination_reason = reason
        result.wall_time = time.monotonic() - start
        if result.best_plan is None and reason == "exhausted":
            raise NoPlanFound(f"no plan for {problem.name}")
        return result

    while True:
        if crit.time_limit is not None and time.monotonic() - start >= crit.time_limit:
            return finish("time_limit")
        if crit.node_limit is not None and result.nodes_generated >= crit.node_limit:
            return finish("node_limit")
        if (
            crit.probability_threshold is not None
            and result.best_plan is not None
            and result.best_probability >= crit.probability_threshold
        ):
            return finish("threshold")
        if (
            result.best_plan is not None
            and config.round_node_limit is not None
            and result.nodes_generated - round_start >= config.round_node_limit
        ):
            return finish("round_limit")
        if not len(queue):
            return finish("exhausted")
        plan = queue.pop()
        result.nodes_expanded += 1
        if config.validate:
            validate_plan(plan)
        if plan.is_complete:
            if len(plan.links) == base_links:
                continue  # every reopened condition kept its old support
            try:
                a = assess(plan, config.particle_cap)
            except UngroundablePlan:
                continue
            if config.validate:
                validate_plan(plan, complete=True)
            p = a.success_probability
            if result.best_plan is None:
                _record(result, plan, a, 0)
            elif p > result.best_probability:
                gain = p - result.best_probability
                eps = crit.progress_epsilon
                if eps is not None and gain <= eps:
                    return finish("no_progress")
                result.improvement_rounds += 1
                _record(result, plan, a, result.improvement_rounds)
            else:
                return finish("no_progress")
            if not config.improve:
                return finish("base_plan")
            if crit.probability_threshold is not None and p >= crit.probability_threshold:
                return finish("threshold")
            reopened = reopen_conditions(plan, config.reopen, a.per_condition)
            result.reopened.append([(str(c), s) for c, s in ((oc.condition, oc.consumer) for oc in reopened.open)])
            if reopened.is_complete:
                return finish("converged")
            queue = PlanQueue()
            seen = set() if config.dedupe else None
            merge(queue, [reopened], graph, config.heuristic, seen)
            round_start = result.nodes_generated
            base_links = len(plan.links)
            continue
        flaw = select_flaw(plan, strategy, graph)
        children = refine_plan(plan, flaw)
        result.nodes_generated += len(children)
        merge(queue, children, graph, config.heuristic, seen)
        result.queue_peak = max(result.queue_peak, len(queue))


def _record(result: SearchResult, plan: Plan, a: Assessment, round_index: int) -> None:
    result.best_plan = plan
    result.best_probability = a.success_probability
    result.assessment = a
    entry = {
        "round": round_index,
        "probability": a.success_probability,
        "steps": plan.g,
        "nodes": result.nodes_generated,
    }
    result.progress.append(entry)
    log.info("round %(round)d: probability %(probability).9g with %(steps)d steps after %(nodes)d nodes", entry)
