from __future__ import annotations

from importlib import resources

import pytest

from confpop import parse_domain, parse_problem

DATA = resources.files("confpop") / "data"

# lines printed by the acceptance suite at the end of the session
ACCEPTANCE_LINES: list[str] = []


def fixture_text(name: str) -> str:
    return (DATA / f"{name}.ppddl").read_text(encoding="utf-8")


def fixture_path(name: str) -> str:
    return str(DATA / f"{name}.ppddl")


def load(domain: str, problem: str):
    return parse_problem(fixture_text(problem), parse_domain(fixture_text(domain)))


@pytest.fixture(scope="session")
def letters():
    return load("letters", "letters-p01")


@pytest.fixture(scope="session")
def bw5():
    return load("bw", "bw5")


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in ACCEPTANCE_LINES:
            terminalreporter.write_line(line)


def sample_plans(problem, limit: int = 300, strategy: str = "static"):
    """Plans met by a breadth-first walk of the refinement space."""
    from collections import deque

    from confpop.heuristics import get_strategy, select_flaw
    from confpop.plan import make_minimal_plan
    from confpop.refine import refine_plan

    chosen = get_strategy(strategy)
    queue = deque([make_minimal_plan(problem)])
    out = []
    while queue and len(out) < limit:
        plan = queue.popleft()
        out.append(plan)
        if plan.flaws:
            queue.extend(refine_plan(plan, select_flaw(plan, chosen)))
    return out
