"""Conformant probabilistic partial-order planning."""

from __future__ import annotations

from .assess import Assessment, ParticleBlowup, UngroundablePlan, assess, simulate
from .domain import Domain, Literal, Problem
from .heuristics import STRATEGIES, get_strategy
from .plan import Plan, make_minimal_plan, validate_plan
from .ppddl import parse_domain, parse_problem
from .search import NoPlanFound, SearchConfig, SearchResult, TerminationCriteria, probapop

__all__ = [
    "Assessment",
    "Domain",
    "Literal",
    "NoPlanFound",
    "ParticleBlowup",
    "Plan",
    "Problem",
    "STRATEGIES",
    "SearchConfig",
    "SearchResult",
    "TerminationCriteria",
    "UngroundablePlan",
    "assess",
    "get_strategy",
    "make_minimal_plan",
    "parse_domain",
    "parse_problem",
    "probapop",
    "simulate",
    "validate_plan",
]
