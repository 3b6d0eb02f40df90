from __future__ import annotations

import subprocess
import sys

import pytest
from conftest import fixture_path

from confpop.cli import main

LETTERS = [fixture_path("letters"), fixture_path("letters-p01")]
BW5 = [fixture_path("bw"), fixture_path("bw5")]


def _plan_file(tmp_path, text, name="plan.txt"):
    path = tmp_path / name
    path.write_text(text)
    return str(path)


def _asks(k):
    return "".join(f"step {i} (ask-prof p{i})\n" for i in range(1, k + 1))


def _stats(text):
    return dict(line.split("=", 1) for line in text.splitlines())


def test_solve_threshold(tmp_path, capsys):
    stats = tmp_path / "stats.txt"
    assert main(["solve", *LETTERS, "--prob-threshold", "0.9", "--stats", str(stats)]) == 0
    out = capsys.readouterr().out
    assert out.splitlines()[-1] == "prob 0.96"
    record = _stats(stats.read_text())
    assert record["final_probability"] == "0.96"
    assert record["termination_reason"] == "threshold"
    for key in ("nodes_generated", "nodes_expanded", "improvement_rounds", "seed"):
        assert key in record


def test_unknown_strategy_lists_names(capsys):
    assert main(["solve", *LETTERS, "--strategy", "foo"]) == 1
    err = capsys.readouterr().err
    assert "mw-loc-dsep" in err and "ucpop" in err


def test_bad_flag_value_exits_one(capsys):
    with pytest.raises(SystemExit) as info:
        main(["solve", *LETTERS, "--heuristic", "FF"])
    assert info.value.code == 1


def test_missing_file_exits_one(tmp_path, capsys):
    assert main(["solve", str(tmp_path / "none.ppddl"), LETTERS[1]]) == 1
    assert "cannot read" in capsys.readouterr().err


def test_no_plan_exits_two(tmp_path, capsys):
    domain = _plan_file(
        tmp_path,
        "(define (domain stuck) (:predicates (p) (q)) (:action a :parameters () :precondition (q) :effect (p)))",
        "d.ppddl",
    )
    problem = _plan_file(tmp_path, "(define (problem s) (:domain stuck) (:init) (:goal (p)))", "p.ppddl")
    assert main(["solve", domain, problem]) == 2


@pytest.mark.parametrize("k", [1, 2, 3, 5])
def test_assess_k_asks(tmp_path, capsys, k):
    assert main(["assess", *LETTERS, _plan_file(tmp_path, _asks(k))]) == 0
    first = capsys.readouterr().out.splitlines()[0]
    assert float(first.split()[1]) == pytest.approx(1 - 0.2**k, abs=1e-12)


def test_assess_empty_plan_on_satisfied_goal(tmp_path, capsys):
    problem = _plan_file(
        tmp_path,
        "(define (problem done) (:domain letters) (:objects p1 - professor) (:init (letter-sent)) (:goal (letter-sent)))",
        "p.ppddl",
    )
    assert main(["assess", LETTERS[0], problem, _plan_file(tmp_path, "")]) == 0
    assert capsys.readouterr().out.splitlines()[0] == "prob 1"


def test_assess_ungroundable_plan(tmp_path, capsys):
    assert main(["assess", *LETTERS, _plan_file(tmp_path, "step 1 (ask-prof ?x)\n")]) == 1
    assert main(["assess", *LETTERS, _plan_file(tmp_path, "step 1 (fly p1)\n")]) == 1


def test_simulate_recorded_count(tmp_path, capsys):
    args = ["simulate", *LETTERS, _plan_file(tmp_path, _asks(2)), "--trials", "30", "--seed", "2024"]
    assert main(args) == 0
    record = _stats(capsys.readouterr().out)
    assert record == {"trials": "30", "seed": "2024", "successes": "29", "rate": "0.966666666667"}


def test_simulate_rejects_zero_trials(tmp_path, capsys):
    assert main(["simulate", *LETTERS, _plan_file(tmp_path, _asks(1)), "--trials", "0"]) == 1


def test_simulate_deterministic_plan(tmp_path, capsys):
    plan = _plan_file(tmp_path, "step 1 (ask-prof p1)\nstep 2 (send-forms)\n")
    problem = _plan_file(
        tmp_path,
        "(define (problem f) (:domain letters) (:objects p1 - professor) (:init (letter-sent)) (:goal (forms-sent)))",
        "p.ppddl",
    )
    assert main(["simulate", LETTERS[0], problem, plan, "--trials", "40", "--seed", "1"]) == 0
    assert _stats(capsys.readouterr().out)["successes"] == "40"


def test_solve_output_round_trips_through_assess(tmp_path, capsys):
    plan = tmp_path / "out.plan"
    assert main(["solve", *BW5, "--plan-out", str(plan), "--stats", str(tmp_path / "s")]) == 0
    capsys.readouterr()
    assert main(["assess", *BW5, str(plan)]) == 0
    listed = plan.read_text().splitlines()[-1]
    assert capsys.readouterr().out.splitlines()[0] == listed


def test_incremental_solve(tmp_path, capsys):
    stats = tmp_path / "stats"
    assert main(["solve", *BW5, "--incremental", "--stats", str(stats)]) == 0
    out = capsys.readouterr().out
    assert out.count("phase ") == 3
    assert _stats(stats.read_text())["phases"] == "3"


def test_goal_order_file_needs_path(capsys):
    assert main(["solve", *BW5, "--incremental", "--goal-order", "file"]) == 1


def test_goal_file_must_list_every_goal(tmp_path, capsys):
    goals = _plan_file(tmp_path, "(on b a)\n", "goals.txt")
    assert main(["solve", *BW5, "--incremental", "--goal-order", "file", "--goal-file", goals]) == 1
    assert "exactly once" in capsys.readouterr().err


def _run(args):
    proc = subprocess.run([sys.executable, "-m", "confpop", *args], capture_output=True, check=False)
    return proc.returncode, proc.stdout, proc.stderr


def test_repeated_runs_are_byte_identical(tmp_path):
    plan = _plan_file(tmp_path, _asks(3))
    for args in (
        ["solve", *LETTERS],
        ["assess", *LETTERS, plan],
        ["simulate", *LETTERS, plan, "--trials", "500", "--seed", "9"],
    ):
        first, second = _run(args), _run(args)
        assert first[0] == 0
        assert first == second
