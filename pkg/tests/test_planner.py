import math

import pytest
from hypothesis import given, strategies as st

from streamtamp.planner import (LevelScorer, SolveConfig, StatsScorer, UniformScorer, adaptive_solve,
                                compose_score, informed_solve, should_plan)
from streamtamp.symbolic import validate_plan
from streamtamp.toy import generate_grid, grid_domain

DOMAIN = grid_domain()
FAST = SolveConfig(timeout=30, k=20)


def _solve(g, scorer=None, config=FAST):
    if scorer is None:
        return adaptive_solve(DOMAIN, g.problem, config, g.samplers)
    return informed_solve(DOMAIN, g.problem, scorer, config, g.samplers)


@given(st.floats(0, 1), st.lists(st.floats(1e-6, 1), max_size=4), st.integers(0, 20), st.floats(0.05, 0.95))
def test_compose_strictly_below_parents(raw, parents, count, gamma):
    s = compose_score(raw, parents, count, gamma)
    assert 0 < s < 1
    if parents:
        assert s < min(parents)


@given(st.floats(0, 1), st.integers(0, 20), st.floats(0.05, 0.95))
def test_compose_decreases_with_count(raw, count, gamma):
    assert compose_score(raw, [0.7], count + 1, gamma) < compose_score(raw, [0.7], count, gamma)


def test_should_plan():
    assert should_plan(10, 10, False, False)
    assert not should_plan(9, 10, False, True)
    assert should_plan(0, 10, True, True)
    assert not should_plan(0, 10, True, False)


def test_config_validation():
    for bad in (dict(gamma=1.0), dict(gamma=0.0), dict(k=0), dict(timeout=0), dict(sampling_budget=-1)):
        with pytest.raises(ValueError):
            SolveConfig(**bad)


@pytest.mark.parametrize("scorer", [None, UniformScorer(), LevelScorer(), StatsScorer({"find-spot": 0.9})])
def test_grid_plans_are_valid(scorer):
    for seed in range(6):
        g = generate_grid(seed, items=1 + seed % 2)
        out = _solve(g, scorer)
        assert out.solved, (seed, out.status)
        assert validate_plan(out.registry.ground | g.problem.init, g.problem.goal, out.plan)
        assert out.metrics["violations_child"] == 0 or scorer is not None and not scorer.composes
        m = out.metrics
        assert m["time_expansion"] + m["time_search"] + m["time_sampling"] + m["time_inference"] <= m["wall_time"] + 1e-6


def test_goal_in_init():
    g = generate_grid(0)
    p = g.problem
    import dataclasses
    trivial = dataclasses.replace(p, goal=frozenset(list(p.init)[:2]))
    for scorer in (None, UniformScorer()):
        out = _solve(g.__class__(trivial, g.samplers, True, g.free, g.spots), scorer)
        assert out.solved and len(out.plan) == 0
        assert out.metrics["wall_time"] < 0.1


@pytest.mark.parametrize("scorer", [None, UniformScorer()])
def test_unsolvable_grid_exhausts(scorer):
    for seed in range(4):
        out = _solve(generate_grid(seed, solvable=False), scorer)
        assert out.status == "Exhausted"


def test_timeout_is_respected():
    g = generate_grid(1, solvable=False, width=6, height=6, items=2)
    cfg = SolveConfig(timeout=0.05, k=1)
    out = _solve(g, UniformScorer(), cfg)
    assert out.status in ("Timeout", "Exhausted")
    if out.status == "Timeout":
        assert out.metrics["wall_time"] < 0.05 + 0.1


def test_informed_is_deterministic():
    g = generate_grid(3, items=2)
    a, b = _solve(g, UniformScorer()), _solve(g, UniformScorer())
    assert a.status == b.status and list(map(str, a.plan)) == list(map(str, b.plan))
    assert a.metrics["instances"] == b.metrics["instances"]


def test_scores_strictly_decrease_across_evaluations():
    # zero violations means each instance's successive results scored strictly lower
    for seed in range(5):
        out = _solve(generate_grid(seed, items=2), UniformScorer())
        assert out.metrics["violations_eval"] == 0
        assert out.metrics["level_bound_violations"] == 0


def test_level_scorer_reports_rather_than_raises():
    out = _solve(generate_grid(2), LevelScorer())
    assert out.solved
    assert math.isfinite(out.metrics["violations_child"])
