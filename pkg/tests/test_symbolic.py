import pytest
from hypothesis import given, strategies as st

from streamtamp.oracles import random_plan, regression_preimage
from streamtamp.symbolic import (ActionSchema, Atom, InvalidStep, Plan, StructuralError, apply, explain_plan,
                                 fact, is_applicable, preimage, validate_plan)

MOVE = ActionSchema("move", ("?a", "?b"), (Atom("at", ("?a",)), Atom("link", ("?a", "?b"))),
                    (Atom("at", ("?b",)),), (Atom("at", ("?a",)),))


def test_fact_equality_and_hash():
    assert fact("at", "x") == fact("at", "x")
    assert len({fact("at", "x"), fact("at", "x"), fact("at", "y")}) == 2
    assert str(fact("on", "a", "b")) == "(on a b)"


def test_undeclared_variable_rejected():
    with pytest.raises(StructuralError):
        ActionSchema("bad", ("?a",), (Atom("p", ("?z",)),), (), ())


def test_arity_mismatch_rejected():
    with pytest.raises(StructuralError):
        MOVE.instantiate(("x",))


def test_apply_and_invalid_step():
    a = MOVE.instantiate(("x", "y"))
    s = {fact("at", "x"), fact("link", "x", "y")}
    assert is_applicable(s, a)
    assert apply(s, a) == frozenset({fact("at", "y"), fact("link", "x", "y")})
    with pytest.raises(InvalidStep):
        apply({fact("at", "y")}, a)


def test_empty_plan_preimage_and_validity():
    assert preimage(Plan()) == frozenset()
    assert validate_plan({fact("p")}, {fact("p")}, Plan())
    assert "goal not reached" in explain_plan(set(), {fact("p")}, Plan())


def test_chain_preimage():
    plan = Plan((MOVE.instantiate(("x", "y")), MOVE.instantiate(("y", "z"))))
    assert preimage(plan) == {fact("at", "x"), fact("link", "x", "y"), fact("link", "y", "z")}


def test_explain_names_first_failure():
    plan = Plan((MOVE.instantiate(("x", "y")), MOVE.instantiate(("y", "z"))))
    msg = explain_plan({fact("at", "x"), fact("link", "x", "y")}, (), plan)
    assert msg.startswith("step 1") and "(link y z)" in msg


@given(st.integers(0, 10_000))
def test_preimage_matches_regression(seed):
    init, plan = random_plan(seed)
    pre = preimage(plan)
    assert pre == regression_preimage(plan)
    assert pre <= init
    assert validate_plan(pre, (), plan)


@given(st.integers(0, 10_000))
def test_preimage_is_minimal(seed):
    # dropping any preimage fact breaks the plan
    _, plan = random_plan(seed)
    pre = preimage(plan)
    for f in pre:
        assert not validate_plan(pre - {f}, (), plan)


@given(st.integers(0, 10_000))
def test_valid_plan_reaches_its_final_state(seed):
    init, plan = random_plan(seed)
    state = init
    for a in plan:
        state = apply(state, a)
    assert validate_plan(init, state, plan)
