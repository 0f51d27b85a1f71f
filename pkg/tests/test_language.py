import pytest
from hypothesis import given, strategies as st

from streamtamp.language import (ParseError, parse_domain, parse_problem, read_sexp, serialize_domain,
                                 serialize_problem)
from streamtamp.tabletop.domain import TABLETOP_DOMAIN, tabletop_domain
from streamtamp.toy import BLOCKS_DOMAIN, GRID_DOMAIN, generate_blocks, generate_grid, grid_domain


@pytest.mark.parametrize("text", [BLOCKS_DOMAIN, GRID_DOMAIN, TABLETOP_DOMAIN])
def test_domain_round_trip(text):
    d = parse_domain(text)
    again = parse_domain(serialize_domain(d))
    assert again == d
    assert serialize_domain(again) == serialize_domain(d)


def test_problem_round_trip_keeps_payloads():
    g = generate_grid(3)
    text = serialize_problem(g.problem)
    back = parse_problem(text, grid_domain())
    assert back == g.problem
    p = generate_blocks(5, 4)
    assert parse_problem(serialize_problem(p), parse_domain(BLOCKS_DOMAIN)) == p


def test_streams_parsed():
    d = tabletop_domain()
    s = d.stream("find-stack-place")
    assert s.inputs == ("?b", "?lb", "?lp") and s.outputs == ("?p",)
    assert {a.predicate for a in s.certified} == {"pose", "stack-support"}


def test_error_location():
    text = "(define (domain d)\n  (:predicates (p ?x))\n  (:action a :parameters (?x)\n   :precondition (and (q ?x))))"
    with pytest.raises(ParseError) as err:
        parse_domain(text)
    assert err.value.line == 4


@pytest.mark.parametrize("text", ["(", ")", "(define (domain d)", "(define (problem p))", ""])
def test_malformed_input(text):
    with pytest.raises(ParseError):
        parse_domain(text)


def test_unknown_predicate_in_problem():
    d = parse_domain(BLOCKS_DOMAIN)
    with pytest.raises(ParseError):
        parse_problem("(define (problem p) (:domain blocks) (:objects a) (:init (floating a)) (:goal (and)))", d)


def test_undeclared_stream_output_rejected():
    text = ("(define (domain d) (:predicates (p ?x) (q ?x ?y)) (:streams (:stream s :inputs (?x)"
            " :domain (and (p ?x)) :outputs () :certified (and (q ?x ?y)))))")
    with pytest.raises(ParseError):
        parse_domain(text)


def test_comments_and_case():
    tree = read_sexp("; header\n(Define (FOO bar)) ; tail")
    assert tree == ["define", ["foo", "bar"]]


@given(st.text(alphabet="()?: abcxyz-\n;0123456789.", max_size=80))
def test_fuzz_only_parse_errors(text):
    try:
        parse_domain(text)
    except ParseError:
        pass
