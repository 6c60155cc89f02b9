import itertools

import pytest
from hypothesis import given
from hypothesis import strategies as st

from dynlgp.pddl import (WILDCARD, PddlError, format_domain, format_problem, ground_actions, parse_domain,
                         parse_problem)

from conftest import DOMAIN_TEXT

LOCATIONS = ("table", "small_shelf", "big_shelf")


def test_set_table_domain_counts(domain):
    assert len(domain.constants_of("location")) == 3
    assert len(domain.constants_of("object")) == 10
    assert len(domain.predicates) == 6
    assert [a.name for a in domain.actions] == ["move", "pick", "place"]


def test_minimal_domain():
    d = parse_domain("(define (domain d) (:predicates (p)))")
    assert [(p.name, p.arity) for p in d.predicates] == [("p", 0)]
    assert d.actions == ()


def test_arity_mismatch_names_predicate():
    bad = DOMAIN_TEXT.replace("(on ?x ?l))", "(on ?x ?l ?z))", 1)
    assert bad != DOMAIN_TEXT
    with pytest.raises(PddlError, match="on"):
        parse_domain(bad)


@pytest.mark.parametrize("text", [
    "(define (domain d) (:predicates (p))",
    "(define (domain d) (:predicates (p ?x - nosuchtype)))",
    "(define (domain d) (:predicates (p)) (:action a :parameters () :precondition (q) :effect (p)))",
    "(define (foo d))",
])
def test_malformed_domains_raise(text):
    with pytest.raises(PddlError):
        parse_domain(text)


def test_error_carries_position():
    with pytest.raises(PddlError) as info:
        parse_domain("(define (domain d)\n  (:predicates (p ?x - nosuchtype)))")
    assert info.value.line == 2


def test_problem_sets(domain):
    text = """(define (problem p) (:domain set_table)
      (:init (agent-free) (on cup_green big_shelf) (on plate_blue small_shelf))
      (:goal (and (on cup_green table) (on plate_blue table))))"""
    init, goal = parse_problem(text, domain)
    assert init == {("agent-free",), ("on", "cup_green", "big_shelf"), ("on", "plate_blue", "small_shelf")}
    assert goal == {("on", "cup_green", "table"), ("on", "plate_blue", "table")}


def test_empty_goal(domain):
    init, goal = parse_problem("(define (problem p) (:domain set_table) (:init) (:goal (and)))", domain)
    assert init == frozenset() and goal == frozenset()


def test_nonground_init_rejected(domain):
    with pytest.raises(PddlError):
        parse_problem("(define (problem p) (:domain set_table) (:init (on ?x table)) (:goal (and)))", domain)


def test_grounding_counts(grounded):
    by = {}
    for a in grounded:
        by[a.name] = by.get(a.name, 0) + 1
    assert by == {"move": 3, "pick": 30, "place": 30}


def test_zero_parameter_action_grounds_once():
    d = parse_domain("(define (domain d) (:predicates (p)) (:action a :parameters () :precondition () :effect (p)))")
    assert len(ground_actions(d)) == 1


def test_move_wildcard_expansion(actions_by_label):
    a = actions_by_label["move(table)"]
    assert a.delete == {("agent-at", l) for l in LOCATIONS}
    assert a.add == {("agent-at", "table")}


def test_grounding_count_is_product_of_compatible_constants(domain, grounded):
    for schema in domain.actions:
        expected = 1
        for _, typ in schema.params:
            expected *= len(domain.constants_of(typ))
        assert sum(a.name == schema.name for a in grounded) == expected


def test_no_variables_in_grounded_actions(grounded):
    for a in grounded:
        for prop in itertools.chain(a.pre_pos, a.pre_neg, a.add, a.delete):
            assert not any(tok.startswith("?") for tok in prop), (a.label, prop)
        assert WILDCARD not in a.args


def test_domain_round_trip(domain):
    assert parse_domain(format_domain(domain)) == domain


@given(st.sets(st.sampled_from(("cup_red", "cup_green", "bowl", "jug")), max_size=4),
       st.sampled_from(LOCATIONS))
def test_problem_round_trip(domain, objs, loc):
    init = sorted({("agent-free",)} | {("on", o, loc) for o in objs})
    goal = sorted(("on", o, "table") for o in objs)
    text = format_problem("p", domain, init, goal)
    assert parse_problem(text, domain) == (frozenset(init), frozenset(goal))
