import random

import pytest

from planreal import symbolic as Y
from planreal.world import bundled_path


def read(name):
    return bundled_path(name).read_text()


@pytest.fixture(scope="module")
def pick_place():
    return Y.load_task(read("pick_place_domain.pddl"), read("pick_place_problem.pddl"))


TOY_DOMAIN = """
(define (domain toy)
  (:requirements :strips :typing)
  (:types location grasppose)
  (:predicates (at ?l - location) (holding))
  (:action moveTo
    :parameters (?to - location)
    :precondition (and)
    :effect (at ?to)
    :controller AStarTrack
    :control (?to))
  (:action grasp
    :parameters (?g - grasppose)
    :precondition (and)
    :effect (holding)
    :controller FabricReach
    :control (?g)))
"""

TOY_PROBLEM = """
(define (problem toy-1)
  (:domain toy)
  (:objects A B C - location G - grasppose)
  (:init)
  (:goal (and (at B) (holding))))
"""


class TestParsing:
    def test_pick_place_domain(self, pick_place):
        dom, prob = pick_place
        assert [a.name for a in dom.actions] == ["moveTo", "grasp", "place"]
        assert {"robot_at", "object_at", "ee_empty"} <= set(dom.predicates)
        assert dom.action("grasp").controller == "FabricReach"
        assert prob.param_id("Table_1") == "Table_1"

    def test_undeclared_predicate(self):
        bad = TOY_DOMAIN.replace(":effect (holding)", ":effect (gripping)")
        with pytest.raises(Y.PDDLError, match="gripping"):
            Y.parse_domain(bad)

    def test_unbalanced_has_position(self):
        with pytest.raises(Y.PDDLError) as exc:
            Y.parse_domain("(define (domain x)\n  (:predicates (p)")
        assert exc.value.line is not None and "line" in str(exc.value)

    def test_stray_close_paren(self):
        with pytest.raises(Y.PDDLError) as exc:
            Y.parse_domain("(define (domain x))\n)")
        assert exc.value.line == 2

    def test_unknown_controller(self):
        with pytest.raises(Y.PDDLError, match="Teleport"):
            Y.parse_domain(TOY_DOMAIN.replace("AStarTrack", "Teleport"))

    def test_add_delete_clash(self):
        with pytest.raises(Y.PDDLError, match="adds and deletes"):
            Y.parse_domain(TOY_DOMAIN.replace(":effect (holding)", ":effect (and (holding) (not (holding)))"))

    def test_negative_precondition_needs_requirement(self):
        bad = TOY_DOMAIN.replace(":precondition (and)\n    :effect (holding)",
                                 ":precondition (not (holding))\n    :effect (holding)")
        with pytest.raises(Y.PDDLError):
            Y.parse_domain(bad)

    def test_wrong_arity(self):
        with pytest.raises(Y.PDDLError, match="at"):
            Y.load_task(TOY_DOMAIN, TOY_PROBLEM.replace("(at B)", "(at B C)"))

    def test_unknown_object(self):
        with pytest.raises(Y.PDDLError, match="D"):
            Y.load_task(TOY_DOMAIN, TOY_PROBLEM.replace("(at B)", "(at D)"))

    def test_wrong_domain(self):
        with pytest.raises(Y.PDDLError, match="domain"):
            Y.load_task(TOY_DOMAIN, TOY_PROBLEM.replace("(:domain toy)", "(:domain other)"))


class TestGrounding:
    def test_counts(self):
        dom, prob = Y.load_task(TOY_DOMAIN, TOY_PROBLEM)
        acts = Y.ground(dom, prob)
        assert sorted(str(a) for a in acts if a.schema.name == "moveTo") == \
            ["moveTo(A)", "moveTo(B)", "moveTo(C)"]
        assert [str(a) for a in acts if a.schema.name == "grasp"] == ["grasp(G)"]

    def test_pick_place_contains_plan_actions(self, pick_place):
        names = {str(a) for a in Y.ground(*pick_place)}
        assert {"moveTo(Table_1)", "grasp(Cube)", "moveTo(Table_2)", "place(Target)",
                "moveTo(Exit)"} <= names

    def test_sorted(self, pick_place):
        acts = Y.ground(*pick_place)
        assert acts == sorted(acts, key=lambda a: a.sort_key)


class TestPlanning:
    def test_pick_place(self, pick_place):
        p = Y.plan(*pick_place)
        assert p.lines() == ["moveTo(Table_1)", "grasp(Cube)", "moveTo(Table_2)", "place(Target)",
                             "moveTo(Exit)"]
        assert Y.validate_plan(*pick_place, p)
        assert Y.bfs_plan_length(*pick_place) == 5

    def test_push(self):
        dom, prob = Y.load_task(read("push_domain.pddl"), read("push_problem.pddl"))
        assert Y.plan(dom, prob).lines() == ["moveTo(rod_loc)", "push(rod_pose)"]

    def test_goal_already_true(self):
        dom, prob = Y.load_task(TOY_DOMAIN, TOY_PROBLEM.replace("(:init)", "(:init (at B) (holding))"))
        assert len(Y.plan(dom, prob)) == 0

    def test_empty_goal(self):
        dom, prob = Y.load_task(TOY_DOMAIN, TOY_PROBLEM.replace("(and (at B) (holding))", "(and)"))
        assert Y.plan(dom, prob).lines() == []

    def test_unsolvable(self):
        dom, prob = Y.load_task(TOY_DOMAIN, TOY_PROBLEM.replace("(:objects A B C - location G - grasppose)",
                                                                "(:objects A B C - location)"))
        with pytest.raises(Y.Unsolvable):
            Y.plan(dom, prob)

    def test_node_cap(self, pick_place):
        with pytest.raises(Y.NodeLimit):
            Y.plan(*pick_place, node_cap=2)

    def test_deterministic(self, pick_place):
        a = Y.plan(*pick_place)
        dom, prob = Y.load_task(read("pick_place_domain.pddl"), read("pick_place_problem.pddl"))
        assert Y.plan(dom, prob).lines() == a.lines() == Y.plan(*pick_place).lines()

    def test_invalid_plan_rejected(self, pick_place):
        p = Y.plan(*pick_place)
        assert not Y.validate_plan(*pick_place, list(p)[1:])
        assert not Y.validate_plan(*pick_place, list(p)[:-1])


def random_task(rng, n_props=5, n_actions=7):
    props = [f"p{i}" for i in range(n_props)]
    acts = []
    for k in range(n_actions):
        pre = rng.sample(props, rng.randint(0, 2))
        rest = [p for p in props if p not in pre]
        add = rng.sample(rest, rng.randint(1, min(2, len(rest))))
        delete = rng.sample([p for p in props if p not in add], rng.randint(0, 2))
        pre_s = " ".join(f"({p})" for p in pre)
        eff = " ".join([f"({p})" for p in add] + [f"(not ({p}))" for p in delete])
        acts.append(f"(:action a{k} :parameters () :precondition (and {pre_s}) :effect (and {eff}))")
    dom = (f"(define (domain r) (:requirements :strips) (:predicates {' '.join(f'({p})' for p in props)}) "
           + " ".join(acts) + ")")
    init = rng.sample(props, rng.randint(0, 2))
    goal = rng.sample(props, rng.randint(1, 3))
    prob = (f"(define (problem r1) (:domain r) (:init {' '.join(f'({p})' for p in init)}) "
            f"(:goal (and {' '.join(f'({p})' for p in goal)})))")
    return Y.load_task(dom, prob)


def test_matches_breadth_first_search():
    rng = random.Random(0)
    solved = 0
    for _ in range(300):
        dom, prob = random_task(rng)
        best = Y.bfs_plan_length(dom, prob)
        if best is None:
            with pytest.raises(Y.Unsolvable):
                Y.plan(dom, prob)
            continue
        p = Y.plan(dom, prob)
        assert len(p) == best
        assert Y.validate_plan(dom, prob, p)
        solved += 1
    assert solved > 100


def test_bind_needs_scenario_params(pick_place, ramp_scenario, push_scenario):
    p = Y.plan(*pick_place)
    bound = Y.bind(p, ramp_scenario)
    assert [s.id for a in bound for s in a.bound_params] == ["Table_1", "Cube", "Table_2", "Target", "Exit"]
    with pytest.raises(Y.BindingError, match="Table_1"):
        Y.bind(p, push_scenario)
