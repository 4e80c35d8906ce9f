"""A small PDDL subset (:strips, :typing, :negative-preconditions) and a
forward A* planner over ground-atom states.

Two extensions tie the symbolic level to the continuous one:

* actions carry ``:controller``, ``:cost``, ``:success`` and ``:control``
  keys; ``:control`` lists the parameter slots that are continuous
  parameters handed to the controller;
* a problem may contain ``(:params (obj spec-id) ...)`` mapping PDDL objects
  to scenario parameter ids (objects left out map to their own name).
"""

from __future__ import annotations

import heapq
import itertools
import math
from collections import deque
from dataclasses import dataclass, field, replace
from typing import Iterable, Optional

from planreal.params import ParamSpec
from planreal.state import CONTROLLER_KINDS

REQUIREMENTS = {":strips", ":typing", ":negative-preconditions"}
DEFAULT_NODE_CAP = 1_000_000


class PDDLError(ValueError):
    def __init__(self, msg: str, line: Optional[int] = None, col: Optional[int] = None):
        self.line, self.col = line, col
        super().__init__(f"line {line} col {col}: {msg}" if line is not None else msg)


class Unsolvable(RuntimeError):
    """Search space exhausted without reaching the goal."""


class NodeLimit(RuntimeError):
    """Search expanded more nodes than allowed."""


class BindingError(ValueError):
    """A plan's parameters cannot be bound to the scenario's parameter specs."""


# ---------------------------------------------------------------------------
# S-expressions


@dataclass
class Sym:
    text: str
    line: int
    col: int

    def __repr__(self):
        return self.text


@dataclass
class SList:
    items: list
    line: int
    col: int

    def __iter__(self):
        return iter(self.items)

    def __len__(self):
        return len(self.items)

    def __getitem__(self, i):
        return self.items[i]


def tokenize(text: str):
    line, col = 1, 1
    i, n = 0, len(text)
    while i < n:
        c = text[i]
        if c == ";":
            while i < n and text[i] != "\n":
                i += 1
            continue
        if c == "\n":
            line, col = line + 1, 1
            i += 1
            continue
        if c.isspace():
            i += 1
            col += 1
            continue
        if c in "()":
            yield c, line, col
            i += 1
            col += 1
            continue
        j = i
        while j < n and not text[j].isspace() and text[j] not in "();":
            j += 1
        yield text[i:j], line, col
        col += j - i
        i = j


def parse_sexpr(text: str) -> SList:
    stack: list[SList] = []
    top: Optional[SList] = None
    for tok, line, col in tokenize(text):
        if tok == "(":
            stack.append(SList([], line, col))
        elif tok == ")":
            if not stack:
                raise PDDLError("unbalanced ')'", line, col)
            done = stack.pop()
            if stack:
                stack[-1].items.append(done)
            elif top is None:
                top = done
            else:
                raise PDDLError("text after the top-level expression", line, col)
        else:
            if not stack:
                raise PDDLError(f"unexpected token {tok!r} outside parentheses", line, col)
            stack[-1].items.append(Sym(tok.lower() if tok.startswith(":") else tok, line, col))
    if stack:
        raise PDDLError("unclosed '('", stack[-1].line, stack[-1].col)
    if top is None:
        raise PDDLError("empty input", 1, 1)
    return top


def _sym(x, what: str) -> str:
    if not isinstance(x, Sym):
        raise PDDLError(f"expected {what}", x.line, x.col)
    return x.text


def _list(x, what: str) -> SList:
    if not isinstance(x, SList):
        raise PDDLError(f"expected {what}", x.line, x.col)
    return x


def _typed_list(lst: SList, variables: bool) -> list[tuple[str, str]]:
    out: list[tuple[str, str]] = []
    pending: list[Sym] = []
    items = list(lst)
    i = 0
    while i < len(items):
        s = items[i]
        name = _sym(s, "a name")
        if name == "-":
            if i + 1 >= len(items) or not pending:
                raise PDDLError("dangling '-' in typed list", s.line, s.col)
            t = _sym(items[i + 1], "a type name")
            out.extend((p.text, t) for p in pending)
            pending = []
            i += 2
            continue
        if variables != name.startswith("?"):
            raise PDDLError(f"{'variable' if variables else 'object'} expected, got {name!r}",
                            s.line, s.col)
        pending.append(s)
        i += 1
    out.extend((p.text, "object") for p in pending)
    return out


# ---------------------------------------------------------------------------
# Domain model


@dataclass(frozen=True)
class Predicate:
    name: str
    args: tuple[str, ...]  # variables in schemas, objects in ground atoms


@dataclass(frozen=True)
class Literal:
    atom: Predicate
    positive: bool = True


@dataclass(frozen=True)
class ActionSchema:
    name: str
    parameters: tuple[tuple[str, str], ...]  # (variable, type)
    pre: tuple[Literal, ...]
    add: tuple[Predicate, ...]
    delete: tuple[Predicate, ...]
    controller: Optional[str] = None
    cost: Optional[str] = None
    success: Optional[str] = None
    control: tuple[str, ...] = ()

    @property
    def param_slots(self) -> tuple[tuple[str, str], ...]:
        """(variable, type) of the continuous-parameter slots."""
        types = dict(self.parameters)
        return tuple((v, types[v]) for v in self.control)


@dataclass(frozen=True)
class Domain:
    name: str
    requirements: frozenset
    types: dict  # type -> parent
    predicates: dict  # name -> tuple of (var, type)
    actions: tuple[ActionSchema, ...]

    def is_subtype(self, t: str, of: str) -> bool:
        seen = set()
        while t not in seen:
            if t == of:
                return True
            seen.add(t)
            t = self.types.get(t, "object")
        return of == "object"

    def action(self, name: str) -> ActionSchema:
        for a in self.actions:
            if a.name == name:
                return a
        raise KeyError(name)


@dataclass(frozen=True)
class Problem:
    name: str
    domain_name: str
    objects: dict  # name -> type
    init: frozenset  # of Predicate
    goal: tuple[Literal, ...]
    params: dict = field(default_factory=dict)  # object -> param spec id

    def param_id(self, obj: str) -> str:
        return self.params.get(obj, obj)


def _check_atom(domain_preds: dict, head: SList, variables: Optional[dict], objects: Optional[dict],
                domain: Optional["Domain"] = None) -> Predicate:
    name = _sym(head[0], "a predicate name") if len(head) else None
    if name is None:
        raise PDDLError("empty atom", head.line, head.col)
    if name not in domain_preds:
        raise PDDLError(f"undeclared predicate {name!r}", head[0].line, head[0].col)
    args = [_sym(a, "an argument") for a in head.items[1:]]
    sig = domain_preds[name]
    if len(args) != len(sig):
        raise PDDLError(f"predicate {name!r} takes {len(sig)} arguments, got {len(args)}",
                        head.line, head.col)
    for a, (_, t), tok in zip(args, sig, head.items[1:]):
        if a.startswith("?"):
            if variables is None or a not in variables:
                raise PDDLError(f"unknown variable {a!r}", tok.line, tok.col)
            at = variables[a]
        else:
            if objects is None or a not in objects:
                raise PDDLError(f"unknown object {a!r}", tok.line, tok.col)
            at = objects[a]
        if domain is not None and not (domain.is_subtype(at, t) or domain.is_subtype(t, at)):
            raise PDDLError(f"argument {a!r} of type {at!r} does not fit {name!r}", tok.line, tok.col)
    return Predicate(name, tuple(args))


def _literals(expr, preds, variables, objects, domain, allow_neg: bool) -> list[Literal]:
    expr = _list(expr, "a formula")
    if len(expr) == 0:
        return []
    head = expr[0]
    if isinstance(head, Sym) and head.text == "and":
        out: list[Literal] = []
        for sub in expr.items[1:]:
            out.extend(_literals(sub, preds, variables, objects, domain, allow_neg))
        return out
    if isinstance(head, Sym) and head.text == "not":
        if len(expr) != 2:
            raise PDDLError("'not' takes one atom", expr.line, expr.col)
        if not allow_neg:
            raise PDDLError("negative literal needs :negative-preconditions", expr.line, expr.col)
        return [Literal(_check_atom(preds, _list(expr[1], "an atom"), variables, objects, domain), False)]
    if isinstance(head, Sym) and head.text in ("or", "imply", "exists", "forall", "when"):
        raise PDDLError(f"'{head.text}' is outside the supported subset", head.line, head.col)
    return [Literal(_check_atom(preds, expr, variables, objects, domain), True)]


def _section(expr: SList, kind: str) -> tuple[str, list]:
    if len(expr) < 2 or not (isinstance(expr[0], Sym) and expr[0].text == "define"):
        raise PDDLError("expected (define ...)", expr.line, expr.col)
    head = _list(expr[1], f"({kind} name)")
    if len(head) != 2 or _sym(head[0], kind) != kind:
        raise PDDLError(f"expected ({kind} name)", head.line, head.col)
    return _sym(head[1], "a name"), expr.items[2:]


def parse_domain(text: str) -> Domain:
    name, sections = _section(parse_sexpr(text), "domain")
    reqs: set = set()
    types: dict = {}
    preds: dict = {}
    raw_actions = []
    for sec in sections:
        sec = _list(sec, "a domain section")
        key = _sym(sec[0], "a section keyword")
        if key == ":requirements":
            for r in sec.items[1:]:
                rt = _sym(r, "a requirement")
                if rt not in REQUIREMENTS:
                    raise PDDLError(f"unsupported requirement {rt}", r.line, r.col)
                reqs.add(rt)
        elif key == ":types":
            for t, parent in _typed_list(SList(sec.items[1:], sec.line, sec.col), False):
                types[t] = parent
        elif key == ":predicates":
            for p in sec.items[1:]:
                p = _list(p, "a predicate declaration")
                pname = _sym(p[0], "a predicate name")
                preds[pname] = tuple(_typed_list(SList(p.items[1:], p.line, p.col), True))
        elif key == ":action":
            raw_actions.append(sec)
        else:
            raise PDDLError(f"unsupported domain section {key}", sec.line, sec.col)
    known = set(types) | set(types.values()) | {"object"}
    for pname, sig in preds.items():
        for _, t in sig:
            if t not in known:
                raise PDDLError(f"unknown type {t!r} in predicate {pname!r}")
    dom = Domain(name, frozenset(reqs), types, preds, ())
    actions = tuple(_parse_action(sec, dom, known) for sec in raw_actions)
    names = [a.name for a in actions]
    if len(set(names)) != len(names):
        raise PDDLError("duplicate action names")
    return replace(dom, actions=actions)


def _parse_action(sec: SList, dom: Domain, known: set) -> ActionSchema:
    name = _sym(sec[1], "an action name")
    keys: dict = {}
    items = sec.items[2:]
    if len(items) % 2:
        raise PDDLError(f"action {name!r}: keyword without value", sec.line, sec.col)
    for k, v in zip(items[::2], items[1::2]):
        keys[_sym(k, "an action keyword")] = v
    allowed = {":parameters", ":precondition", ":effect", ":controller", ":cost", ":success", ":control"}
    for k in keys:
        if k not in allowed:
            raise PDDLError(f"action {name!r}: unsupported keyword {k}", sec.line, sec.col)
    params = tuple(_typed_list(_list(keys.get(":parameters", SList([], sec.line, sec.col)),
                                     "a parameter list"), True))
    for v, t in params:
        if t not in known:
            raise PDDLError(f"action {name!r}: unknown type {t!r} for {v}")
    variables = dict(params)
    neg = ":negative-preconditions" in dom.requirements
    pre = tuple(_literals(keys.get(":precondition", SList([], 0, 0)), dom.predicates, variables,
                          None, dom, neg))
    eff = _literals(keys.get(":effect", SList([], 0, 0)), dom.predicates, variables, None, dom, True)
    add = tuple(l.atom for l in eff if l.positive)
    delete = tuple(l.atom for l in eff if not l.positive)
    clash = set(add) & set(delete)
    if clash:
        raise PDDLError(f"action {name!r} both adds and deletes {sorted(clash, key=str)[0]}")
    control = ()
    if ":control" in keys:
        control = tuple(_sym(x, "a variable") for x in _list(keys[":control"], "a variable list"))
        for v in control:
            if v not in variables:
                raise PDDLError(f"action {name!r}: control slot {v} is not a parameter")
    ctrl = _sym(keys[":controller"], "a controller id") if ":controller" in keys else None
    if ctrl is not None and ctrl not in CONTROLLER_KINDS:
        raise PDDLError(f"action {name!r}: unknown controller {ctrl!r}")
    return ActionSchema(
        name, params, pre, add, delete, ctrl,
        _sym(keys[":cost"], "a cost id") if ":cost" in keys else None,
        _sym(keys[":success"], "a success id") if ":success" in keys else None,
        control,
    )


def parse_problem(text: str, domain: Optional[Domain] = None) -> Problem:
    name, sections = _section(parse_sexpr(text), "problem")
    dname = None
    objects: dict = {}
    init_raw, goal_raw, params = [], None, {}
    for sec in sections:
        sec = _list(sec, "a problem section")
        key = _sym(sec[0], "a section keyword")
        if key == ":domain":
            dname = _sym(sec[1], "a domain name")
        elif key == ":objects":
            for o, t in _typed_list(SList(sec.items[1:], sec.line, sec.col), False):
                objects[o] = t
        elif key == ":init":
            init_raw = sec.items[1:]
        elif key == ":goal":
            if len(sec) != 2:
                raise PDDLError(":goal takes one formula", sec.line, sec.col)
            goal_raw = sec[1]
        elif key == ":params":
            for pair in sec.items[1:]:
                pair = _list(pair, "(object param-id)")
                if len(pair) != 2:
                    raise PDDLError("expected (object param-id)", pair.line, pair.col)
                params[_sym(pair[0], "an object")] = _sym(pair[1], "a parameter id")
        else:
            raise PDDLError(f"unsupported problem section {key}", sec.line, sec.col)
    if dname is None:
        raise PDDLError("problem names no :domain")
    if domain is None:
        return Problem(name, dname, objects, frozenset(), (), params)
    if dname != domain.name:
        raise PDDLError(f"problem is for domain {dname!r}, not {domain.name!r}")
    known = set(domain.types) | set(domain.types.values()) | {"object"}
    for o, t in objects.items():
        if t not in known:
            raise PDDLError(f"object {o!r} has unknown type {t!r}")
    for o in params:
        if o not in objects:
            raise PDDLError(f":params names unknown object {o!r}")
    init = set()
    for a in init_raw:
        lit = _check_atom(domain.predicates, _list(a, "an atom"), None, objects, domain)
        init.add(lit)
    goal = tuple(_literals(goal_raw, domain.predicates, None, objects, domain, True)) \
        if goal_raw is not None else ()
    return Problem(name, dname, objects, frozenset(init), goal, params)


# ---------------------------------------------------------------------------
# Grounding


@dataclass(frozen=True)
class GroundAction:
    schema: ActionSchema
    args: tuple[str, ...]
    param_ids: tuple[str, ...] = ()  # scenario parameter ids of the control slots
    bound_params: tuple[ParamSpec, ...] = ()

    @property
    def name(self) -> str:
        return self.schema.name

    @property
    def controller_id(self) -> Optional[str]:
        return self.schema.controller

    def _sub(self, atoms) -> frozenset:
        env = dict(zip((v for v, _ in self.schema.parameters), self.args))
        return frozenset(Predicate(a.name, tuple(env.get(x, x) for x in a.args)) for a in atoms)

    @property
    def pre_pos(self) -> frozenset:
        return self._sub(l.atom for l in self.schema.pre if l.positive)

    @property
    def pre_neg(self) -> frozenset:
        return self._sub(l.atom for l in self.schema.pre if not l.positive)

    @property
    def add(self) -> frozenset:
        return self._sub(self.schema.add)

    @property
    def delete(self) -> frozenset:
        return self._sub(self.schema.delete)

    @property
    def control_args(self) -> tuple[str, ...]:
        env = dict(zip((v for v, _ in self.schema.parameters), self.args))
        return tuple(env[v] for v in self.schema.control)

    @property
    def sort_key(self) -> tuple:
        return (self.schema.name, self.args)

    def __str__(self) -> str:
        shown = self.control_args if self.schema.control else self.args
        return f"{self.schema.name}({', '.join(shown)})"


def ground(domain: Domain, problem: Problem) -> list[GroundAction]:
    """Every type-consistent binding of every schema, sorted by (name, args)."""
    out = []
    for schema in domain.actions:
        cands = [sorted(o for o, t in problem.objects.items() if domain.is_subtype(t, pt))
                 for _, pt in schema.parameters]
        for combo in itertools.product(*cands):
            ga = GroundAction(schema, tuple(combo))
            out.append(replace(ga, param_ids=tuple(problem.param_id(o) for o in ga.control_args)))
    out.sort(key=lambda a: a.sort_key)
    return out


# ---------------------------------------------------------------------------
# Search


@dataclass(frozen=True)
class SymbolicPlan:
    actions: tuple[GroundAction, ...]

    def __iter__(self):
        return iter(self.actions)

    def __len__(self):
        return len(self.actions)

    def __getitem__(self, i):
        return self.actions[i]

    def lines(self) -> list[str]:
        return [str(a) for a in self.actions]


@dataclass(frozen=True)
class _Compiled:
    action: GroundAction
    pre_pos: frozenset
    pre_neg: frozenset
    add: frozenset
    delete: frozenset


def _compile(actions: Iterable[GroundAction]) -> list[_Compiled]:
    return [_Compiled(a, a.pre_pos, a.pre_neg, a.add, a.delete) for a in actions]


def _goal_parts(problem: Problem):
    pos = frozenset(l.atom for l in problem.goal if l.positive)
    neg = frozenset(l.atom for l in problem.goal if not l.positive)
    return pos, neg


def _applicable(c: _Compiled, s: frozenset) -> bool:
    return c.pre_pos <= s and not (c.pre_neg & s)


def _apply(c: _Compiled, s: frozenset) -> frozenset:
    return (s - c.delete) | c.add


def plan(domain: Domain, problem: Problem, node_cap: int = DEFAULT_NODE_CAP) -> SymbolicPlan:
    """Shortest plan by A* with a scaled goal-count heuristic.

    h(s) = ceil(unsatisfied goal literals / m), where m is the largest number
    of goal literals a single action can make true. This equals the plain goal
    count when no action achieves two goal literals at once, and stays
    admissible and consistent otherwise, so the first goal popped is optimal.
    Ties go to lower h, then to insertion order with successors generated in
    (action name, arguments) order.
    """
    actions = _compile(ground(domain, problem))
    gpos, gneg = _goal_parts(problem)
    m = max([len(c.add & gpos) + len(c.delete & gneg) for c in actions] + [1])

    def h(s: frozenset) -> int:
        unsat = len(gpos - s) + len(gneg & s)
        return math.ceil(unsat / m)

    start = problem.init
    g = {start: 0}
    parent: dict = {start: None}
    counter = 0
    heap = [(h(start), h(start), counter, start)]
    closed = set()
    expanded = 0
    while heap:
        _, hs, _, s = heapq.heappop(heap)
        if s in closed:
            continue
        if gpos <= s and not (gneg & s):
            steps = []
            while parent[s] is not None:
                prev, act = parent[s]
                steps.append(act)
                s = prev
            return SymbolicPlan(tuple(reversed(steps)))
        closed.add(s)
        expanded += 1
        if expanded > node_cap:
            raise NodeLimit(f"node cap of {node_cap} exceeded")
        for c in actions:
            if not _applicable(c, s):
                continue
            t = _apply(c, s)
            if t in closed:
                continue
            gt = g[s] + 1
            if gt < g.get(t, math.inf):
                g[t] = gt
                parent[t] = (s, c.action)
                counter += 1
                ht = h(t)
                heapq.heappush(heap, (gt + ht, ht, counter, t))
    raise Unsolvable("no plan reaches the goal")


def validate_plan(domain: Domain, problem: Problem, actions: Iterable[GroundAction]) -> bool:
    """Replay ``actions`` symbolically; True iff every precondition and the goal hold."""
    s = problem.init
    for c in _compile(actions):
        if not _applicable(c, s):
            return False
        s = _apply(c, s)
    gpos, gneg = _goal_parts(problem)
    return gpos <= s and not (gneg & s)


def bfs_plan_length(domain: Domain, problem: Problem) -> Optional[int]:
    """Shortest plan length by breadth-first search (reference for small instances)."""
    actions = _compile(ground(domain, problem))
    gpos, gneg = _goal_parts(problem)
    seen = {problem.init}
    frontier = deque([(problem.init, 0)])
    while frontier:
        s, d = frontier.popleft()
        if gpos <= s and not (gneg & s):
            return d
        for c in actions:
            if _applicable(c, s):
                t = _apply(c, s)
                if t not in seen:
                    seen.add(t)
                    frontier.append((t, d + 1))
    return None


# ---------------------------------------------------------------------------
# Binding to scenario parameters


def bind(plan_: SymbolicPlan, scenario) -> SymbolicPlan:
    """Attach each action's control-slot parameter specs from ``scenario``."""
    out = []
    for a in plan_:
        if a.controller_id is None:
            raise BindingError(f"{a} has no :controller")
        specs = []
        for pid in a.param_ids:
            try:
                spec = scenario.param(pid)
            except KeyError:
                raise BindingError(f"{a}: scenario has no parameter {pid!r}") from None
            if spec.kind not in CONTROLLER_KINDS[a.controller_id]:
                raise BindingError(f"{a}: {a.controller_id} cannot take a {spec.kind} parameter")
            specs.append(spec)
        out.append(replace(a, bound_params=tuple(specs)))
    return SymbolicPlan(tuple(out))


def load_task(domain_text: str, problem_text: str) -> tuple[Domain, Problem]:
    d = parse_domain(domain_text)
    return d, parse_problem(problem_text, d)
