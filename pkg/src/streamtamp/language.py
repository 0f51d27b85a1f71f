"""S-expression format for domains (predicates, actions, streams) and problems.

Domain files look like::

    (define (domain toy)
      (:predicates (block ?b) (surface ?s) (on ?b ?s))
      (:action place
        :parameters (?b ?s)
        :precondition (and (block ?b) (surface ?s))
        :effect (and (on ?b ?s)))
      (:streams
        (:stream find-place
          :inputs (?b ?s)
          :domain (and (block ?b) (surface ?s))
          :outputs (?p)
          :certified (and (block-support ?b ?s ?p)))))

Problem files declare objects (optionally with a position list), init and goal::

    (define (problem p0) (:domain toy)
      (:objects b0 (s1 0.5 0.0 0.0))
      (:init (block b0) (surface s1))
      (:goal (and (on b0 s1))))

Symbols are lower-cased. Numbers inside an object's position list are floats.
"""
from __future__ import annotations

import sys
from dataclasses import dataclass, field
from typing import Any, Optional

from .streams import StreamSchema
from .symbolic import ActionSchema, Atom, Fact, ObjectRef, Predicate, StructuralError, is_variable


class ParseError(ValueError):
    def __init__(self, message: str, line: int = 0, column: int = 0):
        self.line = line
        self.column = column
        self.message = message
        super().__init__(f"{line}:{column}: {message}")


class Sym(str):
    """A symbol token remembering where it came from."""

    line: int
    column: int

    def __new__(cls, text, line, column):
        s = super().__new__(cls, text)
        s.line = line
        s.column = column
        return s


class SList(list):
    line: int
    column: int

    def __init__(self, items=(), line=0, column=0):
        super().__init__(items)
        self.line = line
        self.column = column


def tokenize(text: str):
    line, col, i, n = 1, 1, 0, len(text)
    while i < n:
        c = text[i]
        if c == "\n":
            line, col, i = line + 1, 1, i + 1
        elif c.isspace():
            i, col = i + 1, col + 1
        elif c == ";":
            while i < n and text[i] != "\n":
                i += 1
        elif c in "()":
            yield c, line, col
            i, col = i + 1, col + 1
        else:
            j = i
            while j < n and not text[j].isspace() and text[j] not in "();":
                j += 1
            yield text[i:j], line, col
            col += j - i
            i = j


def read_sexp(text: str) -> SList:
    """Parse text holding exactly one top-level list."""
    stack: list = []
    result = None
    for tok, line, col in tokenize(text):
        if result is not None:
            raise ParseError(f"unexpected trailing token {tok!r}", line, col)
        if tok == "(":
            stack.append(SList(line=line, column=col))
        elif tok == ")":
            if not stack:
                raise ParseError("unbalanced ')'", line, col)
            done = stack.pop()
            if stack:
                stack[-1].append(done)
            else:
                result = done
        else:
            if not stack:
                raise ParseError(f"token {tok!r} outside of any list", line, col)
            stack[-1].append(Sym(sys.intern(tok.lower()), line, col))
    if stack:
        raise ParseError("unbalanced '(': missing ')'", stack[-1].line, stack[-1].column)
    if result is None:
        raise ParseError("empty input", 1, 1)
    return result


def _where(node) -> tuple:
    return getattr(node, "line", 0), getattr(node, "column", 0)


def _fail(node, message):
    raise ParseError(message, *_where(node))


def _expect_list(node, what):
    if not isinstance(node, SList):
        _fail(node, f"expected a list for {what}, got {node!r}")
    return node


def _expect_sym(node, what):
    if not isinstance(node, Sym):
        _fail(node, f"expected a symbol for {what}")
    return node


def _keywords(items, start, allowed, owner):
    """Split a flat ':key value' sequence into a dict."""
    out = {}
    i = start
    while i < len(items):
        key = items[i]
        if not isinstance(key, Sym) or not key.startswith(":"):
            _fail(key, f"expected a keyword in {owner}")
        if key not in allowed:
            _fail(key, f"unknown keyword {key} in {owner}")
        if key in out:
            _fail(key, f"duplicate keyword {key} in {owner}")
        if i + 1 >= len(items):
            _fail(key, f"missing value for {key} in {owner}")
        out[str(key)] = items[i + 1]
        i += 2
    return out


@dataclass
class DomainDefinition:
    name: str
    predicates: tuple = ()
    actions: tuple = ()
    streams: tuple = ()
    pos: Any = field(default=None, compare=False, repr=False)

    def predicate(self, name: str) -> Predicate:
        for p in self.predicates:
            if p.name == name:
                return p
        raise KeyError(name)

    @property
    def arities(self) -> dict:
        return {p.name: p.arity for p in self.predicates}

    def action(self, name: str) -> ActionSchema:
        for a in self.actions:
            if a.name == name:
                return a
        raise KeyError(name)

    def stream(self, name: str) -> StreamSchema:
        for s in self.streams:
            if s.name == name:
                return s
        raise KeyError(name)

    def fluent_predicates(self) -> frozenset:
        names = set()
        for a in self.actions:
            names.update(t.predicate for t in a.add_effects)
            names.update(t.predicate for t in a.del_effects)
        return frozenset(names)


@dataclass(eq=False)
class ProblemDefinition:
    name: str
    domain_name: str
    objects: tuple = ()
    init: frozenset = frozenset()
    goal: frozenset = frozenset()
    pos: Any = field(default=None, compare=False, repr=False)

    def __eq__(self, other):
        if not isinstance(other, ProblemDefinition):
            return NotImplemented
        return (self.name, self.domain_name, self.init, self.goal) == (
            other.name, other.domain_name, other.init, other.goal) and [
            (o.name, o.payload) for o in self.objects] == [(o.name, o.payload) for o in other.objects]

    def object_names(self) -> tuple:
        return tuple(o.name for o in self.objects)

    def positions(self) -> dict:
        return {o.name: o.payload for o in self.objects}


def _parse_atom(node, arities, variables_ok, what) -> Atom:
    node = _expect_list(node, what)
    if not node:
        _fail(node, f"empty atom in {what}")
    head = _expect_sym(node[0], what)
    if head == "not":
        _fail(head, f"negation is not supported in {what}")
    if head not in arities:
        _fail(head, f"undeclared predicate {head}")
    args = []
    for a in node[1:]:
        a = _expect_sym(a, f"argument of {head}")
        if is_variable(a) and not variables_ok:
            _fail(a, f"variable {a} not allowed in {what}")
        if not is_variable(a) and variables_ok:
            _fail(a, f"constant {a} not allowed in {what}; use a parameter")
        args.append(str(a))
    if len(args) != arities[head]:
        _fail(head, f"predicate {head} has arity {arities[head]}, got {len(args)} arguments")
    return Atom(str(head), tuple(args))


def _parse_conjunction(node, arities, variables_ok, what, negative_ok=False):
    """Returns (positive atoms, negated atoms)."""
    node = _expect_list(node, what)
    if node and node[0] == "and":
        parts = node[1:]
    elif not node:
        parts = []
    else:
        parts = [node]
    pos, neg = [], []
    for p in parts:
        p = _expect_list(p, what)
        if p and p[0] == "not":
            if not negative_ok:
                _fail(p, f"negation is not supported in {what}")
            if len(p) != 2:
                _fail(p, "not takes exactly one atom")
            neg.append(_parse_atom(p[1], arities, variables_ok, what))
        else:
            pos.append(_parse_atom(p, arities, variables_ok, what))
    return tuple(pos), tuple(neg)


def _parse_vars(node, what):
    node = _expect_list(node, what)
    out = []
    for v in node:
        v = _expect_sym(v, what)
        if not is_variable(v):
            _fail(v, f"expected a variable in {what}, got {v}")
        if v in out:
            _fail(v, f"duplicate variable {v} in {what}")
        out.append(str(v))
    return tuple(out)


def _check_vars(atoms, allowed, owner, node, what):
    for atom in atoms:
        for v in atom.variables():
            if v not in allowed:
                _fail(node, f"{owner}: variable {v} in {what} is not declared")


def _parse_action(node, arities) -> ActionSchema:
    if len(node) < 2:
        _fail(node, "action needs a name")
    name = _expect_sym(node[1], "action name")
    kw = _keywords(node, 2, {":parameters", ":precondition", ":effect"}, f"action {name}")
    params = _parse_vars(kw.get(":parameters", SList()), f"parameters of {name}")
    pre, _ = _parse_conjunction(kw.get(":precondition", SList()), arities, True, f"precondition of {name}")
    add, dele = _parse_conjunction(kw.get(":effect", SList()), arities, True, f"effect of {name}", negative_ok=True)
    for group, label, key in ((pre, "precondition", ":precondition"), (add + dele, "effect", ":effect")):
        _check_vars(group, params, f"action {name}", kw.get(key, node), label)
    try:
        return ActionSchema(str(name), params, pre, add, dele, pos=_where(node))
    except StructuralError as exc:
        _fail(node, str(exc))


def _parse_stream(node, arities) -> StreamSchema:
    if len(node) < 2:
        _fail(node, "stream needs a name")
    name = _expect_sym(node[1], "stream name")
    kw = _keywords(node, 2, {":inputs", ":domain", ":outputs", ":certified"}, f"stream {name}")
    inputs = _parse_vars(kw.get(":inputs", SList()), f"inputs of {name}")
    outputs = _parse_vars(kw.get(":outputs", SList()), f"outputs of {name}")
    for o in outputs:
        if o in inputs:
            _fail(kw[":outputs"], f"stream {name}: output {o} shadows an input")
    dom, _ = _parse_conjunction(kw.get(":domain", SList()), arities, True, f"domain of {name}")
    cert, _ = _parse_conjunction(kw.get(":certified", SList()), arities, True, f"certified facts of {name}")
    _check_vars(dom, inputs, f"stream {name}", kw.get(":domain", node), "domain")
    _check_vars(cert, inputs + outputs, f"stream {name}", kw.get(":certified", node), "certified")
    for atom in cert:
        if not atom.args:
            _fail(kw[":certified"], f"stream {name}: certified fact {atom} mentions no parameter")
    for o in outputs:
        if not any(o in a.args for a in cert):
            _fail(kw.get(":outputs", node), f"stream {name}: output {o} is never certified")
    return StreamSchema(str(name), inputs, dom, outputs, cert, pos=_where(node))


def _header(root, kind):
    root = _expect_list(root, kind)
    if len(root) < 2 or root[0] != "define":
        _fail(root, f"expected (define ({kind} NAME) ...)")
    head = _expect_list(root[1], f"{kind} header")
    if len(head) != 2 or head[0] != kind:
        _fail(head, f"expected ({kind} NAME)")
    return str(_expect_sym(head[1], f"{kind} name"))


def parse_domain(text: str) -> DomainDefinition:
    root = read_sexp(text)
    name = _header(root, "domain")
    predicates, actions, streams = [], [], []
    arities: dict = {}
    sections = [_expect_list(s, "domain section") for s in root[2:]]
    seen = set()
    for sec in sections:
        key = _expect_sym(sec[0], "section keyword") if sec else _fail(sec, "empty section")
        if key == ":action":
            continue
        if key in seen:
            _fail(key, f"duplicate section {key}")
        seen.add(key)
        if key == ":predicates":
            for p in sec[1:]:
                p = _expect_list(p, "predicate declaration")
                if not p:
                    _fail(p, "empty predicate declaration")
                pname = _expect_sym(p[0], "predicate name")
                if pname in arities:
                    _fail(pname, f"duplicate predicate {pname}")
                params = _parse_vars(SList(p[1:], p.line, p.column), f"predicate {pname}")
                arities[str(pname)] = len(params)
                predicates.append(Predicate(str(pname), len(params)))
        elif key != ":streams":
            _fail(key, f"unknown domain section {key}")
    names = set()
    for sec in sections:
        if sec[0] == ":action":
            a = _parse_action(sec, arities)
            if a.name in names:
                _fail(sec, f"duplicate action {a.name}")
            names.add(a.name)
            actions.append(a)
        elif sec[0] == ":streams":
            for s in sec[1:]:
                s = _expect_list(s, "stream declaration")
                if not s or s[0] != ":stream":
                    _fail(s, "expected (:stream NAME ...)")
                st = _parse_stream(s, arities)
                if st.name in names:
                    _fail(s, f"duplicate action or stream name {st.name}")
                names.add(st.name)
                streams.append(st)
    return DomainDefinition(name, tuple(predicates), tuple(actions), tuple(streams), pos=_where(root))


def _parse_number(node):
    node = _expect_sym(node, "coordinate")
    try:
        value = float(node)
    except ValueError:
        _fail(node, f"expected a number, got {node}")
    if value != value or value in (float("inf"), float("-inf")):
        _fail(node, "coordinates must be finite")
    return value


def _parse_ground(node, arities, objects, what) -> Fact:
    atom = _parse_atom(node, arities, False, what)
    for a, tok in zip(atom.args, node[1:]):
        if a not in objects:
            _fail(tok, f"undeclared object {a}")
    return Fact(atom.predicate, atom.args)


def parse_problem(text: str, domain: DomainDefinition) -> ProblemDefinition:
    root = read_sexp(text)
    name = _header(root, "problem")
    arities = domain.arities
    domain_name, objects, init, goal = None, [], [], []
    declared: dict = {}
    seen = set()
    for sec in root[2:]:
        sec = _expect_list(sec, "problem section")
        if not sec:
            _fail(sec, "empty section")
        key = _expect_sym(sec[0], "section keyword")
        if key in seen:
            _fail(key, f"duplicate section {key}")
        seen.add(key)
        if key == ":domain":
            if len(sec) != 2:
                _fail(sec, "expected (:domain NAME)")
            domain_name = str(_expect_sym(sec[1], "domain name"))
            if domain_name != domain.name:
                _fail(sec[1], f"problem refers to domain {domain_name}, parsed domain is {domain.name}")
        elif key == ":objects":
            for o in sec[1:]:
                if isinstance(o, SList):
                    if len(o) not in (3, 4):
                        _fail(o, "position annotation must be (name x y) or (name x y z)")
                    oname = _expect_sym(o[0], "object name")
                    payload = tuple(_parse_number(v) for v in o[1:])
                else:
                    oname, payload = o, None
                if is_variable(oname):
                    _fail(oname, "object names cannot start with '?'")
                if oname in declared:
                    _fail(oname, f"duplicate object {oname}")
                declared[str(oname)] = True
                objects.append(ObjectRef(str(oname), payload))
        elif key == ":init":
            init = [_parse_ground(f, arities, declared, "init") for f in sec[1:]]
        elif key == ":goal":
            if len(sec) != 2:
                _fail(sec, "expected (:goal FORMULA)")
            g = _expect_list(sec[1], "goal")
            parts = g[1:] if g and g[0] == "and" else ([g] if g else [])
            goal = [_parse_ground(f, arities, declared, "goal") for f in parts]
        else:
            _fail(key, f"unknown problem section {key}")
    if domain_name is None:
        _fail(root, "missing (:domain NAME)")
    return ProblemDefinition(name, domain_name, tuple(objects), frozenset(init), frozenset(goal), pos=_where(root))


def _fmt_number(v: float) -> str:
    return repr(float(v))


def _fmt_atom(a) -> str:
    return "(" + " ".join((a.predicate,) + tuple(a.args)) + ")"


def _fmt_conj(atoms, negated=()) -> str:
    parts = [_fmt_atom(a) for a in atoms] + ["(not " + _fmt_atom(a) + ")" for a in negated]
    return "(and" + "".join(" " + p for p in parts) + ")"


def serialize_domain(d: DomainDefinition) -> str:
    lines = [f"(define (domain {d.name})"]
    preds = " ".join("(" + " ".join([p.name] + [f"?x{i}" for i in range(p.arity)]) + ")" for p in d.predicates)
    lines.append(f"  (:predicates {preds})")
    for a in d.actions:
        lines.append(f"  (:action {a.name}")
        lines.append(f"    :parameters ({' '.join(a.params)})")
        lines.append(f"    :precondition {_fmt_conj(a.preconditions)}")
        lines.append(f"    :effect {_fmt_conj(a.add_effects, a.del_effects)})")
    if d.streams:
        lines.append("  (:streams")
        for s in d.streams:
            lines.append(f"    (:stream {s.name}")
            lines.append(f"      :inputs ({' '.join(s.inputs)})")
            lines.append(f"      :domain {_fmt_conj(s.domain)}")
            lines.append(f"      :outputs ({' '.join(s.outputs)})")
            lines.append(f"      :certified {_fmt_conj(s.certified)})")
        lines.append("  )")
    lines.append(")")
    return "\n".join(lines) + "\n"


def serialize_problem(p: ProblemDefinition) -> str:
    objs = []
    for o in p.objects:
        if o.payload is None:
            objs.append(o.name)
        else:
            objs.append("(" + " ".join([o.name] + [_fmt_number(v) for v in o.payload]) + ")")
    lines = [f"(define (problem {p.name}) (:domain {p.domain_name})"]
    lines.append("  (:objects " + " ".join(objs) + ")")
    init = sorted(p.init)
    lines.append("  (:init" + "".join("\n    " + _fmt_atom(f) for f in init) + ")")
    goal = sorted(p.goal)
    lines.append("  (:goal (and" + "".join("\n    " + _fmt_atom(f) for f in goal) + ")))")
    return "\n".join(lines) + "\n"


def serialize(definition) -> str:
    if isinstance(definition, DomainDefinition):
        return serialize_domain(definition)
    if isinstance(definition, ProblemDefinition):
        return serialize_problem(definition)
    raise TypeError(f"cannot serialize {type(definition).__name__}")


def load_domain(path) -> DomainDefinition:
    with open(path, encoding="utf-8") as fh:
        return parse_domain(fh.read())


def load_problem(path, domain: DomainDefinition) -> ProblemDefinition:
    with open(path, encoding="utf-8") as fh:
        return parse_problem(fh.read(), domain)


def problem_objects(problem: ProblemDefinition) -> dict:
    return {o.name: o for o in problem.objects}
