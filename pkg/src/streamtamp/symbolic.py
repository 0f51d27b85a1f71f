"""Ground symbolic machinery: objects, facts, states, actions and plans.

Facts are plain named tuples of interned strings so that states (frozensets of
facts) hash and compare cheaply. Object payloads live in ObjectRef records that
are looked up by name when geometry is needed.
"""
from __future__ import annotations

import sys
from dataclasses import dataclass, field
from typing import Any, Iterable, NamedTuple, Optional, Sequence


class StructuralError(ValueError):
    """Raised when a binding or template does not match its declaration."""


class InvalidStep(ValueError):
    """Raised by apply() when an action is not applicable."""


def is_variable(token: str) -> bool:
    return token.startswith("?")


@dataclass(frozen=True, eq=False)
class ObjectRef:
    """A named entity. Optimistic refs point at the stream instance producing them."""

    name: str
    payload: Any = None
    producer: Optional[int] = None
    index: int = -1

    @property
    def optimistic(self) -> bool:
        return self.producer is not None

    def __eq__(self, other):
        return isinstance(other, ObjectRef) and other.name == self.name

    def __hash__(self):
        return hash(self.name)

    def __repr__(self):
        return f"ObjectRef({self.name})"


@dataclass(frozen=True)
class Predicate:
    name: str
    arity: int


class Fact(NamedTuple):
    predicate: str
    args: tuple

    def __str__(self):
        return "(" + " ".join((self.predicate,) + tuple(self.args)) + ")"


def fact(predicate: str, *args: str) -> Fact:
    return Fact(sys.intern(predicate), tuple(sys.intern(a) for a in args))


State = frozenset


class Atom(NamedTuple):
    """A fact template whose args may be variables (leading '?')."""

    predicate: str
    args: tuple

    def ground(self, binding: dict) -> Fact:
        return Fact(self.predicate, tuple(binding[a] if a[0] == "?" else a for a in self.args))

    def variables(self) -> tuple:
        return tuple(a for a in self.args if is_variable(a))

    def __str__(self):
        return "(" + " ".join((self.predicate,) + tuple(self.args)) + ")"


@dataclass(frozen=True)
class ActionSchema:
    name: str
    params: tuple
    preconditions: tuple
    add_effects: tuple
    del_effects: tuple
    pos: Any = field(default=None, compare=False, repr=False)

    def __post_init__(self):
        declared = set(self.params)
        for group in (self.preconditions, self.add_effects, self.del_effects):
            for atom in group:
                for v in atom.variables():
                    if v not in declared:
                        raise StructuralError(f"action {self.name}: variable {v} not in parameters")

    def instantiate(self, args: Sequence[str]) -> "ActionInstance":
        return ActionInstance(self, tuple(args))


@dataclass(frozen=True)
class ActionInstance:
    schema: ActionSchema
    args: tuple

    def __post_init__(self):
        if len(self.args) != len(self.schema.params):
            raise StructuralError(
                f"action {self.schema.name} expects {len(self.schema.params)} arguments, got {len(self.args)}")

    @property
    def name(self) -> str:
        return self.schema.name

    @property
    def binding(self) -> dict:
        return dict(zip(self.schema.params, self.args))

    def _ground(self, atoms) -> frozenset:
        b = self.binding
        return frozenset(a.ground(b) for a in atoms)

    @property
    def preconditions(self) -> frozenset:
        return self._ground(self.schema.preconditions)

    @property
    def add_effects(self) -> frozenset:
        return self._ground(self.schema.add_effects)

    @property
    def del_effects(self) -> frozenset:
        return self._ground(self.schema.del_effects)

    def rename(self, mapping: dict) -> "ActionInstance":
        return ActionInstance(self.schema, tuple(mapping.get(a, a) for a in self.args))

    def __str__(self):
        return "(" + " ".join((self.name,) + self.args) + ")"


@dataclass(frozen=True)
class Plan:
    steps: tuple = ()

    def __len__(self):
        return len(self.steps)

    def __iter__(self):
        return iter(self.steps)

    def rename(self, mapping: dict) -> "Plan":
        return Plan(tuple(a.rename(mapping) for a in self.steps))


def _steps(plan) -> Sequence[ActionInstance]:
    return plan.steps if isinstance(plan, Plan) else tuple(plan)


def is_applicable(state: Iterable[Fact], a: ActionInstance) -> bool:
    if not isinstance(state, (set, frozenset)):
        state = frozenset(state)
    return a.preconditions <= state


def apply(state: Iterable[Fact], a: ActionInstance) -> frozenset:
    state = frozenset(state)
    if not a.preconditions <= state:
        missing = sorted(str(f) for f in a.preconditions - state)
        raise InvalidStep(f"{a} not applicable, missing {', '.join(missing)}")
    return (state - a.del_effects) | a.add_effects


def preimage(plan) -> frozenset:
    """Facts that must hold initially for the whole plan to be applicable."""
    achieved: set = set()
    needed: set = set()
    for a in _steps(plan):
        needed |= a.preconditions - achieved
        achieved |= a.add_effects
    return frozenset(needed)


def explain_plan(init: Iterable[Fact], goal: Iterable[Fact], plan) -> Optional[str]:
    """Return None for a valid plan, else a message naming the first failure."""
    state = frozenset(init)
    for i, a in enumerate(_steps(plan)):
        missing = a.preconditions - state
        if missing:
            names = ", ".join(sorted(str(f) for f in missing))
            return f"step {i} {a}: missing {names}"
        state = (state - a.del_effects) | a.add_effects
    unmet = frozenset(goal) - state
    if unmet:
        return "goal not reached: " + ", ".join(sorted(str(f) for f in unmet))
    return None


def validate_plan(init: Iterable[Fact], goal: Iterable[Fact], plan) -> bool:
    return explain_plan(init, goal, plan) is None
