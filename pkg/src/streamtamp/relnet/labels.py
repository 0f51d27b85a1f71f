"""Canonical ancestry signatures and relevance labels for stream instances.

An object's signature is its name when it is an initial object, otherwise the
signature of the instance that produced it followed by ``#k`` for output k. An
instance's signature is ``schema(sig1,sig2,...)``. Optimistic objects and their
grounded counterparts therefore share one signature, and so do sibling outputs
of repeated evaluations of one instance.
"""
from __future__ import annotations

import json
from dataclasses import dataclass
from typing import Iterable, Optional

from ..symbolic import preimage


@dataclass(frozen=True)
class LabeledInstance:
    problem: str
    schema: str
    signature: str
    label: int

    def to_json(self) -> str:
        return json.dumps({"problem": self.problem, "schema": self.schema,
                           "signature": self.signature, "label": self.label}, sort_keys=True)

    @classmethod
    def from_json(cls, line: str) -> "LabeledInstance":
        d = json.loads(line)
        return cls(d["problem"], d["schema"], d["signature"], int(d["label"]))


class SignatureError(ValueError):
    pass


class Signer:
    """Memoized signatures over one registry."""

    def __init__(self, registry):
        self.registry = registry
        self._inst: dict = {}
        self._obj: dict = {}

    def ref(self, name: str):
        r = self._obj.get(name)
        if r is None:
            hit = self.registry.origin(name)
            r = name if hit is None else (self.node(hit[0]), hit[1])
            self._obj[name] = r
        return r

    def node(self, inst) -> SigNode:
        key = inst.key
        n = self._inst.get(key)
        if n is None:
            n = SigNode(inst.schema.name, tuple(self.ref(o) for o in inst.inputs))
            self._inst[key] = n
        return n

    def object(self, name: str) -> str:
        return _ref_str(self.ref(name))

    def instance(self, inst) -> str:
        return self.node(inst).key


# ------------------------------------------------------------------ parsing

class SigNode:
    """Parsed instance signature: schema plus input references. A reference
    is either a string (initial object) or (SigNode, output index)."""

    __slots__ = ("schema", "inputs", "key", "depth")

    def __init__(self, schema: str, inputs: tuple):
        self.schema = schema
        self.inputs = tuple(inputs)
        self.key = f"{schema}({','.join(_ref_str(r) for r in self.inputs)})"
        self.depth = 1 + max((r[0].depth for r in self.inputs if not isinstance(r, str)), default=0)

    def __str__(self):
        return self.key

    def __repr__(self):
        return f"SigNode({self.key})"

    def __eq__(self, other):
        return isinstance(other, SigNode) and other.key == self.key

    def __hash__(self):
        return hash(self.key)


def _ref_str(r) -> str:
    return r if isinstance(r, str) else f"{r[0].key}#{r[1]}"


def parse_signature(text: str) -> SigNode:
    pos = 0

    def name():
        nonlocal pos
        start = pos
        while pos < len(text) and text[pos] not in "(),#":
            pos += 1
        if start == pos:
            raise SignatureError(f"empty name at {start} in {text!r}")
        return text[start:pos]

    def instance(head):
        nonlocal pos
        if pos >= len(text) or text[pos] != "(":
            raise SignatureError(f"expected '(' at {pos} in {text!r}")
        pos += 1
        args = []
        if pos < len(text) and text[pos] == ")":
            pos += 1
            return SigNode(head, ())
        while True:
            args.append(ref())
            if pos >= len(text):
                raise SignatureError(f"unterminated signature {text!r}")
            if text[pos] == ",":
                pos += 1
                continue
            if text[pos] == ")":
                pos += 1
                return SigNode(head, tuple(args))
            raise SignatureError(f"unexpected {text[pos]!r} at {pos} in {text!r}")

    def ref():
        nonlocal pos
        head = name()
        if pos < len(text) and text[pos] == "(":
            node = instance(head)
            if pos >= len(text) or text[pos] != "#":
                raise SignatureError(f"instance reference without output index in {text!r}")
            pos += 1
            start = pos
            while pos < len(text) and text[pos].isdigit():
                pos += 1
            if start == pos:
                raise SignatureError(f"missing output index in {text!r}")
            return (node, int(text[start:pos]))
        return head

    head = name()
    node = instance(head)
    if pos != len(text):
        raise SignatureError(f"trailing characters in {text!r}")
    return node


def ancestors(node: SigNode) -> list:
    """All instance signatures reachable from node, node included, parents first."""
    out, seen = [], set()

    def visit(n):
        key = n.key
        if key in seen:
            return
        for r in n.inputs:
            if not isinstance(r, str):
                visit(r[0])
        seen.add(key)
        out.append(n)
    visit(node)
    return out


# ------------------------------------------------------------------ labels

def relevant_signatures(plan, registry, signer: Optional[Signer] = None) -> set:
    """Signatures of instances certifying non-initial preimage facts of plan,
    closed under the producers of their inputs."""
    signer = signer or Signer(registry)
    relevant = set()
    frontier = []
    for f in sorted(preimage(plan)):
        if f in registry.init:
            continue
        certs = registry.certifiers.get(f, ())
        if not certs:
            continue
        frontier.append(min(certs, key=lambda i: (registry.level(i), i.uid)))
    while frontier:
        inst = frontier.pop()
        s = signer.instance(inst)
        if s in relevant:
            continue
        relevant.add(s)
        for o in inst.inputs:
            hit = registry.origin(o)
            if hit is not None:
                frontier.append(hit[0])
    return relevant


def label_instances(problem_id: str, plan, registry) -> list:
    """One LabeledInstance per distinct signature seen in a solved run."""
    signer = Signer(registry)
    relevant = relevant_signatures(plan, registry, signer)
    seen = {}
    for inst in registry.instance_list:
        s = signer.instance(inst)
        if s not in seen:
            seen[s] = LabeledInstance(problem_id, inst.schema.name, s, int(s in relevant))
    return [seen[s] for s in sorted(seen)]


def label_dataset(runs: Iterable) -> list:
    """runs: (problem id, plan, registry) triples for solved problems.

    The output is sorted, so it does not depend on run order.
    """
    out = {}
    for pid, plan, registry in runs:
        for rec in label_instances(pid, plan, registry):
            out[(rec.problem, rec.signature)] = rec
    return [out[k] for k in sorted(out)]


def class_counts(records: Iterable[LabeledInstance]) -> dict:
    counts: dict = {}
    for r in records:
        c = counts.setdefault(r.problem, [0, 0])
        c[1 - r.label] += 1
    return {k: {"positives": v[0], "negatives": v[1]} for k, v in counts.items()}


def write_dataset(path, records: Iterable[LabeledInstance]) -> int:
    n = 0
    with open(path, "w") as fh:
        for r in records:
            fh.write(r.to_json() + "\n")
            n += 1
    return n


def read_dataset(path) -> list:
    with open(path) as fh:
        return [LabeledInstance.from_json(line) for line in fh if line.strip()]
