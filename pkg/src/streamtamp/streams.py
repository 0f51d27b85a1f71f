"""Stream schemas, instance registry, optimistic/grounded results and levels."""
from __future__ import annotations

import hashlib
from dataclasses import dataclass, field
from typing import Any, Callable, Iterable, Iterator, Optional

import numpy as np

from .symbolic import Atom, Fact, ObjectRef, StructuralError


class ContractError(RuntimeError):
    """A stream was used outside its contract, e.g. evaluated on optimistic inputs."""


class _Exhausted:
    _instance = None

    def __new__(cls):
        if cls._instance is None:
            cls._instance = super().__new__(cls)
        return cls._instance

    def __repr__(self):
        return "EXHAUSTED"


# Samplers return this to say no further outputs exist for the given inputs.
EXHAUSTED = _Exhausted()


@dataclass(frozen=True)
class StreamSchema:
    name: str
    inputs: tuple
    domain: tuple
    outputs: tuple
    certified: tuple
    pos: Any = field(default=None, compare=False, repr=False)

    def __post_init__(self):
        ins, outs = set(self.inputs), set(self.outputs)
        if ins & outs:
            raise StructuralError(f"stream {self.name}: outputs shadow inputs")
        for atom in self.domain:
            if not set(atom.variables()) <= ins:
                raise StructuralError(f"stream {self.name}: domain fact {atom} uses a non-input")
        for atom in self.certified:
            if not set(atom.variables()) <= ins | outs:
                raise StructuralError(f"stream {self.name}: certified fact {atom} uses an undeclared variable")
        bound = {v for atom in self.domain for v in atom.variables()}
        if not ins <= bound:
            raise StructuralError(f"stream {self.name}: every input must appear in a domain fact")


@dataclass
class SamplerSpec:
    """A black-box generator for one stream schema.

    fn(inputs, rng, attempt) receives input payloads and returns a tuple of output
    payloads, None on failure, or EXHAUSTED. A deterministic sampler gives the same
    answer every time, so its instance is exhausted after one evaluation.
    """

    fn: Callable
    deterministic: bool = False


def as_sampler(obj) -> SamplerSpec:
    return obj if isinstance(obj, SamplerSpec) else SamplerSpec(obj)


class StreamInstance:
    __slots__ = ("uid", "schema", "inputs", "domain_facts", "count", "exhausted", "live",
                 "results", "parents", "seed_key", "_hash")

    def __init__(self, schema: StreamSchema, inputs: tuple, uid: int = -1):
        if len(inputs) != len(schema.inputs):
            raise StructuralError(f"stream {schema.name} expects {len(schema.inputs)} inputs")
        self.uid = uid
        self.schema = schema
        self.inputs = tuple(inputs)
        binding = dict(zip(schema.inputs, self.inputs))
        self.domain_facts = tuple(a.ground(binding) for a in schema.domain)
        self.count = 0
        self.exhausted = False
        self.live: Optional[StreamResult] = None
        self.results: list = []
        self.parents: tuple = ()
        self.seed_key = 0
        self._hash = hash(self.key)

    @property
    def key(self) -> tuple:
        return (self.schema.name, self.inputs)

    @property
    def name(self) -> str:
        return self.schema.name

    def __eq__(self, other):
        return isinstance(other, StreamInstance) and other.key == self.key

    def __hash__(self):
        return self._hash

    def __repr__(self):
        return f"{self.schema.name}({', '.join(self.inputs)})"


class StreamResult:
    __slots__ = ("uid", "instance", "outputs", "certified", "optimistic", "count_at",
                 "score", "parents", "retired", "added")

    def __init__(self, uid, instance, outputs, certified, optimistic, count_at):
        self.uid = uid
        self.instance = instance
        self.outputs = tuple(outputs)
        self.certified = tuple(certified)
        self.optimistic = optimistic
        self.count_at = count_at
        self.score = 0.0
        self.parents: tuple = ()
        self.retired = False
        self.added = False

    def __repr__(self):
        kind = "opt" if self.optimistic else "ground"
        return f"<{kind} {self.instance!r} -> {', '.join(self.outputs)}>"


def certify(schema: StreamSchema, inputs: tuple, outputs: tuple) -> tuple:
    binding = dict(zip(schema.inputs, inputs))
    binding.update(zip(schema.outputs, outputs))
    return tuple(a.ground(binding) for a in schema.certified)


class FactIndex:
    """Insertion-ordered fact store with per-argument lookup for joins."""

    def __init__(self, facts: Iterable[Fact] = ()):
        self.by_pred: dict = {}
        self.by_arg: dict = {}
        for f in facts:
            self.add(f)

    def __contains__(self, f):
        d = self.by_pred.get(f.predicate)
        return d is not None and f in d

    def __len__(self):
        return sum(len(d) for d in self.by_pred.values())

    def __iter__(self):
        for d in self.by_pred.values():
            yield from d

    def add(self, f: Fact) -> bool:
        d = self.by_pred.setdefault(f.predicate, {})
        if f in d:
            return False
        d[f] = None
        for i, a in enumerate(f.args):
            self.by_arg.setdefault((f.predicate, i, a), {})[f] = None
        return True

    def discard(self, f: Fact) -> bool:
        d = self.by_pred.get(f.predicate)
        if d is None or f not in d:
            return False
        del d[f]
        for i, a in enumerate(f.args):
            self.by_arg[(f.predicate, i, a)].pop(f, None)
        return True

    def candidates(self, atom: Atom, binding: dict):
        best = None
        for i, a in enumerate(atom.args):
            v = binding.get(a) if a[0] == "?" else a
            if v is not None:
                d = self.by_arg.get((atom.predicate, i, v))
                if d is None:
                    return ()
                if best is None or len(d) < len(best):
                    best = d
        if best is None:
            best = self.by_pred.get(atom.predicate, ())
        return tuple(best)


def _unify(atom: Atom, f: Fact, binding: dict) -> Optional[dict]:
    if atom.predicate != f.predicate or len(atom.args) != len(f.args):
        return None
    out = None
    for a, v in zip(atom.args, f.args):
        if a[0] != "?":
            if a != v:
                return None
            continue
        bound = binding.get(a) if out is None else out.get(a)
        if bound is None:
            if out is None:
                out = dict(binding)
            out[a] = v
        elif bound != v:
            return None
    return binding if out is None else out


def join(atoms: tuple, index: FactIndex, binding: Optional[dict] = None) -> Iterator[dict]:
    """All extensions of binding under which every atom is in index."""
    binding = {} if binding is None else binding
    if not atoms:
        yield binding
        return
    best, best_bound = 0, -1
    for i, t in enumerate(atoms):
        nb = sum(1 for a in t.args if a[0] != "?" or a in binding)
        if nb > best_bound:
            best, best_bound = i, nb
    t = atoms[best]
    rest = atoms[:best] + atoms[best + 1:]
    for f in index.candidates(t, binding):
        b2 = _unify(t, f, binding)
        if b2 is not None:
            yield from join(rest, index, b2)


def _bindings(schema: StreamSchema, index: FactIndex, delta: Optional[tuple] = None) -> list:
    """Input tuples satisfying the schema domain. With delta, only those using a delta fact."""
    found = {}
    if delta is None:
        for b in join(schema.domain, index):
            found[tuple(b[v] for v in schema.inputs)] = None
        return list(found)
    for i, t in enumerate(schema.domain):
        rest = schema.domain[:i] + schema.domain[i + 1:]
        for f in delta:
            b0 = _unify(t, f, {})
            if b0 is None:
                continue
            for b in join(rest, index, b0):
                found[tuple(b[v] for v in schema.inputs)] = None
    return list(found)


def instantiate_all(streams: Iterable[StreamSchema], facts: Iterable[Fact]) -> frozenset:
    """Every stream instance whose domain facts all hold in facts."""
    index = FactIndex(sorted(facts))
    out = []
    for s in streams:
        out.extend(StreamInstance(s, inputs) for inputs in _bindings(s, index))
    return frozenset(out)


def expand(result: StreamResult, facts: Iterable[Fact], streams: Iterable[StreamSchema],
           registered: Iterable = ()) -> frozenset:
    """Instances newly enabled by result.certified that are not in registered."""
    index = FactIndex(sorted(set(facts) | set(result.certified)))
    known = {i.key if isinstance(i, StreamInstance) else i for i in registered}
    out = []
    for s in streams:
        for inputs in _bindings(s, index, result.certified):
            if (s.name, inputs) not in known:
                out.append(StreamInstance(s, inputs))
    return frozenset(out)


def stable_hash(text: str) -> int:
    return int.from_bytes(hashlib.blake2b(text.encode("utf-8"), digest_size=8).digest(), "little")


def _payload_key(payload) -> tuple:
    return (type(payload).__name__, payload)


class StreamRegistry:
    """All stream state owned by one solve: objects, facts, instances and results."""

    def __init__(self, streams: Iterable[StreamSchema], samplers: dict, init: Iterable[Fact] = (),
                 objects: Iterable[ObjectRef] = (), seed: int = 0):
        self.streams = tuple(streams)
        self.samplers = {k: as_sampler(v) for k, v in samplers.items()}
        self.seed = int(seed)
        self.objects: dict = {}
        self.initial_objects: set = set()
        self._by_payload: dict = {}
        for o in objects:
            self.objects[o.name] = o
            self.initial_objects.add(o.name)
            if o.payload is not None:
                self._by_payload.setdefault(_payload_key(o.payload), o.name)
        self.init = frozenset(init)
        self.index = FactIndex(sorted(self.init))
        self.ground: set = set(self.init)
        self.opt_counts: dict = {}
        self.instances: dict = {}
        self.instance_list: list = []
        self.results: list = []
        self.certifiers: dict = {}
        self.opt_certifiers: dict = {}
        self.consumers: dict = {}
        self.object_results: dict = {}
        self.ground_origin: dict = {}
        self._name_counter = 0
        self.evaluations = 0
        self._level_cache: dict = {}
        self._level_version = -1
        self.version = 0

    # ------------------------------------------------------------------ facts
    def holds(self, f: Fact) -> bool:
        return f in self.index

    def facts(self) -> list:
        return list(self.index)

    def optimistic_facts(self) -> list:
        return [f for f, c in self.opt_counts.items() if c > 0 and f not in self.ground]

    def add_result_facts(self, result: StreamResult) -> list:
        """Add certified facts to the fact base; returns the facts that became present."""
        new = []
        if result.optimistic:
            if result.added or result.retired:
                return new
            result.added = True
        for f in result.certified:
            present = f in self.index
            if result.optimistic:
                self.opt_counts[f] = self.opt_counts.get(f, 0) + 1
            else:
                self.ground.add(f)
            if not present:
                self.index.add(f)
                new.append(f)
            lst = self.certifiers.setdefault(f, [])
            if result.instance not in lst:
                lst.append(result.instance)
            if result.optimistic:
                self.opt_certifiers.setdefault(f, []).append(result)
        return new

    def retire(self, result: StreamResult) -> list:
        """Remove an optimistic result's facts unless supported otherwise.

        Results that consumed a removed fact lose their support too, so their
        facts are removed in turn. Returns every fact that disappeared.
        """
        gone = []
        stack = [result]
        while stack:
            r = stack.pop()
            if r.retired or not r.optimistic:
                continue
            r.retired = True
            if r.instance.live is r:
                r.instance.live = None
            if not r.added:
                continue
            for f in r.certified:
                c = self.opt_counts.get(f, 0)
                if c <= 0:
                    continue
                lst = self.opt_certifiers.get(f)
                if lst and r in lst:
                    lst.remove(r)
                self.opt_counts[f] = c - 1
                if c == 1 and f not in self.ground:
                    self.index.discard(f)
                    gone.append(f)
                    for inst in self.consumers.get(f, ()):
                        live = inst.live
                        if live is not None and live.added and not live.retired:
                            stack.append(live)
        return gone

    def domain_holds(self, inst: StreamInstance) -> bool:
        return all(f in self.index for f in inst.domain_facts)

    def result_active(self, result: StreamResult) -> bool:
        return all(f in self.index for f in result.instance.domain_facts)

    # -------------------------------------------------------------- instances
    def get(self, schema_name: str, inputs: tuple) -> Optional[StreamInstance]:
        return self.instances.get((schema_name, tuple(inputs)))

    def register(self, inst: StreamInstance) -> StreamInstance:
        old = self.instances.get(inst.key)
        if old is not None:
            return old
        inst.uid = len(self.instance_list)
        inst.seed_key = stable_hash(inst.schema.name + "|" + "|".join(self._stable_name(o) for o in inst.inputs))
        self.instances[inst.key] = inst
        self.instance_list.append(inst)
        for f in inst.domain_facts:
            self.consumers.setdefault(f, []).append(inst)
        return inst

    def get_or_create(self, schema: StreamSchema, inputs: tuple) -> StreamInstance:
        inst = self.instances.get((schema.name, tuple(inputs)))
        return inst if inst is not None else self.register(StreamInstance(schema, tuple(inputs)))

    def _stable_name(self, name: str) -> str:
        if name in self.initial_objects:
            return name
        o = self.objects[name]
        if o.optimistic:
            return name
        return repr(_payload_key(o.payload))

    def instantiate_all(self) -> list:
        """Register every instance enabled by the current facts; returns the new ones."""
        new = []
        for s in self.streams:
            for inputs in _bindings(s, self.index):
                if (s.name, inputs) not in self.instances:
                    new.append(self.register(StreamInstance(s, inputs)))
        return new

    def expand(self, result: StreamResult) -> list:
        new = []
        for s in self.streams:
            for inputs in _bindings(s, self.index, result.certified):
                if (s.name, inputs) not in self.instances:
                    new.append(self.register(StreamInstance(s, inputs)))
        return new

    # ---------------------------------------------------------------- results
    def _fresh_name(self, var: str, optimistic: bool) -> str:
        self._name_counter += 1
        return f"{var.lstrip('?')}{'*' if optimistic else '#'}{self._name_counter}"

    def next_optimistic(self, inst: StreamInstance) -> StreamResult:
        live = inst.live
        if live is not None and not live.retired and live.count_at == inst.count:
            return live
        outs = []
        for k, var in enumerate(inst.schema.outputs):
            name = self._fresh_name(var, True)
            self.objects[name] = ObjectRef(name, None, inst.uid, k)
            outs.append(name)
        outs = tuple(outs)
        r = StreamResult(len(self.results), inst, outs, certify(inst.schema, inst.inputs, outs), True, inst.count)
        self.results.append(r)
        for name in outs:
            self.object_results[name] = r
        inst.live = r
        return r

    def is_grounded(self, inst: StreamInstance) -> bool:
        return all(not self.objects[o].optimistic for o in inst.inputs)

    def rng_for(self, inst: StreamInstance, count: int) -> np.random.Generator:
        return np.random.default_rng([self.seed & 0xFFFFFFFF, inst.seed_key, count])

    def evaluate(self, inst: StreamInstance) -> Optional[StreamResult]:
        if not self.is_grounded(inst):
            raise ContractError(f"{inst!r} has optimistic inputs and cannot be evaluated")
        if inst.exhausted:
            return None
        spec = self.samplers.get(inst.schema.name)
        if spec is None:
            raise ContractError(f"no sampler registered for stream {inst.schema.name}")
        attempt = inst.count
        rng = self.rng_for(inst, attempt)
        inst.count += 1
        self.evaluations += 1
        self.version += 1
        payloads = tuple(self.objects[o].payload for o in inst.inputs)
        out = spec.fn(payloads, rng, attempt)
        if spec.deterministic:
            inst.exhausted = True
        if out is EXHAUSTED:
            inst.exhausted = True
            return None
        if out is None:
            return None
        out = tuple(out)
        if len(out) != len(inst.schema.outputs):
            raise ContractError(f"sampler {inst.schema.name} returned {len(out)} outputs")
        names = tuple(self._ground_name(var, p, inst, k) for k, (var, p) in enumerate(zip(inst.schema.outputs, out)))
        r = StreamResult(len(self.results), inst, names, certify(inst.schema, inst.inputs, names), False, inst.count)
        self.results.append(r)
        inst.results.append(r)
        return r

    def _ground_name(self, var: str, payload, inst: StreamInstance, k: int) -> str:
        key = _payload_key(payload)
        name = self._by_payload.get(key)
        if name is None:
            name = self._fresh_name(var, False)
            self.objects[name] = ObjectRef(name, payload)
            self._by_payload[key] = name
            self.ground_origin[name] = (inst.uid, k)
        return name

    def origin(self, obj: str) -> Optional[tuple]:
        """(instance, output index) that first produced obj, None for initial objects."""
        o = self.objects[obj]
        if o.optimistic:
            return self.instance_list[o.producer], o.index
        hit = self.ground_origin.get(obj)
        if hit is None:
            return None
        return self.instance_list[hit[0]], hit[1]

    # ------------------------------------------------------------------ level
    def level(self, inst: StreamInstance) -> int:
        if self._level_version != self.version:
            self._level_cache = {}
            self._level_version = self.version
        return self._level(inst, self._level_cache, set())

    def _level(self, inst, memo, active) -> int:
        got = memo.get(inst.uid)
        if got is not None:
            return got
        assert inst.uid not in active, "cycle in stream ancestry"
        active.add(inst.uid)
        best_parent = 0
        for f in inst.domain_facts:
            if f in self.init:
                continue
            certs = self.certifiers.get(f)
            if not certs:
                continue
            lv = min(self._level(c, memo, active) for c in certs)
            if lv > best_parent:
                best_parent = lv
        active.discard(inst.uid)
        value = 1 + inst.count + best_parent
        if inst.uid >= 0:
            memo[inst.uid] = value
        return value

    def fact_level(self, f: Fact) -> int:
        if f in self.init:
            return 0
        certs = self.certifiers.get(f)
        if not certs:
            return 0
        return min(self.level(c) for c in certs)

    def live_certifier(self, f: Fact) -> Optional[StreamResult]:
        """The lowest-level optimistic result currently certifying f."""
        lst = self.opt_certifiers.get(f)
        if not lst:
            return None
        return min(lst, key=lambda r: (self.level(r.instance), r.uid))

    def object_result(self, obj: str) -> Optional[StreamResult]:
        return self.object_results.get(obj)

    def producer(self, obj: str) -> Optional[StreamInstance]:
        o = self.objects.get(obj)
        if o is None or not o.optimistic:
            return None
        return self.instance_list[o.producer]
