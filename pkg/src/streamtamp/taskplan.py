"""Grounding, delete-relaxation heuristics and forward search over STRIPS tasks.

The grounder keeps a monotone universe of facts and ground operators so that
replanning after new stream facts only joins the new facts. Each call then picks
out the operators that are relaxed-reachable from the current fact set.
"""
from __future__ import annotations

import heapq
import time
from collections import deque
from dataclasses import dataclass, field
from typing import Iterable, Optional

import numpy as np

from .streams import FactIndex, _unify, join
from .symbolic import ActionInstance, Fact, Plan, preimage


class UnknownPredicate(ValueError):
    pass


class GroundOp:
    __slots__ = ("uid", "action", "static_pre", "fluent_pre", "add", "dele",
                 "pre_ids", "add_ids", "del_ids", "pre_mask", "add_mask", "del_mask")

    def __init__(self, uid, action: ActionInstance, fluents: frozenset):
        self.uid = uid
        self.action = action
        pre = sorted(action.preconditions)
        self.static_pre = tuple(f for f in pre if f.predicate not in fluents)
        self.fluent_pre = tuple(f for f in pre if f.predicate in fluents)
        self.add = tuple(sorted(action.add_effects))
        self.dele = tuple(sorted(action.del_effects - action.add_effects))
        self.pre_ids = self.add_ids = self.del_ids = ()
        self.pre_mask = self.add_mask = self.del_mask = 0

    def __repr__(self):
        return str(self.action)


@dataclass
class GroundedTask:
    """A propositional task over fluent atoms; static preconditions are compiled away."""

    atoms: list
    ops: list
    init: int
    goal: int
    n_atoms: int = 0
    _arrays: Optional[tuple] = field(default=None, repr=False)
    _segments: Optional[np.ndarray] = field(default=None, repr=False)

    def __post_init__(self):
        self.n_atoms = len(self.atoms)
        self.no_pre_ops = [o for o in self.ops if not o.pre_ids]
        anchors: dict = {}
        freq: dict = {}
        for o in self.ops:
            for a in o.pre_ids:
                freq[a] = freq.get(a, 0) + 1
        for o in self.ops:
            if o.pre_ids:
                anchor = min(o.pre_ids, key=lambda a: (freq[a], a))
                anchors.setdefault(anchor, []).append(o)
        self.anchors = anchors

    def atom_index(self) -> dict:
        return {f: i for i, f in enumerate(self.atoms)}

    def mask(self, facts: Iterable[Fact]) -> int:
        idx = self.atom_index()
        m = 0
        for f in facts:
            m |= 1 << idx[f]
        return m

    def facts_of(self, state: int) -> frozenset:
        return frozenset(self.atoms[i] for i in iter_bits(state))

    def successors(self, state: int):
        seen = set()
        for a in iter_bits(state):
            for o in self.anchors.get(a, ()):
                if state & o.pre_mask == o.pre_mask and o.uid not in seen:
                    seen.add(o.uid)
                    yield o
        for o in self.no_pre_ops:
            yield o

    def segment_ids(self) -> np.ndarray:
        """For each sorted add entry, the index of its atom segment."""
        if self._segments is None:
            add_starts = self.arrays()[5]
            n = len(self.arrays()[4])
            seg = np.zeros(n, dtype=np.int64)
            if len(add_starts) > 1:
                seg[add_starts[1:]] = 1
            self._segments = np.cumsum(seg)
        return self._segments

    def arrays(self):
        if self._arrays is None:
            n_ops = len(self.ops)
            pre_len = np.array([len(o.pre_ids) for o in self.ops], dtype=np.int64)
            has_pre = np.nonzero(pre_len)[0]
            pre_flat = np.array([a for o in self.ops for a in o.pre_ids], dtype=np.int64)
            starts = np.concatenate([[0], np.cumsum(pre_len)[:-1]])[has_pre] if n_ops else np.zeros(0, np.int64)
            add_atom = np.array([a for o in self.ops for a in o.add_ids], dtype=np.int64)
            add_owner = np.repeat(np.arange(n_ops), [len(o.add_ids) for o in self.ops]).astype(np.int64)
            order = np.argsort(add_atom, kind="stable")
            add_atom, add_owner = add_atom[order], add_owner[order]
            if len(add_atom):
                first = np.concatenate([[True], add_atom[1:] != add_atom[:-1]])
                add_starts = np.nonzero(first)[0]
                add_targets = add_atom[add_starts]
            else:
                add_starts = add_targets = np.zeros(0, np.int64)
            goal_ids = np.array(list(iter_bits(self.goal)), dtype=np.int64)
            self._arrays = (n_ops, has_pre, pre_flat, starts, add_owner, add_starts, add_targets, goal_ids)
        return self._arrays


def iter_bits(x: int):
    while x:
        low = x & -x
        yield low.bit_length() - 1
        x ^= low


def _state_vector(task: GroundedTask, state: int) -> np.ndarray:
    n = task.n_atoms
    nbytes = (n + 7) // 8
    raw = np.frombuffer(state.to_bytes(max(nbytes, 1), "little"), dtype=np.uint8)
    return np.unpackbits(raw, bitorder="little")[:n].astype(bool)


def _relaxed_costs(task: GroundedTask, state: int, additive: bool, with_ops: bool = False):
    n_ops, has_pre, pre_flat, starts, add_owner, add_starts, add_targets, _ = task.arrays()
    cost = np.full(task.n_atoms, np.inf)
    cost[_state_vector(task, state)] = 0.0
    op_cost = np.ones(n_ops)
    if n_ops == 0 or len(add_owner) == 0:
        return (cost, op_cost) if with_ops else cost
    reduce = np.add.reduceat if additive else np.maximum.reduceat
    while True:
        if len(has_pre):
            op_cost[has_pre] = 1.0 + reduce(cost[pre_flat], starts)
        best = np.minimum.reduceat(op_cost[add_owner], add_starts)
        current = cost[add_targets]
        improved = best < current
        if not improved.any():
            return (cost, op_cost) if with_ops else cost
        cost[add_targets[improved]] = best[improved]


def relaxed_plan(task: GroundedTask, state: int):
    """FF relaxed plan over h_add best supporters.

    Returns (number of relaxed-plan operators, helpful operators), where helpful
    operators are relaxed-plan operators applicable in state.
    """
    if state & task.goal == task.goal:
        return 0.0, ()
    cost, op_cost = _relaxed_costs(task, state, True, with_ops=True)
    n_ops, _, _, _, add_owner, add_starts, add_targets, goal_ids = task.arrays()
    if not np.isfinite(cost[goal_ids]).all():
        return np.inf, ()
    seg = task.segment_ids()
    vals = op_cost[add_owner]
    best = np.minimum.reduceat(vals, add_starts)
    hit = np.nonzero(vals == best[seg])[0]
    first_seg, first_pos = np.unique(seg[hit], return_index=True)
    supporter = dict(zip(add_targets[first_seg].tolist(), add_owner[hit[first_pos]].tolist()))
    chosen = {}
    stack = [int(g) for g in goal_ids if cost[g] > 0]
    marked = set(stack)
    ops = task.ops
    while stack:
        a = stack.pop()
        oi = supporter[a]
        if oi in chosen:
            continue
        o = ops[oi]
        chosen[oi] = o
        for p in o.pre_ids:
            if cost[p] > 0 and p not in marked:
                marked.add(p)
                stack.append(p)
    helpful = tuple(o for oi, o in sorted(chosen.items()) if state & o.pre_mask == o.pre_mask)
    return float(len(chosen)), helpful


def heuristic_hadd(task: GroundedTask, state: int) -> float:
    """Additive delete-relaxation cost of the goal, unit action costs."""
    if state & task.goal == task.goal:
        return 0.0
    cost = _relaxed_costs(task, state, True)
    goal_ids = task.arrays()[7]
    return float(cost[goal_ids].sum())


def heuristic_hmax(task: GroundedTask, state: int) -> float:
    if state & task.goal == task.goal:
        return 0.0
    cost = _relaxed_costs(task, state, False)
    goal_ids = task.arrays()[7]
    return float(cost[goal_ids].max()) if len(goal_ids) else 0.0


@dataclass
class SearchResult:
    plan: Optional[Plan]
    status: str  # solved | exhausted | budget
    expanded: int = 0
    evaluated: int = 0

    def __bool__(self):
        return self.plan is not None


def _extract(parents: dict, state: int) -> Plan:
    steps = []
    while True:
        prev, op = parents[state]
        if op is None:
            break
        steps.append(op.action)
        state = prev
    return Plan(tuple(reversed(steps)))


def search(task: GroundedTask, max_nodes: int = 1_000_000, deadline: Optional[float] = None,
           mode: str = "gbfs") -> SearchResult:
    """Forward search. Modes: gbfs (FF with helpful actions, deferred evaluation), astar (h_max), bfs."""
    if mode == "bfs":
        return _bfs(task, max_nodes, deadline)
    if mode not in ("gbfs", "astar"):
        raise ValueError(f"unknown search mode {mode}")
    goal = task.goal
    init = task.init
    parents = {init: (None, None)}
    if init & goal == goal:
        return SearchResult(Plan(), "solved")
    counter = 0
    expanded = evaluated = 0
    if mode == "gbfs":
        return _lazy_gbfs(task, max_nodes, deadline)

    h0 = heuristic_hmax(task, init)
    evaluated += 1
    if h0 == np.inf:
        return SearchResult(None, "exhausted", 0, 1)
    g_best = {init: 0}
    frontier = [(h0, 0, 0, init)]
    closed = set()
    while frontier:
        f, _, g, state = heapq.heappop(frontier)
        if state in closed or g > g_best.get(state, np.inf):
            continue
        closed.add(state)
        if state & goal == goal:
            return SearchResult(_extract(parents, state), "solved", expanded, evaluated)
        expanded += 1
        if expanded > max_nodes or (deadline is not None and expanded % 32 == 0 and time.monotonic() > deadline):
            return SearchResult(None, "budget", expanded, evaluated)
        for o in task.successors(state):
            child = (state & ~o.del_mask) | o.add_mask
            g2 = g + 1
            if child in closed or g2 >= g_best.get(child, np.inf):
                continue
            h = heuristic_hmax(task, child)
            evaluated += 1
            if h == np.inf:
                continue
            g_best[child] = g2
            parents[child] = (state, o)
            counter += 1
            heapq.heappush(frontier, (g2 + h, counter, g2, child))
    return SearchResult(None, "exhausted", expanded, evaluated)


BOOST = 1000


def _lazy_gbfs(task: GroundedTask, max_nodes, deadline) -> SearchResult:
    """Greedy best-first search with deferred evaluation of the FF heuristic and
    a second open list for helpful-action successors (boosted on progress)."""
    goal = task.goal
    init = task.init
    parents = {init: (None, None)}
    closed = set()
    expanded = evaluated = 0
    counter = 0
    regular = [(0.0, 0, None, None, init)]
    preferred = []
    priority = [0, 0]  # regular, preferred
    best_h = np.inf
    while regular or preferred:
        if preferred and (not regular or priority[1] >= priority[0]):
            queue, which = preferred, 1
        else:
            queue, which = regular, 0
        priority[which] -= 1
        _, _, prev, op, state = heapq.heappop(queue)
        if state in closed:
            continue
        closed.add(state)
        if state not in parents:
            parents[state] = (prev, op)
        if state & goal == goal:
            return SearchResult(_extract(parents, state), "solved", expanded, evaluated)
        h, helpful = relaxed_plan(task, state)
        evaluated += 1
        if h == np.inf:
            continue
        if h < best_h:
            best_h = h
            priority[1] += BOOST
        expanded += 1
        if expanded > max_nodes or (deadline is not None and expanded % 16 == 0 and time.monotonic() > deadline):
            return SearchResult(None, "budget", expanded, evaluated)
        helpful_ids = {o.uid for o in helpful}
        for o in task.successors(state):
            child = (state & ~o.del_mask) | o.add_mask
            if child in closed:
                continue
            counter += 1
            heapq.heappush(regular, (h, counter, state, o, child))
            if o.uid in helpful_ids:
                heapq.heappush(preferred, (h, counter, state, o, child))
    return SearchResult(None, "exhausted", expanded, evaluated)


def _bfs(task: GroundedTask, max_nodes, deadline) -> SearchResult:
    init, goal = task.init, task.goal
    parents = {init: (None, None)}
    if init & goal == goal:
        return SearchResult(Plan(), "solved")
    queue = deque([init])
    expanded = 0
    while queue:
        state = queue.popleft()
        expanded += 1
        if expanded > max_nodes or (deadline is not None and expanded % 256 == 0 and time.monotonic() > deadline):
            return SearchResult(None, "budget", expanded)
        for o in task.successors(state):
            child = (state & ~o.del_mask) | o.add_mask
            if child in parents:
                continue
            parents[child] = (state, o)
            if child & goal == goal:
                return SearchResult(_extract(parents, child), "solved", expanded)
            queue.append(child)
    return SearchResult(None, "exhausted", expanded)


class Grounder:
    """Incremental relaxed-reachability grounding for one domain.

    The universe of facts only grows. reachable_task() re-filters the cached
    operators for the fact set at hand, so removed facts are respected.
    """

    def __init__(self, domain):
        self.domain = domain
        self.fluents = domain.fluent_predicates()
        self.arities = domain.arities
        self.universe = FactIndex()
        self.ops: list = []
        self._op_keys: dict = {}
        self.atom_ids: dict = {}
        self.atoms: list = []
        self.ops_by_pre: dict = {}
        self.relaxed_new: list = []

    def _atom(self, f: Fact) -> int:
        i = self.atom_ids.get(f)
        if i is None:
            i = len(self.atoms)
            self.atom_ids[f] = i
            self.atoms.append(f)
        return i

    def _add_op(self, schema, binding) -> None:
        key = (schema.name, tuple(binding[p] for p in schema.params))
        if key in self._op_keys:
            return
        op = GroundOp(len(self.ops), ActionInstance(schema, key[1]), self.fluents)
        op.pre_ids = tuple(self._atom(f) for f in op.fluent_pre)
        op.add_ids = tuple(self._atom(f) for f in op.add)
        op.del_ids = tuple(self._atom(f) for f in op.dele)
        m = 0
        for i in op.pre_ids:
            m |= 1 << i
        op.pre_mask = m
        m = 0
        for i in op.add_ids:
            m |= 1 << i
        op.add_mask = m
        m = 0
        for i in op.del_ids:
            m |= 1 << i
        op.del_mask = m
        self._op_keys[key] = op
        self.ops.append(op)
        for f in op.add:
            if self.universe.add(f):
                self.relaxed_new.append(f)

    def update(self, facts: Iterable[Fact], deadline: Optional[float] = None) -> None:
        for f in facts:
            if f.predicate not in self.arities:
                raise UnknownPredicate(f.predicate)
        delta = [f for f in facts if self.universe.add(f)]
        schemas = self.domain.actions
        ticks = 0
        while delta:
            self.relaxed_new = []
            for schema in schemas:
                pres = schema.preconditions
                if not pres:
                    self._add_op(schema, {})
                    continue
                preds = {}
                for f in delta:
                    preds.setdefault(f.predicate, []).append(f)
                for i, t in enumerate(pres):
                    matches = preds.get(t.predicate)
                    if not matches:
                        continue
                    rest = pres[:i] + pres[i + 1:]
                    for f in matches:
                        ticks += 1
                        if deadline is not None and ticks % 512 == 0 and time.monotonic() > deadline:
                            raise TimeoutError("grounding")
                        b0 = _unify(t, f, {})
                        if b0 is None:
                            continue
                        for b in join(rest, self.universe, b0):
                            self._add_op(schema, b)
            if deadline is not None and time.monotonic() > deadline:
                raise TimeoutError("grounding")
            delta = self.relaxed_new

    def reachable_ops(self, facts, deadline: Optional[float] = None) -> list:
        """Operators whose static preconditions hold and whose fluent
        preconditions are reachable in the delete relaxation from facts."""
        present = facts
        candidates = [o for o in self.ops if all(f in present for f in o.static_pre)]
        reached = {self.atom_ids[f] for f in facts if f.predicate in self.fluents and f in self.atom_ids}
        waiting: dict = {}
        remaining = {}
        ready = deque()
        for o in candidates:
            need = [a for a in o.pre_ids if a not in reached]
            if need:
                remaining[o.uid] = len(set(need))
                for a in set(need):
                    waiting.setdefault(a, []).append(o)
            else:
                ready.append(o)
        chosen = []
        while ready:
            o = ready.popleft()
            chosen.append(o)
            if deadline is not None and len(chosen) % 2048 == 0 and time.monotonic() > deadline:
                raise TimeoutError("grounding")
            for a in o.add_ids:
                if a not in reached:
                    reached.add(a)
                    for w in waiting.pop(a, ()):
                        remaining[w.uid] -= 1
                        if remaining[w.uid] == 0:
                            ready.append(w)
        chosen.sort(key=lambda o: o.uid)
        return chosen

    def task(self, facts, goal: Iterable[Fact], deadline: Optional[float] = None) -> Optional[GroundedTask]:
        """Ground task for facts, or None when a static goal atom is false."""
        goal = sorted(goal)
        for g in goal:
            if g.predicate not in self.arities:
                raise UnknownPredicate(g.predicate)
        facts = facts if isinstance(facts, (set, frozenset, FactIndex)) else frozenset(facts)
        self.update(sorted(facts) if not isinstance(facts, FactIndex) else list(facts), deadline)
        for g in goal:
            if g.predicate not in self.fluents and g not in facts:
                return None
        ops = self.reachable_ops(facts, deadline)
        init = 0
        for f in facts:
            if f.predicate in self.fluents:
                init |= 1 << self._atom(f)
        gmask = 0
        for g in goal:
            if g.predicate in self.fluents:
                gmask |= 1 << self._atom(g)
        return GroundedTask(self.atoms, ops, init, gmask)


def ground(domain, facts: Iterable[Fact], goal: Iterable[Fact]) -> GroundedTask:
    """Ground from scratch. A false static goal yields a task with an unreachable goal."""
    g = Grounder(domain)
    facts = frozenset(facts)
    task = g.task(facts, goal)
    if task is None:
        # keep the contract of returning a task: mark the goal unreachable
        dead = Fact("__unreachable__", ())
        idx = g._atom(dead)
        task = GroundedTask(g.atoms, g.reachable_ops(facts), 0, 1 << idx)
    return task


@dataclass
class StreamPlan:
    """Optimistic results to be evaluated, producers before consumers."""

    steps: tuple = ()

    @property
    def instances(self) -> tuple:
        return tuple(r.instance for r in self.steps)

    def __len__(self):
        return len(self.steps)

    def __iter__(self):
        return iter(self.steps)


def extract_stream_plan(plan: Plan, registry) -> StreamPlan:
    """Optimistic results that certify the plan's preimage, closed over ancestry."""
    needed = [f for f in sorted(preimage(plan)) if f not in registry.ground]
    return stream_plan_for(needed, registry)


def stream_plan_for(facts: Iterable[Fact], registry) -> StreamPlan:
    chosen: dict = {}
    frontier = deque()

    def need_fact(f):
        if f in registry.ground:
            return
        best = registry.live_certifier(f)
        if best is None:
            raise AssertionError(f"optimistic fact {f} has no live certifier")
        if best.uid not in chosen:
            chosen[best.uid] = best
            frontier.append(best)

    for f in facts:
        need_fact(f)
    while frontier:
        r = frontier.popleft()
        inst = r.instance
        for o in inst.inputs:
            prod = registry.producer(o)
            if prod is not None:
                pr = registry.object_result(o)
                if pr.uid not in chosen:
                    chosen[pr.uid] = pr
                    frontier.append(pr)
        for f in inst.domain_facts:
            need_fact(f)
    # Kahn's algorithm; ties by instance creation order
    deps = {}
    for uid, r in chosen.items():
        ds = set()
        for o in r.instance.inputs:
            pr = registry.object_result(o)
            if pr is not None and pr.uid in chosen:
                ds.add(pr.uid)
        for f in r.instance.domain_facts:
            if f not in registry.ground:
                c = registry.live_certifier(f)
                if c is not None and c.uid in chosen and c.uid != uid:
                    ds.add(c.uid)
        deps[uid] = ds
    users: dict = {u: [] for u in chosen}
    indeg = {u: len(d) for u, d in deps.items()}
    for u, d in deps.items():
        for p in d:
            users[p].append(u)
    ready = [(chosen[u].instance.uid, u) for u, k in indeg.items() if k == 0]
    heapq.heapify(ready)
    order = []
    while ready:
        _, u = heapq.heappop(ready)
        order.append(chosen[u])
        for v in users[u]:
            indeg[v] -= 1
            if indeg[v] == 0:
                heapq.heappush(ready, (chosen[v].instance.uid, v))
    assert len(order) == len(chosen), "cycle in stream ancestry"
    return StreamPlan(tuple(order))


def optimistic_solve(domain, registry, goal, grounder: Optional[Grounder] = None,
                     max_nodes: int = 200_000, deadline: Optional[float] = None, mode: str = "gbfs"):
    """Plan over the registry's current facts. Returns (plan, stream plan, search result)."""
    grounder = grounder or Grounder(domain)
    task = grounder.task(registry.index, goal, deadline)
    if task is None:
        return None, None, SearchResult(None, "exhausted")
    res = search(task, max_nodes=max_nodes, deadline=deadline, mode=mode)
    if res.plan is None:
        return None, None, res
    return res.plan, extract_stream_plan(res.plan, registry), res
