"""Priority-queue stream expansion (informed) and level-by-level expansion (adaptive)."""
from __future__ import annotations

import heapq
import math
import time
from dataclasses import dataclass, field
from typing import Callable, Optional

from .streams import StreamInstance, StreamRegistry, StreamResult
from .symbolic import Plan, explain_plan, preimage
from .taskplan import Grounder, StreamPlan, extract_stream_plan, search


@dataclass
class SolveConfig:
    k: int = 100
    timeout: float = 90.0
    gamma: float = 0.9
    sampling_budget: float = 1.0
    search_nodes: int = 25_000
    seed: int = 0
    retries: int = 10
    eps: float = 1e-6
    search_mode: str = "gbfs"
    max_instances: int = 300_000
    check_bound: bool = True

    def __post_init__(self):
        if not 0.0 < self.gamma < 1.0:
            raise ValueError("gamma must lie in (0, 1)")
        if self.k < 1:
            raise ValueError("k must be at least 1")
        if self.timeout <= 0 or self.sampling_budget <= 0:
            raise ValueError("timeout and sampling budget must be positive")

    def as_dict(self) -> dict:
        return {k: getattr(self, k) for k in self.__dataclass_fields__}


@dataclass
class SolveOutcome:
    status: str  # Solved | Exhausted | Timeout
    plan: Optional[Plan] = None
    bindings: dict = field(default_factory=dict)
    metrics: dict = field(default_factory=dict)
    registry: Optional[StreamRegistry] = field(default=None, repr=False)

    @property
    def solved(self) -> bool:
        return self.status == "Solved"


class Phases:
    """Accumulates wall time per phase."""

    def __init__(self):
        self.times = {"expansion": 0.0, "search": 0.0, "sampling": 0.0, "inference": 0.0}
        self._stack = []

    def start(self, name):
        now = time.perf_counter()
        if self._stack:
            prev, t0 = self._stack[-1]
            self.times[prev] += now - t0
        self._stack.append((name, now))

    def stop(self):
        now = time.perf_counter()
        name, t0 = self._stack.pop()
        self.times[name] += now - t0
        if self._stack:
            prev, _ = self._stack[-1]
            self._stack[-1] = (prev, now)


# ---------------------------------------------------------------- scorers

class Scorer:
    """Base score in (0, 1] for a stream result; composed by the planner."""

    name = "base"
    composes = True

    def prepare(self, domain, problem, registry) -> None:
        pass

    def raw(self, result: StreamResult, registry: StreamRegistry) -> float:
        raise NotImplementedError


class UniformScorer(Scorer):
    name = "uniform"

    def __init__(self, value: float = 0.5):
        self.value = value

    def raw(self, result, registry):
        return self.value


class LevelScorer(Scorer):
    """Orders by level. Bypasses parent composition."""

    name = "level"
    composes = False

    def raw(self, result, registry):
        return 1.0 / (1.0 + registry.level(result.instance))


class StatsScorer(Scorer):
    """Per-schema proportion of instances labelled relevant in training data."""

    name = "stats"

    def __init__(self, frequencies: dict, default: float = 0.5):
        self.frequencies = dict(frequencies)
        self.default = default

    def raw(self, result, registry):
        return self.frequencies.get(result.instance.schema.name, self.default)


def should_plan(facts_since_plan: int, k: int, queue_empty: bool, changed_since_plan: bool) -> bool:
    return facts_since_plan >= k or (queue_empty and changed_since_plan)


def compose_score(raw: float, parent_scores, count: int, gamma: float, eps: float = 1e-6) -> float:
    """Linear-space score composition: clamp(raw) * min(parents) * gamma**count."""
    raw = min(max(raw, eps), 1.0 - eps)
    parents = list(parent_scores)
    return raw * (min(parents) if parents else 1.0) * gamma ** count


class TheoremViolation(AssertionError):
    pass


# ---------------------------------------------------------------- context

class SolveContext:
    def __init__(self, domain, problem, config: SolveConfig, samplers: dict, verifier=None, payloads=None):
        self.domain = domain
        self.problem = problem
        self.config = config
        self.verifier = verifier
        self.t0 = time.monotonic()
        self.deadline = self.t0 + config.timeout
        objects = []
        for o in problem.objects:
            if payloads is not None and o.name in payloads:
                objects.append(type(o)(o.name, payloads[o.name]))
            else:
                objects.append(o)
        self.registry = StreamRegistry(domain.streams, samplers, problem.init, objects, seed=config.seed)
        self.grounder = Grounder(domain)
        self.goal = frozenset(problem.goal)
        self.phases = Phases()
        self.metrics = {
            "iterations": 0, "facts_added": 0, "plans_attempted": 0, "sampling_passes": 0,
            "pushes": 0, "pops": 0, "stale_pops": 0, "violations_child": 0, "violations_eval": 0,
            "level_bound_violations": 0, "resource_limit": 0, "max_level": 0,
        }
        self.queue: list = []
        self.counter = 0
        self.last_push: dict = {}
        self.push_log: list = []
        self.eps_child = math.inf
        self.eps_eval = math.inf
        self.scorer: Optional[Scorer] = None
        self.ground_results: dict = {}
        self.ground_producer: dict = {}
        self.parents_done: set = set()
        self.facts_since_plan = 0
        self.changed = True

    def out_of_time(self) -> bool:
        return time.monotonic() > self.deadline

    # ------------------------------------------------------------- parents
    def certifying_results(self, f) -> list:
        reg = self.registry
        out = list(reg.opt_certifiers.get(f, ()))
        out.extend(self.ground_results.get(f, ()))
        return out

    def parents_of(self, inst: StreamInstance) -> tuple:
        reg = self.registry
        chosen = {}
        for f in inst.domain_facts:
            if f in reg.init:
                continue
            cands = self.certifying_results(f)
            if not cands:
                continue
            best = min(cands, key=lambda r: (reg.level(r.instance), r.uid))
            chosen[best.uid] = best
        for o in inst.inputs:
            r = reg.object_result(o) if reg.objects[o].optimistic else self.ground_producer.get(o)
            if r is not None:
                chosen.setdefault(r.uid, r)
        return tuple(chosen[k] for k in sorted(chosen))

    # ---------------------------------------------------------------- push
    def push(self, r: StreamResult) -> None:
        cfg = self.config
        inst = r.instance
        if inst.uid not in self.parents_done:
            inst.parents = self.parents_of(inst)
            self.parents_done.add(inst.uid)
        r.parents = inst.parents
        self.phases.start("inference")
        raw = self.scorer.raw(r, self.registry)
        self.phases.stop()
        eps = cfg.eps
        clamped = min(max(float(raw), eps), 1.0 - eps)
        if self.scorer.composes:
            parent_min = min((p.score for p in r.parents), default=0.0)
            count = inst.count
            score = math.log(clamped) + parent_min + count * math.log(cfg.gamma)
        else:
            parent_min = min((p.score for p in r.parents), default=0.0)
            score = math.log(clamped)
        # the completeness argument needs both strict decreases; a composing
        # scorer that breaks them is a bug, the level ordering only logs it
        strict = self.scorer.composes
        if r.parents:
            if not score < parent_min:
                self.metrics["violations_child"] += 1
                if strict:
                    raise TheoremViolation(f"child score {score} not below parent {parent_min} for {r}")
            else:
                self.eps_child = min(self.eps_child, math.exp(parent_min) - math.exp(score))
        if r.optimistic:
            prev = self.last_push.get(inst.uid)
            if prev is not None and prev[1] < inst.count:
                if not score < prev[0]:
                    self.metrics["violations_eval"] += 1
                    if strict:
                        raise TheoremViolation(f"re-pushed score did not decrease for {inst!r}")
                else:
                    self.eps_eval = min(self.eps_eval, math.exp(prev[0]) - math.exp(score))
            self.last_push[inst.uid] = (score, inst.count)
        r.score = score
        if cfg.check_bound and self.scorer.composes:
            self.push_log.append((score, self.registry.level(inst)))
        self.counter += 1
        self.metrics["pushes"] += 1
        heapq.heappush(self.queue, (-score, self.counter, r))

    def check_level_bound(self) -> int:
        """Count pushes breaking the completeness level bound for their own score."""
        bad = 0
        ec, ee = self.eps_child, self.eps_eval
        for score, lv in self.push_log:
            y = math.exp(score)
            a = 1.0 + ((1.0 - y) / ec if ec < math.inf and ec > 0 else 0.0)
            b = 1.0 + ((1.0 - y) / ee if ee < math.inf and ee > 0 else 0.0)
            if lv > a * b + 1e-9:
                bad += 1
        return bad

    # -------------------------------------------------------------- results
    def admit_grounded(self, r: StreamResult) -> list:
        new = self.registry.add_result_facts(r)
        for f in r.certified:
            lst = self.ground_results.setdefault(f, [])
            if r not in lst:
                lst.append(r)
        for o in r.outputs:
            self.ground_producer.setdefault(o, r)
        return new

    def outcome(self, status, plan=None, bindings=None) -> SolveOutcome:
        m = dict(self.metrics)
        wall = time.monotonic() - self.t0
        m["wall_time"] = wall
        for k, v in self.phases.times.items():
            m[f"time_{k}"] = v
        m["instances"] = len(self.registry.instance_list)
        m["results"] = len(self.registry.results)
        m["evaluations"] = self.registry.evaluations
        m["eps_child"] = self.eps_child if self.eps_child < math.inf else None
        m["eps_eval"] = self.eps_eval if self.eps_eval < math.inf else None
        if self.config.check_bound and self.push_log:
            m["level_bound_violations"] = self.check_level_bound()
        m["plan_length"] = len(plan) if plan is not None else None
        return SolveOutcome(status, plan, bindings or {}, m, self.registry)


# ------------------------------------------------------------ planning

def _plan(ctx: SolveContext):
    ctx.metrics["plans_attempted"] += 1
    ctx.phases.start("search")
    try:
        task = ctx.grounder.task(ctx.registry.index, ctx.goal, ctx.deadline)
        if task is None:
            return None, None
        res = search(task, max_nodes=ctx.config.search_nodes, deadline=ctx.deadline, mode=ctx.config.search_mode)
        if res.plan is None:
            return None, None
        return res.plan, extract_stream_plan(res.plan, ctx.registry)
    except TimeoutError:
        return None, None
    finally:
        ctx.phases.stop()


class PendingSampling:
    """A stream plan being grounded, possibly over several sampling calls."""

    def __init__(self, plan: Plan, psi: StreamPlan):
        self.plan = plan
        self.psi = psi
        self.cursor = 0
        self.binding: dict = {}
        self.processed: list = []
        self.evaluated: list = []
        self.target: Optional[StreamInstance] = None
        self.attempts = 0


def process_streams(ctx: SolveContext, pending: PendingSampling, budget: float):
    """Evaluate the stream plan in order.

    Returns (grounded plan or None, new grounded results, processed optimistic
    results, status) with status one of success, failed, budget.
    """
    reg = ctx.registry
    cfg = ctx.config
    stop_at = min(time.monotonic() + budget, ctx.deadline)
    new = []
    steps = pending.psi.steps
    while pending.cursor < len(steps):
        r = steps[pending.cursor]
        inst = r.instance
        if pending.target is None:
            inputs = tuple(pending.binding.get(o, o) for o in inst.inputs)
            target = reg.get_or_create(inst.schema, inputs)
            pending.target = target
            pending.attempts = 0
            pending.processed.append(r)
            if target is not inst and target.live is not None and not target.live.retired:
                pending.processed.append(target.live)
        target = pending.target
        result = None
        if target.exhausted:
            result = target.results[-1] if target.results else None
            if result is None:
                return None, new, _finish(pending), "failed"
        else:
            while result is None and pending.attempts < cfg.retries:
                if time.monotonic() > stop_at:
                    return None, new, [], "budget"
                pending.attempts += 1
                result = reg.evaluate(target)
                if target not in pending.evaluated:
                    pending.evaluated.append(target)
                if result is None and target.exhausted:
                    result = target.results[-1] if target.results else None
                    break
            if result is None:
                return None, new, _finish(pending), "failed"
            new.append(result)
        for o_opt, o_g in zip(r.outputs, result.outputs):
            pending.binding[o_opt] = o_g
        pending.cursor += 1
        pending.target = None
    grounded = pending.plan.rename(pending.binding)
    return grounded, new, _finish(pending), "success"


def _finish(pending: PendingSampling) -> list:
    seen, out = set(), []
    for r in pending.processed:
        if r.uid not in seen:
            seen.add(r.uid)
            out.append(r)
    return out


def _verify(ctx: SolveContext, plan: Plan) -> Optional[str]:
    reg = ctx.registry
    facts = reg.ground
    why = explain_plan(facts, ctx.goal, plan)
    if why is not None:
        return why
    if ctx.verifier is not None:
        certified_preds = {a.predicate for s in ctx.domain.streams for a in s.certified}
        payloads = {name: o.payload for name, o in reg.objects.items()}
        for f in sorted(preimage(plan)):
            if f.predicate in certified_preds and f not in reg.init:
                if not ctx.verifier(f, payloads):
                    return f"certified fact {f} failed re-verification"
    return None


def _bindings(ctx: SolveContext, plan: Plan) -> dict:
    names = {}
    for a in plan:
        for o in a.args:
            names[o] = ctx.registry.objects[o].payload
    return names


def _feedback(ctx: SolveContext, new, processed, evaluated, push: bool) -> list:
    """Add grounded results, retire processed optimistic ones. Returns results to expand."""
    reg = ctx.registry
    admitted = []
    for r in new:
        added = ctx.admit_grounded(r)
        ctx.metrics["facts_added"] += len(added)
        ctx.facts_since_plan += len(added)
        if added:
            ctx.changed = True
        admitted.append(r)
    for r in processed:
        if reg.retire(r):
            ctx.changed = True
    if push:
        for r in admitted:
            if not r.retired:
                ctx.push(r)
        for inst in evaluated:
            if not inst.exhausted and reg.domain_holds(inst):
                ctx.push(reg.next_optimistic(inst))
    return admitted


def _finalize(ctx: SolveContext, plan: Plan, new) -> Optional[SolveOutcome]:
    for r in new:
        ctx.admit_grounded(r)
    why = _verify(ctx, plan)
    if why is not None:
        ctx.metrics["verification_failures"] = ctx.metrics.get("verification_failures", 0) + 1
        raise AssertionError(f"grounded plan failed validation: {why}")
    return ctx.outcome("Solved", plan, _bindings(ctx, plan))


def _start(domain, problem, config, samplers, verifier, payloads) -> SolveContext:
    return SolveContext(domain, problem, config or SolveConfig(), samplers, verifier, payloads)


def informed_solve(domain, problem, scorer: Scorer, config: Optional[SolveConfig] = None,
                   samplers: Optional[dict] = None, verifier: Optional[Callable] = None,
                   payloads: Optional[dict] = None) -> SolveOutcome:
    """Best-first stream expansion guided by a scorer."""
    ctx = _start(domain, problem, config, samplers or {}, verifier, payloads)
    cfg = ctx.config
    reg = ctx.registry
    ctx.scorer = scorer
    if ctx.goal <= reg.init:
        return ctx.outcome("Solved", Plan(), {})
    ctx.phases.start("inference")
    scorer.prepare(domain, problem, reg)
    ctx.phases.stop()
    ctx.phases.start("expansion")
    for inst in reg.instantiate_all():
        ctx.push(reg.next_optimistic(inst))
    ctx.phases.stop()
    pending: Optional[PendingSampling] = None
    while True:
        if ctx.out_of_time():
            return ctx.outcome("Timeout")
        if len(reg.instance_list) > cfg.max_instances:
            ctx.metrics["resource_limit"] = 1
            return ctx.outcome("Timeout")
        ctx.metrics["iterations"] += 1
        if ctx.queue:
            ctx.phases.start("expansion")
            _, _, r = heapq.heappop(ctx.queue)
            ctx.metrics["pops"] += 1
            if r.retired or not reg.result_active(r) or (r.optimistic and r.instance.live is not r):
                ctx.metrics["stale_pops"] += 1
            else:
                if r.optimistic:
                    added = reg.add_result_facts(r)
                    ctx.metrics["facts_added"] += len(added)
                    ctx.facts_since_plan += len(added)
                    if added:
                        ctx.changed = True
                for child in reg.expand(r):
                    ctx.push(reg.next_optimistic(child))
            ctx.phases.stop()
        if pending is None and should_plan(ctx.facts_since_plan, cfg.k, not ctx.queue, ctx.changed):
            ctx.facts_since_plan = 0
            ctx.changed = False
            plan, psi = _plan(ctx)
            if plan is not None:
                pending = PendingSampling(plan, psi)
        if pending is None and not ctx.queue and not ctx.changed:
            if ctx.out_of_time():
                return ctx.outcome("Timeout")
            return ctx.outcome("Exhausted")
        if pending is not None:
            ctx.phases.start("sampling")
            ctx.metrics["sampling_passes"] += 1
            grounded, new, processed, status = process_streams(ctx, pending, cfg.sampling_budget)
            ctx.phases.stop()
            if status == "success":
                return _finalize(ctx, grounded, new)
            ctx.phases.start("expansion")
            _feedback(ctx, new, processed, pending.evaluated if status == "failed" else [], push=True)
            ctx.phases.stop()
            if status == "failed":
                pending = None


def adaptive_solve(domain, problem, config: Optional[SolveConfig] = None, samplers: Optional[dict] = None,
                   verifier: Optional[Callable] = None, payloads: Optional[dict] = None) -> SolveOutcome:
    """Breadth-first baseline: everything up to level l, plan, raise l when no plan exists."""
    ctx = _start(domain, problem, config, samplers or {}, verifier, payloads)
    cfg = ctx.config
    reg = ctx.registry
    if ctx.goal <= reg.init:
        ctx.metrics["level"] = 0
        return ctx.outcome("Solved", Plan(), {})
    ctx.phases.start("expansion")
    reg.instantiate_all()
    ctx.phases.stop()
    level = 1
    opened: dict = {}
    while True:
        ctx.metrics["iterations"] += 1
        ctx.metrics["level"] = level
        ctx.phases.start("expansion")
        excluded = False
        progress = True
        while progress:
            progress = False
            if ctx.out_of_time() or len(reg.instance_list) > cfg.max_instances:
                break
            i = 0
            while i < len(reg.instance_list):
                inst = reg.instance_list[i]
                i += 1
                if inst.exhausted or not reg.domain_holds(inst):
                    continue
                if opened.get(inst.uid) == inst.count and inst.live is not None and not inst.live.retired:
                    continue
                if reg.level(inst) > level:
                    excluded = True
                    continue
                r = reg.next_optimistic(inst)
                opened[inst.uid] = inst.count
                added = reg.add_result_facts(r)
                ctx.metrics["facts_added"] += len(added)
                reg.expand(r)
                progress = True
                if i % 256 == 0 and ctx.out_of_time():
                    break
        ctx.phases.stop()
        if ctx.out_of_time():
            return ctx.outcome("Timeout")
        if len(reg.instance_list) > cfg.max_instances:
            ctx.metrics["resource_limit"] = 1
            return ctx.outcome("Timeout")
        plan, psi = _plan(ctx)
        if ctx.out_of_time():
            return ctx.outcome("Timeout")
        if plan is None:
            if not excluded:
                return ctx.outcome("Exhausted")
            level += 1
            continue
        pending = PendingSampling(plan, psi)
        ctx.phases.start("sampling")
        ctx.metrics["sampling_passes"] += 1
        while True:
            grounded, new, processed, status = process_streams(ctx, pending, cfg.sampling_budget)
            if status != "budget" or ctx.out_of_time():
                break
            _feedback(ctx, new, [], [], push=False)
            for r in new:
                reg.expand(r)
        ctx.phases.stop()
        if status == "success":
            return _finalize(ctx, grounded, new)
        if status == "budget":
            return ctx.outcome("Timeout")
        ctx.phases.start("expansion")
        for r in _feedback(ctx, new, processed, [], push=False):
            reg.expand(r)
        ctx.phases.stop()
