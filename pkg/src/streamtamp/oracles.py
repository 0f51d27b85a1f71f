"""Independent reference implementations used by `streamtamp check` and the tests.

Each oracle recomputes a quantity from first principles, using its own
bookkeeping rather than the data structures it is checking.
"""
from __future__ import annotations

import time
from dataclasses import dataclass, field

import numpy as np

from .language import parse_domain
from .streams import StreamRegistry
from .symbolic import Fact, ObjectRef, Plan, apply, is_applicable, preimage, validate_plan
from .taskplan import ground, search
from .toy import blocks_domain, generate_blocks


@dataclass
class CheckResult:
    name: str
    cases: int
    failures: list = field(default_factory=list)
    seconds: float = 0.0
    limit: float = float("inf")

    @property
    def passed(self) -> bool:
        return not self.failures and self.seconds < self.limit

    def line(self) -> str:
        verdict = "PASS" if self.passed else "FAIL"
        return (f"{verdict} {self.name}: {self.cases - len(self.failures)}/{self.cases} cases agree "
                f"in {self.seconds:.2f}s (limit {self.limit:g}s)")


# ---------------------------------------------------------------- levels

def random_stream_domain(rng: np.random.Generator, depth: int):
    """A layered stream domain. Layer d streams read facts of layers below d
    (at least one from d-1) and certify layer-d facts. Test streams without
    outputs at each layer give facts with several certifiers."""
    lines = ["(define (domain dag)", "  (:predicates"]
    lines.append("    " + " ".join(f"(p{d} ?x) (q{d} ?x)" for d in range(depth + 1)) + ")")
    lines.append("  (:streams")
    for d in range(1, depth + 1):
        for j in range(int(rng.integers(1, 3))):
            n_in = int(rng.integers(1, 3))
            layers = [d - 1] + [int(rng.integers(0, d)) for _ in range(n_in - 1)]
            ins = " ".join(f"?i{k}" for k in range(n_in))
            dom = " ".join(f"(p{lay} ?i{k})" for k, lay in enumerate(layers))
            lines.append(f"    (:stream gen{d}-{j} :inputs ({ins}) :domain (and {dom})"
                         f" :outputs (?y) :certified (and (p{d} ?y)))")
        for j in range(2):
            lines.append(f"    (:stream test{d}-{j} :inputs (?x) :domain (and (p{d - 1} ?x))"
                         f" :outputs () :certified (and (q{d} ?x)))")
        if d > 1:
            lines.append(f"    (:stream use{d} :inputs (?x) :domain (and (p{d - 1} ?x) (q{d - 1} ?x))"
                         f" :outputs (?y) :certified (and (p{d} ?y)))")
    lines.append("  ))")
    return parse_domain("\n".join(lines))


def _sampler(inputs, rng, attempt):
    return (float(rng.random()),) if rng.random() < 0.8 else None


def random_level_case(seed: int, max_depth: int = 6, steps: int = 60):
    """Drive a registry through random optimistic results and evaluations.

    Returns (registry, certifiers, counts) where certifiers maps fact -> set of
    instance uids and counts maps uid -> evaluations, both tracked here.
    """
    rng = np.random.default_rng(seed)
    depth = int(rng.integers(1, max_depth + 1))
    domain = random_stream_domain(rng, depth)
    n_obj = int(rng.integers(1, 4))
    init = [Fact("p0", (f"o{k}",)) for k in range(n_obj)]
    objects = [ObjectRef(f"o{k}", float(k)) for k in range(n_obj)]
    samplers = {s.name: _sampler if s.outputs else (lambda i, r, a: ()) for s in domain.streams}
    reg = StreamRegistry(domain.streams, samplers, init, objects, seed=seed)
    certifiers: dict = {}
    counts: dict = {}

    def admit(result):
        if result is None:
            return
        reg.add_result_facts(result)
        for f in result.certified:
            certifiers.setdefault(f, set()).add(result.instance.uid)
        reg.expand(result)

    reg.instantiate_all()
    for _ in range(steps):
        if not reg.instance_list:
            break
        inst = reg.instance_list[int(rng.integers(len(reg.instance_list)))]
        if not reg.domain_holds(inst):
            continue
        if reg.is_grounded(inst) and not inst.exhausted and rng.random() < 0.5:
            counts[inst.uid] = counts.get(inst.uid, 0) + 1
            admit(reg.evaluate(inst))
        else:
            admit(reg.next_optimistic(inst))
    return reg, certifiers, counts


def oracle_levels(reg, certifiers: dict, counts: dict) -> dict:
    """uid -> 1 + evaluations + max over non-initial domain facts of the
    minimum level among that fact's certifiers (0 for an empty max)."""
    memo: dict = {}
    by_uid = {i.uid: i for i in reg.instance_list}

    def level(uid):
        if uid in memo:
            return memo[uid]
        inst = by_uid[uid]
        binding = dict(zip(inst.schema.inputs, inst.inputs))
        parts = []
        for atom in inst.schema.domain:
            f = atom.ground(binding)
            if f in reg.init or f not in certifiers:
                continue
            parts.append(min(level(c) for c in certifiers[f]))
        memo[uid] = 1 + counts.get(uid, 0) + max(parts, default=0)
        return memo[uid]

    return {uid: level(uid) for uid in by_uid}


def check_levels(cases: int = 200, seed: int = 0, limit: float = 1.0) -> CheckResult:
    res = CheckResult("levels", cases, limit=limit)
    setups = [random_level_case(seed * 100_003 + c) for c in range(cases)]
    start = time.perf_counter()
    for c, (reg, certs, counts) in enumerate(setups):
        want = oracle_levels(reg, certs, counts)
        got = {i.uid: reg.level(i) for i in reg.instance_list}
        if got != want:
            res.failures.append(c)
    res.seconds = time.perf_counter() - start
    return res


# ---------------------------------------------------------------- preimage

def random_plan(seed: int, max_steps: int = 6):
    """(init state, plan) from a random walk in the blocks world."""
    rng = np.random.default_rng(seed)
    problem = generate_blocks(seed, int(rng.integers(2, 6)))
    domain = blocks_domain()
    task = ground(domain, problem.init, ())
    state = frozenset(problem.init)
    steps = []
    for _ in range(int(rng.integers(0, max_steps + 1))):
        ops = sorted((o for o in task.ops if is_applicable(state, o.action)), key=lambda o: str(o.action))
        if not ops:
            break
        a = ops[int(rng.integers(len(ops)))].action
        steps.append(a)
        state = apply(state, a)
    return frozenset(problem.init), Plan(tuple(steps))


def regression_preimage(plan: Plan) -> frozenset:
    """Regress the empty goal backwards through the plan."""
    need: set = set()
    for a in reversed(plan.steps):
        need -= a.add_effects
        need |= a.preconditions
    return frozenset(need)


def check_preimage(cases: int = 500, seed: int = 0, limit: float = 5.0) -> CheckResult:
    res = CheckResult("preimage", cases, limit=limit)
    plans = [random_plan(seed * 100_003 + c) for c in range(cases)]
    start = time.perf_counter()
    for c, (init, plan) in enumerate(plans):
        got = preimage(plan)
        # the preimage alone must support the whole plan
        if got != regression_preimage(plan) or not got <= init or not validate_plan(got, (), plan):
            res.failures.append(c)
    res.seconds = time.perf_counter() - start
    return res


# ---------------------------------------------------------------- search

def reachable_states(task, cap: int = 100_000):
    """Number of states reachable from the initial state, or None beyond cap."""
    seen = {task.init}
    frontier = [task.init]
    while frontier:
        nxt = []
        for s in frontier:
            for o in task.successors(s):
                c = (s & ~o.del_mask) | o.add_mask
                if c not in seen:
                    seen.add(c)
                    if len(seen) > cap:
                        return None
                    nxt.append(c)
        frontier = nxt
    return len(seen)


def search_cases(count: int = 100, seed: int = 0, cap: int = 100_000) -> list:
    domain = blocks_domain()
    out = []
    k = 0
    while len(out) < count:
        rng = np.random.default_rng([seed, k])
        problem = generate_blocks(seed * 100_003 + k, int(rng.integers(2, 6)), domain)
        k += 1
        task = ground(domain, problem.init, problem.goal)
        if reachable_states(task, cap) is not None:
            out.append(task)
    return out


def check_search(cases: int = 100, seed: int = 0, limit: float = 60.0) -> CheckResult:
    res = CheckResult("search-optimality", cases, limit=limit)
    tasks = search_cases(cases, seed)
    start = time.perf_counter()
    for c, task in enumerate(tasks):
        a = search(task, mode="astar")
        b = search(task, mode="bfs")
        if a.status != b.status or (a.plan is not None and len(a.plan) != len(b.plan)):
            res.failures.append(c)
    res.seconds = time.perf_counter() - start
    return res


def check_all(seed: int = 0) -> list:
    return [check_levels(seed=seed), check_preimage(seed=seed), check_search(seed=seed)]
