"""Seeded problem generators for the five tabletop task families."""
from __future__ import annotations

import json
import math
import zlib
from dataclasses import dataclass, field
from typing import Optional

import numpy as np

from ..language import ProblemDefinition, parse_problem
from ..symbolic import ActionInstance, Plan, explain_plan, fact
from . import geometry as geo
from .domain import make_samplers, make_verifier, tabletop_domain

FAMILIES = ("stacking", "sorting", "clutter", "nonmonotonic", "distractors")
PLACEMENT = {"stacking": "uniform", "sorting": "poisson", "clutter": "poisson",
             "nonmonotonic": "adjacent", "distractors": "uniform"}

BLOCK_HALF, BLOCK_HEIGHT = 0.025, 0.05
BLOCKER_HALF, BLOCKER_HEIGHT = 0.03, 0.12
POISSON_RADIUS = 1.5 * 2 * BLOCKER_HALF
ADJACENT_GAP = 0.005
HOME = geo.Conf(0.0, 0.0)

TABLES = {
    "red": geo.Region("red", -0.30, 0.40, 0.30, 0.75),
    "blue": geo.Region("blue", -0.30, -0.75, 0.30, -0.40),
    "green": geo.Region("green", 0.40, -0.30, 0.75, 0.30),
    "purple": geo.Region("purple", -0.75, -0.30, -0.40, 0.30),
}
COLUMN = geo.Box(0.40, 0.40, 0.50, 0.50)

# (blocks, blockers) count ranges per split; for clutter the blocker count is twice the block count
RANGES = {
    "stacking": {"train": ((2, 4), (0, 0)), "test": ((2, 7), (0, 0))},
    "sorting": {"train": ((2, 7), (2, 7)), "test": ((2, 10), (2, 10))},
    "clutter": {"train": ((2, 4), (4, 8)), "test": ((2, 6), (4, 12))},
    "nonmonotonic": {"train": ((1, 3), (1, 3)), "test": ((2, 6), (2, 6))},
    "distractors": {"test": ((2, 3), (10, 50))},
}
MAX_REGENERATIONS = 20
MAX_DARTS = 400


class GenerationError(RuntimeError):
    pass


@dataclass(frozen=True)
class GeneratorSpec:
    task: str
    seed: int = 0
    split: str = "train"
    blocks: Optional[int] = None
    blockers: Optional[int] = None

    def __post_init__(self):
        if self.task not in FAMILIES:
            raise ValueError(f"unknown task family {self.task!r}")
        if self.split not in RANGES[self.task]:
            raise ValueError(f"{self.task} has no {self.split} split")
        for v in (self.blocks, self.blockers):
            if v is not None and v < 0:
                raise ValueError("object counts must be non-negative")
        if self.blocks is not None and self.blocks < 1:
            raise ValueError("at least one block is required")
        if (self.task == "nonmonotonic" and self.blocks is not None and self.blockers is not None
                and self.blockers < self.blocks):
            raise ValueError("nonmonotonic problems need one blocker per block")

    @property
    def placement(self) -> str:
        return PLACEMENT[self.task]


@dataclass
class Scene:
    regions: dict
    bodies: dict
    poses: dict
    fixtures: tuple = (COLUMN,)
    home: tuple = tuple(HOME)
    radius: float = geo.WORKSPACE_RADIUS
    obstructions: tuple = ()
    colors: dict = field(default_factory=dict)

    def box(self, name: str, pose=None) -> geo.Box:
        b = self.bodies[name]
        p = pose or self.poses[name]
        return geo.box_at(p.x, p.y, b.half)

    def region_of(self, name: str) -> Optional[str]:
        box = self.box(name)
        for r, reg in self.regions.items():
            if geo.box_inside(box, reg):
                return r
        return None

    def to_json(self) -> str:
        data = {
            "regions": {k: list(v) for k, v in self.regions.items()},
            "bodies": {k: list(v) for k, v in self.bodies.items()},
            "poses": {k: list(v) for k, v in self.poses.items()},
            "fixtures": [list(f) for f in self.fixtures],
            "home": list(self.home),
            "radius": self.radius,
            "obstructions": [list(o) for o in self.obstructions],
            "colors": dict(self.colors),
        }
        return json.dumps(data, indent=1, sort_keys=True)

    @classmethod
    def from_json(cls, text: str) -> "Scene":
        d = json.loads(text)
        return cls(
            regions={k: geo.Region(*v) for k, v in d["regions"].items()},
            bodies={k: geo.Body(*v) for k, v in d["bodies"].items()},
            poses={k: geo.Pose(*v) for k, v in d["poses"].items()},
            fixtures=tuple(geo.Box(*f) for f in d["fixtures"]),
            home=tuple(d["home"]),
            radius=d["radius"],
            obstructions=tuple(tuple(o) for o in d["obstructions"]),
            colors=dict(d.get("colors", {})),
        )

    def __eq__(self, other):
        return isinstance(other, Scene) and self.to_json() == other.to_json()


def pose_name(body: str) -> str:
    return f"{body}-p0"


@dataclass
class TabletopTask:
    spec: GeneratorSpec
    problem: ProblemDefinition
    scene: Scene
    witness: list = field(default_factory=list, repr=False)

    @property
    def domain(self):
        return tabletop_domain()

    def payloads(self) -> dict:
        return scene_payloads(self.scene)

    def samplers(self) -> dict:
        return make_samplers(self.scene.fixtures, self.scene.home)

    def verifier(self):
        return make_verifier(self.scene.fixtures, self.scene.home)

    @property
    def distractors(self) -> list:
        return sorted(n for n, b in self.scene.bodies.items() if b.kind == "blocker")


def scene_payloads(scene: Scene) -> dict:
    out = dict(scene.regions)
    out.update(scene.bodies)
    out.update({pose_name(n): p for n, p in scene.poses.items()})
    return out


def _sub_rng(seed: int, attempt: int, label: str) -> np.random.Generator:
    return np.random.default_rng([seed, attempt, zlib.crc32(label.encode())])


def _body(kind: str, x: float, y: float) -> geo.Body:
    if kind == "block":
        return geo.Body("block", BLOCK_HALF, BLOCK_HEIGHT, float(x), float(y))
    return geo.Body("blocker", BLOCKER_HALF, BLOCKER_HEIGHT, float(x), float(y))


def _free(box, placed) -> bool:
    return not any(geo.boxes_overlap(box, other) for other in placed)


def _uniform(rng, half, region, placed) -> Optional[tuple]:
    for _ in range(MAX_DARTS):
        x = rng.uniform(region.xmin + half, region.xmax - half)
        y = rng.uniform(region.ymin + half, region.ymax - half)
        if _free(geo.box_at(x, y, half), placed):
            return float(x), float(y)
    return None


def poisson_disc(rng, region, n: int, radius: float, margin: float) -> Optional[list]:
    """Ordered dart throwing: each point lands in an annulus around an earlier one,
    so the cluster stays tight while keeping the minimum separation."""
    lo_x, hi_x = region.xmin + margin, region.xmax - margin
    lo_y, hi_y = region.ymin + margin, region.ymax - margin
    pts = [(float(rng.uniform(lo_x, hi_x)), float(rng.uniform(lo_y, hi_y)))]
    while len(pts) < n:
        for _ in range(MAX_DARTS):
            cx, cy = pts[int(rng.integers(len(pts)))]
            r = rng.uniform(radius, 2 * radius)
            a = rng.uniform(0, 2 * math.pi)
            x, y = cx + r * math.cos(a), cy + r * math.sin(a)
            if not (lo_x <= x <= hi_x and lo_y <= y <= hi_y):
                continue
            if all(math.hypot(x - px, y - py) >= radius for px, py in pts):
                pts.append((float(x), float(y)))
                break
        else:
            return None
    return pts


def adjacent_blocker(x: float, y: float) -> tuple:
    """Blocker centre on the inward side of a block, touching its grasp cone."""
    th = geo.inward_angle(x, y)
    d = BLOCK_HALF + BLOCKER_HALF + ADJACENT_GAP
    return x + d * math.cos(th), y + d * math.sin(th)


def _counts(spec: GeneratorSpec, rng) -> tuple:
    (b_lo, b_hi), (k_lo, k_hi) = RANGES[spec.task][spec.split]
    nb = spec.blocks if spec.blocks is not None else int(rng.integers(b_lo, b_hi + 1))
    if spec.blockers is not None:
        nk = spec.blockers
    elif spec.task == "clutter":
        nk = min(max(2 * nb, k_lo), k_hi)
    elif spec.task == "nonmonotonic":
        nk = nb
    else:
        nk = int(rng.integers(k_lo, k_hi + 1))
    return nb, nk


def _layout(spec: GeneratorSpec, rng, nb: int, nk: int) -> Optional[tuple]:
    """Returns (bodies, poses, colors) or None on placement failure."""
    blocks = [f"b{i}" for i in range(nb)]
    blockers = [f"k{i}" for i in range(nk)]
    bodies, poses, colors = {}, {}, {}
    placed = []

    def put(name, kind, x, y):
        bodies[name] = _body(kind, x, y)
        poses[name] = geo.Pose(float(x), float(y), 0.0)
        placed.append(geo.box_at(x, y, bodies[name].half))

    names = list(TABLES)
    if spec.task == "stacking" or spec.task == "distractors":
        tables = names if spec.task == "stacking" else ["red", "blue"]
        for b in blocks:
            xy = _uniform(rng, BLOCK_HALF, TABLES[tables[int(rng.integers(len(tables)))]], placed)
            if xy is None:
                return None
            put(b, "block", *xy)
        for k in blockers:
            xy = _uniform(rng, BLOCKER_HALF, TABLES[["green", "purple"][int(rng.integers(2))]], placed)
            if xy is None:
                return None
            put(k, "blocker", *xy)
    elif spec.task in ("sorting", "clutter"):
        objs = [(b, "block") for b in blocks] + [(k, "blocker") for k in blockers]
        order = [objs[i] for i in rng.permutation(len(objs))]
        if spec.task == "sorting":
            groups = {"green": [], "purple": []}
            for o in order:
                groups[["green", "purple"][int(rng.integers(2))]].append(o)
        else:
            groups = {names[int(rng.integers(4))]: order}
        for table, members in groups.items():
            if not members:
                continue
            pts = poisson_disc(rng, TABLES[table], len(members), POISSON_RADIUS, BLOCKER_HALF)
            if pts is None:
                return None
            for (name, kind), (x, y) in zip(members, pts):
                put(name, kind, x, y)
        if spec.task == "sorting":
            for b in blocks:
                colors[b] = ["red", "blue"][int(rng.integers(2))]
    else:  # nonmonotonic
        for b, k in zip(blocks, blockers):
            for _ in range(MAX_DARTS):
                table = TABLES[names[int(rng.integers(4))]]
                xy = _uniform(rng, BLOCK_HALF, table, placed)
                if xy is None:
                    continue
                kx, ky = adjacent_blocker(*xy)
                kbox = geo.box_at(kx, ky, BLOCKER_HALF)
                bbox = geo.box_at(*xy, BLOCK_HALF)
                if geo.box_inside(kbox, table) and _free(kbox, placed + [bbox]):
                    put(b, "block", *xy)
                    put(k, "blocker", kx, ky)
                    break
            else:
                return None
    return bodies, poses, colors


def _obstructions(bodies, poses) -> tuple:
    out = []
    for b in sorted(bodies):
        if bodies[b].kind != "block":
            continue
        for k in sorted(bodies):
            if k == b or bodies[k].height <= bodies[b].height:
                continue
            kp = poses[k]
            if geo.all_rays_blocked(poses[b], geo.box_at(kp.x, kp.y, bodies[k].half)):
                out.append((k, b))
    return tuple(out)


def _goal(spec: GeneratorSpec, rng, scene: Scene) -> list:
    blocks = sorted((n for n, b in scene.bodies.items() if b.kind == "block"), key=lambda s: int(s[1:]))
    goal = []
    if spec.task == "stacking":
        tower = [blocks[i] for i in rng.permutation(len(blocks))]
        goal += [f"(on-block {up} {low})" for low, up in zip(tower, tower[1:])]
    elif spec.task == "sorting":
        goal += [f"(on-surface {b} {scene.colors[b]})" for b in blocks]
        for k, b in scene.obstructions:
            goal.append(f"(on-surface {k} {scene.region_of(k)})")
    else:
        rest = blocks
        if len(blocks) >= 2 and spec.task != "nonmonotonic":
            low, up = [blocks[i] for i in rng.permutation(len(blocks))[:2]]
            goal.append(f"(on-block {up} {low})")
            rest = [b for b in blocks if b not in (low, up)]
        for b in rest:
            here = scene.region_of(b)
            others = [r for r in TABLES if r != here]
            goal.append(f"(on-surface {b} {others[int(rng.integers(len(others)))]})")
        if spec.task == "nonmonotonic":
            seen = set()
            for k, _ in scene.obstructions:
                if k not in seen:
                    seen.add(k)
                    goal.append(f"(at {k} {pose_name(k)})")
    return goal


def problem_text(name: str, scene: Scene, goal: list, stackable: bool) -> str:
    objs = [f"({r} {reg.center[0]!r} {reg.center[1]!r} 0.0)" for r, reg in scene.regions.items()]
    init = [f"(region {r})" for r in scene.regions]
    obstructed = {b for _, b in scene.obstructions}
    obstructors = {k: [] for k, _ in scene.obstructions}
    for k, b in scene.obstructions:
        obstructors[k].append(b)
    for n in sorted(scene.bodies, key=lambda s: (s[0], int(s[1:]))):
        body, p = scene.bodies[n], scene.poses[n]
        pn = pose_name(n)
        objs.append(f"({n} {body.x!r} {body.y!r} 0.0)")
        objs.append(f"({pn} {p.x!r} {p.y!r} {p.z!r})")
        region = scene.region_of(n)
        init += [f"(graspable {n})", f"(pose {n} {pn})", f"(at {n} {pn})",
                 f"(on-surface {n} {region})", f"(clear {n})"]
        if body.kind == "block":
            init.append(f"(block {n})")
        if n not in obstructed:
            init.append(f"(free {n})")
        if n in obstructors:
            init.append(f"(return-support {n} {pn} {region})")
            init += [f"(obstructs {n} {pn} {b})" for b in obstructors[n]]
        else:
            init.append(f"(supported {n} {pn} {region})")
    if stackable:
        blocks = sorted(n for n, b in scene.bodies.items() if b.kind == "block")
        init += [f"(stackable {a} {b})" for a in blocks for b in blocks if a != b]
    init += ["(handempty)"]
    return (f"(define (problem {name}) (:domain tabletop)\n  (:objects {' '.join(objs)})\n"
            f"  (:init {' '.join(init)})\n  (:goal (and {' '.join(goal)})))\n")


def generate_problem(spec: GeneratorSpec) -> TabletopTask:
    """Deterministic per spec; placement failures retry under derived sub-seeds."""
    domain = tabletop_domain()
    for attempt in range(MAX_REGENERATIONS):
        rng = _sub_rng(spec.seed, attempt, spec.task)
        nb, nk = _counts(spec, rng)
        lay = _layout(spec, rng, nb, nk)
        if lay is None:
            continue
        bodies, poses, colors = lay
        scene = Scene(dict(TABLES), bodies, poses, obstructions=_obstructions(bodies, poses), colors=colors)
        if spec.task == "nonmonotonic" and len({b for _, b in scene.obstructions}) < nb:
            continue
        goal = _goal(spec, rng, scene)
        stackable = any(g.startswith("(on-block") for g in goal)
        name = f"{spec.task}-{spec.split}-{spec.seed}"
        problem = parse_problem(problem_text(name, scene, goal, stackable), domain)
        task = TabletopTask(spec, problem, scene)
        try:
            task.witness = witness_plan(task, _sub_rng(spec.seed, attempt, "witness"))
        except GenerationError:
            continue
        return task
    raise GenerationError(f"could not generate {spec}")


# ---------------------------------------------------------------- witness construction

class _Builder:
    """Replays a pick-and-place script with concrete payloads, recording each
    certified fact it relies on so the plan can be checked end to end."""

    def __init__(self, task: TabletopTask, rng):
        self.task, self.rng = task, rng
        self.scene = task.scene
        self.payloads = task.payloads()
        self.facts = set(task.problem.init)
        self.steps = []
        self.where = {n: pose_name(n) for n in self.scene.bodies}
        self.surface = {n: self.scene.region_of(n) for n in self.scene.bodies}
        self.counter = 0
        self.free = {n for n in self.scene.bodies} - {b for _, b in self.scene.obstructions}
        self.below = {}
        self.transits = {}

    def _new(self, prefix, payload):
        self.counter += 1
        name = f"w{prefix}{self.counter}"
        self.payloads[name] = payload
        return name

    def _certify(self, pred, *args):
        self.facts.add(fact(pred, *args))

    def _act(self, name, *args):
        schema = self.task.domain.action(name)
        self.steps.append(ActionInstance(schema, tuple(args)))

    def _grasp_and_conf(self, body, pose_obj):
        pose = self.payloads[pose_obj]
        for _ in range(100):
            g = geo.sample_grasp(self.scene.bodies[body], self.rng)
            q = geo.ik(pose, g)
            if q is not None:
                gn, qn = self._new("g", g), self._new("q", q)
                self._certify("grasp", body, gn)
                self._certify("conf", qn)
                self._certify("kin", body, pose_obj, gn, qn)
                return gn, qn
        raise GenerationError("no reachable grasp")

    def _transit(self, qn):
        t = geo.plan_motion(self.scene.home, self.payloads[qn], self.scene.fixtures, self.scene.home)
        if t is None:
            raise GenerationError("no transit")
        tn = self._new("t", t)
        self._certify("transit", qn, tn)
        return tn

    def _move(self, qn):
        if qn not in self.transits:
            self.transits[qn] = self._transit(qn)
        return self.transits[qn]

    def pick(self, body, frees=None):
        obj = self.where[body]
        g, q = self._grasp_and_conf(body, obj)
        t = self._move(q)
        if body in self.below:
            self._act("unstack", body, obj, g, q, self.below.pop(body), t)
        else:
            if frees is not None:
                self._act("pick-obstructor", body, obj, g, q, self.surface[body], frees, t)
                self.free.add(frees)
            else:
                self._act("pick", body, obj, g, q, self.surface[body], t)
        return g

    def place(self, body, g, region):
        reg = self.scene.regions[region]
        for _ in range(100):
            p = geo.sample_placement(self.scene.bodies[body], reg, self.rng)
            q = None if p is None else geo.ik(p, self.payloads[g])
            if q is not None:
                break
        else:
            raise GenerationError("no placement")
        pn, qn = self._new("p", p), self._new("q", q)
        self._certify("pose", body, pn)
        self._certify("supported", body, pn, region)
        self._certify("conf", qn)
        self._certify("kin", body, pn, g, qn)
        self._act("place", body, pn, g, qn, region, self._move(qn))
        self.where[body], self.surface[body] = pn, region

    def stack(self, body, g, lower):
        lp = self.payloads[self.where[lower]]
        p = geo.Pose(lp.x, lp.y, lp.z + self.scene.bodies[lower].height)
        q = geo.ik(p, self.payloads[g])
        if q is None:
            raise GenerationError("no stacking conf")
        pn, qn = self._new("p", p), self._new("q", q)
        self._certify("pose", body, pn)
        self._certify("stack-support", body, pn, lower, self.where[lower])
        self._certify("conf", qn)
        self._certify("kin", body, pn, g, qn)
        self._act("stack", body, pn, g, qn, lower, self.where[lower], self._move(qn))
        self.where[body], self.surface[body] = pn, None
        self.below[body] = lower

    def return_obstructor(self, k, b):
        g = self.pick(k)
        obj = pose_name(k)
        q = geo.ik(self.payloads[obj], self.payloads[g])
        if q is None:
            raise GenerationError("unreachable return pose")
        qn = self._new("q", q)
        self._certify("conf", qn)
        self._certify("kin", k, obj, g, qn)
        region = self.scene.region_of(k)
        self._act("place-obstructor", k, obj, g, qn, region, b, self._move(qn))
        self.where[k], self.surface[k] = obj, region

    def clear_path(self, b) -> list:
        moved = []
        for k, blocked in self.scene.obstructions:
            if blocked == b and b not in self.free:
                if self.where[k] != pose_name(k):
                    raise GenerationError("obstructor already displaced")
                g = self.pick(k, frees=b)
                here = self.surface[k]
                self.place(k, g, next(r for r in TABLES if r != here))
                moved.append((k, b))
        return moved


def witness_plan(task: TabletopTask, rng) -> list:
    """Build and check a concrete plan; raises GenerationError when it fails."""
    w = _Builder(task, rng)
    goals = sorted(task.problem.goal)
    stacks = [(f.args[0], f.args[1]) for f in goals if f.predicate == "on-block"]
    surfaces = [(f.args[0], f.args[1]) for f in goals if f.predicate == "on-surface"]
    returns = []
    for b, region in surfaces:
        if w.surface[b] == region:
            continue
        returns += w.clear_path(b)
        g = w.pick(b)
        w.place(b, g, region)
    # towers are built bottom-up from the lowest unsupported block
    ups = {low: up for up, low in stacks}
    lows = {up for up, _ in stacks}
    for base in sorted(set(ups) - lows):
        low = base
        while low in ups:
            up = ups[low]
            returns += w.clear_path(up)
            g = w.pick(up)
            w.stack(up, g, low)
            low = up
    for k, b in returns:
        if any(f.predicate == "at" and f.args[0] == k for f in goals) or any(
                f.predicate == "on-surface" and f.args[0] == k for f in goals):
            w.return_obstructor(k, b)
    plan = Plan(tuple(w.steps))
    verify = task.verifier()
    streams_preds = {"grasp", "pose", "supported", "stack-support", "kin", "conf", "transit"}
    for f in w.facts:
        if f.predicate in streams_preds and f not in task.problem.init and not verify(f, w.payloads):
            raise GenerationError(f"witness fact fails geometric check: {f}")
    problem = explain_plan(frozenset(w.facts), frozenset(goals), plan)
    if problem is not None:
        raise GenerationError(f"witness plan invalid: {problem}")
    return list(w.steps)
