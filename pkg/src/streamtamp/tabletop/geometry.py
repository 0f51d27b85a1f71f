"""Planar geometry for the tabletop domain: boxes, segments and payload types."""
from __future__ import annotations

import math
from typing import NamedTuple, Optional

import numpy as np

APPROACH = 0.08          # gripper stand-off from the block centre along the grasp ray
GRASP_CONE = math.pi / 6  # grasps approach from within +-30 degrees of the inward direction
WORKSPACE_RADIUS = 1.0
MIN_REACH = 0.1
STACK_JITTER = 0.005


class Body(NamedTuple):
    kind: str      # "block" (short) or "blocker" (tall)
    half: float
    height: float
    x: float
    y: float


class Region(NamedTuple):
    color: str
    xmin: float
    ymin: float
    xmax: float
    ymax: float

    @property
    def center(self):
        return ((self.xmin + self.xmax) / 2, (self.ymin + self.ymax) / 2)


class Pose(NamedTuple):
    x: float
    y: float
    z: float


class Grasp(NamedTuple):
    delta: float


class Conf(NamedTuple):
    x: float
    y: float


class Traj(NamedTuple):
    points: tuple


class Box(NamedTuple):
    xmin: float
    ymin: float
    xmax: float
    ymax: float


def box_at(x: float, y: float, half: float) -> Box:
    return Box(x - half, y - half, x + half, y + half)


def boxes_overlap(a: Box, b: Box) -> bool:
    return a.xmin < b.xmax and b.xmin < a.xmax and a.ymin < b.ymax and b.ymin < a.ymax


def box_inside(inner: Box, outer) -> bool:
    eps = 1e-12
    return (inner.xmin >= outer.xmin - eps and inner.ymin >= outer.ymin - eps
            and inner.xmax <= outer.xmax + eps and inner.ymax <= outer.ymax + eps)


def segment_hits_box(p, q, box: Box, margin: float = 0.0) -> bool:
    """Liang-Barsky clipping of segment p->q against an (inflated) box."""
    x0, y0 = p
    dx, dy = q[0] - x0, q[1] - y0
    t0, t1 = 0.0, 1.0
    for pv, qv in ((-dx, x0 - (box.xmin - margin)), (dx, (box.xmax + margin) - x0),
                   (-dy, y0 - (box.ymin - margin)), (dy, (box.ymax + margin) - y0)):
        if pv == 0.0:
            if qv < 0:
                return False
            continue
        t = qv / pv
        if pv < 0:
            t0 = max(t0, t)
        else:
            t1 = min(t1, t)
        if t0 > t1:
            return False
    return True


def inward_angle(x: float, y: float) -> float:
    """Direction from a point towards the robot base at the origin."""
    return math.atan2(-y, -x)


def grasp_ray(pose, grasp: Grasp, length: float = APPROACH):
    theta = inward_angle(pose[0], pose[1]) + grasp.delta
    return (pose[0], pose[1]), (pose[0] + length * math.cos(theta), pose[1] + length * math.sin(theta))


def gripper_position(pose, grasp: Grasp) -> Conf:
    _, end = grasp_ray(pose, grasp)
    return Conf(round(end[0], 12), round(end[1], 12))


def reachable(conf) -> bool:
    r = math.hypot(conf[0], conf[1])
    return MIN_REACH <= r <= WORKSPACE_RADIUS


def sample_placement(body: Body, region: Region, rng: np.random.Generator) -> Optional[Pose]:
    """Uniform pose with the body's footprint inside the region."""
    lo_x, hi_x = region.xmin + body.half, region.xmax - body.half
    lo_y, hi_y = region.ymin + body.half, region.ymax - body.half
    if lo_x > hi_x or lo_y > hi_y:
        return None
    x = lo_x if lo_x == hi_x else float(rng.uniform(lo_x, hi_x))
    y = lo_y if lo_y == hi_y else float(rng.uniform(lo_y, hi_y))
    return Pose(x, y, 0.0)


def sample_grasp(body: Body, rng: np.random.Generator, pose=None, obstacles=()) -> Optional[Grasp]:
    """A grasp is an approach angle around the inward direction.

    With a pose and obstacles, grasps whose approach segment crosses a taller
    obstacle are rejected; the planner's stream uses no obstacles and handles
    obstruction symbolically.
    """
    g = Grasp(float(rng.uniform(-GRASP_CONE, GRASP_CONE)))
    if pose is not None:
        p, q = grasp_ray(pose, g)
        for box, height in obstacles:
            if height > body.height and segment_hits_box(p, q, box):
                return None
    return g


def ik(pose, grasp: Grasp) -> Optional[Conf]:
    q = gripper_position(pose, grasp)
    return q if reachable(q) else None


def plan_motion(a, b, fixtures, home=(0.0, 0.0), margin: float = 0.02) -> Optional[Traj]:
    """Straight line if clear of fixtures, else a detour through the home point."""
    a, b = (float(a[0]), float(a[1])), (float(b[0]), float(b[1]))

    def clear(p, q):
        return not any(segment_hits_box(p, q, f, margin) for f in fixtures)

    if clear(a, b):
        return Traj((a, b))
    h = (float(home[0]), float(home[1]))
    if clear(a, h) and clear(h, b):
        return Traj((a, h, b))
    return None


def all_rays_blocked(pose, box: Box, samples: int = 61) -> bool:
    """True when every grasp approach in the cone crosses the box."""
    for d in np.linspace(-GRASP_CONE, GRASP_CONE, samples):
        p, q = grasp_ray(pose, Grasp(float(d)))
        if not segment_hits_box(p, q, box):
            return False
    return True
