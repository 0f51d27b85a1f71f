"""Symbolic vocabulary, stream samplers and the geometric fact checker of the tabletop domain."""
from __future__ import annotations

import math
from functools import lru_cache

from ..language import DomainDefinition, parse_domain
from ..streams import SamplerSpec
from ..symbolic import Fact
from . import geometry as geo

TABLETOP_DOMAIN = """
(define (domain tabletop)
  (:predicates
    (graspable ?b) (block ?b) (region ?r) (stackable ?b ?lb)
    (pose ?b ?p) (grasp ?b ?g) (conf ?q) (kin ?b ?p ?g ?q) (transit ?q ?t)
    (supported ?b ?p ?r) (stack-support ?b ?p ?lb ?lp) (obstructs ?k ?p ?b) (return-support ?k ?p ?r)
    (at ?b ?p) (on-surface ?b ?r) (on-block ?b ?lb) (clear ?b) (free ?b)
    (holding ?b ?g) (handempty))
  (:action pick
    :parameters (?b ?p ?g ?q ?r ?t)
    :precondition (and (kin ?b ?p ?g ?q) (transit ?q ?t) (at ?b ?p) (on-surface ?b ?r)
                       (clear ?b) (free ?b) (handempty))
    :effect (and (holding ?b ?g) (not (at ?b ?p)) (not (on-surface ?b ?r)) (not (handempty))))
  (:action place
    :parameters (?b ?p ?g ?q ?r ?t)
    :precondition (and (kin ?b ?p ?g ?q) (transit ?q ?t) (holding ?b ?g) (supported ?b ?p ?r))
    :effect (and (at ?b ?p) (on-surface ?b ?r) (handempty) (not (holding ?b ?g))))
  (:action stack
    :parameters (?b ?p ?g ?q ?lb ?lp ?t)
    :precondition (and (kin ?b ?p ?g ?q) (transit ?q ?t) (holding ?b ?g) (block ?lb)
                       (at ?lb ?lp) (clear ?lb) (stack-support ?b ?p ?lb ?lp))
    :effect (and (at ?b ?p) (on-block ?b ?lb) (handempty)
                 (not (holding ?b ?g)) (not (clear ?lb))))
  (:action unstack
    :parameters (?b ?p ?g ?q ?lb ?t)
    :precondition (and (kin ?b ?p ?g ?q) (transit ?q ?t) (at ?b ?p) (on-block ?b ?lb)
                       (clear ?b) (free ?b) (handempty))
    :effect (and (holding ?b ?g) (clear ?lb) (not (at ?b ?p)) (not (on-block ?b ?lb))
                 (not (handempty))))
  (:action pick-obstructor
    :parameters (?k ?p ?g ?q ?r ?b ?t)
    :precondition (and (kin ?k ?p ?g ?q) (transit ?q ?t) (at ?k ?p) (on-surface ?k ?r)
                       (obstructs ?k ?p ?b) (handempty))
    :effect (and (holding ?k ?g) (free ?b) (not (at ?k ?p)) (not (on-surface ?k ?r))
                 (not (handempty))))
  (:action place-obstructor
    :parameters (?k ?p ?g ?q ?r ?b ?t)
    :precondition (and (kin ?k ?p ?g ?q) (transit ?q ?t) (holding ?k ?g)
                       (return-support ?k ?p ?r) (obstructs ?k ?p ?b))
    :effect (and (at ?k ?p) (on-surface ?k ?r) (handempty) (not (holding ?k ?g))
                 (not (free ?b))))
  (:streams
    (:stream find-grasp
      :inputs (?b)
      :domain (and (graspable ?b))
      :outputs (?g)
      :certified (and (grasp ?b ?g)))
    (:stream find-place
      :inputs (?b ?r)
      :domain (and (graspable ?b) (region ?r))
      :outputs (?p)
      :certified (and (pose ?b ?p) (supported ?b ?p ?r)))
    (:stream find-stack-place
      :inputs (?b ?lb ?lp)
      :domain (and (stackable ?b ?lb) (pose ?lb ?lp))
      :outputs (?p)
      :certified (and (pose ?b ?p) (stack-support ?b ?p ?lb ?lp)))
    (:stream ik
      :inputs (?b ?p ?g)
      :domain (and (pose ?b ?p) (grasp ?b ?g))
      :outputs (?q)
      :certified (and (conf ?q) (kin ?b ?p ?g ?q)))
    (:stream find-transit
      :inputs (?q)
      :domain (and (conf ?q))
      :outputs (?t)
      :certified (and (transit ?q ?t)))))
"""

POSITION_TOL = 1e-9


@lru_cache(maxsize=1)
def tabletop_domain() -> DomainDefinition:
    return parse_domain(TABLETOP_DOMAIN)


def _body(payload) -> geo.Body:
    if not isinstance(payload, geo.Body):
        raise TypeError(f"expected a body payload, got {payload!r}")
    return payload


def make_samplers(fixtures=(), home=(0.0, 0.0)) -> dict:
    """Stream samplers keyed by stream name. They depend only on their inputs and rng."""
    fixtures = tuple(geo.Box(*f) for f in fixtures)

    def find_grasp(inputs, rng, attempt):
        g = geo.sample_grasp(_body(inputs[0]), rng)
        return None if g is None else (g,)

    def find_place(inputs, rng, attempt):
        body, region = _body(inputs[0]), inputs[1]
        p = geo.sample_placement(body, region, rng)
        return None if p is None else (p,)

    def find_stack_place(inputs, rng, attempt):
        _, lower, lp = inputs
        lower = _body(lower)
        j = geo.STACK_JITTER
        dx, dy = rng.uniform(-j, j, size=2)
        return (geo.Pose(float(lp.x + dx), float(lp.y + dy), float(lp.z + lower.height)),)

    def ik(inputs, rng, attempt):
        _, pose, grasp = inputs
        q = geo.ik(pose, grasp)
        return None if q is None else (q,)

    def find_transit(inputs, rng, attempt):
        t = geo.plan_motion(home, inputs[0], fixtures, home)
        return None if t is None else (t,)

    return {
        "find-grasp": SamplerSpec(find_grasp),
        "find-place": SamplerSpec(find_place),
        "find-stack-place": SamplerSpec(find_stack_place),
        "ik": SamplerSpec(ik, deterministic=True),
        "find-transit": SamplerSpec(find_transit, deterministic=True),
    }


class UnknownCertified(ValueError):
    pass


def _supported(body, pose, region) -> bool:
    return abs(pose.z) < POSITION_TOL and geo.box_inside(geo.box_at(pose.x, pose.y, body.half), region)


def _stack_support(pose, lower, lp) -> bool:
    j = geo.STACK_JITTER + POSITION_TOL
    return (abs(pose.x - lp.x) <= j and abs(pose.y - lp.y) <= j
            and abs(pose.z - (lp.z + lower.height)) < POSITION_TOL)


def _motion_ok(q1, q2, traj, fixtures, margin=0.02) -> bool:
    if not isinstance(traj, geo.Traj) or len(traj.points) < 2:
        return False
    pts = traj.points
    if tuple(pts[0]) != (q1.x, q1.y) or tuple(pts[-1]) != (q2.x, q2.y):
        return False
    return not any(geo.segment_hits_box(a, b, f, margin) for a, b in zip(pts, pts[1:]) for f in fixtures)


def make_verifier(fixtures=(), home=(0.0, 0.0)):
    """Re-check a certified fact from raw payloads."""
    fixtures = tuple(geo.Box(*f) for f in fixtures)
    home = geo.Conf(*home)

    def verify(f: Fact, payloads: dict) -> bool:
        vals = [payloads.get(a) for a in f.args]
        pred = f.predicate
        try:
            if pred == "grasp":
                b, g = vals
                return isinstance(g, geo.Grasp) and abs(g.delta) <= geo.GRASP_CONE + 1e-12
            if pred == "pose":
                return isinstance(vals[1], geo.Pose)
            if pred == "supported":
                b, p, r = vals
                return _supported(_body(b), p, r)
            if pred == "stack-support":
                b, p, lb, lp = vals
                return _stack_support(p, _body(lb), lp)
            if pred == "kin":
                b, p, g, q = vals
                expect = geo.gripper_position(p, g)
                return (isinstance(q, geo.Conf) and geo.reachable(q)
                        and math.isclose(q.x, expect.x, abs_tol=1e-9)
                        and math.isclose(q.y, expect.y, abs_tol=1e-9))
            if pred == "conf":
                return isinstance(vals[0], geo.Conf)
            if pred == "transit":
                return _motion_ok(home, vals[0], vals[1], fixtures)
        except (TypeError, ValueError, AttributeError):
            return False
        raise UnknownCertified(pred)

    return verify
