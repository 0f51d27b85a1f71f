"""Small symbolic benchmarks: a grid delivery domain with finite stream universes
and a plain blocks world for search oracles."""
from __future__ import annotations

from collections import deque
from dataclasses import dataclass

import numpy as np

from .language import DomainDefinition, ProblemDefinition, parse_domain, parse_problem
from .streams import EXHAUSTED, SamplerSpec

GRID_DOMAIN = """
(define (domain grid)
  (:predicates (cell ?c) (adj ?c ?d) (at ?c) (item ?i) (itemat ?i ?c) (holding ?i)
               (handempty) (spot ?i ?c) (delivered ?i))
  (:action move
    :parameters (?c ?d)
    :precondition (and (at ?c) (adj ?c ?d))
    :effect (and (at ?d) (not (at ?c))))
  (:action pick
    :parameters (?i ?c)
    :precondition (and (at ?c) (itemat ?i ?c) (handempty))
    :effect (and (holding ?i) (not (itemat ?i ?c)) (not (handempty))))
  (:action drop
    :parameters (?i ?c)
    :precondition (and (at ?c) (holding ?i) (spot ?i ?c))
    :effect (and (delivered ?i) (itemat ?i ?c) (handempty) (not (holding ?i))))
  (:streams
    (:stream connect
      :inputs (?c ?d)
      :domain (and (cell ?c) (cell ?d))
      :outputs ()
      :certified (and (adj ?c ?d)))
    (:stream find-spot
      :inputs (?i)
      :domain (and (item ?i))
      :outputs (?c)
      :certified (and (spot ?i ?c) (cell ?c)))))
"""

BLOCKS_DOMAIN = """
(define (domain blocks)
  (:predicates (block ?b) (on ?a ?b) (ontable ?b) (clear ?b) (holding ?b) (handempty))
  (:action pickup
    :parameters (?b)
    :precondition (and (block ?b) (ontable ?b) (clear ?b) (handempty))
    :effect (and (holding ?b) (not (ontable ?b)) (not (clear ?b)) (not (handempty))))
  (:action putdown
    :parameters (?b)
    :precondition (and (holding ?b))
    :effect (and (ontable ?b) (clear ?b) (handempty) (not (holding ?b))))
  (:action stack
    :parameters (?a ?b)
    :precondition (and (holding ?a) (clear ?b) (block ?b))
    :effect (and (on ?a ?b) (clear ?a) (handempty) (not (holding ?a)) (not (clear ?b))))
  (:action unstack
    :parameters (?a ?b)
    :precondition (and (on ?a ?b) (clear ?a) (handempty))
    :effect (and (holding ?a) (clear ?b) (not (on ?a ?b)) (not (clear ?a)) (not (handempty)))))
"""


def grid_domain() -> DomainDefinition:
    return parse_domain(GRID_DOMAIN)


def blocks_domain() -> DomainDefinition:
    return parse_domain(BLOCKS_DOMAIN)


@dataclass
class GridInstance:
    problem: ProblemDefinition
    samplers: dict
    solvable: bool
    free: frozenset
    spots: dict


def _cell(x, y) -> str:
    return f"c{x}_{y}"


def _reachable(free, start):
    seen = {start}
    queue = deque([start])
    while queue:
        x, y = queue.popleft()
        for dx, dy in ((1, 0), (-1, 0), (0, 1), (0, -1)):
            n = (x + dx, y + dy)
            if n in free and n not in seen:
                seen.add(n)
                queue.append(n)
    return seen


def grid_samplers(free: frozenset, spots: dict) -> dict:
    """connect is a deterministic adjacency test; find-spot enumerates a finite list."""

    def connect(inputs, rng, attempt):
        (x1, y1), (x2, y2) = inputs
        a, b = (int(x1), int(y1)), (int(x2), int(y2))
        if a in free and b in free and abs(a[0] - b[0]) + abs(a[1] - b[1]) == 1:
            return ()
        return None

    def find_spot(inputs, rng, attempt):
        (item_id,) = inputs
        options = spots[int(item_id[0])]
        if attempt >= len(options):
            return EXHAUSTED
        x, y = options[attempt]
        return ((float(x), float(y)),)

    return {"connect": SamplerSpec(connect, deterministic=True), "find-spot": SamplerSpec(find_spot)}


def generate_grid(seed: int, solvable: bool = True, width: int = 4, height: int = 4,
                  items: int = 1, domain: DomainDefinition = None) -> GridInstance:
    """A delivery problem. Unsolvable ones wall off every spot of the first item."""
    domain = domain or grid_domain()
    rng = np.random.default_rng(seed)
    for _ in range(1000):
        cells = [(x, y) for x in range(width) for y in range(height)]
        if solvable:
            n_walls = int(rng.integers(0, 3))
            walls = {cells[i] for i in rng.choice(len(cells), size=n_walls, replace=False)}
        else:
            col = int(rng.integers(1, width - 1))
            walls = {(col, y) for y in range(height)}
        free = frozenset(c for c in cells if c not in walls)
        order = [cells[i] for i in rng.permutation(len(cells)) if cells[i] in free]
        start = order[0]
        reach = _reachable(free, start)
        far = sorted(free - reach)
        near = sorted(reach - {start})
        if len(near) < items or (not solvable and not far):
            continue
        item_cells = []
        spot_lists = {}
        picks = rng.permutation(len(near))
        for k in range(items):
            item_cells.append(near[picks[k]])
            n_spots = int(rng.integers(1, 4))
            pool = far if (not solvable and k == 0) else sorted(free)
            chosen = [pool[i] for i in rng.choice(len(pool), size=min(n_spots, len(pool)), replace=False)]
            if solvable and not any(c in reach for c in chosen):
                chosen.append(near[int(rng.integers(len(near)))])
            spot_lists[k] = chosen
        break
    else:
        raise RuntimeError("grid generation failed")
    lines = [f"(define (problem grid-{seed}) (:domain grid)"]
    objs = [f"({_cell(x, y)} {float(x)!r} {float(y)!r})" for (x, y) in sorted(free)]
    objs += [f"(i{k} {float(k)!r} 0.0)" for k in range(items)]
    lines.append("  (:objects " + " ".join(objs) + ")")
    init = [f"(cell {_cell(*c)})" for c in sorted(free)]
    init += [f"(item i{k})" for k in range(items)]
    init += [f"(itemat i{k} {_cell(*c)})" for k, c in enumerate(item_cells)]
    init += [f"(at {_cell(*start)})", "(handempty)"]
    lines.append("  (:init " + " ".join(init) + ")")
    lines.append("  (:goal (and " + " ".join(f"(delivered i{k})" for k in range(items)) + ")))")
    problem = parse_problem("\n".join(lines), domain)
    return GridInstance(problem, grid_samplers(free, spot_lists), solvable, free, spot_lists)


def generate_blocks(seed: int, n_blocks: int = 4, domain: DomainDefinition = None) -> ProblemDefinition:
    """Random initial and goal towers over n blocks."""
    domain = domain or blocks_domain()
    rng = np.random.default_rng(seed)
    names = [f"b{i}" for i in range(n_blocks)]

    def towers():
        perm = [names[i] for i in rng.permutation(n_blocks)]
        out, cur = [], []
        for b in perm:
            cur.append(b)
            if rng.random() < 0.4:
                out.append(cur)
                cur = []
        if cur:
            out.append(cur)
        return out

    def facts(ts, full):
        fs = []
        for t in ts:
            fs.append(f"(ontable {t[0]})")
            for lower, upper in zip(t, t[1:]):
                fs.append(f"(on {upper} {lower})")
            if full:
                fs.append(f"(clear {t[-1]})")
        return fs

    init = [f"(block {b})" for b in names] + facts(towers(), True) + ["(handempty)"]
    goal = [f for f in facts(towers(), False) if f.startswith("(on")] or [f"(ontable {names[0]})"]
    text = (f"(define (problem blocks-{seed}) (:domain blocks) (:objects {' '.join(names)})"
            f" (:init {' '.join(init)}) (:goal (and {' '.join(goal)})))")
    return parse_problem(text, domain)
