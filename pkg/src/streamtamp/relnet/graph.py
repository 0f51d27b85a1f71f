"""Problem graphs: one node per object, one edge per object pair of each init or goal fact."""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

NODE_WIDTH = 3


class VocabularyError(KeyError):
    pass


@dataclass
class ProblemGraph:
    names: tuple
    node_features: np.ndarray   # (n, 3)
    src: np.ndarray             # (m,)
    dst: np.ndarray             # (m,)
    edge_features: np.ndarray   # (m, |vocab| + 1)

    @property
    def n_nodes(self) -> int:
        return len(self.names)

    @property
    def n_edges(self) -> int:
        return len(self.src)

    def index(self) -> dict:
        return {n: i for i, n in enumerate(self.names)}

    def permuted(self, perm) -> "ProblemGraph":
        """Relabel nodes so that new node i is old node perm[i]."""
        perm = np.asarray(perm)
        inv = np.empty_like(perm)
        inv[perm] = np.arange(len(perm))
        return ProblemGraph(tuple(self.names[p] for p in perm), self.node_features[perm],
                            inv[self.src], inv[self.dst], self.edge_features)


def predicate_vocabulary(domain) -> tuple:
    return tuple(sorted(p.name for p in domain.predicates))


def build_problem_graph(problem, vocab: tuple) -> ProblemGraph:
    names = tuple(o.name for o in problem.objects)
    idx = {n: i for i, n in enumerate(names)}
    feats = np.zeros((len(names), NODE_WIDTH))
    for n, i in idx.items():
        p = problem.objects[i].payload
        if isinstance(p, (tuple, list)) and all(isinstance(v, (int, float)) for v in p):
            vals = list(p)[:NODE_WIDTH]
            feats[i, :len(vals)] = vals
    col = {p: k for k, p in enumerate(vocab)}
    width = len(vocab) + 1
    src, dst, rows = [], [], []

    def emit(f, flag):
        k = col.get(f.predicate)
        if k is None:
            raise VocabularyError(f.predicate)
        args = [a for a in f.args if a in idx]
        e = np.zeros(width)
        e[k] = 1.0
        e[-1] = flag
        if len(args) == 1:
            src.append(idx[args[0]])
            dst.append(idx[args[0]])
            rows.append(e)
        for a, b in zip(args, args[1:]):
            src.append(idx[a])
            dst.append(idx[b])
            rows.append(e)

    for f in sorted(problem.init):
        emit(f, 1.0)
    for f in sorted(problem.goal):
        emit(f, 0.0)
    ef = np.array(rows) if rows else np.zeros((0, width))
    return ProblemGraph(names, feats, np.array(src, dtype=np.int64), np.array(dst, dtype=np.int64), ef)
