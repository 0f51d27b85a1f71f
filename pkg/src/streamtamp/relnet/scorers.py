"""Scorers backed by the relevance model, plus the per-schema frequency table."""
from __future__ import annotations

from typing import Iterable

import numpy as np

from ..planner import Scorer
from .graph import build_problem_graph
from .labels import LabeledInstance, Signer, parse_signature
from .model import NP, IncrementalScorer, RelevanceModel


class ModelScorer(Scorer):
    """Local relevance probability of an instance. The planner multiplies it by
    the minimum parent score, which is the inference-time recursion."""

    name = "model"

    def __init__(self, model: RelevanceModel):
        self.model = model
        self._inc = None
        self._signer = None

    def prepare(self, domain, problem, registry) -> None:
        graph = build_problem_graph(problem, self.model.vocab)
        self._inc = IncrementalScorer(self.model, graph)
        self._signer = Signer(registry)

    def raw(self, result, registry):
        return self._inc.local(self._signer.node(result.instance))


class PGScorer(Scorer):
    """Mean importance of the initial objects behind an instance, divided by its depth.

    An input that is itself a stream output contributes the mean of its own
    producer, so the average recurses through non-initial ancestors.
    """

    name = "pg"

    def __init__(self, model: RelevanceModel):
        self.model = model
        self._importance: dict = {}
        self._means: dict = {}
        self._signer = None

    def prepare(self, domain, problem, registry) -> None:
        graph = build_problem_graph(problem, self.model.vocab)
        logits = self.model.object_logits(self.model.gnn(graph, NP), NP)
        prob = NP.sigmoid(logits)
        self._importance = dict(zip(graph.names, prob.tolist()))
        self._means = {}
        self._signer = Signer(registry)

    def _mean(self, node) -> float:
        hit = self._means.get(node.key)
        if hit is None:
            vals = [self._importance.get(r, 0.5) if isinstance(r, str) else self._mean(r[0])
                    for r in node.inputs]
            hit = float(np.mean(vals)) if vals else 0.5
            self._means[node.key] = hit
        return hit

    def raw(self, result, registry):
        node = self._signer.node(result.instance)
        return self._mean(node) / node.depth


def schema_frequencies(records: Iterable[LabeledInstance]) -> dict:
    """Fraction of labeled instances of each schema that were relevant."""
    pos: dict = {}
    tot: dict = {}
    for r in records:
        tot[r.schema] = tot.get(r.schema, 0) + 1
        pos[r.schema] = pos.get(r.schema, 0) + r.label
    return {s: pos[s] / tot[s] for s in sorted(tot)}


def object_labels(records: Iterable[LabeledInstance]) -> dict:
    """problem -> set of initial objects appearing in a relevant signature."""
    out: dict = {}
    for r in records:
        s = out.setdefault(r.problem, set())
        if not r.label:
            continue
        stack = [parse_signature(r.signature)]
        while stack:
            n = stack.pop()
            for ref in n.inputs:
                if isinstance(ref, str):
                    s.add(ref)
                else:
                    stack.append(ref[0])
    return out
