"""Weighted cross-entropy training, evaluation and finite-difference gradient checks."""
from __future__ import annotations

import logging
import time
from dataclasses import dataclass, field
from typing import Optional

import numpy as np

from . import autodiff as ad
from .graph import ProblemGraph
from .labels import parse_signature
from .model import NP, TAPE, AncestryBatch, RelevanceModel, batch_forward, build_batch

log = logging.getLogger(__name__)

PROB_CLIP = 1e-7


@dataclass
class Hyper:
    epochs: int = 200
    step_size: float = 1e-3
    positive_weight: float = 4.0
    batch: int = 1
    seed: int = 0
    rho: float = 0.9
    max_negatives: int = 600
    clip_norm: Optional[float] = 1.0
    time_limit: Optional[float] = None

    def __post_init__(self):
        if self.epochs < 0 or self.step_size <= 0 or self.positive_weight <= 0 or self.batch < 1:
            raise ValueError("invalid training hyperparameters")


@dataclass
class Example:
    """One problem: its graph, the ancestry batch and the labeled positions."""

    problem: str
    graph: ProblemGraph
    batch: AncestryBatch
    index: np.ndarray
    labels: np.ndarray
    signatures: list = field(default_factory=list)


class EmptyDataset(ValueError):
    pass


def make_examples(records, graphs: dict, schemas: dict, max_negatives: Optional[int] = None,
                  seed: int = 0) -> list:
    """Group records by problem; optionally keep a seeded subsample of negatives."""
    by_problem: dict = {}
    for r in records:
        by_problem.setdefault(r.problem, []).append(r)
    rng = np.random.default_rng(seed)
    out = []
    for pid in sorted(by_problem):
        recs = sorted(by_problem[pid], key=lambda r: r.signature)
        if max_negatives is not None:
            pos = [r for r in recs if r.label]
            neg = [r for r in recs if not r.label]
            if len(neg) > max_negatives:
                keep = np.sort(rng.choice(len(neg), size=max_negatives, replace=False))
                neg = [neg[i] for i in keep]
            recs = sorted(pos + neg, key=lambda r: r.signature)
        nodes = [parse_signature(r.signature) for r in recs]
        graph = graphs[pid]
        batch = build_batch(nodes, graph, schemas)
        idx = np.array([batch.position[n.key] for n in nodes], dtype=np.int64)
        y = np.array([r.label for r in recs], dtype=np.float64)
        out.append(Example(pid, graph, batch, idx, y, [r.signature for r in recs]))
    return out


def _weighted_bce(prob, y, positive_weight: float):
    q = ad.clip(prob, PROB_CLIP, 1.0 - PROB_CLIP)
    w_pos = ad.constant(positive_weight * y)
    w_neg = ad.constant(1.0 - y)
    one_minus = ad.sub(ad.constant(np.ones_like(y)), q)
    terms = ad.add(ad.mul(w_pos, ad.log(q)), ad.mul(w_neg, ad.log(one_minus)))
    return ad.scale(ad.total(terms), -1.0 / max(len(y), 1))


def example_loss(model: RelevanceModel, ex: Example, positive_weight: float, P=None):
    """Mean weighted binary cross-entropy over the labeled instances of ex."""
    prob, _, P = batch_forward(model, ex.graph, ex.batch, train=True, F=TAPE, P=P)
    return _weighted_bce(ad.take(prob, ex.index), ex.labels, positive_weight), P


def loss_value(model: RelevanceModel, ex: Example, positive_weight: float, P=None) -> float:
    """The loss of example_loss computed with plain numpy, without a tape.
    P may hold the parameters in another dtype."""
    prob, _, _ = batch_forward(model, ex.graph, ex.batch, train=True, F=NP, P=P)
    q = np.clip(prob[ex.index], PROB_CLIP, 1.0 - PROB_CLIP)
    y = ex.labels
    terms = positive_weight * y * np.log(q) + (1.0 - y) * np.log(1.0 - q)
    return -terms.sum() / max(len(y), 1)


class RMSProp:
    """Per-parameter step scaled by a running root-mean-square of gradients."""

    def __init__(self, params: dict, step_size: float, rho: float = 0.9, eps: float = 1e-8):
        self.step_size, self.rho, self.eps = step_size, rho, eps
        self.ms = {k: np.zeros_like(v) for k, v in params.items()}

    def step(self, params: dict, grads: dict) -> None:
        for k in sorted(params):
            g = grads.get(k)
            if g is None:
                continue
            self.ms[k] = self.rho * self.ms[k] + (1 - self.rho) * g * g
            params[k] -= self.step_size * g / (np.sqrt(self.ms[k]) + self.eps)


def train(model: RelevanceModel, examples: list, hyper: Hyper = Hyper()):
    """Returns (trained model, per-epoch mean losses)."""
    if not examples:
        raise EmptyDataset("no training examples")
    labels = np.concatenate([e.labels for e in examples])
    if labels.sum() == 0:
        raise EmptyDataset("dataset has no positive examples")
    if labels.sum() == len(labels):
        log.warning("dataset contains a single class")
    model = model.copy()
    opt = RMSProp(model.params, hyper.step_size, hyper.rho)
    rng = np.random.default_rng(hyper.seed)
    curve = []
    start = time.monotonic()
    for epoch in range(hyper.epochs):
        order = rng.permutation(len(examples))
        total = 0.0
        for lo in range(0, len(order), hyper.batch):
            grads: dict = {}
            for i in order[lo:lo + hyper.batch]:
                loss, P = example_loss(model, examples[i], hyper.positive_weight)
                loss.backward()
                total += float(loss.value)
                for k, t in P.items():
                    if t.grad is not None:
                        grads[k] = grads.get(k, 0.0) + t.grad
            n = len(order[lo:lo + hyper.batch])
            grads = {k: g / n for k, g in grads.items()}
            if hyper.clip_norm is not None:
                norm = np.sqrt(sum(float(np.sum(g * g)) for g in grads.values()))
                if norm > hyper.clip_norm:
                    grads = {k: g * (hyper.clip_norm / norm) for k, g in grads.items()}
            opt.step(model.params, grads)
        curve.append(total / len(examples))
        if hyper.time_limit is not None and time.monotonic() - start > hyper.time_limit:
            log.warning("training stopped at epoch %d by the time limit", epoch)
            break
    return model, curve


def train_objects(model: RelevanceModel, examples: list, hyper: Hyper = Hyper()):
    """Fit only the object-importance head on frozen graph-network embeddings.

    examples: (graph, per-node 0/1 labels) pairs. Returns (model, curve).
    """
    if not examples:
        raise EmptyDataset("no object examples")
    model = model.copy()
    feats = [ad.constant(model.gnn(g, NP)) for g, _ in examples]
    keys = [k for k in model.names() if k.startswith("objects.")]
    head = {k: model.params[k] for k in keys}
    opt = RMSProp(head, hyper.step_size, hyper.rho)
    rng = np.random.default_rng(hyper.seed)
    curve = []
    for _ in range(hyper.epochs):
        total = 0.0
        for i in rng.permutation(len(examples)):
            P = {k: ad.parameter(head[k]) for k in keys}
            prob = ad.sigmoid(model.object_logits(feats[i], TAPE, P))
            loss = _weighted_bce(prob, examples[i][1], hyper.positive_weight)
            loss.backward()
            total += float(loss.value)
            opt.step(head, {k: P[k].grad for k in keys if P[k].grad is not None})
        curve.append(total / len(examples))
    model.params.update(head)
    return model, curve


def dataset_loss(model: RelevanceModel, examples: list, positive_weight: float) -> float:
    return float(np.mean([example_loss(model, e, positive_weight)[0].value for e in examples]))


def predict(model: RelevanceModel, ex: Example) -> np.ndarray:
    """Inference-mode probabilities (exact min over parents) for the labeled positions."""
    prob, _, _ = batch_forward(model, ex.graph, ex.batch, train=False, F=NP)
    return prob[ex.index]


def classification_report(model: RelevanceModel, examples: list, threshold: float = 0.5) -> dict:
    tp = fp = fn = tn = 0
    for ex in examples:
        pred = predict(model, ex) >= threshold
        y = ex.labels > 0.5
        tp += int(np.sum(pred & y))
        fp += int(np.sum(pred & ~y))
        fn += int(np.sum(~pred & y))
        tn += int(np.sum(~pred & ~y))
    precision = tp / (tp + fp) if tp + fp else 0.0
    recall = tp / (tp + fn) if tp + fn else 0.0
    f1 = 2 * precision * recall / (precision + recall) if precision + recall else 0.0
    return {"tp": tp, "fp": fp, "fn": fn, "tn": tn, "precision": precision, "recall": recall, "f1": f1,
            "accuracy": (tp + tn) / max(tp + fp + fn + tn, 1)}


REFINE_BELOW = 1e-5


def _central(model, ex, positive_weight, P, name, pos, h) -> float:
    arr = P[name].reshape(-1)
    keep = arr[pos]
    arr[pos] = keep + h
    up = loss_value(model, ex, positive_weight, P)
    arr[pos] = keep - h
    down = loss_value(model, ex, positive_weight, P)
    step = (keep + h) - (keep - h)
    arr[pos] = keep
    return float((up - down) / step)


def gradient_check(model: RelevanceModel, ex: Example, h: float = 1e-5, coords: int = 100,
                   seed: int = 0, positive_weight: float = 4.0) -> tuple:
    """(max relative error, coordinates with a nonzero gradient) between
    analytic and central-difference gradients over a random sample of
    parameter coordinates. A saturated model passes trivially with zero
    nonzero coordinates, so callers should look at both.

    In float64 the cancellation in up - down leaves an absolute error near
    1e-11 at h = 1e-5, the size of the smallest gradients of a fresh model.
    Coordinates whose difference quotient is below REFINE_BELOW are redone
    in extended precision; above it the float64 noise is about 1e-6 relative."""
    if not 1e-7 <= h <= 1e-4:
        raise ValueError("perturbation outside [1e-7, 1e-4]")
    loss, P = example_loss(model, ex, positive_weight)
    loss.backward()
    names = model.names()
    sizes = np.array([model.params[n].size for n in names])
    rng = np.random.default_rng(seed)
    flat = rng.choice(int(sizes.sum()), size=min(coords, int(sizes.sum())), replace=False)
    offsets = np.concatenate([[0], np.cumsum(sizes)])
    wide = {k: v.astype(np.longdouble) for k, v in model.params.items()}
    worst, nonzero = 0.0, 0
    for c in np.sort(flat):
        k = int(np.searchsorted(offsets, c, side="right") - 1)
        name, pos = names[k], int(c - offsets[k])
        grad = P[name].grad
        analytic = 0.0 if grad is None else float(grad.reshape(-1)[pos])
        numeric = _central(model, ex, positive_weight, model.params, name, pos, h)
        if max(abs(analytic), abs(numeric)) < REFINE_BELOW:
            numeric = _central(model, ex, positive_weight, wide, name, pos, h)
        err = abs(analytic - numeric) / max(abs(analytic), abs(numeric), 1e-7)
        worst = max(worst, err)
        nonzero += max(abs(analytic), abs(numeric)) > 1e-7
    return worst, nonzero
