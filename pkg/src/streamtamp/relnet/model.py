"""The relevance model: a graph network over the problem graph plus one
encoder/scorer/decoder triple per stream schema, applied recursively along the
ancestry of a stream instance."""
from __future__ import annotations

from dataclasses import dataclass, field
from typing import Optional

import numpy as np

from . import autodiff as ad
from .graph import NODE_WIDTH, ProblemGraph
from .labels import SigNode

WIDTH = 64
HIDDEN = 64
BLOCKS = 3
SLOPE = 0.01


class ShapeError(ValueError):
    pass


# ---------------------------------------------------------------- op namespaces
# The forward pass is written once against these two namespaces: one records a
# differentiable graph, the other runs plain numpy for fast inference.

class _NumpyOps:
    @staticmethod
    def const(x):
        return np.asarray(x, dtype=np.float64)

    @staticmethod
    def linear(x, w, b):
        return x @ w + b

    @staticmethod
    def leaky(x):
        return np.where(x > 0, x, SLOPE * x)

    @staticmethod
    def concat(parts, axis):
        return parts[0] if len(parts) == 1 else np.concatenate(parts, axis=axis)

    @staticmethod
    def take(x, idx):
        return x[idx]

    @staticmethod
    def segsum(x, seg, n):
        out = np.zeros((n,) + x.shape[1:], dtype=x.dtype)
        np.add.at(out, seg, x)
        return out

    @staticmethod
    def sigmoid(x):
        return 0.5 * (1.0 + np.tanh(0.5 * x))

    @staticmethod
    def column(x):
        return x[:, 0]

    @staticmethod
    def mul(a, b):
        return a * b

    @staticmethod
    def parent_factor(p, mask, train):
        if not train:
            big = np.where(mask, p, np.inf)
            m = big.min(axis=1, initial=np.inf)
            return np.where(np.isinf(m), 1.0, m)
        empty = ~mask.any(axis=1)
        shift = np.where(empty, 0.0, np.where(mask, p, np.inf).min(axis=1, initial=np.inf))
        w = np.exp(-(p - shift[:, None])) * mask
        den = w.sum(axis=1) + empty
        return (w * p).sum(axis=1) / den + empty

    @staticmethod
    def value(x):
        return x


class _TapeOps:
    const = staticmethod(ad.constant)

    @staticmethod
    def linear(x, w, b):
        return ad.add(ad.matmul(x, w), b)

    @staticmethod
    def leaky(x):
        return ad.leaky_relu(x, SLOPE)

    concat = staticmethod(ad.concat)
    take = staticmethod(ad.take)
    segsum = staticmethod(ad.segment_sum)
    sigmoid = staticmethod(ad.sigmoid)
    mul = staticmethod(ad.mul)

    @staticmethod
    def column(x):
        return ad.reshape(x, (x.shape[0],))

    @staticmethod
    def parent_factor(p, mask, train):
        return ad.soft_min(p, mask) if train else ad.row_min(p, mask)

    @staticmethod
    def value(x):
        return x.value


NP = _NumpyOps()
TAPE = _TapeOps()


# ---------------------------------------------------------------- parameters

def _init_layer(rng, fan_in, fan_out, zero=False):
    if zero:
        return np.zeros((fan_in, fan_out)), np.zeros(fan_out)
    bound = np.sqrt(6.0 / max(fan_in + fan_out, 1))
    return rng.uniform(-bound, bound, size=(fan_in, fan_out)), np.zeros(fan_out)


@dataclass
class RelevanceModel:
    vocab: tuple
    schemas: dict                    # name -> (n_inputs, n_outputs)
    seed: int = 0
    width: int = WIDTH
    hidden: int = HIDDEN
    blocks: int = BLOCKS
    params: dict = field(default_factory=dict)

    def __post_init__(self):
        if not self.params:
            self.params = self._init_params()
        self._check_shapes()

    @property
    def edge_width(self) -> int:
        return len(self.vocab) + 1

    def _layout(self):
        """(name, fan_in, fan_out, zero_init) for every layer, in a fixed order."""
        out = []
        dn, de = NODE_WIDTH, self.edge_width
        for b in range(self.blocks):
            out.append((f"gnn.{b}.edge.0", 2 * dn + de, self.hidden, False))
            out.append((f"gnn.{b}.edge.1", self.hidden, self.width, False))
            out.append((f"gnn.{b}.node.0", dn + 4 * self.width, self.hidden, False))
            out.append((f"gnn.{b}.node.1", self.hidden, self.width, False))
            dn = de = self.width
        for name in sorted(self.schemas):
            n_in, n_out = self.schemas[name]
            out.append((f"stream.{name}.enc", self.width * n_in, self.width, False))
            out.append((f"stream.{name}.score.0", self.width, self.hidden, False))
            out.append((f"stream.{name}.score.1", self.hidden, 1, True))
            for j in range(n_out):
                out.append((f"stream.{name}.dec.{j}.0", self.width, self.hidden, False))
                out.append((f"stream.{name}.dec.{j}.1", self.hidden, self.width, False))
        out.append(("objects.0", self.width, self.hidden, False))
        out.append(("objects.1", self.hidden, 1, True))
        return out

    def _init_params(self) -> dict:
        rng = np.random.default_rng(self.seed)
        params = {}
        for name, fi, fo, zero in self._layout():
            w, b = _init_layer(rng, fi, fo, zero)
            params[name + ".W"] = w
            params[name + ".b"] = b
        return params

    def _check_shapes(self):
        for name, fi, fo, _ in self._layout():
            w, b = self.params.get(name + ".W"), self.params.get(name + ".b")
            if w is None or b is None or w.shape != (fi, fo) or b.shape != (fo,):
                raise ShapeError(f"parameter {name} missing or mis-shaped")
        expected = {n + s for n, *_ in self._layout() for s in (".W", ".b")}
        extra = set(self.params) - expected
        if extra:
            raise ShapeError(f"unexpected parameters {sorted(extra)}")

    def parameter_count(self) -> int:
        return int(sum(v.size for v in self.params.values()))

    def names(self) -> list:
        return [n + s for n, *_ in self._layout() for s in (".W", ".b")]

    def tape_params(self) -> dict:
        return {k: ad.parameter(v) for k, v in self.params.items()}

    def copy(self) -> "RelevanceModel":
        return RelevanceModel(self.vocab, dict(self.schemas), self.seed, self.width, self.hidden,
                              self.blocks, {k: v.copy() for k, v in self.params.items()})

    # ------------------------------------------------------------ forward
    def _mlp(self, F, P, x, prefix, layers):
        for i in range(layers):
            x = F.linear(x, P[f"{prefix}.{i}.W"], P[f"{prefix}.{i}.b"])
            if i < layers - 1:
                x = F.leaky(x)
        return x

    def gnn(self, graph: ProblemGraph, F=NP, P=None):
        """Node embeddings (n x width) after the graph-network blocks."""
        P = P if P is not None else self.params
        if graph.edge_features.shape[1] != self.edge_width and graph.n_edges:
            raise ShapeError("edge feature width does not match the vocabulary")
        n = graph.n_nodes
        x = F.const(graph.node_features)
        e = F.const(graph.edge_features if graph.n_edges else np.zeros((0, self.edge_width)))
        # Messages are averaged per group: incoming or outgoing, crossed with
        # init or goal facts. The direction tells a node which end of a fact it
        # is; keeping goal edges apart stops many init facts from drowning them.
        # Means keep embeddings stable when problems have more objects than
        # seen in training. Self-loops count as incoming only.
        flag = graph.edge_features[:, -1] > 0.5 if graph.n_edges else np.zeros(0, dtype=bool)
        loops = graph.src == graph.dst
        groups = []
        for init in (True, False):
            sel = flag == init
            for ends, keep in ((graph.dst, sel), (graph.src, sel & ~loops)):
                idx = np.nonzero(keep)[0]
                inv = 1.0 / np.maximum(np.bincount(ends[idx], minlength=n), 1)[:, None]
                groups.append((idx, ends[idx], F.const(inv)))
        for b in range(self.blocks):
            inp = F.concat([F.take(x, graph.src), F.take(x, graph.dst), e], 1)
            e = self._mlp(F, P, inp, f"gnn.{b}.edge", 2)
            means = [F.mul(F.segsum(F.take(e, idx), seg, n), inv) for idx, seg, inv in groups]
            x = self._mlp(F, P, F.concat([x] + means, 1), f"gnn.{b}.node", 2)
        return x

    def stream(self, name: str, inputs: list, F=NP, P=None):
        """Encoder, scorer and decoders of one schema on a batch.

        inputs: one (batch x width) embedding per schema input, in schema order.
        Returns (logits of shape (batch,), list of output embeddings).
        """
        P = P if P is not None else self.params
        n_in, n_out = self.schemas[name]
        if len(inputs) != n_in:
            raise ShapeError(f"{name} expects {n_in} inputs, got {len(inputs)}")
        for x in inputs:
            if F.value(x).shape[-1] != self.width:
                raise ShapeError(f"{name} input embedding has width {F.value(x).shape[-1]}")
        pre = f"stream.{name}"
        if n_in:
            enc_in = F.concat(list(inputs), 1)
        else:
            raise ShapeError(f"stream {name} has no inputs")
        h = F.leaky(F.linear(enc_in, P[pre + ".enc.W"], P[pre + ".enc.b"]))
        logit = F.column(self._mlp(F, P, h, pre + ".score", 2))
        outs = [self._mlp(F, P, h, f"{pre}.dec.{j}", 2) for j in range(n_out)]
        return logit, outs

    def object_logits(self, nodes, F=NP, P=None):
        P = P if P is not None else self.params
        return F.column(self._mlp(F, P, nodes, "objects", 2))


# ---------------------------------------------------------------- batched ancestry

@dataclass
class Group:
    schema: str
    members: list          # instance positions (global order)
    input_rows: list       # per input slot, row indices into the embedding table
    output_base: int       # first table row of this group's outputs
    parent_index: np.ndarray
    parent_mask: np.ndarray


@dataclass
class AncestryBatch:
    """All instances needed to score a set of signatures, grouped so that each
    group only reads embeddings of earlier groups."""

    signatures: list       # global order
    position: dict         # signature -> global position
    depths: list           # list of groups per depth
    n_nodes: int


def build_batch(targets, graph: ProblemGraph, schemas: dict) -> AncestryBatch:
    """targets: SigNodes (ancestors are pulled in automatically)."""
    node_index = graph.index()
    nodes: dict = {}
    depth: dict = {}

    def visit(n: SigNode) -> int:
        key = n.key
        if key in depth:
            return depth[key]
        if n.schema not in schemas:
            raise ShapeError(f"unknown stream schema {n.schema}")
        if len(n.inputs) != schemas[n.schema][0]:
            raise ShapeError(f"arity mismatch for {n.schema}")
        d = 0
        for r in n.inputs:
            if isinstance(r, str):
                if r not in node_index:
                    raise ShapeError(f"object {r} not in the problem graph")
            else:
                if r[1] >= schemas[r[0].schema][1]:
                    raise ShapeError(f"output index {r[1]} out of range for {r[0].schema}")
                d = max(d, visit(r[0]) + 1)
        depth[key] = d
        nodes[key] = n
        return d

    for t in targets:
        visit(t)
    by_depth: dict = {}
    for key, d in depth.items():
        by_depth.setdefault(d, {}).setdefault(nodes[key].schema, []).append(key)
    signatures, position = [], {}
    out_row: dict = {}
    row = graph.n_nodes
    levels = []
    for d in sorted(by_depth):
        level = []
        for schema in sorted(by_depth[d]):
            keys = sorted(by_depth[d][schema])
            members = []
            for k in keys:
                position[k] = len(signatures)
                signatures.append(k)
                members.append(position[k])
            n_in, n_out = schemas[schema]
            input_rows = []
            for slot in range(n_in):
                rows = []
                for k in keys:
                    r = nodes[k].inputs[slot]
                    rows.append(node_index[r] if isinstance(r, str) else out_row[(r[0].key, r[1])])
                input_rows.append(np.array(rows, dtype=np.int64))
            parents = []
            for k in keys:
                ps = sorted({position[r[0].key] for r in nodes[k].inputs if not isinstance(r, str)})
                parents.append(ps)
            width = max((len(p) for p in parents), default=0)
            pidx = np.zeros((len(keys), max(width, 1)), dtype=np.int64)
            pmask = np.zeros((len(keys), max(width, 1)), dtype=bool)
            for i, ps in enumerate(parents):
                pidx[i, :len(ps)] = ps
                pmask[i, :len(ps)] = True
            base = row
            for j in range(n_out):
                for i, k in enumerate(keys):
                    out_row[(k, j)] = base + j * len(keys) + i
            row += n_out * len(keys)
            level.append(Group(schema, members, input_rows, base, pidx, pmask))
        levels.append(level)
    return AncestryBatch(signatures, position, levels, graph.n_nodes)


def batch_forward(model: RelevanceModel, graph: ProblemGraph, batch: AncestryBatch,
                  train: bool, F=TAPE, P=None):
    """Probabilities (in batch.signatures order) and raw logits of all instances."""
    P = P if P is not None else (model.tape_params() if F is TAPE else model.params)
    table = [model.gnn(graph, F, P)]
    probs, logits, order = [], [], []
    for level in batch.depths:
        emb = F.concat(table, 0)
        prob_all = F.concat(probs, 0) if probs else None
        new_rows = []
        for g in level:
            inputs = [F.take(emb, rows) for rows in g.input_rows]
            logit, outs = model.stream(g.schema, inputs, F, P)
            local = F.sigmoid(logit)
            if prob_all is not None and g.parent_mask.any():
                parent = F.take(prob_all, g.parent_index)
                p = F.mul(local, F.parent_factor(parent, g.parent_mask, train))
            else:
                p = local
            probs.append(p)
            logits.append(logit)
            order.extend(g.members)
            new_rows.extend(outs)
        table.extend(new_rows)
    prob = F.concat(probs, 0)
    logit = F.concat(logits, 0)
    # groups are laid out in global order already
    assert order == list(range(len(order)))
    return prob, logit, P


def model_score(model: RelevanceModel, graph: ProblemGraph, node: SigNode, train: bool = False) -> float:
    """Probability of one instance with its ancestry (exact min at inference)."""
    batch = build_batch([node], graph, model.schemas)
    prob, _, _ = batch_forward(model, graph, batch, train, F=NP)
    return float(prob[batch.position[node.key]])


class IncrementalScorer:
    """Per-instance numpy inference with memoized ancestor embeddings."""

    def __init__(self, model: RelevanceModel, graph: ProblemGraph):
        self.model = model
        self.graph = graph
        self.nodes = model.gnn(graph, NP)
        self.node_index = graph.index()
        self._memo: dict = {}

    def embedding(self, ref):
        if isinstance(ref, str):
            return self.nodes[self.node_index[ref]]
        return self.evaluate(ref[0])[1][ref[1]]

    def evaluate(self, node: SigNode):
        key = node.key
        hit = self._memo.get(key)
        if hit is None:
            inputs = [self.embedding(r)[None, :] for r in node.inputs]
            logit, outs = self.model.stream(node.schema, inputs, NP)
            hit = (float(NP.sigmoid(logit)[0]), [o[0] for o in outs])
            self._memo[key] = hit
        return hit

    def local(self, node: SigNode) -> float:
        return self.evaluate(node)[0]
