import numpy as np
import pytest
from hypothesis import given, strategies as st

from streamtamp import experiments as X
from streamtamp.planner import SolveConfig
from streamtamp.relnet import autodiff as ad
from streamtamp.relnet.checkpoint import CheckpointError, load_model, save_model
from streamtamp.relnet.graph import build_problem_graph, predicate_vocabulary
from streamtamp.relnet.labels import SignatureError, Signer, ancestors, parse_signature
from streamtamp.relnet.model import NP, IncrementalScorer, RelevanceModel, model_score
from streamtamp.relnet.scorers import ModelScorer, object_labels, schema_frequencies
from streamtamp.relnet.train import EmptyDataset, Hyper, classification_report, gradient_check, make_examples, \
    predict, train
from streamtamp.tabletop.domain import tabletop_domain
from streamtamp.toy import blocks_domain

DOMAIN = tabletop_domain()
VOCAB = predicate_vocabulary(DOMAIN)
SCHEMAS = X.schemas_of(DOMAIN)


@pytest.fixture(scope="module")
def small_data(tmp_path_factory):
    out = tmp_path_factory.mktemp("corpus")
    manifest = X.write_corpus(out, X.corpus_specs("stacking", "train", 3, 5, blocks=2))
    corpus = X.load_corpus(manifest)
    labels, summary = X.collect(corpus, SolveConfig(timeout=30))
    assert all(s["status"] == "Solved" for s in summary)
    return corpus, labels


def randomized(model: RelevanceModel, seed: int) -> RelevanceModel:
    """Fresh models have zero final layers; give every parameter random values."""
    m = model.copy()
    rng = np.random.default_rng(seed)
    for k in m.names():
        m.params[k] = rng.normal(0.0, 0.1, size=m.params[k].shape)
    return m


# ------------------------------------------------------------------ autodiff

def _numeric(f, x, h=1e-6):
    g = np.zeros_like(x)
    for i in np.ndindex(x.shape):
        up, dn = x.copy(), x.copy()
        up[i] += h
        dn[i] -= h
        g[i] = (f(up) - f(dn)) / (2 * h)
    return g


@pytest.mark.parametrize("op", ["sigmoid", "leaky", "exp", "log", "matmul", "concat", "take", "segsum"])
def test_op_gradients(op):
    rng = np.random.default_rng(1)
    x0 = rng.uniform(0.2, 2.0, size=(4, 3))
    w = rng.normal(size=(3, 2))

    def build(t):
        if op == "sigmoid":
            return ad.sigmoid(t)
        if op == "leaky":
            return ad.leaky_relu(ad.sub(t, ad.constant(np.full_like(x0, 1.0))))
        if op == "exp":
            return ad.exp(t)
        if op == "log":
            return ad.log(t)
        if op == "matmul":
            return ad.matmul(t, ad.constant(w))
        if op == "concat":
            return ad.concat([t, ad.scale(t, 2.0)], 1)
        if op == "take":
            return ad.take(t, np.array([0, 0, 3]))
        return ad.segment_sum(t, np.array([1, 0, 1, 2]), 3)

    weights = rng.normal(size=build(ad.constant(x0)).shape)
    p = ad.parameter(x0.copy())
    ad.total(ad.mul(build(p), ad.constant(weights))).backward()
    num = _numeric(lambda x: float(np.sum(build(ad.constant(x)).value * weights)), x0)
    np.testing.assert_allclose(p.grad, num, rtol=1e-5, atol=1e-7)


def test_non_finite_values_are_rejected():
    with pytest.raises(ad.NonFiniteError), np.errstate(divide="ignore"):
        ad.log(ad.constant(np.array([0.0])))


@given(st.integers(0, 10_000))
def test_soft_min_oracle(seed):
    rng = np.random.default_rng(seed)
    a = rng.uniform(0, 1, size=(5, 4))
    mask = rng.random((5, 4)) < 0.6
    got = ad.soft_min(ad.constant(a), mask).value
    for i in range(5):
        if not mask[i].any():
            assert got[i] == 1.0
            continue
        v = a[i][mask[i]]
        w = np.exp(-v)
        assert got[i] == pytest.approx(float(np.sum(w * v) / np.sum(w)), rel=1e-12)
        assert v.min() - 1e-12 <= got[i] <= v.max() + 1e-12
    exact = ad.row_min(ad.constant(a), mask).value
    want = np.where(mask.any(1), np.where(mask, a, np.inf).min(1, initial=np.inf), 1.0)
    np.testing.assert_array_equal(exact, want)


def test_soft_min_gradient():
    rng = np.random.default_rng(3)
    a0 = rng.uniform(0, 1, size=(3, 4))
    mask = np.array([[1, 1, 0, 1], [0, 0, 0, 0], [1, 0, 0, 0]], dtype=bool)
    p = ad.parameter(a0.copy())
    ad.total(ad.soft_min(p, mask)).backward()
    num = _numeric(lambda x: float(np.sum(ad.soft_min(ad.constant(x), mask).value)), a0)
    np.testing.assert_allclose(p.grad, num, rtol=1e-5, atol=1e-8)


# ------------------------------------------------------------------ model

def test_layout_and_shapes():
    m = RelevanceModel(VOCAB, SCHEMAS, seed=0)
    assert m.parameter_count() == sum(v.size for v in m.params.values())
    assert all(k in m.params for k in m.names())
    bad = dict(m.params)
    bad.pop(m.names()[0])
    from streamtamp.relnet.model import ShapeError
    with pytest.raises(ShapeError):
        RelevanceModel(VOCAB, SCHEMAS, params=bad)


def test_same_seed_same_parameters():
    a, b = RelevanceModel(VOCAB, SCHEMAS, seed=4), RelevanceModel(VOCAB, SCHEMAS, seed=4)
    assert all(np.array_equal(a.params[k], b.params[k]) for k in a.names())


def test_permutation_equivariance(small_data):
    corpus, _ = small_data
    graph = build_problem_graph(corpus[0][1].problem, VOCAB)
    m = randomized(RelevanceModel(VOCAB, SCHEMAS), 0)
    perm = np.random.default_rng(0).permutation(graph.n_nodes)
    x = m.gnn(graph, NP)
    xp = m.gnn(graph.permuted(perm), NP)
    np.testing.assert_allclose(xp, x[perm], atol=1e-10)


def test_incremental_scorer_matches_batch(small_data):
    corpus, labels = small_data
    m = randomized(RelevanceModel(VOCAB, SCHEMAS), 1)
    pid = corpus[0][0]["id"]
    graph = build_problem_graph(corpus[0][1].problem, VOCAB)
    inc = IncrementalScorer(m, graph)
    def exact(node):
        # local probability times the minimum over input producers, recursively
        parents = {ref[0].key: ref[0] for ref in node.inputs if not isinstance(ref, str)}
        return inc.local(node) * min((exact(p) for p in parents.values()), default=1.0)

    for r in [r for r in labels if r.problem == pid][:60]:
        node = parse_signature(r.signature)
        assert model_score(m, graph, node) == pytest.approx(exact(node), rel=1e-9, abs=1e-300)


def test_child_score_at_most_parents(small_data):
    # strictness comes from the planner's clamped composition, not from raw model scores
    corpus, labels = small_data
    m = randomized(RelevanceModel(VOCAB, SCHEMAS), 2)
    graph = build_problem_graph(corpus[0][1].problem, VOCAB)
    pid = corpus[0][0]["id"]
    for r in [r for r in labels if r.problem == pid][:40]:
        node = parse_signature(r.signature)
        s = model_score(m, graph, node)
        for anc in ancestors(node):
            if anc != node and anc in [ref[0] for ref in node.inputs if not isinstance(ref, str)]:
                assert s <= model_score(m, graph, anc)


# ------------------------------------------------------------------ signatures and labels

def test_signature_round_trip(small_data):
    _, labels = small_data
    for r in labels:
        assert parse_signature(r.signature).key == r.signature


@pytest.mark.parametrize("text", ["", "f(", "f(a", "f(g(a))", "f(g(a)#)", "f(a))", "(a)"])
def test_bad_signatures(text):
    with pytest.raises(SignatureError):
        parse_signature(text)


def test_labels_have_both_classes(small_data):
    _, labels = small_data
    for pid in {r.problem for r in labels}:
        ys = [r.label for r in labels if r.problem == pid]
        assert sum(ys) >= 3 and len(ys) > sum(ys)


def test_frequencies_and_object_labels(small_data):
    _, labels = small_data
    f = schema_frequencies(labels)
    assert set(f) <= set(SCHEMAS) and all(0 <= v <= 1 for v in f.values())
    obj = object_labels(labels)
    for objs in obj.values():
        assert any(o.startswith("b") for o in objs)


# ------------------------------------------------------------------ training

def test_gradient_check_on_random_models(small_data):
    corpus, labels = small_data
    graphs = X.graphs_for(corpus, VOCAB)
    ex = make_examples(labels, graphs, SCHEMAS, max_negatives=20)[0]
    for seed in range(3):
        m = randomized(RelevanceModel(VOCAB, SCHEMAS, seed=seed), seed)
        worst, nonzero = gradient_check(m, ex, h=1e-5, coords=30, seed=seed)
        assert worst < 1e-4 and nonzero > 10


def test_gradient_check_rejects_bad_step(small_data):
    corpus, labels = small_data
    ex = make_examples(labels, X.graphs_for(corpus, VOCAB), SCHEMAS, max_negatives=5)[0]
    with pytest.raises(ValueError):
        gradient_check(RelevanceModel(VOCAB, SCHEMAS), ex, h=1e-2)


def test_training_reduces_loss(small_data):
    corpus, labels = small_data
    ex = make_examples(labels, X.graphs_for(corpus, VOCAB), SCHEMAS, max_negatives=60)
    model, curve = train(RelevanceModel(VOCAB, SCHEMAS), ex, Hyper(epochs=15))
    assert curve[-1] < curve[0]
    rep = classification_report(model, ex)
    assert rep["recall"] > 0.5
    p = predict(model, ex[0])
    assert np.all((p >= 0) & (p <= 1))


def test_training_rejects_empty_or_negative_only(small_data):
    corpus, labels = small_data
    with pytest.raises(EmptyDataset):
        train(RelevanceModel(VOCAB, SCHEMAS), [])
    negs = [r for r in labels if not r.label]
    ex = make_examples(negs, X.graphs_for(corpus, VOCAB), SCHEMAS)
    with pytest.raises(EmptyDataset):
        train(RelevanceModel(VOCAB, SCHEMAS), ex, Hyper(epochs=1))


def test_invalid_hyperparameters():
    with pytest.raises(ValueError):
        Hyper(step_size=0)


def test_checkpoint_round_trip(tmp_path, small_data):
    corpus, labels = small_data
    m = randomized(RelevanceModel(VOCAB, SCHEMAS, seed=3), 3)
    path = tmp_path / "m.relnet"
    save_model(path, m, DOMAIN, {"note": 1})
    back, header = load_model(path, DOMAIN)
    assert header["extra"] == {"note": 1}
    graph = build_problem_graph(corpus[0][1].problem, VOCAB)
    probe = [parse_signature(r.signature) for r in labels[:30]
             if r.problem == corpus[0][0]["id"]]
    assert [model_score(m, graph, n) for n in probe] == [model_score(back, graph, n) for n in probe]
    with pytest.raises(CheckpointError):
        load_model(path, blocks_domain())
    path.write_bytes(b"nope")
    with pytest.raises(CheckpointError):
        load_model(path)


def test_model_scorer_in_a_solve(small_data):
    corpus, _ = small_data
    _, task = corpus[0]
    m = randomized(RelevanceModel(VOCAB, SCHEMAS), 5)
    out = X.solve_task(task, "informed", SolveConfig(timeout=30), ModelScorer(m))
    assert out.solved
    assert out.metrics["violations_child"] == 0 and out.metrics["violations_eval"] == 0
