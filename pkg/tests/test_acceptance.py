"""End-to-end acceptance checks, one test per criterion.

Each test records a PASS/FAIL line that the terminal summary prints. Corpora
and models are built in temporary directories; the learned models are shared
through module fixtures so the expensive training runs once.
"""
import filecmp
import time

import numpy as np
import pytest

from streamtamp import cli
from streamtamp import experiments as X
from streamtamp.oracles import check_levels, check_preimage, check_search
from streamtamp.planner import SolveConfig, UniformScorer, informed_solve
from streamtamp.relnet.graph import predicate_vocabulary
from streamtamp.relnet.model import RelevanceModel
from streamtamp.relnet.train import Hyper, gradient_check, make_examples
from streamtamp.tabletop.domain import tabletop_domain
from streamtamp.toy import generate_grid, grid_domain

pytestmark = pytest.mark.acceptance

TIMEOUT = 90.0
SEED = 0
DOMAIN = tabletop_domain()
VOCAB = predicate_vocabulary(DOMAIN)
SCHEMAS = X.schemas_of(DOMAIN)

# every informed run made by this module, for the score-ordering criterion
INFORMED: list = []


def verdict(verdicts, n: int, ok: bool, detail: str) -> None:
    line = f"{'PASS' if ok else 'FAIL'} criterion {n:2d}: {detail}"
    verdicts.append((n, line))
    print(line)
    assert ok, line


def _solve(manifest, method, scorer=None, model=None, timeout=TIMEOUT):
    recs = X.run_corpus(manifest, method, SolveConfig(timeout=timeout, seed=SEED), scorer, model)
    if method == "informed":
        INFORMED.extend(recs)
    return recs


def _rate(recs) -> float:
    return sum(r.status == "Solved" for r in recs) / max(len(recs), 1)


def _mean_time(recs) -> float:
    """Mean wall time with unsolved runs counted at their (capped) wall time."""
    return float(np.mean([r.wall_time for r in recs]))


def _trained(root, family, n_train, n_heldout):
    """Collect labels on a train corpus and a held-out corpus of the same
    distribution, fit a model with default settings and save it."""
    start = time.perf_counter()
    m_tr = X.write_corpus(root / "train", X.corpus_specs(family, "train", n_train, 1))
    m_ho = X.write_corpus(root / "heldout", X.corpus_specs(family, "train", n_heldout, 2))
    c_tr, c_ho = X.load_corpus(m_tr), X.load_corpus(m_ho)
    cfg = SolveConfig(timeout=30, seed=SEED)
    labels, summary = X.collect(c_tr, cfg)
    held, _ = X.collect(c_ho, cfg)
    model, curve, extra = X.fit(labels, c_tr, Hyper(), model_seed=SEED)
    path = root / "model.relnet"
    X.save_training(path, model, extra)
    return dict(path=path, labels=labels, solved=sum(s["status"] == "Solved" for s in summary),
                curve=curve, heldout=X.evaluate(model, held, c_ho), seconds=time.perf_counter() - start)


@pytest.fixture(scope="module")
def stacking_model(tmp_path_factory):
    return _trained(tmp_path_factory.mktemp("stacking"), "stacking", 40, 20)


@pytest.fixture(scope="module")
def clutter_model(tmp_path_factory):
    return _trained(tmp_path_factory.mktemp("clutter"), "clutter", 40, 15)


# ------------------------------------------------------------------ oracles

def test_criterion_01_levels(verdicts):
    r = check_levels(200, SEED, limit=1.0)
    verdict(verdicts, 1, r.passed, r.line().split(' ', 1)[1])


def test_criterion_02_preimage(verdicts):
    r = check_preimage(500, SEED, limit=5.0)
    verdict(verdicts, 2, r.passed, r.line().split(' ', 1)[1])


def test_criterion_03_search(verdicts):
    r = check_search(100, SEED, limit=60.0)
    verdict(verdicts, 3, r.passed, r.line().split(' ', 1)[1])


# ------------------------------------------------------------------ planner

def test_criterion_05_semi_completeness(verdicts):
    domain = grid_domain()
    cfg = SolveConfig(timeout=TIMEOUT, seed=SEED)
    start = time.perf_counter()
    solved = exhausted = 0
    for seed in range(50):
        g = generate_grid(seed, items=1 + seed % 2)
        out = informed_solve(domain, g.problem, UniformScorer(), cfg, g.samplers)
        INFORMED.append(out.metrics)
        solved += out.status == "Solved"
    for seed in range(20):
        g = generate_grid(1000 + seed, solvable=False)
        out = informed_solve(domain, g.problem, UniformScorer(), cfg, g.samplers)
        INFORMED.append(out.metrics)
        exhausted += out.status == "Exhausted"
    took = time.perf_counter() - start
    verdict(verdicts, 5, solved == 50 and exhausted == 20,
            f"uniform solved {solved}/50 solvable, exhausted {exhausted}/20 unsolvable in {took:.1f}s")


# ------------------------------------------------------------------ learning

def test_criterion_06_gradients(verdicts, tmp_path):
    m = X.write_corpus(tmp_path, X.corpus_specs("stacking", "train", 1, 5, blocks=2))
    corpus = X.load_corpus(m)
    labels, _ = X.collect(corpus, SolveConfig(timeout=30))
    ex = make_examples(labels, X.graphs_for(corpus, VOCAB), SCHEMAS, max_negatives=20)[0]
    start = time.perf_counter()
    worst, nonzero = 0.0, 0
    for seed in range(10):
        model = RelevanceModel(VOCAB, SCHEMAS, seed=seed)
        rng = np.random.default_rng(seed)
        # fresh models have zero output layers; larger scales saturate every sigmoid
        for k in model.names():
            model.params[k] = rng.normal(0.0, 0.1, size=model.params[k].shape)
        err, nz = gradient_check(model, ex, h=1e-5, coords=100, seed=seed)
        worst, nonzero = max(worst, err), nonzero + nz
    took = time.perf_counter() - start
    verdict(verdicts, 6, worst < 1e-4 and nonzero >= 500 and took < 30,
            f"max relative gradient error {worst:.2e} over 10 models x 100 coordinates "
            f"({nonzero} nonzero) in {took:.1f}s (limit 30s)")


def test_criterion_07_learning(verdicts, stacking_model):
    s = stacking_model
    f1, curve = s["heldout"]["f1"], s["curve"]
    ok = len(s["labels"]) >= 100 and f1 >= 0.8 and curve[-1] < curve[0] and s["seconds"] < 600
    verdict(verdicts, 7, ok,
            f"{len(s['labels'])} labels from {s['solved']} solved problems; held-out F1 {f1:.3f}; "
            f"loss {curve[0]:.4f} -> {curve[-1]:.4f}; {s['seconds']:.0f}s (limit 600s)")


# ------------------------------------------------------------------ trends

def test_criterion_08_distractors(verdicts, clutter_model, tmp_path):
    start = time.perf_counter()
    rows, ok = [], True
    base_50 = model_50 = None
    for n in (10, 20, 30, 40, 50):
        m = X.write_corpus(tmp_path / f"d{n}", X.corpus_specs("distractors", "test", 10, 3, blockers=n))
        base = _solve(m, "adaptive")
        ours = _solve(m, "informed", "model", clutter_model["path"])
        ok &= _rate(ours) >= _rate(base)
        rows.append(f"{n}: {_rate(base):.1f}/{_rate(ours):.1f}")
        if n == 50:
            base_50, model_50 = _mean_time(base), _mean_time(ours)
    took = time.perf_counter() - start
    ok &= model_50 <= 0.5 * base_50 and took < 7200
    verdict(verdicts, 8, ok,
            f"at 50 distractors model {model_50:.3f}s vs adaptive {base_50:.3f}s "
            f"(ratio {model_50 / base_50:.2f}, limit 0.5); solve rates adaptive/model {', '.join(rows)}; "
            f"{took:.0f}s")


def test_criterion_09_stacking_heights(verdicts, stacking_model, tmp_path):
    rows, ok = [], True
    for h in (5, 6):
        m = X.write_corpus(tmp_path / f"h{h}", X.corpus_specs("stacking", "test", 10, 3, blocks=h))
        base = _solve(m, "adaptive")
        ours = _solve(m, "informed", "model", stacking_model["path"])
        ok &= _rate(ours) > _rate(base)
        rows.append(f"height {h}: adaptive {_rate(base):.0%}, model {_rate(ours):.0%}")
    verdict(verdicts, 9, ok, "; ".join(rows))


def test_criterion_10_phase_times(verdicts, tmp_path):
    means, recs = [], []
    for h in (2, 3, 4):
        m = X.write_corpus(tmp_path / f"h{h}", X.corpus_specs("stacking", "train", 10, 4, blocks=h))
        run = _solve(m, "adaptive")
        recs += run
        means.append(float(np.mean([r.time_search for r in run])))
    recs += [r for r in INFORMED if isinstance(r, X.RunRecord)]
    recorded = all(r.wall_time > 0 and min(getattr(r, f) for f in X.TIMING) >= 0
                   and sum(getattr(r, f) for f in X.TIMING[1:]) <= r.wall_time + 1e-6 for r in recs)
    rising = means[0] < means[1] < means[2]
    verdict(verdicts, 10, recorded and rising,
            f"phase times present on {len(recs)} solves; baseline mean search time by height 2/3/4: "
            + " < ".join(f"{v:.3f}s" for v in means))


def _pipeline(root):
    c, t = str(root / "train"), str(root / "test")
    assert cli.main(["generate", "--task", "stacking", "--count", "4", "--blocks", "2", "--seed", "11",
                     "--out", c]) == 0
    assert cli.main(["generate", "--task", "stacking", "--split", "test", "--count", "3", "--blocks", "3",
                     "--seed", "11", "--out", t]) == 0
    labels, ck = str(root / "labels.jsonl"), str(root / "model.relnet")
    assert cli.main(["collect", "--manifest", c + "/manifest.json", "--out", labels]) == 0
    assert cli.main(["train", "--labels", labels, "--manifest", c + "/manifest.json", "--out", ck,
                     "--epochs", "10"]) == 0
    runs = []
    for method, scorer in (("adaptive", "model"), ("informed", "model"), ("informed", "uniform")):
        out = str(root / f"runs-{method}-{scorer}.csv")
        assert cli.main(["solve", "--manifest", t + "/manifest.json", "--method", method, "--scorer", scorer,
                         "--model", ck, "--out", out]) == 0
        runs.append(out)
    assert cli.main(["report", "--runs", *runs, "--out", str(root / "report")]) == 0
    return root / "report"


def test_criterion_11_reproducibility(verdicts, tmp_path, capsys):
    a, b = _pipeline(tmp_path / "a"), _pipeline(tmp_path / "b")
    capsys.readouterr()
    names = sorted(p.name for p in a.glob("*.csv"))
    _, mismatch, errors = filecmp.cmpfiles(a, b, names, shallow=False)
    verdict(verdicts, 11, bool(names) and not mismatch and not errors,
            f"{len(names) - len(mismatch) - len(errors)}/{len(names)} report CSVs byte-identical "
            f"({', '.join(names)})")


# ------------------------------------------------------------------ ordering, last

def test_criterion_04_score_ordering(verdicts, stacking_model, tmp_path):
    """Sweeps each test family once more with the composing scorers, then
    checks every informed run this module made."""
    for family in ("stacking", "sorting", "clutter", "nonmonotonic"):
        m = X.write_corpus(tmp_path / family, X.corpus_specs(family, "test", 3, 5))
        for scorer in ("model", "stats", "uniform"):
            _solve(m, "informed", scorer, stacking_model["path"], timeout=30)
    child = sum(r.violations_child if isinstance(r, X.RunRecord) else r["violations_child"] for r in INFORMED)
    evals = sum(r.violations_eval if isinstance(r, X.RunRecord) else r["violations_eval"] for r in INFORMED)
    verdict(verdicts, 4, child == 0 and evals == 0 and len(INFORMED) > 0,
            f"{child} child-not-below-parent and {evals} no-decrease-on-evaluation violations over {len(INFORMED)} informed solves")
