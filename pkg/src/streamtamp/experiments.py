"""Corpus generation, solver runs, label collection, training and reports.

Everything here is deterministic given its seeds except wall-clock timings,
which are kept in separate files so that the summary outputs can be compared
byte for byte across runs.
"""
from __future__ import annotations

import csv
import hashlib
import io
import json
import logging
import math
import os
import platform
import zlib
from dataclasses import asdict, dataclass, fields
from multiprocessing import get_context
from pathlib import Path
from typing import Iterable, Optional

import numpy as np

from .language import parse_problem, serialize_domain, serialize_problem
from .planner import LevelScorer, SolveConfig, StatsScorer, UniformScorer, adaptive_solve, informed_solve
from .relnet.checkpoint import load_model, save_model
from .relnet.graph import build_problem_graph, predicate_vocabulary
from .relnet.labels import class_counts, label_instances, read_dataset
from .relnet.model import RelevanceModel
from .relnet.scorers import ModelScorer, PGScorer, object_labels, schema_frequencies
from .relnet.train import Hyper, classification_report, make_examples, train, train_objects
from .tabletop.domain import tabletop_domain
from .tabletop.generators import GeneratorSpec, Scene, TabletopTask, generate_problem

log = logging.getLogger(__name__)

CSV_VERSION = "streamtamp-csv/1"
MANIFEST_VERSION = 1
SCORERS = ("model", "level", "stats", "pg", "uniform")
LEARNED = ("model", "stats", "pg")


# ---------------------------------------------------------------- corpora

def problem_seed(master: int, task: str, split: str, index: int) -> int:
    return zlib.crc32(f"{master}:{task}:{split}:{index}".encode())


def corpus_specs(task: str, split: str, count: int, seed: int, blocks: Optional[int] = None,
                 blockers: Optional[int] = None) -> list:
    return [GeneratorSpec(task, problem_seed(seed, task, split, i), split, blocks, blockers)
            for i in range(count)]


def write_corpus(out_dir, specs: Iterable[GeneratorSpec]) -> Path:
    """Generates each spec and writes the domain, problem and scene files plus a manifest."""
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    (out / "tabletop.domain.sexp").write_text(serialize_domain(tabletop_domain()))
    entries = []
    for spec in specs:
        task = generate_problem(spec)
        pid = task.problem.name
        (out / f"{pid}.problem.sexp").write_text(serialize_problem(task.problem))
        (out / f"{pid}.scene.json").write_text(task.scene.to_json() + "\n")
        entries.append({"id": pid, "task": spec.task, "split": spec.split, "seed": spec.seed,
                        "blocks": spec.blocks, "blockers": spec.blockers,
                        "n_blocks": sum(1 for b in task.scene.bodies.values() if b.kind == "block"),
                        "n_blockers": len(task.distractors),
                        "problem": f"{pid}.problem.sexp", "scene": f"{pid}.scene.json"})
    manifest = out / "manifest.json"
    manifest.write_text(json.dumps({"version": MANIFEST_VERSION, "domain": "tabletop.domain.sexp",
                                    "problems": entries}, indent=1, sort_keys=True) + "\n")
    return manifest


def read_manifest(path) -> list:
    data = json.loads(Path(path).read_text())
    if data.get("version") != MANIFEST_VERSION:
        raise ValueError(f"unsupported manifest version {data.get('version')}")
    return data["problems"]


def load_task(manifest_dir, entry: dict) -> TabletopTask:
    base = Path(manifest_dir)
    problem = parse_problem((base / entry["problem"]).read_text(), tabletop_domain())
    scene = Scene.from_json((base / entry["scene"]).read_text())
    spec = GeneratorSpec(entry["task"], entry["seed"], entry["split"], entry["blocks"], entry["blockers"])
    return TabletopTask(spec, problem, scene)


def load_corpus(manifest) -> list:
    """(entry, task) pairs in manifest order."""
    base = Path(manifest).parent
    return [(e, load_task(base, e)) for e in read_manifest(manifest)]


# ---------------------------------------------------------------- solving

@dataclass
class RunRecord:
    problem: str
    task: str
    blocks: int
    blockers: int
    method: str
    status: str
    plan_length: int
    instances: int
    evaluations: int
    plans_attempted: int
    facts_added: int
    violations_child: int
    violations_eval: int
    level_bound_violations: int
    seed: int
    config_hash: str
    wall_time: float = 0.0
    time_expansion: float = 0.0
    time_search: float = 0.0
    time_sampling: float = 0.0
    time_inference: float = 0.0


TIMING = ("wall_time", "time_expansion", "time_search", "time_sampling", "time_inference")
RECORD_FIELDS = tuple(f.name for f in fields(RunRecord))
SUMMARY_FIELDS = tuple(f for f in RECORD_FIELDS if f not in TIMING)
TIMING_FIELDS = ("problem", "method", "status") + TIMING


def file_hash(path) -> str:
    return hashlib.sha256(Path(path).read_bytes()).hexdigest()[:16]


def config_hash(config: SolveConfig, method: str, model_hash: str = "") -> str:
    blob = json.dumps({"config": config.as_dict(), "method": method, "model": model_hash}, sort_keys=True)
    return hashlib.sha256(blob.encode()).hexdigest()[:12]


def method_name(method: str, scorer: Optional[str]) -> str:
    return "adaptive" if method == "adaptive" else f"informed+{scorer}"


def make_scorer(name: str, model: Optional[RelevanceModel] = None, frequencies: Optional[dict] = None):
    if name == "uniform":
        return UniformScorer()
    if name == "level":
        return LevelScorer()
    if name == "stats":
        if frequencies is None:
            raise ValueError("the stats scorer needs a checkpoint with schema frequencies")
        return StatsScorer(frequencies)
    if name in ("model", "pg"):
        if model is None:
            raise ValueError(f"the {name} scorer needs a model checkpoint")
        return ModelScorer(model) if name == "model" else PGScorer(model)
    raise ValueError(f"unknown scorer {name!r}")


def solve_task(task: TabletopTask, method: str, config: SolveConfig, scorer=None):
    kw = dict(samplers=task.samplers(), verifier=task.verifier(), payloads=task.payloads())
    if method == "adaptive":
        return adaptive_solve(task.domain, task.problem, config, **kw)
    if method == "informed":
        return informed_solve(task.domain, task.problem, scorer, config, **kw)
    raise ValueError(f"unknown method {method!r}")


def _record(entry: dict, method: str, outcome, config: SolveConfig, chash: str) -> RunRecord:
    m = outcome.metrics
    return RunRecord(
        problem=entry["id"], task=entry["task"], blocks=entry["n_blocks"], blockers=entry["n_blockers"],
        method=method, status=outcome.status,
        plan_length=m["plan_length"] if m.get("plan_length") is not None else -1,
        instances=m["instances"], evaluations=m["evaluations"], plans_attempted=m["plans_attempted"],
        facts_added=m["facts_added"], violations_child=m["violations_child"],
        violations_eval=m["violations_eval"], level_bound_violations=m["level_bound_violations"],
        seed=config.seed, config_hash=chash, wall_time=m["wall_time"],
        time_expansion=m["time_expansion"], time_search=m["time_search"],
        time_sampling=m["time_sampling"], time_inference=m["time_inference"])


@dataclass
class SolveJob:
    manifest_dir: str
    entry: dict
    method: str
    scorer: Optional[str]
    config: dict
    model_path: Optional[str] = None


_MODEL_CACHE: dict = {}


def _load_cached(path):
    if path not in _MODEL_CACHE:
        _MODEL_CACHE[path] = load_model(path, tabletop_domain())
    return _MODEL_CACHE[path]


def run_job(job: SolveJob) -> RunRecord:
    task = load_task(job.manifest_dir, job.entry)
    config = SolveConfig(**job.config)
    scorer = None
    mhash = ""
    if job.method == "informed":
        model = freqs = None
        if job.scorer in LEARNED:
            model, header = _load_cached(job.model_path)
            freqs = header["extra"].get("frequencies")
            mhash = file_hash(job.model_path)
        scorer = make_scorer(job.scorer, model, freqs)
    name = method_name(job.method, job.scorer)
    outcome = solve_task(task, job.method, config, scorer)
    return _record(job.entry, name, outcome, config, config_hash(config, name, mhash))


def run_corpus(manifest, method: str, config: SolveConfig, scorer: Optional[str] = None,
               model_path: Optional[str] = None, workers: int = 1) -> list:
    """One RunRecord per manifest problem, in manifest order."""
    if method == "informed" and scorer is None:
        raise ValueError("informed runs need a scorer")
    if method == "informed" and scorer in LEARNED:
        if model_path is None:
            raise ValueError(f"the {scorer} scorer needs --model")
        _load_cached(str(model_path))
    base = str(Path(manifest).parent)
    jobs = [SolveJob(base, e, method, scorer, config.as_dict(), None if model_path is None else str(model_path))
            for e in read_manifest(manifest)]
    if workers <= 1 or len(jobs) <= 1:
        return [run_job(j) for j in jobs]
    with get_context("spawn").Pool(workers) as pool:
        # imap keeps manifest order, so the parent is the single writer
        return list(pool.imap(run_job, jobs))


# ---------------------------------------------------------------- CSV

def _write_csv(path, header: tuple, rows: Iterable[dict]) -> None:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(["#version", CSV_VERSION])
    w.writerow(header)
    for r in rows:
        w.writerow([_fmt(r[h]) for h in header])
    Path(path).write_text(buf.getvalue())


def _fmt(v) -> str:
    if isinstance(v, float):
        return "nan" if math.isnan(v) else f"{v:.6f}"
    return "" if v is None else str(v)


def _read_csv(path) -> tuple:
    with open(path, newline="") as fh:
        rows = list(csv.reader(fh))
    if not rows or rows[0][:2] != ["#version", CSV_VERSION]:
        raise ValueError(f"{path}: missing or unsupported CSV version row")
    if len(rows) < 2:
        raise ValueError(f"{path}: missing header row")
    return rows[1], [dict(zip(rows[1], r)) for r in rows[2:]]


def write_runs(path, records: list) -> None:
    _write_csv(path, RECORD_FIELDS, (asdict(r) for r in records))


def read_runs(path) -> list:
    header, rows = _read_csv(path)
    if tuple(header) != RECORD_FIELDS:
        raise ValueError(f"{path}: run schema mismatch")
    out = []
    for row in rows:
        kw = {}
        for f in fields(RunRecord):
            v = row[f.name]
            kw[f.name] = float(v) if f.type in ("float", float) else int(v) if f.type in ("int", int) else v
        out.append(RunRecord(**kw))
    return out


# ---------------------------------------------------------------- collection

def collect(corpus: list, config: SolveConfig) -> tuple:
    """Runs the baseline on (entry, task) pairs; returns (labels, per-problem summary)."""
    records, summary = [], []
    for entry, task in corpus:
        out = solve_task(task, "adaptive", config)
        if not out.solved:
            summary.append({"problem": entry["id"], "status": out.status, "positives": 0, "negatives": 0})
            continue
        labels = label_instances(entry["id"], out.plan, out.registry)
        pos = sum(r.label for r in labels)
        summary.append({"problem": entry["id"], "status": out.status, "positives": pos,
                        "negatives": len(labels) - pos})
        records.extend(labels)
    return records, summary


def merge_labels(old: list, new: list) -> list:
    """Union keyed by (problem, signature); the first occurrence wins."""
    out = {}
    for r in list(old) + list(new):
        out.setdefault((r.problem, r.signature), r)
    return [out[k] for k in sorted(out)]


# ---------------------------------------------------------------- training

def schemas_of(domain) -> dict:
    return {s.name: (len(s.inputs), len(s.outputs)) for s in domain.streams}


def graphs_for(corpus: list, vocab: tuple) -> dict:
    return {e["id"]: build_problem_graph(t.problem, vocab) for e, t in corpus}


def fit(records: list, corpus: list, hyper: Hyper, model_seed: int = 0) -> tuple:
    """Trains the relevance model and the object head. Returns (model, curve, extra)."""
    domain = tabletop_domain()
    vocab = predicate_vocabulary(domain)
    schemas = schemas_of(domain)
    wanted = {r.problem for r in records}
    graphs = graphs_for([(e, t) for e, t in corpus if e["id"] in wanted], vocab)
    missing = wanted - set(graphs)
    if missing:
        raise ValueError(f"labels refer to problems outside the corpus: {sorted(missing)[:3]}")
    examples = make_examples(records, graphs, schemas, hyper.max_negatives, hyper.seed)
    model, curve = train(RelevanceModel(vocab, schemas, seed=model_seed), examples, hyper)
    obj = object_labels(records)
    obj_examples = []
    for pid in sorted(graphs):
        g = graphs[pid]
        obj_examples.append((g, np.array([float(n in obj.get(pid, ())) for n in g.names])))
    model, obj_curve = train_objects(model, obj_examples, Hyper(epochs=min(hyper.epochs, 100),
                                                                  step_size=hyper.step_size,
                                                                  positive_weight=hyper.positive_weight,
                                                                  seed=hyper.seed))
    extra = {"frequencies": schema_frequencies(records), "loss_curve": curve,
             "object_curve": obj_curve, "counts": class_counts(records), "hyper": asdict(hyper)}
    return model, curve, extra


def evaluate(model: RelevanceModel, records: list, corpus: list) -> dict:
    domain = tabletop_domain()
    vocab = predicate_vocabulary(domain)
    wanted = {r.problem for r in records}
    graphs = graphs_for([(e, t) for e, t in corpus if e["id"] in wanted], vocab)
    return classification_report(model, make_examples(records, graphs, schemas_of(domain)))


def save_training(out_path, model: RelevanceModel, extra: dict) -> None:
    save_model(out_path, model, tabletop_domain(), extra)
    curve_path = Path(str(out_path) + ".loss.csv")
    _write_csv(curve_path, ("epoch", "loss"), ({"epoch": i, "loss": v} for i, v in enumerate(extra["loss_curve"])))


def read_labels(paths) -> list:
    out = []
    for p in paths:
        out.extend(read_dataset(p))
    return merge_labels([], out)


# ---------------------------------------------------------------- reports

def _mean(vals) -> float:
    vals = list(vals)
    return float(np.mean(vals)) if vals else float("nan")


def summarize(records: list, time_grid: Iterable[float] = (1, 2, 5, 10, 30, 60, 90)) -> dict:
    """Report tables. 'summary' holds only deterministic columns; the others depend on timing."""
    groups: dict = {}
    for r in records:
        groups.setdefault((r.method, r.task, r.blocks, r.blockers), []).append(r)
    summary, timing, phases = [], [], []
    for key in sorted(groups):
        rs = groups[key]
        solved = [r for r in rs if r.status == "Solved"]
        method, task, blocks, blockers = key
        base = {"method": method, "task": task, "blocks": blocks, "blockers": blockers, "problems": len(rs)}
        summary.append(dict(base, solved=len(solved), solve_rate=len(solved) / len(rs),
                            timeouts=sum(r.status == "Timeout" for r in rs),
                            exhausted=sum(r.status == "Exhausted" for r in rs),
                            mean_plan_length=_mean(r.plan_length for r in solved),
                            mean_instances=_mean(r.instances for r in rs),
                            violations=sum(r.violations_child + r.violations_eval for r in rs)))
        timing.append(dict(base, solved=len(solved), mean_time_solved=_mean(r.wall_time for r in solved),
                           mean_time_all=_mean(r.wall_time for r in rs)))
        phases.append(dict(base, **{f"mean_{k}": _mean(getattr(r, k) for r in solved) for k in TIMING}))
    curves = []
    by_method: dict = {}
    for r in records:
        by_method.setdefault((r.method, r.task), []).append(r)
    for key in sorted(by_method):
        rs = by_method[key]
        for t in time_grid:
            rate = sum(r.status == "Solved" and r.wall_time <= t for r in rs) / len(rs)
            curves.append({"method": key[0], "task": key[1], "time": float(t), "solve_rate": rate})
    return {"summary": summary, "timing": timing, "phases": phases, "curves": curves}


REPORT_HEADERS = {
    "summary": ("method", "task", "blocks", "blockers", "problems", "solved", "solve_rate", "timeouts",
                "exhausted", "mean_plan_length", "mean_instances", "violations"),
    "timing": ("method", "task", "blocks", "blockers", "problems", "solved", "mean_time_solved", "mean_time_all"),
    "phases": ("method", "task", "blocks", "blockers", "problems") + tuple(f"mean_{k}" for k in TIMING),
    "curves": ("method", "task", "time", "solve_rate"),
}


TIMED_TABLES = ("timing", "phases", "curves")


def write_report(out_dir, records: list) -> dict:
    """summary.csv is a pure function of the records' deterministic fields; the
    wall-clock tables go under timing/ so the top level can be compared byte for byte."""
    out = Path(out_dir)
    (out / "timing").mkdir(parents=True, exist_ok=True)
    tables = summarize(records)
    paths = {}
    for name, rows in tables.items():
        paths[name] = (out / "timing" if name in TIMED_TABLES else out) / f"{name}.csv"
        _write_csv(paths[name], REPORT_HEADERS[name], rows)
    (out / "timing" / "host.json").write_text(json.dumps(host_info(), indent=1, sort_keys=True) + "\n")
    (out / "timing" / "table.txt").write_text(text_table(tables["summary"], tables["timing"]))
    return paths


def text_table(summary: list, timing: list) -> str:
    head = ("method", "task", "blocks", "blockers", "solved", "time")
    rows = [head]
    for s, t in zip(summary, timing):
        mt = t["mean_time_solved"]
        rows.append((s["method"], s["task"], str(s["blocks"]), str(s["blockers"]),
                     f"{s['solved']}/{s['problems']}", "-" if math.isnan(mt) else f"{mt:.2f}"))
    widths = [max(len(r[i]) for r in rows) for i in range(len(head))]
    return "".join("  ".join(c.ljust(w) for c, w in zip(r, widths)).rstrip() + "\n" for r in rows)


def host_info() -> dict:
    return {"python": platform.python_version(), "machine": platform.machine(),
            "processor": platform.processor(), "cpus": os.cpu_count(), "numpy": np.__version__}
