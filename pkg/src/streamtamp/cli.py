"""Command-line harness: generate, solve, collect, train, report and check."""
from __future__ import annotations

import argparse
import json
import logging
import sys
from pathlib import Path

from . import experiments as X
from .planner import SolveConfig
from .relnet.labels import write_dataset
from .relnet.train import EmptyDataset, Hyper
from .tabletop.generators import FAMILIES

log = logging.getLogger("streamtamp")


def _solver_flags(p: argparse.ArgumentParser) -> None:
    d = SolveConfig()
    p.add_argument("--k", type=int, default=d.k, help="new facts between planning calls")
    p.add_argument("--timeout", type=float, default=d.timeout, help="per-problem wall-clock limit (s)")
    p.add_argument("--gamma", type=float, default=d.gamma, help="per-evaluation score decay in (0, 1)")
    p.add_argument("--sampling-budget", type=float, default=d.sampling_budget,
                   help="seconds of sampling per pass while a stream plan is pending")
    p.add_argument("--search-nodes", type=int, default=d.search_nodes, help="expansions per planning call")
    p.add_argument("--seed", type=int, default=d.seed, help="master seed for sampling")
    p.add_argument("--workers", type=int, default=1, help="problems solved in parallel")


def _config(args) -> SolveConfig:
    return SolveConfig(k=args.k, timeout=args.timeout, gamma=args.gamma, sampling_budget=args.sampling_budget,
                       search_nodes=args.search_nodes, seed=args.seed)


def build_parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(prog="streamtamp", description=__doc__)
    ap.add_argument("-v", "--verbose", action="store_true")
    sub = ap.add_subparsers(dest="command", required=True)

    g = sub.add_parser("generate", help="write a problem corpus and its manifest")
    g.add_argument("--task", choices=FAMILIES, required=True)
    g.add_argument("--split", choices=("train", "test"), default="train")
    g.add_argument("--count", type=int, required=True)
    g.add_argument("--seed", type=int, default=0, help="master seed")
    g.add_argument("--blocks", type=int, help="fixed block count instead of the split range")
    g.add_argument("--blockers", type=int, help="fixed blocker/distractor count")
    g.add_argument("--out", required=True, help="output directory")

    s = sub.add_parser("solve", help="solve every problem of a manifest and write run records")
    s.add_argument("--manifest", required=True)
    s.add_argument("--method", choices=("adaptive", "informed"), default="informed")
    s.add_argument("--scorer", choices=X.SCORERS, default="model")
    s.add_argument("--model", help="checkpoint for the model, stats and pg scorers")
    s.add_argument("--out", required=True, help="runs CSV")
    _solver_flags(s)

    c = sub.add_parser("collect", help="run the baseline and write labeled stream instances")
    c.add_argument("--manifest", required=True)
    c.add_argument("--out", required=True, help="labels file (JSON lines)")
    c.add_argument("--append", action="store_true", help="merge into an existing file, dropping duplicates")
    _solver_flags(c)

    t = sub.add_parser("train", help="train the relevance model")
    t.add_argument("--labels", nargs="+", required=True)
    t.add_argument("--manifest", nargs="+", required=True, help="corpora the labels were collected on")
    t.add_argument("--out", required=True, help="checkpoint path; the loss curve goes next to it")
    t.add_argument("--multi-task", action="store_true", help="allow labels from several task families")
    h = Hyper()
    t.add_argument("--epochs", type=int, default=h.epochs)
    t.add_argument("--step-size", type=float, default=h.step_size)
    t.add_argument("--positive-weight", type=float, default=h.positive_weight)
    t.add_argument("--batch", type=int, default=h.batch)
    t.add_argument("--max-negatives", type=int, default=h.max_negatives)
    t.add_argument("--seed", type=int, default=0)
    t.add_argument("--heldout-labels", nargs="*", default=(), help="labels to evaluate after training")
    t.add_argument("--heldout-manifest", nargs="*", default=())

    r = sub.add_parser("report", help="summarize run records into CSV tables")
    r.add_argument("--runs", nargs="*", default=(), help="runs CSVs")
    r.add_argument("--out", required=True, help="report directory")

    k = sub.add_parser("check", help="run the level, preimage and search oracles")
    k.add_argument("--seed", type=int, default=0)
    return ap


def cmd_generate(args) -> int:
    specs = X.corpus_specs(args.task, args.split, args.count, args.seed, args.blocks, args.blockers)
    manifest = X.write_corpus(args.out, specs)
    print(f"wrote {len(specs)} problems to {manifest}")
    return 0


def cmd_solve(args) -> int:
    if args.method == "informed" and args.scorer in X.LEARNED and not args.model:
        print(f"error: --scorer {args.scorer} needs --model", file=sys.stderr)
        return 2
    records = X.run_corpus(args.manifest, args.method, _config(args),
                           args.scorer if args.method == "informed" else None,
                           args.model, args.workers)
    X.write_runs(args.out, records)
    solved = sum(r.status == "Solved" for r in records)
    print(f"{solved}/{len(records)} solved; records in {args.out}")
    return 0


def cmd_collect(args) -> int:
    corpus = X.load_corpus(args.manifest)
    records, summary = X.collect(corpus, _config(args))
    out = Path(args.out)
    before = []
    if args.append and out.exists():
        before = X.read_labels([out])
    merged = X.merge_labels(before, records)
    write_dataset(out, merged)
    pos = sum(s["positives"] for s in summary)
    neg = sum(s["negatives"] for s in summary)
    print(f"{sum(s['status'] == 'Solved' for s in summary)}/{len(summary)} solved; "
          f"{pos} positives, {neg} negatives; {len(merged) - len(before)} new records in {out}")
    return 0


def _corpora(manifests) -> list:
    out = []
    for m in manifests:
        out.extend(X.load_corpus(m))
    return out


def cmd_train(args) -> int:
    records = X.read_labels(args.labels)
    corpus = _corpora(args.manifest)
    used = {e["task"] for e, _ in corpus if e["id"] in {r.problem for r in records}}
    if len(used) > 1 and not args.multi_task:
        print(f"error: labels span several tasks {sorted(used)}; pass --multi-task", file=sys.stderr)
        return 2
    hyper = Hyper(epochs=args.epochs, step_size=args.step_size, positive_weight=args.positive_weight,
                  batch=args.batch, seed=args.seed, max_negatives=args.max_negatives)
    try:
        model, curve, extra = X.fit(records, corpus, hyper, model_seed=args.seed)
    except EmptyDataset as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    X.save_training(args.out, model, extra)
    print(f"loss {curve[0]:.4f} -> {curve[-1]:.4f} over {len(curve)} epochs; checkpoint {args.out}")
    if args.heldout_labels:
        report = X.evaluate(model, X.read_labels(args.heldout_labels), _corpora(args.heldout_manifest))
        print(json.dumps(report, sort_keys=True))
    return 0


def cmd_report(args) -> int:
    records = []
    for p in args.runs:
        records.extend(X.read_runs(p))
    paths = X.write_report(args.out, records)
    print((Path(args.out) / "timing" / "table.txt").read_text(), end="")
    print("tables: " + ", ".join(str(p) for p in paths.values()))
    return 0


def cmd_check(args) -> int:
    from .oracles import check_all
    results = check_all(args.seed)
    for r in results:
        print(r.line())
    return 0 if all(r.passed for r in results) else 1


COMMANDS = {"generate": cmd_generate, "solve": cmd_solve, "collect": cmd_collect, "train": cmd_train,
            "report": cmd_report, "check": cmd_check}


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        return COMMANDS[args.command](args)
    except (ValueError, OSError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
