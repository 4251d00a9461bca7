"""Sweep seeds and Gibbs restarts on the bundled synthetic corpus.

For every (restarts, seed) pair this runs topic-count selection over the
configured direction candidates, fits the chosen K and scores the dominant
topics against the planted directions in truth.csv. Purity here is the
majority-vote kind (each topic counts its most common direction), so merged
directions show up as a lower "directions hit" count rather than low purity.

    python3 scripts/topic_restart_sweep.py --seeds 5 --restarts 1 4
"""
from __future__ import annotations

import argparse
import csv
import dataclasses
import tempfile
import time
from collections import Counter, defaultdict
from pathlib import Path

from difftree import pipeline, topics
from difftree.corpus import read_jsonl
from difftree.errors import EmptyDocument


def load_docs(cfg):
    with tempfile.TemporaryDirectory() as tmp:
        pipeline.run_pipeline(dataclasses.replace(cfg, output_dir=Path(tmp)), ["parse"])
        with open(Path(tmp) / "corpus.jsonl", encoding="utf-8") as fh:
            corpus = read_jsonl(fh)
    stop = topics.load_stopwords(cfg.stopwords)
    vocab = topics.Vocabulary()
    docs = []
    for rec in corpus:
        try:
            docs.append(topics.preprocess(rec, stop, vocab))
        except EmptyDocument:
            pass
    return docs, len(vocab)


def score(model, truth):
    by_topic = defaultdict(Counter)
    for i, doc_id in enumerate(model.doc_ids):
        by_topic[topics.dominant_topic(model, i)][truth[doc_id]] += 1
    majority = {k: c.most_common(1)[0] for k, c in by_topic.items()}
    purity = sum(n for _, n in majority.values()) / len(model.doc_ids)
    return purity, len({d for d, _ in majority.values()})


def main(argv=None):
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--config", type=Path, default=pipeline.DATA_DIR / "synthetic" / "pipeline.ini")
    ap.add_argument("--seeds", type=int, default=5, help="number of seeds, starting at the config seed")
    ap.add_argument("--restarts", type=int, nargs="+", default=[1, 4])
    ap.add_argument("--iterations", type=int)
    args = ap.parse_args(argv)

    overrides = {"iterations": str(args.iterations)} if args.iterations else {}
    cfg = pipeline.load_config(args.config, overrides)
    with open(pipeline.DATA_DIR / "synthetic" / "truth.csv", encoding="utf-8") as fh:
        truth = {r["record_id"]: r["direction"] for r in csv.DictReader(fh)}
    docs, V = load_docs(cfg)
    n_dirs = len(set(truth.values()))
    print(f"{len(docs)} documents, vocabulary {V}, {n_dirs} planted directions")
    print(f"{'restarts':>8} {'seed':>6} {'K':>3} {'purity':>7} {'hit':>4} {'seconds':>8}")
    for restarts in args.restarts:
        for seed in range(cfg.seed, cfg.seed + args.seeds):
            start = time.perf_counter()
            K = topics.select_topic_count(docs, list(cfg.direction_k), cfg.selection_tolerance, seed,
                                          alpha=cfg.alpha, beta=cfg.beta, iterations=cfg.iterations,
                                          vocab_size=V, restarts=restarts)
            model = topics.fit_lda(docs, K, cfg.alpha, cfg.beta, cfg.iterations, seed, vocab_size=V,
                                   restarts=restarts)
            purity, hit = score(model, truth)
            print(f"{restarts:>8} {seed:>6} {K:>3} {purity:>7.3f} {hit:>4} {time.perf_counter() - start:>8.2f}")


if __name__ == "__main__":
    main()
