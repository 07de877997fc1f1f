#!/usr/bin/env python3
"""Evaluate trained facet models under graded relevance, then run the
label-scale ablation.

Evaluation refuses to report means until a train/benchmark leakage check
comes back clean (or is explicitly waived, which taints the report).
Run demos/03_train_facet_models.py first to produce the checkpoints.
"""

from pathlib import Path

from facetrank import BACKGROUND, METHOD
from facetrank.annotate import annotate_corpus
from facetrank.backbone import CompactBackbone
from facetrank.bench import MetricConfig, ablation_label_scale, evaluate_facet, fixture_benchmark
from facetrank.encoder import FacetModel, Vocabulary, WordTokenizer, load_checkpoint
from facetrank.synth import SynthConfig, SyntheticOracleClient, corpus_texts, generate_corpus
from facetrank.trainer import TrainConfig
from facetrank.triplets import split_by_seed

ARTIFACTS = Path(__file__).parent / "_artifacts"

corpus = generate_corpus(SynthConfig(n_docs=200, n_seeds=200, pool_size=12, rng_seed=7))
train_ids = {d.paper.paper_id for d in corpus.docs}

for facet, name in ((BACKGROUND, "bg"), (METHOD, "mt")):
    ckpt = ARTIFACTS / f"ckpt_{name}"
    if not ckpt.exists():
        raise SystemExit(f"missing {ckpt}; run demos/03_train_facet_models.py first")
    model = load_checkpoint(ckpt)
    queries = fixture_benchmark(facet).queries
    report = evaluate_facet(model, queries, MetricConfig(), train_paper_ids=train_ids)
    print(f"{facet}: NDCG%20 {report['means']['ndcg']:.4f}  MAP {report['means']['map']:.4f}  "
          f"leakage={report['leakage']['status']}  "
          f"({report['n_queries']} queries, {report['n_excluded']} metric exclusions)")

print("\n=== method label-scale ablation (raw 0-3 vs merged 0-2) ===")
labels = annotate_corpus(corpus.pools, SyntheticOracleClient(), clock=None).labels
papers = {d.paper.paper_id: d.paper for d in corpus.docs}
vocab = Vocabulary.build(corpus_texts(corpus))
tokenizer = WordTokenizer(vocab)
split = split_by_seed(sorted({lp.seed_id for lp in labels}), (0.7, 0.15, 0.15), 11)


def factory():
    backbone = CompactBackbone(vocab_size=len(vocab), max_len=80, d_ff=128, rng_seed=5)
    return FacetModel(facet=METHOD, backbone=backbone, tokenizer=tokenizer, max_tokens=80)


table = ablation_label_scale(
    labels, papers, split,
    TrainConfig(epochs=4, learning_rate=2e-3, rng_seed=13),
    fixture_benchmark(METHOD).queries, factory, train_paper_ids=train_ids,
)
for arm, row in table["arms"].items():
    print(f"  scale {arm}: NDCG%20 {row['ndcg']:.4f}, best val agreement {row['best_validation']:.3f}")
ref = table["fullscale_reference"]
print(f"  (full-scale reference row, non-gating: {ref['0-3']} vs {ref['0-2']} {ref['metric']})")
