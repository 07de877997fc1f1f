#!/usr/bin/env python3
"""Train the two compact cross-encoders end to end on a synthetic corpus.

Covers the full supervision path: labels -> per-facet triplets (method
grades merged onto the 0-2 scale) -> seed-level split -> margin-rank
training with warmup/decay, AdamW, and gradient clipping -> checkpoint
selection by validation rank agreement. Writes checkpoints other demos load.

Takes a couple of minutes on a laptop CPU; shrink n_docs for a faster pass.
"""

from pathlib import Path

from facetrank import BACKGROUND, METHOD
from facetrank.annotate import annotate_corpus
from facetrank.backbone import CompactBackbone
from facetrank.encoder import FacetModel, Vocabulary, WordTokenizer, save_checkpoint
from facetrank.synth import SynthConfig, SyntheticOracleClient, corpus_texts, generate_corpus
from facetrank.trainer import TrainConfig, select_best_checkpoint, train, validation_agreement_from_pools
from facetrank.triplets import build_triplets, eval_pools_from_labels, split_by_seed

OUT = Path(__file__).parent / "_artifacts"

corpus = generate_corpus(SynthConfig(n_docs=200, n_seeds=200, pool_size=12, rng_seed=7))
labels = annotate_corpus(corpus.pools, SyntheticOracleClient(), clock=None).labels
papers = {d.paper.paper_id: d.paper for d in corpus.docs}
vocab = Vocabulary.build(corpus_texts(corpus))
tokenizer = WordTokenizer(vocab)
split = split_by_seed([p.seed.paper_id for p in corpus.pools], (0.7, 0.15, 0.15), rng_seed=11)
print(f"{len(labels)} labeled pairs; vocabulary of {len(vocab)} tokens; "
      f"{len(split.seeds('train'))}/{len(split.seeds('val'))}/{len(split.seeds('test'))} seed split")

cfg = TrainConfig(margin=0.5, batch_size=16, epochs=10, per_seed_cap=10,
                  grad_clip_norm=1.0, learning_rate=2e-3, rng_seed=13)

for facet in (BACKGROUND, METHOD):
    triplets = build_triplets(labels, facet)  # method facet merges 2 and 3 by default
    n = sum(len(v) for s, v in triplets.items() if split.assignment[s] == "train")
    print(f"\n=== {facet}: {n} training triplets ===")
    backbone = CompactBackbone(vocab_size=len(vocab), max_len=80, d_ff=128, rng_seed=5)
    model = FacetModel(facet=facet, backbone=backbone, tokenizer=tokenizer, max_tokens=80)
    val_pools = eval_pools_from_labels(labels, split.seeds("val"), facet)
    result = train(model, triplets, papers, cfg, split=split, val_pools=val_pools)
    for ck in result.checkpoints:
        print(f"  epoch {ck.epoch}: loss {result.epoch_losses[ck.epoch]:.3f}, "
              f"val agreement {ck.validation_metric:.3f}")
    best = select_best_checkpoint(result.checkpoints)
    test_pools = eval_pools_from_labels(labels, split.seeds("test"), facet)
    test_rho = validation_agreement_from_pools(model, papers, test_pools)
    print(f"  best epoch {best.epoch} (val {best.validation_metric:.3f}); held-out agreement {test_rho:.3f}")
    ckpt = OUT / f"ckpt_{'bg' if facet == BACKGROUND else 'mt'}"
    save_checkpoint(model, ckpt, validation_metric=best.validation_metric)
    print(f"  checkpoint -> {ckpt}")
