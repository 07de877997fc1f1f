#!/usr/bin/env python3
"""Build a corpus offline and label every seed-candidate pair on two facets.

The synthetic generator embeds a topic path and a method path in each
abstract, so the bundled oracle client can stand in for the LLM and the
whole flow runs with no network. Swap in HttpChatClient for real runs.
"""

from collections import Counter

from facetrank.agreement import pattern_counts, score_distribution
from facetrank.annotate import annotate_corpus, build_prompt
from facetrank.corpus import corpus_stats
from facetrank.synth import SynthConfig, SyntheticOracleClient, generate_corpus

corpus = generate_corpus(SynthConfig(n_docs=80, n_seeds=80, pool_size=10, rng_seed=7))
print(f"generated {len(corpus.docs)} documents, {len(corpus.pools)} candidate pools")

stats = corpus_stats(corpus.pools)
print(stats.to_markdown())
print()

seed, cand = corpus.pools[0].seed, corpus.pools[0].candidates[0]
system, user = build_prompt(seed, cand)
print("--- scoring rubric (first lines) ---")
print("\n".join(system.splitlines()[:4]))
print("--- pair message ---")
print(user)

report = annotate_corpus(corpus.pools, SyntheticOracleClient(), clock=None)
print(f"labeled {len(report.labels)} pairs, {len(report.errors)} failures")

dist = score_distribution(report.labels)
for facet, rows in dist.items():
    line = ", ".join(f"{s}: {v['count']} ({v['percent']:.1f}%)" for s, v in rows.items())
    print(f"{facet:10s} {line}")

pc = pattern_counts(report.labels)
print(f"cross-domain same-method: {100 * pc.cross_domain_same_method_frac:.1f}%")
print(f"same-domain different-method: {100 * pc.same_domain_different_method_frac:.1f}%")
print("(these two patterns are the hard negatives single-score models cannot separate)")
