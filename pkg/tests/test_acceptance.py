"""Acceptance suite: one test per release criterion, run at fixed tolerances.

Each test prints one visible PASS/FAIL line (with wall time against the
criterion's runtime budget) and then asserts, so `pytest tests/test_acceptance.py`
doubles as the acceptance report.
"""

import time

import numpy as np
import pytest

from facetrank import BACKGROUND, METHOD
from facetrank.agreement import confusion_matrix, load_audit_counts, reconstruct_audit_pairs
from facetrank.annotate import annotate_corpus
from facetrank.backbone import CompactBackbone
from facetrank.bench import ablation_label_scale, check_leakage, fixture_benchmark
from facetrank.encoder import FacetModel, Vocabulary, WordTokenizer, encode_pair
from facetrank.encoder import score as model_score
from facetrank.metrics import RankedList, average_precision, ndcg_percent_k, spearman
from facetrank.pipeline import load_config, run_all
from facetrank.synth import (
    SynthConfig,
    SyntheticOracleClient,
    corpus_texts,
    generate_corpus,
    make_probes,
)
from facetrank.trainer import TrainConfig, margin_loss, train, validation_agreement_from_pools
from facetrank.triplets import build_triplets, enumerate_triplets, eval_pools_from_labels, split_by_seed
from oracles import oracle_average_precision, oracle_ndcg, oracle_triplets


def report(capsys, name, budget_s, started, ok, detail=""):
    elapsed = time.monotonic() - started
    with capsys.disabled():
        status = "PASS" if ok and elapsed < budget_s else "FAIL"
        print(f"ACCEPTANCE {name}: {status} ({elapsed:.1f}s / budget {budget_s}s) {detail}")
    assert ok, f"{name}: {detail}"
    assert elapsed < budget_s, f"{name}: exceeded runtime budget ({elapsed:.1f}s > {budget_s}s)"


def ranked_from(rels):
    entries = tuple((f"c{i:02d}", float(len(rels) - i), int(r)) for i, r in enumerate(rels))
    return RankedList(query_id="q", entries=entries)


def test_01_agreement_reproduction(capsys):
    """Audit-sample reconstruction: exact marginals, Spearman 0.61/0.44 +-0.03."""
    started = time.monotonic()
    cms = load_audit_counts()
    marginals_ok = (
        cms[BACKGROUND].row_sums() == (32, 31, 24, 13)
        and cms[BACKGROUND].col_sums() == (5, 51, 23, 21)
        and cms[METHOD].row_sums() == (67, 20, 5, 8)
        and cms[METHOD].col_sums() == (20, 19, 58, 3)
    )
    human, llm = reconstruct_audit_pairs()
    recon_ok = len(human) == 100
    rhos = {}
    for facet, idx in ((BACKGROUND, 0), (METHOD, 1)):
        cm = confusion_matrix(
            [(p, s[idx]) for p, s in human.items()],
            [(p, s[idx]) for p, s in llm.items()],
            facet,
        )
        recon_ok = recon_ok and cm.counts == cms[facet].counts
        h = [s[idx] for s in human.values()]
        g = [s[idx] for s in llm.values()]
        rhos[facet] = spearman(h, g)
    bg_ok = abs(rhos[BACKGROUND] - 0.61) <= 0.03
    mt_ok = abs(rhos[METHOD] - 0.44) <= 0.03
    report(
        capsys, "1/7 agreement-reproduction", 1.0, started,
        marginals_ok and recon_ok and bg_ok and mt_ok,
        f"bg rho={rhos[BACKGROUND]:.4f}, mt rho={rhos[METHOD]:.4f}",
    )


def test_02_metric_oracle_equivalence(capsys):
    """1,000 random pools <= 8: NDCG/MAP match brute force to 1e-9."""
    started = time.monotonic()
    rng = np.random.default_rng(101)
    worst = 0.0
    checked = 0
    for _ in range(1000):
        n = int(rng.integers(2, 9))
        rels = [int(rng.integers(0, 4)) for _ in range(n)]
        if all(r == 0 for r in rels):
            rels[int(rng.integers(0, n))] = int(rng.integers(1, 4))
        rl = ranked_from(rels)
        worst = max(worst, abs(ndcg_percent_k(rl, 0.2) - oracle_ndcg(rels, 0.2)))
        if any(r >= 2 for r in rels):
            worst = max(worst, abs(average_precision(rl, 2) - oracle_average_precision(rels, 2)))
        checked += 1
    # depth sweep on smaller pools keeps the permutation oracle exhaustive
    for _ in range(100):
        n = int(rng.integers(2, 7))
        rels = [int(rng.integers(0, 4)) for _ in range(n)]
        if all(r == 0 for r in rels):
            rels[0] = 2
        for percent in (0.1, 0.3, 0.5, 1.0):
            worst = max(worst, abs(ndcg_percent_k(ranked_from(rels), percent) - oracle_ndcg(rels, percent)))
    hand_ok = (
        abs(ndcg_percent_k(ranked_from([2, 3, 1, 0, 0]), 0.2) - 3 / 7) < 1e-12
        and abs(average_precision(ranked_from([2, 1, 3]), 2) - 5 / 6) < 1e-12
    )
    report(
        capsys, "2/7 metric-oracle-equivalence", 10.0, started,
        worst < 1e-9 and hand_ok and checked == 1000,
        f"worst |delta|={worst:.2e} over {checked} pools",
    )


def test_03_triplet_bruteforce_equivalence(capsys):
    """500 random labeled pools <= 10: enumeration and merge property."""
    started = time.monotonic()
    rng = np.random.default_rng(202)
    enum_ok = True
    merge_ok = True
    for _ in range(500):
        n = int(rng.integers(2, 11))
        pool = [(f"c{i:02d}", int(rng.integers(0, 4))) for i in range(n)]
        got = {(t.pos_id, t.neg_id) for t in enumerate_triplets(pool, "s", METHOD)}
        enum_ok = enum_ok and got == oracle_triplets(pool)
        merged = [(cid, 2 if g == 3 else g) for cid, g in pool]
        relabeled = [(cid, 2 if g == 3 else g) for cid, g in merged]
        a = {(t.pos_id, t.neg_id) for t in enumerate_triplets(merged, "s", METHOD)}
        b = {(t.pos_id, t.neg_id) for t in enumerate_triplets(relabeled, "s", METHOD)}
        merge_ok = merge_ok and a == b
    report(capsys, "3/7 triplet-bruteforce-equivalence", 5.0, started, enum_ok and merge_ok)


def test_04_loss_and_gradient_checks(capsys):
    """Hinge closed form on 1e4 inputs; FD gradient check on 20 small pairs."""
    started = time.monotonic()
    rng = np.random.default_rng(303)
    loss_ok = True
    for _ in range(10_000):
        sp, sn = (float(x) for x in rng.normal(size=2) * 3)
        margin = float(rng.uniform(0.01, 2.0))
        if margin_loss(sp, sn, margin) != max(0.0, margin - (sp - sn)):
            loss_ok = False
            break
    worst = 0.0
    for pair_idx in range(20):
        bb = CompactBackbone(
            vocab_size=24, max_len=14, d_model=8, n_layers=2, n_heads=2, d_ff=16,
            rng_seed=pair_idx,
        )
        prng = np.random.default_rng(1000 + pair_idx)
        for name, p in bb.params.items():
            bb.params[name] = prng.normal(0.0, 0.5, p.shape)
        n1, n2 = int(prng.integers(4, 13)), int(prng.integers(4, 13))
        seqs = [list(prng.integers(1, 24, size=n1)), list(prng.integers(1, 24, size=n2))]
        ds = prng.normal(size=2)
        _, cache = bb.forward_batch(seqs)
        grads = bb.backward(cache, ds)
        h = 1e-5
        for name, p in bb.params.items():
            fd = np.zeros_like(p)
            it = np.nditer(p, flags=["multi_index"])
            for _ in it:
                idx = it.multi_index
                orig = p[idx]
                p[idx] = orig + h
                sp_, _ = bb.forward_batch(seqs)
                p[idx] = orig - h
                sm_, _ = bb.forward_batch(seqs)
                p[idx] = orig
                fd[idx] = float(ds @ (sp_ - sm_)) / (2 * h)
            na, nf = np.linalg.norm(grads[name]), np.linalg.norm(fd)
            if max(na, nf) < 1e-12:
                continue
            worst = max(worst, np.linalg.norm(grads[name] - fd) / max(na, nf))
    report(
        capsys, "4/7 loss-and-gradient-checks", 120.0, started,
        loss_ok and worst < 1e-4, f"worst gradient rel err={worst:.2e}",
    )


def test_05_synthetic_facet_decoupling_learnability(capsys):
    """200-doc corpus, paper training recipe: losses fall, agreement >= 0.7,
    probe decoupling >= 90%."""
    started = time.monotonic()
    cfg = SynthConfig(n_docs=200, n_seeds=200, pool_size=12, rng_seed=7)
    corpus = generate_corpus(cfg)
    labels = annotate_corpus(corpus.pools, SyntheticOracleClient(), clock=None).labels
    vocab = Vocabulary.build(corpus_texts(corpus))
    tokenizer = WordTokenizer(vocab)
    papers = {d.paper.paper_id: d.paper for d in corpus.docs}
    split = split_by_seed([p.seed.paper_id for p in corpus.pools], (0.7, 0.15, 0.15), rng_seed=11)
    # Recipe parameters fixed to the published ones: margin 0.5, batch 16,
    # 10 epochs, per-seed cap 10, clip 1.0. The learning rate suits the
    # from-scratch compact profile.
    train_cfg = TrainConfig(
        margin=0.5, batch_size=16, epochs=10, per_seed_cap=10, grad_clip_norm=1.0,
        learning_rate=2e-3, rng_seed=13,
    )
    models = {}
    losses_ok = True
    agreement = {}
    for facet in (BACKGROUND, METHOD):
        trips = build_triplets(labels, facet)
        backbone = CompactBackbone(vocab_size=len(vocab), max_len=80, d_ff=128, rng_seed=5)
        model = FacetModel(facet=facet, backbone=backbone, tokenizer=tokenizer, max_tokens=80)
        val_pools = eval_pools_from_labels(labels, split.seeds("val"), facet)
        result = train(model, trips, papers, train_cfg, split=split, val_pools=val_pools)
        losses_ok = losses_ok and result.epoch_losses[-1] < result.epoch_losses[0]
        test_pools = eval_pools_from_labels(labels, split.seeds("test"), facet)
        agreement[facet] = validation_agreement_from_pools(model, papers, test_pools)
        models[facet] = model
    agree_ok = agreement[BACKGROUND] >= 0.7 and agreement[METHOD] >= 0.7
    probes = make_probes(cfg, 50)
    decoupled = 0
    for probe in probes:
        enc = lambda m, cand: encode_pair(probe.seed, cand, tokenizer, 80)
        bg_prefers_topic = model_score(models[BACKGROUND], enc(models[BACKGROUND], probe.same_topic)) > \
            model_score(models[BACKGROUND], enc(models[BACKGROUND], probe.same_method))
        mt_prefers_method = model_score(models[METHOD], enc(models[METHOD], probe.same_method)) > \
            model_score(models[METHOD], enc(models[METHOD], probe.same_topic))
        decoupled += bg_prefers_topic and mt_prefers_method
    probe_ok = decoupled >= 45
    report(
        capsys, "5/7 synthetic-facet-decoupling", 300.0, started,
        losses_ok and agree_ok and probe_ok,
        f"held-out agreement bg={agreement[BACKGROUND]:.3f} mt={agreement[METHOD]:.3f}, "
        f"decoupled probes {decoupled}/50",
    )


def test_06_pipeline_determinism_and_hygiene(capsys, tmp_path):
    """run-all twice on the fixture: identical report hashes, zero leakage."""
    from facetrank._util import sha256_file

    started = time.monotonic()
    cfg = load_config(overrides=[
        "corpus.synthetic.n_docs=60", "corpus.synthetic.n_seeds=60",
        "corpus.synthetic.pool_size=8", "train.epochs=2",
    ])
    run_all(cfg, tmp_path / "r1")
    run_all(cfg, tmp_path / "r2")
    h1 = sha256_file(tmp_path / "r1" / "report.json")
    h2 = sha256_file(tmp_path / "r2" / "report.json")
    import json

    rep = json.loads((tmp_path / "r1" / "report.json").read_text())
    leak_ok = all(
        rep["facets"][f]["leakage"]["status"] == "clean"
        and rep["facets"][f]["leakage"]["overlap"] == []
        for f in (BACKGROUND, METHOD)
    )
    # direct check mirroring the report
    from facetrank.corpus import ingest_jsonl

    train_ids = {p.paper_id for p in ingest_jsonl(tmp_path / "r1" / "papers.jsonl").papers}
    bench_ids = {
        p.paper_id for facet in (BACKGROUND, METHOD)
        for q in fixture_benchmark(facet).queries for p, _ in q.pool
    }
    leak_ok = leak_ok and check_leakage(train_ids, bench_ids) == []
    report(
        capsys, "6/7 pipeline-determinism-hygiene", 120.0, started,
        h1 == h2 and leak_ok, f"report hash {h1[:12]}",
    )


def test_07_ablation_harness_contract(capsys, tiny_corpus, tiny_tokenizer):
    """Both label-scale arms under one rng_seed plus the reference row."""
    started = time.monotonic()
    corpus, labels = tiny_corpus
    papers = {d.paper.paper_id: d.paper for d in corpus.docs}
    split = split_by_seed(sorted({lp.seed_id for lp in labels}), (0.7, 0.15, 0.15), 5)

    def factory():
        backbone = CompactBackbone(
            vocab_size=len(tiny_tokenizer.vocab), max_len=80, d_model=32, n_layers=1,
            n_heads=2, d_ff=32, rng_seed=4,
        )
        return FacetModel(facet=METHOD, backbone=backbone, tokenizer=tiny_tokenizer, max_tokens=80)

    table = ablation_label_scale(
        labels, papers, split,
        TrainConfig(epochs=2, learning_rate=1e-3, rng_seed=3),
        fixture_benchmark(METHOD).queries, factory, train_paper_ids=set(papers),
    )
    arms_ok = set(table["arms"]) == {"0-3", "0-2"} and all(
        arm["ndcg"] is not None for arm in table["arms"].values()
    )
    shared_ok = table["shared_config"]["rng_seed"] == 3
    ref = table["fullscale_reference"]
    ref_ok = ref["0-3"] == 45.57 and ref["0-2"] == 49.06
    report(
        capsys, "7/7 ablation-harness-contract", 120.0, started,
        arms_ok and shared_ok and ref_ok,
        f"arms ndcg 0-3={table['arms']['0-3']['ndcg']:.3f} 0-2={table['arms']['0-2']['ndcg']:.3f} "
        f"(full-scale reference row: 45.57 vs 49.06, non-gating)",
    )
