import numpy as np
import pytest

from facetrank import BACKGROUND, METHOD
from facetrank.backbone import CompactBackbone
from facetrank.corpus import Paper
from facetrank.encoder import FacetModel, Vocabulary, WordTokenizer
from facetrank.trainer import (
    AdamW,
    Checkpoint,
    TrainConfig,
    TrainingDiverged,
    clip_global_norm,
    lr_schedule,
    margin_loss,
    select_best_checkpoint,
    train,
    validation_agreement,
)
from facetrank.triplets import build_triplets, split_by_seed
from facetrank.annotate import FacetLabel, LabeledPair


class TestMarginLoss:
    def test_margin_satisfied(self):
        assert margin_loss(2.0, 1.0, 0.5) == 0.0

    def test_equal_scores(self):
        assert margin_loss(1.0, 1.0, 0.5) == 0.5

    def test_inverted(self):
        assert margin_loss(0.8, 1.0, 0.5) == pytest.approx(0.7)

    def test_margin_must_be_positive(self):
        with pytest.raises(ValueError):
            margin_loss(1.0, 0.0, 0.0)

    def test_closed_form_on_random_inputs(self):
        rng = np.random.default_rng(0)
        for _ in range(10_000):
            sp, sn = rng.normal(size=2) * 3
            margin = float(rng.uniform(0.01, 2.0))
            assert margin_loss(sp, sn, margin) == max(0.0, margin - (sp - sn))

    def test_subgradient_away_from_kink(self):
        h = 1e-6
        for sp, sn, margin in [(0.3, 0.5, 0.5), (-1.0, 1.0, 0.5)]:  # binding
            dpos = (margin_loss(sp + h, sn, margin) - margin_loss(sp - h, sn, margin)) / (2 * h)
            dneg = (margin_loss(sp, sn + h, margin) - margin_loss(sp, sn - h, margin)) / (2 * h)
            assert dpos == pytest.approx(-1.0, abs=1e-6)
            assert dneg == pytest.approx(1.0, abs=1e-6)
        for sp, sn, margin in [(2.0, 0.0, 0.5), (1.0, 0.0, 0.5)]:  # slack
            dpos = (margin_loss(sp + h, sn, margin) - margin_loss(sp - h, sn, margin)) / (2 * h)
            assert dpos == pytest.approx(0.0, abs=1e-6)


class TestLrSchedule:
    def test_warmup_endpoint_hits_base(self):
        assert lr_schedule(10, 100, 1e-3, 0.10) == pytest.approx(1e-3)

    def test_final_step_is_zero(self):
        assert lr_schedule(100, 100, 1e-3, 0.10) == 0.0

    def test_midpoint_of_decay(self):
        assert lr_schedule(55, 100, 1e-3, 0.10) == pytest.approx(0.5e-3)

    def test_zero_total_steps_errors(self):
        with pytest.raises(ValueError):
            lr_schedule(0, 0, 1e-3, 0.1)

    def test_monotone_ramp_then_decay(self):
        lrs = [lr_schedule(s, 50, 1.0, 0.2) for s in range(51)]
        peak = int(np.argmax(lrs))
        assert peak == 10
        assert all(a <= b + 1e-12 for a, b in zip(lrs[:peak], lrs[1 : peak + 1]))
        assert all(a >= b - 1e-12 for a, b in zip(lrs[peak:-1], lrs[peak + 1 :]))


class TestAdamW:
    def test_decay_applies_only_to_matrices(self):
        params = {"w": np.ones((2, 2)), "b": np.ones(2)}
        opt = AdamW(params, weight_decay=0.5)
        zero_grads = {"w": np.zeros((2, 2)), "b": np.zeros(2)}
        opt.step(params, zero_grads, lr=0.1)
        assert np.all(params["w"] < 1.0)  # decayed
        np.testing.assert_array_equal(params["b"], np.ones(2))  # untouched

    def test_descends_a_convex_bowl(self):
        params = {"x": np.array([[5.0, -3.0]])}
        opt = AdamW(params, weight_decay=0.0)
        for _ in range(500):
            grads = {"x": 2 * params["x"]}
            opt.step(params, grads, lr=0.05)
        assert np.abs(params["x"]).max() < 1e-2


class TestClip:
    def test_norm_reduced_to_cap(self):
        grads = {"a": np.full(4, 3.0), "b": np.full(3, 4.0)}
        pre = clip_global_norm(grads, 1.0)
        post = np.sqrt(sum(float((g * g).sum()) for g in grads.values()))
        assert pre > 1.0
        assert post == pytest.approx(1.0, abs=1e-9)

    def test_below_cap_untouched(self):
        grads = {"a": np.array([0.1, 0.1])}
        clip_global_norm(grads, 1.0)
        np.testing.assert_array_equal(grads["a"], [0.1, 0.1])


class TestCheckpointSelection:
    def _ckpt(self, epoch, metric):
        return Checkpoint(epoch=epoch, validation_metric=metric, params={}, config=TrainConfig())

    def test_argmax(self):
        cks = [self._ckpt(0, 0.1), self._ckpt(1, 0.9), self._ckpt(2, 0.4)]
        assert select_best_checkpoint(cks).epoch == 1

    def test_tie_goes_to_earliest(self):
        cks = [self._ckpt(0, 0.5), self._ckpt(1, 0.9), self._ckpt(2, 0.9)]
        assert select_best_checkpoint(cks).epoch == 1

    def test_all_nan_falls_back_to_last(self):
        cks = [self._ckpt(0, float("nan")), self._ckpt(1, float("nan"))]
        assert select_best_checkpoint(cks).epoch == 1


def label(seed, cand, bg, mt):
    return LabeledPair(
        seed_id=seed, candidate_id=cand,
        background=FacetLabel(BACKGROUND, bg, "r"),
        method=FacetLabel(METHOD, mt, "r"),
        annotator_meta={},
    )


def toy_training_setup(n_seeds=6, rng_seed=0):
    """Seeds whose candidates carry distinct tokens per grade level."""
    rng = np.random.default_rng(rng_seed)
    papers = {}
    labels = []
    grade_word = {0: "zero", 1: "one", 2: "two", 3: "three"}
    for si in range(n_seeds):
        sid = f"s{si}"
        papers[sid] = Paper(paper_id=sid, title=f"seed {si}", abstract=f"anchor a{si} topic")
        for ci, grade in enumerate([3, 2, 1, 0]):
            cid = f"{sid}c{ci}"
            papers[cid] = Paper(
                paper_id=cid,
                title=f"cand {grade_word[grade]}",
                abstract=f"match {grade_word[grade]} a{si} filler",
            )
            labels.append(label(sid, cid, grade, grade))
    texts = [p.title for p in papers.values()] + [p.abstract for p in papers.values()]
    tok = WordTokenizer(Vocabulary.build(texts))
    return papers, labels, tok


def make_model(tok, facet=BACKGROUND, rng_seed=1):
    bb = CompactBackbone(vocab_size=len(tok.vocab), max_len=32, d_model=16, n_layers=1,
                         n_heads=2, d_ff=32, rng_seed=rng_seed)
    return FacetModel(facet=facet, backbone=bb, tokenizer=tok, max_tokens=32)


class TestTrain:
    def test_zero_epochs_returns_input_unchanged(self):
        papers, labels, tok = toy_training_setup()
        model = make_model(tok)
        before = model.backbone.clone_params()
        trips = build_triplets(labels, BACKGROUND)
        result = train(model, trips, papers, TrainConfig(epochs=0))
        assert result.checkpoints == []
        for name in before:
            np.testing.assert_array_equal(before[name], model.backbone.params[name])

    def test_empty_training_set_errors(self):
        papers, labels, tok = toy_training_setup()
        model = make_model(tok)
        with pytest.raises(ValueError, match="empty training"):
            train(model, {}, papers, TrainConfig(epochs=1))

    def test_facet_mismatch_rejected(self):
        papers, labels, tok = toy_training_setup()
        model = make_model(tok, facet=METHOD)
        trips = build_triplets(labels, BACKGROUND)
        with pytest.raises(ValueError, match="facet"):
            train(model, trips, papers, TrainConfig(epochs=1))

    def test_loss_decreases_on_separable_toy(self):
        papers, labels, tok = toy_training_setup()
        model = make_model(tok)
        trips = build_triplets(labels, BACKGROUND)
        cfg = TrainConfig(epochs=6, learning_rate=5e-3, batch_size=8, rng_seed=2)
        result = train(model, trips, papers, cfg)
        assert result.epoch_losses[-1] < result.epoch_losses[0]

    def test_bit_identical_reruns(self):
        metrics = []
        losses = []
        for _ in range(2):
            papers, labels, tok = toy_training_setup()
            model = make_model(tok)
            trips = build_triplets(labels, BACKGROUND)
            split = split_by_seed(sorted(trips), (0.5, 0.5, 0.0), 3)
            from facetrank.triplets import eval_pools_from_labels

            val_pools = eval_pools_from_labels(labels, split.seeds("val"), BACKGROUND)
            cfg = TrainConfig(epochs=3, learning_rate=5e-3, batch_size=8, rng_seed=9)
            result = train(model, trips, papers, cfg, split=split, val_pools=val_pools)
            metrics.append([c.validation_metric for c in result.checkpoints])
            losses.append(result.epoch_losses)
        assert metrics[0] == metrics[1]
        assert losses[0] == losses[1]

    def test_best_checkpoint_restored(self):
        papers, labels, tok = toy_training_setup()
        model = make_model(tok)
        trips = build_triplets(labels, BACKGROUND)
        split = split_by_seed(sorted(trips), (0.5, 0.5, 0.0), 3)
        from facetrank.triplets import eval_pools_from_labels

        val_pools = eval_pools_from_labels(labels, split.seeds("val"), BACKGROUND)
        cfg = TrainConfig(epochs=4, learning_rate=5e-3, batch_size=8, rng_seed=2)
        result = train(model, trips, papers, cfg, split=split, val_pools=val_pools)
        best = select_best_checkpoint(result.checkpoints)
        for name, arr in best.params.items():
            np.testing.assert_array_equal(arr, model.backbone.params[name])

    def test_training_log_written(self, tmp_path):
        papers, labels, tok = toy_training_setup()
        model = make_model(tok)
        trips = build_triplets(labels, BACKGROUND)
        log = tmp_path / "log.jsonl"
        train(model, trips, papers, TrainConfig(epochs=1, batch_size=8), log_path=log)
        import json

        rows = [json.loads(l) for l in log.read_text().splitlines()]
        assert rows and all({"step", "lr", "loss", "grad_norm"} <= set(r) for r in rows)

    @pytest.mark.filterwarnings("ignore:invalid value encountered")
    def test_non_finite_loss_aborts_with_diagnostics(self):
        papers, labels, tok = toy_training_setup()
        model = make_model(tok)
        model.backbone.params["head_w"][:] = np.inf
        trips = build_triplets(labels, BACKGROUND)
        with pytest.raises(TrainingDiverged) as err:
            train(model, trips, papers, TrainConfig(epochs=1, batch_size=8))
        assert err.value.batch_ids


class TestValidationAgreement:
    def _pools(self, papers, labels, tok, facet=BACKGROUND):
        by_seed = {}
        for lp in labels:
            by_seed.setdefault(lp.seed_id, []).append((papers[lp.candidate_id], lp.background.score))
        return [(papers[sid], cands) for sid, cands in sorted(by_seed.items())]

    def test_perfect_model_scores_one(self, monkeypatch):
        papers, labels, tok = toy_training_setup(n_seeds=2)
        model = make_model(tok)
        pools = self._pools(papers, labels, tok)
        import facetrank.trainer as tr

        monkeypatch.setattr(
            tr, "score_batch",
            lambda model, pairs: [float(i) for i in range(len(pairs), 0, -1)],
        )
        # candidates are ordered grade 3,2,1,0: descending fake scores align
        assert tr.validation_agreement(model, pools) == pytest.approx(1.0)

    def test_anti_ordered_scores_minus_one(self, monkeypatch):
        papers, labels, tok = toy_training_setup(n_seeds=2)
        model = make_model(tok)
        pools = self._pools(papers, labels, tok)
        import facetrank.trainer as tr

        monkeypatch.setattr(
            tr, "score_batch", lambda model, pairs: [float(i) for i in range(len(pairs))]
        )
        assert tr.validation_agreement(model, pools) == pytest.approx(-1.0)

    def test_all_equal_label_seeds_excluded(self):
        papers, labels, tok = toy_training_setup(n_seeds=1)
        model = make_model(tok)
        flat = [(papers[lp.candidate_id], 2) for lp in labels]  # constant labels
        with pytest.raises(ValueError, match="no qualifying"):
            validation_agreement(model, [(papers["s0"], flat)])
