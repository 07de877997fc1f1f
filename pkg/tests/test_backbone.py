import numpy as np
import pytest

from facetrank.backbone import CompactBackbone


def tiny(rng_seed=3, vocab=30):
    return CompactBackbone(
        vocab_size=vocab, max_len=16, d_model=8, n_layers=2, n_heads=2, d_ff=16, rng_seed=rng_seed
    )


def randomize(bb, seed=42, scale=0.5):
    rng = np.random.default_rng(seed)
    for name, p in bb.params.items():
        bb.params[name] = rng.normal(0.0, scale, p.shape)


def fd_grad(bb, seqs, ds, name, h=1e-5):
    p = bb.params[name]
    out = np.zeros_like(p)
    it = np.nditer(p, flags=["multi_index"])
    for _ in it:
        idx = it.multi_index
        orig = p[idx]
        p[idx] = orig + h
        sp, _ = bb.forward_batch(seqs)
        p[idx] = orig - h
        sm, _ = bb.forward_batch(seqs)
        p[idx] = orig
        out[idx] = float(np.asarray(ds) @ (sp - sm)) / (2 * h)
    return out


class TestGradients:
    def test_all_parameters_match_central_differences(self):
        bb = tiny()
        randomize(bb)
        rng = np.random.default_rng(0)
        seqs = [list(rng.integers(1, 30, size=9)), list(rng.integers(1, 30, size=12))]
        scores, cache = bb.forward_batch(seqs)
        ds = np.array([1.0, 0.7])
        grads = bb.backward(cache, ds)
        for name in bb.params:
            fd = fd_grad(bb, seqs, ds, name)
            na, nf = np.linalg.norm(grads[name]), np.linalg.norm(fd)
            if max(na, nf) < 1e-12:
                continue
            rel = np.linalg.norm(grads[name] - fd) / max(na, nf)
            assert rel < 1e-4, f"{name}: rel error {rel}"

    def test_unused_positions_get_zero_gradient(self):
        bb = tiny()
        randomize(bb)
        seqs = [[1, 5, 7]]
        scores, cache = bb.forward_batch(seqs)
        grads = bb.backward(cache, np.array([1.0]))
        assert np.allclose(grads["pos_emb"][3:], 0.0)
        used = {0, 1, 5, 7}
        for tok in range(30):
            if tok not in used:
                assert np.allclose(grads["tok_emb"][tok], 0.0)


class TestForward:
    def test_padding_does_not_change_scores(self):
        # a sequence scored alone equals the same sequence batched with longer ones
        bb = tiny()
        randomize(bb)
        short = [1, 4, 9, 2]
        long = list(np.random.default_rng(1).integers(1, 30, size=14))
        alone, _ = bb.forward_batch([short])
        batched, _ = bb.forward_batch([short, long])
        assert batched[0] == pytest.approx(alone[0], abs=1e-12)

    def test_deterministic_infer(self):
        bb = tiny()
        seqs = [[1, 2, 3], [4, 5, 6, 7]]
        a, _ = bb.forward_batch(seqs)
        b, _ = bb.forward_batch(seqs)
        np.testing.assert_array_equal(a, b)

    def test_same_seed_same_init(self):
        a, b = tiny(rng_seed=5), tiny(rng_seed=5)
        for name in a.params:
            np.testing.assert_array_equal(a.params[name], b.params[name])

    def test_max_len_enforced(self):
        bb = tiny()
        with pytest.raises(ValueError, match="max_len"):
            bb.forward_batch([[1] * 17])

    def test_empty_batch_rejected(self):
        with pytest.raises(ValueError):
            tiny().forward_batch([])

    def test_dropout_only_in_train_mode(self):
        bb = tiny()
        randomize(bb, scale=0.3)
        seqs = [[1, 2, 3, 4]]
        infer, _ = bb.forward_batch(seqs)
        train_vals = set()
        for i in range(5):
            t, _ = bb.forward_batch(seqs, train=True, dropout_rng=np.random.default_rng(i))
            train_vals.add(float(t[0]))
        assert len(train_vals) > 1

    def test_load_params_validates_shapes(self):
        bb = tiny()
        params = bb.clone_params()
        params["head_w"] = np.zeros(3)
        with pytest.raises(ValueError, match="shape"):
            bb.load_params(params)
        del params["head_w"]
        with pytest.raises(ValueError, match="missing"):
            bb.load_params(params)

    def test_config_roundtrip(self):
        bb = tiny()
        clone = CompactBackbone.from_config(bb.config())
        for name in bb.params:
            np.testing.assert_array_equal(bb.params[name], clone.params[name])
