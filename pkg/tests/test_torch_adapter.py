import numpy as np
import pytest

torch = pytest.importorskip("torch")
transformers = pytest.importorskip("transformers")

from facetrank.torch_adapter import TorchEncoderBackbone


@pytest.fixture(scope="module")
def tiny_bert():
    """Randomly initialized tiny encoder; no weights downloaded."""
    config = transformers.BertConfig(
        vocab_size=50, hidden_size=16, num_hidden_layers=2, num_attention_heads=2,
        intermediate_size=32, max_position_embeddings=32,
    )
    torch.manual_seed(0)
    return transformers.BertModel(config)


class TestTorchBackbone:
    def test_forward_shapes_and_determinism(self, tiny_bert):
        bb = TorchEncoderBackbone(tiny_bert, d_model=16, max_len=32, rng_seed=1)
        seqs = [[2, 5, 9], [4, 7, 11, 13, 15]]
        a, _ = bb.forward_batch(seqs)
        b, _ = bb.forward_batch(seqs)
        assert a.shape == (2,)
        np.testing.assert_array_equal(a, b)

    def test_backward_produces_gradients(self, tiny_bert):
        bb = TorchEncoderBackbone(tiny_bert, d_model=16, max_len=32, rng_seed=1)
        seqs = [[2, 5, 9, 3]]
        scores, cache = bb.forward_batch(seqs, train=True, dropout_rng=np.random.default_rng(0))
        grads = bb.backward(cache, np.array([1.0]))
        assert set(grads) == set(bb.params)
        assert np.linalg.norm(grads["head_w"]) > 0

    def test_head_gradient_matches_cls_vector(self, tiny_bert):
        bb = TorchEncoderBackbone(tiny_bert, d_model=16, max_len=32, head_dropout=0.0, rng_seed=1)
        seqs = [[2, 5, 9, 3]]
        scores, cache = bb.forward_batch(seqs, train=True)
        grads = bb.backward(cache, np.array([1.0]))
        with torch.no_grad():
            out = tiny_bert(
                input_ids=torch.tensor([seqs[0]]), attention_mask=torch.ones(1, 4, dtype=torch.long)
            )
            cls = out.last_hidden_state[0, 0, :].numpy()
        np.testing.assert_allclose(grads["head_w"], cls, rtol=1e-6)

    def test_param_updates_change_scores(self, tiny_bert):
        bb = TorchEncoderBackbone(tiny_bert, d_model=16, max_len=32, rng_seed=1)
        seqs = [[2, 5, 9]]
        before, _ = bb.forward_batch(seqs)
        params = bb.clone_params()
        params["head_b"] = params["head_b"] + 1.0
        bb.load_params(params)
        after, _ = bb.forward_batch(seqs)
        assert after[0] == pytest.approx(before[0] + 1.0, abs=1e-9)
