"""Scoring backbones for the pair cross-encoder.

Two profiles share one interface: a compact from-scratch transformer
(2 layers, width 64, float64, analytic gradients) that trains on CPU in
seconds, and an optional adapter for a pretrained torch encoder for
full-scale runs (see torch_adapter).

The compact profile implements its own backward pass; gradients are exact
and checked against central finite differences in the test suite.
"""

from __future__ import annotations

from typing import Protocol, Sequence

import numpy as np
from scipy.special import expit

PAD_ID = 0

COMPACT_PROFILE = "compact-from-scratch"
PRETRAINED_PROFILE = "pretrained-scientific"


class Backbone(Protocol):
    """Minimal contract the trainer and scorer rely on."""

    profile: str
    max_len: int
    params: dict[str, np.ndarray]

    def forward_batch(
        self,
        sequences: Sequence[Sequence[int]],
        train: bool = False,
        dropout_rng: np.random.Generator | None = None,
    ) -> tuple[np.ndarray, dict]: ...

    def backward(self, cache: dict, dscores: np.ndarray) -> dict[str, np.ndarray]: ...


# FFN activation is SiLU: smooth (finite-difference friendly) and cheap,
# one sigmoid per element with the backward reusing the cached value.
def _silu(x: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    sig = expit(x)
    return x * sig, sig


def _silu_grad(x: np.ndarray, sig: np.ndarray) -> np.ndarray:
    return sig * (1.0 + x * (1.0 - sig))


def _layernorm_forward(x: np.ndarray, g: np.ndarray, b: np.ndarray, eps: float = 1e-5):
    mu = x.mean(axis=-1, keepdims=True)
    var = x.var(axis=-1, keepdims=True)
    ivar = 1.0 / np.sqrt(var + eps)
    xhat = (x - mu) * ivar
    return g * xhat + b, (xhat, ivar, g)


def _layernorm_backward(dy: np.ndarray, cache) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    xhat, ivar, g = cache
    n = xhat.shape[-1]
    dg = (dy * xhat).sum(axis=tuple(range(dy.ndim - 1)))
    db = dy.sum(axis=tuple(range(dy.ndim - 1)))
    dxhat = dy * g
    dx = (
        ivar
        / n
        * (
            n * dxhat
            - dxhat.sum(axis=-1, keepdims=True)
            - xhat * (dxhat * xhat).sum(axis=-1, keepdims=True)
        )
    )
    return dx, dg, db


class CompactBackbone:
    """From-scratch transformer encoder scoring token sequences.

    Layout per layer is post-norm: x = LN(x + Attn(x)); x = LN(x + FFN(x)).
    The first position's final representation passes through dropout (train
    mode only) and a linear head to one scalar.
    """

    profile = COMPACT_PROFILE

    def __init__(
        self,
        vocab_size: int,
        max_len: int = 512,
        d_model: int = 64,
        n_layers: int = 2,
        n_heads: int = 4,
        d_ff: int = 256,
        head_dropout: float = 0.1,
        rng_seed: int = 0,
    ):
        if d_model % n_heads != 0:
            raise ValueError("d_model must be divisible by n_heads")
        self.vocab_size = vocab_size
        self.max_len = max_len
        self.d_model = d_model
        self.n_layers = n_layers
        self.n_heads = n_heads
        self.d_head = d_model // n_heads
        self.d_ff = d_ff
        self.head_dropout = head_dropout
        self.rng_seed = rng_seed
        rng = np.random.default_rng(rng_seed)
        scale = 0.02
        p: dict[str, np.ndarray] = {
            "tok_emb": rng.normal(0.0, scale, (vocab_size, d_model)),
            "pos_emb": rng.normal(0.0, scale, (max_len, d_model)),
            # Embedding layer norm: without it the first attention layer sees
            # init-scale inputs and its logits start numerically dead.
            "emb_ln_g": np.ones(d_model),
            "emb_ln_b": np.zeros(d_model),
        }
        for i in range(n_layers):
            for name in ("wq", "wk", "wv", "wo"):
                p[f"l{i}.{name}"] = rng.normal(0.0, scale, (d_model, d_model))
            # No key bias: softmax attention is invariant to per-row logit
            # shifts, so a key bias is a dead parameter.
            for name in ("bq", "bv", "bo"):
                p[f"l{i}.{name}"] = np.zeros(d_model)
            p[f"l{i}.ln1_g"] = np.ones(d_model)
            p[f"l{i}.ln1_b"] = np.zeros(d_model)
            p[f"l{i}.w1"] = rng.normal(0.0, scale, (d_model, d_ff))
            p[f"l{i}.b1"] = np.zeros(d_ff)
            p[f"l{i}.w2"] = rng.normal(0.0, scale, (d_ff, d_model))
            p[f"l{i}.b2"] = np.zeros(d_model)
            p[f"l{i}.ln2_g"] = np.ones(d_model)
            p[f"l{i}.ln2_b"] = np.zeros(d_model)
        # Head: zero bias, small uniform weights, seed-fixed.
        p["head_w"] = rng.uniform(-0.05, 0.05, d_model)
        p["head_b"] = np.zeros(())
        self.params = p

    def config(self) -> dict:
        return {
            "vocab_size": self.vocab_size,
            "max_len": self.max_len,
            "d_model": self.d_model,
            "n_layers": self.n_layers,
            "n_heads": self.n_heads,
            "d_ff": self.d_ff,
            "head_dropout": self.head_dropout,
            "rng_seed": self.rng_seed,
        }

    @classmethod
    def from_config(cls, cfg: dict) -> "CompactBackbone":
        return cls(**cfg)

    def _pad(self, sequences: Sequence[Sequence[int]]) -> tuple[np.ndarray, np.ndarray]:
        if not sequences:
            raise ValueError("empty batch")
        lengths = [len(s) for s in sequences]
        if min(lengths) == 0:
            raise ValueError("empty sequence in batch")
        lmax = max(lengths)
        if lmax > self.max_len:
            raise ValueError(f"sequence length {lmax} exceeds max_len {self.max_len}")
        ids = np.full((len(sequences), lmax), PAD_ID, dtype=np.int64)
        valid = np.zeros((len(sequences), lmax), dtype=bool)
        for r, seq in enumerate(sequences):
            ids[r, : len(seq)] = seq
            valid[r, : len(seq)] = True
        return ids, valid

    def forward_batch(
        self,
        sequences: Sequence[Sequence[int]],
        train: bool = False,
        dropout_rng: np.random.Generator | None = None,
    ) -> tuple[np.ndarray, dict]:
        ids, valid = self._pad(sequences)
        p = self.params
        b, l = ids.shape
        h, dh = self.n_heads, self.d_head
        emb = p["tok_emb"][ids] + p["pos_emb"][:l][None, :, :]
        x, emb_ln_cache = _layernorm_forward(emb, p["emb_ln_g"], p["emb_ln_b"])
        key_bias = np.where(valid[:, None, None, :], 0.0, -1e30)  # (B,1,1,L)
        layers = []
        for i in range(self.n_layers):
            q = x @ p[f"l{i}.wq"] + p[f"l{i}.bq"]
            k = x @ p[f"l{i}.wk"]
            v = x @ p[f"l{i}.wv"] + p[f"l{i}.bv"]
            qh = q.reshape(b, l, h, dh).transpose(0, 2, 1, 3)
            kh = k.reshape(b, l, h, dh).transpose(0, 2, 1, 3)
            vh = v.reshape(b, l, h, dh).transpose(0, 2, 1, 3)
            logits = qh @ kh.transpose(0, 1, 3, 2) / np.sqrt(dh) + key_bias
            logits -= logits.max(axis=-1, keepdims=True)
            expl = np.exp(logits)
            att = expl / expl.sum(axis=-1, keepdims=True)  # (B,H,L,L)
            ctx = (att @ vh).transpose(0, 2, 1, 3).reshape(b, l, self.d_model)
            att_out = ctx @ p[f"l{i}.wo"] + p[f"l{i}.bo"]
            y1, ln1_cache = _layernorm_forward(x + att_out, p[f"l{i}.ln1_g"], p[f"l{i}.ln1_b"])
            h1 = y1 @ p[f"l{i}.w1"] + p[f"l{i}.b1"]
            a1, sig1 = _silu(h1)
            ffn = a1 @ p[f"l{i}.w2"] + p[f"l{i}.b2"]
            y2, ln2_cache = _layernorm_forward(y1 + ffn, p[f"l{i}.ln2_g"], p[f"l{i}.ln2_b"])
            layers.append(
                {
                    "x_in": x,
                    "qh": qh,
                    "kh": kh,
                    "vh": vh,
                    "att": att,
                    "ctx": ctx,
                    "ln1": ln1_cache,
                    "y1": y1,
                    "h1": h1,
                    "a1": a1,
                    "sig1": sig1,
                    "ln2": ln2_cache,
                }
            )
            x = y2
        cls_vec = x[:, 0, :]
        if train and self.head_dropout > 0:
            rng = dropout_rng or np.random.default_rng()
            keep = (rng.random(cls_vec.shape) >= self.head_dropout) / (1.0 - self.head_dropout)
        else:
            keep = np.ones_like(cls_vec)
        dropped = cls_vec * keep
        scores = dropped @ p["head_w"] + p["head_b"]
        cache = {
            "ids": ids,
            "valid": valid,
            "emb_ln": emb_ln_cache,
            "layers": layers,
            "cls_vec": cls_vec,
            "keep": keep,
            "dropped": dropped,
        }
        return scores, cache

    def backward(self, cache: dict, dscores: np.ndarray) -> dict[str, np.ndarray]:
        """Gradient of sum(dscores * scores) w.r.t. every parameter."""
        p = self.params
        ids = cache["ids"]
        b, l = ids.shape
        h, dh = self.n_heads, self.d_head
        grads = {name: np.zeros_like(arr) for name, arr in p.items()}
        ds = np.asarray(dscores, dtype=float)
        grads["head_w"] += cache["dropped"].T @ ds
        grads["head_b"] += ds.sum()
        dcls = ds[:, None] * p["head_w"][None, :] * cache["keep"]
        dx = np.zeros((b, l, self.d_model))
        dx[:, 0, :] = dcls
        for i in reversed(range(self.n_layers)):
            lc = cache["layers"][i]
            # x = LN2(y1 + ffn)
            d_pre2, dg2, db2 = _layernorm_backward(dx, lc["ln2"])
            grads[f"l{i}.ln2_g"] += dg2
            grads[f"l{i}.ln2_b"] += db2
            dy1 = d_pre2.copy()
            dffn = d_pre2
            # ffn = gelu(y1 @ w1 + b1) @ w2 + b2
            da1 = dffn @ p[f"l{i}.w2"].T
            grads[f"l{i}.w2"] += lc["a1"].reshape(-1, self.d_ff).T @ dffn.reshape(-1, self.d_model)
            grads[f"l{i}.b2"] += dffn.sum(axis=(0, 1))
            dh1 = da1 * _silu_grad(lc["h1"], lc["sig1"])
            grads[f"l{i}.w1"] += lc["y1"].reshape(-1, self.d_model).T @ dh1.reshape(-1, self.d_ff)
            grads[f"l{i}.b1"] += dh1.sum(axis=(0, 1))
            dy1 += dh1 @ p[f"l{i}.w1"].T
            # y1 = LN1(x_in + att_out)
            d_pre1, dg1, db1 = _layernorm_backward(dy1, lc["ln1"])
            grads[f"l{i}.ln1_g"] += dg1
            grads[f"l{i}.ln1_b"] += db1
            dx_in = d_pre1.copy()
            datt_out = d_pre1
            # att_out = ctx @ wo + bo
            grads[f"l{i}.wo"] += lc["ctx"].reshape(-1, self.d_model).T @ datt_out.reshape(-1, self.d_model)
            grads[f"l{i}.bo"] += datt_out.sum(axis=(0, 1))
            dctx = (datt_out @ p[f"l{i}.wo"].T).reshape(b, l, h, dh).transpose(0, 2, 1, 3)
            datt = dctx @ lc["vh"].transpose(0, 1, 3, 2)
            dvh = lc["att"].transpose(0, 1, 3, 2) @ dctx
            att = lc["att"]
            dlogits = (datt - (datt * att).sum(axis=-1, keepdims=True)) * att
            dqh = dlogits @ lc["kh"] / np.sqrt(dh)
            dkh = dlogits.transpose(0, 1, 3, 2) @ lc["qh"] / np.sqrt(dh)
            dq = dqh.transpose(0, 2, 1, 3).reshape(b, l, self.d_model)
            dk = dkh.transpose(0, 2, 1, 3).reshape(b, l, self.d_model)
            dv = dvh.transpose(0, 2, 1, 3).reshape(b, l, self.d_model)
            x_in = lc["x_in"]
            x_flat = x_in.reshape(-1, self.d_model)
            grads[f"l{i}.wq"] += x_flat.T @ dq.reshape(-1, self.d_model)
            grads[f"l{i}.wk"] += x_flat.T @ dk.reshape(-1, self.d_model)
            grads[f"l{i}.wv"] += x_flat.T @ dv.reshape(-1, self.d_model)
            grads[f"l{i}.bq"] += dq.sum(axis=(0, 1))
            grads[f"l{i}.bv"] += dv.sum(axis=(0, 1))
            dx_in += dq @ p[f"l{i}.wq"].T + dk @ p[f"l{i}.wk"].T + dv @ p[f"l{i}.wv"].T
            dx = dx_in
        demb, dg_emb, db_emb = _layernorm_backward(dx, cache["emb_ln"])
        grads["emb_ln_g"] += dg_emb
        grads["emb_ln_b"] += db_emb
        np.add.at(grads["tok_emb"], ids.reshape(-1), demb.reshape(-1, self.d_model))
        grads["pos_emb"][:l] += demb.sum(axis=0)
        return grads

    def clone_params(self) -> dict[str, np.ndarray]:
        return {k: v.copy() for k, v in self.params.items()}

    def load_params(self, params: dict[str, np.ndarray]) -> None:
        for k in self.params:
            if k not in params:
                raise ValueError(f"missing parameter {k}")
            if params[k].shape != self.params[k].shape:
                raise ValueError(
                    f"shape mismatch for {k}: {params[k].shape} vs {self.params[k].shape}"
                )
        self.params = {k: np.asarray(v, dtype=float) for k, v in params.items()}
