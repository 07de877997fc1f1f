"""Optional pretrained-encoder backbone backed by torch (extra: pretrained).

Wraps any torch module that maps (input_ids, attention_mask) to per-token
hidden states, e.g. a pretrained scientific-text encoder, behind the same
Backbone contract the compact profile implements: numpy master weights,
forward_batch returning scores, backward returning numpy gradients via
autograd. Parameters round-trip torch<->numpy every step, which is fine at
reranking scale; large-scale fine-tuning wants a native torch loop instead.
"""

from __future__ import annotations

from typing import Sequence

import numpy as np

from .backbone import PAD_ID, PRETRAINED_PROFILE


class TorchEncoderBackbone:
    profile = PRETRAINED_PROFILE

    def __init__(self, module, d_model: int, max_len: int = 512, head_dropout: float = 0.1,
                 rng_seed: int = 0):
        try:
            import torch
        except ImportError as exc:
            raise ImportError(
                "the pretrained backbone profile needs torch; install the 'pretrained' extra"
            ) from exc
        self._torch = torch
        self.module = module.double()
        self.max_len = max_len
        self.d_model = d_model
        self.head_dropout = head_dropout
        rng = np.random.default_rng(rng_seed)
        self.params: dict[str, np.ndarray] = {
            name: p.detach().cpu().numpy().copy()
            for name, p in self.module.named_parameters()
        }
        self.params["head_w"] = rng.uniform(-0.05, 0.05, d_model)
        self.params["head_b"] = np.zeros(())

    def _sync_into_torch(self):
        torch = self._torch
        with torch.no_grad():
            for name, p in self.module.named_parameters():
                p.copy_(torch.from_numpy(self.params[name]))

    def forward_batch(
        self,
        sequences: Sequence[Sequence[int]],
        train: bool = False,
        dropout_rng: np.random.Generator | None = None,
    ):
        torch = self._torch
        if not sequences:
            raise ValueError("empty batch")
        self._sync_into_torch()
        lmax = max(len(s) for s in sequences)
        ids = torch.full((len(sequences), lmax), PAD_ID, dtype=torch.long)
        mask = torch.zeros((len(sequences), lmax), dtype=torch.long)
        for r, seq in enumerate(sequences):
            ids[r, : len(seq)] = torch.tensor(list(seq), dtype=torch.long)
            mask[r, : len(seq)] = 1
        self.module.train(False)
        grad_mode = torch.enable_grad() if train else torch.no_grad()
        head_w = torch.from_numpy(self.params["head_w"]).requires_grad_(train)
        head_b = torch.from_numpy(self.params["head_b"].reshape(())).requires_grad_(train)
        with grad_mode:
            out = self.module(input_ids=ids, attention_mask=mask)
            hidden = out.last_hidden_state if hasattr(out, "last_hidden_state") else out
            cls = hidden[:, 0, :]
            if train and self.head_dropout > 0:
                rng = dropout_rng or np.random.default_rng()
                keep_np = (rng.random(cls.shape) >= self.head_dropout) / (1.0 - self.head_dropout)
                cls = cls * torch.from_numpy(keep_np)
            scores = cls @ head_w + head_b
        cache = {"scores": scores, "head_w": head_w, "head_b": head_b, "train": train}
        return scores.detach().cpu().numpy(), cache

    def backward(self, cache: dict, dscores: np.ndarray) -> dict[str, np.ndarray]:
        torch = self._torch
        if not cache["train"]:
            raise ValueError("backward requires a train-mode forward")
        scores = cache["scores"]
        loss = (scores * torch.from_numpy(np.asarray(dscores, dtype=float))).sum()
        named = dict(self.module.named_parameters())
        targets = list(named.values()) + [cache["head_w"], cache["head_b"]]
        grads = torch.autograd.grad(loss, targets, allow_unused=True)
        out: dict[str, np.ndarray] = {}
        for (name, p), g in zip(named.items(), grads[: len(named)]):
            out[name] = np.zeros_like(self.params[name]) if g is None else g.cpu().numpy()
        gw, gb = grads[len(named)], grads[len(named) + 1]
        out["head_w"] = np.zeros(self.d_model) if gw is None else gw.cpu().numpy()
        out["head_b"] = np.zeros(()) if gb is None else gb.cpu().numpy().reshape(())
        return out

    def clone_params(self) -> dict[str, np.ndarray]:
        return {k: v.copy() for k, v in self.params.items()}

    def load_params(self, params: dict[str, np.ndarray]) -> None:
        for k in self.params:
            if k not in params:
                raise ValueError(f"missing parameter {k}")
        self.params = {k: np.asarray(v, dtype=float) for k, v in params.items()}
