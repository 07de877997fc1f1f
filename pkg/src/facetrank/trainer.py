"""Pairwise margin-rank training for one facet model.

Per epoch: resample up to `per_seed_cap` triplets per seed, shuffle,
run mini-batches through the backbone, take the hinge on score gaps,
clip the global gradient norm, and step decoupled-weight-decay Adam under
a linear warmup/decay schedule. Checkpoints are ranked by validation rank
agreement; the best one (earliest epoch on ties) wins.
"""

from __future__ import annotations

from dataclasses import dataclass, field, replace
from typing import Callable, Mapping, Sequence

import numpy as np

from ._util import append_jsonl
from .corpus import Paper
from .encoder import EncodedPair, FacetModel, encode_pair, score_batch
from .metrics import spearman
from .triplets import EvalPool, SplitSpec, Triplet, epoch_sample


@dataclass(frozen=True)
class TrainConfig:
    margin: float = 0.5
    learning_rate: float = 2e-5
    warmup_fraction: float = 0.10
    epochs: int = 10
    batch_size: int = 16
    grad_clip_norm: float = 1.0
    per_seed_cap: int = 10
    rng_seed: int = 0
    weight_decay: float = 0.01  # optimizer default; not part of the published recipe

    def __post_init__(self):
        if self.margin <= 0:
            raise ValueError("margin must be positive")
        if not 0 <= self.warmup_fraction < 1:
            raise ValueError("warmup_fraction must be in [0, 1)")
        for name in ("epochs", "batch_size", "per_seed_cap"):
            if getattr(self, name) < 0 or (name != "epochs" and getattr(self, name) < 1):
                raise ValueError(f"{name} must be positive")

    def to_dict(self) -> dict:
        return {
            "margin": self.margin,
            "learning_rate": self.learning_rate,
            "warmup_fraction": self.warmup_fraction,
            "epochs": self.epochs,
            "batch_size": self.batch_size,
            "grad_clip_norm": self.grad_clip_norm,
            "per_seed_cap": self.per_seed_cap,
            "rng_seed": self.rng_seed,
            "weight_decay": self.weight_decay,
        }


@dataclass(frozen=True)
class Checkpoint:
    epoch: int
    validation_metric: float
    params: dict[str, np.ndarray]
    config: TrainConfig


def margin_loss(s_pos: float, s_neg: float, margin: float) -> float:
    """Hinge on the score gap: max(0, margin - (s_pos - s_neg))."""
    if margin <= 0:
        raise ValueError("margin must be positive")
    return max(0.0, margin - (s_pos - s_neg))


def lr_schedule(step: float, total_steps: int, base_lr: float, warmup_fraction: float) -> float:
    """Linear 0 -> base_lr over the warmup span, then linear decay to 0.

    step may be fractional; the training loop evaluates at i + 0.5 so no
    update runs at exactly zero rate.
    """
    if total_steps <= 0:
        raise ValueError("total_steps must be positive")
    if not 0 <= step <= total_steps:
        raise ValueError(f"step {step} outside [0, {total_steps}]")
    warm = warmup_fraction * total_steps
    if warm > 0 and step <= warm:
        return base_lr * step / warm
    return base_lr * (total_steps - step) / (total_steps - warm)


class AdamW:
    """Decoupled-weight-decay Adam over a named parameter dict.

    Decay applies to matrices and embeddings (ndim >= 2) only, never to
    biases or layer-norm parameters.
    """

    def __init__(
        self,
        params: Mapping[str, np.ndarray],
        weight_decay: float = 0.01,
        beta1: float = 0.9,
        beta2: float = 0.999,
        eps: float = 1e-8,
    ):
        self.weight_decay = weight_decay
        self.beta1 = beta1
        self.beta2 = beta2
        self.eps = eps
        self.t = 0
        self.m = {k: np.zeros_like(v) for k, v in params.items()}
        self.v = {k: np.zeros_like(v) for k, v in params.items()}

    def step(self, params: dict[str, np.ndarray], grads: Mapping[str, np.ndarray], lr: float) -> None:
        self.t += 1
        bc1 = 1.0 - self.beta1**self.t
        bc2 = 1.0 - self.beta2**self.t
        for name, p in params.items():
            g = grads[name]
            self.m[name] = self.beta1 * self.m[name] + (1 - self.beta1) * g
            self.v[name] = self.beta2 * self.v[name] + (1 - self.beta2) * (g * g)
            mhat = self.m[name] / bc1
            vhat = self.v[name] / bc2
            update = mhat / (np.sqrt(vhat) + self.eps)
            if self.weight_decay > 0 and p.ndim >= 2:
                update = update + self.weight_decay * p
            params[name] = p - lr * update


def clip_global_norm(grads: dict[str, np.ndarray], max_norm: float) -> float:
    """Scale all gradients so the global L2 norm is at most max_norm.

    Returns the pre-clip norm.
    """
    total = float(np.sqrt(sum(float((g * g).sum()) for g in grads.values())))
    if max_norm > 0 and total > max_norm:
        factor = max_norm / total
        for name in grads:
            grads[name] = grads[name] * factor
    return total


class TrainingDiverged(RuntimeError):
    def __init__(self, message: str, step: int, batch_ids: list[tuple[str, str, str]]):
        super().__init__(message)
        self.step = step
        self.batch_ids = batch_ids


@dataclass
class TrainResult:
    model: FacetModel
    checkpoints: list[Checkpoint]
    epoch_losses: list[float] = field(default_factory=list)


def _pair_cache(
    model: FacetModel,
    corpus: Mapping[str, Paper],
    triplets_by_seed: Mapping[str, Sequence[Triplet]],
) -> dict[tuple[str, str], EncodedPair]:
    cache: dict[tuple[str, str], EncodedPair] = {}
    for seed_id, trips in triplets_by_seed.items():
        for t in trips:
            for cid in (t.pos_id, t.neg_id):
                key = (seed_id, cid)
                if key not in cache:
                    cache[key] = encode_pair(
                        corpus[seed_id], corpus[cid], model.tokenizer, model.max_tokens
                    )
    return cache


def train(
    model: FacetModel,
    triplets_by_seed: Mapping[str, Sequence[Triplet]],
    corpus: Mapping[str, Paper],
    cfg: TrainConfig,
    split: SplitSpec | None = None,
    val_pools: Sequence[EvalPool] | None = None,
    log_path=None,
    checkpoint_params: bool = True,
) -> TrainResult:
    """Optimize the model's backbone in place; return best-by-validation.

    triplets_by_seed must carry only the model's facet. When a split is
    given, training uses its train seeds; val_pools drives checkpoint
    selection (without them the final epoch wins).
    """
    for trips in triplets_by_seed.values():
        for t in trips:
            if t.facet != model.facet:
                raise ValueError(f"triplet facet {t.facet} does not match model facet {model.facet}")
    if split is not None:
        missing = [s for s in triplets_by_seed if s not in split.assignment]
        if missing:
            raise ValueError(f"split does not cover seeds: {missing[:5]}")
        train_map = {s: triplets_by_seed[s] for s in triplets_by_seed if split.assignment[s] == "train"}
    else:
        train_map = dict(triplets_by_seed)
    if cfg.epochs == 0:
        return TrainResult(model=model, checkpoints=[])
    if not any(train_map.values()):
        raise ValueError("empty training triplet set")

    backbone = model.backbone
    cache = _pair_cache(model, corpus, train_map)
    steps_per_epoch = []
    for epoch in range(cfg.epochs):
        n = len(epoch_sample(train_map, cfg.per_seed_cap, cfg.rng_seed, epoch))
        steps_per_epoch.append(int(np.ceil(n / cfg.batch_size)))
    total_steps = int(sum(steps_per_epoch))
    optimizer = AdamW(backbone.params, weight_decay=cfg.weight_decay)
    checkpoints: list[Checkpoint] = []
    epoch_losses: list[float] = []
    global_step = 0
    for epoch in range(cfg.epochs):
        sample = epoch_sample(train_map, cfg.per_seed_cap, cfg.rng_seed, epoch)
        shuffle_rng = np.random.default_rng([cfg.rng_seed, epoch, 1])
        order = shuffle_rng.permutation(len(sample))
        dropout_rng = np.random.default_rng([cfg.rng_seed, epoch, 2])
        losses = []
        for start in range(0, len(sample), cfg.batch_size):
            batch = [sample[i] for i in order[start : start + cfg.batch_size]]
            nb = len(batch)
            seqs = []
            for t in batch:
                seqs.append(cache[(t.seed_id, t.pos_id)].token_ids)
                seqs.append(cache[(t.seed_id, t.neg_id)].token_ids)
            scores, fwd_cache = backbone.forward_batch(seqs, train=True, dropout_rng=dropout_rng)
            s_pos, s_neg = scores[0::2], scores[1::2]
            gaps = cfg.margin - (s_pos - s_neg)
            batch_loss = float(np.maximum(0.0, gaps).mean())
            if not np.isfinite(batch_loss):
                raise TrainingDiverged(
                    f"non-finite loss at step {global_step}",
                    step=global_step,
                    batch_ids=[(t.seed_id, t.pos_id, t.neg_id) for t in batch],
                )
            losses.append(batch_loss)
            # Hinge subgradient: active only when the margin strictly binds.
            active = (gaps > 0).astype(float) / nb
            dscores = np.zeros(2 * nb)
            dscores[0::2] = -active
            dscores[1::2] = active
            grads = backbone.backward(fwd_cache, dscores)
            pre_norm = clip_global_norm(grads, cfg.grad_clip_norm)
            post_norm = float(np.sqrt(sum(float((g * g).sum()) for g in grads.values())))
            assert post_norm <= cfg.grad_clip_norm + 1e-6, "gradient clipping violated"
            lr = lr_schedule(global_step + 0.5, total_steps, cfg.learning_rate, cfg.warmup_fraction)
            optimizer.step(backbone.params, grads, lr)
            if log_path is not None:
                append_jsonl(
                    log_path,
                    {
                        "step": global_step,
                        "epoch": epoch,
                        "lr": lr,
                        "loss": batch_loss,
                        "grad_norm": pre_norm,
                    },
                )
            global_step += 1
        mean_loss = float(np.mean(losses)) if losses else 0.0
        epoch_losses.append(mean_loss)
        if val_pools is not None:
            metric = validation_agreement_from_pools(model, corpus, val_pools)
        else:
            metric = float("nan")
        checkpoints.append(
            Checkpoint(
                epoch=epoch,
                validation_metric=metric,
                params=backbone.clone_params() if checkpoint_params else {},
                config=cfg,
            )
        )
    best = select_best_checkpoint(checkpoints)
    if best.params:
        backbone.load_params(best.params)
    return TrainResult(model=model, checkpoints=checkpoints, epoch_losses=epoch_losses)


def select_best_checkpoint(checkpoints: Sequence[Checkpoint]) -> Checkpoint:
    """Argmax of validation metric; earliest epoch wins ties; NaN -> last."""
    if not checkpoints:
        raise ValueError("no checkpoints")
    valid = [c for c in checkpoints if np.isfinite(c.validation_metric)]
    if not valid:
        return checkpoints[-1]
    best = valid[0]
    for c in valid[1:]:
        if c.validation_metric > best.validation_metric:
            best = c
    return best


def validation_agreement(
    model: FacetModel,
    val_pools: Sequence[tuple[Paper, Sequence[tuple[Paper, int]]]],
) -> float:
    """Mean per-seed tie-aware rank agreement of scores against gold grades.

    Seeds with fewer than 2 candidates or all-equal labels are excluded;
    having none at all is an error. A seed where the model emits exactly
    constant scores contributes 0 (no ordering information).
    """
    per_seed = []
    for seed, cands in val_pools:
        grades = [g for _, g in cands]
        if len(cands) < 2 or len(set(grades)) < 2:
            continue
        pairs = [model.encode(seed, cand) for cand, _ in cands]
        scores = score_batch(model, pairs)
        try:
            per_seed.append(spearman(scores, [float(g) for g in grades]))
        except ValueError:
            per_seed.append(0.0)
    if not per_seed:
        raise ValueError("no qualifying validation seed")
    return float(np.mean(per_seed))


def validation_agreement_from_pools(
    model: FacetModel,
    corpus: Mapping[str, Paper],
    pools: Sequence[EvalPool],
) -> float:
    resolved = [
        (corpus[p.seed_id], [(corpus[cid], grade) for cid, grade in p.candidates])
        for p in pools
    ]
    return validation_agreement(model, resolved)


def config_with(cfg: TrainConfig, **overrides) -> TrainConfig:
    return replace(cfg, **overrides)
