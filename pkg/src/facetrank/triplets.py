"""Ranking triplets from labeled pairs: merges, enumeration, splits, sampling.

Each facet's triplets come only from that facet's grades. The method facet
collapses grades 2 and 3 by default; background keeps the full scale.
Splits are made at the seed level so no seed's pool spans train/val/test.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from pathlib import Path
from typing import Mapping, Sequence

import numpy as np

from . import BACKGROUND, METHOD, validate_facet
from .annotate import LabeledPair

SPLITS = ("train", "val", "test")


@dataclass(frozen=True)
class Triplet:
    facet: str
    seed_id: str
    pos_id: str
    neg_id: str
    pos_label: int
    neg_label: int

    def __post_init__(self):
        if self.pos_label <= self.neg_label:
            raise ValueError(
                f"triplet ({self.seed_id}, {self.pos_id}, {self.neg_id}): "
                f"pos_label {self.pos_label} must exceed neg_label {self.neg_label}"
            )
        if self.pos_id == self.neg_id:
            raise ValueError("pos and neg candidates must differ")

    def to_dict(self) -> dict:
        return {
            "facet": self.facet,
            "seed_id": self.seed_id,
            "pos_id": self.pos_id,
            "neg_id": self.neg_id,
            "pos_label": self.pos_label,
            "neg_label": self.neg_label,
        }


@dataclass(frozen=True)
class MergePolicy:
    """Monotone score -> effective score mapping for one facet."""

    facet: str
    mapping: tuple[int, int, int, int]

    def __post_init__(self):
        if any(not 0 <= m <= 3 for m in self.mapping):
            raise ValueError("mapped grades must stay within 0-3")
        if any(self.mapping[i] > self.mapping[i + 1] for i in range(3)):
            raise ValueError("mapping must be monotone non-decreasing")

    @staticmethod
    def identity(facet: str) -> "MergePolicy":
        return MergePolicy(facet=facet, mapping=(0, 1, 2, 3))

    @staticmethod
    def method_default() -> "MergePolicy":
        """Collapse grades 2 and 3: the 0-2 effective scale."""
        return MergePolicy(facet=METHOD, mapping=(0, 1, 2, 2))


def default_policies() -> dict[str, MergePolicy]:
    return {BACKGROUND: MergePolicy.identity(BACKGROUND), METHOD: MergePolicy.method_default()}


def merge_method_scale(label: int, policy: MergePolicy) -> int:
    if not (isinstance(label, int) and 0 <= label <= 3):
        raise ValueError(f"label out of range 0-3: {label!r}")
    return policy.mapping[label]


def enumerate_triplets(
    pool_labels: Sequence[tuple[str, int]],
    seed_id: str,
    facet: str,
) -> list[Triplet]:
    """One triplet per ordered candidate pair with strictly greater grade.

    Grades must already be post-merge. Output is sorted by (pos_id, neg_id).
    Pools with < 2 candidates or all-equal grades contribute nothing.
    """
    ids = [cid for cid, _ in pool_labels]
    if len(set(ids)) != len(ids):
        raise ValueError(f"seed {seed_id}: duplicate candidate ids")
    out = []
    for pos_id, pos_label in pool_labels:
        for neg_id, neg_label in pool_labels:
            if pos_label > neg_label:
                out.append(
                    Triplet(
                        facet=facet,
                        seed_id=seed_id,
                        pos_id=pos_id,
                        neg_id=neg_id,
                        pos_label=pos_label,
                        neg_label=neg_label,
                    )
                )
    return sorted(out, key=lambda t: (t.pos_id, t.neg_id))


def build_triplets(
    labels: Sequence[LabeledPair],
    facet: str,
    policy: MergePolicy | None = None,
) -> dict[str, list[Triplet]]:
    """Group labels by seed, apply the facet's merge policy, enumerate.

    Seeds whose pools yield zero triplets are skipped (and reported by the
    caller if desired).
    """
    facet = validate_facet(facet)
    if policy is None:
        policy = default_policies()[facet]
    by_seed: dict[str, list[tuple[str, int]]] = {}
    for lp in labels:
        eff = merge_method_scale(lp.score(facet), policy)
        by_seed.setdefault(lp.seed_id, []).append((lp.candidate_id, eff))
    out: dict[str, list[Triplet]] = {}
    for seed_id in sorted(by_seed):
        trips = enumerate_triplets(by_seed[seed_id], seed_id, facet)
        if trips:
            out[seed_id] = trips
    return out


@dataclass(frozen=True)
class SplitSpec:
    assignment: dict[str, str]
    rng_seed: int
    fractions: tuple[float, float, float]

    def seeds(self, split: str) -> list[str]:
        return sorted(s for s, sp in self.assignment.items() if sp == split)

    def to_dict(self) -> dict:
        return {
            "assignment": self.assignment,
            "rng_seed": self.rng_seed,
            "fractions": list(self.fractions),
        }

    @classmethod
    def from_dict(cls, d: dict) -> "SplitSpec":
        return cls(
            assignment=dict(d["assignment"]),
            rng_seed=int(d["rng_seed"]),
            fractions=tuple(d["fractions"]),
        )


def split_by_seed(
    seed_ids: Sequence[str],
    fractions: tuple[float, float, float],
    rng_seed: int,
) -> SplitSpec:
    """Deterministic seed-level split: shuffle, then contiguous assignment."""
    if any(f < 0 for f in fractions):
        raise ValueError("fractions must be non-negative")
    if abs(sum(fractions) - 1.0) > 1e-9:
        raise ValueError(f"fractions must sum to 1, got {sum(fractions)}")
    ids = sorted(set(seed_ids))
    if len(ids) != len(seed_ids):
        raise ValueError("duplicate seed ids")
    nonzero = sum(1 for f in fractions if f > 0)
    if len(ids) < nonzero:
        raise ValueError(f"{len(ids)} seeds cannot cover {nonzero} nonzero splits")
    rng = np.random.default_rng(rng_seed)
    order = [ids[i] for i in rng.permutation(len(ids))]
    n = len(order)
    b1 = int(round(fractions[0] * n))
    b2 = int(round((fractions[0] + fractions[1]) * n))
    parts = {"train": order[:b1], "val": order[b1:b2], "test": order[b2:]}
    for split, frac in zip(SPLITS, fractions):
        if frac > 0 and not parts[split]:
            raise ValueError(f"split {split} came out empty for fraction {frac}")
    assignment = {}
    for split in SPLITS:
        for sid in parts[split]:
            assignment[sid] = split
    return SplitSpec(assignment=assignment, rng_seed=rng_seed, fractions=tuple(fractions))


def epoch_sample(
    triplets_by_seed: Mapping[str, Sequence[Triplet]],
    cap: int,
    rng_seed: int,
    epoch: int,
) -> list[Triplet]:
    """Per-seed uniform subsample without replacement, at most `cap` each.

    The RNG stream derives from (rng_seed, epoch): every epoch resamples,
    yet identical (rng_seed, epoch) always yields the identical sample.
    Output keeps canonical order (seed, then (pos_id, neg_id)).
    """
    if cap < 1:
        raise ValueError("cap must be >= 1")
    rng = np.random.default_rng([rng_seed, epoch])
    out: list[Triplet] = []
    for seed_id in sorted(triplets_by_seed):
        trips = triplets_by_seed[seed_id]
        if len(trips) <= cap:
            out.extend(trips)
        else:
            idx = rng.choice(len(trips), size=cap, replace=False)
            out.extend(trips[i] for i in sorted(idx))
    return out


def write_triplets(path: str | Path, triplets_by_seed: Mapping[str, Sequence[Triplet]]) -> int:
    from ._util import write_jsonl

    rows = (t.to_dict() for sid in sorted(triplets_by_seed) for t in triplets_by_seed[sid])
    return write_jsonl(path, rows)


def read_triplets(path: str | Path) -> dict[str, list[Triplet]]:
    from ._util import read_jsonl

    out: dict[str, list[Triplet]] = {}
    for _, obj in read_jsonl(path):
        t = Triplet(
            facet=obj["facet"],
            seed_id=obj["seed_id"],
            pos_id=obj["pos_id"],
            neg_id=obj["neg_id"],
            pos_label=int(obj["pos_label"]),
            neg_label=int(obj["neg_label"]),
        )
        out.setdefault(t.seed_id, []).append(t)
    return out


def write_split(path: str | Path, spec: SplitSpec) -> None:
    Path(path).parent.mkdir(parents=True, exist_ok=True)
    Path(path).write_text(json.dumps(spec.to_dict(), indent=2, sort_keys=True) + "\n")


def read_split(path: str | Path) -> SplitSpec:
    return SplitSpec.from_dict(json.loads(Path(path).read_text()))


@dataclass
class EvalPool:
    """One seed's labeled candidates for rank-agreement evaluation."""

    seed_id: str
    candidates: list[tuple[str, int]] = field(default_factory=list)

    def qualifies(self) -> bool:
        grades = {g for _, g in self.candidates}
        return len(self.candidates) >= 2 and len(grades) >= 2


def eval_pools_from_labels(
    labels: Sequence[LabeledPair],
    seed_ids: Sequence[str],
    facet: str,
    policy: MergePolicy | None = None,
) -> list[EvalPool]:
    """Per-seed (candidate, effective grade) pools for the given seeds."""
    facet = validate_facet(facet)
    if policy is None:
        policy = default_policies()[facet]
    wanted = set(seed_ids)
    pools: dict[str, EvalPool] = {}
    for lp in labels:
        if lp.seed_id not in wanted:
            continue
        pool = pools.setdefault(lp.seed_id, EvalPool(seed_id=lp.seed_id))
        pool.candidates.append((lp.candidate_id, merge_method_scale(lp.score(facet), policy)))
    return [pools[s] for s in sorted(pools)]
