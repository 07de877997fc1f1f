"""Graded-relevance ranking metrics and tie-aware rank agreement.

All functions are pure. Ranking ties are always broken by candidate_id
ascending so that every downstream consumer (training validation, the
evaluation harness, the rerank service) produces identical orderings for
identical scores.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Sequence

import numpy as np

GRADE_MIN = 0
GRADE_MAX = 3


@dataclass(frozen=True)
class RankedList:
    """One query's candidates ordered by score.

    entries are (candidate_id, score, relevance) sorted by score descending,
    ties broken by candidate_id ascending.
    """

    query_id: str
    entries: tuple[tuple[str, float, int], ...]

    @staticmethod
    def from_scores(
        query_id: str,
        scored: Sequence[tuple[str, float]],
        relevance: dict[str, int],
    ) -> "RankedList":
        order = rank_candidates(scored)
        by_id = dict(scored)
        entries = tuple((cid, float(by_id[cid]), int(relevance[cid])) for cid in order)
        for _, _, rel in entries:
            if not (GRADE_MIN <= rel <= GRADE_MAX):
                raise ValueError(f"relevance grade out of range: {rel}")
        return RankedList(query_id=query_id, entries=entries)


def rank_candidates(scored: Sequence[tuple[str, float]]) -> list[str]:
    """Order candidate ids by score descending, ties by id ascending."""
    ids = [cid for cid, _ in scored]
    if len(set(ids)) != len(ids):
        dupes = sorted({c for c in ids if ids.count(c) > 1})
        raise ValueError(f"duplicate candidate ids: {dupes}")
    return [cid for cid, _ in sorted(scored, key=lambda e: (-e[1], e[0]))]


def cutoff_depth(pool_size: int, percent: float) -> int:
    """Per-query cutoff: round-half-up of percent * pool size, floor 1."""
    if not (0 < percent <= 1):
        raise ValueError(f"percent must be in (0, 1], got {percent}")
    return max(1, int(math.floor(percent * pool_size + 0.5)))


def _gain(rel: int, exponential: bool) -> float:
    return float(2**rel - 1) if exponential else float(rel)


def dcg(relevances: Sequence[int], k: int, exponential: bool = True) -> float:
    """Discounted cumulative gain of the first k items, ranks starting at 1."""
    return sum(
        _gain(rel, exponential) / math.log2(rank + 1)
        for rank, rel in enumerate(relevances[:k], start=1)
    )


def ndcg_percent_k(ranked: RankedList, percent: float, exponential_gain: bool = True) -> float:
    """NDCG at a depth of `percent` of the pool size.

    Gain is 2^rel - 1 by default (linear gain available via the flag),
    discount 1/log2(rank+1). Queries whose pool has no relevant item are
    undefined here and must be excluded upstream.
    """
    rels = [rel for _, _, rel in ranked.entries]
    if not rels:
        raise ValueError(f"query {ranked.query_id}: empty pool")
    if all(r == 0 for r in rels):
        raise ValueError(f"query {ranked.query_id}: all relevances zero, NDCG undefined")
    k = cutoff_depth(len(rels), percent)
    ideal = sorted(rels, reverse=True)
    return dcg(rels, k, exponential_gain) / dcg(ideal, k, exponential_gain)


def average_precision(ranked: RankedList, binarize_at: int = 2) -> float:
    """AP over the list binarized at relevance >= binarize_at."""
    flags = [rel >= binarize_at for _, _, rel in ranked.entries]
    n_rel = sum(flags)
    if n_rel == 0:
        raise ValueError(
            f"query {ranked.query_id}: no item with relevance >= {binarize_at}, AP undefined"
        )
    hits = 0
    total = 0.0
    for rank, flag in enumerate(flags, start=1):
        if flag:
            hits += 1
            total += hits / rank
    return total / n_rel


def mean_average_precision(lists: Sequence[RankedList], binarize_at: int = 2) -> float:
    """Unweighted mean of per-query APs."""
    if not lists:
        raise ValueError("no queries")
    return float(np.mean([average_precision(rl, binarize_at) for rl in lists]))


def _midranks(values: Sequence[float]) -> np.ndarray:
    """Ranks starting at 1; ties share the mean of their rank positions."""
    arr = np.asarray(values, dtype=float)
    order = np.argsort(arr, kind="stable")
    ranks = np.empty(len(arr), dtype=float)
    i = 0
    while i < len(arr):
        j = i
        while j + 1 < len(arr) and arr[order[j + 1]] == arr[order[i]]:
            j += 1
        ranks[order[i : j + 1]] = (i + j) / 2.0 + 1.0
        i = j + 1
    return ranks


def spearman(x: Sequence[float], y: Sequence[float]) -> float:
    """Tie-aware Spearman rho: Pearson correlation of rank-averaged ranks."""
    if len(x) != len(y):
        raise ValueError(f"length mismatch: {len(x)} vs {len(y)}")
    if len(x) < 2:
        raise ValueError("need at least 2 observations")
    rx = _midranks(x)
    ry = _midranks(y)
    dx = rx - rx.mean()
    dy = ry - ry.mean()
    sx = math.sqrt(float(dx @ dx))
    sy = math.sqrt(float(dy @ dy))
    if sx == 0 or sy == 0:
        raise ValueError("constant input: correlation undefined")
    return float(dx @ dy) / (sx * sy)
