"""Annotation-quality statistics: distributions, confusion, disagreements.

Quantifies how well the LLM labels track human judgment on an audited
sample: per-facet score distributions, human-by-model confusion matrices,
tie-aware rank agreement, and a report of large per-pair disagreements.
"""

from __future__ import annotations

import csv
import io
import json
from dataclasses import dataclass
from importlib import resources
from typing import Mapping, Sequence

import numpy as np

from . import BACKGROUND, METHOD
from .annotate import LabeledPair
from .metrics import spearman

N_GRADES = 4


@dataclass(frozen=True)
class ConfusionMatrix:
    """4x4 joint counts indexed (human score, llm score)."""

    facet: str
    counts: tuple[tuple[int, ...], ...]

    def __post_init__(self):
        if len(self.counts) != N_GRADES or any(len(r) != N_GRADES for r in self.counts):
            raise ValueError("counts must be a 4x4 grid")
        if any(c < 0 for row in self.counts for c in row):
            raise ValueError("counts must be non-negative")

    @property
    def n(self) -> int:
        return sum(c for row in self.counts for c in row)

    def row_sums(self) -> tuple[int, ...]:
        return tuple(sum(row) for row in self.counts)

    def col_sums(self) -> tuple[int, ...]:
        return tuple(sum(self.counts[h][g] for h in range(N_GRADES)) for g in range(N_GRADES))

    def expand(self) -> tuple[list[int], list[int]]:
        """Materialize the (human, llm) score pairs the counts summarize."""
        human, llm = [], []
        for h in range(N_GRADES):
            for g in range(N_GRADES):
                human.extend([h] * self.counts[h][g])
                llm.extend([g] * self.counts[h][g])
        return human, llm

    def rank_agreement(self) -> float:
        """Tie-aware Spearman rho computed directly from the joint counts.

        Midranks come from the marginals, so this equals spearman() on the
        expanded pair list without materializing it.
        """
        n = self.n
        if n < 2:
            raise ValueError("need at least 2 pairs")
        mid_h = _midranks_from_counts(self.row_sums())
        mid_g = _midranks_from_counts(self.col_sums())
        mean = (n + 1) / 2.0
        cov = sum(
            self.counts[h][g] * (mid_h[h] - mean) * (mid_g[g] - mean)
            for h in range(N_GRADES)
            for g in range(N_GRADES)
        )
        var_h = sum(c * (mid_h[s] - mean) ** 2 for s, c in enumerate(self.row_sums()))
        var_g = sum(c * (mid_g[s] - mean) ** 2 for s, c in enumerate(self.col_sums()))
        if var_h == 0 or var_g == 0:
            raise ValueError("constant marginal: correlation undefined")
        return float(cov / np.sqrt(var_h * var_g))


def _midranks_from_counts(counts: Sequence[int]) -> list[float]:
    mids = []
    below = 0
    for c in counts:
        mids.append(below + (c + 1) / 2.0)
        below += c
    return mids


def score_distribution(labels: Sequence[LabeledPair]) -> dict[str, dict[int, dict[str, float]]]:
    """Per-facet score counts and percentages. Percentages sum to 100."""
    if not labels:
        raise ValueError("labels must be non-empty")
    out: dict[str, dict[int, dict[str, float]]] = {}
    n = len(labels)
    for facet in (BACKGROUND, METHOD):
        counts = [0] * N_GRADES
        for lp in labels:
            counts[lp.score(facet)] += 1
        out[facet] = {
            s: {"count": counts[s], "percent": 100.0 * counts[s] / n} for s in range(N_GRADES)
        }
    return out


def confusion_matrix(
    human: Sequence[tuple[str, int]],
    llm: Sequence[tuple[str, int]],
    facet: str,
) -> ConfusionMatrix:
    """Joint counts of (human score, llm score) over identically keyed pairs."""
    h_by_id = dict(human)
    g_by_id = dict(llm)
    if len(h_by_id) != len(human) or len(g_by_id) != len(llm):
        raise ValueError("duplicate pair ids in input")
    missing_h = sorted(set(g_by_id) - set(h_by_id))
    missing_g = sorted(set(h_by_id) - set(g_by_id))
    if missing_h or missing_g:
        raise ValueError(
            f"pair id mismatch: missing from human {missing_h[:10]}, missing from llm {missing_g[:10]}"
        )
    grid = [[0] * N_GRADES for _ in range(N_GRADES)]
    for pid, h in h_by_id.items():
        g = g_by_id[pid]
        if not (0 <= h < N_GRADES and 0 <= g < N_GRADES):
            raise ValueError(f"pair {pid}: score out of range ({h}, {g})")
        grid[h][g] += 1
    return ConfusionMatrix(facet=facet, counts=tuple(tuple(r) for r in grid))


@dataclass
class PatternCounts:
    """Cross-facet score patterns over raw 0-3 labels."""

    n: int
    cross_domain_same_method: int   # bg <= 1 and mt >= 2
    same_domain_different_method: int  # bg >= 2 and mt <= 1

    @property
    def cross_domain_same_method_frac(self) -> float:
        return self.cross_domain_same_method / self.n

    @property
    def same_domain_different_method_frac(self) -> float:
        return self.same_domain_different_method / self.n


def pattern_counts(labels: Sequence[LabeledPair]) -> PatternCounts:
    if not labels:
        raise ValueError("labels must be non-empty")
    cdsm = sum(1 for lp in labels if lp.background.score <= 1 and lp.method.score >= 2)
    sddm = sum(1 for lp in labels if lp.background.score >= 2 and lp.method.score <= 1)
    return PatternCounts(
        n=len(labels),
        cross_domain_same_method=cdsm,
        same_domain_different_method=sddm,
    )


@dataclass(frozen=True)
class Disagreement:
    pair_id: str
    bg_delta: int
    mt_delta: int

    @property
    def max_delta(self) -> int:
        return max(self.bg_delta, self.mt_delta)


def disagreement_report(
    human: Mapping[str, tuple[int, int]],
    llm: Mapping[str, tuple[int, int]],
    threshold: int,
) -> list[Disagreement]:
    """Pairs where |human - llm| >= threshold on at least one facet.

    Sorted by max delta descending, ties by pair_id.
    """
    if set(human) != set(llm):
        raise ValueError("human and llm inputs must cover identical pair ids")
    flagged = []
    for pid in human:
        bg_d = abs(human[pid][0] - llm[pid][0])
        mt_d = abs(human[pid][1] - llm[pid][1])
        if bg_d >= threshold or mt_d >= threshold:
            flagged.append(Disagreement(pair_id=pid, bg_delta=bg_d, mt_delta=mt_d))
    return sorted(flagged, key=lambda d: (-d.max_delta, d.pair_id))


# ---------------------------------------------------------------------------
# Packaged 100-pair audit fixture
# ---------------------------------------------------------------------------

def load_audit_counts() -> dict[str, ConfusionMatrix]:
    """Joint counts from the packaged 100-pair human-vs-LLM audit sample."""
    data = json.loads(
        resources.files("facetrank").joinpath("data/human_llm_audit_counts.json").read_text()
    )
    return {
        BACKGROUND: ConfusionMatrix(BACKGROUND, tuple(tuple(r) for r in data["background"])),
        METHOD: ConfusionMatrix(METHOD, tuple(tuple(r) for r in data["method"])),
    }


def reconstruct_audit_pairs(
    big_delta_overlap: int = 7,
) -> tuple[dict[str, tuple[int, int]], dict[str, tuple[int, int]]]:
    """Rebuild per-pair audit records consistent with the packaged counts.

    Facet-level statistics depend only on each facet's joint counts, which
    are preserved exactly. The cross-facet pairing is otherwise free; the
    default overlap of 7 pairs flagged (delta >= 2) on both facets makes the
    threshold-2 disagreement report cover 38 of the 100 pairs, matching the
    audited sample.
    """
    cms = load_audit_counts()
    bg_tuples = _expanded_tuples(cms[BACKGROUND])
    mt_tuples = _expanded_tuples(cms[METHOD])
    bg_big = [t for t in bg_tuples if abs(t[0] - t[1]) >= 2]
    bg_small = [t for t in bg_tuples if abs(t[0] - t[1]) < 2]
    mt_big = [t for t in mt_tuples if abs(t[0] - t[1]) >= 2]
    mt_small = [t for t in mt_tuples if abs(t[0] - t[1]) < 2]
    if big_delta_overlap > min(len(bg_big), len(mt_big)):
        raise ValueError("requested overlap exceeds available big-delta pairs")
    bg_order = bg_big + bg_small
    gap = len(bg_big) - big_delta_overlap
    mt_order = mt_big[:big_delta_overlap] + mt_small[:gap] + mt_big[big_delta_overlap:] + mt_small[gap:]
    human: dict[str, tuple[int, int]] = {}
    llm: dict[str, tuple[int, int]] = {}
    for i, ((bh, bg_), (mh, mg)) in enumerate(zip(bg_order, mt_order)):
        pid = f"pair_{i:03d}"
        human[pid] = (bh, mh)
        llm[pid] = (bg_, mg)
    return human, llm


def _expanded_tuples(cm: ConfusionMatrix) -> list[tuple[int, int]]:
    out = []
    for h in range(N_GRADES):
        for g in range(N_GRADES):
            out.extend([(h, g)] * cm.counts[h][g])
    return out


def read_human_labels(path) -> dict[str, tuple[int, int]]:
    """Load a pair_id/bg_score/mt_score side file (JSONL)."""
    from ._util import read_jsonl

    out = {}
    for lineno, obj in read_jsonl(path):
        pid = obj["pair_id"]
        if pid in out:
            raise ValueError(f"line {lineno}: duplicate pair_id {pid}")
        out[pid] = (int(obj["bg_score"]), int(obj["mt_score"]))
    return out


def pair_key(seed_id: str, candidate_id: str) -> str:
    return f"{seed_id}::{candidate_id}"


def labels_to_pair_scores(labels: Sequence[LabeledPair]) -> dict[str, tuple[int, int]]:
    return {
        pair_key(lp.seed_id, lp.candidate_id): (lp.background.score, lp.method.score)
        for lp in labels
    }


# ---------------------------------------------------------------------------
# Report emitters
# ---------------------------------------------------------------------------

def confusion_markdown(cm: ConfusionMatrix) -> str:
    lines = [
        f"| human \\ llm | 0 | 1 | 2 | 3 |",
        "| --- | --- | --- | --- | --- |",
    ]
    for h in range(N_GRADES):
        cells = " | ".join(str(cm.counts[h][g]) for g in range(N_GRADES))
        lines.append(f"| {h} | {cells} |")
    return "\n".join(lines)


def confusion_csv(cm: ConfusionMatrix) -> str:
    buf = io.StringIO()
    w = csv.writer(buf)
    w.writerow(["human\\llm", 0, 1, 2, 3])
    for h in range(N_GRADES):
        w.writerow([h, *cm.counts[h]])
    return buf.getvalue()


def agreement_report(
    human: Mapping[str, tuple[int, int]],
    llm: Mapping[str, tuple[int, int]],
    disagreement_threshold: int = 2,
) -> dict:
    """Full agreement report over aligned human/llm pair scores."""
    facet_idx = {BACKGROUND: 0, METHOD: 1}
    report: dict = {"n": len(human), "facets": {}}
    for facet, idx in facet_idx.items():
        h_pairs = [(pid, scores[idx]) for pid, scores in human.items()]
        g_pairs = [(pid, scores[idx]) for pid, scores in llm.items()]
        cm = confusion_matrix(h_pairs, g_pairs, facet)
        report["facets"][facet] = {
            "confusion": [list(r) for r in cm.counts],
            "human_marginal": list(cm.row_sums()),
            "llm_marginal": list(cm.col_sums()),
            "spearman": cm.rank_agreement(),
        }
    flagged = disagreement_report(human, llm, disagreement_threshold)
    report["disagreements"] = {
        "threshold": disagreement_threshold,
        "count": len(flagged),
        "pairs": [
            {"pair_id": d.pair_id, "bg_delta": d.bg_delta, "mt_delta": d.mt_delta}
            for d in flagged
        ],
    }
    return report


def agreement_report_markdown(report: dict) -> str:
    parts = [f"# Annotation agreement report (n={report['n']})", ""]
    for facet, stats in report["facets"].items():
        cm = ConfusionMatrix(facet, tuple(tuple(r) for r in stats["confusion"]))
        parts += [
            f"## {facet}",
            "",
            f"Spearman rho (tie-aware): {stats['spearman']:.4f}",
            "",
            confusion_markdown(cm),
            "",
        ]
    d = report["disagreements"]
    parts += [
        f"## Disagreements (|delta| >= {d['threshold']} on either facet): {d['count']} pairs",
        "",
    ]
    for p in d["pairs"]:
        parts.append(f"- {p['pair_id']}: bg_delta={p['bg_delta']}, mt_delta={p['mt_delta']}")
    return "\n".join(parts) + "\n"


def expand_to_spearman(cm: ConfusionMatrix) -> float:
    """Expanded-list route to the same statistic (testing oracle)."""
    h, g = cm.expand()
    return spearman(h, g)
