"""Deterministic synthetic corpora for offline runs and tests.

Every synthetic document carries one topic leaf from a three-level topic
tree (community > area > task) and one method leaf from a three-level
method tree (paradigm > family > architecture), embedded as literal tokens
in templated abstracts. True facet grades between two documents equal the
shared-prefix depth of the corresponding trees (0-3), which makes an
offline oracle annotator and probe construction exact.
"""

from __future__ import annotations

import json
import re
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np

from .annotate import serialize_annotation, FacetLabel
from . import BACKGROUND, METHOD
from .corpus import CandidatePool, Paper

TOPIC_RE = re.compile(r"\btask(\d+)_(\d+)_(\d+)\b")
METHOD_RE = re.compile(r"\barch(\d+)_(\d+)_(\d+)\b")

FILLERS = (
    "robustness", "scalability", "sparsity", "latency", "stability",
    "coverage", "efficiency", "drift", "imbalance", "noise",
    "generalization", "calibration", "redundancy", "throughput", "variance",
)

ABSTRACT_TEMPLATES = (
    (
        "we study {task} in the {area} setting of {community} . our approach builds on {arch} "
        "from the {family} line of {paradigm} methods , improving {f1} ."
    ),
    (
        "this paper addresses {task} , part of the {area} agenda in {community} . we propose a "
        "variant of {arch} , a {family} member of the {paradigm} school , targeting {f1} ."
    ),
    (
        "motivated by {f1} , we revisit {task} under the {area} setting of {community} . our "
        "method adapts {arch} , following the {family} branch of {paradigm} techniques ."
    ),
)

TITLE_TEMPLATE = "{arch} for {task}"


@dataclass(frozen=True)
class TreePath:
    """Leaf of a depth-3 labeled tree."""

    a: int
    b: int
    c: int

    def shared_depth(self, other: "TreePath") -> int:
        if self.a != other.a:
            return 0
        if self.b != other.b:
            return 1
        if self.c != other.c:
            return 2
        return 3


def topic_tokens(p: TreePath) -> tuple[str, str, str]:
    return (f"community{p.a}", f"area{p.a}_{p.b}", f"task{p.a}_{p.b}_{p.c}")


def method_tokens(p: TreePath) -> tuple[str, str, str]:
    return (f"paradigm{p.a}", f"family{p.a}_{p.b}", f"arch{p.a}_{p.b}_{p.c}")


@dataclass(frozen=True)
class SynthDoc:
    paper: Paper
    topic: TreePath
    method: TreePath


@dataclass
class SynthConfig:
    n_docs: int = 200
    n_seeds: int = 60
    pool_size: int = 12
    communities: int = 4
    areas_per_community: int = 2
    tasks_per_area: int = 2
    paradigms: int = 4
    families_per_paradigm: int = 2
    archs_per_family: int = 2
    rng_seed: int = 7
    id_prefix: str = "syn"

    def to_dict(self) -> dict:
        return dict(self.__dict__)


@dataclass
class SynthCorpus:
    docs: list[SynthDoc]
    pools: list[CandidatePool]
    config: SynthConfig
    by_id: dict[str, SynthDoc] = field(default_factory=dict)

    def __post_init__(self):
        self.by_id = {d.paper.paper_id: d for d in self.docs}

    def papers(self) -> list[Paper]:
        return [d.paper for d in self.docs]

    def true_grades(self, seed_id: str, cand_id: str) -> tuple[int, int]:
        s, c = self.by_id[seed_id], self.by_id[cand_id]
        return s.topic.shared_depth(c.topic), s.method.shared_depth(c.method)


def _make_doc(
    index: int, topic: TreePath, method: TreePath, rng: np.random.Generator, id_prefix: str = "syn"
) -> SynthDoc:
    t_tokens = topic_tokens(topic)
    m_tokens = method_tokens(method)
    template = ABSTRACT_TEMPLATES[int(rng.integers(len(ABSTRACT_TEMPLATES)))]
    f1, f2 = rng.choice(len(FILLERS), size=2, replace=False)
    abstract = template.format(
        community=t_tokens[0],
        area=t_tokens[1],
        task=t_tokens[2],
        paradigm=m_tokens[0],
        family=m_tokens[1],
        arch=m_tokens[2],
        f1=FILLERS[f1],
        f2=FILLERS[f2],
    )
    title = TITLE_TEMPLATE.format(arch=m_tokens[2], task=t_tokens[2])
    paper = Paper(paper_id=f"{id_prefix}{index:04d}", title=title, abstract=abstract)
    return SynthDoc(paper=paper, topic=topic, method=method)


def _random_path(rng: np.random.Generator, n_a: int, n_b: int, n_c: int) -> TreePath:
    return TreePath(
        a=int(rng.integers(n_a)), b=int(rng.integers(n_b)), c=int(rng.integers(n_c))
    )


def generate_corpus(cfg: SynthConfig | None = None) -> SynthCorpus:
    """Deterministic synthetic corpus with stratified candidate pools.

    Pools mix candidates drawn from each topic stratum and each method
    stratum of the seed so both facets carry a spread of grades.
    """
    cfg = cfg or SynthConfig()
    rng = np.random.default_rng(cfg.rng_seed)
    docs = [
        _make_doc(
            i,
            _random_path(rng, cfg.communities, cfg.areas_per_community, cfg.tasks_per_area),
            _random_path(rng, cfg.paradigms, cfg.families_per_paradigm, cfg.archs_per_family),
            rng,
            id_prefix=cfg.id_prefix,
        )
        for i in range(cfg.n_docs)
    ]
    if cfg.n_seeds > cfg.n_docs:
        raise ValueError("n_seeds cannot exceed n_docs")
    seed_idx = rng.choice(cfg.n_docs, size=cfg.n_seeds, replace=False)
    pools = []
    for si in sorted(int(i) for i in seed_idx):
        seed = docs[si]
        pool_docs = _stratified_pool(seed, docs, cfg.pool_size, rng)
        pools.append(
            CandidatePool(
                seed=seed.paper,
                candidates=tuple(d.paper for d in pool_docs),
                provenance={"source": "synthetic", "rng_seed": cfg.rng_seed},
            )
        )
    return SynthCorpus(docs=docs, pools=pools, config=cfg)


def _stratified_pool(
    seed: SynthDoc, docs: Sequence[SynthDoc], pool_size: int, rng: np.random.Generator
) -> list[SynthDoc]:
    def stratum(pred) -> list[SynthDoc]:
        return [
            d
            for d in docs
            if d.paper.paper_id != seed.paper.paper_id and pred(d)
        ]

    strata = [
        stratum(lambda d: d.topic.shared_depth(seed.topic) == 3),
        stratum(lambda d: d.topic.shared_depth(seed.topic) == 2),
        stratum(lambda d: d.topic.shared_depth(seed.topic) == 1),
        stratum(lambda d: d.method.shared_depth(seed.method) == 3),
        stratum(lambda d: d.method.shared_depth(seed.method) == 2),
        stratum(lambda d: d.method.shared_depth(seed.method) == 1),
        stratum(lambda d: True),
    ]
    chosen: list[SynthDoc] = []
    chosen_ids: set[str] = set()
    slot = 0
    while len(chosen) < pool_size:
        pool = [d for d in strata[slot % len(strata)] if d.paper.paper_id not in chosen_ids]
        if not pool:
            pool = [
                d
                for d in strata[-1]
                if d.paper.paper_id not in chosen_ids
            ]
            if not pool:
                break
        pick = pool[int(rng.integers(len(pool)))]
        chosen.append(pick)
        chosen_ids.add(pick.paper.paper_id)
        slot += 1
    return chosen


class SyntheticOracleClient:
    """Offline annotator that reads the embedded tree tokens from the prompt.

    Emits exactly the structured JSON reply the parser expects, so the
    entire annotation path (prompting, parsing, caching) runs unchanged
    with no network.
    """

    model = "synthetic-oracle"

    def complete(self, system: str, user: str, temperature: float) -> str:
        seed_part, _, cand_part = user.partition("Candidate:")
        bg = self._facet_score(TOPIC_RE, seed_part, cand_part)
        mt = self._facet_score(METHOD_RE, seed_part, cand_part)
        bg_label = FacetLabel(BACKGROUND, bg, f"shared topic depth {bg} of 3")
        mt_label = FacetLabel(METHOD, mt, f"shared method depth {mt} of 3")
        return serialize_annotation(bg_label, mt_label)

    @staticmethod
    def _facet_score(pattern: re.Pattern, seed_text: str, cand_text: str) -> int:
        ms, mc = pattern.search(seed_text), pattern.search(cand_text)
        if ms is None or mc is None:
            return 0
        s = TreePath(*(int(g) for g in ms.groups()))
        c = TreePath(*(int(g) for g in mc.groups()))
        return s.shared_depth(c)


@dataclass(frozen=True)
class ProbePair:
    """Seed plus two contrast candidates isolating one facet each.

    same_topic shares the seed's exact task but uses an unrelated method;
    same_method shares the seed's exact architecture on an unrelated topic.
    A background model should prefer same_topic, a method model same_method.
    """

    seed: Paper
    same_topic: Paper
    same_method: Paper


def make_probes(cfg: SynthConfig, n_probes: int, rng_seed: int = 991) -> list[ProbePair]:
    rng = np.random.default_rng(rng_seed)
    probes = []
    for i in range(n_probes):
        topic = _random_path(rng, cfg.communities, cfg.areas_per_community, cfg.tasks_per_area)
        method = _random_path(rng, cfg.paradigms, cfg.families_per_paradigm, cfg.archs_per_family)
        other_topic = TreePath(
            a=int((topic.a + 1 + rng.integers(cfg.communities - 1)) % cfg.communities),
            b=int(rng.integers(cfg.areas_per_community)),
            c=int(rng.integers(cfg.tasks_per_area)),
        )
        other_method = TreePath(
            a=int((method.a + 1 + rng.integers(cfg.paradigms - 1)) % cfg.paradigms),
            b=int(rng.integers(cfg.families_per_paradigm)),
            c=int(rng.integers(cfg.archs_per_family)),
        )
        seed = _make_doc(9000 + 3 * i, topic, method, rng, id_prefix="probe")
        cand_topic = _make_doc(9001 + 3 * i, topic, other_method, rng, id_prefix="probe")
        cand_method = _make_doc(9002 + 3 * i, other_topic, method, rng, id_prefix="probe")
        probes.append(
            ProbePair(
                seed=seed.paper,
                same_topic=cand_topic.paper,
                same_method=cand_method.paper,
            )
        )
    return probes


def corpus_texts(corpus: SynthCorpus) -> list[str]:
    return [d.paper.title for d in corpus.docs] + [d.paper.abstract for d in corpus.docs]


# ---------------------------------------------------------------------------
# Fixture benchmark (graded-relevance pools in the generic benchmark schema)
# ---------------------------------------------------------------------------

def build_fixture_benchmark(rng_seed: int = 123) -> list[dict]:
    """Six benchmark queries (3 per facet) over fresh synthetic documents.

    Relevance grades are the true tree-overlap depths, so a perfect facet
    scorer attains NDCG 1.0 while the other facet's grades stay decoupled.
    """
    cfg = SynthConfig(n_docs=90, n_seeds=6, pool_size=10, rng_seed=rng_seed, id_prefix="bench")
    corpus = generate_corpus(cfg)
    rows = []
    for qi, pool in enumerate(corpus.pools):
        facet = BACKGROUND if qi % 2 == 0 else METHOD
        entries = []
        for cand in pool.candidates:
            bg, mt = corpus.true_grades(pool.seed.paper_id, cand.paper_id)
            entries.append(
                {
                    "paper_id": cand.paper_id,
                    "title": cand.title,
                    "abstract": cand.abstract,
                    "relevance": bg if facet == BACKGROUND else mt,
                }
            )
        rows.append(
            {
                "query_id": f"q{qi:02d}",
                "facet": facet,
                "title": pool.seed.title,
                "abstract": pool.seed.abstract,
                "pool": entries,
            }
        )
    return rows


def write_fixture_benchmark(path, rng_seed: int = 123) -> int:
    from ._util import write_jsonl

    return write_jsonl(path, build_fixture_benchmark(rng_seed))
