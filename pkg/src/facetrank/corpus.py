"""Paper corpus: ingestion, recommendation fetching, pooling, stats.

Offline JSONL is the canonical corpus format; the network client is
optional so the whole pipeline can run from fixtures. Rejected records are
reported, never silently dropped.
"""

from __future__ import annotations

import json
import os
import random
import time
import urllib.error
import urllib.parse
import urllib.request
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path
from typing import Callable, Iterable, Sequence

import numpy as np

from ._util import RateLimiter, read_jsonl, utc_now_iso, write_jsonl

DOMAIN_TAGS = (
    "graph_neural_networks",
    "computer_vision",
    "nlp_text",
    "reinforcement_learning",
    "other",
)

# Method-oriented arXiv search keywords shipped as fetch-workflow defaults,
# grouped by the seed domain categories. User-overridable.
DEFAULT_SEED_KEYWORDS: dict[str, tuple[str, ...]] = {
    "graph_neural_networks": (
        "graph neural network",
        "graph convolutional network",
        "message passing neural network",
    ),
    "computer_vision": (
        "vision transformer",
        "convolutional neural network",
        "object detection",
    ),
    "nlp_text": (
        "transformer",
        "language model",
        "named entity recognition",
        "machine translation",
    ),
    "reinforcement_learning": (
        "policy gradient",
        "Q-learning",
        "actor-critic",
    ),
    "other": (
        "contrastive learning",
        "self-supervised learning",
        "diffusion model",
    ),
}


@dataclass(frozen=True)
class Paper:
    paper_id: str
    title: str
    abstract: str
    domain_tag: str | None = None

    def __post_init__(self):
        if not self.paper_id:
            raise ValueError("paper_id must be non-empty")
        if not self.title.strip():
            raise ValueError(f"paper {self.paper_id}: title must be non-empty")
        if not self.abstract.strip():
            raise ValueError(f"paper {self.paper_id}: abstract must be non-empty")
        if self.domain_tag is not None and self.domain_tag not in DOMAIN_TAGS:
            raise ValueError(
                f"paper {self.paper_id}: unknown domain_tag {self.domain_tag!r}"
            )

    def to_dict(self) -> dict:
        d = {"paper_id": self.paper_id, "title": self.title, "abstract": self.abstract}
        if self.domain_tag is not None:
            d["domain_tag"] = self.domain_tag
        return d


@dataclass(frozen=True)
class CandidatePool:
    seed: Paper
    candidates: tuple[Paper, ...]
    provenance: dict

    def __post_init__(self):
        ids = [c.paper_id for c in self.candidates]
        if len(set(ids)) != len(ids):
            raise ValueError(f"pool for {self.seed.paper_id}: duplicate candidate ids")
        if self.seed.paper_id in ids:
            raise ValueError(f"pool for {self.seed.paper_id}: seed appears in its own pool")


@dataclass
class RejectionEntry:
    line: int
    cause: str
    raw: str = ""


@dataclass
class IngestResult:
    papers: list[Paper]
    rejections: list[RejectionEntry] = field(default_factory=list)


def ingest_jsonl(path: str | Path, min_abstract_chars: int = 1) -> IngestResult:
    """Load papers from a JSONL file, collecting invalid records.

    An unreadable file raises; malformed lines become rejection entries with
    line number and cause. Duplicate paper_ids keep the first occurrence and
    reject the rest, so re-ingesting the same file is idempotent.
    """
    papers: list[Paper] = []
    rejections: list[RejectionEntry] = []
    seen: set[str] = set()
    with open(path, "r", encoding="utf-8") as f:
        for lineno, line in enumerate(f, start=1):
            raw = line.strip()
            if not raw:
                continue
            try:
                obj = json.loads(raw)
            except json.JSONDecodeError as exc:
                rejections.append(RejectionEntry(lineno, f"invalid JSON: {exc.msg}", raw[:200]))
                continue
            if not isinstance(obj, dict):
                rejections.append(RejectionEntry(lineno, "not a JSON object", raw[:200]))
                continue
            missing = [k for k in ("paper_id", "title", "abstract") if not obj.get(k)]
            if missing:
                rejections.append(
                    RejectionEntry(lineno, f"missing or empty field(s): {', '.join(missing)}", raw[:200])
                )
                continue
            if len(str(obj["abstract"]).strip()) < min_abstract_chars:
                rejections.append(RejectionEntry(lineno, "abstract below minimum length", raw[:200]))
                continue
            try:
                paper = Paper(
                    paper_id=str(obj["paper_id"]),
                    title=str(obj["title"]),
                    abstract=str(obj["abstract"]),
                    domain_tag=obj.get("domain_tag"),
                )
            except ValueError as exc:
                rejections.append(RejectionEntry(lineno, str(exc), raw[:200]))
                continue
            if paper.paper_id in seen:
                rejections.append(RejectionEntry(lineno, f"duplicate paper_id {paper.paper_id}", raw[:200]))
                continue
            seen.add(paper.paper_id)
            papers.append(paper)
    return IngestResult(papers=papers, rejections=rejections)


def write_papers(path: str | Path, papers: Iterable[Paper]) -> int:
    return write_jsonl(path, (p.to_dict() for p in papers))


def write_pools(path: str | Path, pools: Iterable[CandidatePool]) -> int:
    return write_jsonl(
        path,
        (
            {
                "seed_id": p.seed.paper_id,
                "candidate_ids": [c.paper_id for c in p.candidates],
                "provenance": p.provenance,
            }
            for p in pools
        ),
    )


def read_pools(path: str | Path, corpus: dict[str, Paper]) -> list[CandidatePool]:
    """Resolve a pools.jsonl file against an id-keyed corpus."""
    pools = []
    for lineno, obj in read_jsonl(path):
        seed_id = obj["seed_id"]
        if seed_id not in corpus:
            raise ValueError(f"line {lineno}: unknown seed id {seed_id}")
        missing = [c for c in obj["candidate_ids"] if c not in corpus]
        if missing:
            raise ValueError(f"line {lineno}: unknown candidate ids {missing}")
        pools.append(
            CandidatePool(
                seed=corpus[seed_id],
                candidates=tuple(corpus[c] for c in obj["candidate_ids"]),
                provenance=obj.get("provenance", {}),
            )
        )
    return pools


class FetchError(RuntimeError):
    def __init__(self, message: str, last_status: int | None = None):
        super().__init__(message)
        self.last_status = last_status


# transport: (url, headers, timeout) -> (status, body bytes)
Transport = Callable[[str, dict, float], tuple[int, bytes]]


def _urllib_transport(url: str, headers: dict, timeout: float) -> tuple[int, bytes]:
    req = urllib.request.Request(url, headers=headers)
    try:
        with urllib.request.urlopen(req, timeout=timeout) as resp:
            return resp.status, resp.read()
    except urllib.error.HTTPError as exc:
        return exc.code, exc.read()


class RecommendationClient:
    """Client for a paper-recommendation HTTP endpoint.

    GET {base_url}/{paper_id}?limit=N&fields=title,abstract with the API key
    (read from `api_key_env`) sent as the x-api-key header. The transport is
    injectable for tests.
    """

    def __init__(
        self,
        base_url: str = "https://api.semanticscholar.org/recommendations/v1/papers/forpaper",
        api_key_env: str = "S2_API_KEY",
        max_attempts: int = 4,
        backoff_base: float = 0.5,
        timeout: float = 30.0,
        transport: Transport | None = None,
        sleep: Callable[[float], None] = time.sleep,
    ):
        self.base_url = base_url.rstrip("/")
        self.api_key = os.environ.get(api_key_env, "")
        self.max_attempts = max_attempts
        self.backoff_base = backoff_base
        self.timeout = timeout
        self.transport = transport or _urllib_transport
        self.sleep = sleep
        self.source_name = "recommendations-api"

    def recommend(self, paper_id: str, limit: int) -> list[dict]:
        url = (
            f"{self.base_url}/{urllib.parse.quote(paper_id)}"
            f"?limit={limit}&fields=title,abstract"
        )
        headers = {"x-api-key": self.api_key} if self.api_key else {}
        last_status: int | None = None
        rng = random.Random(paper_id)
        for attempt in range(self.max_attempts):
            try:
                status, body = self.transport(url, headers, self.timeout)
            except OSError as exc:
                last_status = None
                err = str(exc)
            else:
                if status == 200:
                    payload = json.loads(body.decode("utf-8"))
                    return payload.get("recommendedPapers", payload.get("papers", []))
                last_status = status
                err = f"HTTP {status}"
            if attempt + 1 < self.max_attempts:
                self.sleep(self.backoff_base * (2**attempt) * (1 + rng.random()))
        raise FetchError(
            f"recommendation fetch for {paper_id} failed after {self.max_attempts} attempts: {err}",
            last_status=last_status,
        )


def fetch_recommendations(seed: Paper, limit: int, client: RecommendationClient) -> CandidatePool:
    """Retrieve up to `limit` recommended candidates for one seed.

    Drops records without title or abstract, removes duplicates and the seed
    itself, and records provenance. An empty response is an empty pool.
    """
    if limit < 1:
        raise ValueError("limit must be >= 1")
    records = client.recommend(seed.paper_id, limit)
    candidates: list[Paper] = []
    seen = {seed.paper_id}
    for rec in records:
        pid = str(rec.get("paperId") or rec.get("paper_id") or "")
        title = (rec.get("title") or "").strip()
        abstract = (rec.get("abstract") or "").strip()
        if not pid or pid in seen or not title or not abstract:
            continue
        seen.add(pid)
        candidates.append(Paper(paper_id=pid, title=title, abstract=abstract))
        if len(candidates) >= limit:
            break
    provenance = {"source": client.source_name, "retrieved_at": utc_now_iso(), "limit": limit}
    return CandidatePool(seed=seed, candidates=tuple(candidates), provenance=provenance)


def fetch_pools(
    seeds: Sequence[Paper],
    limit: int,
    client: RecommendationClient,
    parallelism: int = 4,
    max_per_second: float = 2.0,
) -> list[CandidatePool]:
    """Fetch pools for many seeds concurrently under a shared rate limit.

    Results are merged back in seed order regardless of completion order.
    """
    limiter = RateLimiter(max_per_second)

    def one(seed: Paper) -> CandidatePool:
        limiter.acquire()
        return fetch_recommendations(seed, limit, client)

    with ThreadPoolExecutor(max_workers=max(1, parallelism)) as pool:
        return list(pool.map(one, seeds))


@dataclass
class CorpusStats:
    seed_count: int
    pair_count: int
    seeds_per_domain: dict[str, int]
    abstract_length_percentiles: dict[str, float]

    def to_dict(self) -> dict:
        return {
            "seed_count": self.seed_count,
            "pair_count": self.pair_count,
            "seeds_per_domain": self.seeds_per_domain,
            "abstract_length_percentiles": self.abstract_length_percentiles,
        }

    def to_markdown(self) -> str:
        lines = [
            "| metric | value |",
            "| --- | --- |",
            f"| seeds | {self.seed_count} |",
            f"| seed-candidate pairs | {self.pair_count} |",
        ]
        for dom, n in sorted(self.seeds_per_domain.items()):
            lines.append(f"| seeds: {dom} | {n} |")
        for name, v in self.abstract_length_percentiles.items():
            lines.append(f"| abstract words {name} | {v:.0f} |")
        return "\n".join(lines)


def corpus_stats(pools: Sequence[CandidatePool]) -> CorpusStats:
    """Summarize seed count, pair count, per-domain seeds, abstract lengths.

    Each pool contributes exactly |candidates| pairs.
    """
    if not pools:
        raise ValueError("pools must be non-empty")
    per_domain: dict[str, int] = {}
    lengths: list[int] = []
    pair_count = 0
    for pool in pools:
        dom = pool.seed.domain_tag or "other"
        per_domain[dom] = per_domain.get(dom, 0) + 1
        pair_count += len(pool.candidates)
        lengths.append(len(pool.seed.abstract.split()))
        lengths.extend(len(c.abstract.split()) for c in pool.candidates)
    pcts = np.percentile(np.array(lengths, dtype=float), [10, 25, 50, 75, 90])
    return CorpusStats(
        seed_count=len(pools),
        pair_count=pair_count,
        seeds_per_domain=per_domain,
        abstract_length_percentiles={
            "p10": float(pcts[0]),
            "p25": float(pcts[1]),
            "p50": float(pcts[2]),
            "p75": float(pcts[3]),
            "p90": float(pcts[4]),
        },
    )
