"""LLM facet labeling for seed-candidate pairs.

Sends the scoring rubric plus both papers' title/abstract to a
chat-completion model at temperature 0, validates the structured JSON
reply strictly, and caches results by prompt hash so reruns are free.
"""

from __future__ import annotations

import dataclasses
import json
import os
import random
import re
import threading
import time
import urllib.request
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path
from typing import Callable, Protocol, Sequence

from . import BACKGROUND, METHOD
from ._util import RateLimiter, sha256_text, utc_now_iso
from .corpus import CandidatePool, Paper

RUBRIC_SYSTEM_PROMPT = (
    'You will score similarity between a Seed paper and a Candidate paper \n'
    'on TWO INDEPENDENT facets (0-3):\n'
    '- Background = similarity of research problem/task (WHAT)\n'
    '- Method = similarity of technical approach (HOW), DOMAIN-INDEPENDENT\n'
    '\n'
    'CRITICAL:\n'
    '- Method is DOMAIN-INDEPENDENT. Same technique across different domains \n'
    '  can still be Method=3.\n'
    '- Do NOT mix facets: task/goal -> Background; \n'
    '  technique/architecture/training paradigm -> Method.\n'
    '- Be conservative: if unsure, choose the LOWER score.\n'
    '\n'
    '---\n'
    'BACKGROUND (0-3) = WHAT problem/task is solved?\n'
    '- 3: Same exact task/objective \n'
    '     (e.g., NER vs NER; node classification vs node classification)\n'
    '- 2: Closely related tasks in same sub-area \n'
    '     (e.g., node classification vs link prediction; MT vs summarization)\n'
    '- 1: Same ML problem type but different application domains/communities \n'
    '     (e.g., NLP vs CV; molecules vs social networks)\n'
    '- 0: Separated research communities / unrelated problems\n'
    '\n'
    'METHOD (0-3) = HOW is it solved? (IGNORE domain!)\n'
    '- 3: Same core architecture/technique, including direct variants or \n'
    '     improvements that keep the same fundamental approach \n'
    '     (e.g., GCN, MBGCN, GCN+attention all count as "GCN"; \n'
    '      BERT, RoBERTa, ALBERT all count as "BERT")\n'
    '- 2: Same method family but different core architectures \n'
    '     (e.g., GCN vs GraphSAGE; BERT vs GPT; ResNet vs VGG)\n'
    '- 1: ONLY if you can NAME a specific shared core mechanism \n'
    '     (NOT generic "deep learning"/"attention"/"embedding"). \n'
    '     Examples: contrastive learning, message passing, diffusion models, \n'
    '     policy gradient RL, meta-learning\n'
    '- 0: Fundamentally different approaches OR method not clearly stated\n'
    '\n'
    'EDGE RULES:\n'
    '- If abstract does NOT clearly state method/technique -> Method=0\n'
    '- If multiple methods are mentioned -> score the PRIMARY method only\n'
    '\n'
    '---\n'
    'OUTPUT (JSON only, no extra text):\n'
    '{\n'
    '  "background": {"score": 0-3, "reason": "Compare problems/tasks."},\n'
    '  "method": {"score": 0-3, "reason": "Compare techniques, ignoring domain."}\n'
    '}\n'
    '\n'
    '---\n'
    'CRITICAL EXAMPLES:\n'
    '\n'
    'Example 1 [Cross-domain, same method]:\n'
    'Seed: "Graph Convolutional Networks for molecular property prediction"\n'
    'Candidate: "Graph Convolutional Networks for social network analysis"\n'
    '-> Background: 1 (both prediction, different domains)\n'
    '-> Method: 3 (both use GCN)\n'
    '\n'
    'Example 2 [Same task, no shared method]:\n'
    'Seed: "BERT for named entity recognition"\n'
    'Candidate: "CRF-based named entity recognition"\n'
    '-> Background: 3 (same task: NER)\n'
    '-> Method: 0 (BERT vs CRF, no shared mechanism)\n'
    '\n'
    'Example 3 [Method variants = Method 3]:\n'
    'Seed: "Graph Convolutional Networks for node classification"\n'
    'Candidate: "Multi-view Block-wise GCN for node classification"\n'
    '-> Background: 3 (same task)\n'
    '-> Method: 3 (MBGCN is a direct variant of GCN)\n'
    '\n'
    'Example 4 [Method family = Method 2]:\n'
    'Seed: "Graph Convolutional Networks for node classification"\n'
    'Candidate: "GraphSAGE for node classification"\n'
    '-> Background: 3 (same task)\n'
    '-> Method: 2 (GCN vs GraphSAGE are same family, different architectures)\n'
    '\n'
    '---\n'
    'Reminder:\n'
    '- Variant/improvement of same architecture -> Method = 3\n'
    '- Same family but different architecture -> Method = 2\n'
    '- Same technique + different domain -> Method can be 3; Background often 1\n'
)

USER_TEMPLATE = (
    "Seed:\n"
    "Title: {seed_title}\n"
    "Abstract: {seed_abstract}\n"
    "\n"
    "Candidate:\n"
    "Title: {cand_title}\n"
    "Abstract: {cand_abstract}\n"
)


@dataclass(frozen=True)
class FacetLabel:
    facet: str
    score: int
    reason: str

    def __post_init__(self):
        if self.facet not in (BACKGROUND, METHOD):
            raise ValueError(f"unknown facet {self.facet!r}")
        if not isinstance(self.score, int) or isinstance(self.score, bool):
            raise ValueError(f"score must be an integer, got {self.score!r}")
        if not 0 <= self.score <= 3:
            raise ValueError(f"score out of range 0-3: {self.score}")
        if not self.reason.strip():
            raise ValueError("reason must be non-empty")


@dataclass(frozen=True)
class LabeledPair:
    seed_id: str
    candidate_id: str
    background: FacetLabel
    method: FacetLabel
    annotator_meta: dict

    def __post_init__(self):
        if self.background.facet != BACKGROUND:
            raise ValueError("background label carries wrong facet")
        if self.method.facet != METHOD:
            raise ValueError("method label carries wrong facet")

    def score(self, facet: str) -> int:
        return self.background.score if facet == BACKGROUND else self.method.score

    def to_dict(self) -> dict:
        return {
            "seed_id": self.seed_id,
            "candidate_id": self.candidate_id,
            "bg_score": self.background.score,
            "bg_reason": self.background.reason,
            "mt_score": self.method.score,
            "mt_reason": self.method.reason,
            "annotator_meta": self.annotator_meta,
        }

    @classmethod
    def from_dict(cls, d: dict) -> "LabeledPair":
        return cls(
            seed_id=d["seed_id"],
            candidate_id=d["candidate_id"],
            background=FacetLabel(BACKGROUND, int(d["bg_score"]), d["bg_reason"]),
            method=FacetLabel(METHOD, int(d["mt_score"]), d["mt_reason"]),
            annotator_meta=d.get("annotator_meta", {}),
        )


def build_prompt(seed: Paper, candidate: Paper) -> tuple[str, str]:
    """Return (system, user) messages for one pair. Deterministic."""
    user = USER_TEMPLATE.format(
        seed_title=seed.title,
        seed_abstract=seed.abstract,
        cand_title=candidate.title,
        cand_abstract=candidate.abstract,
    )
    return RUBRIC_SYSTEM_PROMPT, user


def prompt_hash(system: str, user: str, model: str, temperature: float) -> str:
    return sha256_text(f"{system}\x00{user}\x00{model}\x00{temperature}")


class ParseError(ValueError):
    """Raised when a model reply violates the output schema.

    category is one of: not-json, extra-text, schema, out-of-range,
    missing-reason. The retry policy keys off it.
    """

    def __init__(self, category: str, message: str):
        super().__init__(f"{category}: {message}")
        self.category = category


_FENCE_RE = re.compile(r"^```[a-zA-Z0-9_-]*\s*\n(.*?)\n?```\s*$", re.DOTALL)


def _strip_fences(raw: str) -> str:
    m = _FENCE_RE.match(raw.strip())
    return m.group(1) if m else raw


def _facet_from_obj(obj: dict, key: str, facet: str) -> FacetLabel:
    if key not in obj:
        raise ParseError("schema", f"missing {key!r} object")
    sub = obj[key]
    if not isinstance(sub, dict):
        raise ParseError("schema", f"{key!r} is not an object")
    extra = set(sub) - {"score", "reason"}
    if extra:
        raise ParseError("schema", f"unexpected keys in {key!r}: {sorted(extra)}")
    if "score" not in sub:
        raise ParseError("schema", f"missing {key}.score")
    score = sub["score"]
    if isinstance(score, bool) or not isinstance(score, int):
        raise ParseError("schema", f"{key}.score is not an integer: {score!r}")
    if not 0 <= score <= 3:
        raise ParseError("out-of-range", f"{key}.score={score} outside 0-3")
    reason = sub.get("reason")
    if not isinstance(reason, str) or not reason.strip():
        raise ParseError("missing-reason", f"{key}.reason absent or empty")
    return FacetLabel(facet=facet, score=score, reason=reason)


def parse_annotation(raw: str) -> tuple[FacetLabel, FacetLabel]:
    """Parse one model reply into (background, method) labels.

    Accepts a single JSON object, optionally wrapped in a markdown fence
    and surrounding whitespace; everything else is rejected with a ParseError.
    """
    text = _strip_fences(raw).strip()
    try:
        obj, end = json.JSONDecoder().raw_decode(text)
    except json.JSONDecodeError as exc:
        raise ParseError("not-json", exc.msg) from exc
    if text[end:].strip():
        raise ParseError("extra-text", f"trailing content after JSON: {text[end:][:80]!r}")
    if not isinstance(obj, dict):
        raise ParseError("schema", "reply is not a JSON object")
    extra = set(obj) - {"background", "method"}
    if extra:
        raise ParseError("schema", f"unexpected top-level keys: {sorted(extra)}")
    bg = _facet_from_obj(obj, "background", BACKGROUND)
    mt = _facet_from_obj(obj, "method", METHOD)
    return bg, mt


def serialize_annotation(bg: FacetLabel, mt: FacetLabel) -> str:
    return json.dumps(
        {
            "background": {"score": bg.score, "reason": bg.reason},
            "method": {"score": mt.score, "reason": mt.reason},
        },
        ensure_ascii=False,
    )


class ChatClient(Protocol):
    model: str

    def complete(self, system: str, user: str, temperature: float) -> str: ...


class HttpChatClient:
    """OpenAI-compatible chat-completions client (key via environment)."""

    def __init__(
        self,
        model: str,
        base_url: str = "https://api.openai.com/v1",
        api_key_env: str = "OPENAI_API_KEY",
        timeout: float = 60.0,
        transport: Callable[[str, dict, bytes, float], tuple[int, bytes]] | None = None,
    ):
        self.model = model
        self.base_url = base_url.rstrip("/")
        self.api_key = os.environ.get(api_key_env, "")
        self.timeout = timeout
        self.transport = transport or self._urllib_post

    @staticmethod
    def _urllib_post(url: str, headers: dict, body: bytes, timeout: float) -> tuple[int, bytes]:
        req = urllib.request.Request(url, data=body, headers=headers, method="POST")
        with urllib.request.urlopen(req, timeout=timeout) as resp:
            return resp.status, resp.read()

    def complete(self, system: str, user: str, temperature: float) -> str:
        body = json.dumps(
            {
                "model": self.model,
                "temperature": temperature,
                "messages": [
                    {"role": "system", "content": system},
                    {"role": "user", "content": user},
                ],
            }
        ).encode("utf-8")
        headers = {"Content-Type": "application/json"}
        if self.api_key:
            headers["Authorization"] = f"Bearer {self.api_key}"
        status, payload = self.transport(f"{self.base_url}/chat/completions", headers, body, self.timeout)
        if status != 200:
            raise RuntimeError(f"chat completion failed: HTTP {status}")
        data = json.loads(payload.decode("utf-8"))
        return data["choices"][0]["message"]["content"]


class AnnotationError(RuntimeError):
    def __init__(self, message: str, last_raw: str = ""):
        super().__init__(message)
        self.last_raw = last_raw


class LabelStore:
    """Append-only JSONL store keyed by (prompt hash, model).

    Single-writer: all appends go through one lock; readers get snapshots.
    """

    def __init__(self, path: str | Path | None = None):
        self.path = Path(path) if path else None
        self._by_key: dict[str, LabeledPair] = {}
        self._lock = threading.Lock()
        if self.path and self.path.exists():
            with open(self.path, "r", encoding="utf-8") as f:
                for line in f:
                    line = line.strip()
                    if not line:
                        continue
                    pair = LabeledPair.from_dict(json.loads(line))
                    key = pair.annotator_meta.get("prompt_hash", "")
                    if key:
                        self._by_key[key] = pair

    def get(self, key: str) -> LabeledPair | None:
        with self._lock:
            return self._by_key.get(key)

    def put(self, key: str, pair: LabeledPair) -> None:
        with self._lock:
            if key in self._by_key:
                return
            self._by_key[key] = pair
            if self.path:
                self.path.parent.mkdir(parents=True, exist_ok=True)
                with open(self.path, "a", encoding="utf-8") as f:
                    f.write(json.dumps(pair.to_dict(), ensure_ascii=False, sort_keys=True) + "\n")

    def snapshot(self) -> list[LabeledPair]:
        with self._lock:
            return list(self._by_key.values())


def annotate_pair(
    seed: Paper,
    candidate: Paper,
    client: ChatClient,
    store: LabelStore | None = None,
    max_attempts: int = 3,
    temperature: float = 0.0,
    clock: Callable[[], str] | None = utc_now_iso,
    sleep: Callable[[float], None] = time.sleep,
) -> LabeledPair:
    """Label one pair, retrying on malformed replies; cache short-circuits.

    Exhausted retries raise AnnotationError carrying the last raw reply.
    """
    system, user = build_prompt(seed, candidate)
    key = prompt_hash(system, user, client.model, temperature)
    if store is not None:
        cached = store.get(key)
        if cached is not None:
            # Textually identical pairs share one cache entry; rebind ids.
            if (cached.seed_id, cached.candidate_id) != (seed.paper_id, candidate.paper_id):
                return dataclasses.replace(
                    cached, seed_id=seed.paper_id, candidate_id=candidate.paper_id
                )
            return cached
    rng = random.Random(key)
    last_raw = ""
    last_err = ""
    for attempt in range(max_attempts):
        try:
            last_raw = client.complete(system, user, temperature)
            bg, mt = parse_annotation(last_raw)
        except ParseError as exc:
            last_err = str(exc)
        except (OSError, RuntimeError) as exc:
            last_err = f"transport: {exc}"
        else:
            pair = LabeledPair(
                seed_id=seed.paper_id,
                candidate_id=candidate.paper_id,
                background=bg,
                method=mt,
                annotator_meta={
                    "model": client.model,
                    "temperature": temperature,
                    "prompt_hash": key,
                    "timestamp": clock() if clock else "",
                },
            )
            if store is not None:
                store.put(key, pair)
            return pair
        if attempt + 1 < max_attempts:
            sleep(0.25 * (2**attempt) * (1 + rng.random()))
    raise AnnotationError(
        f"pair ({seed.paper_id}, {candidate.paper_id}) failed after {max_attempts} attempts: {last_err}",
        last_raw=last_raw,
    )


@dataclass
class AnnotationReport:
    labels: list[LabeledPair]
    errors: list[dict] = field(default_factory=list)
    cache_hits: int = 0


def annotate_corpus(
    pools: Sequence[CandidatePool],
    client: ChatClient,
    store: LabelStore | None = None,
    max_attempts: int = 3,
    temperature: float = 0.0,
    parallelism: int = 1,
    max_per_second: float | None = None,
    clock: Callable[[], str] | None = utc_now_iso,
    sleep: Callable[[float], None] = time.sleep,
) -> AnnotationReport:
    """Label every (seed, candidate) pair across pools.

    One failure never aborts the batch; failures land in the error report.
    Output order is pool order then candidate order, independent of worker
    scheduling, so runs with a deterministic client are byte-identical.
    max_per_second throttles outbound calls (leave None for local clients).
    """
    if store is None:
        store = LabelStore()
    tasks = [(pool.seed, cand) for pool in pools for cand in pool.candidates]
    cached_keys = set()
    for seed, cand in tasks:
        system, user = build_prompt(seed, cand)
        key = prompt_hash(system, user, client.model, temperature)
        if store.get(key) is not None:
            cached_keys.add(key)
    limiter = RateLimiter(max_per_second) if max_per_second else None

    def one(task: tuple[Paper, Paper]) -> LabeledPair | dict:
        seed, cand = task
        system, user = build_prompt(seed, cand)
        key = prompt_hash(system, user, client.model, temperature)
        if limiter is not None and store.get(key) is None:
            limiter.acquire()
        try:
            return annotate_pair(
                seed, cand, client, store=store,
                max_attempts=max_attempts, temperature=temperature,
                clock=clock, sleep=sleep,
            )
        except AnnotationError as exc:
            return {
                "seed_id": seed.paper_id,
                "candidate_id": cand.paper_id,
                "error": str(exc),
                "last_raw": exc.last_raw[:500],
            }

    report = AnnotationReport(labels=[], cache_hits=len(cached_keys))
    if parallelism <= 1:
        results = [one(t) for t in tasks]
    else:
        with ThreadPoolExecutor(max_workers=parallelism) as ex:
            results = list(ex.map(one, tasks))
    for res in results:
        if isinstance(res, LabeledPair):
            report.labels.append(res)
        else:
            report.errors.append(res)
    return report


def write_labels(path: str | Path, labels: Sequence[LabeledPair]) -> int:
    from ._util import write_jsonl

    return write_jsonl(path, (lp.to_dict() for lp in labels))


def read_labels(path: str | Path) -> list[LabeledPair]:
    from ._util import read_jsonl

    return [LabeledPair.from_dict(obj) for _, obj in read_jsonl(path)]
