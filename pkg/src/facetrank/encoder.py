"""Pair-text encoding and the per-facet scoring model.

The cross-encoder input is one token sequence covering both papers:

    [CLS] seed-title [SEP] seed-abstract [SEP] cand-title [SEP] cand-abstract [SEP]

When the sequence exceeds the token budget, abstract tails are trimmed,
longer abstract first; titles are never touched.
"""

from __future__ import annotations

import json
import re
from dataclasses import dataclass
from pathlib import Path
from typing import Sequence

import numpy as np

from . import validate_facet
from ._util import sha256_text, utc_now_iso
from .backbone import COMPACT_PROFILE, Backbone, CompactBackbone
from .corpus import Paper

PAD, CLS, SEP, UNK = 0, 1, 2, 3
SPECIAL_TOKENS = ("[PAD]", "[CLS]", "[SEP]", "[UNK]")

_TOKEN_RE = re.compile(r"[a-z0-9_]+")


def word_tokens(text: str) -> list[str]:
    """Lowercase word tokens; underscores bind, punctuation splits."""
    return _TOKEN_RE.findall(text.lower())


class Vocabulary:
    """Fixed token inventory with frequency-ranked ids after the specials."""

    def __init__(self, tokens: Sequence[str]):
        for t in tokens:
            if t in SPECIAL_TOKENS:
                raise ValueError(f"special token {t} cannot appear in the word list")
        self.id_by_token = {t: i for i, t in enumerate(SPECIAL_TOKENS)}
        for t in tokens:
            if t in self.id_by_token:
                raise ValueError(f"duplicate token {t}")
            self.id_by_token[t] = len(self.id_by_token)
        self.token_by_id = {i: t for t, i in self.id_by_token.items()}

    def __len__(self) -> int:
        return len(self.id_by_token)

    def id_of(self, token: str) -> int:
        return self.id_by_token.get(token, UNK)

    def token_of(self, idx: int) -> str:
        if idx == UNK:
            return "unk"
        return self.token_by_id[idx]

    @classmethod
    def build(cls, texts: Sequence[str], max_size: int | None = None, min_count: int = 1) -> "Vocabulary":
        """Frequency-ranked vocabulary; ties broken alphabetically.

        The literal word "unk" is never added: it always maps to the UNK id,
        which keeps decode/encode round trips stable.
        """
        counts: dict[str, int] = {}
        for text in texts:
            for tok in word_tokens(text):
                counts[tok] = counts.get(tok, 0) + 1
        counts.pop("unk", None)
        ranked = sorted(counts.items(), key=lambda kv: (-kv[1], kv[0]))
        tokens = [t for t, c in ranked if c >= min_count]
        if max_size is not None:
            tokens = tokens[: max(0, max_size - len(SPECIAL_TOKENS))]
        return cls(tokens)

    def save(self, path: str | Path) -> None:
        """One `token<TAB>rank` line per entry, rank = token id."""
        lines = [f"{self.token_by_id[i]}\t{i}" for i in range(len(self))]
        Path(path).write_text("\n".join(lines) + "\n", encoding="utf-8")

    @classmethod
    def load(cls, path: str | Path) -> "Vocabulary":
        tokens = []
        for lineno, line in enumerate(Path(path).read_text(encoding="utf-8").splitlines()):
            if not line.strip():
                continue
            token, rank = line.split("\t")
            if int(rank) != lineno:
                raise ValueError(f"vocabulary rank mismatch at line {lineno}: {line!r}")
            tokens.append(token)
        if tuple(tokens[:4]) != SPECIAL_TOKENS:
            raise ValueError("vocabulary file must start with the four special tokens")
        return cls(tokens[4:])

    def content_hash(self) -> str:
        return sha256_text("\n".join(self.token_by_id[i] for i in range(len(self))))


class WordTokenizer:
    """Whitespace/punctuation word-level tokenizer over a fixed vocabulary."""

    kind = "word-lower"

    def __init__(self, vocab: Vocabulary):
        self.vocab = vocab
        self.tokenizer_id = f"{self.kind}-{vocab.content_hash()[:12]}"

    def encode(self, text: str) -> list[int]:
        return [self.vocab.id_of(t) for t in word_tokens(text)]

    def decode(self, ids: Sequence[int]) -> str:
        return " ".join(self.vocab.token_of(i) for i in ids)


@dataclass(frozen=True)
class EncodedPair:
    """Tokenized cross-encoder input with exact truncation bookkeeping."""

    token_ids: tuple[int, ...]
    segment_offsets: tuple[tuple[int, int], ...]  # 4 (start, end) field spans
    truncation_report: dict[str, int]
    tokenizer_id: str

    def field_ids(self, index: int) -> tuple[int, ...]:
        start, end = self.segment_offsets[index]
        return self.token_ids[start:end]


FIELD_NAMES = ("seed_title", "seed_abstract", "cand_title", "cand_abstract")


def encode_pair(
    seed: Paper,
    candidate: Paper,
    tokenizer: WordTokenizer,
    max_tokens: int = 512,
) -> EncodedPair:
    """Assemble and budget-fit the four-field pair sequence.

    Over budget, abstract tails are trimmed one token at a time from the
    currently longer abstract (seed first on ties); titles are never cut.
    """
    fields = [
        tokenizer.encode(seed.title),
        tokenizer.encode(seed.abstract),
        tokenizer.encode(candidate.title),
        tokenizer.encode(candidate.abstract),
    ]
    structural = 5  # [CLS] + 4 [SEP]
    title_len = len(fields[0]) + len(fields[2])
    if title_len + structural > max_tokens:
        raise ValueError(
            f"titles plus structure ({title_len + structural} tokens) exceed budget {max_tokens}"
        )
    budget = max_tokens - title_len - structural
    keep_s, keep_c = len(fields[1]), len(fields[3])
    while keep_s + keep_c > budget:
        if keep_s >= keep_c:
            keep_s -= 1
        else:
            keep_c -= 1
    report = {
        "seed_title": 0,
        "seed_abstract": len(fields[1]) - keep_s,
        "cand_title": 0,
        "cand_abstract": len(fields[3]) - keep_c,
    }
    kept = [fields[0], fields[1][:keep_s], fields[2], fields[3][:keep_c]]
    ids: list[int] = [CLS]
    offsets = []
    for field in kept:
        start = len(ids)
        ids.extend(field)
        offsets.append((start, len(ids)))
        ids.append(SEP)
    return EncodedPair(
        token_ids=tuple(ids),
        segment_offsets=tuple(offsets),
        truncation_report=report,
        tokenizer_id=tokenizer.tokenizer_id,
    )


@dataclass
class FacetModel:
    """One facet's trained scorer: backbone + tokenizer + head settings."""

    facet: str
    backbone: Backbone
    tokenizer: WordTokenizer
    max_tokens: int = 512

    def __post_init__(self):
        self.facet = validate_facet(self.facet)

    @property
    def backbone_profile(self) -> str:
        return self.backbone.profile

    @property
    def tokenizer_id(self) -> str:
        return self.tokenizer.tokenizer_id

    def encode(self, seed: Paper, candidate: Paper) -> EncodedPair:
        return encode_pair(seed, candidate, self.tokenizer, self.max_tokens)


def score(
    model: FacetModel,
    pair: EncodedPair,
    mode: str = "infer",
    dropout_rng: np.random.Generator | None = None,
) -> float:
    """Scalar similarity score; infer mode is deterministic (no dropout)."""
    if pair.tokenizer_id != model.tokenizer_id:
        raise ValueError(
            f"tokenizer mismatch: pair {pair.tokenizer_id} vs model {model.tokenizer_id}"
        )
    if mode not in ("train", "infer"):
        raise ValueError(f"unknown mode {mode!r}")
    scores, _ = model.backbone.forward_batch(
        [pair.token_ids], train=(mode == "train"), dropout_rng=dropout_rng
    )
    return float(scores[0])


def score_batch(model: FacetModel, pairs: Sequence[EncodedPair]) -> list[float]:
    """Infer-mode scores matching element-wise score(); order-preserving."""
    if not pairs:
        return []
    for idx, pair in enumerate(pairs):
        if pair.tokenizer_id != model.tokenizer_id:
            raise ValueError(f"pair {idx}: tokenizer mismatch ({pair.tokenizer_id})")
    scores, _ = model.backbone.forward_batch([p.token_ids for p in pairs], train=False)
    return [float(s) for s in scores]


# ---------------------------------------------------------------------------
# Checkpoints
# ---------------------------------------------------------------------------

def save_checkpoint(
    model: FacetModel,
    ckpt_dir: str | Path,
    validation_metric: float | None = None,
    extra: dict | None = None,
    created_at: str | None = None,
) -> Path:
    """Write manifest + parameter blob + vocabulary into a directory."""
    ckpt_dir = Path(ckpt_dir)
    ckpt_dir.mkdir(parents=True, exist_ok=True)
    backbone = model.backbone
    if not isinstance(backbone, CompactBackbone):
        raise ValueError(f"only {COMPACT_PROFILE} checkpoints are file-backed")
    manifest = {
        "facet": model.facet,
        "backbone_profile": model.backbone_profile,
        "tokenizer_id": model.tokenizer_id,
        "max_tokens": model.max_tokens,
        "dropout": backbone.head_dropout,
        "backbone_config": backbone.config(),
        "validation_metric": validation_metric,
        "created_at": created_at if created_at is not None else utc_now_iso(),
    }
    if extra:
        manifest.update(extra)
    (ckpt_dir / "manifest.json").write_text(json.dumps(manifest, indent=2, sort_keys=True) + "\n")
    np.savez(ckpt_dir / "params.npz", **backbone.params)
    model.tokenizer.vocab.save(ckpt_dir / "vocab.txt")
    return ckpt_dir


def load_checkpoint(ckpt_dir: str | Path) -> FacetModel:
    ckpt_dir = Path(ckpt_dir)
    manifest = json.loads((ckpt_dir / "manifest.json").read_text())
    vocab = Vocabulary.load(ckpt_dir / "vocab.txt")
    tokenizer = WordTokenizer(vocab)
    if tokenizer.tokenizer_id != manifest["tokenizer_id"]:
        raise ValueError(
            f"checkpoint vocabulary hash {tokenizer.tokenizer_id} does not match "
            f"manifest tokenizer_id {manifest['tokenizer_id']}"
        )
    backbone = CompactBackbone.from_config(manifest["backbone_config"])
    with np.load(ckpt_dir / "params.npz") as blob:
        backbone.load_params({k: blob[k] for k in blob.files})
    return FacetModel(
        facet=manifest["facet"],
        backbone=backbone,
        tokenizer=tokenizer,
        max_tokens=manifest["max_tokens"],
    )


def load_manifest(ckpt_dir: str | Path) -> dict:
    return json.loads((Path(ckpt_dir) / "manifest.json").read_text())
