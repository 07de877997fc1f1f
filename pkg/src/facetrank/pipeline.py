"""Stage runner wiring corpus -> annotate -> triplets -> train -> bench.

One JSON config file drives every stage; all artifact paths resolve
against a working directory, and a single global rng_seed governs every
stochastic stage. Each stage writes a manifest recording content hashes of
its inputs, config, and outputs; an unchanged stage is skipped on rerun
unless forced. Stage skipping is by content hash, never by timestamp.
"""

from __future__ import annotations

import copy
import json
import time
from pathlib import Path
from typing import Callable

from . import BACKGROUND, METHOD
from ._util import canonical_json, sha256_file, sha256_text, utc_now_iso, write_jsonl
from .annotate import HttpChatClient, LabelStore, annotate_corpus, read_labels, write_labels
from .backbone import CompactBackbone
from .bench import MetricConfig, evaluate_facet, fixture_benchmark, load_benchmark, write_report
from .corpus import corpus_stats, ingest_jsonl, read_pools, write_papers, write_pools
from .encoder import FacetModel, Vocabulary, WordTokenizer, save_checkpoint, load_checkpoint
from .synth import SynthConfig, SyntheticOracleClient, generate_corpus
from .trainer import TrainConfig, select_best_checkpoint, train
from .triplets import (
    MergePolicy,
    build_triplets,
    eval_pools_from_labels,
    read_split,
    read_triplets,
    split_by_seed,
    write_split,
    write_triplets,
)

STAGES = ("corpus", "annotate", "triplets", "train", "bench")

DEFAULT_CONFIG: dict = {
    "rng_seed": 7,
    "corpus": {
        "source": "synthetic",
        "synthetic": {"n_docs": 60, "n_seeds": 60, "pool_size": 8},
        "input_papers": None,
        "input_pools": None,
        "papers": "papers.jsonl",
        "pools": "pools.jsonl",
        "rejections": "corpus_rejections.jsonl",
    },
    "annotate": {
        "client": "synthetic-oracle",
        "model": "gpt-4o-mini",
        "base_url": "https://api.openai.com/v1",
        "api_key_env": "OPENAI_API_KEY",
        "labels": "labels.jsonl",
        "errors": "annotate_errors.jsonl",
        "deterministic_time": True,
        "parallelism": 1,
        "max_per_second": None,
        "max_attempts": 3,
    },
    "triplets": {
        "method_scale": "0-2",
        "fractions": [0.7, 0.15, 0.15],
        "out_bg": "triplets_bg.jsonl",
        "out_mt": "triplets_mt.jsonl",
        "split": "split.json",
    },
    "train": {
        "epochs": 3,
        "learning_rate": 2e-3,
        "margin": 0.5,
        "batch_size": 16,
        "warmup_fraction": 0.10,
        "grad_clip_norm": 1.0,
        "per_seed_cap": 10,
        "weight_decay": 0.01,
        "encoder": {
            "max_tokens": 80,
            "d_model": 64,
            "n_layers": 2,
            "n_heads": 4,
            "d_ff": 128,
            "head_dropout": 0.1,
        },
        "ckpt_bg": "ckpt_bg",
        "ckpt_mt": "ckpt_mt",
        "log_bg": "train_log_bg.jsonl",
        "log_mt": "train_log_mt.jsonl",
    },
    "bench": {
        "benchmark": None,
        "report": "report.json",
        "ndcg_percent": 0.20,
        "map_binarize_at": 2,
        "waive_leakage": False,
    },
}


def load_config(path: str | Path | None = None, overrides: list[str] | None = None) -> dict:
    """Merge defaults, the config file, and `dotted.key=value` overrides."""
    cfg = copy.deepcopy(DEFAULT_CONFIG)
    if path is not None:
        user = json.loads(Path(path).read_text())
        _deep_update(cfg, user)
    for item in overrides or []:
        key, _, value = item.partition("=")
        if not _:
            raise ValueError(f"override {item!r} is not of the form key=value")
        _set_dotted(cfg, key, json.loads(value) if _looks_like_json(value) else value)
    return cfg


def _looks_like_json(value: str) -> bool:
    try:
        json.loads(value)
        return True
    except json.JSONDecodeError:
        return False


def _deep_update(base: dict, other: dict) -> None:
    for k, v in other.items():
        if isinstance(v, dict) and isinstance(base.get(k), dict):
            _deep_update(base[k], v)
        else:
            base[k] = v


def _set_dotted(cfg: dict, dotted: str, value) -> None:
    parts = dotted.split(".")
    node = cfg
    for p in parts[:-1]:
        node = node.setdefault(p, {})
    node[parts[-1]] = value


class StageError(RuntimeError):
    pass


def _require(workdir: Path, relpath: str, producer: str) -> Path:
    path = workdir / relpath
    if not path.exists():
        raise StageError(f"missing {relpath}; run {producer} first")
    return path


def _hash_tree(path: Path) -> str:
    """Content hash of a file, or of a directory's files (sorted)."""
    if path.is_file():
        return sha256_file(path)
    parts = []
    for sub in sorted(path.rglob("*")):
        if sub.is_file():
            parts.append(f"{sub.relative_to(path)}:{sha256_file(sub)}")
    return sha256_text("\n".join(parts))


def _manifest_path(workdir: Path, stage: str) -> Path:
    return workdir / "manifests" / f"{stage}.json"


def _stage_fresh(workdir: Path, stage: str, config_hash: str, io: dict[str, list[str]]) -> bool:
    mpath = _manifest_path(workdir, stage)
    if not mpath.exists():
        return False
    manifest = json.loads(mpath.read_text())
    if manifest.get("config_hash") != config_hash:
        return False
    for group in ("inputs", "outputs"):
        recorded = manifest.get(group, {})
        if set(recorded) != set(io[group]):
            return False
        for rel, digest in recorded.items():
            p = workdir / rel
            if not p.exists() or _hash_tree(p) != digest:
                return False
    return True


def _write_manifest(
    workdir: Path, stage: str, config_hash: str, inputs: list[str], outputs: list[str], duration: float
) -> dict:
    manifest = {
        "stage": stage,
        "config_hash": config_hash,
        "inputs": {rel: _hash_tree(workdir / rel) for rel in inputs},
        "outputs": {rel: _hash_tree(workdir / rel) for rel in outputs},
        "duration_s": round(duration, 3),
        "created_at": time.strftime("%Y-%m-%dT%H:%M:%SZ", time.gmtime()),
    }
    mpath = _manifest_path(workdir, stage)
    mpath.parent.mkdir(parents=True, exist_ok=True)
    mpath.write_text(json.dumps(manifest, indent=2, sort_keys=True) + "\n")
    return manifest


def _stage_corpus(cfg: dict, workdir: Path) -> tuple[list[str], list[str]]:
    c = cfg["corpus"]
    inputs: list[str] = []
    if c["source"] == "synthetic":
        syn = dict(c.get("synthetic") or {})
        syn.setdefault("rng_seed", cfg["rng_seed"])
        corpus = generate_corpus(SynthConfig(**syn))
        write_papers(workdir / c["papers"], corpus.papers())
        write_pools(workdir / c["pools"], corpus.pools)
        write_jsonl(workdir / c["rejections"], [])
    elif c["source"] == "jsonl":
        if not c.get("input_papers") or not c.get("input_pools"):
            raise StageError("corpus.source=jsonl requires input_papers and input_pools")
        in_papers = Path(c["input_papers"])
        in_pools = Path(c["input_pools"])
        result = ingest_jsonl(in_papers)
        corpus_by_id = {p.paper_id: p for p in result.papers}
        pools = read_pools(in_pools, corpus_by_id)
        write_papers(workdir / c["papers"], result.papers)
        write_pools(workdir / c["pools"], pools)
        write_jsonl(
            workdir / c["rejections"],
            [{"line": r.line, "cause": r.cause, "raw": r.raw} for r in result.rejections],
        )
    else:
        raise StageError(f"unknown corpus source {c['source']!r}")
    return inputs, [c["papers"], c["pools"], c["rejections"]]


def _make_chat_client(a: dict):
    if a["client"] == "synthetic-oracle":
        return SyntheticOracleClient()
    if a["client"] == "chat-http":
        return HttpChatClient(model=a["model"], base_url=a["base_url"], api_key_env=a["api_key_env"])
    raise StageError(f"unknown annotate client {a['client']!r}")


def _stage_annotate(cfg: dict, workdir: Path) -> tuple[list[str], list[str]]:
    c, a = cfg["corpus"], cfg["annotate"]
    papers_path = _require(workdir, c["papers"], "corpus")
    pools_path = _require(workdir, c["pools"], "corpus")
    corpus_by_id = {p.paper_id: p for p in ingest_jsonl(papers_path).papers}
    pools = read_pools(pools_path, corpus_by_id)
    store = LabelStore(workdir / (a["labels"] + ".cache"))
    report = annotate_corpus(
        pools,
        _make_chat_client(a),
        store=store,
        max_attempts=a["max_attempts"],
        parallelism=a["parallelism"],
        max_per_second=a["max_per_second"],
        clock=None if a["deterministic_time"] else utc_now_iso,
    )
    write_labels(workdir / a["labels"], report.labels)
    write_jsonl(workdir / a["errors"], report.errors)
    return [c["papers"], c["pools"]], [a["labels"], a["errors"]]


def _stage_triplets(cfg: dict, workdir: Path) -> tuple[list[str], list[str]]:
    a, t = cfg["annotate"], cfg["triplets"]
    labels_path = _require(workdir, a["labels"], "annotate")
    labels = read_labels(labels_path)
    method_policy = (
        MergePolicy.method_default() if t["method_scale"] == "0-2"
        else MergePolicy(facet=METHOD, mapping=(0, 1, 2, 3))
    )
    bg = build_triplets(labels, BACKGROUND)
    mt = build_triplets(labels, METHOD, policy=method_policy)
    write_triplets(workdir / t["out_bg"], bg)
    write_triplets(workdir / t["out_mt"], mt)
    seeds = sorted({lp.seed_id for lp in labels})
    split = split_by_seed(seeds, tuple(t["fractions"]), cfg["rng_seed"])
    write_split(workdir / t["split"], split)
    return [a["labels"]], [t["out_bg"], t["out_mt"], t["split"]]


def _stage_train(cfg: dict, workdir: Path) -> tuple[list[str], list[str]]:
    c, a, t, tr = cfg["corpus"], cfg["annotate"], cfg["triplets"], cfg["train"]
    papers_path = _require(workdir, c["papers"], "corpus")
    labels_path = _require(workdir, a["labels"], "annotate")
    split_path = _require(workdir, t["split"], "triplets")
    corpus_by_id = {p.paper_id: p for p in ingest_jsonl(papers_path).papers}
    labels = read_labels(labels_path)
    split = read_split(split_path)
    texts = [p.title for p in corpus_by_id.values()] + [p.abstract for p in corpus_by_id.values()]
    vocab = Vocabulary.build(texts)
    tokenizer = WordTokenizer(vocab)
    enc = tr["encoder"]
    tcfg = TrainConfig(
        margin=tr["margin"],
        learning_rate=tr["learning_rate"],
        warmup_fraction=tr["warmup_fraction"],
        epochs=tr["epochs"],
        batch_size=tr["batch_size"],
        grad_clip_norm=tr["grad_clip_norm"],
        per_seed_cap=tr["per_seed_cap"],
        rng_seed=cfg["rng_seed"],
        weight_decay=tr["weight_decay"],
    )
    outputs = []
    for facet, trip_key, ckpt_key, log_key in (
        (BACKGROUND, "out_bg", "ckpt_bg", "log_bg"),
        (METHOD, "out_mt", "ckpt_mt", "log_mt"),
    ):
        trips_path = _require(workdir, t[trip_key], "triplets")
        trips = read_triplets(trips_path)
        backbone = CompactBackbone(
            vocab_size=len(vocab),
            max_len=enc["max_tokens"],
            d_model=enc["d_model"],
            n_layers=enc["n_layers"],
            n_heads=enc["n_heads"],
            d_ff=enc["d_ff"],
            head_dropout=enc["head_dropout"],
            rng_seed=cfg["rng_seed"],
        )
        model = FacetModel(facet=facet, backbone=backbone, tokenizer=tokenizer, max_tokens=enc["max_tokens"])
        policy = None
        if facet == METHOD and t["method_scale"] == "0-3":
            policy = MergePolicy(facet=METHOD, mapping=(0, 1, 2, 3))
        val_pools = eval_pools_from_labels(labels, split.seeds("val"), facet, policy=policy)
        log_path = workdir / tr[log_key]
        if log_path.exists():
            log_path.unlink()
        result = train(
            model, trips, corpus_by_id, tcfg, split=split, val_pools=val_pools, log_path=log_path
        )
        best = select_best_checkpoint(result.checkpoints) if result.checkpoints else None
        save_checkpoint(
            model,
            workdir / tr[ckpt_key],
            validation_metric=best.validation_metric if best else None,
            extra={"train_config": tcfg.to_dict(), "best_epoch": best.epoch if best else None},
            created_at="" if cfg["annotate"]["deterministic_time"] else None,
        )
        outputs += [tr[ckpt_key], tr[log_key]]
    return [c["papers"], a["labels"], t["split"], t["out_bg"], t["out_mt"]], outputs


def _stage_bench(cfg: dict, workdir: Path) -> tuple[list[str], list[str]]:
    c, t, tr, b = cfg["corpus"], cfg["triplets"], cfg["train"], cfg["bench"]
    papers_path = _require(workdir, c["papers"], "corpus")
    train_ids = {p.paper_id for p in ingest_jsonl(papers_path).papers}
    metric_cfg = MetricConfig(ndcg_percent=b["ndcg_percent"], map_binarize_at=b["map_binarize_at"])
    report: dict = {"pipeline": {"rng_seed": cfg["rng_seed"]}, "facets": {}}
    inputs = [c["papers"]]
    for facet, ckpt_key in ((BACKGROUND, "ckpt_bg"), (METHOD, "ckpt_mt")):
        ckpt = _require(workdir, tr[ckpt_key], "train")
        model = load_checkpoint(ckpt)
        if b["benchmark"]:
            loaded = load_benchmark(workdir / b["benchmark"], facet)
            inputs.append(b["benchmark"])
        else:
            loaded = fixture_benchmark(facet)
        report["facets"][facet] = evaluate_facet(
            model,
            loaded.queries,
            metric_cfg,
            train_paper_ids=train_ids,
            waive_leakage=b["waive_leakage"],
        )
        report["facets"][facet]["benchmark_rejections"] = loaded.rejections
        inputs.append(tr[ckpt_key])
    write_report(workdir / b["report"], report)
    return sorted(set(inputs)), [b["report"]]


_STAGE_FNS: dict[str, Callable[[dict, Path], tuple[list[str], list[str]]]] = {
    "corpus": _stage_corpus,
    "annotate": _stage_annotate,
    "triplets": _stage_triplets,
    "train": _stage_train,
    "bench": _stage_bench,
}


def run_stage(stage: str, cfg: dict, workdir: str | Path, force: bool = False) -> dict:
    """Run one stage (or skip it when inputs, config, and outputs are
    unchanged); returns {"stage", "status", "manifest"}."""
    if stage not in _STAGE_FNS:
        raise StageError(f"unknown stage {stage!r}, expected one of {STAGES}")
    workdir = Path(workdir)
    workdir.mkdir(parents=True, exist_ok=True)
    stage_cfg = {"stage": cfg[stage] if stage in cfg else {}, "rng_seed": cfg["rng_seed"]}
    config_hash = sha256_text(canonical_json(stage_cfg))
    mpath = _manifest_path(workdir, stage)
    if not force and mpath.exists():
        manifest = json.loads(mpath.read_text())
        io = {"inputs": list(manifest.get("inputs", {})), "outputs": list(manifest.get("outputs", {}))}
        if _stage_fresh(workdir, stage, config_hash, io):
            return {"stage": stage, "status": "skipped", "manifest": manifest}
    started = time.monotonic()
    inputs, outputs = _STAGE_FNS[stage](cfg, workdir)
    manifest = _write_manifest(workdir, stage, config_hash, inputs, outputs, time.monotonic() - started)
    return {"stage": stage, "status": "ran", "manifest": manifest}


def run_all(cfg: dict, workdir: str | Path, force: bool = False) -> list[dict]:
    return [run_stage(stage, cfg, workdir, force=force) for stage in STAGES]
