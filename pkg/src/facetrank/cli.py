"""Command-line entry point covering every pipeline stage plus serving.

Commands mirror the stage modules: corpus ingest/fetch/stats, annotate
run/audit-errors, agreement report, triplets build/split, train, bench run,
serve, and pipeline run <stage|all>.
"""

from __future__ import annotations

import argparse
import json
import logging
import sys
from collections import Counter
from pathlib import Path

from . import BACKGROUND, METHOD, validate_facet
from ._util import write_jsonl
from .agreement import (
    agreement_report,
    agreement_report_markdown,
    confusion_csv,
    ConfusionMatrix,
    labels_to_pair_scores,
    read_human_labels,
)
from .annotate import HttpChatClient, LabelStore, annotate_corpus, read_labels, write_labels
from .backbone import CompactBackbone
from .bench import MetricConfig, evaluate_facet, fixture_benchmark, load_benchmark, write_report
from .corpus import (
    RecommendationClient,
    corpus_stats,
    fetch_pools,
    ingest_jsonl,
    read_pools,
    write_papers,
    write_pools,
)
from .encoder import FacetModel, Vocabulary, WordTokenizer, load_checkpoint, save_checkpoint
from .pipeline import STAGES, StageError, load_config, run_all, run_stage
from .synth import SynthConfig, SyntheticOracleClient, generate_corpus, write_fixture_benchmark
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


def _load_corpus(papers_path: str) -> dict:
    result = ingest_jsonl(papers_path)
    if result.rejections:
        print(f"warning: {len(result.rejections)} rejected records in {papers_path}", file=sys.stderr)
    return {p.paper_id: p for p in result.papers}


def cmd_corpus_ingest(args) -> int:
    result = ingest_jsonl(args.papers)
    write_papers(args.out, result.papers)
    if args.rejections:
        write_jsonl(args.rejections, [{"line": r.line, "cause": r.cause} for r in result.rejections])
    print(f"ingested {len(result.papers)} papers, rejected {len(result.rejections)}")
    return 0


def cmd_corpus_fetch(args) -> int:
    corpus = _load_corpus(args.papers)
    seeds = list(corpus.values())
    if args.seed_ids:
        wanted = set(args.seed_ids)
        seeds = [p for p in seeds if p.paper_id in wanted]
    client = RecommendationClient(base_url=args.base_url, api_key_env=args.api_key_env)
    pools = fetch_pools(seeds, args.limit, client, parallelism=args.parallelism,
                        max_per_second=args.max_per_second)
    write_pools(args.out, pools)
    print(f"fetched {len(pools)} pools, {sum(len(p.candidates) for p in pools)} pairs")
    return 0


def cmd_corpus_stats(args) -> int:
    corpus = _load_corpus(args.papers)
    pools = read_pools(args.pools, corpus)
    print(corpus_stats(pools).to_markdown())
    return 0


def cmd_annotate_run(args) -> int:
    corpus = _load_corpus(args.papers)
    pools = read_pools(args.pools, corpus)
    if args.client == "synthetic-oracle":
        client = SyntheticOracleClient()
    else:
        client = HttpChatClient(model=args.model, base_url=args.base_url, api_key_env=args.api_key_env)
    store = LabelStore(args.cache) if args.cache else None
    report = annotate_corpus(
        pools, client, store=store, parallelism=args.parallelism,
        max_per_second=args.max_per_second,
    )
    write_labels(args.out, report.labels)
    if args.errors:
        write_jsonl(args.errors, report.errors)
    print(f"labeled {len(report.labels)} pairs ({report.cache_hits} cached), "
          f"{len(report.errors)} failures")
    return 0 if not report.errors else 1


def cmd_annotate_audit_errors(args) -> int:
    from ._util import read_jsonl

    causes = Counter()
    n = 0
    for _, obj in read_jsonl(args.errors):
        n += 1
        causes[obj.get("error", "unknown").split(":")[0]] += 1
    print(f"{n} annotation failures")
    for cause, count in causes.most_common():
        print(f"  {count:5d}  {cause}")
    return 0


def cmd_agreement_report(args) -> int:
    human = read_human_labels(args.human)
    if args.llm.endswith(".jsonl") and args.llm_format == "labels":
        llm = labels_to_pair_scores(read_labels(args.llm))
    else:
        llm = read_human_labels(args.llm)
    report = agreement_report(human, llm, disagreement_threshold=args.threshold)
    if args.out_json:
        Path(args.out_json).write_text(json.dumps(report, indent=2, sort_keys=True) + "\n")
    if args.out_markdown:
        Path(args.out_markdown).write_text(agreement_report_markdown(report))
    if args.out_csv_dir:
        outdir = Path(args.out_csv_dir)
        outdir.mkdir(parents=True, exist_ok=True)
        for facet, stats in report["facets"].items():
            cm = ConfusionMatrix(facet, tuple(tuple(r) for r in stats["confusion"]))
            (outdir / f"confusion_{facet}.csv").write_text(confusion_csv(cm))
    for facet, stats in report["facets"].items():
        print(f"{facet}: spearman {stats['spearman']:.4f}")
    print(f"disagreements (threshold {args.threshold}): {report['disagreements']['count']}")
    return 0


def cmd_triplets_build(args) -> int:
    labels = read_labels(args.labels)
    facet = validate_facet(args.facet)
    policy = None
    if facet == METHOD:
        policy = (
            MergePolicy.method_default() if args.merge_scale == "0-2"
            else MergePolicy(facet=METHOD, mapping=(0, 1, 2, 3))
        )
    trips = build_triplets(labels, facet, policy=policy)
    n = write_triplets(args.out, trips)
    print(f"{n} triplets across {len(trips)} seeds -> {args.out}")
    return 0


def cmd_triplets_split(args) -> int:
    labels = read_labels(args.labels)
    seeds = sorted({lp.seed_id for lp in labels})
    spec = split_by_seed(seeds, tuple(args.fractions), args.rng_seed)
    write_split(args.out, spec)
    counts = Counter(spec.assignment.values())
    print(f"split {len(seeds)} seeds: {dict(counts)} -> {args.out}")
    return 0


def cmd_train(args) -> int:
    facet = validate_facet(args.facet)
    corpus = _load_corpus(args.papers)
    trips = read_triplets(args.triplets)
    split = read_split(args.split) if args.split else None
    labels = read_labels(args.labels) if args.labels else []
    texts = [p.title for p in corpus.values()] + [p.abstract for p in corpus.values()]
    vocab = Vocabulary.build(texts)
    tokenizer = WordTokenizer(vocab)
    backbone = CompactBackbone(
        vocab_size=len(vocab), max_len=args.max_tokens, d_ff=args.d_ff,
        head_dropout=args.dropout, rng_seed=args.rng_seed,
    )
    model = FacetModel(facet=facet, backbone=backbone, tokenizer=tokenizer, max_tokens=args.max_tokens)
    cfg = TrainConfig(
        margin=args.margin, learning_rate=args.learning_rate, epochs=args.epochs,
        batch_size=args.batch_size, grad_clip_norm=args.grad_clip_norm,
        per_seed_cap=args.per_seed_cap, rng_seed=args.rng_seed,
        warmup_fraction=args.warmup_fraction, weight_decay=args.weight_decay,
    )
    val_pools = None
    if split and labels:
        val_pools = eval_pools_from_labels(labels, split.seeds("val"), facet)
    result = train(model, trips, corpus, cfg, split=split, val_pools=val_pools,
                   log_path=args.log)
    best = select_best_checkpoint(result.checkpoints) if result.checkpoints else None
    save_checkpoint(
        model, args.out,
        validation_metric=best.validation_metric if best else None,
        extra={"train_config": cfg.to_dict(), "best_epoch": best.epoch if best else None},
    )
    losses = [round(x, 4) for x in result.epoch_losses]
    print(f"trained {facet} model: epoch losses {losses} -> {args.out}")
    return 0


def cmd_bench_run(args) -> int:
    facet = validate_facet(args.facet)
    model = load_checkpoint(args.model)
    if model.facet != facet:
        print(f"error: checkpoint facet {model.facet} != requested {facet}", file=sys.stderr)
        return 2
    loaded = fixture_benchmark(facet) if args.benchmark == "fixture" else load_benchmark(args.benchmark, facet)
    train_ids = set(_load_corpus(args.train_papers)) if args.train_papers else None
    report = evaluate_facet(
        model, loaded.queries,
        MetricConfig(ndcg_percent=args.ndcg_percent, map_binarize_at=args.map_binarize_at),
        train_paper_ids=train_ids, waive_leakage=args.waive_leakage,
    )
    report["benchmark_rejections"] = loaded.rejections
    write_report(args.report, report)
    means = report["means"]
    print(f"{facet}: NDCG%{int(args.ndcg_percent * 100)} "
          f"{means['ndcg']:.4f}, MAP {means['map']:.4f} "
          f"(leakage: {report['leakage']['status']}) -> {args.report}")
    return 0


def cmd_serve(args) -> int:
    from .server import RerankService, serve_forever

    logging.basicConfig(level=logging.INFO, format="%(message)s")
    service = RerankService.from_checkpoints(
        args.bg, args.mt, pool_cap=args.pool_cap,
        max_concurrent=args.max_concurrent, static_dir=args.static_dir,
    )
    if not service.ready:
        print(f"warning: serving degraded, missing {service.health()['missing']}", file=sys.stderr)
    serve_forever(service, host=args.host, port=args.port)
    return 0


def cmd_pipeline_run(args) -> int:
    cfg = load_config(args.config, overrides=args.set or [])
    try:
        if args.stage == "all":
            results = run_all(cfg, args.workdir, force=args.force)
        else:
            results = [run_stage(args.stage, cfg, args.workdir, force=args.force)]
    except StageError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    for r in results:
        print(f"{r['stage']}: {r['status']} ({r['manifest'].get('duration_s', 0)}s)")
    return 0


def cmd_synth(args) -> int:
    outdir = Path(args.out_dir)
    outdir.mkdir(parents=True, exist_ok=True)
    cfg = SynthConfig(n_docs=args.docs, n_seeds=args.seeds, pool_size=args.pool_size,
                      rng_seed=args.rng_seed)
    corpus = generate_corpus(cfg)
    write_papers(outdir / "papers.jsonl", corpus.papers())
    write_pools(outdir / "pools.jsonl", corpus.pools)
    if args.benchmark:
        write_fixture_benchmark(outdir / "benchmark.jsonl", rng_seed=args.rng_seed + 1)
    print(f"synthetic corpus: {len(corpus.docs)} docs, {len(corpus.pools)} pools -> {outdir}")
    return 0


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="facetrank", description=__doc__)
    sub = p.add_subparsers(dest="command", required=True)

    corpus = sub.add_parser("corpus", help="ingest, fetch, inspect paper corpora")
    csub = corpus.add_subparsers(dest="subcommand", required=True)
    ing = csub.add_parser("ingest", help="validate a papers JSONL file")
    ing.add_argument("--papers", required=True)
    ing.add_argument("--out", required=True)
    ing.add_argument("--rejections")
    ing.set_defaults(fn=cmd_corpus_ingest)
    fet = csub.add_parser("fetch", help="fetch candidate pools from the recommendation API")
    fet.add_argument("--papers", required=True)
    fet.add_argument("--seed-ids", nargs="*")
    fet.add_argument("--limit", type=int, default=30)
    fet.add_argument("--out", required=True)
    fet.add_argument("--base-url", default="https://api.semanticscholar.org/recommendations/v1/papers/forpaper")
    fet.add_argument("--api-key-env", default="S2_API_KEY")
    fet.add_argument("--parallelism", type=int, default=4)
    fet.add_argument("--max-per-second", type=float, default=2.0)
    fet.set_defaults(fn=cmd_corpus_fetch)
    st = csub.add_parser("stats", help="summarize a corpus and its pools")
    st.add_argument("--papers", required=True)
    st.add_argument("--pools", required=True)
    st.set_defaults(fn=cmd_corpus_stats)

    ann = sub.add_parser("annotate", help="LLM facet labeling")
    asub = ann.add_subparsers(dest="subcommand", required=True)
    arun = asub.add_parser("run", help="label every pool pair")
    arun.add_argument("--papers", required=True)
    arun.add_argument("--pools", required=True)
    arun.add_argument("--out", required=True)
    arun.add_argument("--errors")
    arun.add_argument("--cache")
    arun.add_argument("--client", choices=["chat-http", "synthetic-oracle"], default="chat-http")
    arun.add_argument("--model", default="gpt-4o-mini")
    arun.add_argument("--base-url", default="https://api.openai.com/v1")
    arun.add_argument("--api-key-env", default="OPENAI_API_KEY")
    arun.add_argument("--parallelism", type=int, default=1)
    arun.add_argument("--max-per-second", type=float, default=None)
    arun.set_defaults(fn=cmd_annotate_run)
    aaud = asub.add_parser("audit-errors", help="summarize annotation failures")
    aaud.add_argument("--errors", required=True)
    aaud.set_defaults(fn=cmd_annotate_audit_errors)

    agr = sub.add_parser("agreement", help="annotation quality statistics")
    gsub = agr.add_subparsers(dest="subcommand", required=True)
    grep_ = gsub.add_parser("report", help="human-vs-LLM agreement report")
    grep_.add_argument("--human", required=True)
    grep_.add_argument("--llm", required=True)
    grep_.add_argument("--llm-format", choices=["labels", "pair-scores"], default="labels")
    grep_.add_argument("--threshold", type=int, default=2)
    grep_.add_argument("--out-json")
    grep_.add_argument("--out-markdown")
    grep_.add_argument("--out-csv-dir")
    grep_.set_defaults(fn=cmd_agreement_report)

    tri = sub.add_parser("triplets", help="ranking triplet construction")
    tsub = tri.add_subparsers(dest="subcommand", required=True)
    tb = tsub.add_parser("build", help="enumerate triplets for one facet")
    tb.add_argument("--labels", required=True)
    tb.add_argument("--facet", required=True)
    tb.add_argument("--merge-scale", choices=["0-2", "0-3"], default="0-2")
    tb.add_argument("--out", required=True)
    tb.set_defaults(fn=cmd_triplets_build)
    ts = tsub.add_parser("split", help="seed-level train/val/test split")
    ts.add_argument("--labels", required=True)
    ts.add_argument("--fractions", type=float, nargs=3, default=[0.7, 0.15, 0.15])
    ts.add_argument("--rng-seed", type=int, default=7)
    ts.add_argument("--out", required=True)
    ts.set_defaults(fn=cmd_triplets_split)

    tr = sub.add_parser("train", help="train one facet model")
    tr.add_argument("--facet", required=True)
    tr.add_argument("--triplets", required=True)
    tr.add_argument("--papers", required=True)
    tr.add_argument("--split")
    tr.add_argument("--labels", help="labels JSONL for validation pools")
    tr.add_argument("--out", required=True)
    tr.add_argument("--log")
    tr.add_argument("--margin", type=float, default=0.5)
    tr.add_argument("--learning-rate", type=float, default=2e-3)
    tr.add_argument("--warmup-fraction", type=float, default=0.10)
    tr.add_argument("--epochs", type=int, default=10)
    tr.add_argument("--batch-size", type=int, default=16)
    tr.add_argument("--grad-clip-norm", type=float, default=1.0)
    tr.add_argument("--per-seed-cap", type=int, default=10)
    tr.add_argument("--weight-decay", type=float, default=0.01)
    tr.add_argument("--rng-seed", type=int, default=7)
    tr.add_argument("--max-tokens", type=int, default=80)
    tr.add_argument("--d-ff", type=int, default=128)
    tr.add_argument("--dropout", type=float, default=0.1)
    tr.set_defaults(fn=cmd_train)

    be = sub.add_parser("bench", help="benchmark evaluation")
    bsub = be.add_subparsers(dest="subcommand", required=True)
    br = bsub.add_parser("run", help="evaluate a model on a benchmark")
    br.add_argument("--facet", required=True)
    br.add_argument("--model", required=True)
    br.add_argument("--benchmark", required=True, help="path, or 'fixture' for the packaged one")
    br.add_argument("--report", required=True)
    br.add_argument("--train-papers", help="papers JSONL used in training, for the leakage check")
    br.add_argument("--waive-leakage", action="store_true")
    br.add_argument("--ndcg-percent", type=float, default=0.20)
    br.add_argument("--map-binarize-at", type=int, default=2)
    br.set_defaults(fn=cmd_bench_run)

    sv = sub.add_parser("serve", help="serve the rerank HTTP API")
    sv.add_argument("--bg", required=True, help="background checkpoint directory")
    sv.add_argument("--mt", required=True, help="method checkpoint directory")
    sv.add_argument("--host", default="127.0.0.1")
    sv.add_argument("--port", type=int, default=8321)
    sv.add_argument("--pool-cap", type=int, default=100)
    sv.add_argument("--max-concurrent", type=int, default=8)
    sv.add_argument("--static-dir", help="optional UI bundle to serve under /ui")
    sv.set_defaults(fn=cmd_serve)

    pl = sub.add_parser("pipeline", help="run pipeline stages from one config")
    psub = pl.add_subparsers(dest="subcommand", required=True)
    pr = psub.add_parser("run", help="run one stage or all")
    pr.add_argument("stage", choices=list(STAGES) + ["all"])
    pr.add_argument("--config", help="JSON config file (defaults apply when omitted)")
    pr.add_argument("--workdir", default="pipeline_out")
    pr.add_argument("--force", action="store_true")
    pr.add_argument("--set", action="append", metavar="KEY=VALUE",
                    help="override a config key, e.g. --set train.epochs=5")
    pr.set_defaults(fn=cmd_pipeline_run)

    sy = sub.add_parser("synth", help="generate a synthetic fixture corpus")
    sy.add_argument("--out-dir", required=True)
    sy.add_argument("--docs", type=int, default=60)
    sy.add_argument("--seeds", type=int, default=60)
    sy.add_argument("--pool-size", type=int, default=8)
    sy.add_argument("--rng-seed", type=int, default=7)
    sy.add_argument("--benchmark", action="store_true", help="also write a graded benchmark file")
    sy.set_defaults(fn=cmd_synth)
    return p


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    return args.fn(args)


if __name__ == "__main__":
    sys.exit(main())
