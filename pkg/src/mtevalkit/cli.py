"""Command-line front door: qa, train, score, compare, serve, embed-cache.

Every command is deterministic given its --seed; nothing reads system
entropy. Reruns on identical inputs produce byte-identical outputs, with
wall-clock timestamps confined to the run_meta.json sidecar. Exit codes:
0 success, 2 validation error, 3 data error, 4 internal error.
"""
from __future__ import annotations

import argparse
import json
import sys
from datetime import datetime, timezone
from pathlib import Path

import yaml

from . import estimator, qa, report as report_mod
from .corpus import (
    load_annotations,
    load_triples,
    save_segment_scores,
    SegmentScore,
)
from .embeddings import FileStoreProvider, RemoteProvider, provider_from_config
from .errors import DataError, MtevalError, ValidationError
from .estimator import EstimatorModel, TrainConfig, load_model, save_model, train


def _load_config(path) -> dict:
    if not path:
        return {}
    try:
        with open(path, encoding="utf-8") as fh:
            loaded = yaml.safe_load(fh) or {}
    except FileNotFoundError:
        raise DataError(f"no such config file: {path}") from None
    except yaml.YAMLError as exc:
        raise ValidationError(f"bad config file {path}: {exc}") from None
    if not isinstance(loaded, dict):
        raise ValidationError(f"config file {path} must be a mapping")
    return loaded


def _opt(flag_value, config: dict, section: str, key: str, default):
    if flag_value is not None:
        return flag_value
    return config.get(section, {}).get(key, default)


def _out_dir(args) -> Path:
    out = Path(args.out or ".")
    out.mkdir(parents=True, exist_ok=True)
    return out


def _write_run_meta(out: Path, command: str, args: argparse.Namespace) -> None:
    meta = {
        "command": command,
        "seed": args.seed,
        "args": {
            k: str(v)
            for k, v in vars(args).items()
            if k not in ("func",) and v is not None
        },
        "timestamp": datetime.now(timezone.utc).isoformat(),
    }
    with open(out / "run_meta.json", "w", encoding="utf-8") as fh:
        json.dump(meta, fh, indent=2, sort_keys=True)
        fh.write("\n")


def _write_json(path: Path, payload: dict) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        json.dump(payload, fh, indent=2, sort_keys=True, ensure_ascii=False)
        fh.write("\n")


def _provider(args, config: dict):
    provider_config = dict(config.get("provider", {}))
    if getattr(args, "provider_kind", None):
        provider_config["kind"] = args.provider_kind
    if getattr(args, "dim", None):
        provider_config["dim"] = args.dim
    if getattr(args, "identity", None):
        provider_config["identity"] = args.identity
    if getattr(args, "store_root", None):
        provider_config["root"] = args.store_root
    if getattr(args, "url", None):
        provider_config["url"] = args.url
    if "kind" not in provider_config:
        raise ValidationError("no embedding provider configured (flag --provider-kind or config 'provider')")
    return provider_from_config(provider_config)


# -- qa ----------------------------------------------------------------------


def cmd_qa(args, config: dict) -> dict:
    out = _out_dir(args)
    triples = load_triples(args.triples)
    annotations = load_annotations(args.annotations, triples)

    dimension = args.dimension
    dims = annotations.dimensions()
    if dimension is None:
        if len(dims) > 1:
            raise ValidationError(
                f"annotations mix dimensions {sorted(dims)}; pass --dimension"
            )
        dimension = dims.pop() if dims else None
    if dimension is None:
        raise DataError("annotation file is empty")
    annotations = annotations.for_dimension(dimension)
    if len(annotations) == 0:
        raise DataError(f"no {dimension} annotations in input")

    qa_config = qa.QaConfig(
        discrepancy_threshold=_opt(args.discrepancy_threshold, config, "qa", "discrepancy_threshold", 34),
        low_da_no_span_threshold=_opt(args.low_da_threshold, config, "qa", "low_da_threshold", 80),
        iaa_repeats=_opt(args.iaa_repeats, config, "qa", "iaa_repeats", 100),
        rng_seed=args.seed,
    )

    disc = qa.filter_discrepant(annotations, qa_config.discrepancy_threshold)
    if not disc.kept:
        raise ValidationError(
            "no segment has two agreeing annotators "
            f"(dropped {len(disc.dropped)}, singletons {len(disc.singletons)})"
        )
    kept = disc.kept_annotations()
    z_scores = qa.znormalize(kept)
    segment_scores = qa.aggregate_segments(kept, z_scores)
    z_means = [s.z_mean for s in segment_scores]
    scaled = qa.minmax_scale(z_means)
    segment_scores = [
        SegmentScore(s.segment_id, s.z_mean, s.n_annotators, scaled=v)
        for s, v in zip(segment_scores, scaled)
    ]
    save_segment_scores(segment_scores, out / "segment_scores.jsonl")
    scale = {"min": min(z_means), "max": max(z_means)}
    _write_json(out / "scale.json", scale)

    iaa_mean = qa.iaa(kept, repeats=qa_config.iaa_repeats, seed=qa_config.rng_seed)
    report_mod.write_iaa_csv(iaa_mean, qa_config.iaa_repeats, qa_config.rng_seed, out / "iaa.csv")

    # Analytics branch: low-DA filter, per-annotation error-word counts,
    # correlation of counts against raw and normalized scores.
    analytics = qa.filter_low_da_no_spans(annotations, qa_config.low_da_no_span_threshold)
    analytics_z = qa.znormalize(analytics)
    records = [
        qa.span_error_counts(ann, triples.get(ann.segment_id), z)
        for ann, z in zip(analytics, analytics_z)
    ]
    report_mod.write_error_counts_csv(records, out / "error_counts.csv")
    correlations_note = None
    try:
        rows = qa.error_score_correlations(records)
        report_mod.write_error_correlations_csv(rows, out / "error_correlations.csv")
    except ValidationError as exc:
        correlations_note = str(exc)

    summary = {
        "dimension": dimension,
        "annotations": len(annotations),
        "segments_kept": len(disc.kept),
        "segments_dropped": len(disc.dropped),
        "segments_singleton": len(disc.singletons),
        "iaa_mean_pearson": iaa_mean,
        "iaa_repeats": qa_config.iaa_repeats,
        "scale": scale,
        "analytics_annotations": len(analytics),
    }
    if correlations_note:
        summary["error_correlations_skipped"] = correlations_note
    _write_json(out / "qa_summary.json", summary)
    _write_run_meta(out, "qa", args)
    return summary


# -- train ---------------------------------------------------------------------


def _join_targets(triples, targets: dict[str, float]):
    examples = []
    missing = []
    for triple in triples:
        if triple.segment_id not in targets:
            missing.append(triple.segment_id)
        else:
            examples.append((triple, targets[triple.segment_id]))
    if missing:
        raise DataError(f"no target score for segments: {missing[:10]}")
    return examples


def cmd_train(args, config: dict) -> dict:
    out = _out_dir(args)
    provider = _provider(args, config)
    triples = load_triples(args.triples)
    targets = report_mod.load_score_file(args.targets)
    examples = _join_targets(triples, targets)

    mode = _opt(args.mode, config, "train", "mode", None)
    if mode is None:
        raise ValidationError("no training mode given (flag --mode or config train.mode)")
    hidden = args.hidden or config.get("train", {}).get("hidden", [2048, 1024])
    if isinstance(hidden, str):
        hidden = [int(h) for h in hidden.split(",") if h]

    train_config = TrainConfig(
        batch_size=_opt(args.batch_size, config, "train", "batch_size", 16),
        grad_accumulation=_opt(args.grad_accumulation, config, "train", "grad_accumulation", 2),
        learning_rate=_opt(args.learning_rate, config, "train", "learning_rate", 1e-3),
        epochs=_opt(args.epochs, config, "train", "epochs", 10),
        rng_seed=args.seed,
    )

    if args.val_triples and args.val_targets:
        val_triples = load_triples(args.val_triples)
        val_examples = _join_targets(val_triples, report_mod.load_score_file(args.val_targets))
    else:
        fraction = _opt(args.val_fraction, config, "train", "val_fraction", 0.2)
        val_examples = []
        if fraction > 0 and len(examples) >= 5:
            import numpy as np

            rng = np.random.default_rng(args.seed)
            n_val = max(1, int(round(fraction * len(examples))))
            val_idx = set(rng.permutation(len(examples))[:n_val].tolist())
            val_examples = [ex for i, ex in enumerate(examples) if i in val_idx]
            examples = [ex for i, ex in enumerate(examples) if i not in val_idx]

    scale = (0.0, 1.0)
    if args.scale:
        with open(args.scale, encoding="utf-8") as fh:
            loaded = json.load(fh)
        scale = (float(loaded["min"]), float(loaded["max"]))

    model = EstimatorModel(
        mode=mode,
        dim=provider.descriptor.dim,
        hidden=hidden,
        trunk_in=args.trunk_in,
        seed=args.seed,
        scale=scale,
        provider_identity=provider.descriptor.identity,
    )
    model, history = train(model, provider, examples, train_config, val_examples)

    checkpoint = out / "checkpoint.bin"
    save_model(model, checkpoint)
    with open(out / "history.csv", "w", encoding="utf-8") as fh:
        fh.write("epoch,train_mse,val_spearman\n")
        for row in history:
            spearman = "" if row.val_spearman is None else repr(row.val_spearman)
            fh.write(f"{row.epoch},{repr(row.train_mse)},{spearman}\n")
    _write_run_meta(out, "train", args)
    return {
        "checkpoint": str(checkpoint),
        "epochs": len(history),
        "train_examples": len(examples),
        "val_examples": len(val_examples),
        "final_train_mse": history[-1].train_mse if history else None,
    }


# -- score ---------------------------------------------------------------------


def cmd_score(args, config: dict) -> dict:
    out = _out_dir(args)
    model = load_model(args.checkpoint)
    provider = _provider(args, config)
    triples = load_triples(args.triples)

    needs_ref = model.mode == estimator.STL_REF or (
        model.mode == estimator.MTL and not args.qe
    )
    if needs_ref:
        missing = [t.segment_id for t in triples if not t.ref]
        if missing:
            raise DataError(
                f"mode {model.mode} requires references; missing for: {missing[:10]}"
            )

    scores: dict[str, float] = {}
    extra: dict[str, dict] = {}
    for triple in triples:
        result = model.score_triple(provider, triple, qe=args.qe)
        scores[triple.segment_id] = result.final
        extra[triple.segment_id] = {"score_descaled": result.descaled}
    report_mod.save_score_file(scores, out / "scores.jsonl", extra)
    _write_run_meta(out, "score", args)
    return {"segments": len(scores), "output": str(out / "scores.jsonl")}


# -- compare ---------------------------------------------------------------------


def cmd_compare(args, config: dict) -> report_mod.MetricReport:
    out = _out_dir(args)
    triples = load_triples(args.triples)
    human = report_mod.load_score_file(args.human)
    metrics: dict[str, dict[str, float]] = {}
    for spec in args.metric or []:
        name, _, path = spec.partition("=")
        if not name or not path:
            raise ValidationError(f"bad --metric value {spec!r}; expected NAME=PATH")
        if name in metrics:
            raise ValidationError(f"duplicate metric name {name!r}")
        metrics[name] = report_mod.load_score_file(path)
    if not metrics:
        raise ValidationError("pass at least one --metric NAME=PATH")

    result = report_mod.build_metric_report(
        triples,
        human,
        metrics,
        alpha=_opt(args.alpha, config, "compare", "alpha", 0.05),
        runs=_opt(args.runs, config, "compare", "runs", 200),
        seed=args.seed,
        corr_kind=_opt(args.corr_kind, config, "compare", "corr_kind", "spearman"),
    )
    report_mod.write_report_csv(result, out / "report.csv")
    report_mod.write_correlations_csv(result, out / "correlations.csv")
    report_mod.write_significance_csv(result, out / "significance.csv")
    with open(out / "report.txt", "w", encoding="utf-8") as fh:
        fh.write(report_mod.render_report_text(result))
        fh.write("\n")
    _write_run_meta(out, "compare", args)
    return result


# -- serve -----------------------------------------------------------------------


def cmd_serve(args, config: dict) -> None:
    import uvicorn

    from .service.app import create_app, load_service_config, storage_from_config

    service_config = load_service_config(args.config)
    if args.port is not None:
        service_config["port"] = args.port
    if args.storage is not None:
        service_config["storage_path"] = args.storage
    app = create_app(storage_from_config(service_config))
    uvicorn.run(app, host=service_config.get("host", "127.0.0.1"), port=int(service_config["port"]))


# -- embed-cache -------------------------------------------------------------------


def cmd_embed_cache(args, config: dict) -> dict:
    out = _out_dir(args)
    provider_config = dict(config.get("provider", {}))
    url = args.url or provider_config.get("url")
    dim = args.dim or provider_config.get("dim")
    identity = args.identity or provider_config.get("identity")
    store_root = args.store_root or provider_config.get("root")
    if not url or not dim or not identity or not store_root:
        raise ValidationError("embed-cache needs --url, --dim, --identity, and --store-root")

    remote = RemoteProvider(url, int(dim), identity)
    store = FileStoreProvider(store_root, int(dim), identity)
    triples = load_triples(args.triples)
    texts = sorted(
        {t.src for t in triples}
        | {t.mt for t in triples}
        | {t.ref for t in triples if t.ref}
    )
    stored = 0
    skipped = 0
    batch_size = 32
    for start in range(0, len(texts), batch_size):
        batch = texts[start : start + batch_size]
        todo = [t for t in batch if not store.contains(t)]
        skipped += len(batch) - len(todo)
        if not todo:
            continue
        for text, matrix in zip(todo, remote.embed_batch(todo)):
            store.put(text, matrix)
            stored += 1
    summary = {"texts": len(texts), "stored": stored, "already_present": skipped}
    _write_json(out / "embed_cache_summary.json", summary)
    _write_run_meta(out, "embed-cache", args)
    return summary


# -- argument parsing -----------------------------------------------------------


def _add_provider_args(parser: argparse.ArgumentParser) -> None:
    parser.add_argument("--provider-kind", choices=["deterministic_test", "file_store", "remote"])
    parser.add_argument("--dim", type=int, help="embedding width")
    parser.add_argument("--identity", help="provider identity string")
    parser.add_argument("--store-root", help="file-store directory")
    parser.add_argument("--url", help="remote embedding service URL")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="mtevalkit",
        description="MT evaluation workbench: annotation QA, metric training, scoring, and comparison",
    )
    parser.add_argument("--config", help="YAML config file")
    parser.add_argument("--seed", type=int, default=0, help="seed for all randomness (default 0)")
    parser.add_argument("--out", help="output directory (default: current directory)")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("qa", help="qualify, normalize, and analyze annotations")
    p.add_argument("--annotations", required=True)
    p.add_argument("--triples", required=True)
    p.add_argument("--dimension", choices=["adequacy", "fluency"])
    p.add_argument("--discrepancy-threshold", type=int)
    p.add_argument("--low-da-threshold", type=int)
    p.add_argument("--iaa-repeats", type=int)
    p.set_defaults(func=cmd_qa)

    p = sub.add_parser("train", help="train a scoring model on frozen embeddings")
    p.add_argument("--triples", required=True)
    p.add_argument("--targets", required=True, help="score file of min-max-scaled targets")
    p.add_argument("--mode", choices=["stl_ref", "stl_qe", "mtl"])
    p.add_argument("--val-triples")
    p.add_argument("--val-targets")
    p.add_argument("--val-fraction", type=float)
    p.add_argument("--batch-size", type=int)
    p.add_argument("--grad-accumulation", type=int)
    p.add_argument("--learning-rate", type=float)
    p.add_argument("--epochs", type=int)
    p.add_argument("--hidden", help="comma-separated hidden widths, e.g. 2048,1024")
    p.add_argument("--trunk-in", type=int, help="shared trunk input width (mtl only)")
    p.add_argument("--scale", help="JSON file with the target scaling pair {min, max}")
    _add_provider_args(p)
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("score", help="score triples with a trained checkpoint")
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--triples", required=True)
    p.add_argument("--qe", action="store_true", help="force the reference-free pathway")
    _add_provider_args(p)
    p.set_defaults(func=cmd_score)

    p = sub.add_parser("compare", help="compare metrics against human scores")
    p.add_argument("--triples", required=True)
    p.add_argument("--human", required=True)
    p.add_argument("--metric", action="append", metavar="NAME=PATH")
    p.add_argument("--alpha", type=float)
    p.add_argument("--runs", type=int)
    p.add_argument("--corr-kind", choices=["pearson", "spearman", "kendall"])
    p.set_defaults(func=cmd_compare)

    p = sub.add_parser("serve", help="launch the annotation collection service")
    p.add_argument("--port", type=int)
    p.add_argument("--storage", help="sqlite path (default: in-memory)")
    p.set_defaults(func=cmd_serve)

    p = sub.add_parser("embed-cache", help="pre-populate the embedding file store via a remote provider")
    p.add_argument("--triples", required=True)
    _add_provider_args(p)
    p.set_defaults(func=cmd_embed_cache)

    return parser


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        config = _load_config(args.config) if args.command != "serve" else {}
        args.func(args, config)
    except ValidationError as exc:
        print(f"validation error: {exc}", file=sys.stderr)
        return 2
    except DataError as exc:
        print(f"data error: {exc}", file=sys.stderr)
        return 3
    except MtevalError as exc:
        print(f"internal error: {exc}", file=sys.stderr)
        return 4
    except Exception as exc:
        print(f"internal error: {exc.__class__.__name__}: {exc}", file=sys.stderr)
        return 4
    return 0


if __name__ == "__main__":
    sys.exit(main())
