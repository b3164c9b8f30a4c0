"""Command-line entry point: one subcommand per pipeline stage.

Every subcommand is a pure function of its inputs, flags, and seed:
re-invocation writes byte-identical outputs.  Diagnostics go to stderr,
data to files or stdout.  Exit codes: 0 success, 1 validation or data
errors, 2 usage errors.  A JSON --config file can supply any flag value;
explicit flags win, and the effective configuration is echoed into every
output (a "config" record in line-delimited files, config_echo in
reports).  VOCLAB_THREADS caps per-stage worker parallelism.
"""

from __future__ import annotations

import argparse
import json
import os
import sys
from concurrent.futures import ThreadPoolExecutor
from fractions import Fraction
from pathlib import Path

from . import __version__
from .aggregation import (
    AggregationConfig,
    aggregate_manifest,
    load_tiers,
    tier_labels,
    write_tiers,
)  # load_tiers/tier_labels stay importable for downsample and library use
from .audio import AudioError, prep_file, read_clip_tensor, write_clip_tensor
from .dataset import (
    SamplingConfig,
    SplitConfig,
    apply_split_hint,
    downsample,
    load_split,
    split_children,
    write_split,
)
from .features import FeatureConfig, featurize_clips, import_embeddings, write_embeddings
from .manifest import LabelClass, ManifestError, load_manifest
from .metrics import (
    bootstrap_ci,
    default_weight_matrix,
    filter_by_annotator_count,
    load_weight_matrix,
    model_vs_annotators,
    weighted_fleiss_kappa,
)
from .model import (
    TrainConfig,
    load_model,
    load_predictions,
    predict,
    save_model,
    train,
    write_predictions,
)
from .report import (
    compare_matrix,
    evaluate,
    load_report_dict,
    write_report_json,
    write_report_markdown,
    _atomic_write_text,
)


def _threads() -> int:
    raw = os.environ.get("VOCLAB_THREADS", "")
    try:
        return max(1, int(raw))
    except ValueError:
        return max(1, os.cpu_count() or 1)


def _pmap(func, items):
    n = _threads()
    if n == 1 or len(items) < 2:
        return [func(item) for item in items]
    with ThreadPoolExecutor(max_workers=n) as pool:
        return list(pool.map(func, items))


def _echo(stage: str, args: argparse.Namespace, keys: list[str]) -> dict:
    obj = {"kind": "config", "stage": stage, "voclab_version": __version__}
    for key in keys:
        value = getattr(args, key.replace("-", "_"))
        if isinstance(value, Fraction):
            value = str(value)
        obj[key] = value
    return obj


def _apply_config_file(args: argparse.Namespace, parser: argparse.ArgumentParser):
    """Fill unset flags (None) from the JSON config file, if given."""
    if not getattr(args, "config", None):
        return
    with open(args.config, encoding="utf-8") as fh:
        values = json.load(fh)
    for key, value in values.items():
        attr = key.replace("-", "_")
        if hasattr(args, attr) and getattr(args, attr) is None:
            setattr(args, attr, value)


def _fraction(text: str) -> Fraction:
    return Fraction(text)


def _ratios(text: str) -> tuple[Fraction, Fraction, Fraction]:
    parts = [Fraction(p) for p in text.split(",")]
    if len(parts) != 3:
        raise argparse.ArgumentTypeError("ratios must be three comma-separated values")
    return tuple(parts)  # type: ignore[return-value]


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="voclab",
        description="Child vocalization maturity pipeline: annotation "
        "aggregation, corpus building, training, and evaluation.",
    )
    parser.add_argument("--version", action="version", version=f"voclab {__version__}")
    sub = parser.add_subparsers(dest="command", required=True)

    def add(name, help_text):
        p = sub.add_parser(name, help=help_text)
        p.add_argument("--config", help="JSON file supplying default flag values")
        p.add_argument("--seed", type=int, default=None, help="PRNG seed (default 0)")
        return p

    p = add("aggregate", "aggregate annotations into Cleaned/Uncleaned tiers")
    p.add_argument("--manifest", required=True)
    p.add_argument("--store", default=None,
                   help="annotation log (e.g. the serve store) merged into the manifest")
    p.add_argument("--out", required=True)
    p.add_argument("--threshold", type=_fraction, default=None,
                   help="strong-majority threshold as a fraction (default 2/3)")
    p.add_argument("--min-annotations", type=int, default=None)
    p.add_argument("--tie-policy", choices=["exclude", "fixed_priority"], default=None)

    p = add("downsample", "cap class counts at multiplier x anchor class")
    p.add_argument("--tiers", required=True)
    p.add_argument("--tier", choices=["cleaned", "uncleaned"], default=None)
    p.add_argument("--manifest", required=True)
    p.add_argument("--anchor-class", default=None)
    p.add_argument("--multiplier", type=_fraction, default=None)
    p.add_argument("--out", required=True)

    p = add("split", "child-disjunct stratified train/dev/test assignment")
    p.add_argument("--manifest", required=True)
    p.add_argument("--labels", default=None,
                   help="labeled-clip file (e.g. downsample output); default: all manifest clips")
    p.add_argument("--ratios", type=_ratios, default=None)
    p.add_argument("--age-bucket-months", type=int, default=None)
    p.add_argument("--strata", default=None,
                   help="comma-separated stratify keys from {language, age_bucket}")
    p.add_argument("--from-hints", action="store_true",
                   help="take the manifest's split records verbatim")
    p.add_argument("--out", required=True)

    p = add("prep", "normalize audio to 9217-sample 16 kHz clip tensors")
    p.add_argument("--manifest", dest="manifest", required=False, default=None)
    p.add_argument("--in", dest="manifest", required=False,
                   help="alias for --manifest")
    p.add_argument("--out", required=True)
    p.add_argument("--on-overflow", choices=["error", "crop"], default=None)

    p = add("featurize", "log-mel summary features from clip tensors")
    p.add_argument("--clips", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--n-mels", type=int, default=None)

    p = add("train", "train the 5-way softmax head")
    p.add_argument("--features", required=True)
    p.add_argument("--labels", required=True, help="labeled-clip file (tier or downsample output)")
    p.add_argument("--splits", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--epochs", type=int, default=None)
    p.add_argument("--batch-size", type=int, default=None)
    p.add_argument("--hidden", type=int, default=None)
    p.add_argument("--lr", type=float, default=None)
    p.add_argument("--optimizer", choices=["sgd_momentum", "adaptive_moments"], default=None)
    p.add_argument("--momentum", type=float, default=None)
    p.add_argument("--feature-kind", choices=["logmel_stats", "imported_embedding"], default=None)

    p = add("predict", "softmax scores for every feature vector")
    p.add_argument("--model", required=True)
    p.add_argument("--features", required=True)
    p.add_argument("--out", required=True)

    p = add("evaluate", "UAR, confusion, ROC/AUC, and stratified report")
    p.add_argument("--preds", required=True)
    p.add_argument("--tiers", required=True)
    p.add_argument("--tier", choices=["cleaned", "uncleaned"], default=None)
    p.add_argument("--manifest", required=True)
    p.add_argument("--splits", default=None)
    p.add_argument("--fold", choices=["train", "dev", "test"], default=None)
    p.add_argument("--strata", default=None,
                   help="comma-separated keys from {environment, language, corpus_id, age_bucket}")
    p.add_argument("--resamples", type=int, default=None)
    p.add_argument("--weights", default=None, help="disagreement-cost matrix file")
    p.add_argument("--min-pairs", type=int, default=None)
    p.add_argument("--age-bucket-months", type=int, default=None)
    p.add_argument("--dataset-id", default=None)
    p.add_argument("--finetune-id", default=None)
    p.add_argument("--out", required=True, help="machine-readable JSON report")
    p.add_argument("--report-md", default=None, help="human-readable markdown report")

    p = add("agreement", "inter-annotator and model-vs-annotator kappas")
    p.add_argument("--manifest", required=True)
    p.add_argument("--preds", default=None)
    p.add_argument("--weights", default=None)
    p.add_argument("--max-annotators", type=int, default=None)
    p.add_argument("--resamples", type=int, default=None)
    p.add_argument("--min-pairs", type=int, default=None)
    p.add_argument("--pooled", action="store_true",
                   help="pool all pairs into one model-vs-annotator kappa")
    p.add_argument("--out", required=True)

    p = add("report", "fine-tune x test UAR comparison grid")
    p.add_argument("--reports", nargs="+", required=True)
    p.add_argument("--out", required=True)

    p = add("serve", "run the annotation collection service")
    p.add_argument("--manifest", required=True)
    p.add_argument("--gold-manifest", default=None)
    p.add_argument("--store", required=True)
    p.add_argument("--host", default=None)
    p.add_argument("--port", type=int, default=None)
    p.add_argument("--target-per-clip", type=int, default=None)
    p.add_argument("--qual-n", type=int, default=None)
    p.add_argument("--qual-threshold", type=_fraction, default=None)
    p.add_argument("--continue-past-target", action="store_true")
    p.add_argument("--shared-secret", default=None)
    p.add_argument("--ui-dir", default=None)

    return parser


def _default(args, attr, value):
    if getattr(args, attr, None) is None:
        setattr(args, attr, value)


# --- stage implementations ---------------------------------------------------


def cmd_aggregate(args) -> int:
    _default(args, "threshold", Fraction(2, 3))
    _default(args, "min_annotations", 3)
    _default(args, "tie_policy", "exclude")
    manifest = load_manifest(args.manifest)
    if args.store:
        from .manifest import Manifest, load_annotation_log, validate_manifest

        merged = Manifest(list(manifest.records) + list(load_annotation_log(args.store)))
        violations = validate_manifest(merged)
        if violations:
            raise ManifestError(
                "manifest + store failed validation:\n  " + "\n  ".join(violations)
            )
        manifest = merged
    cfg = AggregationConfig(
        strong_majority_threshold=Fraction(args.threshold),
        min_annotations=args.min_annotations,
        tie_policy=args.tie_policy,
    )
    aggs = aggregate_manifest(manifest, cfg)
    header = _echo("aggregate", args, ["manifest", "store", "threshold", "min-annotations", "tie-policy"])
    write_tiers(aggs, args.out, header=header)
    dropped = sum(1 for a in aggs if not a.in_uncleaned)
    print(
        f"aggregated {len(aggs)} clips: "
        f"{sum(a.in_cleaned for a in aggs)} cleaned, "
        f"{sum(a.in_uncleaned for a in aggs)} uncleaned, {dropped} dropped",
        file=sys.stderr,
    )
    return 0


def _write_labeled(path, items, header):
    with open(path, "w", encoding="utf-8") as fh:
        fh.write(json.dumps(header, separators=(",", ":"), sort_keys=True) + "\n")
        for clip_id, label in items:
            obj = {"kind": "labeled_clip", "clip_id": clip_id, "label": label.value}
            fh.write(json.dumps(obj, separators=(",", ":")) + "\n")


def _load_labeled(path, tier: str = "uncleaned") -> dict[str, LabelClass]:
    """clip -> label from a labeled-clip or tier file.

    Tier records are filtered by the requested tier flag; labeled_clip
    records (downsample output) are taken as-is.
    """
    flag = "in_cleaned" if tier == "cleaned" else "in_uncleaned"
    out: dict[str, LabelClass] = {}
    with open(path, encoding="utf-8") as fh:
        for line in fh:
            line = line.strip()
            if not line:
                continue
            obj = json.loads(line)
            if obj.get("kind") == "labeled_clip":
                out[obj["clip_id"]] = LabelClass.from_name(obj["label"])
            elif obj.get("kind") == "tier":
                if obj.get(flag) and obj.get("label"):
                    out[obj["clip_id"]] = LabelClass.from_name(obj["label"])
    return out


def cmd_downsample(args) -> int:
    _default(args, "tier", "cleaned")
    _default(args, "anchor_class", "laughing")
    _default(args, "multiplier", Fraction(3))
    _default(args, "seed", 0)
    manifest = load_manifest(args.manifest)
    labels = tier_labels(load_tiers(args.tiers), args.tier)
    labeled = [
        (manifest.clips_by_id[cid], lab)
        for cid, lab in sorted(labels.items())
        if cid in manifest.clips_by_id
    ]
    cfg = SamplingConfig(
        anchor_class=LabelClass.from_name(args.anchor_class),
        multiplier=Fraction(args.multiplier),
        seed=args.seed,
    )
    kept = downsample(labeled, cfg)
    header = _echo(
        "downsample", args, ["tiers", "tier", "manifest", "anchor-class", "multiplier", "seed"]
    )
    _write_labeled(args.out, [(c.clip_id, lab) for c, lab in kept], header)
    print(f"kept {len(kept)} of {len(labeled)} clips", file=sys.stderr)
    return 0


def cmd_split(args) -> int:
    _default(args, "ratios", (Fraction(8, 10), Fraction(1, 10), Fraction(1, 10)))
    _default(args, "age_bucket_months", 12)
    _default(args, "strata", "language,age_bucket")
    _default(args, "seed", 0)
    manifest = load_manifest(args.manifest)
    if args.from_hints:
        assignment, violations = apply_split_hint(manifest)
        for violation in violations:
            print(f"violation: {violation}", file=sys.stderr)
        header = _echo("split", args, ["manifest", "from_hints"])
        write_split(assignment, args.out, header=header)
        return 1 if violations else 0
    if args.labels:
        labels = _load_labeled(args.labels)
        labeled = [
            (manifest.clips_by_id[cid], lab)
            for cid, lab in sorted(labels.items())
            if cid in manifest.clips_by_id
        ]
    else:
        labeled = [(clip, LabelClass.JUNK) for clip in manifest.clips]
    stratify = tuple(k for k in args.strata.split(",") if k)
    cfg = SplitConfig(
        ratios=tuple(Fraction(r) for r in args.ratios),
        seed=args.seed,
        age_bucket_months=args.age_bucket_months,
        stratify_keys=stratify,
    )
    assignment = split_children(labeled, cfg)
    header = _echo(
        "split", args,
        ["manifest", "labels", "ratios", "age-bucket-months", "strata", "seed"],
    )
    header["ratios"] = [str(r) for r in args.ratios]
    write_split(assignment, args.out, header=header)
    props = assignment.proportions()
    print(
        "fold proportions: "
        + ", ".join(f"{fold}={props[fold]:.3f}" for fold in ("train", "dev", "test")),
        file=sys.stderr,
    )
    return 0


def cmd_prep(args) -> int:
    _default(args, "on_overflow", "error")
    if not args.manifest:
        print("prep: --manifest/--in is required", file=sys.stderr)
        return 2
    manifest = load_manifest(args.manifest)
    base = Path(args.manifest).parent

    def one(clip):
        path = Path(clip.audio_uri)
        if not path.is_absolute():
            path = base / path
        try:
            return clip.clip_id, prep_file(path, on_overflow=args.on_overflow).samples
        except (AudioError, FileNotFoundError) as exc:
            raise AudioError(f"clip {clip.clip_id!r}: {exc}") from None

    entries = _pmap(one, list(manifest.clips))
    write_clip_tensor(entries, args.out)
    print(f"prepared {len(entries)} clips -> {args.out}", file=sys.stderr)
    return 0


def cmd_featurize(args) -> int:
    _default(args, "n_mels", 40)
    cfg = FeatureConfig(n_mels=args.n_mels)
    entries = read_clip_tensor(args.clips)
    chunks = _pmap(lambda e: featurize_clips([e], cfg)[0], entries)
    write_embeddings(chunks, args.out)
    print(f"featurized {len(chunks)} clips (dim {cfg.dim})", file=sys.stderr)
    return 0


def cmd_train(args) -> int:
    _default(args, "epochs", 10)
    _default(args, "batch_size", 32)
    _default(args, "hidden", 256)
    _default(args, "lr", 1e-2)
    _default(args, "optimizer", "sgd_momentum")
    _default(args, "momentum", 0.9)
    _default(args, "seed", 0)
    _default(args, "feature_kind", "logmel_stats")
    vectors = {v.clip_id: v for v in import_embeddings(args.features)}
    labels = _load_labeled(args.labels)
    assignment = load_split(args.splits)
    train_set, dev_set = [], []
    for cid in sorted(labels):
        if cid not in vectors:
            continue
        fold = assignment.clip_to_fold.get(cid)
        if fold == "train":
            train_set.append((vectors[cid], labels[cid]))
        elif fold == "dev":
            dev_set.append((vectors[cid], labels[cid]))
    cfg = TrainConfig(
        batch_size=args.batch_size,
        epochs=args.epochs,
        learning_rate=args.lr,
        hidden_units=args.hidden,
        seed=args.seed,
        optimizer=args.optimizer,
        momentum=args.momentum,
    )
    feature_config = FeatureConfig(kind=args.feature_kind)
    model = train(train_set, dev_set, cfg, feature_config=feature_config)
    save_model(model, args.out)
    best = model.training_log[model.selected_epoch - 1]
    print(
        f"trained on {len(train_set)} clips, dev {len(dev_set)}; "
        f"best epoch {model.selected_epoch} (dev UAR {best.dev_uar:.1f}%)",
        file=sys.stderr,
    )
    return 0


def cmd_predict(args) -> int:
    model = load_model(args.model)
    vectors = import_embeddings(args.features)
    preds = predict(model, vectors)
    header = _echo("predict", args, ["model", "features"])
    write_predictions(preds, args.out, header=header)
    print(f"predicted {len(preds)} clips", file=sys.stderr)
    return 0


def cmd_evaluate(args) -> int:
    _default(args, "tier", "cleaned")
    _default(args, "fold", "test")
    _default(args, "strata", "environment")
    _default(args, "resamples", 1000)
    _default(args, "min_pairs", 20)
    _default(args, "age_bucket_months", 12)
    _default(args, "seed", 0)
    _default(args, "dataset_id", Path(args.tiers).stem)
    _default(args, "finetune_id", Path(args.preds).stem)
    manifest = load_manifest(args.manifest)
    gold = _load_labeled(args.tiers, tier=args.tier)
    split = None
    if args.splits:
        split = load_split(args.splits)
        gold = {
            cid: lab
            for cid, lab in gold.items()
            if split.clip_to_fold.get(cid) == args.fold
        }
    if not gold:
        print("evaluate: no gold clips selected", file=sys.stderr)
        return 1
    preds = [p for p in load_predictions(args.preds) if p.clip_id in gold]
    weight_matrix = load_weight_matrix(args.weights) if args.weights else None
    echo = _echo(
        "evaluate", args,
        ["preds", "tiers", "tier", "manifest", "splits", "fold", "strata",
         "resamples", "weights", "min-pairs", "age-bucket-months", "seed",
         "dataset-id", "finetune-id"],
    )
    report = evaluate(
        preds,
        gold,
        manifest,
        strata_keys=tuple(k for k in args.strata.split(",") if k),
        seed=args.seed,
        resamples=args.resamples,
        weight_matrix=weight_matrix,
        dataset_id=args.dataset_id,
        tier=args.tier,
        finetune_id=args.finetune_id,
        age_bucket_months=args.age_bucket_months,
        split=split,
        min_pairs=args.min_pairs,
        config_echo=echo,
    )
    write_report_json(report, args.out)
    if args.report_md:
        write_report_markdown(report, args.report_md)
    print(
        f"UAR {report.overall_uar:.1f}% over {int(report.confusion.sum())} clips",
        file=sys.stderr,
    )
    return 0


def cmd_agreement(args) -> int:
    _default(args, "resamples", 1000)
    _default(args, "min_pairs", 20)
    _default(args, "seed", 0)
    manifest = load_manifest(args.manifest)
    w = load_weight_matrix(args.weights) if args.weights else default_weight_matrix()
    by_clip = manifest.annotations_by_clip()
    items = [
        [a.label for a in by_clip[cid]] for cid in sorted(by_clip)
    ]
    if args.max_annotators is not None:
        items = filter_by_annotator_count(items, args.max_annotators)
    result = weighted_fleiss_kappa(items, w)
    boot = bootstrap_ci(
        lambda sample: weighted_fleiss_kappa(sample, w).kappa,
        items,
        resamples=args.resamples,
        seed=args.seed,
    )
    out = {
        "schema_version": 1,
        "fleiss": {
            "kappa": result.kappa,
            "ci_low": boot.low,
            "ci_high": boot.high,
            "sd": boot.sd,
            "n_items": result.n_items,
            "n_excluded": result.n_excluded,
            "max_annotators": args.max_annotators,
        },
        "weight_matrix": w.d.tolist(),
        "config_echo": _echo(
            "agreement", args,
            ["manifest", "preds", "weights", "max-annotators", "resamples",
             "min-pairs", "pooled", "seed"],
        ),
    }
    if args.preds:
        preds = load_predictions(args.preds)
        covered = {p.clip_id for p in preds}
        annotations = [a for a in manifest.annotations if a.clip_id in covered]
        if annotations:
            agreement = model_vs_annotators(
                preds, annotations, w, min_pairs=args.min_pairs, pooled=args.pooled
            )
            out["model_vs_annotators"] = {
                "mean_kappa": agreement.mean_kappa,
                "sd": agreement.sd,
                "pooled": agreement.pooled,
                "per_annotator": [
                    {
                        "annotator_id": a.annotator_id,
                        "n_pairs": a.n_pairs,
                        "kappa": a.kappa,
                        "qualified": a.qualified,
                        "note": a.note,
                    }
                    for a in agreement.per_annotator
                ],
            }
    _atomic_write_text(json.dumps(out, sort_keys=True, indent=2) + "\n", args.out)
    print(
        f"fleiss kappa {result.kappa:.3f} "
        f"(95% CI {boot.low:.3f}-{boot.high:.3f}, n={result.n_items})",
        file=sys.stderr,
    )
    return 0


def cmd_report(args) -> int:
    dicts = [load_report_dict(path) for path in args.reports]
    _atomic_write_text(compare_matrix(dicts), args.out)
    print(f"compared {len(dicts)} report(s)", file=sys.stderr)
    return 0


def cmd_serve(args) -> int:
    import uvicorn

    from .service import AnnotationService, ServiceConfig, create_app

    _default(args, "host", "127.0.0.1")
    _default(args, "port", 8000)
    _default(args, "target_per_clip", 3)
    _default(args, "qual_n", 10)
    _default(args, "qual_threshold", Fraction(4, 5))
    _default(args, "seed", 0)
    config = ServiceConfig(
        manifest_path=Path(args.manifest),
        store_path=Path(args.store),
        gold_manifest_path=Path(args.gold_manifest) if args.gold_manifest else None,
        target_per_clip=args.target_per_clip,
        qual_n=args.qual_n,
        qual_threshold=Fraction(args.qual_threshold),
        seed=args.seed,
        continue_past_target=args.continue_past_target,
        shared_secret=args.shared_secret,
        ui_dir=Path(args.ui_dir) if args.ui_dir else None,
    )
    app = create_app(AnnotationService(config))
    uvicorn.run(app, host=args.host, port=args.port, log_level="warning")
    return 0


COMMANDS = {
    "aggregate": cmd_aggregate,
    "downsample": cmd_downsample,
    "split": cmd_split,
    "prep": cmd_prep,
    "featurize": cmd_featurize,
    "train": cmd_train,
    "predict": cmd_predict,
    "evaluate": cmd_evaluate,
    "agreement": cmd_agreement,
    "report": cmd_report,
    "serve": cmd_serve,
}


def run(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        _apply_config_file(args, parser)
        return COMMANDS[args.command](args)
    except (ManifestError, AudioError, ValueError, FileNotFoundError, RuntimeError) as exc:
        print(f"voclab {args.command}: {exc}", file=sys.stderr)
        return 1


def main() -> None:
    sys.exit(run())
