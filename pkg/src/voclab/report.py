"""Evaluation orchestration and report rendering.

evaluate() turns predictions plus gold tier labels into an
EvaluationReport: overall UAR / confusion / per-class recall and AUC,
per-stratum UAR with bootstrap standard deviations (in percentage
points), and optional model-vs-annotator agreement.  Reports serialize
to a versioned JSON document and to markdown tables laid out like the
fine-tune x test UAR grid and the environment-distribution table.
Both forms are written atomically and reproduce byte-identically for
identical inputs and seed.
"""

from __future__ import annotations

import hashlib
import json
import os
import tempfile
import warnings
from dataclasses import dataclass, field
from pathlib import Path
from typing import Optional, Sequence

import numpy as np

from . import metrics
from .dataset import SplitAssignment
from .manifest import FOLDS, LABELS, LabelClass, Manifest
from .metrics import WeightMatrix, bootstrap_ci, confusion, per_class_recall, uar
from .model import PredictionRecord

SCHEMA_VERSION = 1

STRATUM_KEYS = ("environment", "language", "corpus_id", "age_bucket")


@dataclass
class StratumResult:
    value: str
    uar: float
    sd: float  # bootstrap sd, percentage points
    n_clips: int
    confusion: np.ndarray


@dataclass
class EvaluationReport:
    dataset_id: str
    tier: str
    finetune_id: str
    overall_uar: float
    confusion: np.ndarray
    recalls: dict[LabelClass, Optional[float]]
    aucs: dict[LabelClass, float]
    roc_curves: dict[LabelClass, "metrics.RocCurve"]
    zero_support: list[str]
    strata: dict[str, dict[str, StratumResult]]
    fold_counts: dict[str, dict[str, dict[str, int]]]  # key -> value -> fold -> n
    agreement: Optional[dict]
    weight_matrix: np.ndarray
    config_echo: dict = field(default_factory=dict)


def _stratum_value(clip, key: str, age_bucket_months: int) -> str:
    if key == "environment":
        return clip.environment
    if key == "language":
        return clip.language
    if key == "corpus_id":
        return clip.corpus_id
    if key == "age_bucket":
        lo = (clip.age_months // age_bucket_months) * age_bucket_months
        return f"{lo:03d}-{lo + age_bucket_months - 1:03d}mo"
    raise ValueError(f"unknown stratum key {key!r}; known: {STRATUM_KEYS}")


def _derived_seed(seed: int, tag: str) -> int:
    digest = hashlib.sha256(f"{seed}:{tag}".encode()).digest()
    return int.from_bytes(digest[:8], "little")


def _uar_quiet(pairs) -> float:
    with warnings.catch_warnings():
        warnings.simplefilter("ignore", metrics.ZeroSupportWarning)
        return uar(confusion(pairs))


def evaluate(
    preds: Sequence[PredictionRecord],
    gold: dict[str, LabelClass],
    manifest: Manifest,
    strata_keys: Sequence[str] = ("environment",),
    seed: int = 0,
    resamples: int = 1000,
    weight_matrix: Optional[WeightMatrix] = None,
    dataset_id: str = "dataset",
    tier: str = "cleaned",
    finetune_id: str = "model",
    age_bucket_months: int = 12,
    split: Optional[SplitAssignment] = None,
    min_pairs: int = 20,
    with_agreement: bool = True,
    config_echo: Optional[dict] = None,
) -> EvaluationReport:
    """Full evaluation of predictions against one gold tier."""
    weight_matrix = weight_matrix or metrics.default_weight_matrix()
    for key in strata_keys:
        if key not in STRATUM_KEYS:
            raise ValueError(f"unknown stratum key {key!r}; known: {STRATUM_KEYS}")
    pred_by_clip = {p.clip_id: p for p in preds}
    missing = sorted(set(gold) - set(pred_by_clip))
    if missing:
        shown = ", ".join(missing[:10])
        more = f" (+{len(missing) - 10} more)" if len(missing) > 10 else ""
        raise ValueError(f"predictions missing for gold clips: {shown}{more}")
    unknown_clips = sorted(set(gold) - set(manifest.clips_by_id))
    if unknown_clips:
        raise ValueError(f"gold clips absent from manifest: {unknown_clips[:10]}")

    gold_ids = sorted(gold)
    pairs = [(gold[cid], pred_by_clip[cid].predicted) for cid in gold_ids]
    cm = confusion(pairs)
    recalls = per_class_recall(cm)
    zero_support = [lab.value for lab, r in recalls.items() if r is None]
    with warnings.catch_warnings():
        warnings.simplefilter("ignore", metrics.ZeroSupportWarning)
        overall = uar(cm)
    roc_curves = metrics.per_class_roc([pred_by_clip[cid] for cid in gold_ids], gold)
    aucs = {lab: curve.auc for lab, curve in roc_curves.items()}

    strata: dict[str, dict[str, StratumResult]] = {}
    for key in strata_keys:
        groups: dict[str, list[str]] = {}
        for cid in gold_ids:
            value = _stratum_value(manifest.clips_by_id[cid], key, age_bucket_months)
            groups.setdefault(value, []).append(cid)
        strata[key] = {}
        for value in sorted(groups):
            ids = groups[value]
            s_pairs = [(gold[cid], pred_by_clip[cid].predicted) for cid in ids]
            s_cm = confusion(s_pairs)
            with warnings.catch_warnings():
                warnings.simplefilter("ignore", metrics.ZeroSupportWarning)
                s_uar = uar(s_cm)
            boot = bootstrap_ci(
                _uar_quiet,
                s_pairs,
                resamples=resamples,
                seed=_derived_seed(seed, f"{key}={value}"),
            )
            strata[key][value] = StratumResult(
                value=value,
                uar=s_uar,
                sd=boot.sd,
                n_clips=len(ids),
                confusion=s_cm.counts,
            )

    # fold x stratum clip counts over the whole manifest (distribution table)
    fold_counts: dict[str, dict[str, dict[str, int]]] = {}
    if split is not None:
        for key in strata_keys:
            table: dict[str, dict[str, int]] = {}
            for clip in manifest.clips:
                fold = split.clip_to_fold.get(clip.clip_id)
                if fold is None:
                    continue
                value = _stratum_value(clip, key, age_bucket_months)
                table.setdefault(value, {f: 0 for f in FOLDS})[fold] += 1
            fold_counts[key] = {v: table[v] for v in sorted(table)}

    agreement = None
    if with_agreement:
        by_clip = manifest.annotations_by_clip()
        anns = [a for cid in gold_ids for a in by_clip.get(cid, [])]
        if anns:
            try:
                result = metrics.model_vs_annotators(
                    [pred_by_clip[cid] for cid in gold_ids],
                    anns,
                    weight_matrix,
                    min_pairs=min_pairs,
                )
                agreement = {
                    "method": "cohen_weighted",
                    "mean_kappa": result.mean_kappa,
                    "sd": result.sd,
                    "n_annotators": sum(
                        1 for a in result.per_annotator if a.qualified
                    ),
                    "n_excluded": sum(
                        1 for a in result.per_annotator if not a.qualified
                    ),
                }
            except ValueError:
                agreement = {"method": "cohen_weighted", "error": "no qualifying annotator"}

    return EvaluationReport(
        dataset_id=dataset_id,
        tier=tier,
        finetune_id=finetune_id,
        overall_uar=overall,
        confusion=cm.counts,
        recalls=recalls,
        aucs=aucs,
        roc_curves=roc_curves,
        zero_support=zero_support,
        strata=strata,
        fold_counts=fold_counts,
        agreement=agreement,
        weight_matrix=weight_matrix.d,
        config_echo=dict(config_echo or {}),
    )


# --- serialization ----------------------------------------------------------


def report_to_dict(report: EvaluationReport) -> dict:
    return {
        "schema_version": SCHEMA_VERSION,
        "dataset_id": report.dataset_id,
        "tier": report.tier,
        "finetune_id": report.finetune_id,
        "overall": {
            "uar_percent": report.overall_uar,
            "confusion": report.confusion.tolist(),
            "class_order": [lab.value for lab in LABELS],
            "per_class_recall": {
                lab.value: report.recalls[lab] for lab in LABELS
            },
            "per_class_auc": {
                lab.value: report.aucs.get(lab) for lab in LABELS
            },
            # ROC points as plain data for external plotting tools
            "per_class_roc": {
                lab.value: {
                    "fpr": [p[0] for p in curve.points],
                    "tpr": [p[1] for p in curve.points],
                    "thresholds": curve.thresholds,
                }
                for lab, curve in report.roc_curves.items()
            },
            "zero_support_classes": report.zero_support,
            "n_clips": int(report.confusion.sum()),
        },
        "strata": {
            key: {
                value: {
                    "uar_percent": res.uar,
                    "sd_percent_points": res.sd,
                    "n_clips": res.n_clips,
                    "confusion": res.confusion.tolist(),
                }
                for value, res in by_value.items()
            }
            for key, by_value in report.strata.items()
        },
        "fold_counts": report.fold_counts,
        "agreement": report.agreement,
        "weight_matrix": report.weight_matrix.tolist(),
        "config_echo": report.config_echo,
    }


def _atomic_write_text(text: str, path: str | Path) -> None:
    path = Path(path)
    fd, tmp = tempfile.mkstemp(dir=str(path.parent), prefix=path.name, suffix=".tmp")
    try:
        with os.fdopen(fd, "w", encoding="utf-8") as fh:
            fh.write(text)
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise


def write_report_json(report: EvaluationReport, path: str | Path) -> None:
    text = json.dumps(report_to_dict(report), sort_keys=True, indent=2) + "\n"
    _atomic_write_text(text, path)


def load_report_dict(path: str | Path) -> dict:
    with open(path, encoding="utf-8") as fh:
        obj = json.load(fh)
    if obj.get("schema_version") != SCHEMA_VERSION:
        raise ValueError(f"{path}: unsupported report schema {obj.get('schema_version')}")
    return obj


# --- markdown rendering -------------------------------------------------------


def _fmt(value, digits=1) -> str:
    if value is None:
        return "-"
    return f"{value:.{digits}f}"


def render_markdown(report: EvaluationReport) -> str:
    lines = []
    lines.append(f"# Evaluation: {report.finetune_id} on {report.dataset_id} ({report.tier})")
    lines.append("")
    lines.append("All UAR values and standard deviations are in percentage points.")
    lines.append("")
    lines.append(f"Overall UAR: **{report.overall_uar:.1f}%** "
                 f"({int(report.confusion.sum())} clips)")
    if report.zero_support:
        lines.append(f"Zero-support classes excluded from UAR: {', '.join(report.zero_support)}")
    lines.append("")

    lines.append("## UAR by fine-tuning (rows) and testing set (columns)")
    lines.append("")
    lines.append(f"| Fine-tuning \\ Test | {report.dataset_id} ({report.tier}) |")
    lines.append("|---|---|")
    lines.append(f"| {report.finetune_id} | {report.overall_uar:.1f} |")
    lines.append("")

    lines.append("## Confusion matrix (rows = reference, columns = predicted)")
    lines.append("")
    header = "| | " + " | ".join(lab.value for lab in LABELS) + " |"
    lines.append(header)
    lines.append("|" + "---|" * (len(LABELS) + 1))
    for lab in LABELS:
        row = report.confusion[lab.index]
        lines.append(
            f"| **{lab.value}** | " + " | ".join(str(int(v)) for v in row) + " |"
        )
    lines.append("")

    lines.append("## Per-class recall and AUC")
    lines.append("")
    lines.append("| class | recall | AUC |")
    lines.append("|---|---|---|")
    for lab in LABELS:
        recall = report.recalls[lab]
        auc = report.aucs.get(lab)
        lines.append(
            f"| {lab.value} | {_fmt(None if recall is None else 100 * recall)} | "
            f"{_fmt(auc, 3)} |"
        )
    lines.append("")

    for key, by_value in report.strata.items():
        lines.append(f"## Distribution and performance by {key}")
        lines.append("")
        values = list(by_value)
        lines.append("| Split/Metric | " + " | ".join(values) + " | Total |")
        lines.append("|---|" + "---|" * (len(values) + 1))
        counts_table = report.fold_counts.get(key)
        if counts_table:
            for fold in FOLDS:
                cells = [str(counts_table.get(v, {}).get(fold, 0)) for v in values]
                total = sum(counts_table.get(v, {}).get(fold, 0) for v in values)
                lines.append(
                    f"| {fold.capitalize()} clips | " + " | ".join(cells) + f" | {total} |"
                )
            totals = [str(sum(counts_table.get(v, {}).values())) for v in values]
            grand = sum(sum(counts_table.get(v, {}).values()) for v in values)
            lines.append("| Total clips | " + " | ".join(totals) + f" | {grand} |")
        eval_cells = [str(by_value[v].n_clips) for v in values]
        eval_total = sum(by_value[v].n_clips for v in values)
        lines.append(
            "| Evaluated clips | " + " | ".join(eval_cells) + f" | {eval_total} |"
        )
        uar_cells = [
            f"**{by_value[v].uar:.1f}** ({by_value[v].sd:.2f})" for v in values
        ]
        lines.append("| UAR (SD) | " + " | ".join(uar_cells) + " | - |")
        lines.append("")

    if report.agreement:
        lines.append("## Model vs annotator agreement (weighted Cohen's kappa)")
        lines.append("")
        if "error" in report.agreement:
            lines.append(f"Not computed: {report.agreement['error']}")
        else:
            lines.append(
                f"Mean kappa = {report.agreement['mean_kappa']:.3f} "
                f"(SD = {report.agreement['sd']:.3f}, "
                f"{report.agreement['n_annotators']} annotators)"
            )
        lines.append("")

    lines.append("## Configuration echo")
    lines.append("")
    lines.append("```json")
    lines.append(json.dumps(report.config_echo, sort_keys=True, indent=2))
    lines.append("```")
    lines.append("")
    return "\n".join(lines)


def write_report_markdown(report: EvaluationReport, path: str | Path) -> None:
    _atomic_write_text(render_markdown(report), path)


def compare_matrix(report_dicts: Sequence[dict]) -> str:
    """UAR grid across reports keyed by (finetune set, test set)."""
    if not report_dicts:
        raise ValueError("no reports to compare")
    cells: dict[tuple[str, str], float] = {}
    for obj in report_dicts:
        key = (obj["finetune_id"], f"{obj['dataset_id']} ({obj['tier']})")
        if key in cells:
            raise ValueError(f"duplicate report for {key}")
        cells[key] = obj["overall"]["uar_percent"]
    rows = sorted({k[0] for k in cells})
    cols = sorted({k[1] for k in cells})
    lines = ["# UAR (%) across fine-tuning (rows) and testing sets (columns)", ""]
    lines.append("| Fine-tuning \\ Test | " + " | ".join(cols) + " |")
    lines.append("|---|" + "---|" * len(cols))
    missing = []
    for row in rows:
        out = [f"| {row} |"]
        for col in cols:
            if (row, col) in cells:
                out.append(f" {cells[(row, col)]:.1f} |")
            else:
                out.append(" - |")
                missing.append(f"{row} x {col}")
        lines.append("".join(out))
    lines.append("")
    if missing:
        lines.append(f"Missing cells: {', '.join(missing)}")
    else:
        lines.append("All cells populated.")
    lines.append("")
    return "\n".join(lines)
