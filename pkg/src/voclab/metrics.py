"""Evaluation mathematics: UAR, confusion, ROC/AUC, weighted kappas,
model-vs-annotator agreement, and bootstrap confidence intervals.

The weighted kappas use a disagreement-cost matrix d (symmetric, zero
diagonal).  The shipped default encodes the task's hierarchy: the
canonical / non-canonical distinction costs 1.0, speech-like versus
non-speech confusions cost 0.75, and confusions among crying, laughing,
and junk cost 0.5.  With a uniform off-diagonal d both kappas reduce to
their classic unweighted forms, and scaling all costs by a positive
constant leaves both statistics unchanged.
"""

from __future__ import annotations

import warnings
from dataclasses import dataclass, field
from pathlib import Path
from typing import Callable, Iterable, Optional, Sequence

import numpy as np

from .manifest import LABELS, Annotation, LabelClass

N = len(LABELS)


class ZeroSupportWarning(UserWarning):
    """A class with zero reference support was excluded from UAR."""


class UndefinedKappaError(ValueError):
    """Expected disagreement is zero, so kappa is undefined."""

    def __init__(self, message: str, observed_disagreement: float):
        super().__init__(message)
        self.observed_disagreement = observed_disagreement


@dataclass(frozen=True)
class ConfusionMatrix:
    counts: np.ndarray  # rows = reference, columns = predicted

    def __post_init__(self):
        counts = np.asarray(self.counts, dtype=np.int64)
        if counts.shape != (N, N):
            raise ValueError(f"confusion matrix must be {N}x{N}")
        if (counts < 0).any():
            raise ValueError("confusion matrix entries must be non-negative")
        object.__setattr__(self, "counts", counts)

    @property
    def total(self) -> int:
        return int(self.counts.sum())


def confusion(
    pairs: Sequence[tuple[LabelClass, LabelClass]]
) -> ConfusionMatrix:
    """Count (reference, predicted) pairs into the fixed-order matrix."""
    if not pairs:
        raise ValueError("no pairs to tabulate")
    counts = np.zeros((N, N), dtype=np.int64)
    for ref, pred in pairs:
        counts[ref.index, pred.index] += 1
    return ConfusionMatrix(counts=counts)


def per_class_recall(cm: ConfusionMatrix) -> dict[LabelClass, Optional[float]]:
    """Recall per class; None where the class has zero reference support."""
    out: dict[LabelClass, Optional[float]] = {}
    for lab in LABELS:
        support = int(cm.counts[lab.index].sum())
        out[lab] = (
            float(cm.counts[lab.index, lab.index]) / support if support else None
        )
    return out


def uar(cm: ConfusionMatrix) -> float:
    """Unweighted average recall in percent.

    Classes with zero support are excluded from the mean (recall is
    undefined there) and reported through a ZeroSupportWarning.
    """
    recalls = per_class_recall(cm)
    present = [r for r in recalls.values() if r is not None]
    if not present:
        raise ValueError("confusion matrix has no reference support at all")
    absent = [lab.value for lab, r in recalls.items() if r is None]
    if absent:
        warnings.warn(
            f"classes with zero support excluded from UAR: {absent}",
            ZeroSupportWarning,
            stacklevel=2,
        )
    return 100.0 * float(np.mean(present))


# --- ROC / AUC -------------------------------------------------------------


@dataclass
class RocCurve:
    label: Optional[LabelClass]
    points: list[tuple[float, float]]  # (fpr, tpr), (0,0) .. (1,1)
    thresholds: list[float]
    auc: float


def roc_auc(
    scored: Sequence[tuple[float, bool]], label: Optional[LabelClass] = None
) -> RocCurve:
    """One-vs-rest ROC by descending threshold sweep, ties grouped.

    The trapezoidal AUC over these points equals the Mann-Whitney
    statistic with half credit for score ties.
    """
    n_pos = sum(1 for _, positive in scored if positive)
    n_neg = len(scored) - n_pos
    if n_pos == 0 or n_neg == 0:
        raise ValueError("ROC needs at least one positive and one negative")

    by_score: dict[float, list[bool]] = {}
    for score, positive in scored:
        by_score.setdefault(float(score), []).append(positive)

    points = [(0.0, 0.0)]
    thresholds: list[float] = []
    tp = fp = 0
    auc = 0.0
    prev_fpr, prev_tpr = 0.0, 0.0
    for score in sorted(by_score, reverse=True):
        group = by_score[score]
        tp += sum(group)
        fp += len(group) - sum(group)
        fpr, tpr = fp / n_neg, tp / n_pos
        auc += (fpr - prev_fpr) * (tpr + prev_tpr) / 2.0
        points.append((fpr, tpr))
        thresholds.append(score)
        prev_fpr, prev_tpr = fpr, tpr
    return RocCurve(label=label, points=points, thresholds=thresholds, auc=auc)


# --- disagreement-cost matrix ----------------------------------------------


@dataclass(frozen=True)
class WeightMatrix:
    d: np.ndarray

    def __post_init__(self):
        d = np.asarray(self.d, dtype=np.float64)
        if d.shape != (N, N):
            raise ValueError(f"weight matrix must be {N}x{N}")
        if not np.allclose(d, d.T):
            raise ValueError("disagreement costs must be symmetric")
        if np.any(np.diag(d) != 0):
            raise ValueError("diagonal costs must be exactly 0")
        off = d[~np.eye(N, dtype=bool)]
        if np.any(off <= 0):
            raise ValueError("off-diagonal costs must be positive")
        if np.any(off > 1):
            raise ValueError("costs must lie in [0, 1]")
        object.__setattr__(self, "d", d)

    def cost(self, a: LabelClass, b: LabelClass) -> float:
        return float(self.d[a.index, b.index])


def default_weight_matrix() -> WeightMatrix:
    """Task-hierarchy costs: canonical/non-canonical 1.0, speech vs
    non-speech 0.75, within non-speech 0.5."""
    speech = {LabelClass.CANONICAL.index, LabelClass.NON_CANONICAL.index}
    d = np.zeros((N, N))
    for i in range(N):
        for j in range(N):
            if i == j:
                continue
            if i in speech and j in speech:
                d[i, j] = 1.0
            elif i in speech or j in speech:
                d[i, j] = 0.75
            else:
                d[i, j] = 0.5
    return WeightMatrix(d=d)


def uniform_weight_matrix() -> WeightMatrix:
    return WeightMatrix(d=1.0 - np.eye(N))


def load_weight_matrix(path: str | Path) -> WeightMatrix:
    """5x5 comma-separated costs; the header names the class order."""
    with open(path, encoding="utf-8") as fh:
        lines = [ln.strip() for ln in fh if ln.strip()]
    if len(lines) != N + 1:
        raise ValueError(f"{path}: expected a header plus {N} rows")
    names = [n.strip() for n in lines[0].split(",")]
    if sorted(names) != sorted(lab.value for lab in LABELS):
        raise ValueError(f"{path}: header must name the five classes, got {names}")
    order = [LabelClass.from_name(n).index for n in names]
    raw = np.array(
        [[float(v) for v in line.split(",")] for line in lines[1:]], dtype=np.float64
    )
    if raw.shape != (N, N):
        raise ValueError(f"{path}: expected a {N}x{N} cost grid")
    d = np.zeros((N, N))
    for i, ci in enumerate(order):
        for j, cj in enumerate(order):
            d[ci, cj] = raw[i, j]
    return WeightMatrix(d=d)


def write_weight_matrix(w: WeightMatrix, path: str | Path) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        fh.write(",".join(lab.value for lab in LABELS) + "\n")
        for row in w.d:
            fh.write(",".join(repr(float(v)) for v in row) + "\n")


# --- weighted kappas --------------------------------------------------------


@dataclass
class KappaResult:
    kappa: float
    method: str  # "fleiss_weighted" | "cohen_weighted"
    n_items: int
    ci_low: Optional[float] = None
    ci_high: Optional[float] = None
    sd: Optional[float] = None
    n_excluded: int = 0


def _item_counts(items: Sequence[Iterable[LabelClass]]) -> np.ndarray:
    counts = np.zeros((len(items), N), dtype=np.float64)
    for i, item in enumerate(items):
        for label in item:
            counts[i, label.index] += 1
    return counts


def weighted_fleiss_kappa(
    items: Sequence[Iterable[LabelClass]], w: Optional[WeightMatrix] = None
) -> KappaResult:
    """Many-rater chance-corrected agreement with graded costs.

    Observed disagreement averages the pairwise cost over all unordered
    annotator pairs within each item; expected disagreement uses the
    pooled label distribution.  kappa = 1 - D_o / D_e.  Items with fewer
    than two annotations are excluded (and counted in n_excluded).
    """
    w = w or default_weight_matrix()
    counts = _item_counts(items)
    sizes = counts.sum(axis=1)
    keep = sizes >= 2
    n_excluded = int((~keep).sum())
    counts = counts[keep]
    sizes = sizes[keep]
    if counts.shape[0] == 0:
        raise ValueError("no items with at least 2 annotations")

    # c @ d @ c sums cost over ordered pairs; diagonal costs are zero so
    # this is twice the unordered-pair sum.
    pair_cost = np.einsum("ij,jk,ik->i", counts, w.d, counts)
    d_o = float(np.mean(pair_cost / (sizes * (sizes - 1.0))))

    pooled = counts.sum(axis=0)
    p = pooled / pooled.sum()
    d_e = float(p @ w.d @ p)
    if d_e == 0.0:
        raise UndefinedKappaError(
            "expected disagreement is zero (all annotations share one class); "
            f"observed disagreement was {d_o}",
            observed_disagreement=d_o,
        )
    return KappaResult(
        kappa=1.0 - d_o / d_e,
        method="fleiss_weighted",
        n_items=counts.shape[0],
        n_excluded=n_excluded,
    )


def weighted_cohen_kappa(
    pairs: Sequence[tuple[LabelClass, LabelClass]], w: Optional[WeightMatrix] = None
) -> KappaResult:
    """Two-rater chance-corrected agreement with graded costs."""
    if not pairs:
        raise ValueError("no pairs")
    w = w or default_weight_matrix()
    joint = np.zeros((N, N))
    for a, b in pairs:
        joint[a.index, b.index] += 1
    joint /= len(pairs)
    marg_a = joint.sum(axis=1)
    marg_b = joint.sum(axis=0)
    d_o = float((joint * w.d).sum())
    d_e = float(marg_a @ w.d @ marg_b)
    if d_e == 0.0:
        raise UndefinedKappaError(
            "expected disagreement is zero (degenerate marginals); "
            f"observed disagreement was {d_o}",
            observed_disagreement=d_o,
        )
    return KappaResult(
        kappa=1.0 - d_o / d_e, method="cohen_weighted", n_items=len(pairs)
    )


# --- model vs annotators -----------------------------------------------------


@dataclass
class AnnotatorAgreement:
    annotator_id: str
    n_pairs: int
    kappa: Optional[float]
    qualified: bool
    note: str = ""


@dataclass
class ModelAgreement:
    mean_kappa: float
    sd: float
    per_annotator: list[AnnotatorAgreement] = field(default_factory=list)
    pooled: bool = False


def model_vs_annotators(
    preds: Sequence,  # PredictionRecord-like with .clip_id / .predicted
    annotations: Sequence[Annotation],
    w: Optional[WeightMatrix] = None,
    min_pairs: int = 20,
    pooled: bool = False,
) -> ModelAgreement:
    """Weighted Cohen's kappa between the model and each annotator.

    Per-annotator kappas over their (prediction, label) pairs are
    averaged across annotators with at least min_pairs annotated clips;
    the standard deviation (ddof=1) captures between-annotator
    variability.  pooled=True instead pools every pair into a single
    kappa.
    """
    w = w or default_weight_matrix()
    pred_by_clip = {p.clip_id: p.predicted for p in preds}
    missing = sorted({a.clip_id for a in annotations} - set(pred_by_clip))
    if missing:
        shown = ", ".join(missing[:5])
        raise ValueError(
            f"predictions do not cover {len(missing)} annotated clip(s): {shown}..."
        )

    by_annotator: dict[str, list[tuple[LabelClass, LabelClass]]] = {}
    for ann in annotations:
        by_annotator.setdefault(ann.annotator_id, []).append(
            (pred_by_clip[ann.clip_id], ann.label)
        )

    table: list[AnnotatorAgreement] = []
    kappas: list[float] = []
    for annotator_id in sorted(by_annotator):
        ann_pairs = by_annotator[annotator_id]
        if len(ann_pairs) < min_pairs:
            table.append(
                AnnotatorAgreement(
                    annotator_id=annotator_id,
                    n_pairs=len(ann_pairs),
                    kappa=None,
                    qualified=False,
                    note=f"fewer than {min_pairs} pairs",
                )
            )
            continue
        try:
            result = weighted_cohen_kappa(ann_pairs, w)
        except UndefinedKappaError:
            table.append(
                AnnotatorAgreement(
                    annotator_id=annotator_id,
                    n_pairs=len(ann_pairs),
                    kappa=None,
                    qualified=False,
                    note="kappa undefined (zero expected disagreement)",
                )
            )
            continue
        kappas.append(result.kappa)
        table.append(
            AnnotatorAgreement(
                annotator_id=annotator_id,
                n_pairs=len(ann_pairs),
                kappa=result.kappa,
                qualified=True,
            )
        )
    if not kappas:
        raise ValueError(f"no annotator reaches min_pairs={min_pairs}")

    if pooled:
        all_pairs = [p for ps in by_annotator.values() for p in ps]
        pooled_kappa = weighted_cohen_kappa(all_pairs, w).kappa
        return ModelAgreement(
            mean_kappa=pooled_kappa, sd=0.0, per_annotator=table, pooled=True
        )
    mean = float(np.mean(kappas))
    sd = float(np.std(kappas, ddof=1)) if len(kappas) > 1 else 0.0
    return ModelAgreement(mean_kappa=mean, sd=sd, per_annotator=table, pooled=False)


# --- bootstrap ---------------------------------------------------------------


@dataclass
class BootstrapResult:
    low: float
    high: float
    sd: float
    n_undefined: int = 0


def bootstrap_ci(
    statistic: Callable[[list], float],
    items: Sequence,
    resamples: int = 1000,
    level: float = 0.95,
    seed: int = 0,
) -> BootstrapResult:
    """Percentile bootstrap over items, deterministic under seed.

    Resamples where the statistic is undefined (raises UndefinedKappaError
    or ValueError, or returns a non-finite value) are skipped and counted;
    more than 50% undefined is an error.
    """
    if not items:
        raise ValueError("no items to resample")
    rng = np.random.Generator(np.random.PCG64(seed))
    values = []
    n_undefined = 0
    n = len(items)
    for _ in range(resamples):
        idx = rng.integers(0, n, size=n)
        sample = [items[i] for i in idx]
        try:
            value = float(statistic(sample))
        except (UndefinedKappaError, ValueError, ZeroDivisionError):
            n_undefined += 1
            continue
        if not np.isfinite(value):
            n_undefined += 1
            continue
        values.append(value)
    if n_undefined > resamples // 2:
        raise ValueError(
            f"statistic undefined on {n_undefined} of {resamples} resamples"
        )
    arr = np.array(values)
    alpha = (1.0 - level) / 2.0
    low, high = np.percentile(arr, [100 * alpha, 100 * (1 - alpha)])
    sd = float(np.std(arr, ddof=1)) if arr.size > 1 else 0.0
    return BootstrapResult(
        low=float(low), high=float(high), sd=sd, n_undefined=n_undefined
    )


def filter_by_annotator_count(items: Sequence, max_annotators: int) -> list:
    """Keep items annotated by at most max_annotators raters."""
    return [item for item in items if len(item) <= max_annotators]


def per_class_roc(
    preds: Sequence,  # PredictionRecord-like with .clip_id / .scores
    gold: dict[str, LabelClass],
) -> dict[LabelClass, RocCurve]:
    """Gold-referenced one-vs-rest ROC curves from softmax scores."""
    out = {}
    for lab in LABELS:
        scored = [
            (float(p.scores[lab.index]), gold[p.clip_id] == lab)
            for p in preds
            if p.clip_id in gold
        ]
        positives = sum(1 for _, pos in scored if pos)
        if positives == 0 or positives == len(scored):
            continue  # curve undefined for this class
        out[lab] = roc_auc(scored, label=lab)
    return out
