"""Consensus labels from multi-annotator judgments.

Two tiers come out of the counting rules: Cleaned keeps clips where a
strong majority (>= 2/3 by default, compared in exact rational
arithmetic) agreed, Uncleaned keeps every clip with a plurality winner
and enough annotations.  Cleaned is a subset of Uncleaned by
construction.
"""

from __future__ import annotations

import json
from collections import Counter
from dataclasses import dataclass
from fractions import Fraction
from pathlib import Path
from typing import Iterable, Optional, Sequence

from .manifest import LABELS, Annotation, ClipRecord, LabelClass, Manifest

TIE_POLICIES = ("exclude", "fixed_priority")


@dataclass(frozen=True)
class AggregationConfig:
    strong_majority_threshold: Fraction = Fraction(2, 3)
    min_annotations: int = 3
    tie_policy: str = "exclude"

    def __post_init__(self):
        if not 0 < self.strong_majority_threshold <= 1:
            raise ValueError("strong_majority_threshold must be in (0, 1]")
        if self.min_annotations < 1:
            raise ValueError("min_annotations must be >= 1")
        if self.tie_policy not in TIE_POLICIES:
            raise ValueError(f"tie_policy must be one of {TIE_POLICIES}")


@dataclass(frozen=True)
class AggregatedLabel:
    clip_id: str
    label: Optional[LabelClass]  # None = Unresolved
    n_annotations: int
    top_count: int
    agreement_fraction: Fraction
    in_cleaned: bool
    in_uncleaned: bool


def aggregate_clip(
    annotations: Sequence[Annotation], cfg: AggregationConfig = AggregationConfig()
) -> AggregatedLabel:
    """Plurality label for a single clip's annotations.

    The winner is the class with strictly maximal count.  Ties follow
    cfg.tie_policy: "exclude" leaves the clip Unresolved, "fixed_priority"
    picks the tied class earliest in the fixed label order.  Tier flags:
    a clip is in Uncleaned when it has a resolved label and at least
    min_annotations judgments, and additionally in Cleaned when the
    agreement fraction reaches the strong-majority threshold (inclusive,
    so 2 of 3 passes the 2/3 default exactly).
    """
    if not annotations:
        raise ValueError("cannot aggregate an empty annotation list")
    clip_ids = {a.clip_id for a in annotations}
    if len(clip_ids) != 1:
        raise ValueError(f"annotations span multiple clips: {sorted(clip_ids)}")
    clip_id = annotations[0].clip_id

    counts = Counter(a.label for a in annotations)
    n = len(annotations)
    top_count = max(counts.values())
    tied = [lab for lab in LABELS if counts.get(lab, 0) == top_count]
    if len(tied) == 1:
        label: Optional[LabelClass] = tied[0]
    elif cfg.tie_policy == "fixed_priority":
        label = tied[0]  # LABELS is already in priority order
    else:
        label = None

    fraction = Fraction(top_count, n)
    resolved = label is not None
    enough = n >= cfg.min_annotations
    in_uncleaned = resolved and enough
    # The subset invariant (Cleaned <= Uncleaned) requires the
    # min-annotation gate on Cleaned as well.
    in_cleaned = in_uncleaned and fraction >= cfg.strong_majority_threshold
    return AggregatedLabel(
        clip_id=clip_id,
        label=label,
        n_annotations=n,
        top_count=top_count,
        agreement_fraction=fraction,
        in_cleaned=in_cleaned,
        in_uncleaned=in_uncleaned,
    )


def build_tiers(
    manifest: Manifest, cfg: AggregationConfig = AggregationConfig()
) -> tuple[
    list[tuple[ClipRecord, LabelClass]],
    list[tuple[ClipRecord, LabelClass]],
    list[str],
]:
    """Aggregate every clip of a manifest into (cleaned, uncleaned, dropped).

    cleaned and uncleaned are (clip, label) lists sorted by clip_id;
    dropped collects clip_ids that stayed Unresolved or fell below
    min_annotations (including clips with no annotations at all, so the
    three sets together account for every clip).
    """
    by_clip = manifest.annotations_by_clip()
    cleaned: list[tuple[ClipRecord, LabelClass]] = []
    uncleaned: list[tuple[ClipRecord, LabelClass]] = []
    dropped: list[str] = []
    for clip_id in sorted(manifest.clips_by_id):
        clip = manifest.clips_by_id[clip_id]
        anns = by_clip.get(clip_id)
        if not anns:
            dropped.append(clip_id)
            continue
        agg = aggregate_clip(anns, cfg)
        if not agg.in_uncleaned:
            dropped.append(clip_id)
            continue
        uncleaned.append((clip, agg.label))
        if agg.in_cleaned:
            cleaned.append((clip, agg.label))
    return cleaned, uncleaned, dropped


def aggregate_manifest(
    manifest: Manifest, cfg: AggregationConfig = AggregationConfig()
) -> list[AggregatedLabel]:
    """Per-clip aggregation results for every annotated clip, by clip_id."""
    by_clip = manifest.annotations_by_clip()
    return [
        aggregate_clip(by_clip[clip_id], cfg) for clip_id in sorted(by_clip)
    ]


# --- tier file I/O -------------------------------------------------------
#
# Line-delimited records:
#   {"kind": "tier", "clip_id": ..., "label": ... | null,
#    "n_annotations": N, "top_count": K,
#    "in_cleaned": bool, "in_uncleaned": bool}
# Records of other kinds (e.g. the CLI's "config" echo) are skipped.


def tier_record_to_obj(agg: AggregatedLabel) -> dict:
    return {
        "kind": "tier",
        "clip_id": agg.clip_id,
        "label": agg.label.value if agg.label is not None else None,
        "n_annotations": agg.n_annotations,
        "top_count": agg.top_count,
        "in_cleaned": agg.in_cleaned,
        "in_uncleaned": agg.in_uncleaned,
    }


def write_tiers(aggs: Iterable[AggregatedLabel], path: str | Path, header: dict | None = None) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        if header is not None:
            fh.write(json.dumps(header, separators=(",", ":"), sort_keys=True) + "\n")
        for agg in aggs:
            fh.write(json.dumps(tier_record_to_obj(agg), separators=(",", ":")) + "\n")


def load_tiers(path: str | Path) -> list[AggregatedLabel]:
    out = []
    with open(path, encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, start=1):
            line = line.strip()
            if not line:
                continue
            obj = json.loads(line)
            if obj.get("kind") != "tier":
                continue
            label = obj["label"]
            n = obj["n_annotations"]
            top = obj["top_count"]
            out.append(
                AggregatedLabel(
                    clip_id=obj["clip_id"],
                    label=LabelClass.from_name(label) if label is not None else None,
                    n_annotations=n,
                    top_count=top,
                    agreement_fraction=Fraction(top, n) if n else Fraction(0),
                    in_cleaned=bool(obj["in_cleaned"]),
                    in_uncleaned=bool(obj["in_uncleaned"]),
                )
            )
    return out


def tier_labels(
    aggs: Iterable[AggregatedLabel], tier: str
) -> dict[str, LabelClass]:
    """clip_id -> label map for one tier ("cleaned" or "uncleaned")."""
    if tier not in ("cleaned", "uncleaned"):
        raise ValueError(f"tier must be 'cleaned' or 'uncleaned', got {tier!r}")
    flag = "in_cleaned" if tier == "cleaned" else "in_uncleaned"
    return {
        a.clip_id: a.label for a in aggs if getattr(a, flag) and a.label is not None
    }
