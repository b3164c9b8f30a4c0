"""Corpus balancing and child-disjunct train/dev/test splitting.

Down-sampling caps every class at ceil(multiplier x anchor-class count),
keeping the anchor class in full.  Splitting assigns whole children to
folds (never clips), dealing the shuffled children of each
(language, age-bucket) stratum greedily to the fold with the largest
remaining clip-count deficit; the deficit targets carry the accumulated
global error forward so small strata cannot drift the overall
proportions, and coverage guards force the tail of a stratum (or of the
whole corpus) into still-empty folds.

All randomness comes from numpy's PCG64 generator seeded explicitly, a
published algorithm with reference outputs, so splits reproduce across
platforms and are independent of input record order (inputs are sorted
by id before shuffling).
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass
from fractions import Fraction
from pathlib import Path
from typing import Iterable, Sequence

import numpy as np

from .manifest import FOLDS, ClipRecord, LabelClass, Manifest

# Strata smaller than this are not forced to populate every fold.
COVERAGE_MIN_CHILDREN = 10


@dataclass(frozen=True)
class SamplingConfig:
    anchor_class: LabelClass = LabelClass.LAUGHING
    multiplier: Fraction = Fraction(3)
    seed: int = 0

    def __post_init__(self):
        if self.multiplier <= 0:
            raise ValueError("multiplier must be positive")


@dataclass(frozen=True)
class SplitConfig:
    ratios: tuple[Fraction, Fraction, Fraction] = (
        Fraction(8, 10),
        Fraction(1, 10),
        Fraction(1, 10),
    )
    seed: int = 0
    age_bucket_months: int = 12
    stratify_keys: tuple[str, ...] = ("language", "age_bucket")

    def __post_init__(self):
        if any(r < 0 for r in self.ratios):
            raise ValueError("ratios must be non-negative")
        if sum(self.ratios, Fraction(0)) != 1:
            raise ValueError("ratios must sum to 1 exactly")
        if self.age_bucket_months <= 0:
            raise ValueError("age_bucket_months must be positive")
        unknown = set(self.stratify_keys) - {"language", "age_bucket"}
        if unknown:
            raise ValueError(f"unknown stratify keys: {sorted(unknown)}")


@dataclass
class SplitAssignment:
    child_to_fold: dict[str, str]
    clip_to_fold: dict[str, str]

    def fold_clip_counts(self) -> dict[str, int]:
        counts = {fold: 0 for fold in FOLDS}
        for fold in self.clip_to_fold.values():
            counts[fold] += 1
        return counts

    def proportions(self) -> dict[str, float]:
        counts = self.fold_clip_counts()
        total = sum(counts.values())
        return {fold: counts[fold] / total if total else 0.0 for fold in FOLDS}


def downsample(
    labeled_clips: Sequence[tuple[ClipRecord, LabelClass]],
    cfg: SamplingConfig = SamplingConfig(),
) -> list[tuple[ClipRecord, LabelClass]]:
    """Cap every non-anchor class at ceil(multiplier x anchor count).

    Selection within a class is uniform without replacement under the
    seed; the anchor class is kept untouched.  Output is sorted by
    clip_id.
    """
    if not labeled_clips:
        raise ValueError("labeled_clips is empty")
    by_class: dict[LabelClass, list[tuple[ClipRecord, LabelClass]]] = {}
    for clip, label in labeled_clips:
        by_class.setdefault(label, []).append((clip, label))
    if cfg.anchor_class not in by_class:
        raise ValueError(
            f"anchor class {cfg.anchor_class.value!r} absent from input"
        )
    anchor_n = len(by_class[cfg.anchor_class])
    cap = math.ceil(cfg.multiplier * anchor_n)

    rng = np.random.Generator(np.random.PCG64(cfg.seed))
    kept: list[tuple[ClipRecord, LabelClass]] = list(by_class[cfg.anchor_class])
    for label in LabelClass:
        if label == cfg.anchor_class or label not in by_class:
            continue
        items = sorted(by_class[label], key=lambda cl: cl[0].clip_id)
        if len(items) <= cap:
            kept.extend(items)
        else:
            picks = rng.permutation(len(items))[:cap]
            kept.extend(items[i] for i in sorted(picks))
    kept.sort(key=lambda cl: cl[0].clip_id)
    return kept


def _age_bucket(age_months: int, bucket_months: int) -> int:
    return age_months // bucket_months


def _child_stratum(
    clips: list[ClipRecord], cfg: SplitConfig
) -> tuple:
    # Stratum metadata is read from the child's lexicographically-first
    # clip; children are expected to be metadata-homogeneous.
    first = min(clips, key=lambda c: c.clip_id)
    key = []
    if "language" in cfg.stratify_keys:
        key.append(first.language)
    if "age_bucket" in cfg.stratify_keys:
        key.append(_age_bucket(first.age_months, cfg.age_bucket_months))
    return tuple(key)


def split_children(
    labeled_clips: Sequence[tuple[ClipRecord, LabelClass]],
    cfg: SplitConfig = SplitConfig(),
) -> SplitAssignment:
    """Deterministic child-disjunct fold assignment.

    Children are grouped by stratum, shuffled under the seed, and dealt
    greedily to the fold with the largest remaining clip deficit.  Each
    stratum's targets fold in the global error accumulated so far, and
    two guards keep folds covered: a stratum with at least
    COVERAGE_MIN_CHILDREN children lands at least one child in every
    fold, and the corpus as a whole always populates all three folds.
    """
    clips_by_child: dict[str, list[ClipRecord]] = {}
    for clip, _label in labeled_clips:
        clips_by_child.setdefault(clip.child_id, []).append(clip)
    n_children = len(clips_by_child)
    if n_children < 3:
        raise ValueError(
            f"need at least 3 children to populate three folds, got {n_children}"
        )

    strata: dict[tuple, list[str]] = {}
    for child_id in sorted(clips_by_child):
        key = _child_stratum(clips_by_child[child_id], cfg)
        strata.setdefault(key, []).append(child_id)

    rng = np.random.Generator(np.random.PCG64(cfg.seed))
    ratios = [float(r) for r in cfg.ratios]

    child_to_fold: dict[str, str] = {}
    global_assigned = {f: 0.0 for f in FOLDS}  # clips
    fold_children = {f: 0 for f in FOLDS}
    processed_clips = 0.0
    remaining_total = n_children

    for key in sorted(strata):
        children = list(strata[key])
        order = rng.permutation(len(children))
        children = [children[i] for i in order]

        stratum_clips = sum(len(clips_by_child[c]) for c in children)
        carry = {
            f: ratios[i] * processed_clips - global_assigned[f]
            for i, f in enumerate(FOLDS)
        }
        target = {
            f: ratios[i] * stratum_clips + carry[f] for i, f in enumerate(FOLDS)
        }
        stratum_assigned = {f: 0.0 for f in FOLDS}
        stratum_children = {f: 0 for f in FOLDS}
        guard_stratum = len(children) >= COVERAGE_MIN_CHILDREN

        for pos, child_id in enumerate(children):
            remaining_in_stratum = len(children) - pos
            deficit = {f: target[f] - stratum_assigned[f] for f in FOLDS}
            global_empty = [f for f in FOLDS if fold_children[f] == 0]
            stratum_empty = [f for f in FOLDS if stratum_children[f] == 0]

            if global_empty and len(global_empty) >= remaining_total:
                pool = global_empty
            elif (
                guard_stratum
                and stratum_empty
                and len(stratum_empty) >= remaining_in_stratum
            ):
                pool = stratum_empty
            else:
                pool = list(FOLDS)
            fold = max(pool, key=lambda f: (deficit[f], -FOLDS.index(f)))

            child_to_fold[child_id] = fold
            n_clips = len(clips_by_child[child_id])
            stratum_assigned[fold] += n_clips
            global_assigned[fold] += n_clips
            stratum_children[fold] += 1
            fold_children[fold] += 1
            processed_clips += n_clips
            remaining_total -= 1

    clip_to_fold = {
        clip.clip_id: child_to_fold[child_id]
        for child_id, clips in clips_by_child.items()
        for clip in clips
    }
    return SplitAssignment(child_to_fold=child_to_fold, clip_to_fold=clip_to_fold)


def apply_split_hint(
    manifest: Manifest, clip_ids: Iterable[str] | None = None
) -> tuple[SplitAssignment, list[str]]:
    """Take a manifest's split records verbatim.

    Child-disjunctness is checked, not enforced: children with clips in
    more than one fold are returned as violations while the clip-level
    assignment stays exactly as recorded.  Clips without a split record
    are an error.
    """
    wanted = set(clip_ids) if clip_ids is not None else set(manifest.clips_by_id)
    missing = sorted(wanted - set(manifest.split_hint))
    if missing:
        shown = ", ".join(missing[:10])
        more = f" (+{len(missing) - 10} more)" if len(missing) > 10 else ""
        raise ValueError(f"clips without split records: {shown}{more}")

    clip_to_fold = {
        cid: fold for cid, fold in manifest.split_hint.items() if cid in wanted
    }
    folds_by_child: dict[str, set[str]] = {}
    for cid, fold in clip_to_fold.items():
        child = manifest.clips_by_id[cid].child_id
        folds_by_child.setdefault(child, set()).add(fold)

    violations = []
    child_to_fold = {}
    for child, folds in sorted(folds_by_child.items()):
        if len(folds) > 1:
            violations.append(
                f"child {child!r} has clips in multiple folds: {sorted(folds)}"
            )
        else:
            child_to_fold[child] = next(iter(folds))
    assignment = SplitAssignment(
        child_to_fold=child_to_fold, clip_to_fold=clip_to_fold
    )
    return assignment, violations


# --- split file I/O ------------------------------------------------------
#
# Child records {"kind": "child_split", "child_id", "fold"} followed by
# derived clip records {"kind": "split", "clip_id", "fold"} (the same
# schema manifests use for split hints).


def write_split(assignment: SplitAssignment, path: str | Path, header: dict | None = None) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        if header is not None:
            fh.write(json.dumps(header, separators=(",", ":"), sort_keys=True) + "\n")
        for child_id in sorted(assignment.child_to_fold):
            obj = {
                "kind": "child_split",
                "child_id": child_id,
                "fold": assignment.child_to_fold[child_id],
            }
            fh.write(json.dumps(obj, separators=(",", ":")) + "\n")
        for clip_id in sorted(assignment.clip_to_fold):
            obj = {
                "kind": "split",
                "clip_id": clip_id,
                "fold": assignment.clip_to_fold[clip_id],
            }
            fh.write(json.dumps(obj, separators=(",", ":")) + "\n")


def load_split(path: str | Path) -> SplitAssignment:
    child_to_fold: dict[str, str] = {}
    clip_to_fold: dict[str, str] = {}
    with open(path, encoding="utf-8") as fh:
        for line in fh:
            line = line.strip()
            if not line:
                continue
            obj = json.loads(line)
            kind = obj.get("kind")
            if kind == "child_split":
                child_to_fold[obj["child_id"]] = obj["fold"]
            elif kind == "split":
                clip_to_fold[obj["clip_id"]] = obj["fold"]
    return SplitAssignment(child_to_fold=child_to_fold, clip_to_fold=clip_to_fold)
