"""Corpus data model: clips, annotations, split hints, and manifest I/O.

A manifest is UTF-8 text, one JSON record per line, with a "kind" field
distinguishing clip / annotation / split records.  Record order is
preserved on round-trip; unknown extra fields are carried along untouched
but never interpreted.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from datetime import datetime
from enum import Enum
from pathlib import Path
from typing import Iterable, Union


class LabelClass(Enum):
    """The five vocalization classes, in the fixed order used for all
    matrix rows/columns and tie-breaking."""

    CRYING = "crying"
    LAUGHING = "laughing"
    CANONICAL = "canonical"
    NON_CANONICAL = "non_canonical"
    JUNK = "junk"

    @classmethod
    def from_name(cls, name: str) -> "LabelClass":
        try:
            return cls(name)
        except ValueError:
            raise ValueError(f"unknown label {name!r}") from None

    @property
    def index(self) -> int:
        return _LABEL_INDEX[self]


LABELS: tuple[LabelClass, ...] = tuple(LabelClass)
_LABEL_INDEX = {lab: i for i, lab in enumerate(LABELS)}

ENVIRONMENTS = ("urban", "rural")
FOLDS = ("train", "dev", "test")

AGE_MONTHS_MAX = 120


class ManifestError(Exception):
    """Raised when a manifest file cannot be loaded as a valid Manifest."""


@dataclass(frozen=True)
class ClipRecord:
    clip_id: str
    child_id: str
    corpus_id: str
    language: str
    environment: str
    age_months: int
    audio_uri: str
    duration_ms: int
    extra: dict = field(default_factory=dict, compare=False)


@dataclass(frozen=True)
class Annotation:
    clip_id: str
    annotator_id: str
    label: LabelClass
    submitted_at: str  # ISO-8601 UTC, seconds resolution
    extra: dict = field(default_factory=dict, compare=False)


@dataclass(frozen=True)
class SplitHint:
    clip_id: str
    fold: str
    extra: dict = field(default_factory=dict, compare=False)


Record = Union[ClipRecord, Annotation, SplitHint]


class Manifest:
    """Immutable view over an ordered list of manifest records."""

    def __init__(self, records: Iterable[Record]):
        self.records: tuple[Record, ...] = tuple(records)
        self.clips: tuple[ClipRecord, ...] = tuple(
            r for r in self.records if isinstance(r, ClipRecord)
        )
        self.annotations: tuple[Annotation, ...] = tuple(
            r for r in self.records if isinstance(r, Annotation)
        )
        self.split_hint: dict[str, str] = {
            r.clip_id: r.fold for r in self.records if isinstance(r, SplitHint)
        }
        self.clips_by_id: dict[str, ClipRecord] = {c.clip_id: c for c in self.clips}

    def annotations_by_clip(self) -> dict[str, list[Annotation]]:
        out: dict[str, list[Annotation]] = {}
        for ann in self.annotations:
            out.setdefault(ann.clip_id, []).append(ann)
        return out


def _parse_utc_timestamp(text: str) -> datetime:
    # ISO-8601, UTC only; "Z" suffix accepted alongside "+00:00".
    raw = text[:-1] + "+00:00" if text.endswith("Z") else text
    dt = datetime.fromisoformat(raw)
    if dt.utcoffset() is None or dt.utcoffset().total_seconds() != 0:
        raise ValueError(f"timestamp {text!r} is not UTC")
    return dt


_CLIP_FIELDS = (
    "clip_id",
    "child_id",
    "corpus_id",
    "language",
    "environment",
    "age_months",
    "audio_uri",
    "duration_ms",
)
_ANNOTATION_FIELDS = ("clip_id", "annotator_id", "label", "submitted_at")
_SPLIT_FIELDS = ("clip_id", "fold")


def _take(obj: dict, names: tuple[str, ...], lineno: int) -> tuple[list, dict]:
    missing = [n for n in names if n not in obj]
    if missing:
        raise ManifestError(f"line {lineno}: missing field(s) {', '.join(missing)}")
    values = [obj[n] for n in names]
    extra = {k: v for k, v in obj.items() if k not in names and k != "kind"}
    return values, extra


def parse_record(obj: dict, lineno: int = 0) -> Record:
    """Convert one decoded JSON object into a typed record."""
    kind = obj.get("kind")
    if kind == "clip":
        (clip_id, child_id, corpus_id, language, environment, age_months,
         audio_uri, duration_ms), extra = _take(obj, _CLIP_FIELDS, lineno)
        if not isinstance(age_months, int) or isinstance(age_months, bool):
            raise ManifestError(f"line {lineno}: age_months must be an integer")
        if not isinstance(duration_ms, int) or isinstance(duration_ms, bool):
            raise ManifestError(f"line {lineno}: duration_ms must be an integer")
        return ClipRecord(
            clip_id=str(clip_id),
            child_id=str(child_id),
            corpus_id=str(corpus_id),
            language=str(language),
            environment=str(environment),
            age_months=age_months,
            audio_uri=str(audio_uri),
            duration_ms=duration_ms,
            extra=extra,
        )
    if kind == "annotation":
        (clip_id, annotator_id, label, submitted_at), extra = _take(
            obj, _ANNOTATION_FIELDS, lineno
        )
        try:
            lab = LabelClass.from_name(label)
        except ValueError as exc:
            raise ManifestError(f"line {lineno}: {exc}") from None
        try:
            _parse_utc_timestamp(str(submitted_at))
        except ValueError as exc:
            raise ManifestError(f"line {lineno}: {exc}") from None
        return Annotation(
            clip_id=str(clip_id),
            annotator_id=str(annotator_id),
            label=lab,
            submitted_at=str(submitted_at),
            extra=extra,
        )
    if kind == "split":
        (clip_id, fold), extra = _take(obj, _SPLIT_FIELDS, lineno)
        if fold not in FOLDS:
            raise ManifestError(f"line {lineno}: unknown fold {fold!r}")
        return SplitHint(clip_id=str(clip_id), fold=str(fold), extra=extra)
    raise ManifestError(f"line {lineno}: unknown record kind {kind!r}")


def record_to_obj(rec: Record) -> dict:
    """Typed record back to a JSON-ready dict, known fields first."""
    if isinstance(rec, ClipRecord):
        obj = {"kind": "clip"}
        for name in _CLIP_FIELDS:
            obj[name] = getattr(rec, name)
    elif isinstance(rec, Annotation):
        obj = {"kind": "annotation"}
        for name in _ANNOTATION_FIELDS:
            value = getattr(rec, name)
            obj[name] = value.value if isinstance(value, LabelClass) else value
    elif isinstance(rec, SplitHint):
        obj = {"kind": "split"}
        for name in _SPLIT_FIELDS:
            obj[name] = getattr(rec, name)
    else:
        raise TypeError(f"not a manifest record: {rec!r}")
    obj.update(rec.extra)
    return obj


def dumps_record(rec: Record) -> str:
    return json.dumps(record_to_obj(rec), separators=(",", ":"), ensure_ascii=False)


def load_manifest(path: str | Path) -> Manifest:
    """Load and validate a line-delimited manifest file.

    Structural problems (bad JSON, unknown label, duplicate clip_id,
    dangling annotation, duplicate (clip, annotator) pair) raise
    ManifestError with the offending line number; any remaining invariant
    violations found by validate_manifest also fail the load.
    """
    path = Path(path)
    records: list[Record] = []
    seen_clips: dict[str, int] = {}
    seen_pairs: dict[tuple[str, str], int] = {}
    with open(path, encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, start=1):
            line = line.strip()
            if not line:
                continue
            try:
                obj = json.loads(line)
            except json.JSONDecodeError as exc:
                raise ManifestError(f"line {lineno}: invalid JSON ({exc.msg})") from None
            if not isinstance(obj, dict):
                raise ManifestError(f"line {lineno}: record is not an object")
            rec = parse_record(obj, lineno)
            if isinstance(rec, ClipRecord):
                if rec.clip_id in seen_clips:
                    raise ManifestError(
                        f"line {lineno}: duplicate clip_id {rec.clip_id!r} "
                        f"(first seen at line {seen_clips[rec.clip_id]})"
                    )
                seen_clips[rec.clip_id] = lineno
            elif isinstance(rec, Annotation):
                pair = (rec.clip_id, rec.annotator_id)
                if pair in seen_pairs:
                    raise ManifestError(
                        f"line {lineno}: duplicate annotation by {rec.annotator_id!r} "
                        f"on clip {rec.clip_id!r} (first seen at line {seen_pairs[pair]})"
                    )
                seen_pairs[pair] = lineno
            records.append(rec)
    for rec in records:
        if isinstance(rec, Annotation) and rec.clip_id not in seen_clips:
            raise ManifestError(
                f"annotation references absent clip {rec.clip_id!r}"
            )
    manifest = Manifest(records)
    violations = validate_manifest(manifest)
    if violations:
        raise ManifestError(
            "manifest failed validation:\n  " + "\n  ".join(violations)
        )
    return manifest


def load_annotation_log(path: str | Path) -> list[Annotation]:
    """Read an annotation-only log (e.g. the service store).

    Same line format as manifests, but only annotation records are
    expected and no cross-record validation happens here; callers merge
    the log into a manifest before building tiers.
    """
    out: list[Annotation] = []
    with open(path, encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, start=1):
            line = line.strip()
            if not line:
                continue
            try:
                obj = json.loads(line)
            except json.JSONDecodeError as exc:
                raise ManifestError(f"line {lineno}: invalid JSON ({exc.msg})") from None
            rec = parse_record(obj, lineno)
            if not isinstance(rec, Annotation):
                raise ManifestError(
                    f"line {lineno}: annotation log holds a non-annotation record"
                )
            out.append(rec)
    return out


def write_manifest(manifest: Manifest, path: str | Path) -> None:
    """Write records one per line, preserving record order."""
    path = Path(path)
    with open(path, "w", encoding="utf-8") as fh:
        for rec in manifest.records:
            fh.write(dumps_record(rec) + "\n")


def validate_manifest(manifest: Manifest) -> list[str]:
    """Check every manifest invariant; violations are data, not failures.

    Returns an empty list iff the manifest is valid.  Each violation names
    the offending record and the rule it breaks.
    """
    violations: list[str] = []
    seen_clips: set[str] = set()
    for clip in manifest.clips:
        if clip.clip_id in seen_clips:
            violations.append(f"clip {clip.clip_id!r}: duplicate clip_id")
        seen_clips.add(clip.clip_id)
        if clip.environment not in ENVIRONMENTS:
            violations.append(
                f"clip {clip.clip_id!r}: environment must be one of "
                f"{ENVIRONMENTS}, got {clip.environment!r}"
            )
        if not 0 <= clip.age_months <= AGE_MONTHS_MAX:
            violations.append(
                f"clip {clip.clip_id!r}: age_months {clip.age_months} outside "
                f"[0, {AGE_MONTHS_MAX}]"
            )
        if clip.duration_ms <= 0:
            violations.append(
                f"clip {clip.clip_id!r}: duration_ms must be positive, "
                f"got {clip.duration_ms}"
            )
    seen_pairs: set[tuple[str, str]] = set()
    for ann in manifest.annotations:
        if ann.clip_id not in manifest.clips_by_id:
            violations.append(
                f"annotation by {ann.annotator_id!r}: references absent clip "
                f"{ann.clip_id!r}"
            )
        pair = (ann.clip_id, ann.annotator_id)
        if pair in seen_pairs:
            violations.append(
                f"annotation by {ann.annotator_id!r} on clip {ann.clip_id!r}: "
                "duplicate (clip, annotator) pair"
            )
        seen_pairs.add(pair)
        try:
            _parse_utc_timestamp(ann.submitted_at)
        except ValueError:
            violations.append(
                f"annotation by {ann.annotator_id!r} on clip {ann.clip_id!r}: "
                f"submitted_at {ann.submitted_at!r} is not ISO-8601 UTC"
            )
    for clip_id, fold in manifest.split_hint.items():
        if clip_id not in manifest.clips_by_id:
            violations.append(f"split record references absent clip {clip_id!r}")
        if fold not in FOLDS:
            violations.append(f"split record for {clip_id!r}: unknown fold {fold!r}")
    return violations
