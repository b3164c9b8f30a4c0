"""HTTP annotation service: clip assignment, audio streaming, durable
judgment collection, and the qualification gate.

The store is an append-only annotation log in the manifest record
format, so a tier build can consume it directly.  Submissions serialize
through a single writer lock and are acknowledged only after the line
is flushed and fsynced; duplicate (annotator, clip) pairs are rejected
without touching the store.  Qualification state is in-memory per
service process: annotators answer a seeded sample of gold clips and
qualify at >= the accuracy threshold, with fresh samples on retry.
"""

from __future__ import annotations

import threading
from dataclasses import dataclass
from datetime import datetime, timezone
from fractions import Fraction
from pathlib import Path
from typing import Optional

import numpy as np
from fastapi import Depends, FastAPI, Header, HTTPException, Response
from pydantic import BaseModel

from .aggregation import AggregationConfig, aggregate_clip
from .manifest import (
    Annotation,
    LabelClass,
    Manifest,
    dumps_record,
    load_annotation_log,
    load_manifest,
)


@dataclass
class ServiceConfig:
    manifest_path: Path
    store_path: Path
    gold_manifest_path: Optional[Path] = None
    target_per_clip: int = 3
    qual_n: int = 10
    qual_threshold: Fraction = Fraction(4, 5)
    seed: int = 0
    continue_past_target: bool = False
    shared_secret: Optional[str] = None
    ui_dir: Optional[Path] = None


class AnnotationStore:
    """Append-only annotation log with single-writer durability."""

    def __init__(self, path: Path):
        self.path = Path(path)
        self._lock = threading.Lock()
        self._pairs: set[tuple[str, str]] = set()
        self._annotations: list[Annotation] = []
        if self.path.exists() and self.path.stat().st_size:
            for ann in load_annotation_log(self.path):
                self._pairs.add((ann.clip_id, ann.annotator_id))
                self._annotations.append(ann)
        self._fh = open(self.path, "a", encoding="utf-8")

    def submit(self, annotation: Annotation) -> bool:
        """Durably append one annotation; False if the pair already exists."""
        pair = (annotation.clip_id, annotation.annotator_id)
        with self._lock:
            if pair in self._pairs:
                return False
            self._fh.write(dumps_record(annotation) + "\n")
            self._fh.flush()
            import os

            os.fsync(self._fh.fileno())
            self._pairs.add(pair)
            self._annotations.append(annotation)
            return True

    def snapshot(self) -> list[Annotation]:
        with self._lock:
            return list(self._annotations)

    def counts_by_clip(self) -> dict[str, int]:
        counts: dict[str, int] = {}
        for ann in self.snapshot():
            counts[ann.clip_id] = counts.get(ann.clip_id, 0) + 1
        return counts

    def has_pair(self, clip_id: str, annotator_id: str) -> bool:
        with self._lock:
            return (clip_id, annotator_id) in self._pairs

    def close(self):
        self._fh.close()


@dataclass
class QualificationAttempt:
    clip_ids: list[str]
    index: int = 0
    correct: int = 0


@dataclass
class AnnotatorSession:
    annotator_id: str
    qualified: bool = False
    attempt: Optional[QualificationAttempt] = None
    attempts_used: int = 0
    last_score: Optional[Fraction] = None


class AnnotationService:
    def __init__(self, config: ServiceConfig):
        self.config = config
        self.manifest = load_manifest(config.manifest_path)
        self.store = AnnotationStore(Path(config.store_path))
        self._rng = np.random.Generator(np.random.PCG64(config.seed))
        self._sessions: dict[str, AnnotatorSession] = {}
        self._session_lock = threading.Lock()

        self.gold_labels: dict[str, LabelClass] = {}
        self.gold_manifest: Optional[Manifest] = None
        if config.gold_manifest_path is not None:
            self.gold_manifest = load_manifest(config.gold_manifest_path)
            by_clip = self.gold_manifest.annotations_by_clip()
            cfg = AggregationConfig(min_annotations=1, tie_policy="exclude")
            for clip_id, anns in by_clip.items():
                agg = aggregate_clip(anns, cfg)
                if agg.label is None:
                    raise ValueError(
                        f"gold clip {clip_id!r} has no unambiguous reference label"
                    )
                self.gold_labels[clip_id] = agg.label
            if len(self.gold_labels) < config.qual_n:
                raise ValueError(
                    f"gold manifest has {len(self.gold_labels)} labeled clips, "
                    f"need at least qual_n={config.qual_n}"
                )

    # -- sessions ------------------------------------------------------

    def session(self, annotator_id: str) -> AnnotatorSession:
        with self._session_lock:
            if annotator_id not in self._sessions:
                self._sessions[annotator_id] = AnnotatorSession(
                    annotator_id=annotator_id,
                    qualified=self.gold_manifest is None,
                )
            return self._sessions[annotator_id]

    # -- assignment ------------------------------------------------------

    def next_clip(self, annotator_id: str) -> Optional[str]:
        session = self.session(annotator_id)
        if not session.qualified:
            raise PermissionError(
                "annotator is not qualified; complete the qualification flow "
                "at /api/qualification/next first"
            )
        counts = self.store.counts_by_clip()
        candidates = []
        for clip in self.manifest.clips:
            if self.store.has_pair(clip.clip_id, annotator_id):
                continue
            count = counts.get(clip.clip_id, 0)
            if not self.config.continue_past_target and count >= self.config.target_per_clip:
                continue
            candidates.append((count, clip.clip_id))
        if not candidates:
            return None
        least = min(count for count, _ in candidates)
        pool = sorted(cid for count, cid in candidates if count == least)
        with self._session_lock:
            pick = int(self._rng.integers(0, len(pool)))
        return pool[pick]

    # -- submission -------------------------------------------------------

    def submit(self, annotator_id: str, clip_id: str, label_name: str) -> None:
        session = self.session(annotator_id)
        if not session.qualified:
            raise PermissionError(
                "annotator is not qualified; complete the qualification flow first"
            )
        if clip_id not in self.manifest.clips_by_id:
            raise KeyError(f"unknown clip {clip_id!r}")
        label = LabelClass.from_name(label_name)  # ValueError on bad label
        now = datetime.now(timezone.utc).replace(microsecond=0)
        annotation = Annotation(
            clip_id=clip_id,
            annotator_id=annotator_id,
            label=label,
            submitted_at=now.isoformat().replace("+00:00", "Z"),
        )
        if not self.store.submit(annotation):
            raise FileExistsError(
                f"annotator {annotator_id!r} already labeled clip {clip_id!r}"
            )

    # -- qualification ------------------------------------------------------

    def qualification_next(self, annotator_id: str) -> dict:
        if self.gold_manifest is None:
            return {"qualified": True, "clip_id": None, "answered": 0, "total": 0}
        session = self.session(annotator_id)
        if session.qualified:
            return {
                "qualified": True,
                "clip_id": None,
                "answered": 0,
                "total": self.config.qual_n,
            }
        with self._session_lock:
            if session.attempt is None:
                sample_rng = np.random.Generator(
                    np.random.PCG64(
                        [self.config.seed, session.attempts_used]
                        + [ord(c) for c in annotator_id[:16]]
                    )
                )
                pool = sorted(self.gold_labels)
                picks = sample_rng.permutation(len(pool))[: self.config.qual_n]
                session.attempt = QualificationAttempt(
                    clip_ids=[pool[i] for i in picks]
                )
                session.attempts_used += 1
        attempt = session.attempt
        return {
            "qualified": False,
            "clip_id": attempt.clip_ids[attempt.index],
            "answered": attempt.index,
            "total": self.config.qual_n,
        }

    def qualification_answer(
        self, annotator_id: str, clip_id: str, label_name: str
    ) -> dict:
        if self.gold_manifest is None:
            raise KeyError("no qualification flow configured")
        if clip_id not in self.gold_labels:
            raise KeyError(f"{clip_id!r} is not a gold qualification clip")
        label = LabelClass.from_name(label_name)
        session = self.session(annotator_id)
        with self._session_lock:
            attempt = session.attempt
            if session.qualified or attempt is None:
                raise FileExistsError("no qualification attempt in progress")
            expected = attempt.clip_ids[attempt.index]
            if clip_id != expected:
                raise FileExistsError(
                    f"expected an answer for clip {expected!r}, got {clip_id!r}"
                )
            correct = self.gold_labels[clip_id] == label
            attempt.index += 1
            attempt.correct += int(correct)
            finished = attempt.index >= self.config.qual_n
            qualified = False
            failed = False
            if finished:
                score = Fraction(attempt.correct, self.config.qual_n)
                session.last_score = score
                if score >= self.config.qual_threshold:
                    session.qualified = True
                    qualified = True
                else:
                    failed = True
                session.attempt = None
            return {
                "correct": correct,
                "answered": attempt.index if not finished else self.config.qual_n,
                "correct_count": attempt.correct,
                "total": self.config.qual_n,
                "qualified": qualified,
                "failed": failed,
            }

    # -- progress ------------------------------------------------------------

    def progress(self) -> dict:
        annotations = self.store.snapshot()
        counts: dict[str, int] = {}
        per_class = {lab.value: 0 for lab in LabelClass}
        for ann in annotations:
            counts[ann.clip_id] = counts.get(ann.clip_id, 0) + 1
            per_class[ann.label.value] += 1
        fully = sum(
            1 for n in counts.values() if n >= self.config.target_per_clip
        )
        return {
            "total_clips": len(self.manifest.clips),
            "fully_annotated": fully,
            "annotations_total": len(annotations),
            "per_class_counts": per_class,
        }

    # -- audio -----------------------------------------------------------------

    def audio_bytes(self, clip_id: str) -> bytes:
        clip = self.manifest.clips_by_id.get(clip_id)
        base = Path(self.config.manifest_path).parent
        if clip is None and self.gold_manifest is not None:
            clip = self.gold_manifest.clips_by_id.get(clip_id)
            base = Path(self.config.gold_manifest_path).parent
        if clip is None:
            raise KeyError(f"unknown clip {clip_id!r}")
        audio_path = Path(clip.audio_uri)
        if not audio_path.is_absolute():
            audio_path = base / audio_path
        return audio_path.read_bytes()


# --- HTTP layer ---------------------------------------------------------------


class AnnotationIn(BaseModel):
    annotator_id: str
    clip_id: str
    label: str


class QualificationAnswerIn(BaseModel):
    annotator_id: str
    clip_id: str
    label: str


class NextClipOut(BaseModel):
    clip_id: str
    audio_url: str


class QualificationNextOut(BaseModel):
    qualified: bool
    clip_id: Optional[str] = None
    audio_url: Optional[str] = None
    answered: int = 0
    total: int = 0


class QualificationAnswerOut(BaseModel):
    correct: bool
    answered: int
    correct_count: int
    total: int
    qualified: bool
    failed: bool


class ProgressOut(BaseModel):
    total_clips: int
    fully_annotated: int
    annotations_total: int
    per_class_counts: dict[str, int]


def create_app(service: AnnotationService) -> FastAPI:
    app = FastAPI(title="voclab annotation service")
    app.state.service = service

    def check_secret(x_voclab_secret: Optional[str] = Header(default=None)):
        secret = service.config.shared_secret
        if secret is not None and x_voclab_secret != secret:
            raise HTTPException(status_code=401, detail="missing or wrong shared secret")

    dep = [Depends(check_secret)]

    @app.get("/api/clips/next", dependencies=dep)
    def clips_next(annotator: str) -> Response:
        try:
            clip_id = service.next_clip(annotator)
        except PermissionError as exc:
            raise HTTPException(status_code=403, detail=str(exc)) from None
        if clip_id is None:
            return Response(status_code=204)
        payload = NextClipOut(clip_id=clip_id, audio_url=f"/api/audio/{clip_id}")
        return Response(
            content=payload.model_dump_json(), media_type="application/json"
        )

    @app.get("/api/audio/{clip_id}", dependencies=dep)
    def audio(clip_id: str) -> Response:
        try:
            payload = service.audio_bytes(clip_id)
        except (KeyError, FileNotFoundError) as exc:
            raise HTTPException(status_code=404, detail=str(exc)) from None
        return Response(content=payload, media_type="audio/wav")

    @app.post("/api/annotations", status_code=201, dependencies=dep)
    def annotations(body: AnnotationIn) -> dict:
        try:
            service.submit(body.annotator_id, body.clip_id, body.label)
        except PermissionError as exc:
            raise HTTPException(status_code=403, detail=str(exc)) from None
        except FileExistsError as exc:
            raise HTTPException(status_code=409, detail=str(exc)) from None
        except (KeyError, ValueError) as exc:
            raise HTTPException(status_code=400, detail=str(exc)) from None
        return {"status": "created"}

    @app.get("/api/qualification/next", dependencies=dep)
    def qualification_next(annotator: str) -> QualificationNextOut:
        state = service.qualification_next(annotator)
        clip_id = state.get("clip_id")
        return QualificationNextOut(
            qualified=state["qualified"],
            clip_id=clip_id,
            audio_url=f"/api/audio/{clip_id}" if clip_id else None,
            answered=state["answered"],
            total=state["total"],
        )

    @app.post("/api/qualification/answer", dependencies=dep)
    def qualification_answer(body: QualificationAnswerIn) -> QualificationAnswerOut:
        try:
            state = service.qualification_answer(
                body.annotator_id, body.clip_id, body.label
            )
        except FileExistsError as exc:
            raise HTTPException(status_code=409, detail=str(exc)) from None
        except (KeyError, ValueError) as exc:
            raise HTTPException(status_code=400, detail=str(exc)) from None
        return QualificationAnswerOut(**state)

    @app.get("/api/progress", dependencies=dep)
    def progress() -> ProgressOut:
        return ProgressOut(**service.progress())

    if service.config.ui_dir is not None:
        from fastapi.staticfiles import StaticFiles

        app.mount(
            "/", StaticFiles(directory=str(service.config.ui_dir), html=True), name="ui"
        )

    return app
