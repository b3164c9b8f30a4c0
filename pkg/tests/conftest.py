import sys
from pathlib import Path

import numpy as np
import pytest

sys.path.insert(0, str(Path(__file__).parent))

from voclab.manifest import Annotation, ClipRecord, LabelClass, Manifest


def make_clip(
    clip_id,
    child_id="ch1",
    corpus_id="sm",
    language="eng",
    environment="urban",
    age_months=24,
    audio_uri="clips/a.wav",
    duration_ms=500,
    **extra,
):
    return ClipRecord(
        clip_id=clip_id,
        child_id=child_id,
        corpus_id=corpus_id,
        language=language,
        environment=environment,
        age_months=age_months,
        audio_uri=audio_uri,
        duration_ms=duration_ms,
        extra=extra,
    )


def make_ann(clip_id, annotator_id, label, submitted_at="2025-01-01T00:00:00Z"):
    if isinstance(label, str):
        label = LabelClass.from_name(label)
    return Annotation(
        clip_id=clip_id,
        annotator_id=annotator_id,
        label=label,
        submitted_at=submitted_at,
    )


def random_manifest(seed, n_clips=40, n_children=8, max_annotators=7):
    """Synthetic manifest with random labels; deterministic under seed."""
    rng = np.random.Generator(np.random.PCG64(seed))
    labels = list(LabelClass)
    records = []
    for i in range(n_clips):
        child = f"ch{rng.integers(0, n_children)}"
        records.append(
            make_clip(
                f"c{i:04d}",
                child_id=child,
                language=str(rng.choice(["eng", "fra", "nin"])),
                environment=str(rng.choice(["urban", "rural"])),
                age_months=int(rng.integers(2, 73)),
            )
        )
    for i in range(n_clips):
        n_ann = int(rng.integers(1, max_annotators + 1))
        annotators = rng.choice(50, size=n_ann, replace=False)
        for a in annotators:
            records.append(
                make_ann(f"c{i:04d}", f"ann{a}", labels[rng.integers(0, 5)])
            )
    return Manifest(records)


@pytest.fixture
def tmp_manifest_path(tmp_path):
    return tmp_path / "manifest.jsonl"
