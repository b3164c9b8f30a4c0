"""Acoustic features for the classifier head.

Two feature sources share one vector format: summary statistics of a
log-mel filterbank computed here from the normalized clips, or
embeddings imported from an external model via a simple CSV-like file.
The log-mel path gives each clip the per-band time mean and standard
deviation, so the default 40 mel bands produce an 80-dim vector.
"""

from __future__ import annotations

from dataclasses import dataclass
from functools import lru_cache
from pathlib import Path
from typing import Iterable, Sequence

import numpy as np

from .audio import TARGET_LEN, TARGET_RATE, AudioClip

FEATURE_KINDS = ("logmel_stats", "imported_embedding")


@dataclass(frozen=True)
class FeatureConfig:
    kind: str = "logmel_stats"
    n_mels: int = 40
    window_ms: int = 25
    hop_ms: int = 10
    fmin_hz: float = 20.0
    fmax_hz: float = 8000.0
    log_floor: float = 1e-6

    def __post_init__(self):
        if self.kind not in FEATURE_KINDS:
            raise ValueError(f"kind must be one of {FEATURE_KINDS}")
        if self.n_mels < 1:
            raise ValueError("n_mels must be >= 1")
        if self.fmax_hz > TARGET_RATE / 2:
            raise ValueError("fmax_hz must not exceed the Nyquist frequency")

    @property
    def window_samples(self) -> int:
        return self.window_ms * TARGET_RATE // 1000

    @property
    def hop_samples(self) -> int:
        return self.hop_ms * TARGET_RATE // 1000

    @property
    def dim(self) -> int:
        return 2 * self.n_mels


@dataclass(frozen=True)
class FeatureVector:
    clip_id: str
    values: np.ndarray


def _hz_to_mel(f):
    return 2595.0 * np.log10(1.0 + np.asarray(f, dtype=np.float64) / 700.0)


def _mel_to_hz(m):
    return 700.0 * (10.0 ** (np.asarray(m, dtype=np.float64) / 2595.0) - 1.0)


def mel_band_edges(cfg: FeatureConfig) -> np.ndarray:
    """n_mels + 2 Hz points, equally spaced on the mel scale."""
    mels = np.linspace(_hz_to_mel(cfg.fmin_hz), _hz_to_mel(cfg.fmax_hz), cfg.n_mels + 2)
    return _mel_to_hz(mels)


@lru_cache(maxsize=8)
def _mel_filterbank(cfg: FeatureConfig, n_fft: int) -> np.ndarray:
    freqs = np.fft.rfftfreq(n_fft, d=1.0 / TARGET_RATE)
    edges = mel_band_edges(cfg)
    weights = np.zeros((cfg.n_mels, freqs.shape[0]))
    for m in range(cfg.n_mels):
        lo, center, hi = edges[m], edges[m + 1], edges[m + 2]
        rising = (freqs - lo) / (center - lo)
        falling = (hi - freqs) / (hi - center)
        weights[m] = np.maximum(0.0, np.minimum(rising, falling))
    return weights


def extract_features(clip: AudioClip, cfg: FeatureConfig = FeatureConfig()) -> FeatureVector:
    """Log-mel summary statistics for one normalized clip.

    Magnitude spectra on Hann windows (25 ms / 10 ms hop at 16 kHz, FFT
    zero-padded to 512), triangular mel filterbank, log(x + log_floor),
    then per-band mean and standard deviation over time.
    """
    if cfg.kind != "logmel_stats":
        raise ValueError("extract_features only handles logmel_stats configs")
    x = clip.samples
    if x.shape != (TARGET_LEN,):
        raise ValueError(f"expected a {TARGET_LEN}-sample clip")
    win = cfg.window_samples
    hop = cfg.hop_samples
    n_fft = 1 << (win - 1).bit_length()

    frames = np.lib.stride_tricks.sliding_window_view(x, win)[::hop]
    window = 0.5 - 0.5 * np.cos(2.0 * np.pi * np.arange(win) / win)  # periodic Hann
    spectra = np.abs(np.fft.rfft(frames * window, n=n_fft, axis=1))

    fbank = _mel_filterbank(cfg, n_fft)
    mel = spectra @ fbank.T
    logmel = np.log(mel + cfg.log_floor)
    values = np.concatenate([logmel.mean(axis=0), logmel.std(axis=0)])
    return FeatureVector(clip_id="", values=values)


def featurize_clips(
    entries: Sequence[tuple[str, np.ndarray]], cfg: FeatureConfig = FeatureConfig()
) -> list[FeatureVector]:
    out = []
    for clip_id, samples in entries:
        vec = extract_features(AudioClip(samples=np.asarray(samples, dtype=np.float64)), cfg)
        out.append(FeatureVector(clip_id=clip_id, values=vec.values))
    return out


# --- feature/embedding file ----------------------------------------------
#
# UTF-8 text; header line "clip_id,dim=D"; one line per clip holding the
# id and D comma-separated decimal floats.  The same format serves both
# imported SSL embeddings and the featurize stage's output.


def write_embeddings(vectors: Iterable[FeatureVector], path: str | Path) -> None:
    vectors = list(vectors)
    if not vectors:
        raise ValueError("no feature vectors to write")
    dim = vectors[0].values.shape[0]
    with open(path, "w", encoding="utf-8") as fh:
        fh.write(f"clip_id,dim={dim}\n")
        for vec in vectors:
            if vec.values.shape != (dim,):
                raise ValueError(
                    f"clip {vec.clip_id!r}: dimension {vec.values.shape} != {dim}"
                )
            row = ",".join(repr(float(v)) for v in vec.values)
            fh.write(f"{vec.clip_id},{row}\n")


def import_embeddings(path: str | Path) -> list[FeatureVector]:
    """Read a feature/embedding file, enforcing a uniform finite matrix."""
    with open(path, encoding="utf-8") as fh:
        header = fh.readline().strip()
        if not header.startswith("clip_id,dim="):
            raise ValueError(f"{path}: malformed header {header!r}")
        try:
            dim = int(header.split("=", 1)[1])
        except ValueError:
            raise ValueError(f"{path}: malformed dimension in header {header!r}") from None
        seen: set[str] = set()
        out: list[FeatureVector] = []
        for lineno, line in enumerate(fh, start=2):
            line = line.strip()
            if not line:
                continue
            parts = line.split(",")
            clip_id = parts[0]
            if clip_id in seen:
                raise ValueError(f"{path}:{lineno}: duplicate clip_id {clip_id!r}")
            seen.add(clip_id)
            if len(parts) - 1 != dim:
                raise ValueError(
                    f"{path}:{lineno}: clip {clip_id!r} has {len(parts) - 1} values, "
                    f"expected {dim}"
                )
            try:
                values = np.array([float(p) for p in parts[1:]], dtype=np.float64)
            except ValueError:
                raise ValueError(
                    f"{path}:{lineno}: clip {clip_id!r} has a non-numeric value"
                ) from None
            if not np.all(np.isfinite(values)):
                raise ValueError(
                    f"{path}:{lineno}: clip {clip_id!r} has a non-finite value"
                )
            out.append(FeatureVector(clip_id=clip_id, values=values))
    return out
