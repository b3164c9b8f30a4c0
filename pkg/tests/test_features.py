import numpy as np
import pytest

from voclab.audio import TARGET_LEN, AudioClip
from voclab.features import (
    FeatureConfig,
    FeatureVector,
    extract_features,
    featurize_clips,
    import_embeddings,
    mel_band_edges,
    write_embeddings,
)

CFG = FeatureConfig()


def test_default_dimension_is_80():
    clip = AudioClip(samples=np.zeros(TARGET_LEN))
    vec = extract_features(clip, CFG)
    assert vec.values.shape == (80,)


def test_all_zero_clip():
    clip = AudioClip(samples=np.zeros(TARGET_LEN))
    vec = extract_features(clip, CFG)
    means, stds = vec.values[:40], vec.values[40:]
    np.testing.assert_allclose(means, np.log(CFG.log_floor), atol=1e-12)
    # identical frames: std is zero up to float64 mean-accumulation error
    np.testing.assert_allclose(stds, np.zeros(40), atol=1e-12)


def test_1khz_sine_peaks_in_analytic_band():
    t = np.arange(TARGET_LEN) / 16000
    clip = AudioClip(samples=np.sin(2 * np.pi * 1000 * t))
    vec = extract_features(clip, CFG)
    means = vec.values[:40]

    # analytic oracle: triangular response of each band at exactly 1 kHz
    edges = mel_band_edges(CFG)
    weights = []
    for m in range(CFG.n_mels):
        lo, center, hi = edges[m], edges[m + 1], edges[m + 2]
        rising = (1000.0 - lo) / (center - lo)
        falling = (hi - 1000.0) / (hi - center)
        weights.append(max(0.0, min(rising, falling)))
    expected_band = int(np.argmax(weights))
    assert int(np.argmax(means)) == expected_band


def test_determinism_bit_for_bit():
    rng = np.random.Generator(np.random.PCG64(0))
    samples = rng.uniform(-0.9, 0.9, TARGET_LEN)
    a = extract_features(AudioClip(samples=samples.copy()), CFG)
    b = extract_features(AudioClip(samples=samples.copy()), CFG)
    np.testing.assert_array_equal(a.values, b.values)


def test_wrong_clip_length_rejected():
    # the clip type itself refuses to hold anything but 9217 samples
    with pytest.raises(Exception, match="9217"):
        extract_features(AudioClip(samples=np.zeros(100)), CFG)


def test_feature_config_validation():
    with pytest.raises(ValueError, match="Nyquist"):
        FeatureConfig(fmax_hz=9000)
    with pytest.raises(ValueError, match="n_mels"):
        FeatureConfig(n_mels=0)
    with pytest.raises(ValueError, match="kind"):
        FeatureConfig(kind="mfcc")


class TestEmbeddingFile:
    def test_round_trip(self, tmp_path):
        rng = np.random.Generator(np.random.PCG64(1))
        vecs = [
            FeatureVector(clip_id=f"c{i}", values=rng.normal(size=4))
            for i in range(3)
        ]
        path = tmp_path / "emb.csv"
        write_embeddings(vecs, path)
        loaded = import_embeddings(path)
        assert [v.clip_id for v in loaded] == ["c0", "c1", "c2"]
        assert all(v.values.shape == (4,) for v in loaded)
        for a, b in zip(vecs, loaded):
            np.testing.assert_allclose(a.values, b.values, rtol=0, atol=0)

    def test_ragged_dimensions_rejected(self, tmp_path):
        path = tmp_path / "emb.csv"
        path.write_text("clip_id,dim=4\nc1,1,2,3,4\nc2,1,2,3,4,5\n")
        with pytest.raises(ValueError, match="c2.*5 values"):
            import_embeddings(path)

    def test_duplicate_clip_rejected(self, tmp_path):
        path = tmp_path / "emb.csv"
        path.write_text("clip_id,dim=2\nc1,1,2\nc1,3,4\n")
        with pytest.raises(ValueError, match="duplicate clip_id"):
            import_embeddings(path)

    def test_non_finite_value_names_clip(self, tmp_path):
        path = tmp_path / "emb.csv"
        path.write_text("clip_id,dim=2\nc1,1,2\nc2,nan,4\n")
        with pytest.raises(ValueError, match="c2"):
            import_embeddings(path)

    def test_malformed_header(self, tmp_path):
        path = tmp_path / "emb.csv"
        path.write_text("id,cols=2\nc1,1,2\n")
        with pytest.raises(ValueError, match="header"):
            import_embeddings(path)


def test_featurize_clips_carries_ids():
    rng = np.random.Generator(np.random.PCG64(2))
    entries = [(f"c{i}", rng.uniform(-1, 1, TARGET_LEN)) for i in range(3)]
    vecs = featurize_clips(entries)
    assert [v.clip_id for v in vecs] == ["c0", "c1", "c2"]
    assert all(v.values.shape == (80,) for v in vecs)
