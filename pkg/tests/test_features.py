import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from hybridasr.audio import AudioBuffer
from hybridasr.errors import BadConfig, DimensionMismatch
from hybridasr.features import (
    CmvnStats,
    FeatureConfig,
    FeatureMatrix,
    accumulate_cmvn,
    append_deltas,
    apply_cmvn,
    compute_features,
    dct_matrix,
    fbank_from_mfcc,
    frame_and_window,
    mel_filterbank,
    mel_log_energies,
    mfcc_from_fbank,
    power_spectrum,
    read_cmvn_stats,
    read_feature_archive,
    write_cmvn_stats,
    write_feature_archive,
)

from oracles import dct2, dft_power, filter_weight, reference_mfcc


def test_frame_geometry():
    cfg = FeatureConfig()
    frames = frame_and_window(np.zeros(16000), 16000, cfg)
    assert frames.shape == (98, 400)
    assert frame_and_window(np.zeros(399), 16000, cfg).shape[0] == 0


def test_preemphasis_of_constant():
    cfg = FeatureConfig()
    frames = frame_and_window(np.ones(400), 16000, cfg)
    i = np.arange(400)
    ham = 0.54 - 0.46 * np.cos(2 * np.pi * i / 399)
    np.testing.assert_allclose(frames[0, 1:] / ham[1:], 0.03, atol=1e-12)
    assert frames[0, 0] == pytest.approx(0.03 * ham[0])


def test_power_spectrum_matches_direct_dft(rng):
    frames = rng.standard_normal((3, 400))
    spec = power_spectrum(frames)
    assert spec.shape == (3, 257)
    for f, s in zip(frames, spec):
        np.testing.assert_allclose(s, dft_power(f, 512), rtol=1e-9, atol=1e-9)


def test_sine_peak_bin():
    t = np.arange(400) / 16000
    spec = power_spectrum(np.sin(2 * np.pi * 1000 * t)[None, :])
    assert np.argmax(spec[0]) == 32


def test_parseval(rng):
    y = rng.standard_normal((1, 400))
    p = power_spectrum(y)[0]
    w = np.full(p.size, 2.0)
    w[0] = w[-1] = 1.0
    assert (w * p).sum() == pytest.approx(512 * (y ** 2).sum(), rel=1e-6)


def test_zero_spectrum():
    assert np.all(power_spectrum(np.zeros((2, 400))) == 0)
    cfg = FeatureConfig()
    out = mel_log_energies(np.zeros((2, 257)), cfg, 16000)
    np.testing.assert_allclose(out, np.log(1e-10))


def test_filterbank_matches_definition_and_overlap():
    fb = mel_filterbank(23, 512, 16000)
    ref = np.array([[filter_weight(j, b * 16000 / 512, 23, 16000) for b in range(257)] for j in range(23)])
    np.testing.assert_allclose(fb, ref, atol=1e-12)
    col = fb.sum(axis=0)
    lo, hi = int(np.ceil(20 * 512 / 16000)), 256
    interior = col[lo + 1 : hi]
    assert np.all(interior > 0) and np.all(interior <= 2)


def test_filterbank_too_many_bins():
    with pytest.raises(BadConfig):
        mel_filterbank(200, 64, 16000)


def test_gain_shifts_log_energies(rng):
    cfg = FeatureConfig()
    x = rng.standard_normal(2000) * 0.1
    a = mel_log_energies(power_spectrum(frame_and_window(x, 16000, cfg)), cfg, 16000)
    b = mel_log_energies(power_spectrum(frame_and_window(2 * x, 16000, cfg)), cfg, 16000)
    np.testing.assert_allclose(b - a, np.log(4.0), atol=1e-9)


def test_dct_constant_and_oracle(rng):
    cfg = FeatureConfig()
    c = mfcc_from_fbank(np.full((1, 23), 2.5), cfg)
    assert c[0, 0] == pytest.approx(2.5 * np.sqrt(23))
    np.testing.assert_allclose(c[0, 1:], 0, atol=1e-12)
    v = rng.standard_normal(23)
    out = mfcc_from_fbank(v[None, :], cfg)[0]
    np.testing.assert_allclose(out, [dct2(v, k) for k in range(13)], atol=1e-10)
    np.testing.assert_allclose(dct_matrix(23) @ dct_matrix(23).T, np.eye(23), atol=1e-12)


def test_dct_inverse_identity_on_kept(rng):
    cfg = FeatureConfig()
    c = rng.standard_normal((4, 13))
    np.testing.assert_allclose(mfcc_from_fbank(fbank_from_mfcc(c, 23), cfg), c, atol=1e-12)


def test_full_pipeline_matches_reference(rng):
    x = rng.uniform(-0.5, 0.5, 4000)
    ours = compute_features(AudioBuffer(x, 16000), FeatureConfig.for_gmm()).frames
    np.testing.assert_allclose(ours, reference_mfcc(x), atol=1e-6)


def test_deltas():
    ramp = FeatureMatrix(np.arange(10, dtype=float)[:, None])
    d = append_deltas(ramp, n=2, order=1).frames[:, 1]
    np.testing.assert_allclose(d[2:-2], 1.0)
    const = FeatureMatrix(np.full((7, 13), 3.0))
    out = append_deltas(const, 2, 2).frames
    assert out.shape == (7, 39)
    assert np.all(out[:, 13:] == 0.0)
    with pytest.raises(BadConfig):
        append_deltas(const, 2, 3)


@settings(max_examples=50, deadline=None)
@given(st.integers(2, 40), st.integers(1, 5), st.integers(0, 2**31))
def test_cmvn_normalizes(t, d, seed):
    x = np.random.default_rng(seed).normal(3.0, 2.0, (t, d))
    feat = FeatureMatrix(x)
    stats = CmvnStats().add(x)
    y = apply_cmvn(feat, stats).frames
    assert np.all(np.abs(y.mean(axis=0)) < 1e-10)
    assert np.all(np.abs(y.var(axis=0) - 1) < 1e-8)
    z = apply_cmvn(FeatureMatrix(y), CmvnStats().add(y)).frames
    np.testing.assert_allclose(z, y, atol=1e-8)


def test_cmvn_examples():
    y = apply_cmvn(FeatureMatrix(np.array([[1.0], [3.0]])), CmvnStats().add([[1.0], [3.0]])).frames
    np.testing.assert_allclose(y, [[-1.0], [1.0]])
    one = apply_cmvn(FeatureMatrix(np.array([[5.0, 2.0]])), CmvnStats().add([[5.0, 2.0]])).frames
    np.testing.assert_allclose(one, [[0.0, 0.0]])
    with pytest.raises(DimensionMismatch):
        apply_cmvn(FeatureMatrix(np.zeros((2, 3))), CmvnStats().add(np.zeros((2, 2))))


def test_cmvn_per_speaker_merge(rng):
    feats = {f"u{i}": FeatureMatrix(rng.standard_normal((5, 3))) for i in range(4)}
    utt2spk = {"u0": "a", "u1": "a", "u2": "b", "u3": "b"}
    stats = accumulate_cmvn(feats, utt2spk)
    assert stats["a"].count == 10
    merged = CmvnStats().add(feats["u0"].frames).merge(CmvnStats().add(feats["u1"].frames))
    np.testing.assert_allclose(merged.sum, stats["a"].sum)


def test_archive_roundtrip(tmp_path, rng):
    feats = {u: FeatureMatrix(rng.standard_normal((n, 4)).astype(np.float32).astype(float), utt_id=u) for u, n in [("b", 3), ("a", 5)]}
    write_feature_archive(feats, tmp_path / "f.ark")
    back = read_feature_archive(tmp_path / "f.ark")
    assert sorted(back) == ["a", "b"]
    for u in feats:
        np.testing.assert_array_equal(back[u].frames, feats[u].frames)
    idx = (tmp_path / "f.ark.idx").read_text().split()
    assert idx[0] == "a"
    stats = accumulate_cmvn(feats)
    write_cmvn_stats(stats, tmp_path / "cmvn.stats")
    s2 = read_cmvn_stats(tmp_path / "cmvn.stats")
    np.testing.assert_array_equal(s2["a"].sumsq, stats["a"].sumsq)


def test_chain_config_dims(rng):
    f = compute_features(AudioBuffer(rng.standard_normal(16000) * 0.1, 16000), FeatureConfig.for_chain())
    assert f.frames.shape == (98, 40)
    assert np.all(np.isfinite(f.frames))
