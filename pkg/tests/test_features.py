import numpy as np
import pytest

from purewave.audio import Waveform
from purewave.features import (
    DEFAULT_FEATURES,
    FeatureConfig,
    features,
    features_backward,
    features_forward,
    frame_count,
)


def test_config_defaults_and_validation():
    cfg = DEFAULT_FEATURES
    assert cfg.frame_len == 400 and cfg.hop == 160 and cfg.n_bins == 64
    assert cfg.bin_hz(16000) == pytest.approx(40.0)
    with pytest.raises(ValueError):
        FeatureConfig(frame_len=0)
    with pytest.raises(ValueError):
        FeatureConfig(hop=0)
    with pytest.raises(ValueError):
        FeatureConfig(n_bins=0)


def test_frame_count():
    assert frame_count(400) == 1
    assert frame_count(559) == 1
    assert frame_count(560) == 2
    assert frame_count(16000) == 1 + (16000 - 400) // 160
    with pytest.raises(ValueError):
        frame_count(399)


def test_forward_shape_and_waveform_input():
    x = np.random.default_rng(0).normal(size=2000)
    cache = features_forward(x, DEFAULT_FEATURES)
    n = frame_count(2000)
    assert cache.feats.shape == (n, 64)
    assert np.array_equal(features(Waveform(x), DEFAULT_FEATURES), cache.feats)
    assert np.array_equal(features(x, DEFAULT_FEATURES), cache.feats)


def test_spectrum_matches_numpy_fft():
    # the hand-built DFT bank must agree with numpy's rfft on bins 1..64
    rng = np.random.default_rng(1)
    x = rng.normal(size=400)
    cache = features_forward(x, DEFAULT_FEATURES)
    full = np.fft.rfft(x)
    re, im = full.real[1:65], full.imag[1:65]
    assert np.allclose(cache.re[0], re, atol=1e-9)
    assert np.allclose(cache.im[0], im, atol=1e-9)
    mag = np.sqrt(re**2 + im**2 + 1e-12)
    assert np.allclose(cache.feats[0], np.log(mag + 1e-3), atol=1e-12)


def test_pure_tone_bin_isolation():
    # a 240 Hz tone (bin 6) across exactly one frame leaves other bins near zero
    t = np.arange(400) / 16000.0
    x = 0.5 * np.sin(2 * np.pi * 240.0 * t)
    cache = features_forward(x, DEFAULT_FEATURES)
    mags = cache.mag[0]
    assert np.argmax(mags) == 5  # bins start at 40 Hz, so 240 Hz is index 5
    assert mags[5] == pytest.approx(100.0)  # amplitude * frame_len / 2
    others = np.delete(mags, 5)
    # off-bin magnitudes bottom out at sqrt(mag_eps) = 1e-6
    assert np.max(others) <= 1e-6 + 1e-12


def test_backward_matches_finite_differences():
    rng = np.random.default_rng(2)
    x = rng.normal(size=880, scale=0.2)  # 4 overlapping frames
    cfg = DEFAULT_FEATURES
    cache = features_forward(x, cfg)
    dfeats = rng.normal(size=cache.feats.shape)
    dx = features_backward(cache, dfeats, cfg)
    assert dx.shape == x.shape

    def scalar(z):
        return float(np.sum(features_forward(z, cfg).feats * dfeats))

    eps = 1e-6
    idx = rng.choice(x.size, size=24, replace=False)
    for i in idx:
        step = np.zeros_like(x)
        step[i] = eps
        numeric = (scalar(x + step) - scalar(x - step)) / (2 * eps)
        assert dx[i] == pytest.approx(numeric, rel=1e-5, abs=1e-8)


def test_backward_covers_unframed_tail():
    # samples past the last full frame receive zero gradient
    x = np.random.default_rng(3).normal(size=700)
    cfg = DEFAULT_FEATURES
    cache = features_forward(x, cfg)
    dx = features_backward(cache, np.ones_like(cache.feats), cfg)
    n = frame_count(700)
    covered = (n - 1) * cfg.hop + cfg.frame_len
    assert np.all(dx[covered:] == 0.0)
    assert np.any(dx[:covered] != 0.0)
