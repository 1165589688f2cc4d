"""Framed log-spectral features with an explicit reverse-mode gradient path.

Frames are rectangular-windowed; each frame is projected onto a fixed bank of
DFT bins (bins 1..n_bins of a frame_len-point transform) and the magnitudes
are log-compressed. Everything is a composition of matrix products and smooth
pointwise maps, so the gradient with respect to the raw samples is exact.
"""

from __future__ import annotations

from dataclasses import dataclass
from functools import lru_cache

import numpy as np


@dataclass(frozen=True)
class FeatureConfig:
    frame_len: int = 400  # 25 ms at 16 kHz
    hop: int = 160  # 10 ms
    n_bins: int = 64
    log_floor: float = 1e-3  # added to magnitudes before the log
    mag_eps: float = 1e-12  # inside the sqrt, keeps the gradient finite at 0

    def __post_init__(self):
        if self.frame_len < 2 or self.hop < 1:
            raise ValueError("frame_len must be >= 2 and hop >= 1")
        if not 1 <= self.n_bins <= self.frame_len // 2:
            raise ValueError("n_bins must lie in [1, frame_len // 2]")

    def bin_hz(self, sample_rate: int) -> float:
        """Spectral bin spacing in Hz: sample_rate / frame_len."""
        return sample_rate / self.frame_len


DEFAULT_FEATURES = FeatureConfig()


@lru_cache(maxsize=8)
def _dft_bank(frame_len: int, n_bins: int) -> tuple[np.ndarray, np.ndarray]:
    """Real/imaginary projection matrices for DFT bins 1..n_bins, shape (bins, frame_len)."""
    k = np.arange(1, n_bins + 1)[:, None]
    n = np.arange(frame_len)[None, :]
    angle = 2.0 * np.pi * k * n / frame_len
    return np.cos(angle), -np.sin(angle)


def frame_count(n_samples: int, cfg: FeatureConfig = DEFAULT_FEATURES) -> int:
    """Number of frames: 1 + floor((n - frame_len) / hop). Input must cover one frame."""
    if n_samples < cfg.frame_len:
        raise ValueError(f"input of {n_samples} samples is shorter than one frame ({cfg.frame_len})")
    return 1 + (n_samples - cfg.frame_len) // cfg.hop


@dataclass
class FeatureCache:
    """Forward intermediates needed to backpropagate through the feature map."""

    feats: np.ndarray  # (frames, bins)
    re: np.ndarray
    im: np.ndarray
    mag: np.ndarray
    n_samples: int


def _frames_view(x: np.ndarray, cfg: FeatureConfig) -> np.ndarray:
    n_frames = frame_count(x.size, cfg)
    windows = np.lib.stride_tricks.sliding_window_view(x, cfg.frame_len)
    return windows[: (n_frames - 1) * cfg.hop + 1 : cfg.hop]


def features_forward(x: np.ndarray, cfg: FeatureConfig = DEFAULT_FEATURES) -> FeatureCache:
    x = np.asarray(x, dtype=np.float64)
    frames = _frames_view(x, cfg)
    cos_b, sin_b = _dft_bank(cfg.frame_len, cfg.n_bins)
    re = frames @ cos_b.T
    im = frames @ sin_b.T
    mag = np.sqrt(re * re + im * im + cfg.mag_eps)
    feats = np.log(mag + cfg.log_floor)
    return FeatureCache(feats=feats, re=re, im=im, mag=mag, n_samples=x.size)


def features_backward(
    cache: FeatureCache, dfeats: np.ndarray, cfg: FeatureConfig = DEFAULT_FEATURES
) -> np.ndarray:
    """Gradient of a scalar loss w.r.t. the raw samples, given d loss / d feats."""
    cos_b, sin_b = _dft_bank(cfg.frame_len, cfg.n_bins)
    dmag = dfeats / (cache.mag + cfg.log_floor)
    scale = dmag / cache.mag
    dre = scale * cache.re
    dim = scale * cache.im
    dframes = dre @ cos_b + dim @ sin_b
    dx = np.zeros(cache.n_samples)
    for f in range(dframes.shape[0]):
        start = f * cfg.hop
        dx[start : start + cfg.frame_len] += dframes[f]
    return dx


def features(w, cfg: FeatureConfig = DEFAULT_FEATURES) -> np.ndarray:
    """Per-frame log-magnitude features for a waveform (or raw sample array)."""
    samples = getattr(w, "samples", w)
    return features_forward(samples, cfg).feats
