"""Gaussian diffusion schedule, forward noising, reverse denoising, purification.

Steps are 1-indexed: step t draws x_t from x_{t-1}, with x_0 the clean signal.
alpha_bar(0) is defined as 1, which makes the final reverse step (t = 1)
deterministic because its posterior variance vanishes.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Callable, Protocol

import numpy as np

from .audio import Waveform

Predictor = Callable[[np.ndarray, int], np.ndarray]


class NoisePredictor(Protocol):
    def __call__(self, x_t: np.ndarray, t: int) -> np.ndarray: ...


class NoiseSchedule:
    """Holds beta_1..beta_T plus the derived alpha and alpha_bar sequences."""

    def __init__(self, beta: np.ndarray):
        beta = np.asarray(beta, dtype=np.float64)
        if beta.ndim != 1 or beta.size < 1:
            raise ValueError("beta must be a non-empty 1-D array")
        if np.any(beta <= 0.0) or np.any(beta >= 1.0):
            raise ValueError("every beta must lie strictly inside (0, 1)")
        self.beta = beta
        self.alpha = 1.0 - beta
        self.alpha_bar = np.cumprod(self.alpha)

    @property
    def T(self) -> int:
        return self.beta.size

    def _check(self, t: int, lo: int = 1) -> None:
        if not lo <= t <= self.T:
            raise ValueError(f"step {t} outside [{lo}, {self.T}]")

    def beta_at(self, t: int) -> float:
        self._check(t)
        return float(self.beta[t - 1])

    def alpha_at(self, t: int) -> float:
        self._check(t)
        return float(self.alpha[t - 1])

    def alpha_bar_at(self, t: int) -> float:
        self._check(t, lo=0)
        return 1.0 if t == 0 else float(self.alpha_bar[t - 1])

    def sigma2_at(self, t: int) -> float:
        """Reverse-step posterior variance; zero at t = 1 by construction."""
        self._check(t)
        return (1.0 - self.alpha_bar_at(t - 1)) / (1.0 - self.alpha_bar_at(t)) * self.beta_at(t)

    def __eq__(self, other) -> bool:
        return isinstance(other, NoiseSchedule) and np.array_equal(self.beta, other.beta)

    def __hash__(self):
        return hash((self.T, float(self.beta[0]), float(self.beta[-1])))


def linear_schedule(T: int = 200, beta_min: float = 1e-4, beta_max: float = 0.02) -> NoiseSchedule:
    if T < 1:
        raise ValueError("T must be at least 1")
    if not 0.0 < beta_min <= beta_max < 1.0:
        raise ValueError("need 0 < beta_min <= beta_max < 1")
    return NoiseSchedule(np.linspace(beta_min, beta_max, T))


def _samples_of(x) -> np.ndarray:
    return np.asarray(x.samples if isinstance(x, Waveform) else x, dtype=np.float64)


def _like(x, samples: np.ndarray):
    return x.with_samples(samples) if isinstance(x, Waveform) else samples


def forward_sample(x0, t: int, schedule: NoiseSchedule, rng: np.random.Generator):
    """Draw x_t directly from the closed-form marginal q(x_t | x_0)."""
    s = _samples_of(x0)
    if t < 1:
        raise ValueError("forward_sample needs t >= 1")
    ab = schedule.alpha_bar_at(t)
    return _like(x0, np.sqrt(ab) * s + np.sqrt(1.0 - ab) * rng.standard_normal(s.shape))


def forward_step(x_prev, t: int, schedule: NoiseSchedule, rng: np.random.Generator):
    """Draw x_t from x_{t-1} via the single-step transition."""
    s = _samples_of(x_prev)
    return _like(
        x_prev,
        np.sqrt(schedule.alpha_at(t)) * s
        + np.sqrt(schedule.beta_at(t)) * rng.standard_normal(s.shape),
    )


def reverse_step(xt, t: int, schedule: NoiseSchedule, predictor: Predictor, rng: np.random.Generator):
    """One ancestral sampling step x_t -> x_{t-1} using the noise predictor."""
    s = _samples_of(xt)
    a = schedule.alpha_at(t)
    ab = schedule.alpha_bar_at(t)
    eps_hat = np.asarray(predictor(s, t), dtype=np.float64)
    if eps_hat.shape != s.shape:
        raise ValueError("predictor output length must equal input length")
    mean = (s - (1.0 - a) / np.sqrt(1.0 - ab) * eps_hat) / np.sqrt(a)
    s2 = schedule.sigma2_at(t)
    if s2 > 0.0:
        mean = mean + np.sqrt(s2) * rng.standard_normal(s.shape)
    return _like(xt, mean)


@dataclass(frozen=True)
class PurifierConfig:
    schedule: NoiseSchedule
    predictor: Predictor
    n_star: int

    def __post_init__(self):
        if not 0 <= self.n_star <= self.schedule.T:
            raise ValueError(f"n_star must lie in [0, {self.schedule.T}]")

    def with_depth(self, n_star: int) -> "PurifierConfig":
        return PurifierConfig(self.schedule, self.predictor, n_star)


def purify(x, cfg: PurifierConfig, rng: np.random.Generator):
    """Truncated diffusion: noise x to step n_star in one shot, then denoise back.

    n_star = 0 is the identity (a copy). All noise draws come from rng, so two
    calls with identically seeded generators produce identical outputs.
    """
    s = _samples_of(x)
    if cfg.n_star == 0:
        return _like(x, s.copy())
    x_t = forward_sample(s, cfg.n_star, cfg.schedule, rng)
    for t in range(cfg.n_star, 0, -1):
        x_t = reverse_step(x_t, t, cfg.schedule, cfg.predictor, rng)
    return _like(x, x_t)


def gaussian_oracle_predictor(mean: float, variance: float, schedule: NoiseSchedule) -> Predictor:
    """Exact posterior-mean noise predictor when x0 has iid N(mean, variance) samples.

    E[x0 | x_t] is linear in x_t for a Gaussian prior, and the implied noise
    estimate is (x_t - sqrt(ab) E[x0 | x_t]) / sqrt(1 - ab). Used to test the
    reverse process against closed-form moments without any training.
    """
    if variance <= 0.0:
        raise ValueError("variance must be positive")

    def predictor(x_t: np.ndarray, t: int) -> np.ndarray:
        ab = schedule.alpha_bar_at(t)
        k = np.sqrt(ab) * variance / (ab * variance + (1.0 - ab))
        x0_hat = mean + k * (x_t - np.sqrt(ab) * mean)
        return (x_t - np.sqrt(ab) * x0_hat) / np.sqrt(1.0 - ab)

    return predictor
