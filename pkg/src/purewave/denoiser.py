"""Dilated-convolution noise predictor for the diffusion purifier.

A small gated residual stack over raw samples: a 1x1 input conv, dilated conv
layers (tanh * sigmoid gating, residual and skip 1x1 convs, step embedding
added per layer), and a two-stage 1x1 output head. Forward and reverse passes
are written out by hand in numpy; the reverse pass is checked against finite
differences in the test suite.
"""

from __future__ import annotations

import json
import os
from dataclasses import dataclass, field

import numpy as np

from .diffusion import NoiseSchedule
from .errors import CheckpointError, TrainingDivergedError
from .optim import Adam

CHECKPOINT_FORMAT = "denoiser-v1"
_SQRT2 = np.sqrt(2.0)


@dataclass(frozen=True)
class DenoiserConfig:
    channels: int = 8
    dilations: tuple[int, ...] = (1, 2, 4, 8)
    emb_dim: int = 16

    def __post_init__(self):
        if self.channels < 1 or self.emb_dim < 4 or self.emb_dim % 2:
            raise ValueError("channels must be >= 1 and emb_dim an even number >= 4")


def step_embedding(t: int, dim: int) -> np.ndarray:
    """Sinusoidal embedding of the (integer) diffusion step."""
    half = dim // 2
    freqs = 10.0 ** (np.arange(half) * 4.0 / (half - 1))
    angles = t / freqs
    return np.concatenate([np.sin(angles), np.cos(angles)])


def _sigmoid(x: np.ndarray) -> np.ndarray:
    out = np.empty_like(x)
    pos = x >= 0
    out[pos] = 1.0 / (1.0 + np.exp(-x[pos]))
    ex = np.exp(x[~pos])
    out[~pos] = ex / (1.0 + ex)
    return out


def _dilated_conv(y: np.ndarray, w: np.ndarray, b: np.ndarray, d: int) -> np.ndarray:
    """Zero-padded 3-tap dilated conv: y (C, n), w (O, C, 3) -> (O, n)."""
    n = y.shape[1]
    ypad = np.pad(y, ((0, 0), (d, d)))
    taps = np.stack([ypad[:, j * d : j * d + n] for j in range(3)])
    return np.einsum("ocj,jcn->on", w, taps, optimize=True) + b[:, None]


def _dilated_conv_backward(
    y: np.ndarray, w: np.ndarray, d: int, dout: np.ndarray
) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    """Gradients (dy, dw, db) of the dilated conv above."""
    n = y.shape[1]
    ypad = np.pad(y, ((0, 0), (d, d)))
    taps = np.stack([ypad[:, j * d : j * d + n] for j in range(3)])
    dw = np.einsum("on,jcn->ocj", dout, taps, optimize=True)
    db = dout.sum(axis=1)
    dypad = np.zeros_like(ypad)
    for j in range(3):
        dypad[:, j * d : j * d + n] += np.einsum("oc,on->cn", w[:, :, j], dout)
    return dypad[:, d : d + n], dw, db


@dataclass
class _LayerCache:
    y: np.ndarray  # layer input plus step embedding
    pre: np.ndarray  # dilated conv output, 2C channels
    ta: np.ndarray
    sg: np.ndarray
    z: np.ndarray


@dataclass
class DenoiserCache:
    x: np.ndarray
    emb: np.ndarray
    h0_pre: np.ndarray
    hs: list  # layer inputs h_0 .. h_{L-1}
    layers: list
    mid_in: np.ndarray
    m: np.ndarray
    q: np.ndarray
    qr: np.ndarray
    eps: np.ndarray


class DenoiserNet:
    """Noise predictor eps_hat(x_t, t); carries the schedule it was trained for."""

    def __init__(self, params: dict, cfg: DenoiserConfig, schedule: NoiseSchedule):
        self.cfg = cfg
        self.schedule = schedule
        self.params = params
        self.train_report = None
        c, e, nl = cfg.channels, cfg.emb_dim, len(cfg.dilations)
        expect = {
            "w_in": (c,), "b_in": (c,),
            "w_mid": (c, c), "b_mid": (c,), "w_out": (c,), "b_out": (1,),
        }
        for l in range(nl):
            expect.update({
                f"w_emb{l}": (c, e), f"b_emb{l}": (c,),
                f"w_dil{l}": (2 * c, c, 3), f"b_dil{l}": (2 * c,),
                f"w_res{l}": (c, c), f"b_res{l}": (c,),
                f"w_skip{l}": (c, c), f"b_skip{l}": (c,),
            })
        for name, shape in expect.items():
            if name not in params or params[name].shape != shape:
                raise ValueError(f"parameter {name} missing or has wrong shape")
        self._order = sorted(expect)

    @classmethod
    def create(
        cls,
        rng: np.random.Generator,
        schedule: NoiseSchedule,
        cfg: DenoiserConfig = DenoiserConfig(),
    ) -> "DenoiserNet":
        c, e = cfg.channels, cfg.emb_dim
        params = {
            "w_in": rng.normal(0.0, 1.0, size=(c,)),
            "b_in": np.zeros(c),
            "w_mid": rng.normal(0.0, 1.0 / np.sqrt(c), size=(c, c)),
            "b_mid": np.zeros(c),
            # zero-initialised head so the net starts as the zero predictor
            "w_out": np.zeros(c),
            "b_out": np.zeros(1),
        }
        for l in range(len(cfg.dilations)):
            params[f"w_emb{l}"] = rng.normal(0.0, 1.0 / np.sqrt(e), size=(c, e))
            params[f"b_emb{l}"] = np.zeros(c)
            params[f"w_dil{l}"] = rng.normal(0.0, 1.0 / np.sqrt(3 * c), size=(2 * c, c, 3))
            params[f"b_dil{l}"] = np.zeros(2 * c)
            params[f"w_res{l}"] = rng.normal(0.0, 1.0 / np.sqrt(c), size=(c, c))
            params[f"b_res{l}"] = np.zeros(c)
            params[f"w_skip{l}"] = rng.normal(0.0, 1.0 / np.sqrt(c), size=(c, c))
            params[f"b_skip{l}"] = np.zeros(c)
        return cls(params, cfg, schedule)

    def parameters(self) -> list[np.ndarray]:
        return [self.params[k] for k in self._order]

    def forward(self, x: np.ndarray, t: int) -> DenoiserCache:
        p = self.params
        c = self.cfg.channels
        x = np.asarray(x, dtype=np.float64)
        emb = step_embedding(t, self.cfg.emb_dim)
        h0_pre = p["w_in"][:, None] * x[None, :] + p["b_in"][:, None]
        h = np.maximum(h0_pre, 0.0)
        hs, layers = [], []
        skip_acc = np.zeros_like(h)
        for l, d in enumerate(self.cfg.dilations):
            hs.append(h)
            y = h + (p[f"w_emb{l}"] @ emb + p[f"b_emb{l}"])[:, None]
            pre = _dilated_conv(y, p[f"w_dil{l}"], p[f"b_dil{l}"], d)
            ta = np.tanh(pre[:c])
            sg = _sigmoid(pre[c:])
            z = ta * sg
            r = p[f"w_res{l}"] @ z + p[f"b_res{l}"][:, None]
            skip_acc += p[f"w_skip{l}"] @ z + p[f"b_skip{l}"][:, None]
            h = (h + r) / _SQRT2
            layers.append(_LayerCache(y=y, pre=pre, ta=ta, sg=sg, z=z))
        mid_in = skip_acc / np.sqrt(len(self.cfg.dilations))
        m = np.maximum(mid_in, 0.0)
        q = p["w_mid"] @ m + p["b_mid"][:, None]
        qr = np.maximum(q, 0.0)
        eps = p["w_out"] @ qr + p["b_out"][0]
        return DenoiserCache(
            x=x, emb=emb, h0_pre=h0_pre, hs=hs, layers=layers,
            mid_in=mid_in, m=m, q=q, qr=qr, eps=eps,
        )

    def predict(self, x: np.ndarray, t: int) -> np.ndarray:
        return self.forward(x, t).eps

    def __call__(self, x: np.ndarray, t: int) -> np.ndarray:
        return self.predict(x, t)

    def backward(self, cache: DenoiserCache, deps: np.ndarray) -> list[np.ndarray]:
        """Parameter gradients (ordered like parameters()) for upstream deps."""
        p = self.params
        c = self.cfg.channels
        n_layers = len(self.cfg.dilations)
        g = {k: np.zeros_like(v) for k, v in self.params.items()}

        g["w_out"] = cache.qr @ deps
        g["b_out"] = np.array([deps.sum()])
        dqr = p["w_out"][:, None] * deps[None, :]
        dq = dqr * (cache.q > 0)
        g["w_mid"] = dq @ cache.m.T
        g["b_mid"] = dq.sum(axis=1)
        dm = p["w_mid"].T @ dq
        dmid_in = dm * (cache.mid_in > 0)
        dskip = dmid_in / np.sqrt(n_layers)

        dh = np.zeros((c, cache.x.size))  # final residual output feeds nothing
        for l in range(n_layers - 1, -1, -1):
            lc: _LayerCache = cache.layers[l]
            dr = dh / _SQRT2
            dh_carry = dh / _SQRT2
            g[f"w_res{l}"] = dr @ lc.z.T
            g[f"b_res{l}"] = dr.sum(axis=1)
            g[f"w_skip{l}"] = dskip @ lc.z.T
            g[f"b_skip{l}"] = dskip.sum(axis=1)
            dz = p[f"w_res{l}"].T @ dr + p[f"w_skip{l}"].T @ dskip
            dta = dz * lc.sg
            dsg = dz * lc.ta
            dpre = np.concatenate(
                [dta * (1.0 - lc.ta**2), dsg * lc.sg * (1.0 - lc.sg)], axis=0
            )
            dy, dw, db = _dilated_conv_backward(lc.y, p[f"w_dil{l}"], self.cfg.dilations[l], dpre)
            g[f"w_dil{l}"] = dw
            g[f"b_dil{l}"] = db
            demb_vec = dy.sum(axis=1)
            g[f"w_emb{l}"] = np.outer(demb_vec, cache.emb)
            g[f"b_emb{l}"] = demb_vec
            dh = dh_carry + dy

        dh0 = dh * (cache.h0_pre > 0)
        g["w_in"] = (dh0 * cache.x[None, :]).sum(axis=1)
        g["b_in"] = dh0.sum(axis=1)
        return [g[k] for k in self._order]


@dataclass(frozen=True)
class PredictorTrainConfig:
    steps: int = 20000
    lr: float = 1e-3
    crop_len: int = 1600
    window: int = 50  # steps averaged for the initial/final loss summary


@dataclass
class PredictorTrainReport:
    steps_run: int
    initial_loss: float
    final_loss: float
    loss_history: list[float] = field(default_factory=list)


def train_predictor(
    corpus,
    schedule: NoiseSchedule,
    cfg: PredictorTrainConfig = PredictorTrainConfig(),
    rng: np.random.Generator | None = None,
    arch: DenoiserConfig = DenoiserConfig(),
) -> DenoiserNet:
    """Denoising-score-matching training on random crops of the corpus waveforms.

    Each step draws a waveform, a crop, a uniform diffusion step and fresh
    noise, then regresses the net output onto that noise with a mean squared
    error. Returns the trained net with its report on net.train_report.
    """
    waves = [np.asarray(getattr(w, "samples", w), dtype=np.float64) for w in corpus]
    if not waves:
        raise ValueError("cannot train on an empty corpus")
    if rng is None:
        rng = np.random.default_rng(0)
    net = DenoiserNet.create(rng, schedule, arch)
    opt = Adam(net.parameters(), lr=cfg.lr)
    history = []
    for _ in range(cfg.steps):
        x0 = waves[rng.integers(len(waves))]
        if x0.size > cfg.crop_len:
            start = rng.integers(x0.size - cfg.crop_len + 1)
            x0 = x0[start : start + cfg.crop_len]
        t = int(rng.integers(1, schedule.T + 1))
        noise = rng.standard_normal(x0.shape)
        ab = schedule.alpha_bar_at(t)
        x_t = np.sqrt(ab) * x0 + np.sqrt(1.0 - ab) * noise
        cache = net.forward(x_t, t)
        diff = cache.eps - noise
        loss = float(np.mean(diff**2))
        if not np.isfinite(loss):
            raise TrainingDivergedError(f"non-finite denoiser loss at step {len(history)}")
        history.append(loss)
        opt.step(net.backward(cache, 2.0 * diff / diff.size))
    w = min(cfg.window, len(history))
    net.train_report = PredictorTrainReport(
        steps_run=len(history),
        initial_loss=float(np.mean(history[:w])),
        final_loss=float(np.mean(history[-w:])),
        loss_history=history,
    )
    return net


def fresh_noise_mse(
    net: DenoiserNet, n_samples: int = 4000, n_draws: int = 20, seed: int = 1234
) -> float:
    """Held-out check: MSE of the noise prediction on pure standard-normal input
    at large t, where the input is (almost) all noise."""
    rng = np.random.default_rng(seed)
    t = net.schedule.T
    errs = []
    for _ in range(n_draws):
        x = rng.standard_normal(n_samples)
        # at t = T the marginal of x_t for x0 ~ 0 is close to standard normal
        errs.append(float(np.mean((net.predict(x, t) - x) ** 2)))
    return float(np.mean(errs))


def save_denoiser(net: DenoiserNet, path: str) -> None:
    payload = {
        "format": CHECKPOINT_FORMAT,
        "config": {
            "channels": net.cfg.channels,
            "dilations": list(net.cfg.dilations),
            "emb_dim": net.cfg.emb_dim,
        },
        "schedule_beta": net.schedule.beta.tolist(),
        "params": {k: v.tolist() for k, v in net.params.items()},
    }
    parent = os.path.dirname(path)
    if parent:
        os.makedirs(parent, exist_ok=True)
    tmp = path + ".tmp"
    with open(tmp, "w") as fh:
        json.dump(payload, fh)
    os.replace(tmp, path)


def load_denoiser(path: str, schedule: NoiseSchedule | None = None) -> DenoiserNet:
    try:
        with open(path) as fh:
            payload = json.load(fh)
    except (OSError, json.JSONDecodeError) as exc:
        raise CheckpointError(f"cannot read denoiser checkpoint {path}: {exc}") from exc
    if payload.get("format") != CHECKPOINT_FORMAT:
        raise CheckpointError(f"{path} is not a denoiser checkpoint (format={payload.get('format')!r})")
    file_schedule = NoiseSchedule(np.array(payload["schedule_beta"], dtype=np.float64))
    if schedule is not None and file_schedule != schedule:
        raise CheckpointError(
            f"checkpoint schedule (T={file_schedule.T}) does not match the requested "
            f"schedule (T={schedule.T})"
        )
    cfg = DenoiserConfig(
        channels=payload["config"]["channels"],
        dilations=tuple(payload["config"]["dilations"]),
        emb_dim=payload["config"]["emb_dim"],
    )
    try:
        params = {k: np.array(v, dtype=np.float64) for k, v in payload["params"].items()}
        return DenoiserNet(params, cfg, file_schedule)
    except (KeyError, ValueError) as exc:
        raise CheckpointError(f"malformed denoiser checkpoint {path}: {exc}") from exc
