"""Waveform container, level and speech-activity measures, and mono 16-bit WAV I/O.

Amplitudes are reals nominally in [-1, 1]; intermediate processing (noise
injection, attack perturbations) may leave that range, so only finiteness is
enforced here. Quantization to 16-bit integers happens exclusively at file
boundaries.
"""

from __future__ import annotations

import math
import struct
from dataclasses import dataclass

import numpy as np

from .errors import MalformedWavError, UnsupportedWavError

DEFAULT_SAMPLE_RATE = 16000

# Frame-RMS speech gate defaults: 25 ms frames at 16 kHz, fixed energy floor.
GATE_FRAME_LEN = 400
GATE_THRESHOLD = 0.02
GATE_MIN_FRACTION = 0.68

_PCM_FULL_SCALE = 32767.0


@dataclass(frozen=True)
class Waveform:
    """A mono sampled signal. Immutable: the sample buffer is read-only."""

    samples: np.ndarray
    sample_rate: int = DEFAULT_SAMPLE_RATE

    def __post_init__(self):
        samples = np.asarray(self.samples, dtype=np.float64)
        if samples.ndim != 1 or samples.size == 0:
            raise ValueError("waveform requires a non-empty 1-D sample array")
        if not np.all(np.isfinite(samples)):
            raise ValueError("waveform samples must all be finite")
        rate = int(self.sample_rate)
        if rate <= 0:
            raise ValueError("sample_rate must be a positive integer")
        samples = samples.copy()
        samples.flags.writeable = False
        object.__setattr__(self, "samples", samples)
        object.__setattr__(self, "sample_rate", rate)

    def __len__(self) -> int:
        return self.samples.size

    @property
    def duration(self) -> float:
        return self.samples.size / self.sample_rate

    def with_samples(self, samples) -> "Waveform":
        """New waveform with the same sample rate."""
        return Waveform(samples, self.sample_rate)


def peak_db(samples: np.ndarray) -> float:
    """20*log10 of the peak absolute amplitude; -inf for all-zero input."""
    peak = float(np.max(np.abs(samples))) if np.asarray(samples).size else 0.0
    if peak == 0.0:
        return float("-inf")
    return 20.0 * math.log10(peak)


def db_level(w: Waveform) -> float:
    """Signal level in decibels, measured on the peak absolute sample.

    Silence maps to -inf rather than an error so that level differences with
    a zero perturbation stay well-defined.
    """
    return peak_db(w.samples)


def speech_fraction(
    w: Waveform,
    frame_len: int = GATE_FRAME_LEN,
    energy_threshold: float = GATE_THRESHOLD,
) -> float:
    """Fraction of non-overlapping full frames whose RMS exceeds the threshold.

    A trailing partial frame is ignored. Raises ValueError when the waveform
    is shorter than one frame.
    """
    if frame_len < 1:
        raise ValueError("frame_len must be >= 1")
    if frame_len > len(w):
        raise ValueError(f"frame_len {frame_len} exceeds waveform length {len(w)}")
    n_frames = len(w) // frame_len
    frames = w.samples[: n_frames * frame_len].reshape(n_frames, frame_len)
    rms = np.sqrt(np.mean(frames * frames, axis=1))
    return float(np.count_nonzero(rms > energy_threshold)) / n_frames


def quantize_16bit(samples: np.ndarray) -> np.ndarray:
    """Round-trip samples through the 16-bit integer grid used by WAV files.

    Matches write_wav followed by read_wav bit-for-bit, so callers can test
    whether a property survives file storage without touching disk.
    """
    clipped = np.clip(np.asarray(samples, dtype=np.float64), -1.0, 1.0)
    pcm = np.round(clipped * _PCM_FULL_SCALE)
    return pcm / _PCM_FULL_SCALE


def write_wav(w: Waveform, path) -> None:
    """Write a mono 16-bit PCM RIFF/WAVE file.

    Samples are clipped to [-1, 1] and quantized; the per-sample round-trip
    error is below 1/32768.
    """
    clipped = np.clip(w.samples, -1.0, 1.0)
    pcm = np.round(clipped * _PCM_FULL_SCALE).astype("<i2")
    payload = pcm.tobytes()
    header = b"".join(
        [
            b"RIFF",
            struct.pack("<I", 36 + len(payload)),
            b"WAVE",
            b"fmt ",
            struct.pack("<IHHIIHH", 16, 1, 1, w.sample_rate, w.sample_rate * 2, 2, 16),
            b"data",
            struct.pack("<I", len(payload)),
        ]
    )
    with open(path, "wb") as fh:
        fh.write(header)
        fh.write(payload)


def read_wav(path) -> Waveform:
    """Read a mono 16-bit PCM WAV file.

    Raises MalformedWavError for structural damage and UnsupportedWavError
    for valid files that are not mono 16-bit PCM. Unknown chunks are skipped.
    """
    with open(path, "rb") as fh:
        data = fh.read()
    if len(data) < 12 or data[0:4] != b"RIFF" or data[8:12] != b"WAVE":
        raise MalformedWavError(f"{path}: not a RIFF/WAVE file")

    fmt = None
    payload = None
    pos = 12
    while pos + 8 <= len(data):
        chunk_id = data[pos : pos + 4]
        (size,) = struct.unpack("<I", data[pos + 4 : pos + 8])
        body = data[pos + 8 : pos + 8 + size]
        if len(body) < size:
            raise MalformedWavError(f"{path}: truncated {chunk_id!r} chunk")
        if chunk_id == b"fmt ":
            if size < 16:
                raise MalformedWavError(f"{path}: fmt chunk too small")
            fmt = struct.unpack("<HHIIHH", body[:16])
        elif chunk_id == b"data":
            payload = body
        pos += 8 + size + (size & 1)  # chunks are word-aligned
    if pos != len(data):
        raise MalformedWavError(f"{path}: trailing garbage after last chunk")
    if fmt is None:
        raise MalformedWavError(f"{path}: missing fmt chunk")
    if payload is None:
        raise MalformedWavError(f"{path}: missing data chunk")

    audio_format, channels, rate, _byte_rate, _block_align, bits = fmt
    if audio_format != 1:
        raise UnsupportedWavError(f"{path}: only PCM (format 1) supported, got {audio_format}")
    if channels != 1:
        raise UnsupportedWavError(f"{path}: only mono supported, got {channels} channels")
    if bits != 16:
        raise UnsupportedWavError(f"{path}: only 16-bit samples supported, got {bits}")
    if len(payload) % 2 != 0:
        raise MalformedWavError(f"{path}: data chunk has odd byte count")
    if len(payload) == 0:
        raise MalformedWavError(f"{path}: empty data chunk")
    pcm = np.frombuffer(payload, dtype="<i2")
    return Waveform(pcm.astype(np.float64) / _PCM_FULL_SCALE, rate)
