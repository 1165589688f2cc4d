"""Synthetic micro-speech: tone-burst sentences and a bucketed labeled corpus.

Each character is a fixed-duration sine burst at a character-specific
frequency; bursts are separated by short silent gaps. Frequencies sit on
multiples of 40 Hz so the 25 ms analysis frames used elsewhere see them
leak-free. The space character gets its own (lowest) burst frequency, which
keeps silence reserved for gaps and padding.
"""

from __future__ import annotations

from dataclasses import dataclass, field, replace

import numpy as np

from .audio import (
    GATE_FRAME_LEN,
    GATE_MIN_FRACTION,
    GATE_THRESHOLD,
    Waveform,
    speech_fraction,
)
from .errors import CorpusGateError, VocabularyError
from .vocab import DEFAULT_VOCAB, CharVocab

BUCKETS = ("short", "medium", "long")

# Desk-scale bucket durations in seconds (short < medium < long, disjoint).
DEFAULT_BUCKET_RANGES = {
    "short": (0.5, 1.0),
    "medium": (1.5, 2.0),
    "long": (3.0, 3.5),
}

# Small lowercase word list; together with the coverage sentences below it
# reaches every letter a-z.
WORD_LIST = (
    "the and you for are with his they this have from one had word but not "
    "what all were when your can said there use each which she how their "
    "will other about out many then them these some her would make like him "
    "time has look two more write go see number way could people my than "
    "first water been call who oil its now find long down day did get come "
    "made may part over new sound take only little work know place year live "
    "me back give most very after thing our just name good sentence man "
    "think say great where help through much before line right too mean old "
    "any same tell boy follow came want show also around form three small "
    "set put end does another well large must big even such because turn "
    "here why ask went men read need land different home us move try kind "
    "hand picture again change off play spell air away animal house point "
    "page letter mother answer found study still learn should world high "
    "every near add food between own below country plant last school father "
    "keep tree never start city earth eye light thought head under story saw "
    "left dont few while along might close something seem next hard open "
    "example begin life always those both paper together got group often run "
    "important until children side feet car mile night walk white sea began "
    "grow took river four carry state once book hear stop without second "
    "later miss idea enough eat face watch far real almost let above girl "
    "sometimes mountain cut young talk soon list song being leave family "
    "quiz jazz exam wolf box gym very keep zero"
).split()

# Fixed sentences appended to training corpora so every letter is observed.
COVERAGE_SENTENCES = (
    "the quick brown fox jumps over the lazy dog",
    "pack my box with five dozen liquor jugs",
    "how vexingly quick daft zebras jump",
)


@dataclass(frozen=True)
class SynthesisConfig:
    sample_rate: int = 16000
    char_duration: float = 0.060  # seconds of tone per character
    char_gap: float = 0.020  # silent gap after each burst
    edge_pad: float = 0.040  # leading and trailing silence
    amplitude: float = 0.30
    amplitude_jitter: float = 0.20  # relative, uniform, needs an rng
    ramp: float = 0.002  # raised-cosine attack/decay per burst
    freq_base: float = 80.0  # frequency of character index 0
    freq_step: float = 80.0  # spacing between adjacent character indices
    noise_snr_db: float | None = None  # additive Gaussian noise level
    vocab: CharVocab = field(default_factory=lambda: DEFAULT_VOCAB)

    @property
    def char_period(self) -> float:
        return self.char_duration + self.char_gap

    def tone_frequency(self, char: str) -> float:
        return self.freq_base + self.freq_step * self.vocab.index(char)


DEFAULT_SYNTHESIS = SynthesisConfig()


def synthesized_duration(n_chars: int, cfg: SynthesisConfig = DEFAULT_SYNTHESIS) -> float:
    """Exact duration in seconds of a synthesized n-character sentence."""
    return 2.0 * cfg.edge_pad + n_chars * cfg.char_period


def synthesize_sentence(
    text: str,
    cfg: SynthesisConfig = DEFAULT_SYNTHESIS,
    rng: np.random.Generator | None = None,
) -> Waveform:
    """Render a transcript as a sequence of tone bursts.

    Deterministic for a given rng state; without an rng there is no jitter,
    phases are zero, and noise is disabled (configuring an SNR then raises).
    """
    if len(text) == 0:
        raise VocabularyError("cannot synthesize an empty transcript")
    cfg.vocab.encode(text)  # raises VocabularyError on unknown characters
    if cfg.noise_snr_db is not None and rng is None:
        raise ValueError("noise_snr_db requires an rng for reproducible noise")

    sr = cfg.sample_rate
    n_burst = int(round(cfg.char_duration * sr))
    n_gap = int(round(cfg.char_gap * sr))
    n_pad = int(round(cfg.edge_pad * sr))
    n_ramp = min(int(round(cfg.ramp * sr)), n_burst // 2)

    envelope = np.ones(n_burst)
    if n_ramp > 0:
        ramp = 0.5 - 0.5 * np.cos(np.linspace(0.0, np.pi, n_ramp))
        envelope[:n_ramp] = ramp
        envelope[-n_ramp:] = ramp[::-1]

    t = np.arange(n_burst) / sr
    pieces = [np.zeros(n_pad)]
    for ch in text:
        freq = cfg.tone_frequency(ch)
        if rng is not None:
            amp = cfg.amplitude * (1.0 + cfg.amplitude_jitter * rng.uniform(-1.0, 1.0))
            phase = rng.uniform(0.0, 2.0 * np.pi)
        else:
            amp, phase = cfg.amplitude, 0.0
        burst = amp * envelope * np.sin(2.0 * np.pi * freq * t + phase)
        pieces.append(burst)
        pieces.append(np.zeros(n_gap))
    pieces.append(np.zeros(n_pad))
    samples = np.concatenate(pieces)

    if cfg.noise_snr_db is not None:
        signal_rms = float(np.sqrt(np.mean(samples * samples)))
        noise_std = signal_rms * 10.0 ** (-cfg.noise_snr_db / 20.0)
        samples = samples + noise_std * rng.standard_normal(samples.size)

    return Waveform(np.clip(samples, -1.0, 1.0), sr)


@dataclass(frozen=True)
class CorpusItem:
    waveform: Waveform
    transcript: str
    bucket: str
    id: str


@dataclass(frozen=True)
class CorpusConfig:
    synthesis: SynthesisConfig = field(default_factory=lambda: DEFAULT_SYNTHESIS)
    bucket_ranges: dict = field(default_factory=lambda: dict(DEFAULT_BUCKET_RANGES))
    gate_frame_len: int = GATE_FRAME_LEN
    gate_threshold: float = GATE_THRESHOLD
    gate_min_fraction: float = GATE_MIN_FRACTION
    retry_budget: int = 20
    noise_snr_jitter_db: float = 0.0  # half-width of per-item uniform SNR jitter
    words: tuple = tuple(WORD_LIST)

    def __post_init__(self):
        ordered = [self.bucket_ranges[b] for b in BUCKETS if b in self.bucket_ranges]
        for (lo_a, hi_a), (lo_b, hi_b) in zip(ordered, ordered[1:]):
            if not (lo_a < hi_a <= lo_b < hi_b):
                raise ValueError("bucket duration ranges must be disjoint and increasing")


DEFAULT_CORPUS = CorpusConfig()


def char_budget(bucket: str, cfg: CorpusConfig) -> tuple[int, int]:
    """Inclusive range of sentence lengths whose synthesis lands in the bucket."""
    lo_s, hi_s = cfg.bucket_ranges[bucket]
    period = cfg.synthesis.char_period
    pad = 2.0 * cfg.synthesis.edge_pad
    n_min = int(np.ceil((lo_s - pad) / period))
    n_max = int(np.floor((hi_s - pad) / period))
    if n_min > n_max or n_min < 1:
        raise ValueError(f"bucket {bucket!r} duration range admits no sentence length")
    return n_min, n_max


def sample_sentence(rng: np.random.Generator, n_min: int, n_max: int, words: tuple) -> str:
    """Random word sequence whose total character count lands in [n_min, n_max]."""
    picked: list[str] = []
    count = 0
    while count < n_min:
        sep = 1 if picked else 0
        fitting = [w for w in words if count + sep + len(w) <= n_max]
        if not fitting:
            raise ValueError("word list cannot fill the requested sentence length")
        w = fitting[rng.integers(len(fitting))]
        picked.append(w)
        count += sep + len(w)
    return " ".join(picked)


def build_corpus(
    counts: dict[str, int],
    seed: int,
    cfg: CorpusConfig = DEFAULT_CORPUS,
) -> list[CorpusItem]:
    """Synthesize a labeled corpus with the requested per-bucket item counts.

    Every emitted item passes the speech-activity gate; items failing it are
    re-drawn up to the retry budget. Deterministic for a given seed, and each
    item's randomness is derived independently of the others.
    """
    unknown = set(counts) - set(BUCKETS)
    if unknown:
        raise ValueError(f"unknown buckets in counts: {sorted(unknown)}")
    items: list[CorpusItem] = []
    for bucket_idx, bucket in enumerate(BUCKETS):
        n_items = int(counts.get(bucket, 0))
        if n_items < 0:
            raise ValueError("bucket counts must be non-negative")
        if n_items == 0:
            continue
        n_min, n_max = char_budget(bucket, cfg)
        for i in range(n_items):
            rng = np.random.default_rng(np.random.SeedSequence([seed, bucket_idx, i]))
            item = None
            for _attempt in range(cfg.retry_budget):
                text = sample_sentence(rng, n_min, n_max, cfg.words)
                scfg = cfg.synthesis
                if scfg.noise_snr_db is not None and cfg.noise_snr_jitter_db > 0.0:
                    jitter = cfg.noise_snr_jitter_db * rng.uniform(-1.0, 1.0)
                    scfg = replace(scfg, noise_snr_db=scfg.noise_snr_db + jitter)
                w = synthesize_sentence(text, scfg, rng)
                fraction = speech_fraction(w, cfg.gate_frame_len, cfg.gate_threshold)
                if fraction >= cfg.gate_min_fraction:
                    item = CorpusItem(w, text, bucket, f"{bucket}-{i:03d}")
                    break
            if item is None:
                raise CorpusGateError(
                    f"speech gate rejected {cfg.retry_budget} candidates for {bucket}-{i:03d}"
                )
            items.append(item)
    return items
