import numpy as np
import pytest

from purewave.audio import speech_fraction
from purewave.errors import CorpusGateError, VocabularyError
from purewave.synth import (
    BUCKETS,
    DEFAULT_BUCKET_RANGES,
    CorpusConfig,
    SynthesisConfig,
    build_corpus,
    char_budget,
    sample_sentence,
    synthesize_sentence,
    synthesized_duration,
)

CFG = SynthesisConfig()


def test_duration_formula():
    # 80 ms per character (60 ms burst + 20 ms gap) plus 40 ms padding each side
    assert CFG.char_period == pytest.approx(0.080)
    for n in (1, 5, 40):
        assert synthesized_duration(n, CFG) == pytest.approx(0.080 + n * 0.080)
    w = synthesize_sentence("abcde", CFG)
    assert len(w) == round(synthesized_duration(5, CFG) * CFG.sample_rate)


def test_tone_frequencies_are_bin_centered():
    # 40 Hz spectral bin spacing for 400-sample frames at 16 kHz; every
    # character tone must land exactly on a bin so frames are leakage-free
    for i, ch in enumerate("abcdefghijklmnopqrstuvwxyz "):
        f = CFG.tone_frequency(ch)
        assert f == pytest.approx(80.0 + 80.0 * i)
        assert f % 40.0 == 0.0
    assert CFG.tone_frequency(" ") == pytest.approx(2160.0)


def test_tone_dominates_its_dft_bin():
    w = synthesize_sentence("c", CFG)  # 240 Hz -> bin index 6 at 40 Hz spacing
    mid = w.samples[len(w) // 2 - 200 : len(w) // 2 + 200]
    spectrum = np.abs(np.fft.rfft(mid))
    assert np.argmax(spectrum[1:]) + 1 == 6


def test_synthesize_deterministic_without_rng():
    a = synthesize_sentence("abc abc", CFG)
    b = synthesize_sentence("abc abc", CFG)
    assert np.array_equal(a.samples, b.samples)


def test_synthesize_jitter_needs_rng():
    r1 = synthesize_sentence("abc", CFG, np.random.default_rng(1)).samples
    r2 = synthesize_sentence("abc", CFG, np.random.default_rng(2)).samples
    assert not np.array_equal(r1, r2)
    # same seed -> same audio
    r3 = synthesize_sentence("abc", CFG, np.random.default_rng(1)).samples
    assert np.array_equal(r1, r3)


def test_synthesize_rejects_bad_text():
    with pytest.raises(VocabularyError):
        synthesize_sentence("", CFG)
    with pytest.raises(VocabularyError):
        synthesize_sentence("ABC", CFG)


def test_noise_requires_rng():
    noisy_cfg = SynthesisConfig(noise_snr_db=20.0)
    with pytest.raises(ValueError):
        synthesize_sentence("abc", noisy_cfg)
    w = synthesize_sentence("abc", noisy_cfg, np.random.default_rng(0))
    clean = synthesize_sentence("abc", SynthesisConfig(), np.random.default_rng(0))
    assert not np.array_equal(w.samples, clean.samples)


def test_noise_snr_calibration():
    # at 0 dB SNR the noise power matches the whole-clip signal power; the
    # edge pad carries noise alone, so measure it there
    noisy_cfg = SynthesisConfig(noise_snr_db=0.0, amplitude_jitter=0.0)
    rng = np.random.default_rng(3)
    clean = synthesize_sentence("abcdefgh", SynthesisConfig(amplitude_jitter=0.0))
    signal_power = np.mean(clean.samples**2)
    n_pad = int(0.040 * 16000)
    noise_powers = []
    for _ in range(10):
        noisy = synthesize_sentence("abcdefgh", noisy_cfg, rng)
        noise_powers.append(np.mean(noisy.samples[:n_pad] ** 2))
    assert np.mean(noise_powers) / signal_power == pytest.approx(1.0, rel=0.15)


def test_speech_gate_passes_for_synthesized_audio():
    for text in ("hello world", "abc", "zzzz zzzz"):
        w = synthesize_sentence(text, CFG)
        assert speech_fraction(w) >= 0.68


def test_char_budgets_fit_bucket_durations():
    cc = CorpusConfig(synthesis=CFG)
    for bucket in BUCKETS:
        lo, hi = char_budget(bucket, cc)
        dur_lo, dur_hi = DEFAULT_BUCKET_RANGES[bucket]
        assert lo >= 1 and lo <= hi
        assert synthesized_duration(lo, CFG) >= dur_lo
        assert synthesized_duration(hi, CFG) <= dur_hi


def test_sample_sentence_respects_budget():
    cc = CorpusConfig(synthesis=CFG)
    rng = np.random.default_rng(5)
    for bucket in BUCKETS:
        lo, hi = char_budget(bucket, cc)
        for _ in range(20):
            s = sample_sentence(rng, lo, hi, cc.words)
            assert lo <= len(s) <= hi
            assert all(w for w in s.split(" "))  # no double spaces or edges


def test_build_corpus_items():
    cc = CorpusConfig(synthesis=CFG)
    items = build_corpus({"short": 3, "medium": 2}, 99, cc)
    assert [it.id for it in items] == [
        "short-000",
        "short-001",
        "short-002",
        "medium-000",
        "medium-001",
    ]
    for it in items:
        lo, hi = DEFAULT_BUCKET_RANGES[it.bucket]
        assert lo <= it.waveform.duration <= hi
        assert speech_fraction(it.waveform) >= cc.gate_min_fraction


def test_build_corpus_deterministic():
    cc = CorpusConfig(synthesis=CFG)
    a = build_corpus({"short": 2}, 7, cc)
    b = build_corpus({"short": 2}, 7, cc)
    assert [x.transcript for x in a] == [x.transcript for x in b]
    for x, y in zip(a, b):
        assert np.array_equal(x.waveform.samples, y.waveform.samples)
    c = build_corpus({"short": 2}, 8, cc)
    assert [x.transcript for x in a] != [x.transcript for x in c]


def test_build_corpus_count_edge_cases():
    cc = CorpusConfig(synthesis=CFG)
    assert build_corpus({"short": 0, "medium": 1}, 1, cc)[0].bucket == "medium"
    with pytest.raises(ValueError):
        build_corpus({"short": -1}, 1, cc)
    with pytest.raises(ValueError):
        build_corpus({"nope": 1}, 1, cc)


def test_build_corpus_gate_exhaustion():
    # an absurd gate threshold can never pass, so the retry budget runs out
    cc = CorpusConfig(synthesis=CFG, gate_threshold=10.0, retry_budget=3)
    with pytest.raises(CorpusGateError):
        build_corpus({"short": 1}, 1, cc)


def test_amplitude_jitter_bounds():
    rng = np.random.default_rng(11)
    for _ in range(5):
        w = synthesize_sentence("aaaa", CFG, rng)
        peak = np.max(np.abs(w.samples))
        assert 0.3 * 0.8 - 1e-6 <= peak <= 0.3 * 1.2 + 1e-6
