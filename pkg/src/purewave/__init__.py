"""Waveform-domain targeted attacks, diffusion purification, and detection
for a small CTC tone-burst recognizer, with a staged reproducible pipeline."""

from .attack import AttackResult, CwConfig, attack, attack_success_rate
from .audio import Waveform, db_level, peak_db, quantize_16bit, read_wav, speech_fraction, write_wav
from .config import ExperimentConfig, load_config
from .ctc import ctc_loss, decode_greedy, is_realizable, min_frames_required
from .defense import DefendedSystem, DefenseSweepReport, purified_waveform, ss, sweep
from .denoiser import DenoiserConfig, DenoiserNet, PredictorTrainConfig, fresh_noise_mse, load_denoiser, save_denoiser, train_predictor
from .detect import (
    DetectionModel,
    DetectionOutcome,
    LabeledExample,
    detect,
    divergence,
    evaluate_detector,
    fit,
    split_dataset,
)
from .diffusion import (
    NoiseSchedule,
    PurifierConfig,
    forward_sample,
    forward_step,
    gaussian_oracle_predictor,
    linear_schedule,
    purify,
    reverse_step,
)
from .errors import (
    CheckpointError,
    CorpusGateError,
    DatasetError,
    MalformedWavError,
    PipelineError,
    PurewaveError,
    TrainingDivergedError,
    TrainingGateError,
    UnrealizableTargetError,
    UnsupportedWavError,
    VocabularyError,
)
from .features import FeatureConfig, features
from .metrics import asr_performance, auroc, cer, confidence_interval, confusion_matrix, levenshtein, roc_curve, wer
from .recognizer import CtcRecognizer, RecognizerTrainConfig, input_gradient, load_recognizer, recognize, save_recognizer, train_recognizer
from .synth import BUCKETS, CorpusConfig, CorpusItem, SynthesisConfig, build_corpus, synthesize_sentence
from .vocab import DEFAULT_VOCAB, CharVocab

__version__ = "0.1.0"
