"""Convolutional CTC speech recognition in NumPy.

Log-mel front end, masking augmentation, Jasper/QuartzNet-style acoustic
models with hand-written backpropagation, CTC loss and decoding, NovoGrad,
and WER scoring.
"""

from .audio_io import AudioClip, SynthSpec, load_wav, resample_linear, save_wav, synth_dataset
from .augment import AugmentPolicy, spec_augment
from .config import RunConfig
from .ctc import beam_decode, ctc_loss, greedy_decode, log_softmax
from .dataset import (
    ManifestEntry,
    Vocabulary,
    build_vocab,
    load_manifest,
    normalize_text,
    save_manifest,
    split_by_speaker,
)
from .estimator import CTCSpeechRecognizer, LogMelExtractor, SpecAugment
from .features import FrameConfig, hz_to_mel, log_mel, mel_filterbank, mel_to_hz, normalize
from .metrics import WerBreakdown, corpus_wer, edit_ops, wer
from .model import AcousticModel, ConvSpec, ModelConfig, desk_config, param_count
from .optim import OptHyper, OptState, novograd_step, train_loop

__version__ = "0.1.0"

__all__ = [
    "AcousticModel", "AudioClip", "AugmentPolicy", "CTCSpeechRecognizer", "ConvSpec",
    "FrameConfig", "LogMelExtractor", "ManifestEntry", "ModelConfig", "OptHyper", "OptState",
    "RunConfig", "SpecAugment", "SynthSpec", "Vocabulary", "WerBreakdown", "beam_decode",
    "build_vocab", "corpus_wer", "ctc_loss", "desk_config", "edit_ops", "greedy_decode",
    "hz_to_mel", "load_manifest", "load_wav", "log_mel", "log_softmax", "mel_filterbank",
    "mel_to_hz", "normalize", "normalize_text", "novograd_step", "param_count",
    "resample_linear", "save_manifest", "save_wav", "spec_augment", "split_by_speaker",
    "synth_dataset", "train_loop", "wer",
]
