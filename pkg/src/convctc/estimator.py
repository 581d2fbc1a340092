"""scikit-learn style front end to the recognition pipeline.

``LogMelExtractor`` and ``SpecAugment`` are transformers over lists of
waveforms / feature matrices; ``CTCSpeechRecognizer`` learns a transcript
for each feature matrix. They compose in a :class:`sklearn.pipeline.Pipeline`.
"""

from __future__ import annotations

import numpy as np
from sklearn.base import BaseEstimator, TransformerMixin
from sklearn.utils.validation import check_is_fitted

from ._validation import check_clips, check_feature_list, check_transcripts
from .audio_io import SAMPLE_RATE, resample_linear
from .augment import AugmentPolicy, spec_augment
from .ctc import beam_decode, greedy_decode, log_softmax
from .dataset import build_vocab, normalize_text
from .features import FrameConfig, log_mel, mel_filterbank, normalize
from .metrics import corpus_wer
from .model import AcousticModel, desk_config
from .optim import OptHyper, Utterance, pad_batch, train_loop


class LogMelExtractor(BaseEstimator, TransformerMixin):
    """Waveforms to per-row normalized log-mel matrices (n_mels x frames)."""

    def __init__(self, sample_rate=SAMPLE_RATE, win_length=400, hop_length=160, n_fft=512,
                 window="hann", n_mels=64, f_min=0.0, f_max=None, log_epsilon=1e-10,
                 normalize=True):
        self.sample_rate = sample_rate
        self.win_length = win_length
        self.hop_length = hop_length
        self.n_fft = n_fft
        self.window = window
        self.n_mels = n_mels
        self.f_min = f_min
        self.f_max = f_max
        self.log_epsilon = log_epsilon
        self.normalize = normalize

    def fit(self, X=None, y=None):
        self.frame_config_ = FrameConfig(
            win_length=self.win_length, hop_length=self.hop_length, n_fft=self.n_fft,
            window=self.window, n_mels=self.n_mels, f_min=self.f_min,
            f_max=self.sample_rate / 2 if self.f_max is None else self.f_max,
            log_epsilon=self.log_epsilon,
        )
        self.filterbank_ = mel_filterbank(self.frame_config_, self.sample_rate)
        return self

    def transform(self, X):
        check_is_fitted(self, "filterbank_")
        out = []
        for clip in check_clips(X, self.sample_rate):
            clip = resample_linear(clip, self.sample_rate)
            feats = log_mel(clip, self.frame_config_, self.filterbank_)
            out.append((normalize(feats) if self.normalize else feats).values)
        return out


class SpecAugment(BaseEstimator, TransformerMixin):
    """Random frequency/time masking; ``transform`` draws fresh masks each call."""

    def __init__(self, n_freq_masks=1, max_freq_width=8, n_time_masks=1, max_time_width=100,
                 max_time_fraction=0.1, fill="zero", random_state=None):
        self.n_freq_masks = n_freq_masks
        self.max_freq_width = max_freq_width
        self.n_time_masks = n_time_masks
        self.max_time_width = max_time_width
        self.max_time_fraction = max_time_fraction
        self.fill = fill
        self.random_state = random_state

    def fit(self, X=None, y=None):
        self.policy_ = AugmentPolicy(
            self.n_freq_masks, self.max_freq_width, self.n_time_masks,
            self.max_time_width, self.fill, self.max_time_fraction,
        )
        self.rng_ = np.random.default_rng(self.random_state)
        return self

    def transform(self, X):
        check_is_fitted(self, "policy_")
        return [spec_augment(x, self.policy_, self.rng_) for x in check_feature_list(X)]


class CTCSpeechRecognizer(BaseEstimator):
    """Convolutional CTC acoustic model trained with NovoGrad.

    ``fit`` takes a list of (n_mels x frames) feature matrices and their
    transcripts; ``predict`` returns decoded transcripts. ``score`` is
    ``1 - corpus WER`` so that larger is better.
    """

    def __init__(self, arch="quartznet", n_blocks=4, repeat=1, channels=32,
                 kernels=(11, 13, 15, 17), dropout=0.0, blank_bias=0.0, unit="char",
                 epochs=5, batch_size=8, learning_rate=0.001, weight_decay=0.001,
                 beta1=0.95, beta2=0.5, epsilon=1e-8, augment=None, beam_width=None,
                 stop_wer=None, random_state=0):
        self.arch = arch
        self.n_blocks = n_blocks
        self.repeat = repeat
        self.channels = channels
        self.kernels = kernels
        self.dropout = dropout
        self.blank_bias = blank_bias
        self.unit = unit
        self.epochs = epochs
        self.batch_size = batch_size
        self.learning_rate = learning_rate
        self.weight_decay = weight_decay
        self.beta1 = beta1
        self.beta2 = beta2
        self.epsilon = epsilon
        self.augment = augment
        self.beam_width = beam_width
        self.stop_wer = stop_wer
        self.random_state = random_state

    def _utterances(self, X, y):
        return [
            Utterance(x, self.vocab_.encode(t), t)
            for x, t in zip(X, (normalize_text(t) for t in y))
        ]

    def fit(self, X, y, X_dev=None, y_dev=None):
        X = check_feature_list(X)
        y = check_transcripts(y, len(X))
        self.n_features_in_ = X[0].shape[0]
        X = check_feature_list(X, self.n_features_in_)
        self.vocab_ = build_vocab(y, self.unit)
        config = desk_config(
            self.arch, self.n_features_in_, len(self.vocab_) + 1, self.n_blocks,
            self.repeat, self.channels, self.kernels, self.dropout,
        )
        seed = 0 if self.random_state is None else self.random_state
        self.model_ = AcousticModel(config, seed=seed)
        self.model_.params["output.bias"][-1] = self.blank_bias
        dev = None
        if X_dev is not None:
            X_dev = check_feature_list(X_dev, self.n_features_in_)
            dev = self._utterances(X_dev, check_transcripts(y_dev, len(X_dev)))
        hp = OptHyper(self.learning_rate, self.weight_decay, self.beta1, self.beta2, self.epsilon)
        result = train_loop(
            self.model_, self._utterances(X, y), hp, self.epochs, np.random.default_rng(seed),
            decode_text=self.vocab_.decode, dev=dev, batch_size=self.batch_size,
            augment=self.augment, stop_wer=self.stop_wer,
        )
        self.history_ = result.records
        return self

    def predict_log_proba(self, X):
        """Per-utterance (frames_out x |V|+1) log-probabilities."""
        check_is_fitted(self, "model_")
        X = check_feature_list(X, self.n_features_in_)
        out = []
        for start in range(0, len(X), self.batch_size):
            chunk = [Utterance(x, None, "") for x in X[start: start + self.batch_size]]
            batch, lengths = pad_batch(chunk)
            logits, out_lengths, _ = self.model_.forward(batch, lengths, mode="eval")
            out.extend(log_softmax(logits[i, :n]) for i, n in enumerate(out_lengths))
        return out

    def decode(self, log_probs):
        if self.beam_width:
            return beam_decode(log_probs, self.beam_width)
        return greedy_decode(log_probs)

    def predict(self, X):
        return [self.vocab_.decode(self.decode(lp).ids) for lp in self.predict_log_proba(X)]

    def score(self, X, y):
        y = check_transcripts(y, len(check_feature_list(X)))
        return 1.0 - corpus_wer(zip(y, self.predict(X)))
