"""Input checks shared by the estimator classes."""

from __future__ import annotations

import numpy as np
from sklearn.utils.validation import check_array

from .audio_io import AudioClip


def check_clips(X, sample_rate=None):
    """Coerce a waveform, an AudioClip, or a list of either to a list of clips."""
    if isinstance(X, AudioClip) or (isinstance(X, np.ndarray) and X.ndim == 1):
        X = [X]
    clips = []
    for item in X:
        if not isinstance(item, AudioClip):
            samples = check_array(np.asarray(item, dtype=np.float64).reshape(1, -1))[0]
            item = AudioClip(samples, sample_rate)
        clips.append(item)
    if not clips:
        raise ValueError("expected at least one waveform")
    return clips


def check_feature_list(X, n_mels=None):
    """Coerce features to a list of finite float64 (n_mels, frames) matrices."""
    if isinstance(X, np.ndarray) and X.ndim == 2:
        X = [X]
    out = []
    for i, item in enumerate(X):
        values = getattr(item, "values", item)
        values = check_array(values, dtype=np.float64, ensure_min_features=1)
        if n_mels is not None and values.shape[0] != n_mels:
            raise ValueError(
                f"feature matrix {i} has {values.shape[0]} rows, expected {n_mels}"
            )
        out.append(values)
    if not out:
        raise ValueError("expected at least one feature matrix")
    return out


def check_transcripts(y, n_samples):
    y = [str(t) for t in y]
    if len(y) != n_samples:
        raise ValueError(f"got {n_samples} inputs but {len(y)} transcripts")
    return y
