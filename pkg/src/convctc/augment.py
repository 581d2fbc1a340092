"""Frequency and time masking of feature matrices (SpecAugment without warping)."""

from __future__ import annotations

from dataclasses import dataclass
from typing import NamedTuple

import numpy as np


@dataclass(frozen=True)
class AugmentPolicy:
    """Masking policy.

    ``max_time_fraction`` additionally caps the time-mask width at that
    fraction of the utterance's frame count; set it to ``None`` to use
    ``max_time_width`` alone.
    """

    n_freq_masks: int = 1
    max_freq_width: int = 8
    n_time_masks: int = 1
    max_time_width: int = 100
    fill: str = "zero"
    max_time_fraction: float | None = 0.1

    def __post_init__(self):
        for name in ("n_freq_masks", "max_freq_width", "n_time_masks", "max_time_width"):
            if getattr(self, name) < 0:
                raise ValueError(f"{name} must be >= 0")
        if self.fill not in ("zero", "mean", "per-utterance-mean"):
            raise ValueError(f"unknown fill {self.fill!r}")

    def time_width(self, n_frames: int) -> int:
        width = min(self.max_time_width, n_frames)
        if self.max_time_fraction is not None:
            width = min(width, int(self.max_time_fraction * n_frames))
        return width


class Mask(NamedTuple):
    axis: int  # 0 = mel rows, 1 = frames
    start: int
    width: int


def draw_masks(shape, policy: AugmentPolicy, rng: np.random.Generator) -> list:
    """Draw every mask for a matrix of ``shape``; frequency masks come first."""
    n_mels, n_frames = shape
    masks = []
    for axis, count, max_width, size in (
        (0, policy.n_freq_masks, min(policy.max_freq_width, n_mels), n_mels),
        (1, policy.n_time_masks, policy.time_width(n_frames), n_frames),
    ):
        for _ in range(count):
            width = int(rng.integers(0, max_width + 1))
            start = int(rng.integers(0, size - width + 1))
            masks.append(Mask(axis, start, width))
    return masks


def spec_augment(features, policy: AugmentPolicy, rng: np.random.Generator, return_masks=False):
    """Return a masked copy of ``features`` (array or FeatureMatrix).

    Unmasked entries are copied bit for bit. With ``return_masks`` the drawn
    masks are returned alongside the output.
    """
    values = getattr(features, "values", features)
    out = np.array(values, copy=True)
    masks = draw_masks(out.shape, policy, rng)
    fill = 0.0 if policy.fill == "zero" else float(values.mean())
    for mask in masks:
        if mask.axis == 0:
            out[mask.start: mask.start + mask.width, :] = fill
        else:
            out[:, mask.start: mask.start + mask.width] = fill
    if hasattr(features, "values"):
        out = type(features)(out, features.config)
    return (out, masks) if return_masks else out
