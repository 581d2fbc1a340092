"""Manifests, transcript normalization, vocabularies and speaker-disjoint splits."""

from __future__ import annotations

import json
import re
import warnings
from dataclasses import asdict, dataclass
from pathlib import Path

import numpy as np

from .exceptions import DataError

GENDERS = ("m", "f", "unknown")
MANIFEST_KEYS = ("audio_filepath", "duration", "text", "speaker", "gender")

_WS = re.compile(r"\s+")
_DISALLOWED = re.compile(r"[^a-z' ]")


@dataclass(frozen=True)
class ManifestEntry:
    audio_filepath: str
    duration: float
    text: str
    speaker: str
    gender: str = "unknown"

    def __post_init__(self):
        if not self.duration > 0:
            raise DataError(f"duration must be positive, got {self.duration}")
        if self.gender not in GENDERS:
            raise DataError(f"gender must be one of {GENDERS}, got {self.gender!r}")

    def resolve(self, base_dir) -> Path:
        """Audio path, with relative paths taken relative to ``base_dir``."""
        path = Path(self.audio_filepath)
        return path if path.is_absolute() else Path(base_dir) / path


def load_manifest(path) -> list:
    """Entries in file order; blank lines are skipped."""
    return [e for _, e in load_manifest_lines(path)]


def load_manifest_lines(path) -> list:
    """Like :func:`load_manifest` but yields ``(line_number, entry)`` pairs."""
    entries = []
    with open(path, encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, start=1):
            if not line.strip():
                continue
            try:
                obj = json.loads(line)
            except json.JSONDecodeError as exc:
                raise DataError(f"{path}, line {lineno}: malformed JSON ({exc.msg})") from exc
            if not isinstance(obj, dict):
                raise DataError(f"{path}, line {lineno}: expected a JSON object")
            missing = [k for k in MANIFEST_KEYS if k not in obj]
            if missing:
                raise DataError(f"{path}, line {lineno}: missing key {missing[0]!r}")
            try:
                entry = ManifestEntry(
                    audio_filepath=str(obj["audio_filepath"]),
                    duration=float(obj["duration"]),
                    text=str(obj["text"]),
                    speaker=str(obj["speaker"]),
                    gender=str(obj["gender"]),
                )
            except (DataError, TypeError, ValueError) as exc:
                raise DataError(f"{path}, line {lineno}: {exc}") from exc
            entries.append((lineno, entry))
    return entries


def save_manifest(entries, path) -> None:
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        for entry in entries:
            fh.write(json.dumps(asdict(entry), ensure_ascii=False) + "\n")


def normalize_text(text: str) -> str:
    """Lowercase, keep only letters, apostrophes and single spaces."""
    out = _WS.sub(" ", text.lower())
    out = _DISALLOWED.sub("", out)
    out = _WS.sub(" ", out).strip()
    if not out:
        raise DataError(f"transcript {text!r} is empty after normalization")
    return out


@dataclass(frozen=True)
class Vocabulary:
    """Sorted output units; the CTC blank sits at index ``len(tokens)``."""

    unit: str
    tokens: tuple

    def __post_init__(self):
        if self.unit not in ("char", "word"):
            raise ValueError(f"unit must be 'char' or 'word', got {self.unit!r}")
        tokens = tuple(self.tokens)
        if list(tokens) != sorted(set(tokens)):
            raise ValueError("vocabulary tokens must be sorted and unique")
        object.__setattr__(self, "tokens", tokens)

    def __len__(self):
        return len(self.tokens)

    @property
    def blank(self) -> int:
        return len(self.tokens)

    def split(self, text: str) -> list:
        return list(text) if self.unit == "char" else text.split(" ")

    def encode(self, text: str) -> np.ndarray:
        index = {tok: i for i, tok in enumerate(self.tokens)}
        ids = []
        for unit in self.split(text):
            if unit not in index:
                raise DataError(f"out-of-vocabulary {self.unit} {unit!r}")
            ids.append(index[unit])
        return np.asarray(ids, dtype=np.int64)

    def decode(self, ids) -> str:
        sep = "" if self.unit == "char" else " "
        return sep.join(self.tokens[int(i)] for i in ids)


def build_vocab(entries, unit: str = "char") -> Vocabulary:
    if not entries:
        raise DataError("cannot build a vocabulary from an empty corpus")
    units = set()
    for entry in entries:
        text = normalize_text(entry.text if isinstance(entry, ManifestEntry) else entry)
        units.update(text if unit == "char" else text.split(" "))
    return Vocabulary(unit, tuple(sorted(units)))


def encode_transcript(text: str, vocab: Vocabulary) -> np.ndarray:
    return vocab.encode(text)


def decode_ids(ids, vocab: Vocabulary) -> str:
    return vocab.decode(ids)


def split_by_speaker(entries, fractions=(0.6, 0.2, 0.2), seed: int = 0):
    """Partition ``entries`` into (train, dev, test) with no shared speaker.

    Speakers are shuffled with ``seed`` and handed out one at a time to the
    split furthest below its target share. A split that would otherwise end
    up empty is served first once the remaining speakers run short.
    """
    fractions = np.asarray(fractions, dtype=np.float64)
    if np.any(fractions <= 0) or abs(fractions.sum() - 1.0) > 1e-9:
        raise ValueError(f"fractions must be positive and sum to 1, got {tuple(fractions)}")
    speakers = sorted({e.speaker for e in entries})
    n_splits = len(fractions)
    if len(speakers) < n_splits:
        raise DataError(f"need at least {n_splits} speakers, got {len(speakers)}")
    order = np.random.default_rng(seed).permutation(len(speakers))
    targets = fractions * len(speakers)
    counts = np.zeros(n_splits, dtype=np.int64)
    assignment = {}
    for i, idx in enumerate(order):
        remaining = len(speakers) - i
        deficit = targets - counts
        empty = np.flatnonzero(counts == 0)
        if len(empty) >= remaining:
            choice = int(empty[np.argmax(deficit[empty])])
        else:
            choice = int(np.argmax(deficit))
        assignment[speakers[idx]] = choice
        counts[choice] += 1

    splits = [[] for _ in range(n_splits)]
    for entry in entries:
        splits[assignment[entry.speaker]].append(entry)
    for i, split in enumerate(splits):
        genders = {e.gender for e in split}
        if len(genders) == 1:
            warnings.warn(f"split {i} contains a single gender ({genders.pop()})", stacklevel=2)
    return tuple(splits)
