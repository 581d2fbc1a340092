"""Waveform I/O, resampling and a deterministic synthetic corpus generator."""

from __future__ import annotations

import os
import wave
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .exceptions import AudioFormatError, DataError

SAMPLE_RATE = 16000
PCM_SCALE = 32768.0


@dataclass(frozen=True)
class AudioClip:
    """Mono waveform with samples in [-1, 1]."""

    samples: np.ndarray
    sample_rate: int = SAMPLE_RATE

    def __post_init__(self):
        samples = np.asarray(self.samples, dtype=np.float64)
        if samples.ndim != 1:
            raise DataError(f"audio must be mono (1-D), got shape {samples.shape}")
        if int(self.sample_rate) <= 0:
            raise DataError(f"sample_rate must be positive, got {self.sample_rate}")
        if not np.all(np.isfinite(samples)):
            raise DataError("audio contains non-finite samples")
        if samples.size and np.max(np.abs(samples)) > 1.0:
            raise DataError("audio samples must lie in [-1, 1]")
        object.__setattr__(self, "samples", samples)
        object.__setattr__(self, "sample_rate", int(self.sample_rate))

    def __len__(self):
        return self.samples.shape[0]

    @property
    def duration(self) -> float:
        return len(self) / self.sample_rate


def load_wav(path) -> AudioClip:
    """Read a PCM 16-bit little-endian mono WAV file."""
    path = Path(path)
    if not path.is_file():
        raise FileNotFoundError(f"no such audio file: {path}")
    try:
        with wave.open(str(path), "rb") as fh:
            n_channels = fh.getnchannels()
            width = fh.getsampwidth()
            rate = fh.getframerate()
            n_frames = fh.getnframes()
            data = fh.readframes(n_frames)
    except (wave.Error, EOFError) as exc:
        raise AudioFormatError(f"{path}: not a PCM WAV file ({exc})") from exc
    if n_channels != 1:
        raise AudioFormatError(f"{path}: expected mono audio, got {n_channels} channels")
    if width != 2:
        raise AudioFormatError(f"{path}: expected 16-bit samples, got {8 * width}-bit")
    if len(data) < 2 * n_frames:
        raise AudioFormatError(
            f"{path}: truncated data chunk ({len(data) // 2} of {n_frames} samples)"
        )
    if n_frames == 0:
        raise AudioFormatError(f"{path}: empty audio")
    pcm = np.frombuffer(data, dtype="<i2").astype(np.float64)
    return AudioClip(pcm / PCM_SCALE, rate)


def save_wav(clip: AudioClip, path) -> None:
    """Write PCM16 mono; +1.0 saturates to 32767."""
    scaled = np.rint(np.clip(clip.samples, -1.0, 1.0) * PCM_SCALE)
    pcm = np.clip(scaled, -32768, 32767).astype("<i2")
    with wave.open(str(path), "wb") as fh:
        fh.setnchannels(1)
        fh.setsampwidth(2)
        fh.setframerate(clip.sample_rate)
        fh.writeframes(pcm.tobytes())


def resample_linear(clip: AudioClip, target_rate: int) -> AudioClip:
    """Resample by linear interpolation (no anti-aliasing filter)."""
    if target_rate <= 0:
        raise ValueError(f"target_rate must be positive, got {target_rate}")
    if target_rate == clip.sample_rate:
        return clip
    n_in = len(clip)
    n_out = int(round(n_in * target_rate / clip.sample_rate))
    positions = np.arange(n_out) * (clip.sample_rate / target_rate)
    out = np.interp(positions, np.arange(n_in), clip.samples)
    return AudioClip(out, target_rate)


def default_tone_map(vocabulary, base_hz=400.0, step_hz=300.0, duration=0.12):
    """Assign each token its own tone, spaced ``step_hz`` apart."""
    return {tok: (base_hz + i * step_hz, duration) for i, tok in enumerate(vocabulary)}


@dataclass
class SynthSpec:
    """Recipe for a synthetic tone corpus standing in for recorded speech.

    Each token of a transcript is rendered as a sine tone, tokens are
    separated by silence, and each synthetic speaker shifts every tone by a
    fixed frequency offset.
    """

    n_utterances: int = 50
    tokens_per_utterance: tuple = (2, 4)
    vocabulary: tuple = ("a", "b", "c", "d", "e")
    tone_map: dict = None
    noise_amplitude: float = 0.01
    seed: int = 0
    n_speakers: int = 10
    speaker_offset_hz: float = 6.0
    gap_duration: float = 0.05
    amplitude: float = 0.5
    sample_rate: int = SAMPLE_RATE
    min_separation_hz: float = 2 * SAMPLE_RATE / 512
    genders: tuple = field(default=("m", "f"))

    def __post_init__(self):
        self.vocabulary = tuple(self.vocabulary)
        if self.tone_map is None:
            self.tone_map = default_tone_map(self.vocabulary)
        self.validate()

    def validate(self):
        if self.n_utterances < 0:
            raise ValueError("n_utterances must be >= 0")
        lo, hi = self.tokens_per_utterance
        if not 1 <= lo <= hi:
            raise ValueError(f"bad tokens_per_utterance range {self.tokens_per_utterance}")
        if self.noise_amplitude < 0:
            raise ValueError("noise_amplitude must be >= 0")
        if self.n_speakers < 1:
            raise ValueError("n_speakers must be >= 1")
        missing = [t for t in self.vocabulary if t not in self.tone_map]
        if missing:
            raise ValueError(f"tokens without a tone: {missing}")
        freqs = sorted(self.tone_map[t][0] for t in self.vocabulary)
        if any(b - a < self.min_separation_hz for a, b in zip(freqs, freqs[1:])):
            raise ValueError(
                f"tone frequencies must be at least {self.min_separation_hz:g} Hz apart"
            )
        top = freqs[-1] + self.speaker_offset_hz * self.n_speakers
        if top >= self.sample_rate / 2:
            raise ValueError("tone frequencies exceed the Nyquist limit")

    def speaker_offset(self, speaker: int) -> float:
        return self.speaker_offset_hz * (speaker - (self.n_speakers - 1) / 2)


def _tone(freq, duration, rate, amplitude):
    n = int(round(duration * rate))
    t = np.arange(n) / rate
    ramp = min(n // 2, int(0.005 * rate))
    env = np.ones(n)
    if ramp:
        fade = 0.5 - 0.5 * np.cos(np.pi * np.arange(ramp) / ramp)
        env[:ramp] = fade
        env[n - ramp:] = fade[::-1]
    return amplitude * env * np.sin(2 * np.pi * freq * t)


def render_utterance(tokens, spec: SynthSpec, speaker: int, rng) -> AudioClip:
    rate = spec.sample_rate
    gap = np.zeros(int(round(spec.gap_duration * rate)))
    offset = spec.speaker_offset(speaker)
    pieces = [gap]
    for tok in tokens:
        freq, dur = spec.tone_map[tok]
        pieces.append(_tone(freq + offset, dur, rate, spec.amplitude))
        pieces.append(gap)
    signal = np.concatenate(pieces)
    if spec.noise_amplitude > 0:
        signal = signal + rng.uniform(-spec.noise_amplitude, spec.noise_amplitude, signal.size)
    return AudioClip(np.clip(signal, -1.0, 1.0), rate)


def synth_dataset(spec: SynthSpec, out_dir, manifest_name="manifest.jsonl"):
    """Write one WAV per utterance plus a JSON-Lines manifest.

    Audio paths in the manifest are relative to ``out_dir``. Returns the list
    of :class:`~convctc.dataset.ManifestEntry`.
    """
    from .dataset import ManifestEntry, save_manifest

    out_dir = Path(out_dir)
    entries = []
    if spec.n_utterances == 0:
        return entries
    os.makedirs(out_dir, exist_ok=True)
    rng = np.random.default_rng(spec.seed)
    lo, hi = spec.tokens_per_utterance
    for i in range(spec.n_utterances):
        n_tokens = int(rng.integers(lo, hi + 1))
        tokens = [spec.vocabulary[j] for j in rng.integers(0, len(spec.vocabulary), n_tokens)]
        speaker = i % spec.n_speakers
        clip = render_utterance(tokens, spec, speaker, rng)
        name = f"utt{i:05d}.wav"
        save_wav(clip, out_dir / name)
        entries.append(
            ManifestEntry(
                audio_filepath=name,
                duration=round(clip.duration, 6),
                text=" ".join(tokens),
                speaker=f"spk{speaker:02d}",
                gender=spec.genders[speaker % len(spec.genders)],
            )
        )
    save_manifest(entries, out_dir / manifest_name)
    return entries

