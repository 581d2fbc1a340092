"""Typed, flat ``section.key = value`` run configuration."""

from __future__ import annotations

from dataclasses import dataclass
from pathlib import Path

from .exceptions import ConfigError


@dataclass(frozen=True)
class Key:
    name: str
    kind: str  # int, float, str, bool, ints, floats, strs
    default: object
    help: str


KEYS = [
    Key("audio.sample_rate", "int", 16000, "working sample rate in Hz; inputs are resampled to it"),
    Key("audio.tone_duration", "float", 0.12, "synthetic tone length per token, seconds"),
    Key("audio.gap_duration", "float", 0.05, "silence between synthetic tokens, seconds"),
    Key("audio.speaker_offset_hz", "float", 6.0, "per-speaker tone shift, Hz"),
    Key("audio.noise_amplitude", "float", 0.01, "uniform noise amplitude added to synthetic audio"),
    Key("audio.amplitude", "float", 0.5, "synthetic tone amplitude"),
    Key("features.win_length", "int", 400, "analysis window, samples"),
    Key("features.hop_length", "int", 160, "frame shift, samples"),
    Key("features.n_fft", "int", 512, "FFT size (power of two)"),
    Key("features.window", "str", "hann", "window: hann or rectangular"),
    Key("features.n_mels", "int", 64, "number of mel filters"),
    Key("features.f_min", "float", 0.0, "lowest filterbank frequency, Hz"),
    Key("features.f_max", "float", 8000.0, "highest filterbank frequency, Hz"),
    Key("features.log_epsilon", "float", 1e-10, "floor added before the log"),
    Key("augment.enabled", "bool", False, "apply frequency/time masking while training"),
    Key("augment.n_freq_masks", "int", 1, "frequency masks per utterance"),
    Key("augment.max_freq_width", "int", 8, "maximum frequency-mask width, mel rows"),
    Key("augment.n_time_masks", "int", 1, "time masks per utterance"),
    Key("augment.max_time_width", "int", 100, "maximum time-mask width, frames"),
    Key("augment.max_time_fraction", "float", 0.1, "time-mask width cap as a fraction of frames"),
    Key("augment.fill", "str", "zero", "masked value: zero or mean"),
    Key("model.arch", "str", "quartznet", "quartznet or jasper"),
    Key("model.n_blocks", "int", 4, "number of blocks B"),
    Key("model.repeat", "int", 1, "sub-blocks per block R"),
    Key("model.channels", "int", 32, "block channels"),
    Key("model.kernels", "ints", (11, 13, 15, 17), "block kernel widths (first B are used)"),
    Key("model.dropout", "float", 0.0, "dropout rate in every unit"),
    Key("model.blank_bias", "float", 0.0, "initial output bias of the blank symbol"),
    Key("optim.learning_rate", "float", 0.001, "NovoGrad learning rate"),
    Key("optim.weight_decay", "float", 0.001, "weight decay on convolution weights"),
    Key("optim.beta1", "float", 0.95, "first-moment decay"),
    Key("optim.beta2", "float", 0.5, "second-moment decay"),
    Key("optim.epsilon", "float", 1e-8, "denominator floor"),
    Key("optim.epochs", "int", 5, "training epochs"),
    Key("optim.batch_size", "int", 8, "utterances per update"),
    Key("data.unit", "str", "char", "output unit: char or word"),
    Key("data.n_utterances", "int", 50, "synthetic utterances to generate"),
    Key("data.n_speakers", "int", 10, "synthetic speakers"),
    Key("data.min_tokens", "int", 2, "fewest tokens per synthetic utterance"),
    Key("data.max_tokens", "int", 4, "most tokens per synthetic utterance"),
    Key("data.vocabulary", "strs", ("a", "b", "c", "d", "e"), "synthetic word list"),
    Key("data.tone_base_hz", "float", 400.0, "tone of the first synthetic word, Hz"),
    Key("data.tone_step_hz", "float", 300.0, "tone spacing between synthetic words, Hz"),
    Key("data.fractions", "floats", (0.6, 0.2, 0.2), "train/dev/test speaker fractions"),
]
KEYS_BY_NAME = {k.name: k for k in KEYS}


def _parse(key: Key, raw):
    if not isinstance(raw, str):
        value = raw
    else:
        raw = raw.strip()
        try:
            if key.kind == "int":
                value = int(raw)
            elif key.kind == "float":
                value = float(raw)
            elif key.kind == "bool":
                low = raw.lower()
                if low not in ("true", "false", "1", "0", "yes", "no"):
                    raise ValueError(raw)
                value = low in ("true", "1", "yes")
            elif key.kind == "str":
                value = raw
            else:
                conv = {"ints": int, "floats": float, "strs": str}[key.kind]
                value = tuple(conv(p.strip()) for p in raw.split(",") if p.strip())
        except ValueError as exc:
            raise ConfigError(f"{key.name}: cannot parse {raw!r} as {key.kind}") from exc
    if key.kind in ("ints", "floats", "strs"):
        value = tuple(value)
    return value


def _format(value) -> str:
    if isinstance(value, bool):
        return "true" if value else "false"
    if isinstance(value, tuple):
        return ",".join(_format(v) for v in value)
    return repr(value) if isinstance(value, float) else str(value)


class RunConfig:
    """Every pipeline setting, defaulted and typed; unknown keys are rejected."""

    def __init__(self, overrides=None):
        self.values = {k.name: k.default for k in KEYS}
        if overrides:
            self.update(overrides)

    def update(self, overrides):
        for name, raw in dict(overrides).items():
            if name not in KEYS_BY_NAME:
                raise ConfigError(f"unknown config key {name!r}")
            self.values[name] = _parse(KEYS_BY_NAME[name], raw)
        return self

    @staticmethod
    def parse_text(text: str, source="<config>") -> dict:
        out = {}
        for lineno, line in enumerate(text.splitlines(), start=1):
            line = line.split("#", 1)[0].strip()
            if not line:
                continue
            if "=" not in line:
                raise ConfigError(f"{source}:{lineno}: expected 'section.key = value'")
            name, raw = (p.strip() for p in line.split("=", 1))
            out[name] = raw
        return out

    @classmethod
    def from_file(cls, path, overrides=None):
        values = cls.parse_text(Path(path).read_text(encoding="utf-8"), str(path))
        config = cls(values)
        if overrides:
            config.update(overrides)
        return config

    def __getitem__(self, name):
        return self.values[name]

    def section(self, prefix: str) -> dict:
        return {k: v for k, v in self.values.items() if k.startswith(prefix + ".")}

    def to_text(self) -> str:
        return "".join(f"{k} = {_format(v)}\n" for k, v in self.values.items())

    def __eq__(self, other):
        return isinstance(other, RunConfig) and self.values == other.values


def describe_keys() -> str:
    """One line per key with its default, for ``--help``."""
    width = max(len(k.name) for k in KEYS)
    return "\n".join(
        f"  {k.name:<{width}}  default {_format(k.default)!s:<12} {k.help}" for k in KEYS
    )
