"""Jasper- and QuartzNet-style convolutional acoustic models.

A model is a prologue unit, ``B`` blocks of ``R`` sub-blocks, and an epilogue
ending in a width-1 projection onto the vocabulary plus blank. Every unit is
conv -> batch norm -> ReLU -> dropout. Each block adds a residual from its
input before the final ReLU. QuartzNet swaps the in-block convolutions for
time-channel separable ones.
"""

from __future__ import annotations

import struct
from dataclasses import dataclass, field

import numpy as np

from . import layers as L
from .exceptions import DataError, NumericalError

CKPT_MAGIC = b"CKPT1"
ARCHS = ("jasper", "quartznet")


@dataclass(frozen=True)
class ConvSpec:
    channels: int
    kernel: int
    stride: int = 1
    dilation: int = 1
    dropout: float = 0.0

    def __post_init__(self):
        if self.kernel < 1 or self.kernel % 2 == 0:
            raise ValueError(f"kernel width must be odd, got {self.kernel}")
        if self.channels < 1 or self.stride < 1 or self.dilation < 1:
            raise ValueError(f"invalid conv spec {self}")
        if not 0.0 <= self.dropout < 1.0:
            raise ValueError(f"dropout must be in [0, 1), got {self.dropout}")


@dataclass(frozen=True)
class ModelConfig:
    arch: str = "quartznet"
    n_mels: int = 64
    n_outputs: int = 7
    prologue: ConvSpec = ConvSpec(32, 11, stride=2)
    blocks: tuple = field(
        default=(ConvSpec(32, 11), ConvSpec(32, 13), ConvSpec(32, 15), ConvSpec(32, 17))
    )
    repeat: int = 1
    epilogue: tuple = field(default=(ConvSpec(64, 29, dilation=2), ConvSpec(64, 1)))

    def __post_init__(self):
        if self.arch not in ARCHS:
            raise ValueError(f"arch must be one of {ARCHS}, got {self.arch!r}")
        if not self.blocks or self.repeat < 1:
            raise ValueError("need B >= 1 blocks and R >= 1 sub-blocks")
        if self.n_outputs < 2:
            raise ValueError("need at least one label plus the blank")
        object.__setattr__(self, "blocks", tuple(self.blocks))
        object.__setattr__(self, "epilogue", tuple(self.epilogue))

    @property
    def n_blocks(self) -> int:
        return len(self.blocks)

    @property
    def total_stride(self) -> int:
        stride = self.prologue.stride
        for spec in self.blocks + self.epilogue:
            stride *= spec.stride
        return stride


def desk_config(arch="quartznet", n_mels=64, n_outputs=7, n_blocks=4, repeat=1,
                channels=32, kernels=(11, 13, 15, 17), dropout=0.0) -> ModelConfig:
    """Miniature default topology; ``kernels`` is cut to ``n_blocks`` entries."""
    kernels = tuple(kernels)
    if len(kernels) < n_blocks:
        raise ValueError(f"need {n_blocks} kernel widths, got {len(kernels)}")
    return ModelConfig(
        arch=arch,
        n_mels=n_mels,
        n_outputs=n_outputs,
        prologue=ConvSpec(channels, 11, stride=2, dropout=dropout),
        blocks=tuple(ConvSpec(channels, k, dropout=dropout) for k in kernels[:n_blocks]),
        repeat=repeat,
        epilogue=(ConvSpec(2 * channels, 29, dilation=2, dropout=dropout),
                  ConvSpec(2 * channels, 1, dropout=dropout)),
    )


def _units(config: ModelConfig):
    """Static plan: (kind, name, in_ch, spec, separable) per unit, in order."""
    plan = [("unit", "prologue", config.n_mels, config.prologue, False)]
    ch = config.prologue.channels
    separable = config.arch == "quartznet"
    for b, spec in enumerate(config.blocks):
        if spec.channels != ch or spec.stride != 1:
            res = ConvSpec(spec.channels, 1, stride=spec.stride)
            plan.append(("residual", f"block{b}.res", ch, res, False))
        else:
            plan.append(("residual", f"block{b}.res", ch, None, False))
        for r in range(config.repeat):
            sub = spec if r == 0 else ConvSpec(spec.channels, spec.kernel, 1, spec.dilation, spec.dropout)
            plan.append(("unit", f"block{b}.sub{r}", ch, sub, separable))
            ch = spec.channels
        plan.append(("end", f"block{b}", ch, None, False))
    for i, spec in enumerate(config.epilogue):
        plan.append(("unit", f"epilogue{i}", ch, spec, False))
        ch = spec.channels
    plan.append(("output", "output", ch, ConvSpec(config.n_outputs, 1), False))
    return plan


def parameter_shapes(config: ModelConfig) -> dict:
    """Learnable tensor shapes keyed by name, in a fixed order."""
    shapes = {}
    for kind, name, in_ch, spec, separable in _units(config):
        if spec is None or kind == "end":
            continue
        if kind == "output":
            shapes["output.weight"] = (spec.channels, in_ch, 1)
            shapes["output.bias"] = (spec.channels,)
            continue
        if separable:
            shapes[f"{name}.dw.weight"] = (in_ch, 1, spec.kernel)
            shapes[f"{name}.pw.weight"] = (spec.channels, in_ch, 1)
        else:
            shapes[f"{name}.conv.weight"] = (spec.channels, in_ch, spec.kernel)
        shapes[f"{name}.bn.gain"] = (spec.channels,)
        shapes[f"{name}.bn.shift"] = (spec.channels,)
    return shapes


def buffer_shapes(config: ModelConfig) -> dict:
    shapes = {}
    for name, shape in parameter_shapes(config).items():
        if name.endswith(".bn.gain"):
            base = name[: -len("gain")]
            shapes[base + "running_mean"] = shape
            shapes[base + "running_var"] = shape
    return shapes


def conv_param_count(in_ch, out_ch, kernel, bias=False, separable=False) -> int:
    if separable:
        count = in_ch * kernel + out_ch * in_ch
    else:
        count = out_ch * in_ch * kernel
    return count + (out_ch if bias else 0)


def param_count(config: ModelConfig) -> int:
    """Number of learnable scalars (batch-norm running statistics excluded)."""
    return int(sum(np.prod(s) for s in parameter_shapes(config).values()))


def init_params(config: ModelConfig, seed=0, dtype=np.float64):
    """He-normal conv weights scaled by fan-in; zero biases and shifts, unit gains."""
    rng = np.random.default_rng(seed)
    params = {}
    for name, shape in parameter_shapes(config).items():
        if name.endswith("weight"):
            fan_in = shape[1] * shape[2]
            params[name] = rng.normal(0.0, np.sqrt(2.0 / fan_in), shape).astype(dtype)
        elif name.endswith("gain"):
            params[name] = np.ones(shape, dtype=dtype)
        else:
            params[name] = np.zeros(shape, dtype=dtype)
    buffers = {
        name: (np.zeros(shape, dtype) if name.endswith("mean") else np.ones(shape, dtype))
        for name, shape in buffer_shapes(config).items()
    }
    return params, buffers


def check_params(config: ModelConfig, params, buffers=None):
    expected = parameter_shapes(config)
    if set(params) != set(expected):
        missing = sorted(set(expected) - set(params))
        extra = sorted(set(params) - set(expected))
        raise DataError(f"parameters do not match config (missing {missing}, unexpected {extra})")
    for name, shape in expected.items():
        if tuple(params[name].shape) != tuple(shape):
            raise DataError(f"{name}: shape {params[name].shape} != expected {shape}")
    if buffers is not None:
        for name, shape in buffer_shapes(config).items():
            if name not in buffers or tuple(buffers[name].shape) != tuple(shape):
                raise DataError(f"batch-norm buffer {name} missing or mis-shaped")


def _seq_mask(lengths, n_frames, dtype):
    return (np.arange(n_frames)[None, :] < np.asarray(lengths)[:, None]).astype(dtype)[:, None, :]


def _conv(params, name, x, spec, separable, bias=None):
    if separable:
        return L.separable_conv1d_forward(
            x, params[f"{name}.dw.weight"], params[f"{name}.pw.weight"], bias,
            spec.stride, spec.dilation, return_cache=True,
        )
    return L.conv1d_forward(
        x, params[f"{name}.conv.weight"], bias, spec.stride, spec.dilation, return_cache=True
    )


def _conv_bn(params, buffers, name, x, spec, separable, mode, mask):
    z, ccache = _conv(params, name, x, spec, separable)
    u, bcache = L.batchnorm_forward(
        z, params[f"{name}.bn.gain"], params[f"{name}.bn.shift"],
        buffers[f"{name}.bn.running_mean"], buffers[f"{name}.bn.running_var"],
        mode=mode, mask=mask,
    )
    return u, (ccache, bcache)


def _conv_bn_backward(du, cache, name, separable, grads):
    ccache, bcache = cache
    dz, grads[f"{name}.bn.gain"], grads[f"{name}.bn.shift"] = L.batchnorm_backward(du, bcache)
    if separable:
        dx, grads[f"{name}.dw.weight"], grads[f"{name}.pw.weight"], _ = \
            L.separable_conv1d_backward(dz, ccache)
    else:
        dx, grads[f"{name}.conv.weight"], _ = L.conv1d_backward(dz, ccache)
    return dx


def model_forward(config, params, buffers, features, lengths=None, mode="eval", rng=None):
    """Run the network on a batch.

    ``features`` is (batch, n_mels, frames) or a single (n_mels, frames)
    matrix; ``lengths`` gives the valid frames per item (padding is masked
    out of every layer). Returns ``(logits, out_lengths, cache)`` with
    logits laid out (batch, frames_out, n_outputs).
    """
    x = np.asarray(features, dtype=next(iter(params.values())).dtype)
    if x.ndim == 2:
        x = x[None]
    if x.shape[1] != config.n_mels:
        raise DataError(f"expected {config.n_mels} feature rows, got {x.shape[1]}")
    lengths = np.full(x.shape[0], x.shape[2]) if lengths is None else np.asarray(lengths)
    mask = _seq_mask(lengths, x.shape[2], x.dtype)
    x = x * mask
    caches = []
    residual = None
    for kind, name, _, spec, separable in _units(config):
        if kind == "residual":
            if spec is None:
                residual, rcache = x, None
            else:
                rmask = _seq_mask(L.out_length(lengths, spec.stride), L.out_length(x.shape[2], spec.stride), x.dtype)
                residual, rcache = _conv_bn(params, buffers, name, x, spec, False, mode, rmask)
            caches.append(rcache)
            continue
        if kind == "end":
            residual = None
            caches.append(None)
            continue
        if kind == "output":
            logits, ocache = L.conv1d_forward(
                x, params["output.weight"], params["output.bias"], return_cache=True
            )
            caches.append(ocache)
            break
        lengths = L.out_length(lengths, spec.stride)
        mask = _seq_mask(lengths, L.out_length(x.shape[2], spec.stride), x.dtype)
        u, cb = _conv_bn(params, buffers, name, x, spec, separable, mode, mask)
        last_sub = name.endswith(f"sub{config.repeat - 1}")
        if residual is not None and last_sub:
            u = u + residual
        v = L.relu_forward(u)
        w, keep = L.dropout_forward(v, spec.dropout, rng, mode)
        x = w * mask
        caches.append((cb, u, keep, mask, residual is not None and last_sub))
    logits = logits.transpose(0, 2, 1)
    if not np.all(np.isfinite(logits)):
        raise NumericalError("model produced non-finite logits")
    return logits, lengths, {"caches": caches, "mode": mode}


def model_backward(config, params, cache, dlogits):
    """Gradients of a scalar loss w.r.t. every learnable tensor.

    ``dlogits`` matches the logits layout (batch, frames_out, n_outputs).
    """
    if cache is None or "caches" not in cache:
        raise ValueError("model_backward needs the cache of a forward pass")
    caches = cache["caches"]
    grads = {}
    dx = np.ascontiguousarray(np.asarray(dlogits).transpose(0, 2, 1))
    plan = _units(config)
    dres = None
    for (kind, name, _, spec, separable), c in zip(reversed(plan), reversed(caches)):
        if kind == "output":
            dx, grads["output.weight"], grads["output.bias"] = L.conv1d_backward(dx, c)
        elif kind == "end":
            dres = None
        elif kind == "residual":
            if spec is None:
                dx = dx + dres
            else:
                dx = dx + _conv_bn_backward(dres, c, name, False, grads)
            dres = None
        else:
            cb, u, keep, mask, has_res = c
            dv = L.dropout_backward(dx * mask, keep)
            du = L.relu_backward(dv, u)
            if has_res:
                dres = du
            dx = _conv_bn_backward(du, cb, name, separable, grads)
    return {name: grads[name] for name in parameter_shapes(config)}


class AcousticModel:
    """Config, learnable parameters and batch-norm buffers bundled together."""

    def __init__(self, config: ModelConfig, params=None, buffers=None, seed=0, dtype=np.float64):
        self.config = config
        if params is None:
            params, init_buffers = init_params(config, seed, dtype)
            buffers = init_buffers if buffers is None else buffers
        elif buffers is None:
            buffers = init_params(config, seed, dtype)[1]
        check_params(config, params, buffers)
        self.params = params
        self.buffers = buffers

    def forward(self, features, lengths=None, mode="eval", rng=None):
        return model_forward(self.config, self.params, self.buffers, features, lengths, mode, rng)

    def backward(self, cache, dlogits):
        return model_backward(self.config, self.params, cache, dlogits)

    def output_lengths(self, lengths):
        lengths = np.asarray(lengths)
        for spec in (self.config.prologue,) + self.config.blocks + self.config.epilogue:
            lengths = L.out_length(lengths, spec.stride)
        return lengths

    def param_count(self) -> int:
        return param_count(self.config)


def config_to_text(config: ModelConfig) -> str:
    def spec_text(s):
        return f"{s.channels},{s.kernel},{s.stride},{s.dilation},{s.dropout!r}"

    lines = [
        f"model.arch = {config.arch}",
        f"model.n_mels = {config.n_mels}",
        f"model.n_outputs = {config.n_outputs}",
        f"model.repeat = {config.repeat}",
        f"model.prologue = {spec_text(config.prologue)}",
        "model.blocks = " + ";".join(spec_text(s) for s in config.blocks),
        "model.epilogue = " + ";".join(spec_text(s) for s in config.epilogue),
    ]
    return "\n".join(lines) + "\n"


def config_from_text(text: str) -> ModelConfig:
    kv = {}
    for line in text.splitlines():
        if "=" in line:
            key, value = line.split("=", 1)
            kv[key.strip()] = value.strip()

    def spec(s):
        c, k, st, d, p = s.split(",")
        return ConvSpec(int(c), int(k), int(st), int(d), float(p))

    try:
        return ModelConfig(
            arch=kv["model.arch"],
            n_mels=int(kv["model.n_mels"]),
            n_outputs=int(kv["model.n_outputs"]),
            prologue=spec(kv["model.prologue"]),
            blocks=tuple(spec(s) for s in kv["model.blocks"].split(";")),
            repeat=int(kv["model.repeat"]),
            epilogue=tuple(spec(s) for s in kv["model.epilogue"].split(";") if s),
        )
    except (KeyError, ValueError) as exc:
        raise DataError(f"invalid model description in checkpoint: {exc}") from exc


def save_checkpoint(path, model: AcousticModel, extra_text: str = "") -> None:
    """Binary layout: magic, u32-length config text, tensor manifest, f64 data."""
    text = (config_to_text(model.config) + extra_text).encode("utf-8")
    tensors = list(model.params.items()) + list(model.buffers.items())
    header = [CKPT_MAGIC, struct.pack("<I", len(text)), text, struct.pack("<I", len(tensors))]
    for name, arr in tensors:
        raw = name.encode("utf-8")
        header.append(struct.pack("<H", len(raw)) + raw + struct.pack("<B", arr.ndim))
        header.append(struct.pack(f"<{arr.ndim}I", *arr.shape))
    body = [np.ascontiguousarray(arr, dtype="<f8").tobytes() for _, arr in tensors]
    with open(path, "wb") as fh:
        fh.write(b"".join(header + body))


def load_checkpoint(path):
    """Returns ``(model, text)`` where ``text`` is the stored config block."""
    with open(path, "rb") as fh:
        blob = fh.read()
    if blob[: len(CKPT_MAGIC)] != CKPT_MAGIC:
        raise DataError(f"{path}: not a CKPT1 checkpoint")
    try:
        pos = len(CKPT_MAGIC)
        (n_text,) = struct.unpack_from("<I", blob, pos)
        pos += 4
        text = blob[pos: pos + n_text].decode("utf-8")
        pos += n_text
        (n_tensors,) = struct.unpack_from("<I", blob, pos)
        pos += 4
        manifest = []
        for _ in range(n_tensors):
            (n_name,) = struct.unpack_from("<H", blob, pos)
            pos += 2
            name = blob[pos: pos + n_name].decode("utf-8")
            pos += n_name
            (ndim,) = struct.unpack_from("<B", blob, pos)
            pos += 1
            shape = struct.unpack_from(f"<{ndim}I", blob, pos)
            pos += 4 * ndim
            manifest.append((name, shape))
        tensors = {}
        for name, shape in manifest:
            size = int(np.prod(shape)) * 8
            if pos + size > len(blob):
                raise DataError(f"{path}: truncated tensor data")
            tensors[name] = np.frombuffer(blob, "<f8", int(np.prod(shape)), pos).reshape(shape).astype(np.float64)
            pos += size
    except struct.error as exc:
        raise DataError(f"{path}: corrupt checkpoint ({exc})") from exc
    config = config_from_text(text)
    names = parameter_shapes(config)
    params = {k: v for k, v in tensors.items() if k in names}
    buffers = {k: v for k, v in tensors.items() if k not in names}
    return AcousticModel(config, params, buffers), text
