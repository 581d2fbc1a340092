"""NovoGrad optimizer and the epoch training loop."""

from __future__ import annotations

import logging
from dataclasses import dataclass, field

import numpy as np

from .augment import spec_augment
from .ctc import ctc_loss, greedy_decode, log_softmax, min_frames
from .exceptions import CTCInfeasibleError, NumericalError
from .metrics import corpus_wer

log = logging.getLogger(__name__)


@dataclass(frozen=True)
class OptHyper:
    learning_rate: float = 0.001
    weight_decay: float = 0.001
    beta1: float = 0.95
    beta2: float = 0.5
    epsilon: float = 1e-8

    def __post_init__(self):
        if not self.learning_rate >= 0:
            raise ValueError("learning_rate must be >= 0")
        if self.weight_decay < 0:
            raise ValueError("weight_decay must be >= 0")
        if not (0 <= self.beta1 < 1 and 0 <= self.beta2 < 1):
            raise ValueError("betas must lie in [0, 1)")
        if not self.epsilon > 0:
            raise ValueError("epsilon must be positive")


@dataclass
class OptState:
    """First moments per tensor, one scalar second moment per tensor."""

    m: dict = field(default_factory=dict)
    v: dict = field(default_factory=dict)
    step: int = 0


def decays(name: str) -> bool:
    """Weight decay applies to convolution weights only."""
    return name.endswith("weight")


def novograd_step(params, grads, state: OptState, hp: OptHyper, decay_filter=decays):
    """One in-place NovoGrad update of ``params``; returns ``(params, state)``."""
    if set(params) != set(grads):
        raise KeyError(
            f"gradient keys do not match parameters: {sorted(set(params) ^ set(grads))}"
        )
    if state.step and set(state.m) != set(params):
        raise KeyError("optimizer state keys do not match parameters")
    for name, g in grads.items():
        if g.shape != params[name].shape:
            raise ValueError(f"{name}: gradient shape {g.shape} != {params[name].shape}")
        if not np.all(np.isfinite(g)):
            raise NumericalError(f"non-finite gradient in {name}")
    first = state.step == 0
    for name, w in params.items():
        g = grads[name]
        sq = float(np.sum(g * g))
        v = sq if first else hp.beta2 * state.v[name] + (1.0 - hp.beta2) * sq
        update = g / (np.sqrt(v) + hp.epsilon)
        if hp.weight_decay and decay_filter(name):
            update = update + hp.weight_decay * w
        state.m[name] = update if first else hp.beta1 * state.m[name] + update
        state.v[name] = v
        w -= hp.learning_rate * state.m[name]
    state.step += 1
    return params, state


@dataclass
class Utterance:
    features: np.ndarray  # (n_mels, frames), normalized
    labels: np.ndarray
    text: str


@dataclass(frozen=True)
class LogRecord:
    epoch: int
    split: str
    loss: float
    wer: float


@dataclass
class TrainResult:
    params: dict
    records: list


def pad_batch(utterances):
    lengths = np.array([u.features.shape[1] for u in utterances])
    n_mels = utterances[0].features.shape[0]
    batch = np.zeros((len(utterances), n_mels, lengths.max()))
    for i, u in enumerate(utterances):
        batch[i, :, : lengths[i]] = u.features
    return batch, lengths


def check_feasible(model, utterances):
    out = model.output_lengths([u.features.shape[1] for u in utterances])
    for i, (u, n) in enumerate(zip(utterances, out)):
        need = min_frames(u.labels)
        if n < need:
            err = CTCInfeasibleError(
                f"utterance {i + 1} ({u.text!r}): {n} output frames but labels need {need}"
            )
            err.index = i
            raise err


def batch_loss(logits, out_lengths, utterances, decode_text=None):
    """Mean CTC loss over the batch and its gradient w.r.t. the logits.

    With ``decode_text`` also returns the (reference, greedy hypothesis)
    pairs of the batch.
    """
    dlogits = np.zeros_like(logits)
    total = 0.0
    pairs = []
    for i, u in enumerate(utterances):
        n = out_lengths[i]
        lp = log_softmax(logits[i, :n])
        loss, grad = ctc_loss(lp, u.labels)
        total += loss
        dlogits[i, :n] = grad
        if decode_text is not None:
            pairs.append((u.text, decode_text(greedy_decode(lp).ids)))
    n_items = len(utterances)
    if decode_text is None:
        return total / n_items, dlogits / n_items
    return total / n_items, dlogits / n_items, pairs


def evaluate(model, utterances, decode_text, batch_size=8):
    """Eval-mode mean CTC loss and pooled greedy WER."""
    losses, pairs = [], []
    for start in range(0, len(utterances), batch_size):
        chunk = utterances[start: start + batch_size]
        batch, lengths = pad_batch(chunk)
        logits, out_lengths, _ = model.forward(batch, lengths, mode="eval")
        for i, u in enumerate(chunk):
            lp = log_softmax(logits[i, : out_lengths[i]])
            losses.append(ctc_loss(lp, u.labels)[0])
            pairs.append((u.text, decode_text(greedy_decode(lp).ids)))
    return float(np.mean(losses)), corpus_wer(pairs)


def train_loop(
    model,
    train,
    hp: OptHyper,
    epochs: int,
    rng: np.random.Generator,
    *,
    decode_text,
    dev=None,
    batch_size: int = 8,
    augment=None,
    log_sink=None,
    on_epoch_end=None,
    stop_wer: float | None = None,
    min_epochs: int = 0,
):
    """Train ``model`` in place with CTC loss and NovoGrad.

    Every epoch shuffles ``train`` with ``rng``, applies ``augment`` (an
    AugmentPolicy) to each training utterance on the fly, and appends one
    record per split to ``log_sink``. Train loss and WER come from the
    train-mode forward passes of the epoch; dev figures from an eval-mode
    pass after it. ``decode_text`` maps label ids back
    to a transcript for WER scoring. Training stops early once the train WER
    reaches ``stop_wer`` (after at least ``min_epochs`` epochs).
    """
    check_feasible(model, train)
    if dev:
        check_feasible(model, dev)
    records = []
    state = OptState()
    for epoch in range(1, epochs + 1):
        order = rng.permutation(len(train))
        losses, pairs = [], []
        for start in range(0, len(order), batch_size):
            chunk = [train[i] for i in order[start: start + batch_size]]
            if augment is not None:
                chunk = [
                    Utterance(spec_augment(u.features, augment, rng), u.labels, u.text)
                    for u in chunk
                ]
            batch, lengths = pad_batch(chunk)
            logits, out_lengths, cache = model.forward(batch, lengths, mode="train", rng=rng)
            loss, dlogits, batch_pairs = batch_loss(logits, out_lengths, chunk, decode_text)
            pairs.extend(batch_pairs)
            if not np.isfinite(loss):
                raise NumericalError(f"non-finite loss at epoch {epoch}")
            grads = model.backward(cache, dlogits)
            novograd_step(model.params, grads, state, hp)
            losses.append(loss)
        epoch_records = [LogRecord(epoch, "train", float(np.mean(losses)), corpus_wer(pairs))]
        if dev:
            dev_loss, dev_wer = evaluate(model, dev, decode_text, batch_size)
            epoch_records.append(LogRecord(epoch, "dev", dev_loss, dev_wer))
        for rec in epoch_records:
            log.info("epoch %d %s loss %.4f wer %.4f", rec.epoch, rec.split, rec.loss, rec.wer)
            if log_sink is not None:
                log_sink(rec)
        records.extend(epoch_records)
        if on_epoch_end is not None:
            on_epoch_end(epoch, epoch_records)
        if stop_wer is not None and epoch >= min_epochs and epoch_records[0].wer <= stop_wer:
            break
    return TrainResult(model.params, records)
