import numpy as np
import pytest

from convctc.exceptions import CTCInfeasibleError, NumericalError
from convctc.model import AcousticModel, ConvSpec, ModelConfig
from convctc.optim import (
    OptHyper,
    OptState,
    Utterance,
    batch_loss,
    check_feasible,
    decays,
    novograd_step,
    pad_batch,
    train_loop,
)


def scalar_store(value):
    return {"w.weight": np.array([value], dtype=float)}


def test_scalar_first_step_example():
    params = scalar_store(1.0)
    hp = OptHyper(learning_rate=0.001, weight_decay=0.001)
    _, state = novograd_step(params, scalar_store(2.0), OptState(), hp)
    assert state.v["w.weight"] == pytest.approx(4.0)
    assert state.m["w.weight"][0] == pytest.approx(2 / (2 + 1e-8) + 0.001, abs=1e-12)
    assert params["w.weight"][0] == pytest.approx(0.998999, abs=1e-9)


def test_second_step_follows_recurrences():
    hp = OptHyper(learning_rate=0.1, weight_decay=0.0, beta1=0.9, beta2=0.5, epsilon=1e-8)
    params = scalar_store(1.0)
    state = OptState()
    novograd_step(params, scalar_store(2.0), state, hp)
    novograd_step(params, scalar_store(1.0), state, hp)
    v2 = 0.5 * 4.0 + 0.5 * 1.0
    m2 = 0.9 * (2 / (2 + 1e-8)) + 1.0 / (np.sqrt(v2) + 1e-8)
    assert state.v["w.weight"] == pytest.approx(v2)
    assert state.m["w.weight"][0] == pytest.approx(m2)
    assert params["w.weight"][0] == pytest.approx(1.0 - 0.1 * 2 / (2 + 1e-8) - 0.1 * m2)
    assert state.step == 2


def test_zero_learning_rate_keeps_params_but_advances_state(rng):
    params = {"a.weight": rng.normal(size=(3, 2)), "a.bn.gain": rng.normal(size=3)}
    before = {k: v.copy() for k, v in params.items()}
    state = OptState()
    novograd_step(params, {k: rng.normal(size=v.shape) for k, v in params.items()}, state,
                  OptHyper(learning_rate=0.0))
    assert all(np.array_equal(params[k], before[k]) for k in params)
    assert state.step == 1 and set(state.m) == set(params)


def test_zero_gradient_first_step_is_noop():
    params = scalar_store(3.0)
    _, state = novograd_step(params, scalar_store(0.0), OptState(), OptHyper(weight_decay=0.0))
    assert params["w.weight"][0] == 3.0
    assert state.v["w.weight"] == 0.0 and state.m["w.weight"][0] == 0.0


def test_first_step_direction_is_negative_normalised_gradient(rng):
    params = {"x.weight": rng.normal(size=(4, 5)), "y.bias": rng.normal(size=7)}
    before = {k: v.copy() for k, v in params.items()}
    grads = {k: rng.normal(size=v.shape) for k, v in params.items()}
    novograd_step(params, grads, OptState(), OptHyper(learning_rate=0.01, weight_decay=0.0))
    for k in params:
        step = (params[k] - before[k]).ravel()
        g = grads[k].ravel()
        cos = step @ g / (np.linalg.norm(step) * np.linalg.norm(g))
        assert cos == pytest.approx(-1.0, abs=1e-12)
        assert np.linalg.norm(step) == pytest.approx(0.01, rel=1e-6)


def test_state_memory_is_scalar_per_tensor(rng):
    params = {f"l{i}.weight": rng.normal(size=(i + 2, 3)) for i in range(4)}
    state = OptState()
    novograd_step(params, {k: np.ones_like(v) for k, v in params.items()}, state, OptHyper())
    assert all(np.ndim(v) == 0 for v in state.v.values())
    assert sum(m.size for m in state.m.values()) == sum(p.size for p in params.values())


def test_weight_decay_only_on_weights():
    assert decays("block0.sub0.conv.weight")
    assert decays("output.weight")
    assert not decays("output.bias")
    assert not decays("prologue.bn.gain")
    params = {"a.bias": np.array([1.0]), "a.weight": np.array([1.0])}
    novograd_step(params, {k: np.zeros(1) for k in params}, OptState(),
                  OptHyper(learning_rate=0.1, weight_decay=0.5))
    assert params["a.bias"][0] == 1.0
    assert params["a.weight"][0] == pytest.approx(1.0 - 0.1 * 0.5)


def test_key_mismatch_and_non_finite():
    with pytest.raises(KeyError):
        novograd_step(scalar_store(1.0), {"other": np.zeros(1)}, OptState(), OptHyper())
    with pytest.raises(NumericalError, match="w.weight"):
        novograd_step(scalar_store(1.0), scalar_store(np.nan), OptState(), OptHyper())


@pytest.mark.parametrize("kwargs", [dict(learning_rate=-1), dict(beta1=1.0), dict(beta2=-0.1),
                                    dict(epsilon=0.0), dict(weight_decay=-1)])
def test_invalid_hyper(kwargs):
    with pytest.raises(ValueError):
        OptHyper(**kwargs)


def tiny_model(seed=0):
    cfg = ModelConfig(arch="quartznet", n_mels=4, n_outputs=3, prologue=ConvSpec(6, 3),
                      blocks=(ConvSpec(6, 3),), epilogue=(ConvSpec(6, 1),))
    return AcousticModel(cfg, seed=seed)


def toy_data(rng, n=6):
    utts = []
    for i in range(n):
        labels = np.array([i % 2, (i + 1) % 2])
        frames = 8 + i
        utts.append(Utterance(rng.normal(size=(4, frames)), labels, " ".join("ab"[k] for k in labels)))
    return utts


def decode(ids):
    return " ".join("ab"[i] for i in ids)


def test_pad_batch(rng):
    utts = toy_data(rng, 3)
    batch, lengths = pad_batch(utts)
    assert batch.shape == (3, 4, 10)
    assert lengths.tolist() == [8, 9, 10]
    assert not np.any(batch[0, :, 8:])


def test_batch_loss_is_mean(rng):
    model = tiny_model()
    utts = toy_data(rng, 2)
    batch, lengths = pad_batch(utts)
    logits, out_len, _ = model.forward(batch, lengths)
    loss, dlogits = batch_loss(logits, out_len, utts)
    single = [batch_loss(*model.forward(u.features)[:2], [u])[0] for u in utts]
    assert loss == pytest.approx(np.mean(single))
    assert not np.any(dlogits[0, out_len[0]:])


def test_epochs_zero_leaves_params(rng):
    model = tiny_model()
    before = {k: v.copy() for k, v in model.params.items()}
    res = train_loop(model, toy_data(rng), OptHyper(), 0, rng, decode_text=decode)
    assert res.records == []
    assert all(np.array_equal(before[k], model.params[k]) for k in before)


def test_zero_lr_is_fixed_point(rng):
    model = tiny_model()
    before = {k: v.copy() for k, v in model.params.items()}
    train_loop(model, toy_data(rng), OptHyper(learning_rate=0.0), 3, rng, decode_text=decode)
    assert all(np.array_equal(before[k], model.params[k]) for k in before)


def test_training_reduces_loss_and_logs(rng):
    data = toy_data(rng)
    model = tiny_model()
    seen = []
    res = train_loop(model, data, OptHyper(learning_rate=0.01), 15, np.random.default_rng(0),
                     decode_text=decode, dev=data[:2], batch_size=2, log_sink=seen.append)
    assert seen == res.records
    train = [r for r in res.records if r.split == "train"]
    dev = [r for r in res.records if r.split == "dev"]
    assert len(train) == len(dev) == 15
    assert train[-1].loss < train[0].loss


def test_training_is_deterministic(rng):
    data = toy_data(rng)
    runs = []
    for _ in range(2):
        model = tiny_model(seed=4)
        res = train_loop(model, data, OptHyper(learning_rate=0.01), 3, np.random.default_rng(9),
                         decode_text=decode, batch_size=4)
        runs.append((model.params, res.records))
    assert runs[0][1] == runs[1][1]
    assert all(np.array_equal(runs[0][0][k], runs[1][0][k]) for k in runs[0][0])


def test_stop_wer_respects_min_epochs(rng):
    model = tiny_model()
    res = train_loop(model, toy_data(rng), OptHyper(), 10, rng, decode_text=decode,
                     stop_wer=10.0, min_epochs=2)
    assert [r.epoch for r in res.records] == [1, 2]


def test_infeasible_utterance_named(rng):
    model = tiny_model()
    utts = toy_data(rng, 2) + [Utterance(rng.normal(size=(4, 2)), np.array([0, 0]), "a a")]
    with pytest.raises(CTCInfeasibleError, match="utterance 3"):
        check_feasible(model, utts)
    with pytest.raises(CTCInfeasibleError):
        train_loop(model, utts, OptHyper(), 1, rng, decode_text=decode)
