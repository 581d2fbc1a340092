import numpy as np
import pytest
from sklearn.base import clone
from sklearn.exceptions import NotFittedError
from sklearn.pipeline import make_pipeline

from convctc import AudioClip, CTCSpeechRecognizer, LogMelExtractor, SpecAugment, SynthSpec
from convctc.audio_io import load_wav, synth_dataset


@pytest.fixture(scope="module")
def clips(tmp_path_factory):
    out = tmp_path_factory.mktemp("synth")
    entries = synth_dataset(SynthSpec(n_utterances=12, seed=3, n_speakers=3), out)
    return [load_wav(out / e.audio_filepath) for e in entries], [e.text for e in entries]


def test_extractor_params_and_clone():
    ext = LogMelExtractor(n_mels=40)
    assert ext.get_params()["n_mels"] == 40
    twin = clone(ext)
    assert twin.get_params() == ext.get_params() and twin is not ext


def test_extractor_requires_fit(clips):
    with pytest.raises(NotFittedError):
        LogMelExtractor().transform(clips[0][:1])


def test_extractor_shapes_and_resampling(clips):
    ext = LogMelExtractor().fit()
    feats = ext.transform(clips[0][:2])
    assert all(f.shape[0] == 64 for f in feats)
    clip = clips[0][0]
    half = AudioClip(clip.samples[::2], 8000)
    assert ext.transform(half)[0].shape[0] == 64
    raw = ext.transform(np.zeros(4000) + 0.1)[0]
    assert raw.shape == (64, 23)


def test_extractor_rejects_bad_input():
    ext = LogMelExtractor().fit()
    with pytest.raises(ValueError):
        ext.transform([np.array([0.0, np.nan] * 400)])
    with pytest.raises(ValueError):
        ext.transform([])


def test_spec_augment_transformer_is_seeded(rng):
    X = [rng.normal(size=(64, 100)) for _ in range(3)]
    a = SpecAugment(random_state=4).fit().transform(X)
    b = SpecAugment(random_state=4).fit().transform(X)
    assert all(np.array_equal(x, y) for x, y in zip(a, b))
    ident = SpecAugment(n_freq_masks=0, n_time_masks=0).fit().transform(X)
    assert all(np.array_equal(x, y) for x, y in zip(X, ident))


def test_recognizer_get_params_round_trip():
    est = CTCSpeechRecognizer(arch="jasper", channels=8, epochs=1)
    params = est.get_params()
    assert params["arch"] == "jasper" and params["channels"] == 8
    assert clone(est).get_params() == params
    est.set_params(epochs=3)
    assert est.epochs == 3


def test_recognizer_requires_fit(rng):
    with pytest.raises(NotFittedError):
        CTCSpeechRecognizer().predict([rng.normal(size=(64, 20))])


def test_recognizer_fits_synthetic_clips(clips):
    X = LogMelExtractor().fit_transform(clips[0])
    y = clips[1]
    est = CTCSpeechRecognizer(n_blocks=2, batch_size=4, learning_rate=0.01, blank_bias=6.0,
                              epochs=60, stop_wer=0.0, random_state=0)
    est.fit(X, y)
    assert est.history_ and est.history_[0].split == "train"
    assert est.score(X, y) >= 0.95
    assert est.predict(X[:2]) == [" ".join(t.split()) for t in y[:2]]
    lp = est.predict_log_proba(X[:1])[0]
    np.testing.assert_allclose(np.exp(lp).sum(axis=1), 1.0, atol=1e-12)
    est.set_params(beam_width=4)
    assert est.score(X, y) >= 0.95


def test_pipeline_composition(clips):
    pipe = make_pipeline(
        LogMelExtractor(),
        CTCSpeechRecognizer(n_blocks=1, channels=8, epochs=1, random_state=0),
    )
    pipe.fit(clips[0][:4], clips[1][:4])
    preds = pipe.predict(clips[0][:4])
    assert len(preds) == 4 and all(isinstance(p, str) for p in preds)


def test_recognizer_input_checks(rng):
    est = CTCSpeechRecognizer(epochs=0)
    with pytest.raises(ValueError):
        est.fit([rng.normal(size=(64, 30))], ["a", "b"])
    with pytest.raises(ValueError):
        est.fit([rng.normal(size=(64, 30)), rng.normal(size=(40, 30))], ["a", "b"])
