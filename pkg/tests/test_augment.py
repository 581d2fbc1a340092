import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from convctc.augment import AugmentPolicy, Mask, draw_masks, spec_augment
from convctc.features import FeatureMatrix, FrameConfig

NO_MASKS = AugmentPolicy(n_freq_masks=0, n_time_masks=0)


def masked_sets(masks, shape):
    rows, cols = set(), set()
    for m in masks:
        span = range(m.start, m.start + m.width)
        (rows if m.axis == 0 else cols).update(span)
    return rows, cols


def test_zero_counts_is_identity(rng):
    x = rng.normal(size=(64, 40))
    y = spec_augment(x, NO_MASKS, rng)
    assert np.array_equal(x, y)
    assert y is not x


def test_single_freq_mask_zeroes_contiguous_rows():
    policy = AugmentPolicy(n_freq_masks=1, max_freq_width=2, n_time_masks=0)
    seen = set()
    for seed in range(50):
        x = np.random.default_rng(seed).normal(size=(16, 30)) + 5.0
        y, (mask,) = spec_augment(x, policy, np.random.default_rng(seed), return_masks=True)
        zero_rows = np.flatnonzero(np.all(y == 0.0, axis=1))
        assert len(zero_rows) == mask.width
        assert mask.width in (0, 1, 2)
        if mask.width:
            assert np.array_equal(zero_rows, np.arange(mask.start, mask.start + mask.width))
        keep = np.ones(16, bool)
        keep[zero_rows] = False
        assert np.array_equal(y[keep], x[keep])
        seen.add(mask.width)
    assert seen == {0, 1, 2}


def test_width_zero_is_identity(rng):
    policy = AugmentPolicy(max_freq_width=0, max_time_width=0)
    x = rng.normal(size=(8, 20))
    assert np.array_equal(spec_augment(x, policy, rng), x)


def test_deterministic_given_seed(rng):
    x = rng.normal(size=(64, 120))
    policy = AugmentPolicy(n_freq_masks=2, n_time_masks=2)
    a = spec_augment(x, policy, np.random.default_rng(7))
    b = spec_augment(x, policy, np.random.default_rng(7))
    assert np.array_equal(a, b)


def test_time_width_capped_by_fraction_and_frames():
    policy = AugmentPolicy(max_time_width=100, max_time_fraction=0.1)
    assert policy.time_width(50) == 5
    assert policy.time_width(5000) == 100
    assert AugmentPolicy(max_time_width=100, max_time_fraction=None).time_width(30) == 30


def test_masks_stay_in_bounds(rng):
    policy = AugmentPolicy(n_freq_masks=3, max_freq_width=100, n_time_masks=3, max_time_width=100)
    for _ in range(200):
        shape = (int(rng.integers(1, 20)), int(rng.integers(1, 60)))
        for m in draw_masks(shape, policy, rng):
            assert 0 <= m.start and m.start + m.width <= shape[m.axis]


def test_mean_fill_uses_input_mean(rng):
    x = rng.normal(size=(10, 50)) + 3.0
    policy = AugmentPolicy(n_freq_masks=1, max_freq_width=10, n_time_masks=0, fill="per-utterance-mean")
    y, masks = spec_augment(x, policy, np.random.default_rng(3), return_masks=True)
    rows, _ = masked_sets(masks, x.shape)
    for r in rows:
        assert np.all(y[r] == x.mean())


def test_feature_matrix_round_trip(rng):
    fm = FeatureMatrix(rng.normal(size=(64, 30)), FrameConfig())
    out = spec_augment(fm, AugmentPolicy(), rng)
    assert isinstance(out, FeatureMatrix)
    assert out.values.shape == (64, 30)
    assert out.config == fm.config


def test_bad_policy_rejected():
    with pytest.raises(ValueError):
        AugmentPolicy(n_freq_masks=-1)
    with pytest.raises(ValueError):
        AugmentPolicy(fill="noise")


@settings(max_examples=60, deadline=None)
@given(
    n_mels=st.integers(1, 32), n_frames=st.integers(1, 80),
    nf=st.integers(0, 3), wf=st.integers(0, 40), nt=st.integers(0, 3), wt=st.integers(0, 100),
    seed=st.integers(0, 2**31),
)
def test_unmasked_entries_bit_identical_and_area_bounded(n_mels, n_frames, nf, wf, nt, wt, seed):
    rng = np.random.default_rng(seed)
    x = rng.normal(size=(n_mels, n_frames)) + 10.0
    policy = AugmentPolicy(nf, wf, nt, wt, max_time_fraction=None)
    y, masks = spec_augment(x, policy, rng, return_masks=True)
    assert y.shape == x.shape
    rows, cols = masked_sets(masks, x.shape)
    free = np.ones_like(x, bool)
    free[sorted(rows), :] = False
    free[:, sorted(cols)] = False
    assert np.array_equal(y[free], x[free])
    assert np.all(y[~free] == 0.0)
    assert (~free).sum() <= nf * wf * n_frames + nt * wt * n_mels


def test_mask_tuple_fields():
    m = Mask(1, 3, 4)
    assert (m.axis, m.start, m.width) == (1, 3, 4)
