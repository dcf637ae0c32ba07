import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from shufflepose.codec import COCO_FLIP_PAIRS, decode, encode, flip_average, flip_permutation
from shufflepose.errors import ConfigError, ShapeError


def grid_keypoints(rng, k=17, h=32, w=24):
    kps = np.zeros((k, 3))
    kps[:, 0] = 4 * rng.integers(0, w, k)
    kps[:, 1] = 4 * rng.integers(0, h, k)
    kps[:, 2] = rng.choice([0, 1, 2], k, p=[0.1, 0.2, 0.7])
    return kps


def test_grid_aligned_keypoint_peaks_at_one():
    hm = encode(np.array([[8.0, 12.0, 2.0]]), 32, 24)
    assert hm[0, 3, 2] == 1.0
    assert hm.max() == 1.0


def test_invisible_keypoint_gives_zero_channel():
    hm = encode(np.array([[8.0, 12.0, 0.0], [4.0, 4.0, 1.0]]), 8, 6)
    assert not hm[0].any()
    assert hm[1, 1, 1] == 1.0


def test_encoded_gaussian_is_symmetric():
    hm = encode(np.array([[40.0, 64.0, 2.0]]), 32, 24, sigma=2.0)[0]
    r, c = 16, 10
    patch = hm[r - 5:r + 6, c - 5:c + 6]
    assert np.array_equal(patch, patch[::-1]) and np.array_equal(patch, patch[:, ::-1])


def test_encode_formula():
    hm = encode(np.array([[10.0, 6.0, 2.0]]), 4, 5, sigma=1.5)[0]
    i, j = np.mgrid[0:4, 0:5]
    expect = np.exp(-((i - 1.5) ** 2 + (j - 2.5) ** 2) / (2 * 1.5 ** 2))
    np.testing.assert_allclose(hm, expect, rtol=0, atol=1e-15)


def test_off_grid_keypoints_are_clamped_and_counted():
    hm, n = encode(np.array([[200.0, 10.0, 2.0], [-3.0, 8.0, 2.0], [4.0, 4.0, 2.0]]), 8, 6, return_clamped=True)
    assert n == 2
    assert hm[0, 2, 5] == pytest.approx(np.exp(-0.25 / 8))
    assert hm[1, 2, 0] == 1.0


def test_encode_rejects_bad_sigma():
    with pytest.raises(ConfigError):
        encode(np.zeros((1, 3)), 4, 4, sigma=0)


def test_decode_quarter_offset_example():
    hm = np.zeros((1, 8, 8))
    hm[0, 3, 3], hm[0, 3, 4] = 0.9, 0.8
    d = decode(hm)
    assert d.keypoints[0].tolist() == [3.25 * 4, 3 * 4, 1.0]
    assert d.scores[0] == 0.9
    assert not d.low_confidence[0]


def test_decode_single_spike_shifts_toward_first_zero():
    hm = np.zeros((1, 5, 5))
    hm[0, 2, 2] = 1.0
    # the lowest flat index among the zeros is (0, 0); unit vector points up-left
    d = decode(hm).keypoints[0]
    s = 0.25 / np.sqrt(2)
    np.testing.assert_allclose(d[:2], [(2 - s) * 4, (2 - s) * 4], rtol=0, atol=1e-12)


def test_constant_channel_is_deterministic_and_flagged():
    d = decode(np.full((1, 3, 4), 0.2))
    # argmax (0, 0), second-best (0, 1): shift right by a quarter cell
    assert d.keypoints[0, :2].tolist() == [1.0, 0.0]
    assert d.low_confidence[0]


def test_local_mode_restricts_second_peak():
    hm = np.zeros((1, 8, 8))
    hm[0, 2, 2], hm[0, 6, 6], hm[0, 2, 1] = 1.0, 0.9, 0.5
    assert decode(hm).keypoints[0, :2].tolist() == pytest.approx([(2 + 0.25 / np.sqrt(2)) * 4] * 2)
    assert decode(hm, local=True).keypoints[0, :2].tolist() == [1.75 * 4, 2 * 4]


def test_decode_needs_rank3():
    with pytest.raises(ShapeError):
        decode(np.zeros((2, 1, 4, 4)))


@settings(max_examples=100, deadline=None)
@given(st.integers(0, 2**31 - 1))
def test_roundtrip_within_one_pixel(seed):
    kps = grid_keypoints(np.random.default_rng(seed))
    d = decode(encode(kps, 32, 24))
    vis = kps[:, 2] > 0
    err = np.hypot(*(d.keypoints[vis, :2] - kps[vis, :2]).T)
    assert (err <= 1.0).all()


@settings(max_examples=100, deadline=None)
@given(st.integers(0, 2**31 - 1), st.booleans())
def test_quarter_offset_bounded(seed, local):
    hm = np.random.default_rng(seed).standard_normal((5, 6, 7))
    d = decode(hm, local=local)
    for k in range(5):
        r, c = np.unravel_index(np.argmax(hm[k]), hm[k].shape)
        shift = np.hypot(d.keypoints[k, 0] / 4 - c, d.keypoints[k, 1] / 4 - r)
        assert shift <= 0.25 + 1e-12


def test_flip_permutation_swaps_pairs():
    perm = flip_permutation(COCO_FLIP_PAIRS, 17)
    assert perm[0] == 0 and perm[1] == 2 and perm[16] == 15
    assert np.array_equal(perm[perm], np.arange(17))
    with pytest.raises(ConfigError):
        flip_permutation([(1, 2), (2, 3)], 17)
    with pytest.raises(ConfigError):
        flip_permutation([(1, 20)], 17)


def test_flip_average_of_input_independent_model():
    # a constant output survives averaging when it is itself flip-consistent
    rng = np.random.default_rng(0)
    out = rng.standard_normal((1, 17, 4, 3))
    perm = flip_permutation(COCO_FLIP_PAIRS, 17)
    out = out + out[:, perm, :, ::-1]
    image = rng.standard_normal((2, 3, 16, 12))
    avg = flip_average(lambda batch: np.repeat(out, len(batch), 0), image, COCO_FLIP_PAIRS)
    np.testing.assert_allclose(avg, np.repeat(out, 2, 0), rtol=0, atol=1e-15)


def test_flip_average_idempotent_on_identical_stacks():
    rng = np.random.default_rng(1)
    sym = rng.standard_normal((1, 2, 4, 3))
    sym = sym + sym[..., ::-1]
    avg = flip_average(lambda batch: sym, np.zeros((1, 3, 8, 6)), [])
    assert np.array_equal(avg, sym)


def _equivariant_toy(batch):
    # channel 1 sees the left half of the image, channel 2 the mirrored right half
    img = batch.mean(axis=1)
    left = img.copy()
    left[..., img.shape[-1] // 2:] = 0
    right = img.copy()
    right[..., :img.shape[-1] // 2] = 0
    return np.stack([img, left, right], axis=1)


def test_flip_average_commutes_with_mirror_and_swap():
    rng = np.random.default_rng(2)
    image = rng.standard_normal((2, 3, 4, 6))
    pairs = [(1, 2)]
    a = flip_average(_equivariant_toy, image[..., ::-1].copy(), pairs)
    b = flip_average(_equivariant_toy, image, pairs)[:, [0, 2, 1], :, ::-1]
    np.testing.assert_allclose(a, b, rtol=0, atol=1e-15)


def test_flip_average_symmetric_input_gives_symmetric_map():
    rng = np.random.default_rng(3)
    half = rng.standard_normal((1, 3, 4, 3))
    image = np.concatenate([half, half[..., ::-1]], axis=-1)
    avg = flip_average(lambda b: b.mean(axis=1, keepdims=True), image, [])
    assert np.array_equal(avg, avg[..., ::-1])
