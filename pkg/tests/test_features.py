import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from stereoloop.core import FeatureConfig
from stereoloop.errors import ImageTooSmall, PatchOutOfBounds
from stereoloop.features import (
    Keypoint,
    _gaussian_blur,
    _orientation,
    describe,
    detect,
    detect_and_describe,
    hamming,
    hamming_matrix,
    load_image,
    save_image,
)

# measured mean flip fraction under sigma = 5 grey levels was about 0.012
NOISE_FLIP_REGRESSION = 0.05


def textured_patch(seed=0, n=129):
    rng = np.random.default_rng(seed)
    tex = _gaussian_blur(rng.uniform(0, 255, (n, n)).astype(np.uint8), 2.0, 3)
    return np.clip((tex.astype(float) - tex.mean()) * 3 + 128, 0, 255).astype(np.uint8)


def bit_loop_hamming(a, b):
    count = 0
    for x, y in zip(a.tolist(), b.tolist()):
        for bit in range(8):
            count += ((x >> bit) & 1) != ((y >> bit) & 1)
    return count


def test_square_corners():
    img = np.zeros((100, 100), np.uint8)
    img[45:55, 45:55] = 255
    kps = detect(img, 50)
    assert len(kps) >= 4
    for cu, cv in [(45, 45), (54, 45), (45, 54), (54, 54)]:
        assert min(np.hypot(k.u - cu, k.v - cv) for k in kps) <= 2.0


def test_uniform_and_zero_quota():
    assert detect(np.full((80, 80), 128, np.uint8), 100) == []
    assert detect(textured_patch(), 0) == []


def test_image_too_small():
    with pytest.raises(ImageTooSmall):
        detect(np.zeros((63, 100), np.uint8), 10)


def test_patch_out_of_bounds():
    img = textured_patch()
    with pytest.raises(PatchOutOfBounds):
        describe(img, [Keypoint(3.0, 60.0, 1.0, 0.0)])


def test_sorted_and_capped():
    img = textured_patch(1, 257)
    kps = detect(img, 150)
    assert 0 < len(kps) <= 150
    r = [k.response for k in kps]
    assert r == sorted(r, reverse=True)
    for k in kps:
        assert 16 <= k.u < 257 - 16 and 16 <= k.v < 257 - 16
        assert k.response >= FeatureConfig().fast_threshold


def test_grid_bucketing_spreads_keypoints():
    img = textured_patch(2, 257)
    img[:, :128] = 128  # flat left half, all corners on the right
    kps = detect(img, 64)
    full = detect(textured_patch(2, 257), 64)
    cells = {(int(k.u * 8 / 257), int(k.v * 8 / 257)) for k in full}
    assert len(cells) >= 20
    assert all(k.u >= 120 for k in kps)


def test_determinism():
    img = textured_patch(3)
    k1, d1 = detect_and_describe(img, 100)
    k2, d2 = detect_and_describe(img, 100)
    assert k1 == k2 and np.array_equal(d1, d2)


def test_rotation_compensation():
    tex = textured_patch()
    n = tex.shape[0]
    rot = np.rot90(tex)
    for u, v in [(64, 64), (50, 60), (70, 55), (60, 75)]:
        a = Keypoint(u, v, 1.0, _orientation(tex, u, v))
        # np.rot90 sends (u, v) to (v, n - 1 - u)
        b = Keypoint(v, n - 1 - u, 1.0, _orientation(rot, v, n - 1 - u))
        assert hamming(describe(tex, [a])[0], describe(rot, [b])[0]) <= 64


def test_noise_flip_fraction():
    tex = textured_patch()
    rng = np.random.default_rng(7)
    kps = detect(tex, 200)
    d0 = describe(tex, kps)
    fracs = []
    for _ in range(5):
        noisy = np.clip(tex + rng.normal(0, 5, tex.shape), 0, 255).astype(np.uint8)
        d1 = describe(noisy, kps)
        fracs.append(np.mean([hamming(x, y) for x, y in zip(d0, d1)]) / 256)
    assert max(fracs) <= 0.25
    assert np.mean(fracs) <= NOISE_FLIP_REGRESSION


def test_hamming_examples(rng):
    x = rng.integers(0, 256, 32, dtype=np.uint8)
    assert hamming(x, x) == 0
    assert hamming(np.zeros(32, np.uint8), np.full(32, 255, np.uint8)) == 256
    for _ in range(20):
        a, b = rng.integers(0, 256, (2, 32), dtype=np.uint8)
        assert hamming(a, b) == bit_loop_hamming(a, b)


desc_st = st.binary(min_size=32, max_size=32).map(lambda b: np.frombuffer(b, np.uint8))


@settings(max_examples=200, deadline=None)
@given(desc_st, desc_st, desc_st)
def test_hamming_metric(a, b, c):
    ab = hamming(a, b)
    assert 0 <= ab <= 256
    assert ab == hamming(b, a)
    assert (ab == 0) == np.array_equal(a, b)
    assert hamming(a, c) <= ab + hamming(b, c)


def test_hamming_matrix_matches_pairwise(rng):
    a = rng.integers(0, 256, (37, 32), dtype=np.uint8)
    b = rng.integers(0, 256, (23, 32), dtype=np.uint8)
    expected = np.array([[hamming(x, y) for y in b] for x in a])
    assert np.array_equal(hamming_matrix(a, b), expected)
    assert np.array_equal(hamming_matrix(a, b, chunk_elems=50), expected)
    assert hamming_matrix(a[:0], b).shape == (0, 23)


@pytest.mark.parametrize("suffix", [".png", ".pgm"])
def test_image_io(tmp_path, suffix):
    img = textured_patch()
    save_image(tmp_path / f"x{suffix}", img)
    assert np.array_equal(load_image(tmp_path / f"x{suffix}"), img)


def test_image_io_rejects_other_formats(tmp_path):
    with pytest.raises(ValueError):
        load_image(tmp_path / "x.jpg")
