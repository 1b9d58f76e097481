import numpy as np
import pytest

from zoomdet.images import (
    bilinear_resize,
    read_image,
    resize_by_factor,
    resize_long_side,
    round_half_up,
    write_pgm,
)


def test_round_half_up():
    assert round_half_up(353.5) == 354
    assert round_half_up(176.75) == 177
    assert round_half_up(88.375) == 88
    assert round_half_up(2.5) == 3
    assert round_half_up(-0.2) == 0


def test_pgm_roundtrip_exact(tmp_path):
    rng = np.random.default_rng(1)
    img = rng.integers(0, 256, size=(13, 17)).astype(np.float32) / 255.0
    p = tmp_path / "x.pgm"
    write_pgm(p, img)
    back = read_image(p)
    np.testing.assert_array_equal(back, img.astype(np.float32))


def test_pgm_write_deterministic(tmp_path):
    rng = np.random.default_rng(2)
    img = rng.uniform(0, 1, size=(9, 9)).astype(np.float32)
    a, b = tmp_path / "a.pgm", tmp_path / "b.pgm"
    write_pgm(a, img)
    write_pgm(b, img)
    assert a.read_bytes() == b.read_bytes()


def test_pgm_header_with_comment(tmp_path):
    p = tmp_path / "c.pgm"
    p.write_bytes(b"P5\n# a comment\n2 2\n255\n" + bytes([0, 128, 255, 64]))
    img = read_image(p)
    assert img.shape == (2, 2)
    assert img[0, 1] == pytest.approx(128 / 255)


def test_ppm_loads_as_grayscale(tmp_path):
    p = tmp_path / "c.ppm"
    p.write_bytes(b"P6\n1 1\n255\n" + bytes([30, 60, 90]))
    img = read_image(p)
    assert img.shape == (1, 1)
    assert img[0, 0] == pytest.approx((30 + 60 + 90) / 3 / 255)


def test_unknown_format_rejected(tmp_path):
    p = tmp_path / "x.pgm"
    p.write_bytes(b"P3\n1 1\n255\n0 0 0\n")
    with pytest.raises(ValueError):
        read_image(p)


def test_resize_identity_returns_equal_pixels():
    rng = np.random.default_rng(3)
    img = rng.uniform(0, 1, size=(20, 30)).astype(np.float32)
    out = bilinear_resize(img, 20, 30)
    np.testing.assert_array_equal(out, img)


def test_resize_constant_stays_constant():
    img = np.full((11, 7), 0.42, dtype=np.float32)
    out = bilinear_resize(img, 23, 31)
    np.testing.assert_allclose(out, 0.42, atol=1e-6)


def test_resize_preserves_value_range():
    rng = np.random.default_rng(4)
    img = rng.uniform(0, 1, size=(16, 16)).astype(np.float32)
    out = bilinear_resize(img, 37, 11)
    assert out.min() >= img.min() - 1e-6
    assert out.max() <= img.max() + 1e-6


def test_resize_linear_ramp_preserved_in_interior():
    # bilinear interpolation reproduces affine images away from the border
    h, w = 16, 16
    ys, xs = np.mgrid[0:h, 0:w]
    img = (0.3 + 0.02 * xs + 0.01 * ys).astype(np.float32)
    out = bilinear_resize(img, 32, 32)
    ys2 = (np.arange(32) + 0.5) * 0.5 - 0.5
    xs2 = (np.arange(32) + 0.5) * 0.5 - 0.5
    expected = 0.3 + 0.02 * xs2[None, :] + 0.01 * ys2[:, None]
    np.testing.assert_allclose(out[2:-2, 2:-2], expected[2:-2, 2:-2], atol=1e-5)


def test_resize_by_factor_rounds_half_up():
    img = np.zeros((160, 160), dtype=np.float32)
    assert resize_by_factor(img, 0.25).shape == (40, 40)
    assert resize_by_factor(img, 1 / 3).shape == (53, 53)  # 53.33 -> 53
    assert resize_by_factor(img, 0.0215).shape == (3, 3)  # 3.44 -> 3


def test_resize_by_factor_minimum_one_pixel():
    img = np.zeros((4, 4), dtype=np.float32)
    assert resize_by_factor(img, 0.01).shape == (1, 1)


def test_resize_long_side_preserves_aspect():
    img = np.zeros((100, 200), dtype=np.float32)
    out, factor = resize_long_side(img, 50)
    assert out.shape == (25, 50)
    assert factor == pytest.approx(0.25)


def test_resize_long_side_identity():
    img = np.random.default_rng(5).uniform(0, 1, (60, 40)).astype(np.float32)
    out, factor = resize_long_side(img, 60)
    assert factor == 1.0
    np.testing.assert_array_equal(out, img)


def test_degenerate_target_rejected():
    with pytest.raises(ValueError):
        bilinear_resize(np.zeros((4, 4), dtype=np.float32), 0, 4)
