import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from meterpipe import imaging
from meterpipe.imaging import (
    CorruptImage,
    DegradationSpec,
    RasterImage,
    UnsupportedFormat,
    apply_spec,
    box_blur,
    decode_image,
    encode_png,
    gamma_correct,
    load_image,
    salt_pepper,
    save_image,
    scale,
)


def random_image(rng, h=20, w=30, channels=3):
    return RasterImage(rng.integers(0, 256, (h, w, channels)).astype(np.uint8))


# ---------------------------------------------------------------------------
# decoding / encoding


def test_decode_zero_pgm():
    data = b"P5\n2 2\n255\n" + bytes(4)
    img = decode_image(data)
    assert (img.width, img.height, img.channels) == (2, 2, 1)
    assert img.tobytes() == bytes(4)


def test_pgm_header_comments():
    data = b"P5\n# a comment\n2 1\n# another\n255\n" + bytes([7, 9])
    img = decode_image(data)
    assert img.tobytes() == bytes([7, 9])


def test_png_round_trip_bit_identical(tmp_path):
    rng = np.random.default_rng(1)
    img = random_image(rng)
    path = tmp_path / "x.png"
    save_image(img, path)
    assert load_image(path) == img


def test_pnm_round_trips(tmp_path):
    rng = np.random.default_rng(2)
    gray = random_image(rng, channels=1)
    rgb = random_image(rng, channels=3)
    save_image(gray, tmp_path / "g.pgm")
    save_image(rgb, tmp_path / "c.ppm")
    assert load_image(tmp_path / "g.pgm") == gray
    assert load_image(tmp_path / "c.ppm") == rgb


def test_truncated_file_is_corrupt(tmp_path):
    rng = np.random.default_rng(3)
    data = encode_png(random_image(rng))
    path = tmp_path / "t.png"
    path.write_bytes(data[: len(data) // 2])
    with pytest.raises(CorruptImage):
        load_image(path)
    with pytest.raises(CorruptImage):
        decode_image(b"P5\n4 4\n255\n" + bytes(3))


def test_missing_file():
    with pytest.raises(FileNotFoundError):
        load_image("/no/such/file.png")


def test_16bit_sources_rejected(tmp_path):
    import io

    from PIL import Image

    buf = io.BytesIO()
    Image.fromarray(np.zeros((4, 4), dtype=np.uint16)).save(buf, format="PNG")
    with pytest.raises(UnsupportedFormat):
        decode_image(buf.getvalue())
    with pytest.raises(UnsupportedFormat):
        decode_image(b"P5\n2 2\n65535\n" + bytes(8))


def test_format_channel_mapping(tmp_path):
    rng = np.random.default_rng(4)
    with pytest.raises(UnsupportedFormat):
        save_image(random_image(rng, channels=3), tmp_path / "x.pgm")
    with pytest.raises(UnsupportedFormat):
        save_image(random_image(rng, channels=1), tmp_path / "x.ppm")
    with pytest.raises(UnsupportedFormat):
        save_image(random_image(rng), tmp_path / "x.bmp")


def test_unwritable_path_raises_oserror():
    rng = np.random.default_rng(5)
    with pytest.raises(OSError):
        save_image(random_image(rng), "/no/such/dir/x.png")


def test_pixel_buffer_invariants():
    with pytest.raises(ValueError):
        RasterImage.from_flat(2, 2, 1, bytes(3))
    with pytest.raises(ValueError):
        RasterImage(np.zeros((2, 2, 4), dtype=np.uint8))
    with pytest.raises(ValueError):
        RasterImage(np.full((2, 2, 1), 300, dtype=np.int32))


# ---------------------------------------------------------------------------
# scale


def test_scale_identity():
    rng = np.random.default_rng(6)
    img = random_image(rng)
    assert scale(img, 1.0) == img


def test_scale_dimension_arithmetic():
    img = RasterImage(np.zeros((60, 100, 1), dtype=np.uint8))
    out = scale(img, 0.5)
    assert (out.width, out.height) == (50, 30)
    tiny = scale(RasterImage(np.zeros((3, 3, 1), dtype=np.uint8)), 0.1)
    assert (tiny.width, tiny.height) == (1, 1)


def test_scale_constant_stays_constant():
    for factor in (0.1, 0.37, 0.5, 0.73, 0.9):
        img = RasterImage(np.full((40, 50, 3), 77, dtype=np.uint8))
        assert np.unique(scale(img, factor).pixels).tolist() == [77]


def test_scale_rejects_bad_factor():
    img = RasterImage(np.zeros((4, 4, 1), dtype=np.uint8))
    for factor in (0.0, -0.5, 1.5):
        with pytest.raises(ValueError):
            scale(img, factor)


def test_scale_dimension_composition_close():
    # floor(floor(d*a)*b) differs from floor(d*a*b) by at most one
    rng = np.random.default_rng(7)
    for _ in range(50):
        h, w = int(rng.integers(5, 120)), int(rng.integers(5, 120))
        a, b = float(rng.uniform(0.1, 1.0)), float(rng.uniform(0.1, 1.0))
        img = RasterImage(rng.integers(0, 256, (h, w, 1)).astype(np.uint8))
        two_step = scale(scale(img, a), b)
        one_step = scale(img, min(1.0, a * b))
        assert abs(two_step.width - one_step.width) <= 1
        assert abs(two_step.height - one_step.height) <= 1


# ---------------------------------------------------------------------------
# box blur


def naive_box_blur(arr: np.ndarray, k: int) -> np.ndarray:
    h, w, c = arr.shape
    a = k // 2
    out = np.zeros_like(arr)
    for y in range(h):
        for x in range(w):
            for ch in range(c):
                total = 0
                for dy in range(k):
                    for dx in range(k):
                        yy = min(max(y - a + dy, 0), h - 1)
                        xx = min(max(x - a + dx, 0), w - 1)
                        total += int(arr[yy, xx, ch])
                out[y, x, ch] = math.floor(total / (k * k) + 0.5)
    return out


def test_blur_identity_k1():
    rng = np.random.default_rng(8)
    img = random_image(rng)
    assert box_blur(img, 1) == img


def test_blur_constant_unchanged():
    img = RasterImage(np.full((10, 12, 3), 99, dtype=np.uint8))
    for k in (2, 3, 5, 9):
        assert box_blur(img, k) == img


def test_blur_center_pixel_hand_value():
    arr = np.zeros((3, 3, 1), dtype=np.uint8)
    arr[1, 1, 0] = 255
    out = box_blur(RasterImage(arr), 3)
    assert out.pixels[1, 1, 0] == 28  # round(255 / 9)


def test_blur_matches_naive_oracle():
    rng = np.random.default_rng(9)
    for _ in range(20):
        h, w = int(rng.integers(1, 9)), int(rng.integers(1, 9))
        c = int(rng.choice([1, 3]))
        k = int(rng.integers(1, 6))
        arr = rng.integers(0, 256, (h, w, c)).astype(np.uint8)
        expected = naive_box_blur(arr, k)
        got = box_blur(RasterImage(arr), k)
        assert np.array_equal(got.pixels, expected)


def test_blur_stays_within_channel_range():
    rng = np.random.default_rng(10)
    img = random_image(rng, 15, 17)
    for k in (2, 4, 7):
        out = box_blur(img, k)
        for ch in range(3):
            assert out.pixels[:, :, ch].min() >= img.pixels[:, :, ch].min()
            assert out.pixels[:, :, ch].max() <= img.pixels[:, :, ch].max()


def test_blur_rejects_bad_kernel():
    img = RasterImage(np.zeros((4, 4, 1), dtype=np.uint8))
    with pytest.raises(ValueError):
        box_blur(img, 0)


# ---------------------------------------------------------------------------
# gamma


def test_gamma_identity():
    rng = np.random.default_rng(11)
    img = random_image(rng)
    assert gamma_correct(img, 1.0) == img


def test_gamma_fixed_points():
    arr = np.array([[[0], [255]]], dtype=np.uint8)
    for g in (0.1, 0.25, 1.5, 3.0, 10.0):
        out = gamma_correct(RasterImage(arr), g)
        assert out.pixels[0, 0, 0] == 0
        assert out.pixels[0, 1, 0] == 255


def test_gamma_spot_value():
    arr = np.array([[[128]]], dtype=np.uint8)
    assert gamma_correct(RasterImage(arr), 2.0).pixels[0, 0, 0] == 64


def test_gamma_formula_random_pairs():
    rng = np.random.default_rng(12)
    ramp = RasterImage(np.arange(256, dtype=np.uint8).reshape(16, 16, 1))
    for _ in range(50):
        g = float(rng.uniform(0.05, 5.0))
        out = gamma_correct(ramp, g)
        for i in (0, 1, 77, 128, 200, 255):
            expected = math.floor(255.0 * (i / 255.0) ** g + 0.5)
            assert out.pixels.reshape(-1)[i] == expected


@given(st.floats(min_value=0.05, max_value=8.0, allow_nan=False))
@settings(max_examples=40, deadline=None)
def test_gamma_lut_monotone(g):
    lut = imaging.gamma_lut(g)
    assert np.all(np.diff(lut.astype(int)) >= 0)


def test_gamma_rejects_nonpositive():
    img = RasterImage(np.zeros((2, 2, 1), dtype=np.uint8))
    for g in (0.0, -1.0):
        with pytest.raises(ValueError):
            gamma_correct(img, g)


# ---------------------------------------------------------------------------
# salt and pepper


def test_sp_zero_density_identity():
    rng = np.random.default_rng(13)
    img = random_image(rng)
    assert salt_pepper(img, 0.0, seed=42) == img


def test_sp_full_density_extremes():
    rng = np.random.default_rng(14)
    img = random_image(rng)
    out = salt_pepper(img, 1.0, seed=42)
    assert set(np.unique(out.pixels)) <= {0, 255}
    # all channels flip together
    flat = out.pixels.reshape(-1, 3)
    assert np.all((flat == flat[:, :1])[:, 1:])


def test_sp_reproducible_per_seed():
    rng = np.random.default_rng(15)
    img = random_image(rng)
    a = salt_pepper(img, 0.2, seed=7)
    b = salt_pepper(img, 0.2, seed=7)
    c = salt_pepper(img, 0.2, seed=8)
    assert a == b
    assert a != c


def test_sp_corruption_fraction_within_3_sigma():
    img = RasterImage(np.full((256, 256, 1), 128, dtype=np.uint8))
    density = 0.05
    n = 256 * 256
    sigma = math.sqrt(density * (1 - density) / n)
    out = salt_pepper(img, density, seed=123)
    fraction = np.mean(out.pixels != img.pixels)
    assert abs(fraction - density) <= 3 * sigma


def test_sp_rejects_bad_density():
    img = RasterImage(np.zeros((2, 2, 1), dtype=np.uint8))
    for d in (-0.1, 1.1):
        with pytest.raises(ValueError):
            salt_pepper(img, d)


# ---------------------------------------------------------------------------
# spec dispatch


def test_spec_validation():
    DegradationSpec("scale", 1.0)
    DegradationSpec("blur", 1)
    DegradationSpec("gamma", 1.0)
    DegradationSpec("sp", 0.0)
    with pytest.raises(ValueError):
        DegradationSpec("scale", 0.0)
    with pytest.raises(ValueError):
        DegradationSpec("blur", 2.5)
    with pytest.raises(ValueError):
        DegradationSpec("gamma", 0.0)
    with pytest.raises(ValueError):
        DegradationSpec("sp", 1.5)
    with pytest.raises(ValueError):
        DegradationSpec("vignette", 1.0)


def test_apply_spec_dispatch():
    rng = np.random.default_rng(16)
    img = random_image(rng)
    assert apply_spec(img, DegradationSpec("blur", 1)) == img
    assert apply_spec(img, DegradationSpec("gamma", 3.0)) == gamma_correct(img, 3.0)
    assert apply_spec(img, DegradationSpec("sp", 0.3, seed=5)) == salt_pepper(img, 0.3, 5)
    assert apply_spec(img, DegradationSpec("scale", 0.5)) == scale(img, 0.5)


def test_paper_blur_sweep_yields_nine_variants():
    rng = np.random.default_rng(17)
    img = random_image(rng, 10, 10)
    variants = [apply_spec(img, DegradationSpec("blur", k)) for k in range(10, 91, 10)]
    assert len(variants) == 9
    assert all(v.pixels.shape == img.pixels.shape for v in variants)


def test_effects_preserve_channels_and_dims():
    rng = np.random.default_rng(18)
    for channels in (1, 3):
        img = random_image(rng, 12, 9, channels)
        assert box_blur(img, 4).pixels.shape == img.pixels.shape
        assert gamma_correct(img, 2.2).pixels.shape == img.pixels.shape
        assert salt_pepper(img, 0.5, 1).pixels.shape == img.pixels.shape
        assert scale(img, 0.5).channels == channels
