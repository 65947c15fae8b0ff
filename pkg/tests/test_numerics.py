import numpy as np
import pytest

from tsmamba.numerics import (
    ModelConfig,
    PSNR_CAP_DB,
    Tensor,
    bicubic_upsample,
    conv2d,
    layer_norm,
    pixel_shuffle,
    psnr,
    read_pnm,
    read_tstf,
    relu,
    residual_block,
    ssim,
    write_pnm,
    write_tstf,
)


def test_tensor_basics():
    t = Tensor(np.arange(6.0).reshape(2, 3))
    assert t.dims == (2, 3)
    assert t.data.dtype == np.float32
    c = t.copy()
    c.data[0, 0] = 99
    assert t.data[0, 0] == 0


def test_model_config_validation():
    ModelConfig().validate()
    with pytest.raises(ValueError):
        ModelConfig(s_selected=15, temporal_window=15).validate()
    with pytest.raises(ValueError):
        ModelConfig(channels=0).validate()


# --- conv2d -----------------------------------------------------------------

def test_conv2d_identity_kernel():
    rng = np.random.default_rng(0)
    x = rng.normal(0, 1, (2, 5, 5)).astype(np.float32)
    w = np.zeros((2, 2, 3, 3))
    w[0, 0, 1, 1] = 1.0
    w[1, 1, 1, 1] = 1.0
    y = conv2d(Tensor(x), w, padding=1)
    assert np.allclose(y.data, x, atol=1e-6)


def test_conv2d_matches_naive():
    rng = np.random.default_rng(1)
    x = rng.normal(0, 1, (3, 6, 7))
    w = rng.normal(0, 1, (4, 3, 3, 3))
    b = rng.normal(0, 1, 4)
    y = conv2d(Tensor(x.astype(np.float32)), w, b, stride=2, padding=1)
    xp = np.pad(x, ((0, 0), (1, 1), (1, 1)))
    ho = (6 + 2 - 3) // 2 + 1
    wo = (7 + 2 - 3) // 2 + 1
    ref = np.zeros((4, ho, wo))
    for o in range(4):
        for i in range(ho):
            for j in range(wo):
                patch = xp[:, 2 * i:2 * i + 3, 2 * j:2 * j + 3]
                ref[o, i, j] = (patch * w[o]).sum() + b[o]
    assert y.dims == (4, ho, wo)
    assert np.allclose(y.data, ref, atol=1e-4)


def test_conv2d_shape_errors():
    x = Tensor(np.zeros((3, 4, 4)))
    with pytest.raises(ValueError):
        conv2d(x, np.zeros((2, 4, 3, 3)))      # channel mismatch


def test_residual_block_zero_weights_is_identity():
    x = Tensor(np.random.default_rng(2).normal(0, 1, (2, 4, 4)).astype(np.float32))
    z = np.zeros((2, 2, 3, 3))
    b = np.zeros(2)
    y = residual_block(x, z, b, z, b)
    assert np.array_equal(y.data, x.data)


def test_relu():
    y = relu(Tensor(np.array([[-1.0, 0.0, 2.0]])))
    assert y.data.tolist() == [[0.0, 0.0, 2.0]]


# --- pixel shuffle ----------------------------------------------------------

def test_pixel_shuffle_layout():
    c, r, h, w = 1, 2, 2, 2
    x = np.arange(c * r * r * h * w, dtype=np.float32).reshape(c * r * r, h, w)
    y = pixel_shuffle(Tensor(x), r)
    assert y.dims == (1, 4, 4)
    # channel k of the input lands at offset (k // r, k % r) in each block
    assert y.data[0, 0, 0] == x[0, 0, 0]
    assert y.data[0, 0, 1] == x[1, 0, 0]
    assert y.data[0, 1, 0] == x[2, 0, 0]
    assert y.data[0, 1, 1] == x[3, 0, 0]


def test_pixel_shuffle_rejects_bad_channels():
    with pytest.raises(ValueError):
        pixel_shuffle(Tensor(np.zeros((3, 2, 2))), 2)


# --- bicubic ----------------------------------------------------------------

def test_bicubic_constant_preserved():
    x = Tensor(np.full((3, 6, 6), 0.37, dtype=np.float32))
    y = bicubic_upsample(x, 4)
    assert y.dims == (3, 24, 24)
    assert np.allclose(y.data, 0.37, atol=1e-5)


def test_bicubic_linear_ramp_preserved_in_interior():
    h = 16
    ramp = np.tile(np.arange(h, dtype=np.float64), (h, 1))
    x = Tensor(ramp[None].astype(np.float32))
    y = bicubic_upsample(x, 2).data[0]
    # interior columns follow the ramp with slope 1/2 (align_corners=False)
    interior = y[8, 8:-8]
    diffs = np.diff(interior)
    assert np.allclose(diffs, 0.5, atol=1e-3)


# --- layer norm -------------------------------------------------------------

def test_layer_norm_zero_mean_unit_var():
    x = np.random.default_rng(3).normal(2.0, 3.0, (5, 16)).astype(np.float32)
    y = layer_norm(Tensor(x)).data
    assert np.allclose(y.mean(axis=-1), 0, atol=1e-5)
    assert np.allclose(y.std(axis=-1), 1, atol=1e-2)


def test_layer_norm_affine():
    x = np.random.default_rng(4).normal(0, 1, (3, 8)).astype(np.float32)
    g = np.full(8, 2.0, dtype=np.float32)
    b = np.full(8, 1.0, dtype=np.float32)
    base = layer_norm(Tensor(x)).data
    aff = layer_norm(Tensor(x), g, b).data
    assert np.allclose(aff, base * 2 + 1, atol=1e-6)


# --- metrics ----------------------------------------------------------------

def test_psnr_identical_capped():
    x = Tensor(np.random.default_rng(5).random((3, 8, 8)).astype(np.float32))
    assert psnr(x, x) == PSNR_CAP_DB


def test_psnr_known_value():
    a = np.zeros((1, 4, 4), dtype=np.float32)
    b = np.full((1, 4, 4), 0.1, dtype=np.float32)
    expect = 10 * np.log10(1.0 / 0.01)
    assert abs(psnr(Tensor(a), Tensor(b)) - expect) < 1e-4


def test_ssim_identical_is_one():
    x = Tensor(np.random.default_rng(6).random((1, 16, 16)).astype(np.float32))
    assert abs(ssim(x, x) - 1.0) < 1e-6


def test_ssim_decreases_with_noise():
    rng = np.random.default_rng(7)
    x = rng.random((1, 32, 32)).astype(np.float32)
    y = np.clip(x + rng.normal(0, 0.2, x.shape), 0, 1).astype(np.float32)
    assert ssim(Tensor(x), Tensor(y)) < 0.95


# --- file formats -----------------------------------------------------------

def test_tstf_round_trip_bit_exact(tmp_path):
    rng = np.random.default_rng(8)
    arr = rng.normal(0, 1, (2, 3, 4)).astype(np.float32)
    p = tmp_path / "t.tstf"
    write_tstf(p, Tensor(arr))
    back = read_tstf(p)
    assert back.dims == (2, 3, 4)
    assert np.array_equal(back.data, arr)
    raw = p.read_bytes()
    assert raw[:4] == b"TSTF"
    assert raw[4:8] == b"\x01\x00\x00\x00"
    assert raw[8] == 0 and raw[9] == 3


def test_tstf_rejects_bad_magic(tmp_path):
    p = tmp_path / "bad.tstf"
    p.write_bytes(b"NOPE" + b"\x00" * 16)
    with pytest.raises(ValueError):
        read_tstf(p)


def test_pnm_round_trip(tmp_path):
    rng = np.random.default_rng(9)
    arr = (rng.integers(0, 256, (3, 5, 7)) / 255.0).astype(np.float32)
    p = tmp_path / "img.ppm"
    write_pnm(p, Tensor(arr))
    back = read_pnm(p)
    assert back.dims == (3, 5, 7)
    assert np.allclose(back.data, arr, atol=1e-7)


def test_pgm_gray_round_trip(tmp_path):
    arr = (np.arange(12).reshape(1, 3, 4) / 255.0).astype(np.float32)
    p = tmp_path / "img.pgm"
    write_pnm(p, Tensor(arr))
    back = read_pnm(p)
    assert back.dims == (1, 3, 4)
    assert np.allclose(back.data, arr, atol=1e-7)
