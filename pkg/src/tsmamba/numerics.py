"""Dense-tensor substrate and neural building blocks for the forward pipeline.

Tensors are thin wrappers around row-major float32 numpy arrays.  All
reductions use fixed, documented summation orders so that outputs are
bit-identical across runs and thread counts.
"""

from __future__ import annotations

import math
import struct
from dataclasses import dataclass, field

import numpy as np

__all__ = [
    "Tensor",
    "ModelConfig",
    "conv2d",
    "residual_block",
    "pixel_shuffle",
    "bicubic_upsample",
    "layer_norm",
    "psnr",
    "ssim",
    "write_tstf",
    "read_tstf",
    "write_pnm",
    "read_pnm",
]

PSNR_CAP_DB = 100.0


class Tensor:
    """Dense row-major float32 array with explicit dims."""

    __slots__ = ("data",)

    def __init__(self, data):
        arr = np.asarray(data, dtype=np.float32)
        self.data = np.ascontiguousarray(arr)

    @property
    def dims(self):
        return tuple(self.data.shape)

    @classmethod
    def zeros(cls, *dims):
        return cls(np.zeros(dims, dtype=np.float32))

    @classmethod
    def full(cls, dims, value):
        return cls(np.full(dims, value, dtype=np.float32))

    def copy(self):
        return Tensor(self.data.copy())

    def __repr__(self):
        return f"Tensor(dims={self.dims})"


@dataclass
class ModelConfig:
    """Architecture constants; defaults follow the experimental setup."""

    n1_res_blocks: int = 2
    n2_res_blocks: int = 13
    channels: int = 32
    token_size: int = 4
    window_size: int = 8           # in tokens
    s_selected: int = 3
    scale: int = 4
    temporal_window: int = 15
    state_dim: int = 8

    def validate(self):
        if self.s_selected > self.temporal_window - 1:
            raise ValueError(
                "s_selected must not exceed temporal_window - 1 "
                f"(got s={self.s_selected}, T={self.temporal_window})"
            )
        for name in ("n1_res_blocks", "n2_res_blocks", "channels", "token_size",
                     "window_size", "scale", "temporal_window", "state_dim"):
            if getattr(self, name) < 1:
                raise ValueError(f"{name} must be positive")
        return self


def _as_array(x):
    return x.data if isinstance(x, Tensor) else np.asarray(x, dtype=np.float32)


def conv2d(inp, weights, bias=None, stride=1, padding=0):
    """Cross-correlation of [Cin,H,W] with [Cout,Cin,kh,kw] -> [Cout,H',W'].

    The reduction per output element runs over (cin, kh, kw) in that fixed
    order, accumulating in float32 like the quadruple-loop reference.
    """
    x = _as_array(inp)
    w = _as_array(weights)
    if x.ndim != 3 or w.ndim != 4:
        raise ValueError("conv2d expects input [Cin,H,W] and weights [Cout,Cin,kh,kw]")
    cin, h, wdt = x.shape
    cout, cin_w, kh, kw = w.shape
    if cin != cin_w:
        raise ValueError(f"channel mismatch: input {cin} vs weights {cin_w}")
    if h + 2 * padding < kh or wdt + 2 * padding < kw:
        raise ValueError("kernel does not fit inside the padded input")
    if padding:
        x = np.pad(x, ((0, 0), (padding, padding), (padding, padding)))
    ho = (x.shape[1] - kh) // stride + 1
    wo = (x.shape[2] - kw) // stride + 1
    out = np.zeros((cout, ho, wo), dtype=np.float32)
    # Accumulate one (cin, kh, kw) tap at a time: this fixes the summation
    # order per output element regardless of any outer parallelism.
    for ci in range(cin):
        for i in range(kh):
            for j in range(kw):
                patch = x[ci, i:i + stride * ho:stride, j:j + stride * wo:stride]
                for co in range(cout):
                    out[co] += w[co, ci, i, j] * patch
    if bias is not None:
        out += _as_array(bias).reshape(cout, 1, 1)
    return Tensor(out)


def relu(x):
    return Tensor(np.maximum(_as_array(x), 0.0))


def residual_block(inp, w1, b1, w2, b2):
    """conv3x3 -> relu -> conv3x3, plus identity skip; shape preserving."""
    x = inp if isinstance(inp, Tensor) else Tensor(inp)
    y = conv2d(x, w1, b1, padding=1)
    y = relu(y)
    y = conv2d(y, w2, b2, padding=1)
    return Tensor(x.data + y.data)


def pixel_shuffle(inp, r):
    """Depth-to-space: [C*r*r, H, W] -> [C, r*H, r*W]."""
    x = _as_array(inp)
    if x.ndim != 3:
        raise ValueError("pixel_shuffle expects [C*r*r, H, W]")
    crr, h, w = x.shape
    if r < 1 or crr % (r * r) != 0:
        raise ValueError(f"channel count {crr} not divisible by r^2={r * r}")
    c = crr // (r * r)
    y = x.reshape(c, r, r, h, w).transpose(0, 3, 1, 4, 2).reshape(c, h * r, w * r)
    return Tensor(np.ascontiguousarray(y))


def _cubic_kernel(t, a=-0.5):
    t = abs(float(t))
    if t <= 1.0:
        return (a + 2.0) * t ** 3 - (a + 3.0) * t ** 2 + 1.0
    if t < 2.0:
        return a * t ** 3 - 5.0 * a * t ** 2 + 8.0 * a * t - 4.0 * a
    return 0.0


def _bicubic_axis_weights(n_in, scale):
    """Sample positions (align_corners=false) and 4-tap weights per output row."""
    taps = []
    for i_out in range(n_in * scale):
        src = (i_out + 0.5) / scale - 0.5
        base = math.floor(src)
        frac = src - base
        idx = []
        wts = []
        for k in range(-1, 3):
            j = min(max(base + k, 0), n_in - 1)   # edge replicate
            idx.append(j)
            wts.append(_cubic_kernel(frac - k))
        s = sum(wts)
        taps.append((idx, [w / s for w in wts]))
    return taps


def bicubic_upsample(inp, scale):
    """Separable cubic-convolution upsampling, a=-0.5, edge replicate."""
    if int(scale) != scale or scale < 1:
        raise ValueError("scale must be a positive integer")
    scale = int(scale)
    x = _as_array(inp)
    if scale == 1:
        return Tensor(x.copy())
    if x.ndim != 3:
        raise ValueError("bicubic_upsample expects [C,H,W]")
    c, h, w = x.shape
    rows = _bicubic_axis_weights(h, scale)
    cols = _bicubic_axis_weights(w, scale)
    # rows first, then columns; float64 intermediates, rounded once at the end
    xd = x.astype(np.float64)
    tmp = np.zeros((c, h * scale, w), dtype=np.float64)
    for i_out, (idx, wts) in enumerate(rows):
        for j, wt in zip(idx, wts):
            tmp[:, i_out, :] += wt * xd[:, j, :]
    out = np.zeros((c, h * scale, w * scale), dtype=np.float64)
    for j_out, (idx, wts) in enumerate(cols):
        for j, wt in zip(idx, wts):
            out[:, :, j_out] += wt * tmp[:, :, j]
    return Tensor(out.astype(np.float32))


def layer_norm(inp, gamma=None, beta=None, eps=1e-5):
    """Normalize over the trailing channel axis per site, then affine."""
    x = _as_array(inp)
    mean = x.mean(axis=-1, keepdims=True, dtype=np.float64)
    var = ((x.astype(np.float64) - mean) ** 2).mean(axis=-1, keepdims=True)
    y = (x - mean) / np.sqrt(var + eps)
    y = y.astype(np.float32)
    if gamma is not None:
        y = y * _as_array(gamma)
    if beta is not None:
        y = y + _as_array(beta)
    return Tensor(y)


def psnr(a, b, peak=1.0):
    """10*log10(peak^2/MSE); identical inputs report the 100 dB cap."""
    x, y = _as_array(a), _as_array(b)
    if x.shape != y.shape:
        raise ValueError(f"dim mismatch: {x.shape} vs {y.shape}")
    mse = float(np.mean((x.astype(np.float64) - y.astype(np.float64)) ** 2))
    if mse == 0.0:
        return PSNR_CAP_DB
    return min(10.0 * math.log10(peak * peak / mse), PSNR_CAP_DB)


def _gaussian_window(size=11, sigma=1.5):
    ax = np.arange(size, dtype=np.float64) - (size - 1) / 2.0
    g = np.exp(-(ax ** 2) / (2.0 * sigma ** 2))
    g /= g.sum()
    return np.outer(g, g)


def _filter2_valid(img, win):
    """2-D 'valid' correlation of a 2-D image with an 11x11 window."""
    k = win.shape[0]
    h, w = img.shape
    out = np.zeros((h - k + 1, w - k + 1), dtype=np.float64)
    for i in range(k):
        for j in range(k):
            out += win[i, j] * img[i:i + h - k + 1, j:j + w - k + 1]
    return out


def ssim(a, b, peak=1.0):
    """Mean SSIM with the 11x11 sigma-1.5 Gaussian window, K1=.01, K2=.03.

    Multi-channel inputs are averaged channel-by-channel.
    """
    x, y = _as_array(a).astype(np.float64), _as_array(b).astype(np.float64)
    if x.shape != y.shape:
        raise ValueError(f"dim mismatch: {x.shape} vs {y.shape}")
    if x.ndim == 2:
        x, y = x[None], y[None]
    if x.ndim != 3:
        raise ValueError("ssim expects [H,W] or [C,H,W]")
    if x.shape[1] < 11 or x.shape[2] < 11:
        raise ValueError("ssim needs images at least 11x11")
    c1 = (0.01 * peak) ** 2
    c2 = (0.03 * peak) ** 2
    win = _gaussian_window()
    vals = []
    for ch in range(x.shape[0]):
        mu_x = _filter2_valid(x[ch], win)
        mu_y = _filter2_valid(y[ch], win)
        xx = _filter2_valid(x[ch] * x[ch], win) - mu_x * mu_x
        yy = _filter2_valid(y[ch] * y[ch], win) - mu_y * mu_y
        xy = _filter2_valid(x[ch] * y[ch], win) - mu_x * mu_y
        num = (2 * mu_x * mu_y + c1) * (2 * xy + c2)
        den = (mu_x ** 2 + mu_y ** 2 + c1) * (xx + yy + c2)
        vals.append(float(np.mean(num / den)))
    return float(np.mean(vals))


# --- TSTF file format -------------------------------------------------------

TSTF_MAGIC = b"TSTF"
TSTF_VERSION = 1


def write_tstf(path, tensor):
    """Magic 'TSTF', u32 version=1, u8 dtype=0, u8 ndim, ndim*u64 dims, LE f32."""
    arr = _as_array(tensor)
    with open(path, "wb") as f:
        f.write(TSTF_MAGIC)
        f.write(struct.pack("<I", TSTF_VERSION))
        f.write(struct.pack("<BB", 0, arr.ndim))
        for d in arr.shape:
            f.write(struct.pack("<Q", d))
        f.write(arr.astype("<f4").tobytes(order="C"))


def read_tstf(path):
    with open(path, "rb") as f:
        magic = f.read(4)
        if magic != TSTF_MAGIC:
            raise ValueError(f"{path}: bad magic {magic!r}")
        (version,) = struct.unpack("<I", f.read(4))
        if version != TSTF_VERSION:
            raise ValueError(f"{path}: unsupported TSTF version {version}")
        dtype, ndim = struct.unpack("<BB", f.read(2))
        if dtype != 0:
            raise ValueError(f"{path}: unsupported dtype {dtype}")
        dims = [struct.unpack("<Q", f.read(8))[0] for _ in range(ndim)]
        count = int(np.prod(dims)) if dims else 1
        payload = f.read(4 * count)
        if len(payload) != 4 * count:
            raise ValueError(f"{path}: truncated payload")
        arr = np.frombuffer(payload, dtype="<f4").reshape(dims)
    return Tensor(arr.copy())


# --- PGM / PPM --------------------------------------------------------------

def write_pnm(path, tensor):
    """Write [1,H,W] as binary PGM (P5) or [3,H,W] as PPM (P6), 8-bit."""
    arr = _as_array(tensor)
    if arr.ndim == 2:
        arr = arr[None]
    if arr.ndim != 3 or arr.shape[0] not in (1, 3):
        raise ValueError("write_pnm expects [1,H,W] or [3,H,W]")
    chans, h, w = arr.shape
    pix = np.clip(np.rint(arr * 255.0), 0, 255).astype(np.uint8)
    header = (b"P5" if chans == 1 else b"P6") + f"\n{w} {h}\n255\n".encode()
    with open(path, "wb") as f:
        f.write(header)
        if chans == 1:
            f.write(pix[0].tobytes())
        else:
            f.write(pix.transpose(1, 2, 0).tobytes())


def read_pnm(path):
    """Read binary PGM/PPM into a [C,H,W] float tensor in [0,1]."""
    with open(path, "rb") as f:
        blob = f.read()
    if blob[:2] not in (b"P5", b"P6"):
        raise ValueError(f"{path}: not a binary PGM/PPM")
    chans = 1 if blob[:2] == b"P5" else 3
    # parse header tokens (magic, width, height, maxval), skipping comments
    tokens = []
    i = 2
    while len(tokens) < 3:
        while i < len(blob) and blob[i:i + 1].isspace():
            i += 1
        if blob[i:i + 1] == b"#":
            while i < len(blob) and blob[i:i + 1] != b"\n":
                i += 1
            continue
        j = i
        while j < len(blob) and not blob[j:j + 1].isspace():
            j += 1
        tokens.append(blob[i:j])
        i = j
    i += 1  # single whitespace after maxval
    w, h, maxval = int(tokens[0]), int(tokens[1]), int(tokens[2])
    if maxval != 255:
        raise ValueError(f"{path}: only 8-bit PNM supported")
    count = w * h * chans
    pix = np.frombuffer(blob[i:i + count], dtype=np.uint8)
    if pix.size != count:
        raise ValueError(f"{path}: truncated pixel data")
    if chans == 1:
        arr = pix.reshape(1, h, w)
    else:
        arr = pix.reshape(h, w, 3).transpose(2, 0, 1)
    return Tensor(arr.astype(np.float32) / 255.0)
