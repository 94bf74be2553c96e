"""Test-time video perturbations: seven families at five severity levels.

Every corruption is a pure function of (input video, kind, severity, seed)
and outputs 8-bit RGB clipped to [0, 255]. Severity schedules are fixed here
and ordered mild to destructive; random draws are arranged so higher
severities reuse the same underlying noise/positions, which makes distortion
non-decreasing in severity pointwise wherever that is meaningful.

These transforms are evaluation-only; the training pipeline never imports
this module.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .rng import Rng

KINDS = ("saturation", "contrast", "block", "noise", "blur", "pixelation", "compression")

SEVERITY = {
    "saturation": (0.7, 0.55, 0.4, 0.25, 0.1),       # HSV saturation multiplier
    "contrast": (0.85, 0.725, 0.6, 0.475, 0.35),     # x' = (x-128)*c + 128
    "block": (1, 2, 4, 8, 16),                       # count of 32x32 gray squares
    "noise": (0.01, 0.02, 0.05, 0.1, 0.2),           # gaussian sigma, fraction of 255
    "blur": (0.5, 1.0, 2.0, 3.0, 5.0),               # gaussian sigma in pixels
    "pixelation": (0.5, 0.4, 0.3, 0.25, 0.2),        # downscale factor
    "compression": (50, 35, 25, 15, 10),             # block-DCT codec quality
}

BLOCK_SIZE = 32
BLOCK_FILL = 128


@dataclass(frozen=True)
class CorruptionSpec:
    kind: str
    severity: int
    seed: int = 0

    def __post_init__(self):
        if self.kind not in KINDS:
            raise ValueError(f"unknown corruption kind {self.kind!r}; kinds are {KINDS}")
        if not 1 <= self.severity <= 5:
            raise ValueError(f"severity must be in 1..5, got {self.severity}")

    @property
    def param(self):
        return SEVERITY[self.kind][self.severity - 1]


def _as_video(frames) -> np.ndarray:
    arr = np.asarray(frames)
    if arr.ndim != 4 or arr.shape[-1] != 3 or arr.dtype != np.uint8:
        raise ValueError(f"expected uint8 video [F, H, W, 3], got {arr.dtype} {list(arr.shape)}")
    return arr


def _to_u8(x: np.ndarray) -> np.ndarray:
    return np.clip(np.round(x), 0, 255).astype(np.uint8)


def rgb_to_hsv(rgb: np.ndarray) -> tuple:
    r, g, b = rgb[..., 0], rgb[..., 1], rgb[..., 2]
    v = np.max(rgb, axis=-1)
    c = v - np.min(rgb, axis=-1)
    s = np.where(v > 0, c / np.maximum(v, 1e-12), 0.0)
    with np.errstate(invalid="ignore", divide="ignore"):
        h = np.where(c > 0,
                     np.select(
                         [v == r, v == g],
                         [(g - b) / np.maximum(c, 1e-12) % 6.0,
                          (b - r) / np.maximum(c, 1e-12) + 2.0],
                         (r - g) / np.maximum(c, 1e-12) + 4.0,
                     ),
                     0.0)
    return h, s, v


def hsv_to_rgb(h: np.ndarray, s: np.ndarray, v: np.ndarray) -> np.ndarray:
    c = v * s
    x = c * (1.0 - np.abs(h % 2.0 - 1.0))
    m = v - c
    zeros = np.zeros_like(c)
    sector = np.floor(h).astype(int) % 6
    r = np.choose(sector, [c, x, zeros, zeros, x, c])
    g = np.choose(sector, [x, c, c, x, zeros, zeros])
    b = np.choose(sector, [zeros, zeros, x, c, c, x])
    return np.stack([r + m, g + m, b + m], axis=-1)


def gaussian_kernel1d(sigma: float) -> np.ndarray:
    """Normalized kernel of size 2*ceil(3*sigma)+1."""
    radius = int(np.ceil(3.0 * sigma))
    xs = np.arange(-radius, radius + 1, dtype=np.float64)
    k = np.exp(-(xs ** 2) / (2.0 * sigma ** 2))
    return k / k.sum()


def _blur_axis(img: np.ndarray, kernel: np.ndarray, axis: int) -> np.ndarray:
    radius = len(kernel) // 2
    pad = [(0, 0)] * img.ndim
    pad[axis] = (radius, radius)
    padded = np.pad(img, pad, mode="reflect")
    out = np.zeros_like(img, dtype=np.float64)
    for i, w in enumerate(kernel):
        sl = [slice(None)] * img.ndim
        sl[axis] = slice(i, i + img.shape[axis])
        out += w * padded[tuple(sl)]
    return out


def _area_weights(n_src: int, n_dst: int) -> np.ndarray:
    """Row-stochastic matrix averaging source pixels by interval overlap."""
    w = np.zeros((n_dst, n_src))
    ratio = n_src / n_dst
    for i in range(n_dst):
        lo, hi = i * ratio, (i + 1) * ratio
        j0, j1 = int(np.floor(lo)), int(np.ceil(hi))
        for j in range(j0, min(j1, n_src)):
            w[i, j] = min(hi, j + 1) - max(lo, j)
    return w / ratio


# JPEG luminance quantization base table, applied per channel by the
# built-in intra-frame codec.
_QUANT_BASE = np.array([
    [16, 11, 10, 16, 24, 40, 51, 61],
    [12, 12, 14, 19, 26, 58, 60, 55],
    [14, 13, 16, 24, 40, 57, 69, 56],
    [14, 17, 22, 29, 51, 87, 80, 62],
    [18, 22, 37, 56, 68, 109, 103, 77],
    [24, 35, 55, 64, 81, 104, 113, 92],
    [49, 64, 78, 87, 103, 121, 120, 101],
    [72, 92, 95, 98, 112, 100, 103, 99],
], dtype=np.float64)


def _quant_table(quality: int) -> np.ndarray:
    scale = 5000.0 / quality if quality < 50 else 200.0 - 2.0 * quality
    return np.clip(np.floor((_QUANT_BASE * scale + 50.0) / 100.0), 1, 255)


def _dct_matrix() -> np.ndarray:
    n = 8
    d = np.zeros((n, n))
    for i in range(n):
        for j in range(n):
            d[i, j] = np.sqrt((1 if i == 0 else 2) / n) * np.cos((2 * j + 1) * i * np.pi / (2 * n))
    return d


_DCT = _dct_matrix()


def _dct_codec(video: np.ndarray, quality: int) -> np.ndarray:
    qm = _quant_table(quality)
    f, h, w, c = video.shape
    ph = (-h) % 8
    pw = (-w) % 8
    x = np.pad(video.astype(np.float64) - 128.0,
               ((0, 0), (0, ph), (0, pw), (0, 0)), mode="edge")
    hb, wb = x.shape[1] // 8, x.shape[2] // 8
    blocks = x.reshape(f, hb, 8, wb, 8, c).transpose(0, 1, 3, 5, 2, 4)
    coeffs = np.einsum("ij,...jk,lk->...il", _DCT, blocks, _DCT)
    coeffs = np.round(coeffs / qm) * qm
    rec = np.einsum("ji,...jk,kl->...il", _DCT, coeffs, _DCT)
    rec = rec.transpose(0, 1, 4, 2, 5, 3).reshape(f, hb * 8, wb * 8, c)
    return _to_u8(rec[:, :h, :w] + 128.0)


def apply_corruption(frames: np.ndarray, spec: CorruptionSpec) -> np.ndarray:
    """Perturb an RGB video. Deterministic given spec (including its seed)."""
    video = _as_video(frames)
    f, h, w, _ = video.shape
    p = spec.param

    if spec.kind == "saturation":
        hh, ss, vv = rgb_to_hsv(video.astype(np.float64))
        return _to_u8(hsv_to_rgb(hh, ss * p, vv))

    if spec.kind == "contrast":
        return _to_u8((video.astype(np.float64) - 128.0) * p + 128.0)

    if spec.kind == "block":
        rng = Rng(spec.seed).substream("block")
        max_blocks = SEVERITY["block"][-1]
        ys = rng.integers(max_blocks, max(1, h - BLOCK_SIZE + 1))
        xs = rng.integers(max_blocks, max(1, w - BLOCK_SIZE + 1))
        out = video.copy()
        for y, x in zip(ys[:p], xs[:p]):
            out[:, y : y + BLOCK_SIZE, x : x + BLOCK_SIZE, :] = BLOCK_FILL
        return out

    if spec.kind == "noise":
        out = np.empty_like(video)
        for i in range(f):
            z = Rng(spec.seed).substream("noise", i).normal((h, w, 3)).astype(np.float64)
            out[i] = _to_u8(video[i].astype(np.float64) + 255.0 * p * z)
        return out

    if spec.kind == "blur":
        kernel = gaussian_kernel1d(p)
        out = _blur_axis(video.astype(np.float64), kernel, axis=1)
        out = _blur_axis(out, kernel, axis=2)
        return _to_u8(out)

    if spec.kind == "pixelation":
        h2 = max(1, int(round(h * p)))
        w2 = max(1, int(round(w * p)))
        wy = _area_weights(h, h2)
        wx = _area_weights(w, w2)
        small = np.einsum("ij,fjkc,lk->filc", wy, video.astype(np.float64), wx)
        # centre-aligned nearest neighbour so display pixels hit their own cell
        iy = np.minimum(((np.arange(h) + 0.5) * h2 / h).astype(np.int64), h2 - 1)
        ix = np.minimum(((np.arange(w) + 0.5) * w2 / w).astype(np.int64), w2 - 1)
        return _to_u8(small[:, iy][:, :, ix])

    if spec.kind == "compression":
        return _dct_codec(video, int(p))

    raise ValueError(f"unknown corruption kind {spec.kind!r}")


def psnr(a: np.ndarray, b: np.ndarray, peak: float = 255.0) -> float:
    """10*log10(peak^2 / MSE); +inf for identical inputs."""
    a = np.asarray(a, dtype=np.float64)
    b = np.asarray(b, dtype=np.float64)
    if a.shape != b.shape:
        raise ValueError(f"shape mismatch: {list(a.shape)} vs {list(b.shape)}")
    mse = float(np.mean((a - b) ** 2))
    if mse == 0:
        return float("inf")
    return 10.0 * np.log10(peak * peak / mse)
