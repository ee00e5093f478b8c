"""Full-reference image quality: PSNR, SSIM and CIEDE2000.

SSIM is single-scale with an 11x11 Gaussian window (sigma 1.5), K1 = 0.01,
K2 = 0.03, dynamic range 1, evaluated on the valid (unpadded) region of each
channel and averaged.  CIEDE2000 converts sRGB to CIELAB (D65) after clamping
to [0, 1] and averages the per-pixel difference.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view

from .errors import DimensionError

PSNR_SENTINEL = 99.0
PSNR_IDENTICAL_MSE = 1e-12

SSIM_WIN = 11
SSIM_SIGMA = 1.5
SSIM_K1 = 0.01
SSIM_K2 = 0.03

# sRGB (D65) -> XYZ
_RGB2XYZ = np.array([[0.4124564, 0.3575761, 0.1804375],
                     [0.2126729, 0.7151522, 0.0721750],
                     [0.0193339, 0.1191920, 0.9503041]])
D65_WHITE = (0.95047, 1.0, 1.08883)
_LAB_EPS = 216.0 / 24389.0
_LAB_KAPPA = 24389.0 / 27.0


@dataclass
class MetricReport:
    psnr_db: float
    ssim: float
    ciede2000: float
    identical: bool = False

    def to_json(self):
        return {"psnr_db": self.psnr_db, "ssim": self.ssim, "ciede2000": self.ciede2000,
                "identical": self.identical}


def _same_shape(x, y):
    x = np.asarray(x, dtype=np.float64)
    y = np.asarray(y, dtype=np.float64)
    if x.shape != y.shape:
        raise DimensionError(f"image shapes differ: {x.shape} vs {y.shape}")
    return x, y


def psnr_detail(x, y, peak: float = 1.0):
    """Return ``(psnr_db, identical)``; identical images map to the 99 dB sentinel."""
    x, y = _same_shape(x, y)
    mse = float(np.mean((x - y) ** 2))
    if mse < PSNR_IDENTICAL_MSE:
        return PSNR_SENTINEL, True
    return float(10.0 * np.log10(peak * peak / mse)), False


def psnr(x, y, peak: float = 1.0) -> float:
    return psnr_detail(x, y, peak)[0]


def gaussian_window(size: int = SSIM_WIN, sigma: float = SSIM_SIGMA) -> np.ndarray:
    r = np.arange(size) - (size - 1) / 2
    g = np.exp(-(r * r) / (2 * sigma * sigma))
    return g / g.sum()


def _filter_valid(img, g):
    """Separable 'valid' correlation of a 2-D array with 1-D kernel ``g``."""
    k = len(g)
    tmp = sliding_window_view(img, k, axis=0) @ g
    return sliding_window_view(tmp, k, axis=1) @ g


def ssim(x, y, data_range: float = 1.0) -> float:
    x, y = _same_shape(x, y)
    if x.ndim == 2:
        x, y = x[..., None], y[..., None]
    if min(x.shape[:2]) < SSIM_WIN:
        raise DimensionError(f"SSIM needs at least {SSIM_WIN}x{SSIM_WIN} pixels, got {x.shape[:2]}")
    g = gaussian_window()
    c1 = (SSIM_K1 * data_range) ** 2
    c2 = (SSIM_K2 * data_range) ** 2
    vals = []
    for ch in range(x.shape[2]):
        a, b = x[..., ch], y[..., ch]
        mu_a = _filter_valid(a, g)
        mu_b = _filter_valid(b, g)
        var_a = _filter_valid(a * a, g) - mu_a * mu_a
        var_b = _filter_valid(b * b, g) - mu_b * mu_b
        cov = _filter_valid(a * b, g) - mu_a * mu_b
        num = (2 * mu_a * mu_b + c1) * (2 * cov + c2)
        den = (mu_a * mu_a + mu_b * mu_b + c1) * (var_a + var_b + c2)
        vals.append(np.mean(num / den))
    return float(np.mean(vals))


def srgb_to_lab(x) -> np.ndarray:
    """sRGB in [0, 1] (clamped first) to CIELAB under D65."""
    rgb = np.clip(np.asarray(x, dtype=np.float64), 0.0, 1.0)
    lin = np.where(rgb <= 0.04045, rgb / 12.92, ((rgb + 0.055) / 1.055) ** 2.4)
    xyz = lin @ _RGB2XYZ.T / np.asarray(D65_WHITE)
    f = np.where(xyz > _LAB_EPS, np.cbrt(xyz), (_LAB_KAPPA * xyz + 16.0) / 116.0)
    L = 116.0 * f[..., 1] - 16.0
    a = 500.0 * (f[..., 0] - f[..., 1])
    b = 200.0 * (f[..., 1] - f[..., 2])
    return np.stack([L, a, b], axis=-1)


def ciede2000(lab1, lab2, kL: float = 1.0, kC: float = 1.0, kH: float = 1.0) -> np.ndarray:
    """Per-pixel CIEDE2000 difference of two Lab arrays (last axis = L, a, b)."""
    lab1, lab2 = _same_shape(lab1, lab2)
    L1, a1, b1 = lab1[..., 0], lab1[..., 1], lab1[..., 2]
    L2, a2, b2 = lab2[..., 0], lab2[..., 1], lab2[..., 2]

    c_bar = 0.5 * (np.hypot(a1, b1) + np.hypot(a2, b2))
    c7 = c_bar ** 7
    g = 0.5 * (1.0 - np.sqrt(c7 / (c7 + 25.0 ** 7)))
    a1p = (1.0 + g) * a1
    a2p = (1.0 + g) * a2
    c1p = np.hypot(a1p, b1)
    c2p = np.hypot(a2p, b2)
    h1p = np.degrees(np.arctan2(b1, a1p)) % 360.0
    h2p = np.degrees(np.arctan2(b2, a2p)) % 360.0
    # achromatic colours have undefined hue; the formula sets it to 0
    h1p = np.where((a1p == 0) & (b1 == 0), 0.0, h1p)
    h2p = np.where((a2p == 0) & (b2 == 0), 0.0, h2p)

    dLp = L2 - L1
    dCp = c2p - c1p
    chroma_zero = (c1p * c2p) == 0
    dh = h2p - h1p
    dh = np.where(dh > 180.0, dh - 360.0, np.where(dh < -180.0, dh + 360.0, dh))
    dh = np.where(chroma_zero, 0.0, dh)
    dHp = 2.0 * np.sqrt(c1p * c2p) * np.sin(np.radians(dh) / 2.0)

    L_bar = 0.5 * (L1 + L2)
    c_bar_p = 0.5 * (c1p + c2p)
    h_sum = h1p + h2p
    h_bar = np.where(np.abs(h1p - h2p) <= 180.0, 0.5 * h_sum,
                     np.where(h_sum < 360.0, 0.5 * (h_sum + 360.0), 0.5 * (h_sum - 360.0)))
    h_bar = np.where(chroma_zero, h_sum, h_bar)

    t = (1.0 - 0.17 * np.cos(np.radians(h_bar - 30.0)) + 0.24 * np.cos(np.radians(2.0 * h_bar))
         + 0.32 * np.cos(np.radians(3.0 * h_bar + 6.0)) - 0.20 * np.cos(np.radians(4.0 * h_bar - 63.0)))
    d_theta = 30.0 * np.exp(-(((h_bar - 275.0) / 25.0) ** 2))
    cb7 = c_bar_p ** 7
    r_c = 2.0 * np.sqrt(cb7 / (cb7 + 25.0 ** 7))
    l50 = (L_bar - 50.0) ** 2
    s_l = 1.0 + 0.015 * l50 / np.sqrt(20.0 + l50)
    s_c = 1.0 + 0.045 * c_bar_p
    s_h = 1.0 + 0.015 * c_bar_p * t
    r_t = -np.sin(np.radians(2.0 * d_theta)) * r_c

    tl = dLp / (kL * s_l)
    tc = dCp / (kC * s_c)
    th = dHp / (kH * s_h)
    return np.sqrt(tl * tl + tc * tc + th * th + r_t * tc * th)


def ciede2000_image(x, y) -> float:
    """Mean CIEDE2000 between two sRGB images."""
    x, y = _same_shape(x, y)
    return float(np.mean(ciede2000(srgb_to_lab(x), srgb_to_lab(y))))


def compare(x, y, peak: float = 1.0) -> MetricReport:
    p, identical = psnr_detail(x, y, peak)
    return MetricReport(psnr_db=p, ssim=ssim(x, y), ciede2000=ciede2000_image(x, y), identical=identical)
