"""Masked PSNR and SSIM for images in [0, 1]."""

from __future__ import annotations

import numpy as np
from scipy import ndimage

from .projection import mask_bbox

PSNR_DISPLAY_CAP = 99.0
SSIM_SIGMA = 1.5
SSIM_WINDOW = 11
C1 = 0.01 ** 2
C2 = 0.03 ** 2


def _prep(a, b, mask):
    a = np.asarray(a, float)
    b = np.asarray(b, float)
    if a.shape != b.shape:
        raise ValueError(f"shape mismatch {a.shape} vs {b.shape}")
    if a.ndim == 2:
        a, b = a[..., None], b[..., None]
    if mask is None:
        mask = np.ones(a.shape[:2], bool)
    mask = np.asarray(mask, bool)
    if mask.shape != a.shape[:2]:
        raise ValueError("mask shape does not match the images")
    if not mask.any():
        raise ValueError("empty mask")
    return a, b, mask


def psnr(a, b, mask=None, peak: float = 1.0) -> float:
    """PSNR in dB over masked pixels; ``inf`` for identical images."""
    a, b, mask = _prep(a, b, mask)
    mse = float(np.mean((a[mask] - b[mask]) ** 2))
    if mse == 0:
        return float("inf")
    return float(10.0 * np.log10(peak * peak / mse))


def format_psnr(value: float) -> str:
    return f"{min(value, PSNR_DISPLAY_CAP):.2f}"


def ssim(a, b, mask=None) -> float:
    """Mean SSIM over masked pixels with an 11x11 Gaussian window (sigma 1.5).

    Local statistics use only masked pixels (mask-normalised filtering);
    colour images average the per-channel values.
    """
    a, b, mask = _prep(a, b, mask)
    y0, y1, x0, x1 = mask_bbox(mask)
    a, b, mask = a[y0:y1, x0:x1], b[y0:y1, x0:x1], mask[y0:y1, x0:x1]
    m = mask.astype(float)
    # truncate so the kernel spans exactly 11 taps
    trunc = (SSIM_WINDOW // 2) / SSIM_SIGMA

    def G(x):
        return ndimage.gaussian_filter(x, SSIM_SIGMA, mode="constant", truncate=trunc)

    wsum = G(m)[mask]
    vals = []
    for c in range(a.shape[2]):
        x = a[..., c] * m
        y = b[..., c] * m
        mx = G(x)[mask] / wsum
        my = G(y)[mask] / wsum
        sxx = G(x * x)[mask] / wsum - mx * mx
        syy = G(y * y)[mask] / wsum - my * my
        sxy = G(x * y)[mask] / wsum - mx * my
        s = ((2 * mx * my + C1) * (2 * sxy + C2)) / ((mx * mx + my * my + C1) * (sxx + syy + C2))
        vals.append(s.mean())
    return float(np.mean(vals))
