"""Compositing warped layers under seam masks: feathering and multiband blending."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy import ndimage

from .projection import mask_bbox

_BINOMIAL = np.array([1.0, 4.0, 6.0, 4.0, 1.0]) / 16.0


@dataclass(frozen=True)
class BlendConfig:
    mode: str = "feather"
    bands: int | None = None           # multiband only; None picks a default
    feather_sharpness: float = 1.0
    feather_radius: float = 16.0       # pixels a layer's weight reaches past its seam
    background: tuple = (0.0, 0.0, 0.0)

    def __post_init__(self):
        if self.mode not in ("feather", "multiband"):
            raise ValueError(f"unknown blend mode {self.mode!r}")
        if self.bands is not None and self.bands < 1:
            raise ValueError("bands must be >= 1")
        if not self.feather_sharpness > 0:
            raise ValueError("feather_sharpness must be positive")


def max_bands(shape) -> int:
    return max(1, int(np.floor(np.log2(min(shape)))))


def default_bands(valid) -> int:
    """``min(5, floor(log2(w)))`` for the narrowest pairwise overlap ``w``."""
    valid = np.asarray(valid, bool)
    widths = []
    for i in range(len(valid)):
        for j in range(i + 1, len(valid)):
            box = mask_bbox(valid[i] & valid[j])
            if box is not None:
                widths.append(min(box[1] - box[0], box[3] - box[2]))
    if not widths:
        return 1
    return int(max(1, min(5, np.floor(np.log2(max(min(widths), 1))), max_bands(valid.shape[1:]))))


def order_free_sum(stack) -> np.ndarray:
    """Sum over axis 0 whose rounding does not depend on the order of the terms.

    With at most two nonzero terms per position the plain sum is already
    symmetric; positions with more are summed after sorting.
    """
    stack = np.asarray(stack)
    total = stack.sum(0)
    crowded = np.count_nonzero(stack, axis=0) > 2
    if crowded.any():
        total[crowded] = np.sort(stack[:, crowded], axis=0).sum(0)
    return total


def feather_weights(masks, valid, sharpness: float = 1.0, radius: float = 16.0) -> np.ndarray:
    """Per-layer weights ``d_i**s / sum_j d_j**s`` that sum to 1 on covered pixels.

    ``d_i`` grows with the signed distance from the boundary of ``mask_i``
    (positive inside, negative outside), offset by ``radius`` so a layer
    keeps some weight up to ``radius`` pixels beyond its seam, and is capped
    by the distance to the edge of the layer's valid region.
    """
    masks = np.asarray(masks, bool)
    valid = np.asarray(valid, bool)
    d = np.zeros(masks.shape)
    for i, (m, v) in enumerate(zip(masks, valid)):
        box = mask_bbox(v)
        if box is None or not (m & v).any():
            continue
        # everything outside the valid bbox is zero; a one-pixel pad keeps distances exact
        y0, y1, x0, x1 = box
        mc = np.pad(m[y0:y1, x0:x1] & v[y0:y1, x0:x1], 1)
        vc = np.pad(v[y0:y1, x0:x1], 1)
        inside = ndimage.distance_transform_edt(mc)
        outside = ndimage.distance_transform_edt(~mc)
        signed = np.where(mc, inside - 0.5, 0.5 - outside)
        to_edge = ndimage.distance_transform_edt(vc)
        di = np.where(vc, np.clip(np.minimum(radius + signed, to_edge), 0.0, None), 0.0)
        d[i, y0:y1, x0:x1] = di[1:-1, 1:-1]
    d **= sharpness
    total = order_free_sum(d)
    return np.divide(d, total, out=np.zeros_like(d), where=total > 0)


def _coverage(layers):
    return np.any([l.valid for l in layers], axis=0)


def feather_blend(layers, masks, config: BlendConfig = BlendConfig()):
    """Convex per-pixel combination of layer colours; returns ``(image, coverage)``."""
    valid = np.stack([l.valid for l in layers])
    w = feather_weights(masks, valid, config.feather_sharpness, config.feather_radius)
    out = np.stack([order_free_sum(np.stack([wi * layer.color[..., c]
                                             for wi, layer in zip(w, layers)]))
                    for c in range(3)], axis=-1)
    coverage = valid.any(0)
    out[~coverage] = config.background
    return out, coverage


def _blur(img, weight_scale=1.0):
    k = _BINOMIAL * weight_scale
    out = ndimage.convolve1d(img, k, axis=0, mode="mirror")
    return ndimage.convolve1d(out, k, axis=1, mode="mirror")


def _down(img):
    return _blur(img)[::2, ::2]


def _up(img, shape):
    z = np.zeros(shape[:2] + img.shape[2:])
    m = np.zeros(shape[:2])
    z[::2, ::2] = img
    m[::2, ::2] = 1.0
    num = _blur(z)
    den = _blur(m)
    if img.ndim == 3:
        den = den[..., None]
    return num / den


def build_laplacian_pyramid(image, bands: int):
    """Laplacian bands (finest first) followed by the coarse Gaussian residual."""
    image = np.asarray(image, float)
    if bands < 1:
        raise ValueError("bands must be >= 1")
    if bands > max_bands(image.shape[:2]):
        raise ValueError(f"image {image.shape[1]}x{image.shape[0]} too small for {bands} bands")
    pyr = []
    g = image
    for _ in range(bands - 1):
        nxt = _down(g)
        pyr.append(g - _up(nxt, g.shape))
        g = nxt
    pyr.append(g)
    return pyr


def gaussian_pyramid(image, bands: int):
    pyr = [np.asarray(image, float)]
    for _ in range(bands - 1):
        pyr.append(_down(pyr[-1]))
    return pyr


def collapse_pyramid(pyr):
    img = pyr[-1]
    for lap in reversed(pyr[:-1]):
        img = lap + _up(img, lap.shape)
    return img


def _extend_colors(color, valid):
    if valid.all() or not valid.any():
        return np.asarray(color, float)
    _, (iy, ix) = ndimage.distance_transform_edt(~valid, return_indices=True)
    return np.asarray(color, float)[iy, ix]


def multiband_blend(layers, masks, config: BlendConfig = BlendConfig(mode="multiband")):
    """Blend Laplacian bands under Gaussian pyramids of the seam masks.

    Colours are extended by their nearest valid value before pyramid
    construction; each band is normalised by the summed mask weights.
    Returns ``(image, coverage)`` with the image clamped to [0, 1].
    """
    masks = np.asarray(masks, bool)
    valid = np.stack([l.valid for l in layers])
    bands = config.bands or default_bands(valid)
    bands = min(bands, max_bands(valid.shape[1:]))
    acc = None
    wsum = None
    for layer, m in zip(layers, masks):
        if not m.any():
            continue
        lap = build_laplacian_pyramid(_extend_colors(layer.color, layer.valid), bands)
        gm = gaussian_pyramid(m.astype(float), bands)
        if acc is None:
            acc = [np.zeros_like(l) for l in lap]
            wsum = [np.zeros_like(g) for g in gm]
        for k in range(bands):
            acc[k] += gm[k][..., None] * lap[k]
            wsum[k] += gm[k]
    coverage = valid.any(0)
    if acc is None:
        out = np.zeros(valid.shape[1:] + (3,))
    else:
        for k in range(bands):
            w = wsum[k][..., None]
            acc[k] = np.divide(acc[k], w, out=np.zeros_like(acc[k]), where=w > 1e-12)
        out = np.clip(collapse_pyramid(acc), 0.0, 1.0)
    out[~coverage] = config.background
    return out, coverage


def blend(layers, masks, config: BlendConfig = BlendConfig()):
    if config.mode == "feather":
        return feather_blend(layers, masks, config)
    return multiband_blend(layers, masks, config)
