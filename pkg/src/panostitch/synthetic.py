"""Synthetic scenes: textured spherical panoramas rendered into pinhole views.

Rendering samples a ground-truth equirectangular image along every view
pixel's ray, the opposite direction of stitching, so a stitched result can
be compared against the panorama it came from.
"""

from __future__ import annotations

import numpy as np
from scipy import ndimage

from .bundle import MatchSet, PairMatches
from .geometry import Camera, Intrinsics, pixel_to_ray, project_rays, rotation_from_ypr
from .projection import Equirect, bilinear_sample, to_float_image


def textured_erp(width: int = 2048, height: int = 1024, seed: int = 0, blur: float = 3.0):
    """Smooth coloured noise panorama, periodic in longitude, values in [0, 1]."""
    if width != 2 * height:
        raise ValueError("equirectangular texture needs W = 2H")
    rng = np.random.default_rng(seed)
    out = np.empty((height, width, 3))
    for c in range(3):
        fine = ndimage.gaussian_filter(rng.random((height, width)), blur, mode=("nearest", "wrap"))
        coarse = ndimage.gaussian_filter(rng.random((height, width)), 8 * blur,
                                         mode=("nearest", "wrap"))
        a = (fine - fine.mean()) / fine.std() + 0.5 * (coarse - coarse.mean()) / coarse.std()
        out[..., c] = a
    out = (out - out.min()) / (out.max() - out.min())
    return 0.1 + 0.8 * out


def ring_poses(n: int, spacing_deg: float, pitch_deg: float = 0.0):
    """World-to-camera rotations yawed in steps of ``spacing_deg``."""
    return [rotation_from_ypr(np.radians(k * spacing_deg), np.radians(pitch_deg), 0.0)
            for k in range(n)]


def read_poses(path):
    """``yaw pitch roll`` lines in degrees (``#`` comments) to rotations."""
    poses = []
    with open(path) as fh:
        for lineno, line in enumerate(fh, 1):
            line = line.split("#", 1)[0].strip()
            if not line:
                continue
            vals = line.replace(",", " ").split()
            if len(vals) not in (1, 2, 3):
                raise ValueError(f"{path}:{lineno}: expected 'yaw [pitch [roll]]' in degrees")
            ypr = [float(v) for v in vals] + [0.0] * (3 - len(vals))
            poses.append(rotation_from_ypr(*np.radians(ypr)))
    if not poses:
        raise ValueError(f"{path}: no poses")
    return poses


def sample_erp(erp, d):
    """Bilinear lookup of world directions ``d`` in an equirectangular image, wrapping in longitude."""
    erp = to_float_image(erp)
    H, W = erp.shape[:2]
    u, v, _ = Equirect().dir_to_pixel(d, W, H)
    # one wrapped column on each side so u in [-0.5, W - 0.5] stays interior
    padded = np.concatenate([erp[:, -1:], erp, erp[:, :1]], axis=1)
    x = np.mod(u + 0.5, W) - 0.5 + 1.0
    y = np.clip(v, 0.0, H - 1.0)
    out, _ = bilinear_sample(padded, x, y)
    return out


def render_synthetic_scene(ground_truth_erp, poses, intrinsics: Intrinsics):
    """Render one view per rotation in ``poses``; returns ``(images, cameras)``."""
    K = intrinsics
    v, u = np.mgrid[0:K.height, 0:K.width].astype(float)
    pix = np.stack([u, v], -1)
    images, cameras = [], []
    for R in poses:
        cam = Camera(K, R)
        images.append(sample_erp(ground_truth_erp, pixel_to_ray(cam, pix)))
        cameras.append(cam)
    return images, cameras


def synthetic_matches(cameras, per_pair: int = 50, seed: int = 0, pairs=None, margin: float = 0.0):
    """Noiseless matches between overlapping cameras.

    Points are drawn uniformly in camera ``i`` and kept when they land inside
    camera ``j``. ``pairs`` defaults to every pair with some overlap.
    """
    rng = np.random.default_rng(seed)
    n = len(cameras)
    if pairs is None:
        pairs = [(i, j) for i in range(n) for j in range(i + 1, n)]
    out = []
    for i, j in pairs:
        Ki, Kj = cameras[i].intrinsics, cameras[j].intrinsics
        got = []
        for _ in range(200):
            x = np.c_[rng.uniform(margin, Ki.width - 1 - margin, 4 * per_pair),
                      rng.uniform(margin, Ki.height - 1 - margin, 4 * per_pair)]
            px, front = project_rays(cameras[j], pixel_to_ray(cameras[i], x))
            ok = front & (px[:, 0] >= margin) & (px[:, 0] <= Kj.width - 1 - margin) \
                & (px[:, 1] >= margin) & (px[:, 1] <= Kj.height - 1 - margin)
            got.extend(zip(x[ok], px[ok]))
            if len(got) >= per_pair:
                break
        if len(got) >= per_pair:
            got = got[:per_pair]
            out.append(PairMatches(i, j, [g[0] for g in got], [g[1] for g in got]))
    return MatchSet(out)
