"""End-to-end stitching: optional pose refinement, warping, local alignment,
seam labeling and blending, with per-stage timings and overlap metrics."""

from __future__ import annotations

import json
import logging
import os
import time
from dataclasses import dataclass, field

import numpy as np

from .blend import BlendConfig, blend
from .bundle import BundleConfig, optimize, residuals, ParamVector
from .meshwarp import MeshWarpConfig, refine_pair
from .metrics import format_psnr, psnr, ssim
from .projection import (Cylindrical, Equirect, PanoramaCanvas, Planar, Polyhedron,
                         ProjectionFormat, make_format, mask_bbox, warp_image)
from .scene import Scene, write_image
from .synthetic import sample_erp
from .seam import SeamProblem, initial_labels, labels_to_masks, solve_labels

log = logging.getLogger(__name__)

PLANAR_SPAN = np.radians(120.0)
CYLINDRICAL_SPAN = np.radians(200.0)


@dataclass(frozen=True)
class StitchConfig:
    projection: str = "erp"
    canvas: tuple = (2048, 1024)            # (width, height)
    projection_params: dict = field(default_factory=dict)
    blend: BlendConfig = BlendConfig()
    seam: bool = True
    meshwarp: MeshWarpConfig | None = None  # None disables local alignment
    bundle: BundleConfig | None = None      # None disables pose refinement
    workers: int = 1
    debug_dir: str | None = None


@dataclass
class OverlapMetrics:
    i: int
    j: int
    pixels: int
    psnr: float
    ssim: float


@dataclass
class EvalReport:
    overlaps: list = field(default_factory=list)
    gt_psnr: float | None = None
    gt_ssim: float | None = None
    timings: dict = field(default_factory=dict)
    seam_energy: float | None = None
    ba_initial_rms: float | None = None
    ba_final_rms: float | None = None
    ba_iterations: int | None = None
    ba_reason: str | None = None
    warnings: list = field(default_factory=list)

    def as_dict(self) -> dict:
        def num(x):
            if x is None:
                return None
            return float(x) if np.isfinite(x) else "inf"
        return {
            "overlaps": [{"pair": [o.i, o.j], "pixels": o.pixels, "psnr_db": num(o.psnr),
                          "ssim": num(o.ssim)} for o in self.overlaps],
            "ground_truth": {"psnr_db": num(self.gt_psnr), "ssim": num(self.gt_ssim)},
            "timings_s": {k: round(v, 4) for k, v in self.timings.items()},
            "seam_energy": num(self.seam_energy),
            "bundle": {"initial_rms_px": num(self.ba_initial_rms), "final_rms_px": num(self.ba_final_rms),
                       "iterations": self.ba_iterations, "reason": self.ba_reason},
            "warnings": list(self.warnings),
        }

    def to_text(self) -> str:
        return json.dumps(self.as_dict(), indent=2)

    def summary(self) -> str:
        lines = [f"{k:>10s}: {v:8.3f} s" for k, v in self.timings.items()]
        for o in self.overlaps:
            lines.append(f"  overlap {o.i}-{o.j}: PSNR {format_psnr(o.psnr)} dB, SSIM {o.ssim:.4f}")
        if self.gt_psnr is not None:
            lines.append(f"  ground truth: PSNR {format_psnr(self.gt_psnr)} dB, SSIM {self.gt_ssim:.4f}")
        if self.ba_initial_rms is not None:
            lines.append(f"  bundle: RMS {self.ba_initial_rms:.3g} -> {self.ba_final_rms:.3g} px")
        lines += [f"  warning: {w}" for w in self.warnings]
        return "\n".join(lines)


@dataclass
class StitchResult:
    panorama: np.ndarray        # (H, W, 3) float in [0, 1]
    coverage: np.ndarray        # (H, W) bool
    report: EvalReport
    layers: list
    masks: np.ndarray
    cameras: list
    label: np.ndarray

    def __iter__(self):
        return iter((self.panorama, self.coverage, self.report))


def _angular_span(cameras) -> float:
    axes = np.array([c.optical_axis for c in cameras])
    cos = np.clip(axes @ axes.T, -1.0, 1.0)
    return float(np.arccos(cos.min())) + max(c.intrinsics.hfov for c in cameras)


def suggest_projection(cameras) -> ProjectionFormat:
    """Planar below 120 degrees of span, cylindrical below 200, otherwise equirectangular.

    The span is the largest angle between two optical axes plus one field of view.
    """
    if not cameras:
        raise ValueError("need at least one camera")
    span = _angular_span(cameras)
    if span < PLANAR_SPAN:
        return Planar(cameras[0].intrinsics.focal)
    if span < CYLINDRICAL_SPAN:
        return Cylindrical()
    return Equirect()


def build_canvas(name: str, width: int, height: int, cameras, **params) -> PanoramaCanvas:
    """Canvas for a format name, filling size-derived defaults ("auto" picks a format)."""
    if name == "auto":
        fmt = suggest_projection(cameras)
        if isinstance(fmt, Planar):
            fmt = Planar(fmt.focal * width / cameras[0].intrinsics.width)
        return PanoramaCanvas(fmt, width, height)
    if name == "planar" and "focal" not in params:
        params["focal"] = cameras[0].intrinsics.focal * width / cameras[0].intrinsics.width
    if name == "cubemap" and "face_size" not in params:
        params["face_size"] = width // 3
    if name == "polyhedron" and "face_size" not in params:
        cols, _ = Polyhedron(level=params.get("level", 0)).grid
        params["face_size"] = width // cols
    return PanoramaCanvas(make_format(name, **params), width, height)


def erp_on_canvas(erp, canvas: PanoramaCanvas) -> np.ndarray:
    """Resample an equirectangular panorama onto another canvas."""
    if erp.shape[1] != 2 * erp.shape[0]:
        raise ValueError("ground truth must match the canvas size or be equirectangular (W = 2H)")
    d, ok = canvas.directions()
    out = sample_erp(erp, np.where(ok[..., None], d, (0.0, 0.0, 1.0)))
    return np.where(ok[..., None], out, 0.0)


def _overlap_pairs(valid):
    n = len(valid)
    return [(i, j) for i in range(n) for j in range(i + 1, n) if (valid[i] & valid[j]).any()]


def overlap_metrics(layers) -> list:
    out = []
    valid = [l.valid for l in layers]
    for i, j in _overlap_pairs(valid):
        both = valid[i] & valid[j]
        y0, y1, x0, x1 = mask_bbox(both)
        a = layers[i].color[y0:y1, x0:x1]
        b = layers[j].color[y0:y1, x0:x1]
        m = both[y0:y1, x0:x1]
        out.append(OverlapMetrics(i, j, int(m.sum()), psnr(a, b, m), ssim(a, b, m)))
    return out


def _refine_cameras(scene: Scene, cfg: BundleConfig, report: EvalReport):
    if scene.matches is None or len(scene.matches) == 0:
        report.warnings.append("bundle adjustment requested but the scene has no matches")
        return list(scene.cameras)
    cfg = BundleConfig(**{**cfg.__dict__, "shared_focal": cfg.shared_focal and scene.shared_focal})
    cams, rep = optimize(scene.cameras, scene.matches, cfg)
    report.ba_initial_rms = rep.initial_rms
    report.ba_final_rms = rep.final_rms
    report.ba_iterations = rep.iterations
    report.ba_reason = rep.reason
    # keep whichever parameter set reprojects better
    if rep.final_cost > rep.initial_cost:
        report.warnings.append("bundle adjustment did not lower the cost; kept the input poses")
        return list(scene.cameras)
    return cams


def _mesh_align(layers, cfg: MeshWarpConfig, report: EvalReport):
    layers = list(layers)
    for i in range(1, len(layers)):
        counts = [int((layers[j].valid & layers[i].valid).sum()) for j in range(i)]
        j = int(np.argmax(counts))
        if counts[j] == 0:
            continue
        res = refine_pair(layers[j], layers[i], cfg)
        layers[i] = res.layer
        for w in res.layer.warnings:
            if w not in report.warnings:
                report.warnings.append(f"layer {i}: {w}")
    return layers


def _write_debug(debug_dir, layers, label, problem):
    os.makedirs(debug_dir, exist_ok=True)
    for k, layer in enumerate(layers):
        write_image(os.path.join(debug_dir, f"layer_{k:02d}.png"), layer.color)
        write_image(os.path.join(debug_dir, f"valid_{k:02d}.png"), layer.valid)
    rng = np.random.default_rng(12345)
    palette = np.vstack([rng.integers(40, 256, (max(len(layers), 1), 3)), [[0, 0, 0]]]).astype(np.uint8)
    write_image(os.path.join(debug_dir, "labels.png"), palette[np.where(label >= 0, label, -1)])
    if problem is None:
        return
    for i, j in _overlap_pairs(problem.valid):
        both = problem.valid[i] & problem.valid[j]
        ys, xs = np.nonzero(both)
        cost = np.zeros(both.shape)
        cost[ys, xs] = problem.pair_cost(i, j, ys, xs)
        scale = np.percentile(cost[both], 99) or 1.0
        write_image(os.path.join(debug_dir, f"cost_{i:02d}_{j:02d}.png"), np.clip(cost / scale, 0, 1))


def stitch(scene: Scene, config: StitchConfig = StitchConfig(), ground_truth=None) -> StitchResult:
    """Stitch a scene onto a panorama canvas.

    Stages run in order: pose refinement (optional), warping, local mesh
    alignment (optional), seam labeling (or first-valid labels when the
    seam stage is off) and blending. ``ground_truth``, if given, is an image
    on the same canvas compared against the result over covered pixels.
    """
    report = EvalReport()
    t = time.perf_counter()

    def lap(name):
        nonlocal t
        now = time.perf_counter()
        report.timings[name] = now - t
        t = now

    cameras = list(scene.cameras)
    if config.bundle is not None:
        cameras = _refine_cameras(scene, config.bundle, report)
    lap("bundle")

    width, height = config.canvas
    canvas = build_canvas(config.projection, width, height, cameras, **dict(config.projection_params))
    layers = [warp_image(img, cam, canvas, k, config.workers)
              for k, (img, cam) in enumerate(zip(scene.images, cameras))]
    lap("warp")

    if config.meshwarp is not None and len(layers) > 1:
        layers = _mesh_align(layers, config.meshwarp, report)
    lap("meshwarp")

    valid = np.stack([l.valid for l in layers])
    coverage = valid.any(0)
    if not coverage.any():
        raise RuntimeError("no image projects onto the canvas")
    problem = None
    if len(layers) > 1 and not _overlap_pairs(valid):
        report.warnings.append("no overlapping images; layers are placed side by side")
    if config.seam and len(layers) > 1:
        problem = SeamProblem(layers)
        labeling = solve_labels(layers, problem)
        label = labeling.label
        report.seam_energy = labeling.energy
    else:
        label = initial_labels(valid)
    masks = labels_to_masks(label, len(layers))
    lap("seam")

    panorama, _ = blend(layers, masks, config.blend)
    panorama = np.clip(panorama, 0.0, 1.0)
    lap("blend")

    report.overlaps = overlap_metrics(layers)
    if ground_truth is not None:
        gt = np.asarray(ground_truth, float)
        if gt.shape[:2] != canvas.shape:
            gt = erp_on_canvas(gt, canvas)
        report.gt_psnr = psnr(panorama, gt, coverage)
        report.gt_ssim = ssim(panorama, gt, coverage)
    lap("metrics")

    if config.debug_dir:
        _write_debug(config.debug_dir, layers, label, problem)
    return StitchResult(panorama, coverage, report, layers, masks, cameras, label)


def reprojection_rms(cameras, matches) -> float:
    P = ParamVector(cameras, shared_focal=False)
    r = residuals(P, P.pack(), matches)
    return float(np.sqrt(r @ r / max(r.size // 2, 1)))
