"""Local alignment refinement between two overlapping warped layers.

A reference layer and a target layer are compared block by block over their
overlap. Each strip of blocks yields a horizontal disparity, strips with
similar disparities are grouped into regions, every region gets an affine
model fitted to its block correspondences, and the target layer is resampled
through a mesh displaced by those models.

Disparity sign: a target whose content sits ``d`` pixels to the right of the
reference (``target(y, x + d) == reference(y, x)``) has disparity ``+d``.
"""

from __future__ import annotations

import warnings
from dataclasses import dataclass, field

import numpy as np

from .projection import WarpedLayer, bilinear_sample, mask_bbox

NCC_EPS = 1e-8
LUMA = np.array([0.299, 0.587, 0.114])


class DegenerateBlockError(ValueError):
    """A block has (near) zero intensity variance."""


class NoMatchError(ValueError):
    """Every candidate displacement of a block was degenerate."""


class RankDeficientError(ValueError):
    """Too few or collinear correspondences for an affine fit."""


@dataclass(frozen=True)
class MeshWarpConfig:
    block: int = 32
    radius: int = 32
    tau_d: float = 2.0
    weights: tuple = (0.4, 0.2, 0.4)    # consistency, support, similarity
    sigma_d: float = 2.0
    cell: int = 8                       # mesh cell size in pixels

    def __post_init__(self):
        if self.block < 2 or self.radius < 0 or self.cell < 1:
            raise ValueError("block >= 2, radius >= 0 and cell >= 1 required")
        if abs(sum(self.weights) - 1.0) > 1e-9 or min(self.weights) < 0:
            raise ValueError("confidence weights must be nonnegative and sum to 1")


@dataclass(frozen=True)
class BlockGrid:
    """``m`` strips of ``n`` blocks tiling the box ``[y0, y1) x [x0, x1)``."""
    y0: int
    y1: int
    x0: int
    x1: int
    block_h: int
    block_w: int

    def __post_init__(self):
        if self.y1 <= self.y0 or self.x1 <= self.x0:
            raise ValueError("empty block grid")

    @classmethod
    def over(cls, box, block: int) -> "BlockGrid":
        y0, y1, x0, x1 = box
        return cls(y0, y1, x0, x1, block, block)

    @property
    def m(self) -> int:
        return -(-(self.y1 - self.y0) // self.block_h)

    @property
    def n(self) -> int:
        return -(-(self.x1 - self.x0) // self.block_w)

    def strip_rows(self, i) -> slice:
        a = self.y0 + i * self.block_h
        return slice(a, min(a + self.block_h, self.y1))

    def block_cols(self, j) -> slice:
        a = self.x0 + j * self.block_w
        return slice(a, min(a + self.block_w, self.x1))

    def block_center(self, i, j):
        r, c = self.strip_rows(i), self.block_cols(j)
        return 0.5 * (c.start + c.stop - 1), 0.5 * (r.start + r.stop - 1)


@dataclass
class DisparityField:
    block_d: np.ndarray          # (m, n) int
    block_ncc: np.ndarray        # (m, n), nan for degenerate blocks
    confidence: np.ndarray       # (m, n) in [0, 1]
    row_d: np.ndarray            # (m,) disparity of each strip's most confident block
    row_conf: np.ndarray         # (m,)
    refined: np.ndarray | None = None   # D*, per strip


@dataclass(frozen=True)
class AffineModel:
    A: np.ndarray
    t: np.ndarray
    region: int = 0

    def __post_init__(self):
        A = np.array(self.A, float).reshape(2, 2)
        if not np.linalg.det(A) > 0:
            raise ValueError("affine model must preserve orientation")
        object.__setattr__(self, "A", A)
        object.__setattr__(self, "t", np.array(self.t, float).reshape(2))

    @classmethod
    def translation(cls, dx, dy=0.0, region=0) -> "AffineModel":
        return cls(np.eye(2), (dx, dy), region)

    def __call__(self, pts):
        return np.asarray(pts, float) @ self.A.T + self.t


@dataclass
class MeshWarpResult:
    layer: WarpedLayer
    grid: BlockGrid | None = None
    disparity: DisparityField | None = None
    regions: list = field(default_factory=list)
    models: list = field(default_factory=list)
    sweeps: int = 0


def _gray(color):
    color = np.asarray(color, float)
    return color @ LUMA if color.ndim == 3 else color


def ncc(block_a, block_b, mask=None) -> float:
    """Zero-mean normalised cross-correlation of two equally shaped blocks.

    ``mask`` restricts the statistics to a subset of pixels. Raises
    :class:`DegenerateBlockError` when either block's standard deviation is
    at most ``NCC_EPS``.
    """
    a = np.asarray(block_a, float)
    b = np.asarray(block_b, float)
    if a.shape != b.shape:
        raise ValueError(f"block shapes differ: {a.shape} vs {b.shape}")
    if mask is not None:
        a = a[mask]
        b = b[mask]
    if a.size == 0:
        raise DegenerateBlockError("empty block")
    a = a - a.mean()
    b = b - b.mean()
    sa = np.sqrt(np.mean(a * a))
    sb = np.sqrt(np.mean(b * b))
    if sa <= NCC_EPS or sb <= NCC_EPS:
        raise DegenerateBlockError("degenerate block")
    return float(np.clip(np.mean(a * b) / (sa * sb), -1.0, 1.0))


def _candidates(radius, lo=None, hi=None):
    # 0, -1, 1, -2, 2, ...: scanning in this order and keeping only strict
    # improvements breaks ties toward smaller |d|, then toward negative d
    out = [0]
    for k in range(1, int(radius) + 1):
        out += [-k, k]
    if lo is not None:
        out = [d for d in out if lo <= d <= hi]
    return out


def _shifted(img, valid, rows, cols, d):
    """Target pixels ``(rows, cols + d)``, invalid where they leave the image."""
    w = img.shape[1]
    c = np.arange(cols.start, cols.stop) + d
    inside = (c >= 0) & (c < w)
    cc = np.clip(c, 0, w - 1)
    return img[rows][:, cc], valid[rows][:, cc] & inside[None, :]


def match_block(ref, ref_valid, tgt, tgt_valid, rows, cols, candidates):
    """Best displacement of one block (or strip) among ``candidates``.

    Returns ``(d, score, support)`` where ``support`` is the fraction of the
    block valid in both layers at the chosen displacement.
    """
    a = ref[rows, cols]
    va = ref_valid[rows, cols]
    best = None
    for d in candidates:
        b, vb = _shifted(tgt, tgt_valid, rows, cols, d)
        both = va & vb
        if both.sum() < 2:
            continue
        try:
            s = ncc(a, b, both)
        except DegenerateBlockError:
            continue
        if best is None or s > best[1]:
            best = (d, s, float(both.mean()))
    if best is None:
        raise NoMatchError("all candidate displacements are degenerate")
    return best


def initial_disparity(ref, ref_valid, tgt, tgt_valid, rows, cols, radius):
    """``(d, score)`` maximising NCC over integer shifts ``|d| <= radius``."""
    d, s, _ = match_block(ref, ref_valid, tgt, tgt_valid, rows, cols, _candidates(radius))
    return d, s


def confidence(d, d_mean, support, score, weights=(0.4, 0.2, 0.4), sigma_d=2.0) -> float:
    """Weighted mix of disparity consistency, valid support and similarity.

    A degenerate match (``score`` None or nan) contributes nothing to the
    similarity term; negative correlations are clipped to 0 so the result
    stays in [0, 1].
    """
    w1, w2, w3 = weights
    rho = np.exp(-abs(d - d_mean) / sigma_d)
    sim = 0.0 if score is None or not np.isfinite(score) else max(float(score), 0.0)
    return float(w1 * rho + w2 * support + w3 * sim)


def estimate_disparity(ref, ref_valid, tgt, tgt_valid, grid: BlockGrid, config=MeshWarpConfig()):
    """Per-block disparities and confidences, plus each strip's best block."""
    m, n = grid.m, grid.n
    bd = np.zeros((m, n), int)
    bs = np.full((m, n), np.nan)
    sup = np.zeros((m, n))
    ok = np.zeros((m, n), bool)
    cands = _candidates(config.radius)
    for i in range(m):
        rows = grid.strip_rows(i)
        for j in range(n):
            try:
                bd[i, j], bs[i, j], sup[i, j] = match_block(
                    ref, ref_valid, tgt, tgt_valid, rows, grid.block_cols(j), cands)
                ok[i, j] = True
            except NoMatchError:
                pass
    conf = np.zeros((m, n))
    row_d = np.zeros(m, int)
    row_conf = np.zeros(m)
    for i in range(m):
        if not ok[i].any():
            continue
        d_mean = bd[i, ok[i]].mean()
        for j in np.flatnonzero(ok[i]):
            conf[i, j] = confidence(bd[i, j], d_mean, sup[i, j], bs[i, j],
                                    config.weights, config.sigma_d)
        j = int(np.argmax(np.where(ok[i], conf[i], -1.0)))
        row_d[i] = bd[i, j]
        row_conf[i] = conf[i, j]
    return DisparityField(bd, bs, conf, row_d, row_conf)


def group_regions(row_disparities, tau_d=2.0, usable=None):
    """Greedy top-to-bottom grouping of rows with similar disparity.

    A row joins the current region when it is within ``tau_d`` of the
    region's mean disparity, otherwise it starts a new one. Rows flagged
    False in ``usable`` are skipped and close the current region.

    >>> group_regions([5, 5, 6, 12, 12])
    [[0, 1, 2], [3, 4]]
    """
    d = np.asarray(row_disparities, float)
    usable = np.ones(d.shape, bool) if usable is None else np.asarray(usable, bool)
    regions, cur = [], []
    for i, di in enumerate(d):
        if not usable[i]:
            if cur:
                regions.append(cur)
            cur = []
            continue
        if cur and abs(di - d[cur].mean()) <= tau_d:
            cur.append(i)
        else:
            if cur:
                regions.append(cur)
            cur = [i]
    if cur:
        regions.append(cur)
    return regions


def _strip_score(ref, ref_valid, tgt, tgt_valid, grid, i, d):
    rows = grid.strip_rows(i)
    cols = slice(grid.x0, grid.x1)
    b, vb = _shifted(tgt, tgt_valid, rows, cols, d)
    both = ref_valid[rows, cols] & vb
    if both.sum() < 2:
        return None
    try:
        return ncc(ref[rows, cols], b, both)
    except DegenerateBlockError:
        return None


def expand_regions(ref, ref_valid, tgt, tgt_valid, grid, field: DisparityField, regions,
                   tau_d=2.0, max_sweeps=None):
    """Refine strip disparities outward from each region's most confident row.

    Every row is re-matched over the whole strip with the search restricted
    to ``seed +- tau_d``; an update is kept only if it strictly raises that
    row's NCC, so the sweeps terminate. Returns ``(D*, sweeps)``.
    """
    D = field.row_d.astype(int).copy()
    sweeps = 0
    lim = int(np.floor(tau_d))
    for region in regions:
        seed = max(region, key=lambda r: (field.row_conf[r], -r))
        s0 = D[seed]
        window = range(s0 - lim, s0 + lim + 1)
        k = region.index(seed)
        order = region[k::-1] + region[k + 1:]   # seed, upward, then downward
        score = {r: _strip_score(ref, ref_valid, tgt, tgt_valid, grid, r, D[r]) for r in region}
        bound = len(region) * len(window)
        while True:
            sweeps += 1
            changed = False
            for r in order:
                cur = score[r] if score[r] is not None else -np.inf
                for d in window:
                    if d == D[r]:
                        continue
                    s = _strip_score(ref, ref_valid, tgt, tgt_valid, grid, r, d)
                    if s is not None and s > cur:
                        D[r], cur, changed = d, s, True
                score[r] = cur if np.isfinite(cur) else None
            if not changed or (max_sweeps is not None and sweeps >= max_sweeps):
                break
            if sweeps > bound + len(regions):
                raise RuntimeError("region expansion failed to terminate")
    field.refined = D
    return D, sweeps


def region_correspondences(grid: BlockGrid, region, D, usable=None):
    """Block centres ``p`` of the region's strips and their targets ``p + (D, 0)``."""
    src, dst = [], []
    for i in region:
        for j in range(grid.n):
            if usable is not None and not usable[i, j]:
                continue
            x, y = grid.block_center(i, j)
            src.append((x, y))
            dst.append((x + D[i], y))
    return np.array(src, float).reshape(-1, 2), np.array(dst, float).reshape(-1, 2)


def fit_affine(src, dst, region=0) -> AffineModel:
    """Least-squares ``A, t`` with ``A @ p + t ~ p'``.

    Raises :class:`RankDeficientError` for fewer than 3 points or collinear
    points.
    """
    src = np.asarray(src, float).reshape(-1, 2)
    dst = np.asarray(dst, float).reshape(-1, 2)
    if len(src) < 3:
        raise RankDeficientError(f"need >= 3 correspondences, got {len(src)}")
    X = np.hstack([src, np.ones((len(src), 1))])
    s = np.linalg.svd(X - np.r_[src.mean(0), 1.0] * [1, 1, 0], compute_uv=False)
    scale = max(1.0, float(np.abs(src).max()))
    if s[-1] <= 1e-9 * scale:
        raise RankDeficientError("correspondences are collinear")
    sol, *_ = np.linalg.lstsq(X, dst, rcond=None)
    return AffineModel(sol[:2].T, sol[2], region)


def _region_spans(grid, regions):
    return [(grid.strip_rows(r[0]).start, grid.strip_rows(r[-1]).stop) for r in regions]


def apply_mesh_warp(layer: WarpedLayer, models, spans, cell: int = 8, columns=None) -> WarpedLayer:
    """Resample ``layer`` through a mesh displaced by per-region affine models.

    Mesh vertices with row in ``spans[k] = (y_start, y_stop)`` (and column in
    ``columns`` when given) sample the layer at ``models[k](vertex)``; other
    vertices keep identity. Pixel sampling positions are interpolated
    bilinearly from the vertices, colour and validity move together.
    """
    H, W = layer.shape
    vy = np.unique(np.r_[np.arange(0, H, cell), H - 1]).astype(float)
    vx = np.unique(np.r_[np.arange(0, W, cell), W - 1]).astype(float)
    gx, gy = np.meshgrid(vx, vy)
    pts = np.stack([gx, gy], -1)
    mapped = pts.copy()
    for model, (a, b) in zip(models, spans):
        sel = (gy >= a) & (gy < b)
        if columns is not None:
            sel &= (gx >= columns[0]) & (gx < columns[1])
        mapped[sel] = model(pts[sel])
    warns = list(layer.warnings)
    # fold-over: a mesh cell whose edge vectors flip orientation
    ex = mapped[:-1, 1:] - mapped[:-1, :-1]
    ey = mapped[1:, :-1] - mapped[:-1, :-1]
    jac = ex[..., 0] * ey[..., 1] - ex[..., 1] * ey[..., 0]
    if np.any(jac <= 0):
        msg = f"mesh fold-over in {int(np.sum(jac <= 0))} cell(s)"
        warns.append(msg)
        warnings.warn(msg, RuntimeWarning, stacklevel=2)
    # per-pixel sampling positions from the displaced vertices
    py = np.arange(H, dtype=float)
    px = np.arange(W, dtype=float)
    iy = np.clip(np.searchsorted(vy, py, side="right") - 1, 0, len(vy) - 2) if len(vy) > 1 else np.zeros(H, int)
    ix = np.clip(np.searchsorted(vx, px, side="right") - 1, 0, len(vx) - 2) if len(vx) > 1 else np.zeros(W, int)
    if len(vy) > 1:
        fy = (py - vy[iy]) / (vy[iy + 1] - vy[iy])
        iy1 = iy + 1
    else:
        fy, iy1 = np.zeros(H), iy
    if len(vx) > 1:
        fx = (px - vx[ix]) / (vx[ix + 1] - vx[ix])
        ix1 = ix + 1
    else:
        fx, ix1 = np.zeros(W), ix
    fy = fy[:, None, None]
    fx = fx[None, :, None]
    top = mapped[iy][:, ix] * (1 - fx) + mapped[iy][:, ix1] * fx
    bot = mapped[iy1][:, ix] * (1 - fx) + mapped[iy1][:, ix1] * fx
    pos = top * (1 - fy) + bot * fy
    color, ok = bilinear_sample(layer.color.astype(float), pos[..., 0], pos[..., 1])
    vs, _ = bilinear_sample(layer.valid.astype(float), pos[..., 0], pos[..., 1])
    valid = ok & (vs > 1.0 - 1e-9)
    color = np.where(valid[..., None], color, 0.0).astype(np.float32)
    return WarpedLayer(color, valid, layer.source_index, warns)


def refine_pair(reference: WarpedLayer, target: WarpedLayer, config=MeshWarpConfig()) -> MeshWarpResult:
    """Align ``target`` to ``reference`` over their overlap; returns the warped target.

    Regions whose correspondences are rank deficient (a single strip, say)
    fall back to a pure translation by their refined disparity.
    """
    box = mask_bbox(reference.valid & target.valid)
    if box is None:
        return MeshWarpResult(target)
    grid = BlockGrid.over(box, config.block)
    ref = _gray(reference.color)
    tgt = _gray(target.color)
    fld = estimate_disparity(ref, reference.valid, tgt, target.valid, grid, config)
    usable = fld.row_conf > 0
    regions = group_regions(fld.row_d, config.tau_d, usable)
    if not regions:
        return MeshWarpResult(target, grid, fld)
    D, sweeps = expand_regions(ref, reference.valid, tgt, target.valid, grid, fld, regions,
                               config.tau_d)
    ok_blocks = np.isfinite(fld.block_ncc)
    models = []
    for k, region in enumerate(regions):
        src, dst = region_correspondences(grid, region, D, ok_blocks)
        try:
            models.append(fit_affine(src, dst, k))
        except (RankDeficientError, ValueError):
            models.append(AffineModel.translation(float(np.mean(D[region])), 0.0, k))
    spans = _region_spans(grid, regions)
    warped = apply_mesh_warp(target, models, spans, config.cell, (grid.x0, grid.x1))
    return MeshWarpResult(warped, grid, fld, regions, models, sweeps)
