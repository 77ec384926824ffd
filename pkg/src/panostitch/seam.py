"""Multi-image seam labeling by alpha-expansion.

Every canvas pixel covered by at least one warped layer receives the index
of the layer it is sourced from. The energy is a hard validity constraint
plus, for every 4-adjacent pair with different labels ``a != b``, the cost
``C_ab(p) + C_ab(q)`` where

    C_ab = F_color + F_gradient * F_ratio

is built from the pair's colour difference, summed Sobel gradient
magnitudes, and a windowed texture-complexity ratio. Outside the pair's
overlap the colour term is 0 and the ratio is 1.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
from scipy import ndimage

from .maxflow import BinaryCut
from .projection import WarpedLayer, mask_bbox

INF_COST = 1e12
RATIO_ALPHA = 4.0
RATIO_WINDOW = 5
RATIO_EPS = 1e-6
LUMA = np.array([0.299, 0.587, 0.114])
NONE = -1

_SOBEL_X = np.array([[-1, 0, 1], [-2, 0, 2], [-1, 0, 1]], float) / 8.0


@dataclass
class CostMaps:
    f_color: np.ndarray
    f_gradient: np.ndarray
    f_ratio: np.ndarray

    @property
    def cost(self) -> np.ndarray:
        return pixel_cost(self.f_color, self.f_gradient, self.f_ratio)


@dataclass
class SeamLabeling:
    label: np.ndarray        # (H, W) int, NONE where no layer is valid
    energy: float
    history: list = field(default_factory=list)  # energy after each accepted move
    sweeps: int = 0


def _luminance(color):
    return np.asarray(color, float) @ LUMA


def layer_gradient(color, valid) -> np.ndarray:
    """Sobel gradient magnitude of the luminance, 0 where ``valid`` is False.

    Taps falling on invalid pixels (or off the canvas) take the centre value.
    """
    valid = np.asarray(valid, bool)
    out = np.zeros(valid.shape)
    box = mask_bbox(valid)
    if box is None:
        return out
    y0, y1, x0, x1 = box
    lum = _luminance(np.asarray(color)[y0:y1, x0:x1])
    ok = valid[y0:y1, x0:x1]
    L = np.pad(lum, 1, mode="edge")
    V = np.pad(ok, 1, constant_values=False)
    gx = np.zeros_like(lum)
    gy = np.zeros_like(lum)
    h, w = lum.shape
    for dy in (-1, 0, 1):
        for dx in (-1, 0, 1):
            kx = _SOBEL_X[dy + 1, dx + 1]
            ky = _SOBEL_X[dx + 1, dy + 1]
            if kx == 0 and ky == 0:
                continue
            tap = L[1 + dy:1 + dy + h, 1 + dx:1 + dx + w]
            # differences from the centre: both stencils sum to zero, so flat
            # regions give exactly zero rather than round-off
            tap = np.where(V[1 + dy:1 + dy + h, 1 + dx:1 + dx + w], tap - lum, 0.0)
            gx += kx * tap
            gy += ky * tap
    out[y0:y1, x0:x1] = np.where(ok, np.hypot(gx, gy), 0.0)
    return out


def color_diff_map(layer_i: WarpedLayer, layer_j: WarpedLayer) -> np.ndarray:
    """``||I_i - I_j||`` over RGB on the pair overlap, 0 elsewhere."""
    both = layer_i.valid & layer_j.valid
    diff = layer_i.color.astype(float) - layer_j.color.astype(float)
    return np.where(both, np.sqrt(np.sum(diff * diff, axis=-1)), 0.0)


def gradient_map(layer_i: WarpedLayer, layer_j: WarpedLayer) -> np.ndarray:
    """Sum of the two layers' gradient magnitudes (each 0 where its layer is invalid)."""
    return layer_gradient(layer_i.color, layer_i.valid) + layer_gradient(layer_j.color, layer_j.valid)


def texture_ratio(diff, overlap, alpha=RATIO_ALPHA, window=RATIO_WINDOW, eps=RATIO_EPS):
    """``1 + alpha * sigma_w / (mean(sigma_w) + eps)`` on ``overlap``, 1 elsewhere.

    ``sigma_w`` is the standard deviation of ``diff`` over the overlap pixels
    inside a ``window x window`` box.
    """
    overlap = np.asarray(overlap, bool)
    out = np.ones(overlap.shape)
    if not overlap.any():
        return out
    m = overlap.astype(float)
    # centring first keeps a constant map at exactly zero variance
    d = np.where(overlap, diff - diff[overlap].mean(), 0.0)
    n = ndimage.uniform_filter(m, window, mode="constant")
    n = np.where(n > 0, n, 1.0)
    mean = ndimage.uniform_filter(d, window, mode="constant") / n
    sq = ndimage.uniform_filter(d * d, window, mode="constant") / n
    var = np.maximum(sq - mean * mean, 0.0)
    var[var < 1e-24] = 0.0
    sigma = np.sqrt(var)
    sbar = sigma[overlap].mean()
    out[overlap] = 1.0 + alpha * sigma[overlap] / (sbar + eps)
    return out


def texture_ratio_map(layer_i: WarpedLayer, layer_j: WarpedLayer, **kw) -> np.ndarray:
    return texture_ratio(color_diff_map(layer_i, layer_j), layer_i.valid & layer_j.valid, **kw)


def pixel_cost(f_color, f_gradient, f_ratio):
    return np.asarray(f_color) + np.asarray(f_gradient) * np.asarray(f_ratio)


def pair_cost_maps(layer_i: WarpedLayer, layer_j: WarpedLayer) -> CostMaps:
    both = layer_i.valid & layer_j.valid
    diff = color_diff_map(layer_i, layer_j)
    return CostMaps(diff, gradient_map(layer_i, layer_j), texture_ratio(diff, both))


def data_term(valid_i, p) -> float:
    """0 when pixel ``p = (row, col)`` is valid in the layer, else the infinity surrogate."""
    return 0.0 if valid_i[p] else INF_COST


def smoothness_term(cost_p: float, cost_q: float, label_p: int, label_q: int) -> float:
    """Penalty of a neighbouring pair given the pair-specific pixel costs."""
    return 0.0 if label_p == label_q else cost_p + cost_q


class _Crop:
    """A 2D array stored over a sub-rectangle of the canvas, zero elsewhere."""

    def __init__(self, full_or_crop, y0=0, x0=0):
        self.a = full_or_crop
        self.y0, self.x0 = y0, x0

    def at(self, ys, xs):
        h, w = self.a.shape
        yy = ys - self.y0
        xx = xs - self.x0
        inside = (yy >= 0) & (yy < h) & (xx >= 0) & (xx < w)
        out = np.zeros(np.shape(ys))
        out[inside] = self.a[yy[inside], xx[inside]]
        return out


class SeamProblem:
    """Layers plus lazily computed, cached per-pair cost maps."""

    def __init__(self, layers):
        self.layers = list(layers)
        if not self.layers:
            raise ValueError("need at least one layer")
        self.shape = self.layers[0].valid.shape
        self.valid = np.stack([l.valid for l in self.layers])
        self._grad = {}
        self._extra = {}

    @property
    def n(self) -> int:
        return len(self.layers)

    def gradient(self, i) -> _Crop:
        if i not in self._grad:
            box = mask_bbox(self.valid[i])
            if box is None:
                self._grad[i] = _Crop(np.zeros((0, 0)))
            else:
                y0, y1, x0, x1 = box
                g = layer_gradient(self.layers[i].color[y0:y1, x0:x1], self.valid[i, y0:y1, x0:x1])
                self._grad[i] = _Crop(g, y0, x0)
        return self._grad[i]

    def _pair_extra(self, a, b) -> _Crop:
        # C_ab minus (G_a + G_b): the colour term plus the ratio's excess over 1
        key = (a, b)
        if key not in self._extra:
            both = self.valid[a] & self.valid[b]
            box = mask_bbox(both)
            if box is None:
                self._extra[key] = _Crop(np.zeros((0, 0)))
            else:
                y0, y1, x0, x1 = box
                la, lb = self.layers[a], self.layers[b]
                ov = both[y0:y1, x0:x1]
                d = la.color[y0:y1, x0:x1].astype(float) - lb.color[y0:y1, x0:x1].astype(float)
                diff = np.where(ov, np.sqrt(np.sum(d * d, -1)), 0.0)
                ratio = texture_ratio(diff, ov)
                ys, xs = np.mgrid[y0:y1, x0:x1]
                g = self.gradient(a).at(ys, xs) + self.gradient(b).at(ys, xs)
                self._extra[key] = _Crop(np.where(ov, diff + g * (ratio - 1.0), 0.0), y0, x0)
        return self._extra[key]

    def pair_cost(self, a, b, ys, xs):
        """``C_ab`` at the given pixels."""
        a, b = min(a, b), max(a, b)
        return (self.gradient(a).at(ys, xs) + self.gradient(b).at(ys, xs)
                + self._pair_extra(a, b).at(ys, xs))

    def pairwise(self, la, lb, yp, xp, yq, xq):
        """Vectorised smoothness term for edges ``(p, q)`` with labels ``la``, ``lb``."""
        la = np.asarray(la)
        lb = np.asarray(lb)
        out = np.zeros(la.shape)
        cut = (la != lb) & (la >= 0) & (lb >= 0)
        if not cut.any():
            return out
        lo = np.minimum(la, lb)[cut]
        hi = np.maximum(la, lb)[cut]
        vals = np.zeros(lo.shape)
        keys = lo * self.n + hi
        for key in np.unique(keys):
            sel = keys == key
            a, b = divmod(int(key), self.n)
            idx = np.flatnonzero(cut)[sel]
            vals[sel] = (self.pair_cost(a, b, yp[idx], xp[idx])
                         + self.pair_cost(a, b, yq[idx], xq[idx]))
        out[cut] = vals
        return out


def _grid_edges(shape):
    H, W = shape
    ys, xs = np.mgrid[0:H, 0:W]
    h = (ys[:, :-1].ravel(), xs[:, :-1].ravel(), ys[:, 1:].ravel(), xs[:, 1:].ravel())
    v = (ys[:-1].ravel(), xs[:-1].ravel(), ys[1:].ravel(), xs[1:].ravel())
    return tuple(np.concatenate([a, b]) for a, b in zip(h, v))


def total_energy(label, layers=None, problem: SeamProblem | None = None) -> float:
    """Data plus smoothness energy of a full-canvas labeling."""
    problem = problem or SeamProblem(layers)
    label = np.asarray(label)
    lab = label >= 0
    li = np.where(lab, label, 0)
    rows, cols = np.nonzero(lab)
    invalid = ~problem.valid[li[rows, cols], rows, cols]
    energy = INF_COST * float(invalid.sum())
    # only edges with differing labels contribute
    for dy, dx in ((0, 1), (1, 0)):
        la = label[:label.shape[0] - dy, :label.shape[1] - dx]
        lb = label[dy:, dx:]
        yy, xx = np.nonzero((la != lb) & (la >= 0) & (lb >= 0))
        if yy.size:
            energy += float(problem.pairwise(la[yy, xx], lb[yy, xx], yy, xx, yy + dy, xx + dx).sum())
    return energy


def _component_edges(comp_mask, y0, x0, shape):
    """Canvas edges with at least one endpoint in the component (given on its crop)."""
    H, W = shape
    ys, xs = np.nonzero(comp_mask)
    ys = ys + y0
    xs = xs + x0
    p_list, q_list = [], []
    for dy, dx in ((0, 1), (1, 0), (0, -1), (-1, 0)):
        qy, qx = ys + dy, xs + dx
        inside = (qy >= 0) & (qy < H) & (qx >= 0) & (qx < W)
        py_, px_, qy, qx = ys[inside], xs[inside], qy[inside], qx[inside]
        # an edge between two component pixels is listed once (forward directions only)
        if dy < 0 or dx < 0:
            cy, cx = qy - y0, qx - x0
            ch, cw = comp_mask.shape
            in_comp = (cy >= 0) & (cy < ch) & (cx >= 0) & (cx < cw)
            in_comp[in_comp] = comp_mask[cy[in_comp], cx[in_comp]]
            keep = ~in_comp
            py_, px_, qy, qx = py_[keep], px_[keep], qy[keep], qx[keep]
        p_list.append(np.stack([py_, px_], 1))
        q_list.append(np.stack([qy, qx], 1))
    return np.concatenate(p_list), np.concatenate(q_list)


def _expand_component(problem, label, comp_mask, y0, x0, history, energy, rel_tol=1e-12):
    """Run expansion sweeps on one overlap component until no move lowers the energy."""
    ys, xs = np.nonzero(comp_mask)
    ys = ys + y0
    xs = xs + x0
    node = -np.ones(problem.shape, np.int64)  # canvas-sized lookup kept sparse below
    node[ys, xs] = np.arange(ys.size)
    P, Q = _component_edges(comp_mask, y0, x0, problem.shape)
    pn = node[P[:, 0], P[:, 1]]
    qn = node[Q[:, 0], Q[:, 1]]
    node[ys, xs] = -1
    cand = np.flatnonzero(problem.valid[:, ys, xs].any(1))
    valid_c = problem.valid[:, ys, xs]
    sweeps = 0
    while True:
        sweeps += 1
        improved = False
        for alpha in cand:
            cur = label[ys, xs]
            var = valid_c[alpha] & (cur != alpha)
            if not var.any():
                continue
            lp = label[P[:, 0], P[:, 1]]
            lq = label[Q[:, 0], Q[:, 1]]
            p_var = (pn >= 0) & var[np.maximum(pn, 0)]
            q_var = (qn >= 0) & var[np.maximum(qn, 0)]
            touch = p_var | q_var
            if not touch.any():
                continue
            Pt, Qt = P[touch], Q[touch]
            lpt, lqt = lp[touch], lq[touch]
            pv, qv = p_var[touch], q_var[touch]
            a = np.full(lpt.shape, alpha)
            py_, px_, qy, qx = Pt[:, 0], Pt[:, 1], Qt[:, 0], Qt[:, 1]
            e00 = problem.pairwise(lpt, lqt, py_, px_, qy, qx)
            e01 = problem.pairwise(lpt, a, py_, px_, qy, qx)
            e10 = problem.pairwise(a, lqt, py_, px_, qy, qx)
            # local variable numbering
            vidx = -np.ones(ys.size, np.int64)
            vidx[var] = np.arange(var.sum())
            cut = BinaryCut(int(var.sum()))
            both = pv & qv
            if both.any():
                E00 = e00[both]
                E01 = e01[both]
                E10 = e10[both]
                # truncate non-submodular terms; the true energy is checked below
                E00 = np.minimum(E00, E01 + E10)
                cut.add_pairwise(vidx[pn[touch][both]], vidx[qn[touch][both]], E00, E01, E10, 0.0)
            only_p = pv & ~qv
            if only_p.any():
                cut.add_unary(vidx[pn[touch][only_p]], e00[only_p], e10[only_p])
            only_q = qv & ~pv
            if only_q.any():
                cut.add_unary(vidx[qn[touch][only_q]], e00[only_q], e01[only_q])
            x, _ = cut.solve()
            if not x.any():
                continue
            old_e = e00.sum()
            new_lp = lpt.copy()
            new_lq = lqt.copy()
            new_lp[pv] = np.where(x[vidx[pn[touch][pv]]], alpha, lpt[pv])
            new_lq[qv] = np.where(x[vidx[qn[touch][qv]]], alpha, lqt[qv])
            new_e = problem.pairwise(new_lp, new_lq, py_, px_, qy, qx).sum()
            delta = new_e - old_e
            if delta < -rel_tol * max(1.0, abs(old_e)):
                sel = np.flatnonzero(var)[x[vidx[var]]]
                label[ys[sel], xs[sel]] = alpha
                energy += delta
                history.append(energy)
                improved = True
        if not improved:
            return energy, sweeps


def initial_labels(valid) -> np.ndarray:
    """Lowest-index covering layer per pixel, NONE where uncovered."""
    valid = np.asarray(valid, bool)
    label = np.argmax(valid, axis=0).astype(np.int64)
    label[~valid.any(0)] = NONE
    return label


def solve_labels(layers, problem: SeamProblem | None = None) -> SeamLabeling:
    """Alpha-expansion seam labeling.

    Singly covered pixels are fixed to their only layer; each 4-connected
    component of multiply covered pixels is optimised independently until a
    full sweep over its candidate labels gives no strict decrease.
    """
    problem = problem or SeamProblem(layers)
    if not problem.valid.any():
        raise ValueError("no layer has any valid pixel")
    label = initial_labels(problem.valid)
    multi = problem.valid.sum(0) >= 2
    comps, ncomp = ndimage.label(multi)
    energy = total_energy(label, problem=problem)
    history = [energy]
    sweeps = 0
    for k, sl in enumerate(ndimage.find_objects(comps), start=1):
        comp_mask = comps[sl] == k
        energy, s = _expand_component(problem, label, comp_mask, sl[0].start, sl[1].start,
                                      history, energy)
        sweeps = max(sweeps, s)
    final = total_energy(label, problem=problem)
    check_infinity_surrogate(problem)
    if final >= INF_COST:
        raise RuntimeError("seam solver produced an infeasible labeling")
    return SeamLabeling(label, final, history, sweeps)


def labels_to_masks(labeling, n_images: int) -> np.ndarray:
    """Boolean masks ``(n_images, H, W)``; mask ``i`` is True where the label is ``i``."""
    label = labeling.label if isinstance(labeling, SeamLabeling) else np.asarray(labeling)
    return np.stack([label == i for i in range(n_images)])


def check_infinity_surrogate(problem: SeamProblem) -> None:
    """Verify that ``#pairs * 2 * max C`` stays below ``INF_COST`` for the cached pair costs."""
    H, W = problem.shape
    n_pairs = H * (W - 1) + W * (H - 1)
    gmax = [float(problem.gradient(i).a.max()) if problem.gradient(i).a.size else 0.0
            for i in range(problem.n)]
    cmax = 0.0
    for (a, b), extra in problem._extra.items():
        e = float(extra.a.max()) if extra.a.size else 0.0
        cmax = max(cmax, gmax[a] + gmax[b] + e)
    if n_pairs * 2 * cmax >= INF_COST:
        raise RuntimeError("smoothness costs could reach the infinity surrogate")
