"""Rotation-only bundle adjustment over 2D-2D matches with Levenberg-Marquardt.

Each camera carries a focal length, a principal point and an angle-axis
rotation. A match ``(x_i, x_j)`` between cameras ``i`` and ``j`` contributes
the residual ``x_j - project(H_ij @ (x_i, 1))`` with
``H_ij = K_j R_j R_i^T K_i^-1``. Camera 0's rotation is held fixed (gauge).
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
import scipy.sparse as sp
from scipy.sparse import csgraph
from scipy.sparse.linalg import splu

from .geometry import Camera, Intrinsics, rotation_from_angle_axis, rotation_to_angle_axis, skew

AT_INFINITY = 1e-12
CAPPED_RESIDUAL = 1e6
MIN_FOCAL = 1e-3


class DisconnectedGraphError(ValueError):
    """The camera-match graph has more than one connected component."""


@dataclass
class PairMatches:
    i: int
    j: int
    xi: np.ndarray   # (k, 2) pixels in camera i
    xj: np.ndarray   # (k, 2) pixels in camera j

    def __post_init__(self):
        if self.i == self.j:
            raise ValueError("a match pair needs two distinct cameras")
        self.xi = np.asarray(self.xi, float).reshape(-1, 2)
        self.xj = np.asarray(self.xj, float).reshape(-1, 2)
        if len(self.xi) == 0 or len(self.xi) != len(self.xj):
            raise ValueError(f"pair ({self.i}, {self.j}) needs equally many points, at least one")


class MatchSet:
    """Point matches grouped by camera pair."""

    def __init__(self, pairs=()):
        self.pairs: list[PairMatches] = list(pairs)

    def __len__(self):
        return len(self.pairs)

    def __iter__(self):
        return iter(self.pairs)

    @property
    def n_points(self) -> int:
        return sum(len(p.xi) for p in self.pairs)

    def cameras(self) -> set:
        return {c for p in self.pairs for c in (p.i, p.j)}

    def check_connected(self, n_cameras: int) -> None:
        """Raise :class:`DisconnectedGraphError` unless all cameras are linked by matches."""
        if n_cameras <= 1:
            return
        if any(max(p.i, p.j) >= n_cameras or min(p.i, p.j) < 0 for p in self.pairs):
            raise ValueError("match refers to a camera index out of range")
        rows = [p.i for p in self.pairs]
        cols = [p.j for p in self.pairs]
        g = sp.coo_matrix((np.ones(len(rows)), (rows, cols)), shape=(n_cameras, n_cameras))
        k, _ = csgraph.connected_components(g, directed=False)
        if k != 1:
            raise DisconnectedGraphError(f"camera-match graph has {k} components")

    @classmethod
    def read(cls, path) -> "MatchSet":
        """Parse ``match i j x_i y_i x_j y_j`` lines; ``#`` starts a comment."""
        groups: dict = {}
        with open(path) as fh:
            for lineno, line in enumerate(fh, 1):
                line = line.split("#", 1)[0].strip()
                if not line:
                    continue
                tok = line.split()
                if tok[0] != "match" or len(tok) != 7:
                    raise ValueError(f"{path}:{lineno}: expected 'match i j x_i y_i x_j y_j'")
                i, j = int(tok[1]), int(tok[2])
                groups.setdefault((i, j), []).append([float(t) for t in tok[3:]])
        return cls(PairMatches(i, j, np.array(v)[:, :2], np.array(v)[:, 2:])
                   for (i, j), v in groups.items())

    def write(self, path) -> None:
        with open(path, "w") as fh:
            fh.write("# match i j x_i y_i x_j y_j\n")
            for p in self.pairs:
                for a, b in zip(p.xi.tolist(), p.xj.tolist()):
                    fh.write(f"match {p.i} {p.j} {a[0]!r} {a[1]!r} {b[0]!r} {b[1]!r}\n")


@dataclass(frozen=True)
class BundleConfig:
    shared_focal: bool = True
    fix_principal: bool = True
    huber: float | None = None      # robust scale in pixels; None for plain least squares
    max_iter: int = 100
    lambda0: float = 1e-3
    ftol: float = 1e-9
    xtol: float = 1e-12


@dataclass
class SolveReport:
    initial_cost: float
    final_cost: float
    iterations: int
    lambdas: list = field(default_factory=list)
    costs: list = field(default_factory=list)    # cost after each accepted step
    reason: str = ""
    n_residuals: int = 0
    flagged: int = 0                             # residuals capped at infinity

    @property
    def initial_rms(self) -> float:
        return float(np.sqrt(self.initial_cost / max(self.n_residuals // 2, 1)))

    @property
    def final_rms(self) -> float:
        return float(np.sqrt(self.final_cost / max(self.n_residuals // 2, 1)))


class ParamVector:
    """Packing of camera parameters into the LM unknown vector ``c``.

    Layout: focal(s), then principal points (unless fixed), then the
    angle-axis rotations of cameras 1..n-1.
    """

    def __init__(self, cameras, shared_focal=True, fix_principal=True):
        self.cameras = list(cameras)
        self.n = len(self.cameras)
        self.shared_focal = shared_focal
        self.fix_principal = fix_principal
        self.n_focal = 1 if shared_focal else self.n
        self.n_pp = 0 if fix_principal else 2 * self.n
        self.rot0 = self.cameras[0].rotation

    @property
    def size(self) -> int:
        return self.n_focal + self.n_pp + 3 * (self.n - 1)

    def focal_index(self, k):
        return 0 if self.shared_focal else k

    def pp_index(self, k):
        return None if self.fix_principal else self.n_focal + 2 * k

    def rot_index(self, k):
        return None if k == 0 else self.n_focal + self.n_pp + 3 * (k - 1)

    def pack(self, cameras=None) -> np.ndarray:
        cams = self.cameras if cameras is None else cameras
        c = np.zeros(self.size)
        if self.shared_focal:
            c[0] = np.mean([cam.intrinsics.focal for cam in cams])
        else:
            c[:self.n] = [cam.intrinsics.focal for cam in cams]
        for k, cam in enumerate(cams):
            if not self.fix_principal:
                p = self.pp_index(k)
                c[p:p + 2] = cam.intrinsics.principal_x, cam.intrinsics.principal_y
            if k:
                r = self.rot_index(k)
                c[r:r + 3] = rotation_to_angle_axis(cam.rotation)
        return c

    def focals(self, c):
        return np.full(self.n, c[0]) if self.shared_focal else np.asarray(c[:self.n])

    def principals(self, c):
        if self.fix_principal:
            return np.array([(cam.intrinsics.principal_x, cam.intrinsics.principal_y)
                             for cam in self.cameras])
        return np.asarray(c[self.n_focal:self.n_focal + self.n_pp]).reshape(self.n, 2)

    def angle_axes(self, c):
        out = np.zeros((self.n, 3))
        out[0] = rotation_to_angle_axis(self.rot0)
        if self.n > 1:
            out[1:] = np.asarray(c[self.n_focal + self.n_pp:]).reshape(-1, 3)
        return out

    def rotations(self, c):
        R = [self.rot0] + [rotation_from_angle_axis(v) for v in self.angle_axes(c)[1:]]
        return np.array(R)

    def unpack(self, c) -> list[Camera]:
        f = self.focals(c)
        pp = self.principals(c)
        R = self.rotations(c)
        out = []
        for k, cam in enumerate(self.cameras):
            K = cam.intrinsics
            out.append(Camera(Intrinsics(float(f[k]), float(pp[k, 0]), float(pp[k, 1]),
                                         K.width, K.height), R[k], cam.translation))
        return out

    def clamp(self, c):
        c = np.array(c, float)
        c[:self.n_focal] = np.maximum(c[:self.n_focal], MIN_FOCAL)
        return c


def reproject(x_i, cam_i: Camera, cam_j: Camera) -> np.ndarray:
    """Map pixels of camera ``i`` into camera ``j`` through ``K_j R_j R_i^T K_i^-1``.

    Raises ``ValueError`` when a point maps to infinity.
    """
    x = np.asarray(x_i, float)
    h = np.c_[x.reshape(-1, 2), np.ones(x.size // 2)]
    H = cam_j.intrinsics.matrix @ cam_j.rotation @ cam_i.rotation.T @ cam_i.intrinsics.inverse_matrix
    y = h @ H.T
    if np.any(np.abs(y[:, 2]) < AT_INFINITY):
        raise ValueError("point reprojects to infinity")
    return (y[:, :2] / y[:, 2:]).reshape(x.shape)


def rotation_derivatives(v) -> np.ndarray:
    """``dR/dv_k`` for ``R = rotation_from_angle_axis(v)``, shape ``(3, 3, 3)``."""
    v = np.asarray(v, float)
    R = rotation_from_angle_axis(v)
    n2 = v @ v
    E = np.eye(3)
    if n2 < 1e-24:
        return np.array([skew(E[k]) @ R for k in range(3)])
    return np.array([(v[k] * skew(v) + skew(np.cross(v, (E - R) @ E[k]))) / n2 @ R
                     for k in range(3)])


def _pair_terms(P: ParamVector, c, pair: PairMatches, jac: bool):
    f = P.focals(c)
    pp = P.principals(c)
    aa = P.angle_axes(c)
    i, j = pair.i, pair.j
    Ri = rotation_from_angle_axis(aa[i]) if i else P.rot0
    Rj = rotation_from_angle_axis(aa[j]) if j else P.rot0
    M = Rj @ Ri.T
    y = np.c_[(pair.xi - pp[i]) / f[i], np.ones(len(pair.xi))]
    w = y @ M.T
    c3 = w[:, 2]
    inf = np.abs(c3) < AT_INFINITY
    cs = np.where(inf, 1.0, c3)
    proj = f[j] * w[:, :2] / cs[:, None] + pp[j]
    r = pair.xj - proj
    r[inf] = CAPPED_RESIDUAL
    if not jac:
        return r, inf, None
    k = len(y)
    # d proj / d w, shape (k, 2, 3)
    dpw = np.zeros((k, 2, 3))
    dpw[:, 0, 0] = f[j] / cs
    dpw[:, 1, 1] = f[j] / cs
    dpw[:, 0, 2] = -f[j] * w[:, 0] / cs ** 2
    dpw[:, 1, 2] = -f[j] * w[:, 1] / cs ** 2
    cols = {}

    def add(idx, d):   # d: (k, 2) derivative of proj
        cols[idx] = cols.get(idx, 0.0) + d

    # focal of j: proj = f_j * w/c + pp_j
    add(P.focal_index(j), w[:, :2] / cs[:, None])
    # focal of i via y = ((x - pp_i)/f_i, 1)
    dy_df = np.c_[-y[:, :2] / f[i], np.zeros(k)]
    add(P.focal_index(i), np.einsum("kab,kb->ka", dpw, dy_df @ M.T))
    if not P.fix_principal:
        pj, pi = P.pp_index(j), P.pp_index(i)
        add(pj, np.tile([1.0, 0.0], (k, 1)))
        add(pj + 1, np.tile([0.0, 1.0], (k, 1)))
        add(pi, np.einsum("kab,b->ka", dpw, M[:, 0] * (-1.0 / f[i])))
        add(pi + 1, np.einsum("kab,b->ka", dpw, M[:, 1] * (-1.0 / f[i])))
    if j:
        dR = rotation_derivatives(aa[j])
        base = P.rot_index(j)
        for a in range(3):
            add(base + a, np.einsum("kab,kb->ka", dpw, y @ (dR[a] @ Ri.T).T))
    if i:
        dR = rotation_derivatives(aa[i])
        base = P.rot_index(i)
        for a in range(3):
            add(base + a, np.einsum("kab,kb->ka", dpw, y @ (Rj @ dR[a].T).T))
    for idx in cols:
        d = -cols[idx]       # residual is x_j - proj
        d[inf] = 0.0
        cols[idx] = d
    return r, inf, cols


def residuals(P: ParamVector, c, matches: MatchSet) -> np.ndarray:
    """Stacked ``x_j - reproject(x_i)`` over all matches (2 entries per point)."""
    return np.concatenate([_pair_terms(P, c, p, False)[0].ravel() for p in matches])


def jacobian(P: ParamVector, c, matches: MatchSet) -> sp.csr_matrix:
    """Analytic sparse ``dr/dc``; each row touches only its two cameras' blocks."""
    rows, cols, vals = [], [], []
    off = 0
    for p in matches:
        _, _, d = _pair_terms(P, c, p, True)
        k = len(p.xi)
        rr = off + np.arange(2 * k)
        for idx, v in d.items():
            rows.append(rr)
            cols.append(np.full(2 * k, idx))
            vals.append(v.ravel())
        off += 2 * k
    if not rows:
        return sp.csr_matrix((off, P.size))
    J = sp.coo_matrix((np.concatenate(vals), (np.concatenate(rows), np.concatenate(cols))),
                      shape=(off, P.size))
    return J.tocsr()


def _huber_weights(r, delta):
    e = np.hypot(r[0::2], r[1::2])
    w = np.where(e <= delta, 1.0, np.sqrt(delta / np.maximum(e, 1e-300)))
    return np.repeat(w, 2)


def _cost(r, huber):
    if huber is None:
        return float(r @ r)
    e = np.hypot(r[0::2], r[1::2])
    return float(np.sum(np.where(e <= huber, e * e, 2 * huber * e - huber * huber)))


def lm_step(J, r, lam: float) -> np.ndarray:
    """Solve ``(J^T J + lam I) dc = J^T r``; the caller applies ``c - dc``."""
    J = sp.csr_matrix(J) if not sp.issparse(J) else J.tocsr()
    r = np.asarray(r, float).ravel()
    A = (J.T @ J + lam * sp.identity(J.shape[1])).tocsc()
    b = J.T @ r
    if not np.any(b):
        return np.zeros(J.shape[1])
    return splu(A).solve(b)


def optimize(cameras, matches: MatchSet, config: BundleConfig = BundleConfig()):
    """Refine cameras by LM; returns ``(cameras, SolveReport)``.

    Never raises on non-convergence: the best parameters so far are returned
    with the stop reason recorded in the report.
    """
    cameras = list(cameras)
    matches.check_connected(len(cameras))
    P = ParamVector(cameras, config.shared_focal, config.fix_principal)
    c = P.pack()
    r = residuals(P, c, matches)
    cost = _cost(r, config.huber)
    report = SolveReport(cost, cost, 0, n_residuals=r.size)
    lam = config.lambda0
    reason = "max iterations"
    for it in range(1, config.max_iter + 1):
        report.iterations = it
        report.lambdas.append(lam)
        J = jacobian(P, c, matches)
        rw = r
        if config.huber is not None:
            w = _huber_weights(r, config.huber)
            J = sp.diags(w) @ J
            rw = w * r
        try:
            dc = lm_step(J, rw, lam)
        except RuntimeError:
            lam *= 10.0
            continue
        if np.linalg.norm(dc) < config.xtol:
            reason = "step below tolerance"
            break
        c_new = P.clamp(c - dc)
        r_new = residuals(P, c_new, matches)
        cost_new = _cost(r_new, config.huber)
        if cost_new < cost:
            rel = (cost - cost_new) / cost
            c, r, cost = c_new, r_new, cost_new
            report.costs.append(cost)
            lam /= 10.0
            if rel < config.ftol:
                reason = "relative decrease below tolerance"
                break
            if cost == 0.0:
                reason = "zero cost"
                break
        else:
            lam *= 10.0
    report.final_cost = cost
    report.reason = reason
    report.flagged = int(np.sum(np.abs(r) >= CAPPED_RESIDUAL))
    return P.unpack(c), report
