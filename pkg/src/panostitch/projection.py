"""Panoramic projection formats and the inverse-mapping image warper.

Every format works on world-frame unit directions (see :mod:`.geometry` for
the axis convention). Where a format's textbook formula is written in a
z-up spherical frame (spherical coordinates, little planet) the conversion
is done by :func:`world_to_sphere`, which sends the world forward axis +Z to
the sphere's +X, world right +X to +Y and world up -Y to +Z.

Vectorised forward functions return their coordinates together with an
``ok`` mask instead of raising, so whole canvases can be processed at once;
coordinates are NaN where ``ok`` is False.
"""

from __future__ import annotations

from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from functools import cached_property, lru_cache
from typing import ClassVar

import numpy as np

from .geometry import Camera, project_rays

EPS = 1e-9
SAMPLE_TOL = 1e-6
FORMAT_NAMES = ("planar", "erp", "cubemap", "tangent", "panini", "littleplanet",
                "cylindrical", "fisheye", "polyhedron")


def _normalize(d):
    d = np.asarray(d, dtype=float)
    return d / np.linalg.norm(d, axis=-1, keepdims=True)


def world_to_sphere(d):
    d = np.asarray(d, dtype=float)
    return np.stack([d[..., 2], d[..., 0], -d[..., 1]], axis=-1)


def sphere_to_world(s):
    s = np.asarray(s, dtype=float)
    return np.stack([s[..., 1], -s[..., 2], s[..., 0]], axis=-1)


def dir_to_spherical(d):
    """Polar angle ``theta`` in [0, pi] and azimuth ``phi`` in [-pi, pi).

    ``d = (sin t cos p, sin t sin p, cos t)``; at the poles ``phi`` is 0.
    """
    d = np.asarray(d, dtype=float)
    x, y, z = d[..., 0], d[..., 1], d[..., 2]
    theta = np.arctan2(np.hypot(x, y), z)
    phi = np.arctan2(y, x)
    phi = np.where(phi >= np.pi, phi - 2 * np.pi, phi)
    phi = np.where((x == 0) & (y == 0), 0.0, phi)
    return theta, phi


def spherical_to_dir(theta, phi):
    theta = np.asarray(theta, dtype=float)
    phi = np.asarray(phi, dtype=float)
    st = np.sin(theta)
    return np.stack([st * np.cos(phi), st * np.sin(phi), np.cos(theta)], axis=-1)


def dir_to_lonlat(d):
    """World direction to longitude (0 forward, +pi/2 toward +X) and latitude (+ up)."""
    theta, phi = dir_to_spherical(world_to_sphere(d))
    return phi, np.pi / 2 - theta


def lonlat_to_dir(lon, lat):
    return sphere_to_world(spherical_to_dir(np.pi / 2 - np.asarray(lat, dtype=float), lon))


# --- equirectangular ----------------------------------------------------------

def erp_forward(d, width, height):
    """Continuous ERP coordinates, ``u`` in [0, W) and ``v`` in [0, H] (edge based)."""
    lon, lat = dir_to_lonlat(d)
    u = (lon / np.pi + 1.0) / 2.0 * width
    v = (0.5 - lat / np.pi) * height
    return u, v


def erp_inverse(u, v, width, height):
    lon = (2.0 * np.asarray(u, dtype=float) / width - 1.0) * np.pi
    lat = (0.5 - np.asarray(v, dtype=float) / height) * np.pi
    return lonlat_to_dir(lon, lat)


# --- cubemap ------------------------------------------------------------------

# forward, right and down axes of the six faces, indexed by face number
CUBE_FACES = np.array([
    [[0, 0, 1], [1, 0, 0], [0, 1, 0]],     # 0 front  +Z
    [[1, 0, 0], [0, 0, -1], [0, 1, 0]],    # 1 right  +X
    [[0, 0, -1], [-1, 0, 0], [0, 1, 0]],   # 2 back   -Z
    [[-1, 0, 0], [0, 0, 1], [0, 1, 0]],    # 3 left   -X
    [[0, -1, 0], [1, 0, 0], [0, 0, 1]],    # 4 up     -Y
    [[0, 1, 0], [1, 0, 0], [0, 0, -1]],    # 5 down   +Y
], dtype=float)
CUBE_NAMES = ("front", "right", "back", "left", "up", "down")


def cubemap_forward(d):
    """Face index and in-face coordinates ``u, v`` in [-1, 1].

    The face is the one whose axis carries the dominant component; exact
    ties go to the lower face index.
    """
    d = np.asarray(d, dtype=float)
    proj = d @ CUBE_FACES[:, 0, :].T
    face = np.zeros(proj.shape[:-1], dtype=np.intp)
    best = proj[..., 0]
    for k in range(1, 6):
        better = proj[..., k] > best
        face = np.where(better, k, face)
        best = np.where(better, proj[..., k], best)
    axes = CUBE_FACES[face]
    den = np.abs(best)
    u = np.einsum("...i,...i->...", d, axes[..., 1, :]) / den
    v = np.einsum("...i,...i->...", d, axes[..., 2, :]) / den
    return face, u, v


def cubemap_inverse(face, u, v):
    axes = CUBE_FACES[np.asarray(face)]
    u = np.asarray(u, dtype=float)[..., None]
    v = np.asarray(v, dtype=float)[..., None]
    return _normalize(axes[..., 0, :] + u * axes[..., 1, :] + v * axes[..., 2, :])


# --- tangent (gnomonic) -------------------------------------------------------

def tangent_forward(d, center_lon, center_lat):
    """Gnomonic coordinates on the plane tangent at ``(center_lon, center_lat)``.

    ``v_t`` grows toward higher latitude. ``ok`` is False when the cosine of
    the central angle is at most ``EPS`` (the point is beyond the horizon).
    """
    lon, lat = dir_to_lonlat(d)
    dl = lon - center_lon
    cos_c = np.sin(center_lat) * np.sin(lat) + np.cos(center_lat) * np.cos(lat) * np.cos(dl)
    ok = cos_c > EPS
    den = np.where(ok, cos_c, np.nan)
    u = np.cos(lat) * np.sin(dl) / den
    v = (np.cos(center_lat) * np.sin(lat) - np.sin(center_lat) * np.cos(lat) * np.cos(dl)) / den
    return u, v, ok


def _tangent_basis(center_lon, center_lat):
    cl, sl = np.cos(center_lon), np.sin(center_lon)
    cp, sp = np.cos(center_lat), np.sin(center_lat)
    c = np.array([cp * sl, -sp, cp * cl])
    east = np.array([cl, 0.0, -sl])
    north = np.array([-sp * sl, -cp, -sp * cl])
    return c, east, north


def tangent_inverse(u, v, center_lon, center_lat):
    c, east, north = _tangent_basis(center_lon, center_lat)
    u = np.asarray(u, dtype=float)[..., None]
    v = np.asarray(v, dtype=float)[..., None]
    return _normalize(c + u * east + v * north)


# --- Panini -------------------------------------------------------------------

def panini_forward(lon, lat, d=1.0):
    """Panini coordinates ``(h, v)`` with compression parameter ``d >= 0``.

    ``ok`` is False outside the domain ``d + cos(lon) > EPS``, ``|lat| < pi/2``.
    """
    if d < 0:
        raise ValueError("Panini parameter d must be non-negative")
    lon = np.asarray(lon, dtype=float)
    lat = np.asarray(lat, dtype=float)
    den = d + np.cos(lon)
    ok = (den > EPS) & (np.abs(lat) < np.pi / 2)
    S = (d + 1.0) / np.where(ok, den, np.nan)
    return S * np.sin(lon), S * np.tan(np.where(ok, lat, np.nan)), ok


def panini_inverse(h, v, d=1.0):
    """Longitude and latitude for Panini coordinates (front-most preimage)."""
    h = np.asarray(h, dtype=float)
    v = np.asarray(v, dtype=float)
    a = h * h + (d + 1.0) ** 2
    disc = d * d * (d + 1.0) ** 2 - a * (d * d - 1.0)
    ok = disc >= 0
    t = (d * (d + 1.0) + np.sqrt(np.where(ok, disc, 0.0))) / a
    lon = np.arctan2(t * h, -d + t * (d + 1.0))
    S = (d + 1.0) / (d + np.cos(lon))
    lat = np.arctan(v / S)
    return np.where(ok, lon, np.nan), np.where(ok, lat, np.nan), ok


# --- little planet (stereographic from the zenith) ----------------------------

def little_planet_forward(s):
    """Stereographic projection of z-up sphere points from the zenith."""
    s = np.asarray(s, dtype=float)
    den = 1.0 - s[..., 2]
    ok = den > EPS
    den = np.where(ok, den, np.nan)
    return s[..., 0] / den, s[..., 1] / den, ok


def little_planet_inverse(X, Y):
    X = np.asarray(X, dtype=float)
    Y = np.asarray(Y, dtype=float)
    r2 = X * X + Y * Y
    return np.stack([2 * X, 2 * Y, r2 - 1.0], axis=-1) / (r2 + 1.0)[..., None]


# --- cylindrical and fisheye --------------------------------------------------

def cylindrical_forward(d, focal):
    lon, lat = dir_to_lonlat(d)
    ok = np.abs(lat) < np.pi / 2 - EPS
    return focal * lon, np.where(ok, focal * np.tan(lat), np.nan), ok


def cylindrical_inverse(u, v, focal):
    return lonlat_to_dir(np.asarray(u, dtype=float) / focal,
                         np.arctan(np.asarray(v, dtype=float) / focal))


def fisheye_forward(d, focal):
    """Equidistant fisheye ``r = f * angle`` about world +Z, image axes as a camera."""
    d = np.asarray(d, dtype=float)
    rho = np.hypot(d[..., 0], d[..., 1])
    angle = np.arctan2(rho, d[..., 2])
    ok = angle < np.pi - EPS
    scale = np.where(rho > 0, focal * angle / np.where(rho > 0, rho, 1.0), focal)
    u = np.where(ok, scale * d[..., 0], np.nan)
    v = np.where(ok, scale * d[..., 1], np.nan)
    return u, v, ok


def fisheye_inverse(u, v, focal):
    u = np.asarray(u, dtype=float)
    v = np.asarray(v, dtype=float)
    r = np.hypot(u, v)
    angle = r / focal
    ok = angle <= np.pi
    s = np.where(r > 0, np.sin(angle) / np.where(r > 0, r, 1.0), 1.0 / focal)
    return np.stack([s * u, s * v, np.cos(angle)], axis=-1), ok


# --- polyhedron ---------------------------------------------------------------

MAX_POLY_LEVEL = 4


@dataclass(frozen=True)
class PolyFace:
    vertices: np.ndarray  # (3, 3) unit vectors, counter-clockwise seen from outside
    center: np.ndarray    # unit centroid direction
    center_lon: float
    center_lat: float


def _icosahedron():
    p = (1 + 5 ** 0.5) / 2
    verts = np.array([[-1, p, 0], [1, p, 0], [-1, -p, 0], [1, -p, 0],
                      [0, -1, p], [0, 1, p], [0, -1, -p], [0, 1, -p],
                      [p, 0, -1], [p, 0, 1], [-p, 0, -1], [-p, 0, 1]], dtype=float)
    verts /= np.linalg.norm(verts, axis=1, keepdims=True)
    faces = [(0, 11, 5), (0, 5, 1), (0, 1, 7), (0, 7, 10), (0, 10, 11),
             (1, 5, 9), (5, 11, 4), (11, 10, 2), (10, 7, 6), (7, 1, 8),
             (3, 9, 4), (3, 4, 2), (3, 2, 6), (3, 6, 8), (3, 8, 9),
             (4, 9, 5), (2, 4, 11), (6, 2, 10), (8, 6, 7), (9, 8, 1)]
    tris = verts[np.array(faces)]
    # make every triangle counter-clockwise seen from outside
    normal = np.cross(tris[:, 1] - tris[:, 0], tris[:, 2] - tris[:, 0])
    flip = np.einsum("ij,ij->i", normal, tris.sum(1)) < 0
    tris[flip] = tris[flip][:, ::-1]
    return tris


def _subdivide(tris):
    a, b, c = tris[:, 0], tris[:, 1], tris[:, 2]
    ab, bc, ca = _normalize(a + b), _normalize(b + c), _normalize(c + a)
    children = np.stack([
        np.stack([a, ab, ca], 1), np.stack([ab, b, bc], 1),
        np.stack([ca, bc, c], 1), np.stack([ab, bc, ca], 1)], axis=1)
    return children.reshape(-1, 3, 3)


@lru_cache(maxsize=None)
def _polyhedron_levels(level: int):
    levels = [_icosahedron()]
    for _ in range(level):
        levels.append(_subdivide(levels[-1]))
    return tuple(levels)


def polyhedron_faces(level: int) -> list[PolyFace]:
    """Faces of the icosahedron subdivided ``level`` times (``20 * 4**level``).

    Children of face ``k`` at one level are faces ``4k .. 4k+3`` at the next.
    """
    if not 0 <= level <= MAX_POLY_LEVEL:
        raise ValueError(f"polyhedron level must be in [0, {MAX_POLY_LEVEL}], got {level}")
    tris = _polyhedron_levels(level)[-1]
    centers = _normalize(tris.sum(1))
    lon, lat = dir_to_lonlat(centers)
    return [PolyFace(t, c, float(lo), float(la)) for t, c, lo, la in zip(tris, centers, lon, lat)]


def _inside(tris, d, tol=1e-12):
    a, b, c = tris[..., 0, :], tris[..., 1, :], tris[..., 2, :]
    s0 = np.einsum("...i,...i->...", np.cross(a, b), d)
    s1 = np.einsum("...i,...i->...", np.cross(b, c), d)
    s2 = np.einsum("...i,...i->...", np.cross(c, a), d)
    return (s0 >= -tol) & (s1 >= -tol) & (s2 >= -tol)


def polyhedron_face_index(d, level: int):
    """Index of the face containing each direction; edge ties go to the lowest index."""
    d = np.asarray(d, dtype=float)
    flat = d.reshape(-1, 3)
    levels = _polyhedron_levels(level)
    idx = np.full(len(flat), -1, dtype=np.intp)
    for k in range(19, -1, -1):
        idx[_inside(levels[0][k], flat)] = k
    for tris in levels[1:]:
        new = np.full_like(idx, -1)
        for k in range(3, -1, -1):
            cand = 4 * np.maximum(idx, 0) + k
            new = np.where(_inside(tris[cand], flat), cand, new)
        idx = new
    return idx.reshape(d.shape[:-1])


def polyhedron_forward(d, level: int):
    """Face index plus tangent-plane coordinates at that face's centroid."""
    d = np.asarray(d, dtype=float)
    idx = polyhedron_face_index(d, level)
    faces = polyhedron_faces(level)
    lon_c = np.array([f.center_lon for f in faces])[idx]
    lat_c = np.array([f.center_lat for f in faces])[idx]
    u, v, ok = tangent_forward(d, lon_c, lat_c)
    return idx, u, v, ok


def polyhedron_inverse(face, u, v, level: int):
    faces = polyhedron_faces(level)
    face = np.asarray(face)
    lon_c = np.array([f.center_lon for f in faces])[face]
    lat_c = np.array([f.center_lat for f in faces])[face]
    c = np.stack([np.cos(lat_c) * np.sin(lon_c), -np.sin(lat_c), np.cos(lat_c) * np.cos(lon_c)], -1)
    east = np.stack([np.cos(lon_c), np.zeros_like(lon_c), -np.sin(lon_c)], -1)
    north = np.stack([-np.sin(lat_c) * np.sin(lon_c), -np.cos(lat_c),
                      -np.sin(lat_c) * np.cos(lon_c)], -1)
    u = np.asarray(u, dtype=float)[..., None]
    v = np.asarray(v, dtype=float)[..., None]
    return _normalize(c + u * east + v * north)


# --- formats ------------------------------------------------------------------
#
# Each format converts between canvas pixel coordinates (index based, pixel
# (i, j) centred at (i, j)) and world directions for a canvas of size W x H.

class ProjectionFormat:
    name: ClassVar[str]

    def canvas_shape(self, width: int, height: int) -> tuple[int, int]:
        """Validate (and possibly adjust) the canvas size for this format."""
        return width, height

    def pixel_to_dir(self, u, v, width, height):
        raise NotImplementedError

    def dir_to_pixel(self, d, width, height):
        raise NotImplementedError


def _center(width, height):
    return (width - 1) / 2.0, (height - 1) / 2.0


@dataclass(frozen=True)
class Planar(ProjectionFormat):
    focal: float
    cx: float | None = None
    cy: float | None = None
    name: ClassVar[str] = "planar"

    def _c(self, width, height):
        cx, cy = _center(width, height)
        return (cx if self.cx is None else self.cx), (cy if self.cy is None else self.cy)

    def pixel_to_dir(self, u, v, width, height):
        cx, cy = self._c(width, height)
        x = (np.asarray(u, float) - cx) / self.focal
        y = (np.asarray(v, float) - cy) / self.focal
        d = _normalize(np.stack([x, y, np.ones_like(x)], -1))
        return d, np.ones(x.shape, bool)

    def dir_to_pixel(self, d, width, height):
        cx, cy = self._c(width, height)
        d = np.asarray(d, float)
        ok = d[..., 2] > EPS
        z = np.where(ok, d[..., 2], np.nan)
        return self.focal * d[..., 0] / z + cx, self.focal * d[..., 1] / z + cy, ok


@dataclass(frozen=True)
class Equirect(ProjectionFormat):
    name: ClassVar[str] = "erp"

    def canvas_shape(self, width, height):
        if width != 2 * height:
            raise ValueError(f"equirectangular canvas needs W = 2H, got {width}x{height}")
        return width, height

    def pixel_to_dir(self, u, v, width, height):
        d = erp_inverse(np.asarray(u, float) + 0.5, np.asarray(v, float) + 0.5, width, height)
        return d, np.ones(d.shape[:-1], bool)

    def dir_to_pixel(self, d, width, height):
        u, v = erp_forward(d, width, height)
        return u - 0.5, v - 0.5, np.ones(np.shape(u), bool)


@dataclass(frozen=True)
class Cubemap(ProjectionFormat):
    """Six faces laid out 3x2: front, right, back / left, up, down."""

    face_size: int
    name: ClassVar[str] = "cubemap"

    def canvas_shape(self, width, height):
        if (width, height) != (3 * self.face_size, 2 * self.face_size):
            raise ValueError(f"cubemap canvas must be {3 * self.face_size}x{2 * self.face_size}")
        return width, height

    def pixel_to_dir(self, u, v, width, height):
        fs = self.face_size
        u = np.asarray(u, float)
        v = np.asarray(v, float)
        col = np.clip(np.floor((u + 0.5) / fs), 0, 2).astype(int)
        row = np.clip(np.floor((v + 0.5) / fs), 0, 1).astype(int)
        face = row * 3 + col
        fu = (u - col * fs + 0.5) / fs * 2 - 1
        fv = (v - row * fs + 0.5) / fs * 2 - 1
        return cubemap_inverse(face, fu, fv), np.ones(u.shape, bool)

    def dir_to_pixel(self, d, width, height):
        fs = self.face_size
        face, fu, fv = cubemap_forward(d)
        u = (fu + 1) / 2 * fs - 0.5 + (face % 3) * fs
        v = (fv + 1) / 2 * fs - 0.5 + (face // 3) * fs
        return u, v, np.ones(u.shape, bool)


@dataclass(frozen=True)
class Tangent(ProjectionFormat):
    center_lon: float = 0.0
    center_lat: float = 0.0
    focal: float | None = None
    name: ClassVar[str] = "tangent"

    def _f(self, width):
        return width / 2.0 if self.focal is None else self.focal

    def pixel_to_dir(self, u, v, width, height):
        cx, cy = _center(width, height)
        f = self._f(width)
        d = tangent_inverse((np.asarray(u, float) - cx) / f, (cy - np.asarray(v, float)) / f,
                            self.center_lon, self.center_lat)
        return d, np.ones(d.shape[:-1], bool)

    def dir_to_pixel(self, d, width, height):
        cx, cy = _center(width, height)
        f = self._f(width)
        ut, vt, ok = tangent_forward(d, self.center_lon, self.center_lat)
        return cx + f * ut, cy - f * vt, ok


@dataclass(frozen=True)
class Panini(ProjectionFormat):
    d: float = 1.0
    focal: float | None = None
    name: ClassVar[str] = "panini"

    def __post_init__(self):
        if self.d < 0:
            raise ValueError("Panini parameter d must be non-negative")

    def _f(self, width):
        if self.focal is not None:
            return self.focal
        h90 = (self.d + 1.0) / self.d if self.d > 0 else 1.0
        return width / 2.0 / max(1.0, h90)

    def _visible(self, lon):
        # beyond cos(lon) = -1/d the horizontal mapping folds back on itself
        ok = self.d + np.cos(lon) > EPS
        if self.d > 1:
            ok &= self.d * np.cos(lon) + 1.0 > EPS
        return ok

    def pixel_to_dir(self, u, v, width, height):
        cx, cy = _center(width, height)
        f = self._f(width)
        lon, lat, ok = panini_inverse((np.asarray(u, float) - cx) / f,
                                      (cy - np.asarray(v, float)) / f, self.d)
        ok &= self._visible(np.where(ok, lon, 0.0))
        return lonlat_to_dir(np.where(ok, lon, 0.0), np.where(ok, lat, 0.0)), ok

    def dir_to_pixel(self, d, width, height):
        cx, cy = _center(width, height)
        f = self._f(width)
        lon, lat = dir_to_lonlat(d)
        h, v, ok = panini_forward(lon, lat, self.d)
        ok &= self._visible(lon)
        return cx + f * h, cy - f * v, ok


@dataclass(frozen=True)
class LittlePlanet(ProjectionFormat):
    """Stereographic view from the zenith; the nadir sits at the canvas centre."""

    scale: float | None = None
    name: ClassVar[str] = "littleplanet"

    def _s(self, width, height):
        return min(width, height) / 4.0 if self.scale is None else self.scale

    def pixel_to_dir(self, u, v, width, height):
        cx, cy = _center(width, height)
        s = self._s(width, height)
        sph = little_planet_inverse((np.asarray(u, float) - cx) / s, (np.asarray(v, float) - cy) / s)
        return sphere_to_world(sph), np.ones(sph.shape[:-1], bool)

    def dir_to_pixel(self, d, width, height):
        cx, cy = _center(width, height)
        s = self._s(width, height)
        X, Y, ok = little_planet_forward(world_to_sphere(d))
        return cx + s * X, cy + s * Y, ok


@dataclass(frozen=True)
class Cylindrical(ProjectionFormat):
    focal: float | None = None
    name: ClassVar[str] = "cylindrical"

    def _f(self, width):
        return width / (2 * np.pi) if self.focal is None else self.focal

    def pixel_to_dir(self, u, v, width, height):
        cx, cy = _center(width, height)
        f = self._f(width)
        u = np.asarray(u, float)
        d = cylindrical_inverse(u - cx, cy - np.asarray(v, float), f)
        ok = np.abs(u - cx) / f <= np.pi
        return d, ok

    def dir_to_pixel(self, d, width, height):
        cx, cy = _center(width, height)
        x, y, ok = cylindrical_forward(d, self._f(width))
        return cx + x, cy - y, ok


@dataclass(frozen=True)
class Fisheye(ProjectionFormat):
    """Equidistant fisheye looking down world +Z."""

    focal: float | None = None
    name: ClassVar[str] = "fisheye"

    def _f(self, width, height):
        return min(width, height) / (2 * np.pi) if self.focal is None else self.focal

    def pixel_to_dir(self, u, v, width, height):
        cx, cy = _center(width, height)
        return fisheye_inverse(np.asarray(u, float) - cx, np.asarray(v, float) - cy,
                               self._f(width, height))

    def dir_to_pixel(self, d, width, height):
        cx, cy = _center(width, height)
        x, y, ok = fisheye_forward(d, self._f(width, height))
        return cx + x, cy + y, ok


@dataclass(frozen=True)
class Polyhedron(ProjectionFormat):
    """Tangent-plane tiles of a subdivided icosahedron, laid out row-major.

    Each tile is a gnomonic image centred on its face's centroid; tile
    pixels outside the face's spherical triangle map to no direction.
    """

    level: int = 0
    face_size: int = 64
    name: ClassVar[str] = "polyhedron"

    def __post_init__(self):
        if not 0 <= self.level <= MAX_POLY_LEVEL:
            raise ValueError(f"polyhedron level must be in [0, {MAX_POLY_LEVEL}]")

    @property
    def n_faces(self) -> int:
        return 20 * 4 ** self.level

    @property
    def grid(self) -> tuple[int, int]:
        cols = int(np.ceil(np.sqrt(self.n_faces)))
        rows = int(np.ceil(self.n_faces / cols))
        return cols, rows

    @cached_property
    def half_extent(self) -> float:
        # largest gnomonic radius of any face vertex, so each triangle fits its tile
        r = 0.0
        for f in polyhedron_faces(self.level):
            cosang = f.vertices @ f.center
            r = max(r, float(np.max(np.sqrt(1 - cosang ** 2) / cosang)))
        return r * 1.02

    def canvas_shape(self, width, height):
        cols, rows = self.grid
        if (width, height) != (cols * self.face_size, rows * self.face_size):
            raise ValueError(f"polyhedron canvas must be {cols * self.face_size}x{rows * self.face_size}")
        return width, height

    def pixel_to_dir(self, u, v, width, height):
        fs = self.face_size
        cols, _ = self.grid
        u = np.asarray(u, float)
        v = np.asarray(v, float)
        col = np.floor((u + 0.5) / fs).astype(int)
        row = np.floor((v + 0.5) / fs).astype(int)
        face = row * cols + col
        ok = (face >= 0) & (face < self.n_faces)
        face = np.where(ok, face, 0)
        s = self.half_extent / (fs / 2.0)
        tu = (u - col * fs - (fs - 1) / 2.0) * s
        tv = ((fs - 1) / 2.0 - (v - row * fs)) * s
        d = polyhedron_inverse(face, tu, tv, self.level)
        ok &= polyhedron_face_index(d, self.level) == face
        return d, ok

    def dir_to_pixel(self, d, width, height):
        fs = self.face_size
        cols, _ = self.grid
        face, tu, tv, ok = polyhedron_forward(d, self.level)
        s = self.half_extent / (fs / 2.0)
        u = tu / s + (fs - 1) / 2.0 + (face % cols) * fs
        v = (fs - 1) / 2.0 - tv / s + (face // cols) * fs
        return u, v, ok


def make_format(name: str, **params) -> ProjectionFormat:
    """Build a format from its CLI name and keyword parameters."""
    classes = {c.name: c for c in (Planar, Equirect, Cubemap, Tangent, Panini, LittlePlanet,
                                   Cylindrical, Fisheye, Polyhedron)}
    if name not in classes:
        raise ValueError(f"unknown projection {name!r}; expected one of {', '.join(FORMAT_NAMES)}")
    return classes[name](**params)


# --- canvas and warping -------------------------------------------------------

@dataclass(frozen=True, eq=False)
class PanoramaCanvas:
    format: ProjectionFormat
    width: int
    height: int

    def __post_init__(self):
        if self.width <= 0 or self.height <= 0:
            raise ValueError("canvas size must be positive")
        self.format.canvas_shape(self.width, self.height)

    @property
    def shape(self) -> tuple[int, int]:
        return self.height, self.width

    def directions(self, rows: slice = slice(None)):
        """World directions of canvas pixel centres for a band of rows, plus validity."""
        r = np.arange(self.height)[rows]
        v, u = np.meshgrid(r.astype(float), np.arange(self.width, dtype=float), indexing="ij")
        d, ok = self.format.pixel_to_dir(u, v, self.width, self.height)
        return d, ok

    def project(self, d):
        """Canvas pixel coordinates of world directions, plus validity."""
        return self.format.dir_to_pixel(d, self.width, self.height)


@dataclass(eq=False)
class WarpedLayer:
    color: np.ndarray          # (H, W, 3) float in [0, 1]
    valid: np.ndarray          # (H, W) bool
    source_index: int
    warnings: list = field(default_factory=list)

    def __post_init__(self):
        self.color = np.where(self.valid[..., None], self.color, 0).astype(np.float32)

    @property
    def shape(self) -> tuple[int, int]:
        return self.valid.shape

    def bbox(self):
        """``(y0, y1, x0, x1)`` of the valid region, or None when empty."""
        return mask_bbox(self.valid)


def mask_bbox(mask):
    rows = np.flatnonzero(mask.any(1))
    if rows.size == 0:
        return None
    cols = np.flatnonzero(mask.any(0))
    return int(rows[0]), int(rows[-1]) + 1, int(cols[0]), int(cols[-1]) + 1


def to_float_image(image) -> np.ndarray:
    image = np.asarray(image)
    if image.dtype == np.uint8:
        image = image.astype(np.float64) / 255.0
    else:
        image = image.astype(np.float64)
    if image.ndim == 2:
        image = np.repeat(image[..., None], 3, axis=2)
    return image


def bilinear_sample(image, x, y):
    """Sample ``image`` at continuous pixel coordinates.

    Returns samples and a mask that is True only when all four taps are
    inside the image (x in [0, W-1], y in [0, H-1], up to ``SAMPLE_TOL``
    pixels of round-off); no edge clamping is used for valid samples.
    """
    h, w = image.shape[:2]
    x = np.asarray(x, float)
    y = np.asarray(y, float)
    # round-off from the ray round trip may push border pixels a hair outside
    t = SAMPLE_TOL
    ok = (x >= -t) & (x <= w - 1 + t) & (y >= -t) & (y <= h - 1 + t)
    xs = np.where(ok, np.clip(x, 0, w - 1), 0.0)
    ys = np.where(ok, np.clip(y, 0, h - 1), 0.0)
    x0 = np.minimum(np.floor(xs).astype(np.intp), max(w - 2, 0))
    y0 = np.minimum(np.floor(ys).astype(np.intp), max(h - 2, 0))
    x1 = np.minimum(x0 + 1, w - 1)
    y1 = np.minimum(y0 + 1, h - 1)
    fx = xs - x0
    fy = ys - y0
    if image.ndim == 3:
        fx = fx[..., None]
        fy = fy[..., None]
    top = image[y0, x0] * (1 - fx) + image[y0, x1] * fx
    bot = image[y1, x0] * (1 - fx) + image[y1, x1] * fx
    return top * (1 - fy) + bot * fy, ok


def _row_chunks(height, workers):
    n = max(1, min(height, 4 * workers))
    edges = np.linspace(0, height, n + 1).astype(int)
    return [slice(a, b) for a, b in zip(edges[:-1], edges[1:]) if b > a]


def warp_image(image, cam: Camera, canvas: PanoramaCanvas, source_index: int = 0,
               workers: int = 1) -> WarpedLayer:
    """Inverse-map ``image`` taken by ``cam`` onto ``canvas`` with bilinear sampling.

    Rows are processed in independent chunks; the result does not depend on
    ``workers``.
    """
    image = to_float_image(image)
    K = cam.intrinsics
    if image.shape[:2] != (K.height, K.width):
        raise ValueError(f"image is {image.shape[1]}x{image.shape[0]} but intrinsics "
                         f"describe {K.width}x{K.height}")
    H, W = canvas.shape
    color = np.zeros((H, W, 3), np.float32)
    valid = np.zeros((H, W), bool)

    def run(rows):
        d, ok = canvas.directions(rows)
        px, front = project_rays(cam, d)
        ok &= front
        sample, inside = bilinear_sample(image, px[..., 0], px[..., 1])
        ok &= inside
        color[rows] = np.where(ok[..., None], np.clip(sample, 0.0, 1.0), 0.0)
        valid[rows] = ok

    chunks = _row_chunks(H, workers)
    if workers <= 1:
        for rows in chunks:
            run(rows)
    else:
        with ThreadPoolExecutor(workers) as pool:
            list(pool.map(run, chunks))
    return WarpedLayer(color, valid, source_index)
