"""Camera models, rotation parameterizations and rotation-induced homographies.

Conventions used throughout the package:

* right-handed world frame, cameras look down +Z, image ``u`` to the right
  and ``v`` downwards (so world "up" is -Y);
* a :class:`Camera` rotation ``R`` maps world directions into the camera
  frame, ``x_cam = R @ x_world``;
* yaw turns the optical axis from +Z toward +X, pitch from +Z toward -Y;
* pixel coordinates are index based: the centre of pixel ``(i, j)`` sits at
  ``(u, v) = (i, j)``.

Translations are carried on :class:`Camera` but never used by projection,
the stitching model is rotation only.
"""

from __future__ import annotations

from dataclasses import dataclass, field, replace

import numpy as np

BEHIND_EPS = 1e-9
ANISOTROPY_TOL = 0.01


class BehindCameraError(ValueError):
    """Raised when a ray does not project in front of the camera."""


class AnisotropyError(ValueError):
    """Raised when rescaling would need different horizontal and vertical focals."""


@dataclass(frozen=True)
class Intrinsics:
    focal: float
    principal_x: float
    principal_y: float
    width: int
    height: int

    def __post_init__(self):
        if not self.focal > 0:
            raise ValueError(f"focal must be positive, got {self.focal}")
        if self.width <= 0 or self.height <= 0:
            raise ValueError(f"resolution must be positive, got {self.width}x{self.height}")

    @classmethod
    def centered(cls, focal: float, width: int, height: int) -> "Intrinsics":
        """Intrinsics with the principal point at the image centre."""
        return cls(focal, (width - 1) / 2.0, (height - 1) / 2.0, width, height)

    @classmethod
    def from_fov(cls, fov: float, width: int, height: int) -> "Intrinsics":
        """Centred intrinsics with horizontal field of view ``fov`` (radians)."""
        return cls.centered(width / (2.0 * np.tan(fov / 2.0)), width, height)

    @property
    def matrix(self) -> np.ndarray:
        return np.array([[self.focal, 0.0, self.principal_x],
                         [0.0, self.focal, self.principal_y],
                         [0.0, 0.0, 1.0]])

    @property
    def inverse_matrix(self) -> np.ndarray:
        f = self.focal
        return np.array([[1.0 / f, 0.0, -self.principal_x / f],
                         [0.0, 1.0 / f, -self.principal_y / f],
                         [0.0, 0.0, 1.0]])

    @property
    def hfov(self) -> float:
        """Horizontal field of view in radians."""
        left = np.arctan(self.principal_x / self.focal)
        right = np.arctan((self.width - 1 - self.principal_x) / self.focal)
        return float(left + right)


def _as_rotation(R) -> np.ndarray:
    R = np.array(R, dtype=float)
    if R.shape != (3, 3):
        raise ValueError(f"rotation must be 3x3, got {R.shape}")
    if not np.allclose(R.T @ R, np.eye(3), atol=1e-9) or abs(np.linalg.det(R) - 1) > 1e-9:
        raise ValueError("rotation is not orthonormal with det +1")
    R.setflags(write=False)
    return R


@dataclass(frozen=True)
class Camera:
    intrinsics: Intrinsics
    rotation: np.ndarray = field(default_factory=lambda: np.eye(3))
    translation: np.ndarray = field(default_factory=lambda: np.zeros(3))

    def __post_init__(self):
        object.__setattr__(self, "rotation", _as_rotation(self.rotation))
        t = np.array(self.translation, dtype=float).reshape(3)
        t.setflags(write=False)
        object.__setattr__(self, "translation", t)

    def with_rotation(self, R) -> "Camera":
        return replace(self, rotation=R)

    def with_intrinsics(self, K: Intrinsics) -> "Camera":
        return replace(self, intrinsics=K)

    @property
    def optical_axis(self) -> np.ndarray:
        """Viewing direction of the principal ray in world coordinates."""
        return self.rotation[2].copy()


def skew(v) -> np.ndarray:
    x, y, z = v
    return np.array([[0.0, -z, y], [z, 0.0, -x], [-y, x, 0.0]])


def rotation_from_angle_axis(v) -> np.ndarray:
    """Rodrigues' formula. The zero vector maps to the identity."""
    v = np.asarray(v, dtype=float).reshape(3)
    theta = np.linalg.norm(v)
    if theta < 1e-12:
        # second order expansion keeps the result orthonormal to ~1e-24
        K = skew(v)
        return np.eye(3) + K + 0.5 * K @ K
    K = skew(v / theta)
    return np.eye(3) + np.sin(theta) * K + (1.0 - np.cos(theta)) * (K @ K)


def _canonical_sign(axis):
    for c in axis:
        if abs(c) > 1e-12:
            return axis if c > 0 else -axis
    return axis


def rotation_to_angle_axis(R) -> np.ndarray:
    """Inverse of :func:`rotation_from_angle_axis` for angles in [0, pi].

    At exactly pi the axis sign is ambiguous; it is canonicalised so that its
    first nonzero component is positive.
    """
    R = np.asarray(R, dtype=float)
    w = 0.5 * np.array([R[2, 1] - R[1, 2], R[0, 2] - R[2, 0], R[1, 0] - R[0, 1]])
    s = np.linalg.norm(w)
    c = 0.5 * (np.trace(R) - 1.0)
    theta = np.arctan2(s, c)
    if theta < 1e-12:
        return w.copy()
    if s > 1e-6 or c > 0:
        return theta * w / s
    # near pi: read the axis off the symmetric part, R_sym = cI + (1-c) a a^T
    S = 0.5 * (R + R.T) - c * np.eye(3)
    k = int(np.argmax(np.diag(S)))
    axis = S[:, k] / np.sqrt(S[k, k])
    axis /= np.linalg.norm(axis)
    if s > 1e-9:
        axis = axis if axis @ w >= 0 else -axis
    else:
        axis = _canonical_sign(axis)
    return theta * axis


def rotation_from_ypr(yaw: float = 0.0, pitch: float = 0.0, roll: float = 0.0) -> np.ndarray:
    """World-to-camera rotation for a camera yawed, pitched then rolled (radians).

    Positive yaw turns the optical axis toward +X, positive pitch toward -Y
    (up), positive roll turns the image clockwise about the optical axis.
    """
    cy, sy = np.cos(yaw), np.sin(yaw)
    cp, sp = np.cos(pitch), np.sin(pitch)
    cr, sr = np.cos(roll), np.sin(roll)
    Ry = np.array([[cy, 0, sy], [0, 1, 0], [-sy, 0, cy]])
    Rx = np.array([[1, 0, 0], [0, cp, -sp], [0, sp, cp]])
    Rz = np.array([[cr, -sr, 0], [sr, cr, 0], [0, 0, 1]])
    return (Ry @ Rx @ Rz).T


def nearest_rotation(M) -> np.ndarray:
    """Project a 3x3 matrix onto SO(3) in the Frobenius sense."""
    U, _, Vt = np.linalg.svd(np.asarray(M, dtype=float))
    D = np.diag([1.0, 1.0, np.sign(np.linalg.det(U @ Vt))])
    return U @ D @ Vt


def quaternion_to_rotation(q) -> np.ndarray:
    """Unit quaternion ``(w, x, y, z)`` to a rotation matrix; ``q`` is normalized first."""
    q = np.asarray(q, dtype=float).reshape(4)
    n = np.linalg.norm(q)
    if n == 0:
        raise ValueError("zero quaternion")
    w, x, y, z = q / n
    return np.array([
        [1 - 2 * (y * y + z * z), 2 * (x * y - w * z), 2 * (x * z + w * y)],
        [2 * (x * y + w * z), 1 - 2 * (x * x + z * z), 2 * (y * z - w * x)],
        [2 * (x * z - w * y), 2 * (y * z + w * x), 1 - 2 * (x * x + y * y)],
    ])


def normalize_homography(H) -> np.ndarray:
    H = np.asarray(H, dtype=float)
    d = H[2, 2]
    if abs(d) < 1e-12:
        d = H.flat[np.argmax(np.abs(H))]
    return H / d


def homography_between(cam_i: Camera, cam_j: Camera) -> np.ndarray:
    """Homography taking pixels of ``cam_i`` to pixels of ``cam_j``.

    ``H = K_j R_j R_i^T K_i^{-1}``, scaled so the bottom-right entry is 1
    (or the largest-magnitude entry when that one vanishes).
    """
    H = (cam_j.intrinsics.matrix @ cam_j.rotation @ cam_i.rotation.T
         @ cam_i.intrinsics.inverse_matrix)
    return normalize_homography(H)


def pixel_to_ray(cam: Camera, pixel) -> np.ndarray:
    """Unit world-frame viewing rays for pixels of shape ``(..., 2)``."""
    pixel = np.asarray(pixel, dtype=float)
    K = cam.intrinsics
    x = (pixel[..., 0] - K.principal_x) / K.focal
    y = (pixel[..., 1] - K.principal_y) / K.focal
    d = np.stack([x, y, np.ones_like(x)], axis=-1)
    d /= np.linalg.norm(d, axis=-1, keepdims=True)
    return d @ cam.rotation


def project_rays(cam: Camera, rays) -> tuple[np.ndarray, np.ndarray]:
    """Vectorized :func:`ray_to_pixel`.

    Returns pixel coordinates ``(..., 2)`` and a boolean mask that is False
    for rays at or behind the camera plane. Pixels of rejected rays are NaN.
    """
    rays = np.asarray(rays, dtype=float)
    c = rays @ cam.rotation.T
    z = c[..., 2]
    front = z > BEHIND_EPS
    zs = np.where(front, z, 1.0)
    K = cam.intrinsics
    u = K.focal * c[..., 0] / zs + K.principal_x
    v = K.focal * c[..., 1] / zs + K.principal_y
    px = np.stack([u, v], axis=-1)
    px[~front] = np.nan
    return px, front


def ray_to_pixel(cam: Camera, ray) -> np.ndarray:
    """Pixel hit by a single world ray; raises :class:`BehindCameraError` otherwise."""
    px, front = project_rays(cam, np.asarray(ray, dtype=float).reshape(3))
    if not front:
        raise BehindCameraError("ray is behind the camera")
    return px


def rescale_intrinsics(K: Intrinsics, new_width: int, new_height: int) -> Intrinsics:
    if new_width <= 0 or new_height <= 0:
        raise ValueError("new resolution must be positive")
    sx = new_width / K.width
    sy = new_height / K.height
    if abs(sx - sy) > ANISOTROPY_TOL * max(sx, sy):
        raise AnisotropyError(
            f"aspect change {K.width}x{K.height} -> {new_width}x{new_height} needs anisotropic focal")
    return Intrinsics(K.focal * sx, K.principal_x * sx, K.principal_y * sy, new_width, new_height)


def angle_between_rotations(Ra, Rb) -> float:
    """Geodesic distance between two rotations in radians."""
    return float(np.linalg.norm(rotation_to_angle_axis(np.asarray(Ra) @ np.asarray(Rb).T)))
