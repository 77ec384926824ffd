"""Scene files: images plus per-image camera records, stored as versioned JSON.

Example::

    {
      "schema": "panostitch-scene/1",
      "shared_focal": true,
      "matches": "matches.txt",
      "images": [
        {"path": "view_00.png", "focal": 443.4, "principal_point": [255.5, 255.5],
         "resolution": [512, 512], "rotation": {"quaternion": [1, 0, 0, 0]}}
      ]
    }

Paths are relative to the scene file. Rotations map world directions into
the camera frame and may be given as a quaternion ``(w, x, y, z)`` or an
angle-axis vector (radians).
"""

from __future__ import annotations

import json
import os
from dataclasses import dataclass, field

import numpy as np
from PIL import Image

from .bundle import MatchSet, PairMatches
from .geometry import (Camera, Intrinsics, nearest_rotation, quaternion_to_rotation,
                       rotation_from_angle_axis, rotation_to_angle_axis)

SCHEMA = "panostitch-scene/1"


class SceneError(ValueError):
    """Base class for scene loading problems."""


class SceneSchemaError(SceneError):
    pass


class MissingImageError(SceneError):
    pass


class ResolutionMismatchError(SceneError):
    pass


@dataclass
class Scene:
    images: list                      # float (H, W, 3) arrays in [0, 1]
    cameras: list
    paths: list = field(default_factory=list)
    shared_focal: bool = True
    matches: MatchSet | None = None

    def __len__(self):
        return len(self.images)

    def permuted(self, order) -> "Scene":
        """Same scene with images (and matches) reordered; cameras keep their world poses."""
        order = list(order)
        inv = {old: new for new, old in enumerate(order)}
        matches = None
        if self.matches is not None:
            matches = MatchSet(PairMatches(inv[p.i], inv[p.j], p.xi, p.xj) for p in self.matches)
        return Scene([self.images[k] for k in order], [self.cameras[k] for k in order],
                     [self.paths[k] for k in order] if self.paths else [],
                     self.shared_focal, matches)


def read_image(path) -> np.ndarray:
    """8-bit (or 16-bit) image file as a float RGB array in [0, 1]."""
    with Image.open(path) as im:
        if im.mode in ("I;16", "I;16B", "I"):
            a = np.asarray(im, dtype=np.float64) / 65535.0
            return np.repeat(a[..., None], 3, axis=2)
        a = np.asarray(im.convert("RGB"), dtype=np.float64)
    return a / 255.0


def to_uint8(image) -> np.ndarray:
    return np.round(np.clip(np.asarray(image, float), 0.0, 1.0) * 255.0).astype(np.uint8)


def write_image(path, image) -> None:
    a = np.asarray(image)
    if a.dtype == bool:
        a = a.astype(np.uint8) * 255
    elif a.dtype != np.uint8:
        a = to_uint8(a)
    Image.fromarray(a).save(path)


def _rotation(rec, where):
    if not isinstance(rec, dict) or len(rec) != 1:
        raise SceneSchemaError(f"{where}: rotation needs exactly one of 'quaternion', 'angle_axis'")
    (kind, val), = rec.items()
    try:
        v = np.asarray(val, float)
    except (TypeError, ValueError):
        raise SceneSchemaError(f"{where}: rotation values must be numbers") from None
    if kind == "quaternion" and v.shape == (4,):
        if not np.linalg.norm(v) > 0:
            raise SceneSchemaError(f"{where}: zero quaternion")
        return nearest_rotation(quaternion_to_rotation(v))
    if kind == "angle_axis" and v.shape == (3,):
        return rotation_from_angle_axis(v)
    raise SceneSchemaError(f"{where}: bad rotation {kind!r} of shape {v.shape}")


def _camera(rec, k):
    where = f"images[{k}]"
    for key in ("path", "focal", "principal_point", "rotation", "resolution"):
        if key not in rec:
            raise SceneSchemaError(f"{where}: missing field {key!r}")
    try:
        w, h = (int(x) for x in rec["resolution"])
        cx, cy = (float(x) for x in rec["principal_point"])
        f = float(rec["focal"])
    except (TypeError, ValueError):
        raise SceneSchemaError(f"{where}: malformed focal, principal_point or resolution") from None
    try:
        K = Intrinsics(f, cx, cy, w, h)
    except ValueError as exc:
        raise SceneSchemaError(f"{where}: {exc}") from None
    return Camera(K, _rotation(rec["rotation"], where))


def normalize_gauge(cameras):
    """Express all rotations relative to the first camera (``R_i R_0^T``)."""
    R0 = cameras[0].rotation
    out = [cameras[0].with_rotation(np.eye(3))]
    for cam in cameras[1:]:
        out.append(cam.with_rotation(nearest_rotation(cam.rotation @ R0.T)))
    return out


def load_scene(path, load_images: bool = True) -> Scene:
    """Read a scene file, its images and (optionally) its match file."""
    path = os.fspath(path)
    if not os.path.exists(path):
        raise MissingImageError(f"scene file not found: {path}")
    try:
        with open(path) as fh:
            doc = json.load(fh)
    except json.JSONDecodeError as exc:
        raise SceneSchemaError(f"{path}: not valid JSON ({exc})") from None
    if not isinstance(doc, dict) or doc.get("schema") != SCHEMA:
        raise SceneSchemaError(f"{path}: expected schema {SCHEMA!r}")
    recs = doc.get("images")
    if not isinstance(recs, list) or not recs:
        raise SceneSchemaError(f"{path}: 'images' must be a nonempty list")
    base = os.path.dirname(os.path.abspath(path))
    cameras, images, paths = [], [], []
    for k, rec in enumerate(recs):
        if not isinstance(rec, dict):
            raise SceneSchemaError(f"images[{k}] must be an object")
        cam = _camera(rec, k)
        p = os.path.join(base, rec["path"])
        if load_images:
            if not os.path.exists(p):
                raise MissingImageError(f"image not found: {p}")
            img = read_image(p)
            if img.shape[:2] != (cam.intrinsics.height, cam.intrinsics.width):
                raise ResolutionMismatchError(
                    f"{p}: file is {img.shape[1]}x{img.shape[0]}, scene says "
                    f"{cam.intrinsics.width}x{cam.intrinsics.height}")
            images.append(img)
        cameras.append(cam)
        paths.append(p)
    matches = None
    if doc.get("matches"):
        mp = os.path.join(base, doc["matches"])
        if not os.path.exists(mp):
            raise MissingImageError(f"match file not found: {mp}")
        matches = MatchSet.read(mp)
    return Scene(images, normalize_gauge(cameras), paths, bool(doc.get("shared_focal", True)),
                 matches)


def camera_record(cam: Camera, path: str) -> dict:
    K = cam.intrinsics
    return {"path": path, "focal": K.focal, "principal_point": [K.principal_x, K.principal_y],
            "resolution": [K.width, K.height],
            "rotation": {"angle_axis": rotation_to_angle_axis(cam.rotation).tolist()}}


def save_scene(path, cameras, image_paths, shared_focal=True, matches_path=None) -> None:
    doc = {"schema": SCHEMA, "shared_focal": shared_focal,
           "images": [camera_record(c, p) for c, p in zip(cameras, image_paths)]}
    if matches_path:
        doc["matches"] = matches_path
    with open(path, "w") as fh:
        json.dump(doc, fh, indent=2)
