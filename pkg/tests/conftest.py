import numpy as np
import pytest
from hypothesis import settings

settings.register_profile("default", deadline=None, max_examples=60)
settings.load_profile("default")

LEVEL = 1.0 / 255.0


@pytest.fixture
def rng():
    return np.random.default_rng(1234)


def random_rotation(rng):
    q = rng.normal(size=4)
    from panostitch.geometry import quaternion_to_rotation
    return quaternion_to_rotation(q)


def random_unit(rng, n):
    d = rng.normal(size=(n, 3))
    return d / np.linalg.norm(d, axis=1, keepdims=True)


def angular_error(a, b):
    return np.arctan2(np.linalg.norm(np.cross(a, b), axis=-1), np.sum(a * b, axis=-1))


def roundtrip_cases():
    """(format, width, height, keep) with ``keep`` excluding a 1e-4 rad singular neighbourhood."""
    from panostitch.projection import (Cubemap, Cylindrical, Equirect, Fisheye, LittlePlanet,
                                       Panini, Polyhedron, Tangent, dir_to_lonlat)
    margin = 1e-4

    def lat_ok(d):
        return np.abs(dir_to_lonlat(d)[1]) < np.pi / 2 - margin

    def tangent_ok(d):
        from panostitch.projection import lonlat_to_dir
        return d @ lonlat_to_dir(0.3, -0.2) > np.sin(margin)

    def panini_ok(d):
        lon, lat = dir_to_lonlat(d)
        return (np.abs(lon) < np.pi - margin) & (np.abs(lat) < np.pi / 2 - margin)

    def planet_ok(d):
        # the projection pole is the zenith, world -Y
        return -d[:, 1] < np.cos(margin)

    def fisheye_ok(d):
        return d[:, 2] > -np.cos(margin)

    def always(d):
        return np.ones(len(d), bool)

    return [
        ("erp", Equirect(), 2048, 1024, lat_ok),
        ("cubemap", Cubemap(256), 768, 512, always),
        ("tangent", Tangent(0.3, -0.2), 1024, 1024, tangent_ok),
        ("panini", Panini(1.0), 1024, 512, panini_ok),
        ("littleplanet", LittlePlanet(), 1024, 1024, planet_ok),
        ("cylindrical", Cylindrical(), 2048, 1024, lat_ok),
        ("fisheye", Fisheye(), 1024, 1024, fisheye_ok),
        ("polyhedron", Polyhedron(1, 64), 576, 576, always),
    ]


def roundtrip_max_error(fmt, width, height, dirs):
    u, v, ok = fmt.dir_to_pixel(dirs, width, height)
    back, ok2 = fmt.pixel_to_dir(u, v, width, height)
    if not (ok.all() and ok2.all()):
        return np.inf
    return float(angular_error(dirs, back).max())


def make_layers(colors, valids):
    from panostitch.projection import WarpedLayer
    return [WarpedLayer(np.asarray(c, np.float32), np.asarray(v, bool), k, [])
            for k, (c, v) in enumerate(zip(colors, valids))]


def seam_instance(rng, n_labels):
    """Random layers whose multiply covered region is at most 4x4 (2 labels) or 3x3 (3 labels)."""
    if n_labels == 2:
        H, W = 4, 6
        valid = np.zeros((2, H, W), bool)
        valid[0, :, :5] = True
        valid[1, :, 1:] = True
    else:
        H, W = 3, 5
        valid = np.zeros((3, H, W), bool)
        valid[0, :, :4] = True
        valid[1, :, 1:] = True
        valid[2, :, 1:4] = rng.random((H, 3)) < 0.7
    colors = rng.random((n_labels, H, W, 3))
    return make_layers(colors, valid)


def brute_force_seam(layers):
    """Exhaustive minimum of the seam energy over all feasible labelings."""
    import itertools
    from panostitch.seam import SeamProblem, initial_labels, total_energy
    problem = SeamProblem(layers)
    valid = problem.valid
    H, W = problem.shape
    base = initial_labels(valid)
    cover = valid.sum(0)
    var = np.flatnonzero(cover.ravel() >= 2)
    options = [np.flatnonzero(valid[:, p // W, p % W]) for p in var]
    combos = np.array(list(itertools.product(*options)), dtype=np.int64)
    L = np.repeat(base.ravel()[None], len(combos), 0)
    L[:, var] = combos
    energy = np.zeros(len(combos))
    n = problem.n
    for dy, dx in ((0, 1), (1, 0)):
        for y in range(H - dy):
            for x in range(W - dx):
                p, q = y * W + x, (y + dy) * W + x + dx
                if base.ravel()[p] < 0 or base.ravel()[q] < 0:
                    continue
                table = np.zeros((n, n))
                for a in range(n):
                    for b in range(n):
                        if a != b and valid[a, y, x] and valid[b, y + dy, x + dx]:
                            table[a, b] = problem.pairwise(np.array([a]), np.array([b]),
                                                           np.array([y]), np.array([x]),
                                                           np.array([y + dy]), np.array([x + dx]))[0]
                energy += table[L[:, p], L[:, q]]
    k = int(np.argmin(energy))
    best = L[k].reshape(H, W)
    return float(energy[k]), best, float(total_energy(best, problem=problem))


def textured(rng, h, w, blur=1.5):
    from scipy import ndimage
    img = ndimage.gaussian_filter(rng.random((h, w, 3)), (blur, blur, 0))
    return (img - img.min()) / (img.max() - img.min())


def two_depth_pair(seed=0, h=128, w=160, shifts=(3, 9)):
    """Reference and target layers where the top half moved by ``shifts[0]``
    pixels and the bottom half by ``shifts[1]``: ``target(y, x + d) = ref(y, x)``."""
    rng = np.random.default_rng(seed)
    pad = 16
    base = textured(rng, h, w + 2 * pad)
    ref = base[:, pad:pad + w]
    tgt = np.empty_like(ref)
    half = h // 2
    for (y0, y1), d in zip(((0, half), (half, h)), shifts):
        tgt[y0:y1] = base[y0:y1, pad - d:pad - d + w]
    ones = np.ones((h, w), bool)
    return make_layers([ref, tgt], [ones, ones])


def ring_cameras(n=8, spacing=45.0, fov=60.0, size=512):
    from panostitch.geometry import Camera, Intrinsics
    from panostitch.synthetic import ring_poses
    K = Intrinsics.from_fov(np.radians(fov), size, size)
    return [Camera(K, R) for R in ring_poses(n, spacing)]


def jitter(cameras, rng, max_deg=2.0, keep_first=True):
    """Rotate each camera by a random axis and an angle up to ``max_deg``."""
    from panostitch.geometry import Camera, rotation_from_angle_axis
    out = []
    for k, cam in enumerate(cameras):
        if k == 0 and keep_first:
            out.append(cam)
            continue
        angle = np.radians(max_deg) * rng.uniform(0.2, 1.0)
        dR = rotation_from_angle_axis(random_unit(rng, 1)[0] * angle)
        out.append(Camera(cam.intrinsics, dR @ cam.rotation, cam.translation))
    return out


def ring_matches(cameras, per_pair=50, seed=0):
    from panostitch.synthetic import synthetic_matches
    n = len(cameras)
    return synthetic_matches(cameras, per_pair, seed, pairs=[(k, (k + 1) % n) for k in range(n)])


def small_ring_scene(n=4, spacing=45.0, fov=60.0, size=128, erp_width=512, seed=0):
    """Views rendered from a textured panorama: ``(scene, ground_truth_erp)``."""
    from panostitch.geometry import Intrinsics
    from panostitch.scene import Scene
    from panostitch.synthetic import render_synthetic_scene, ring_poses, textured_erp
    erp = textured_erp(erp_width, erp_width // 2, seed=seed)
    K = Intrinsics.from_fov(np.radians(fov), size, size)
    images, cams = render_synthetic_scene(erp, ring_poses(n, spacing), K)
    return Scene(images, cams), erp


ACCEPTANCE = []


def pytest_terminal_summary(terminalreporter):
    if not ACCEPTANCE:
        return
    terminalreporter.section("acceptance criteria")
    for line in ACCEPTANCE:
        terminalreporter.write_line(line)
