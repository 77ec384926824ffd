# %% [markdown]
# Projection gallery
# ------------------
# One textured spherical panorama resampled into every supported format.
# Each format maps canvas pixels to world directions, so reprojecting is a
# single lookup per pixel.

# %%
import os

import numpy as np

from panostitch.pipeline import build_canvas, erp_on_canvas
from panostitch.projection import FORMAT_NAMES, lonlat_to_dir
from panostitch.scene import write_image
from panostitch.synthetic import textured_erp

out_dir = os.path.join(os.path.dirname(__file__), "out", "gallery")
os.makedirs(out_dir, exist_ok=True)

erp = textured_erp(1024, 512, seed=0)
# draw a latitude/longitude grid so the distortion of each format is visible
lat_rows = np.arange(0, 512, 32)
lon_cols = np.arange(0, 1024, 64)
erp[lat_rows] = 1.0
erp[:, lon_cols] = 1.0

# %%
sizes = {"cubemap": (768, 512), "polyhedron": (640, 512), "littleplanet": (512, 512),
         "fisheye": (512, 512), "tangent": (512, 512), "planar": (512, 512)}
for name in FORMAT_NAMES:
    if name == "planar":
        continue          # planar needs a camera; see the round trip demo
    w, h = sizes.get(name, (1024, 512))
    canvas = build_canvas(name, w, h, cameras=[])
    img = erp_on_canvas(erp, canvas)
    write_image(os.path.join(out_dir, f"{name}.png"), img)
    print(f"{name:>12s}: {w}x{h}")

# %% [markdown]
# Round trip of one direction through each format: pixel -> direction -> pixel.

# %%
d = lonlat_to_dir(np.radians(30.0), np.radians(10.0))[None]
for name in FORMAT_NAMES:
    if name == "planar":
        continue
    w, h = sizes.get(name, (1024, 512))
    fmt = build_canvas(name, w, h, cameras=[]).format
    u, v, ok = fmt.dir_to_pixel(d, w, h)
    back, _ = fmt.pixel_to_dir(u, v, w, h)
    err = np.degrees(np.arccos(np.clip(back @ d[0], -1, 1)))[0]
    print(f"{name:>12s}: pixel ({u[0]:7.2f}, {v[0]:7.2f})  angular error {err:.1e} deg")
