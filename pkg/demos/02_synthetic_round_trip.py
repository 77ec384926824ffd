# %% [markdown]
# Synthetic round trip
# --------------------
# Render eight pinhole views from a known panorama, stitch them back with
# the exact poses and compare against the panorama they came from.

# %%
import os

import numpy as np

from panostitch.geometry import Intrinsics
from panostitch.pipeline import StitchConfig, stitch
from panostitch.scene import Scene, write_image
from panostitch.synthetic import render_synthetic_scene, ring_poses, textured_erp

out_dir = os.path.join(os.path.dirname(__file__), "out", "round_trip")
os.makedirs(out_dir, exist_ok=True)

truth = textured_erp(2048, 1024, seed=4)
K = Intrinsics.from_fov(np.radians(60.0), 512, 512)
images, cameras = render_synthetic_scene(truth, ring_poses(8, 45.0), K)
for k, img in enumerate(images):
    write_image(os.path.join(out_dir, f"view_{k:02d}.png"), img)

# %% Stitch with seams on and feather blending (the defaults).
result = stitch(Scene(images, cameras), StitchConfig(canvas=(2048, 1024)), ground_truth=truth)
write_image(os.path.join(out_dir, "panorama.png"), result.panorama)
write_image(os.path.join(out_dir, "coverage.png"), result.coverage)
print(result.report.summary())

# %% [markdown]
# The views only cover a band around the horizon (60 degree field of view),
# so the metrics are taken over covered pixels.

# %%
print(f"covered fraction: {result.coverage.mean():.3f}")
