# %% [markdown]
# Seams and blending
# ------------------
# Two overlapping views of a scene whose second copy is misregistered by a
# few pixels. The seam avoids cutting through the mismatched texture;
# feathering and multiband blending then hide the cut.

# %%
import os

import numpy as np

from panostitch.blend import BlendConfig, blend
from panostitch.projection import WarpedLayer
from panostitch.scene import write_image
from panostitch.seam import initial_labels, labels_to_masks, solve_labels
from panostitch.synthetic import textured_erp

out_dir = os.path.join(os.path.dirname(__file__), "out", "seams")
os.makedirs(out_dir, exist_ok=True)

base = textured_erp(512, 256, seed=2)[:, :320]
h, w = base.shape[:2]
left = np.zeros((h, w), bool)
left[:, :200] = True
right = np.zeros((h, w), bool)
right[:, 120:] = True
# the right layer sees the scene shifted by 3 pixels in its lower half
shifted = base.copy()
shifted[h // 2:] = np.roll(base[h // 2:], 3, axis=1)
layers = [WarpedLayer(base.astype(np.float32), left, 0, []),
          WarpedLayer(shifted.astype(np.float32), right, 1, [])]

# %% First-valid compositing versus the optimised seam.
naive = labels_to_masks(initial_labels(np.stack([left, right])), 2)
labeling = solve_labels(layers)
print(f"seam energy {labeling.energy:.3f} after {len(labeling.history)} moves")
masks = labels_to_masks(labeling, 2)

for tag, m in (("first_valid", naive), ("seam", masks)):
    for mode in ("feather", "multiband"):
        img, _ = blend(layers, m, BlendConfig(mode=mode, bands=4))
        write_image(os.path.join(out_dir, f"{tag}_{mode}.png"), img)
write_image(os.path.join(out_dir, "labels.png"), masks[1])
