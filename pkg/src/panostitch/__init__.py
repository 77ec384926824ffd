"""Panorama stitching from known (or refined) camera rotations.

Modules, bottom up:

- :mod:`.geometry`: cameras, rotations, rotation-induced homographies
- :mod:`.projection`: panorama formats and the inverse-mapping warper
- :mod:`.seam`: seam labeling by alpha-expansion (:mod:`.maxflow` underneath)
- :mod:`.blend`: feathering and multiband blending
- :mod:`.meshwarp`: block-matching local alignment
- :mod:`.bundle`: Levenberg-Marquardt pose refinement from point matches
- :mod:`.pipeline`: the end-to-end driver; :mod:`.cli` wraps it
"""

from .blend import BlendConfig, blend
from .bundle import BundleConfig, MatchSet, PairMatches, optimize
from .geometry import Camera, Intrinsics, homography_between, rotation_from_ypr
from .meshwarp import MeshWarpConfig, refine_pair
from .metrics import psnr, ssim
from .pipeline import StitchConfig, stitch, suggest_projection
from .projection import PanoramaCanvas, make_format, warp_image
from .scene import Scene, load_scene
from .seam import solve_labels

__version__ = "0.1.0"
