"""Command line entry point: ``stitch``, ``synth`` and ``eval`` subcommands.

Exit codes: 0 success, 1 input error, 2 stitch failure, 3 internal error.
"""

from __future__ import annotations

import argparse
import logging
import os
import sys
import traceback

import numpy as np

from .blend import BlendConfig
from .bundle import BundleConfig, MatchSet
from .geometry import Intrinsics
from .meshwarp import MeshWarpConfig
from .metrics import format_psnr, psnr, ssim
from .projection import FORMAT_NAMES
from .scene import SceneError, load_scene, read_image, save_scene, write_image

EXIT_OK, EXIT_INPUT, EXIT_STITCH, EXIT_INTERNAL = 0, 1, 2, 3

log = logging.getLogger("panostitch")


class InputError(Exception):
    pass


def _size(text):
    try:
        w, h = (int(x) for x in text.lower().split("x"))
    except ValueError:
        raise argparse.ArgumentTypeError(f"expected WxH, got {text!r}") from None
    if w <= 0 or h <= 0:
        raise argparse.ArgumentTypeError("size must be positive")
    return w, h


def _onoff(text):
    if text not in ("on", "off"):
        raise argparse.ArgumentTypeError("expected 'on' or 'off'")
    return text == "on"


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="panostitch", description="Panorama stitching from known camera poses.")
    p.add_argument("-v", "--verbose", action="store_true")
    sub = p.add_subparsers(dest="command", required=True)

    s = sub.add_parser("stitch", help="stitch a scene file into a panorama")
    s.add_argument("--scene", required=True)
    s.add_argument("--projection", default="erp", choices=FORMAT_NAMES + ("auto",))
    s.add_argument("--canvas", type=_size, default=(2048, 1024), help="WxH")
    s.add_argument("--blend", choices=("feather", "multiband"), default="feather")
    s.add_argument("--bands", type=int)
    s.add_argument("--seam", type=_onoff, default=True)
    s.add_argument("--meshwarp", type=_onoff, default=False)
    s.add_argument("--ba", type=_onoff, default=False)
    s.add_argument("--matches", help="match file (overrides the scene's)")
    s.add_argument("--out", required=True)
    s.add_argument("--report")
    s.add_argument("--debug-dir")
    s.add_argument("--workers", type=int, default=1)
    s.add_argument("--ground-truth", help="panorama on the same canvas to score against")

    y = sub.add_parser("synth", help="render a synthetic scene from a panorama")
    y.add_argument("--erp", help="equirectangular image (W = 2H); a random texture when omitted")
    y.add_argument("--poses", required=True, help="text file of 'yaw pitch roll' lines in degrees")
    y.add_argument("--fov", type=float, required=True, help="horizontal field of view in degrees")
    y.add_argument("--out-dir", required=True)
    y.add_argument("--size", type=_size, default=(512, 512), help="view size WxH")
    y.add_argument("--matches-per-pair", type=int, default=50)
    y.add_argument("--seed", type=int, default=0)

    e = sub.add_parser("eval", help="PSNR/SSIM between two images")
    e.add_argument("--a", required=True)
    e.add_argument("--b", required=True)
    e.add_argument("--mask")
    return p


def _cmd_stitch(args):
    from .pipeline import StitchConfig, stitch

    try:
        scene = load_scene(args.scene)
        if args.matches:
            scene.matches = MatchSet.read(args.matches)
        blend = BlendConfig(mode=args.blend, bands=args.bands)
        config = StitchConfig(projection=args.projection, canvas=args.canvas, blend=blend,
                              seam=args.seam, meshwarp=MeshWarpConfig() if args.meshwarp else None,
                              bundle=BundleConfig(shared_focal=scene.shared_focal) if args.ba else None,
                              workers=max(1, args.workers), debug_dir=args.debug_dir)
        gt = read_image(args.ground_truth) if args.ground_truth else None
    except (SceneError, ValueError, OSError) as exc:
        raise InputError(str(exc)) from exc
    result = stitch(scene, config, ground_truth=gt)
    write_image(args.out, result.panorama)
    if args.report:
        with open(args.report, "w") as fh:
            fh.write(result.report.to_text() + "\n")
    print(result.report.summary())
    return EXIT_OK


def _cmd_synth(args):
    from .synthetic import read_poses, render_synthetic_scene, synthetic_matches, textured_erp

    try:
        if args.erp:
            erp = read_image(args.erp)
            if erp.shape[1] != 2 * erp.shape[0]:
                raise InputError(f"{args.erp}: equirectangular image needs W = 2H")
        else:
            erp = textured_erp(seed=args.seed)
        poses = read_poses(args.poses)
        if not 0 < args.fov < 180:
            raise InputError("--fov must be in (0, 180) degrees")
    except (ValueError, OSError) as exc:
        raise InputError(str(exc)) from exc
    w, h = args.size
    K = Intrinsics.from_fov(np.radians(args.fov), w, h)
    images, cameras = render_synthetic_scene(erp, poses, K)
    os.makedirs(args.out_dir, exist_ok=True)
    names = []
    for k, img in enumerate(images):
        names.append(f"view_{k:02d}.png")
        write_image(os.path.join(args.out_dir, names[-1]), img)
    write_image(os.path.join(args.out_dir, "ground_truth.png"), erp)
    matches_name = None
    if args.matches_per_pair > 0 and len(cameras) > 1:
        matches = synthetic_matches(cameras, args.matches_per_pair, args.seed)
        if len(matches):
            matches_name = "matches.txt"
            matches.write(os.path.join(args.out_dir, matches_name))
    save_scene(os.path.join(args.out_dir, "scene.json"), cameras, names, True, matches_name)
    print(f"wrote {len(images)} views to {args.out_dir}")
    return EXIT_OK


def _cmd_eval(args):
    try:
        a = read_image(args.a)
        b = read_image(args.b)
        mask = read_image(args.mask)[..., 0] > 0.5 if args.mask else None
        value_p = psnr(a, b, mask)
        value_s = ssim(a, b, mask)
    except (ValueError, OSError) as exc:
        raise InputError(str(exc)) from exc
    print(f"PSNR {format_psnr(value_p)} dB")
    print(f"SSIM {value_s:.6f}")
    return EXIT_OK


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return EXIT_OK if exc.code == 0 else EXIT_INPUT
    logging.basicConfig(level=logging.DEBUG if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    handlers = {"stitch": _cmd_stitch, "synth": _cmd_synth, "eval": _cmd_eval}
    try:
        return handlers[args.command](args)
    except InputError as exc:
        print(f"input error: {exc}", file=sys.stderr)
        return EXIT_INPUT
    except (RuntimeError, ValueError) as exc:
        print(f"stitch failed: {exc}", file=sys.stderr)
        return EXIT_STITCH
    except Exception:  # noqa: BLE001
        traceback.print_exc()
        return EXIT_INTERNAL


if __name__ == "__main__":
    sys.exit(main())
