"""``camcond`` command-line entry point.

Every subcommand writes its outputs atomically and exits 0 on success. On
failure it prints one ``error_code: message`` line to stderr and exits with
1 (usage), 2 (format / I/O), 3 (contract) or 4 (numeric).
"""

from __future__ import annotations

import argparse
import logging
import sys
from pathlib import Path

import numpy as np

from . import calibration, camera, io, metrics, rays, reprojection, synth
from .errors import CamcondError, FormatError, UsageError

log = logging.getLogger("camcond")


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        raise UsageError(message)


def _common() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(add_help=False)
    g = p.add_argument_group("global options")
    g.add_argument("--threads", type=int, default=1, help="worker threads (0 = one per CPU)")
    g.add_argument("--quiet", action="store_true", help="suppress progress messages")
    g.add_argument("--seed", type=int, default=0, help="random seed")
    return p


def _speeds(text: str) -> list[float]:
    try:
        vals = [float(s) for s in text.split(",") if s.strip()]
    except ValueError:
        raise argparse.ArgumentTypeError(f"bad speed list {text!r}") from None
    if not vals or any(v <= 0 for v in vals):
        raise argparse.ArgumentTypeError("speeds must be positive numbers")
    return vals


def _rgb(text: str) -> tuple:
    try:
        vals = tuple(int(v) for v in text.split(","))
    except ValueError:
        raise argparse.ArgumentTypeError(f"bad color {text!r}") from None
    if len(vals) != 3 or any(not 0 <= v <= 255 for v in vals):
        raise argparse.ArgumentTypeError("background must be R,G,B with values in 0..255")
    return vals


def build_parser() -> argparse.ArgumentParser:
    common = _common()
    parser = _Parser(prog="camcond", description=__doc__.splitlines()[0], parents=[common])
    sub = parser.add_subparsers(dest="command", required=True, parser_class=_Parser)

    p = sub.add_parser("synth", parents=[common], help="generate a synthetic scene with exact depth")
    p.add_argument("--path", choices=synth.PATH_KINDS, default="dolly")
    p.add_argument("--frames", type=int, default=25)
    p.add_argument("--width", type=int, default=512)
    p.add_argument("--height", type=int, default=320)
    p.add_argument("--step", type=float, default=0.06, help="dolly step in meters per frame")
    p.add_argument("--sfm-scale", type=float, default=1.0, help="multiply SfM outputs by this factor")
    p.add_argument("--sfm-stride", type=int, default=16, help="pixel stride of pseudo-SfM points")
    p.add_argument("--out-dir", required=True)

    p = sub.add_parser("rays", parents=[common], help="render ray direction/origin images")
    p.add_argument("--trajectory", required=True)
    p.add_argument("--out-dir", required=True)
    p.add_argument("--format", choices=("f32", "png8"), default="f32")

    p = sub.add_parser("reproject", parents=[common], help="reproject frame 0 into every camera")
    p.add_argument("--image", required=True)
    p.add_argument("--depth", required=True, help="PFM meters or 16-bit PNG millimeters")
    p.add_argument("--trajectory", required=True)
    p.add_argument("--out-dir", required=True)
    p.add_argument("--background", type=_rgb, default=reprojection.DEFAULT_BACKGROUND)

    p = sub.add_parser("calibrate", parents=[common], help="rescale an SfM trajectory to meters")
    p.add_argument("--trajectory", required=True)
    p.add_argument("--depth-dir", required=True, help="depth_<index>.pfm or .png per frame")
    p.add_argument("--sfm-points", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--report", required=True)
    p.add_argument("--no-figure", action="store_true", help="skip the ratio histogram")

    p = sub.add_parser("voxelize", parents=[common], help="build the ray/voxel incidence")
    p.add_argument("--trajectory", required=True)
    p.add_argument("--resolution", type=int, default=32)
    p.add_argument("--extent", type=float, default=8.0)
    p.add_argument("--downsample", type=int, default=8)
    p.add_argument("--out", required=True)

    p = sub.add_parser("toy-forward", parents=[common], help="run the toy conditioned network")
    p.add_argument("--config", required=True)
    p.add_argument("--out", required=True)

    p = sub.add_parser("eval", parents=[common], help="masked PSNR/SSIM, FPSNR and new-content ratio")
    p.add_argument("--generated", required=True)
    p.add_argument("--reference", required=True)
    p.add_argument("--masks", required=True)
    p.add_argument("--speeds", type=_speeds, default=[1.0, 2.0, 4.0, 8.0])
    p.add_argument("--length", type=int, default=None, help="clip length (default: longest that fits)")
    p.add_argument("--start", type=int, default=0)
    p.add_argument("--out", required=True)
    p.add_argument("--no-figure", action="store_true", help="skip the metrics figure")
    return parser


# -- subcommands -----------------------------------------------------------------


def cmd_synth(args):
    images, depths, traj, _ = synth.generate_scene(args.seed, args.path, args.frames, args.width, args.height, args.step)
    out = Path(args.out_dir)
    for i, (img, d) in enumerate(zip(images, depths)):
        io.write_png(out / "images" / io.frame_name("frame", i, ".png"), img)
        io.write_pfm(out / "depth" / io.frame_name("depth", i, ".pfm"), d)
    io.atomic_write_text(out / "trajectory.json", camera.dumps_trajectory(traj))
    # depths round-trip through f32 files, so sample SfM points from what was written
    stored = [io.read_pfm(out / "depth" / io.frame_name("depth", i, ".pfm")) for i in range(len(depths))]
    pts = synth.sample_sfm_points(stored, traj, args.sfm_stride, args.sfm_scale)
    io.atomic_write_json(out / "sfm_points.json", calibration.sfm_points_to_json(pts))
    sfm_traj = calibration.scale_trajectory(traj, args.sfm_scale)
    io.atomic_write_text(out / "trajectory_sfm.json", camera.dumps_trajectory(sfm_traj))
    io.atomic_write_json(
        out / "synth.json",
        {"seed": args.seed, "path": args.path, "frames": args.frames, "width": args.width,
         "height": args.height, "step": args.step, "sfm_scale": args.sfm_scale,
         "sfm_points": len(pts)},
    )
    log.info("wrote %d frames to %s", len(images), out)


def cmd_rays(args):
    traj = camera.load_trajectory(args.trajectory)
    pairs = rays.render_ray_images(traj, threads=args.threads)
    rays.write_ray_images(pairs, args.out_dir, args.format)
    log.info("wrote ray images for %d frames, offset %s", len(pairs), pairs[0].offset_applied)


def _load_depth_map(path) -> reprojection.DepthMap:
    return reprojection.DepthMap(io.read_depth(path))


def cmd_reproject(args):
    traj = camera.load_trajectory(args.trajectory)
    image = io.read_rgb(args.image)
    depth = _load_depth_map(args.depth)
    video = reprojection.reproject_sequence(image, depth, traj, args.background, threads=args.threads)
    out = Path(args.out_dir)
    files = []
    for i, (frame, mask) in enumerate(zip(video.frames, video.masks)):
        fn, mn = io.frame_name("frame", i, ".png"), io.frame_name("mask", i, ".png")
        io.write_png(out / fn, frame)
        io.write_png(out / mn, mask.astype(np.uint8) * 255)
        files.append({"index": i, "frame": fn, "mask": mn, "mask_fraction": float(mask.mean())})
    io.atomic_write_json(
        out / "manifest.json",
        {"background_color": list(video.background_color), "width": traj.width,
         "height": traj.height, "frames": files},
    )
    log.info("reprojected %d frames into %s", len(files), out)


def cmd_calibrate(args):
    traj = camera.load_trajectory(args.trajectory)
    depth_files = io.find_frames(args.depth_dir, "depth", (".pfm", ".png"))
    if len(depth_files) != len(traj):
        raise FormatError(f"{len(depth_files)} depth maps for {len(traj)} trajectory frames")
    depths = [_load_depth_map(p) for p in depth_files]
    points = calibration.sfm_points_from_json(io.read_json(args.sfm_points))
    scaled, report, ratios = calibration.calibrate(points, depths, traj)
    io.atomic_write_text(args.out, camera.dumps_trajectory(scaled))
    io.atomic_write_json(args.report, report.to_dict())
    if not args.no_figure:
        from .plotting import plot_depth_ratios

        plot_depth_ratios(ratios, report, Path(args.report).with_suffix(".png"))
    log.info("mean ratio %.6g from %d ratios; factor %.6g", report.mean_ratio, report.ratio_count, report.factor)


def cmd_voxelize(args):
    from .voxel.grid import build_grid, build_incidence, encode_incidence

    traj = camera.load_trajectory(args.trajectory)
    grid = build_grid(traj, args.resolution, args.extent)
    inc = build_incidence(traj, grid, args.downsample)
    io.atomic_write_bytes(args.out, encode_incidence(inc))
    log.info("%d rays, %d segments", inc.n_rays, inc.n_segments)


def cmd_toy_forward(args):
    import torch

    from . import toynet

    torch.set_num_threads(max(1, args.threads))
    doc = io.read_json(args.config)
    if not isinstance(doc, dict):
        raise FormatError("toy config must be a JSON object")
    doc = dict(doc)
    frames = int(doc.pop("frames", 3))
    width = int(doc.pop("width", 64))
    height = int(doc.pop("height", 32))
    zero_mode = doc.pop("zero_convs", "zero")
    traj_path = doc.pop("trajectory", None)
    cfg = toynet.ToyConfig.from_dict(doc)
    if traj_path is not None:
        traj = camera.load_trajectory(Path(args.config).parent / traj_path)
    else:
        traj = synth.camera_path("dolly", frames, synth.default_intrinsics(width, height), step=0.2)
    model = toynet.ToyModel(cfg, seed=args.seed)
    if zero_mode == "random":
        model.randomize_zero_convs(args.seed + 1)
    inputs = toynet.make_toy_inputs(cfg, traj, seed=args.seed)
    with torch.no_grad():
        ctrl = model.control_outputs(inputs)
        out, merged = toynet.merged_forward(model.base, ctrl, inputs, return_merged=True)
        base = model.base_forward(inputs)
    named = {"output": out, "base_output": base}
    for k, (c, m) in enumerate(zip(ctrl, merged)):
        named[f"control_residual_{k}"] = c
        named[f"merged_residual_{k}"] = m
    io.atomic_write_bytes(args.out, toynet.encode_activations(named))
    log.info("conditions %s, max |output - base| = %.3g", sorted(cfg.conditions), float((out - base).abs().max()))


def _load_video(directory, stem, reader):
    return np.stack([reader(p) for p in io.find_frames(directory, stem)])


def cmd_eval(args):
    speeds = args.speeds
    gen_root, ref_root, mask_root = Path(args.generated), Path(args.reference), Path(args.masks)
    per_speed_dirs = all((gen_root / f"speed_{s:g}").is_dir() for s in speeds)
    if per_speed_dirs:
        entries = []
        for s in speeds:
            gen = _load_video(gen_root / f"speed_{s:g}", "frame", io.read_rgb)
            ref = _load_video(ref_root / f"speed_{s:g}", "frame", io.read_rgb)
            msk = _load_video(mask_root / f"speed_{s:g}", "mask", io.read_mask)
            entries.append(metrics.evaluate_clip(gen, ref, msk, list(range(len(gen))), s))
        report = metrics.MetricsReport(entries, {"layout": "per-speed directories"})
    else:
        gen = _load_video(gen_root, "frame", io.read_rgb)
        ref = _load_video(ref_root, "frame", io.read_rgb)
        msk = _load_video(mask_root, "mask", io.read_mask)
        report = metrics.evaluate_speeds(gen, ref, msk, speeds, args.length, args.start)
        report.metadata["layout"] = "full-rate sequence sampled per speed"
    report.metadata["mask_source"] = str(mask_root)
    out = Path(args.out)
    io.atomic_write_json(out, report.to_dict())
    io.atomic_write_text(out.with_suffix(".csv"), report_csv(report))
    if not args.no_figure:
        from .plotting import plot_speed_metrics

        plot_speed_metrics(report, out.with_suffix(".png"))
    for e in report.entries:
        log.info("x%g: masked PSNR %.3f dB, SSIM %.4f, FPSNR %.3f dB, new content %.2f%%",
                 e.speed, e.masked_psnr, e.masked_ssim, e.fpsnr, 100 * e.new_content_ratio)


def report_csv(report: metrics.MetricsReport) -> str:
    cols = ["speed", "frame_count", "masked_psnr", "masked_ssim", "fpsnr", "new_content_ratio"]
    lines = [",".join(cols)]
    for e in report.entries:
        lines.append(",".join(repr(float(getattr(e, c))) if c != "frame_count" else str(e.frame_count) for c in cols))
    return "\n".join(lines) + "\n"


COMMANDS = {
    "synth": cmd_synth,
    "rays": cmd_rays,
    "reproject": cmd_reproject,
    "calibrate": cmd_calibrate,
    "voxelize": cmd_voxelize,
    "toy-forward": cmd_toy_forward,
    "eval": cmd_eval,
}


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except UsageError as exc:
        print(f"{exc.code}: {exc}", file=sys.stderr)
        return exc.exit_code
    logging.basicConfig(level=logging.WARNING if args.quiet else logging.INFO, format="%(message)s")
    try:
        COMMANDS[args.command](args)
    except CamcondError as exc:
        print(f"{exc.code}: {exc}", file=sys.stderr)
        return exc.exit_code
    except OSError as exc:
        print(f"io_error: {exc}", file=sys.stderr)
        return FormatError.exit_code
    return 0


if __name__ == "__main__":
    sys.exit(main())
