"""Command-line front end.

Subcommands wire the library into complete workflows: ``train``,
``evaluate`` (leave-frame-out vs. the linear baseline, with ablations),
``interpolate``, ``render``, ``mesh``, ``metrics`` and ``edit``.  Every
command writes a JSON manifest beside its primary output with the resolved
configuration, input hashes, seed and timing, sufficient to reproduce the
run.  Exit codes: 0 success, 2 usage, 3 data error, 4 numerical failure.
"""

from __future__ import annotations

import argparse
import hashlib
import json
import sys
import time
from dataclasses import fields as dataclass_fields
from pathlib import Path

import numpy as np

from . import __version__
from .core import MODE_INTERPOLATION, MODE_MESH
from .edit import EditSpec, apply_edits
from .evaluate import ABLATION_VARIANTS, leave_frame_out, linear_baseline
from .io import (DataError, load_frame_stack, load_scene, read_pgm,
                 save_scene, write_pgm)
from .mesh import (TriMesh, ScalarVolume, chamfer, hausdorff, hd95,
                   marching_cubes, read_obj, render_volume, sample_surface,
                   write_obj, write_volume)
from .metrics import evaluate_frames, format_report_table
from .render import render_frame
from .train import NumericalError, TrainConfig, train

_MODE_ALIASES = {"interp": MODE_INTERPOLATION, "interpolation": MODE_INTERPOLATION,
                 "mesh": MODE_MESH}


def _hash_file(path) -> str:
    h = hashlib.sha256()
    with open(path, "rb") as f:
        for chunk in iter(lambda: f.read(1 << 20), b""):
            h.update(chunk)
    return h.hexdigest()


def _hash_inputs(paths) -> dict:
    hashes = {}
    for p in paths:
        p = Path(p)
        if p.is_dir():
            for f in sorted(p.iterdir()):
                if f.is_file():
                    hashes[str(f)] = _hash_file(f)
        elif p.is_file():
            hashes[str(p)] = _hash_file(p)
    return hashes


def _write_manifest(primary_output, args, config: dict | None, inputs,
                    outputs, started: float) -> None:
    manifest = {
        "version": __version__,
        "command": args.command,
        "argv": sys.argv[1:],
        "config": config,
        "inputs": _hash_inputs(inputs),
        "outputs": [str(o) for o in outputs],
        "seed": config.get("rng_seed") if config else getattr(args, "seed", None),
        "elapsed_seconds": round(time.time() - started, 3),
    }
    path = Path(str(primary_output) + ".manifest.json")
    path.write_text(json.dumps(manifest, indent=2, sort_keys=True) + "\n")


def _parse_config_file(path) -> dict:
    """Plain key=value lines; '#' starts a comment."""
    values = {}
    for lineno, line in enumerate(Path(path).read_text().splitlines(), 1):
        stripped = line.split("#", 1)[0].strip()
        if not stripped:
            continue
        if "=" not in stripped:
            raise DataError(f"{path}:{lineno}: expected key=value")
        key, raw = (s.strip() for s in stripped.split("=", 1))
        values[key] = raw
    return values


_FIELD_TYPES = {f.name: f.type for f in dataclass_fields(TrainConfig)}


def _coerce_config_value(key: str, raw: str):
    if key not in _FIELD_TYPES:
        raise DataError(f"unknown config key {key!r}")
    if key == "mode":
        return _MODE_ALIASES.get(raw, raw)
    if key == "ibfr_alpha_range":
        return tuple(float(v) for v in raw.split(","))
    try:
        if key in ("iterations", "densify_interval", "densify_start",
                   "densify_stop", "initial_gaussian_count", "motion_degree",
                   "scale_degree", "rng_seed", "log_interval"):
            return int(raw)
        return float(raw)
    except ValueError as exc:
        raise DataError(f"config key {key}: cannot parse {raw!r}") from exc


def _resolve_train_config(args) -> TrainConfig:
    """Precedence: CLI flags > config file > built-in defaults."""
    values: dict = {}
    if getattr(args, "config", None):
        for key, raw in _parse_config_file(args.config).items():
            values[key] = _coerce_config_value(key, raw)
    overrides = {
        "mode": _MODE_ALIASES.get(getattr(args, "mode", None)),
        "iterations": getattr(args, "iterations", None),
        "initial_gaussian_count": getattr(args, "gaussians", None),
        "rng_seed": getattr(args, "seed", None),
        "motion_degree": getattr(args, "motion_degree", None),
        "lambda_interp": getattr(args, "lambda_interp", None),
        "lambda_sigma": getattr(args, "lambda_sigma", None),
        "densify_grad_threshold": getattr(args, "densify_threshold", None),
    }
    values.update({k: v for k, v in overrides.items() if v is not None})
    try:
        return TrainConfig(**values)
    except (TypeError, ValueError) as exc:
        raise DataError(f"invalid configuration: {exc}") from exc


def _looks_binary(stack) -> bool:
    for img in stack.images:
        off = np.minimum(np.abs(img), np.abs(img - 1.0))
        if np.mean(off > 1e-3) > 0.01:
            return False
    return True


def cmd_train(args) -> int:
    started = time.time()
    config = _resolve_train_config(args)
    stack = load_frame_stack(args.frames, args.pattern)
    if config.mode == MODE_MESH and not _looks_binary(stack):
        print(
            "warning: mesh mode disables in-between-frame regularization and "
            "expects binary masks, but the inputs look non-binary",
            file=sys.stderr,
        )
    log_path = Path(args.log) if args.log else Path(str(args.out) + ".log.jsonl")
    with open(log_path, "w") as log_file:
        scene = train(stack, config, log_file=log_file, verbose=not args.quiet)
    save_scene(scene, args.out)
    _write_manifest(args.out, args, config.to_dict(), [args.frames],
                    [args.out, log_path], started)
    print(f"trained {len(scene)} gaussians -> {args.out}")
    return 0


def cmd_evaluate(args) -> int:
    started = time.time()
    config = _resolve_train_config(args)
    stack = load_frame_stack(args.frames, args.pattern)
    if args.ablate == "all":
        variants = ABLATION_VARIANTS
    elif args.ablate:
        variants = ("full", args.ablate)
    else:
        variants = ("full",)
    result = leave_frame_out(stack, args.stride, config, variants=variants,
                             mask_threshold=args.mask_threshold,
                             verbose=not args.quiet)
    reports = result["reports"]
    ordered = [reports[v] for v in variants] + [reports["linear"]]
    print(format_report_table(ordered))
    outputs = []
    if args.out:
        with open(args.out, "w") as f:
            for rep in ordered:
                f.write(rep.to_json_lines())
        outputs.append(args.out)
        _write_manifest(args.out, args, config.to_dict(), [args.frames],
                        outputs, started)
    return 0


def cmd_render(args) -> int:
    started = time.time()
    scene = load_scene(args.scene)
    width = args.width or scene.image_width
    height = args.height or scene.image_height
    img = render_frame(scene, args.t, width, height)
    write_pgm(img, args.out, maxval=args.maxval)
    _write_manifest(args.out, args, None, [args.scene], [args.out], started)
    return 0


def cmd_interpolate(args) -> int:
    started = time.time()
    scene = load_scene(args.scene)
    width = args.width or scene.image_width
    height = args.height or scene.image_height
    out_dir = Path(args.out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    times = np.linspace(args.start, args.stop, args.count)
    outputs = []
    for i, t in enumerate(times):
        img = render_frame(scene, float(t), width, height)
        path = out_dir / f"frame_{i:04d}.pgm"
        write_pgm(img, path, maxval=args.maxval)
        outputs.append(path)
    _write_manifest(out_dir / "frames", args, None, [args.scene], outputs, started)
    print(f"wrote {len(outputs)} frames to {out_dir}")
    return 0


def cmd_mesh(args) -> int:
    started = time.time()
    scene = load_scene(args.scene)
    nz = (scene.frame_count - 1) * args.upsample + 1
    slice_spacing = args.slice_spacing
    if slice_spacing is None:
        slice_spacing = 1.0 / (scene.frame_count - 1)
    vol = render_volume(scene, nz, scene.image_width, scene.image_height,
                        z_spacing=slice_spacing / args.upsample)
    if args.binarize:
        vol = ScalarVolume(values=(vol.values > args.iso).astype(float),
                           spacing=vol.spacing)
    mesh = marching_cubes(vol, args.iso)
    write_obj(mesh, args.out)
    outputs = [args.out]
    if args.save_volume:
        write_volume(vol, args.save_volume)
        outputs.append(args.save_volume)
    _write_manifest(args.out, args, None, [args.scene], outputs, started)
    print(f"extracted {len(mesh.triangles)} triangles -> {args.out}")
    return 0


def cmd_metrics(args) -> int:
    started = time.time()
    if args.mesh:
        path_a, path_b = args.mesh
        mesh_a = read_obj(path_a)
        mesh_b = read_obj(path_b)
        pts_a = sample_surface(mesh_a, args.samples, seed=args.seed)
        pts_b = sample_surface(mesh_b, args.samples, seed=args.seed + 1)
        values = {"chamfer": chamfer(pts_a, pts_b),
                  "hausdorff": hausdorff(pts_a, pts_b),
                  "hd95": hd95(pts_a, pts_b)}
        for name, value in values.items():
            print(f"{name:>10}: {value:.6f}")
        if args.out:
            Path(args.out).write_text(json.dumps(values) + "\n")
            _write_manifest(args.out, args, None, [path_a, path_b],
                            [args.out], started)
        return 0
    dir_a, dir_b = args.stacks
    stack_a = load_frame_stack(dir_a, args.pattern)
    stack_b = load_frame_stack(dir_b, args.pattern)
    if len(stack_a.images) != len(stack_b.images):
        raise DataError("stacks have different frame counts")
    report = evaluate_frames(stack_a.images, stack_b.images, label="stacks",
                             mask_threshold=args.mask_threshold)
    print(format_report_table([report]))
    if args.out:
        Path(args.out).write_text(report.to_json_lines())
        _write_manifest(args.out, args, None, [dir_a, dir_b], [args.out], started)
    return 0


def cmd_edit(args) -> int:
    started = time.time()
    scene = load_scene(args.scene)
    try:
        spec = EditSpec.load(args.spec)
    except ValueError as exc:
        raise DataError(str(exc)) from exc
    edited = apply_edits(scene, spec)
    save_scene(edited, args.out)
    _write_manifest(args.out, args, None, [args.scene, args.spec],
                    [args.out], started)
    print(f"applied {len(spec.rules)} rule(s) -> {args.out}")
    return 0


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="slicesplat",
        description="Fit, interpolate, mesh and edit slice stacks with "
                    "time-conditioned gaussians.",
    )
    parser.add_argument("--version", action="version", version=__version__)
    sub = parser.add_subparsers(dest="command", required=True)

    def add_train_flags(p):
        p.add_argument("--config", help="key=value config file")
        p.add_argument("--iterations", type=int)
        p.add_argument("--gaussians", type=int, help="initial gaussian count")
        p.add_argument("--seed", type=int, help="rng seed")
        p.add_argument("--motion-degree", type=int, dest="motion_degree")
        p.add_argument("--lambda-interp", type=float, dest="lambda_interp")
        p.add_argument("--lambda-sigma", type=float, dest="lambda_sigma")
        p.add_argument("--densify-threshold", type=float, dest="densify_threshold")
        p.add_argument("--pattern", default="*.pgm")
        p.add_argument("--quiet", action="store_true")

    p = sub.add_parser("train", help="fit a scene to a frame stack")
    p.add_argument("--frames", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--mode", choices=sorted(_MODE_ALIASES), default="interp")
    p.add_argument("--log", help="training log path (default: <out>.log.jsonl)")
    add_train_flags(p)
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("evaluate", help="leave-frame-out benchmark")
    p.add_argument("--frames", required=True)
    p.add_argument("--stride", type=int, required=True)
    p.add_argument("--mode", choices=sorted(_MODE_ALIASES), default="interp")
    p.add_argument("--ablate", choices=list(ABLATION_VARIANTS[1:]) + ["all"])
    p.add_argument("--mask-threshold", type=float, default=0.5)
    p.add_argument("--out", help="write line-delimited metric records here")
    add_train_flags(p)
    p.set_defaults(func=cmd_evaluate)

    p = sub.add_parser("render", help="render one frame from a scene")
    p.add_argument("--scene", required=True)
    p.add_argument("--t", type=float, required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--width", type=int)
    p.add_argument("--height", type=int)
    p.add_argument("--maxval", type=int, default=255)
    p.set_defaults(func=cmd_render)

    p = sub.add_parser("interpolate", help="render a dense time sweep")
    p.add_argument("--scene", required=True)
    p.add_argument("--out-dir", required=True)
    p.add_argument("--count", type=int, default=33)
    p.add_argument("--start", type=float, default=0.0)
    p.add_argument("--stop", type=float, default=1.0)
    p.add_argument("--width", type=int)
    p.add_argument("--height", type=int)
    p.add_argument("--maxval", type=int, default=255)
    p.set_defaults(func=cmd_interpolate)

    p = sub.add_parser("mesh", help="volume-render and extract an isosurface")
    p.add_argument("--scene", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--upsample", type=int, default=4)
    p.add_argument("--iso", type=float, default=0.5)
    p.add_argument("--binarize", action="store_true",
                   help="threshold the volume before extraction")
    p.add_argument("--slice-spacing", type=float, dest="slice_spacing",
                   help="physical inter-slice distance (default 1/(N-1))")
    p.add_argument("--save-volume", dest="save_volume",
                   help="also dump the rendered volume (MVOL1)")
    p.set_defaults(func=cmd_mesh)

    p = sub.add_parser("metrics", help="compare meshes or frame stacks")
    group = p.add_mutually_exclusive_group(required=True)
    group.add_argument("--mesh", nargs=2, metavar=("A", "B"))
    group.add_argument("--stacks", nargs=2, metavar=("A", "B"))
    p.add_argument("--samples", type=int, default=10000)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--mask-threshold", type=float, default=0.5)
    p.add_argument("--pattern", default="*.pgm")
    p.add_argument("--out")
    p.set_defaults(func=cmd_metrics)

    p = sub.add_parser("edit", help="apply a rule file to a scene")
    p.add_argument("--scene", required=True)
    p.add_argument("--spec", required=True)
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_edit)
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return args.func(args)
    except DataError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 3
    except NumericalError as exc:
        print(f"numerical failure: {exc}", file=sys.stderr)
        return 4
    except FileNotFoundError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 3


if __name__ == "__main__":
    sys.exit(main())
