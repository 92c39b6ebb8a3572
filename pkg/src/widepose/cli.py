"""Command-line interface.

Subcommands: sample-plan, gradcheck, simulate, fuse, bench, metrics.
Every run is a pure function of (configuration, seed): outputs are
byte-identical across repeated invocations.  Flags override values from
an optional JSON config file (--config), which in turn override the
built-in defaults; unknown config keys are rejected.

Exit codes: 0 success, 1 domain failure (e.g. no consensus), 2 usage.
"""

from __future__ import annotations

import argparse
import json
import sys

import numpy as np

from . import __version__
from .errors import WideposeError
from .fusion import FusionParams, try_fuse
from .geometry import Pose
from .grid import PyramidSpec
from .losses import gradcheck_report
from .metrics import adi_distance, add_distance, load_model_cloud, speed_score
from .pnp import RansacParams
from .sampling import SamplingParams, level_scale_deltas, round_counts, sample_counts
from .simulator import (
    NoiseModel,
    ScenarioParams,
    default_model_cloud,
    generate_scene,
    run_benchmark,
    run_benchmark_from_records,
    scene_from_record,
    scene_record,
    synthesize_prediction,
)

SCHEMA_VERSION = "1"

_UNSET = object()


class _UsageError(Exception):
    pass


def _add(parser, defaults: dict, *names, **kwargs):
    """add_argument that records its real default separately.

    Arguments are registered with a sentinel default so that, after
    parsing, flag values can be distinguished from unset ones; the real
    default is applied after the config file is merged.
    """
    default = kwargs.pop("default")
    help_text = kwargs.pop("help", "")
    action = parser.add_argument(*names, default=_UNSET,
                                 help=f"{help_text} (default: {default})", **kwargs)
    defaults[action.dest] = default
    return action


def _merge_config(args: argparse.Namespace, defaults: dict) -> argparse.Namespace:
    """Precedence: command-line flag > config-file value > default."""
    config = {}
    path = getattr(args, "config", None)
    if path not in (None, _UNSET):
        with open(path, "r", encoding="utf-8") as fh:
            config = json.load(fh)
        if not isinstance(config, dict):
            raise _UsageError("config file must hold a JSON object")
        aliases = {"lambda": "concentration", "alpha": "max_samples", "tau": "objectness_threshold"}
        unknown = [k for k in config if aliases.get(k, k) not in defaults]
        if unknown:
            raise _UsageError(f"unknown config keys: {', '.join(sorted(unknown))}")
        config = {aliases.get(k, k): v for k, v in config.items()}
    for dest, default in defaults.items():
        if getattr(args, dest, _UNSET) is _UNSET:
            setattr(args, dest, config.get(dest, default))
    return args


def _scenario_flags(p, d):
    _add(p, d, "--fov", dest="fov_deg", type=float, default=100.0, help="camera field of view in degrees")
    _add(p, d, "--image-size", dest="image_size", type=int, default=512, help="square image size in pixels")
    _add(p, d, "--depth-min", dest="depth_min", type=float, default=1.0, help="minimum distance in diameters")
    _add(p, d, "--depth-max", dest="depth_max", type=float, default=10.0, help="maximum distance in diameters")
    _add(p, d, "--diameter", dest="diameter", type=float, default=1.0, help="object diameter in model units")


def _noise_flags(p, d):
    _add(p, d, "--sigma", dest="offset_sigma", type=float, default=0.15, help="offset noise in finest-level stride units")
    _add(p, d, "--sigma-scale", dest="offset_sigma_scale", type=float, default=0.75,
         help="growth of offset noise with squared log2 scale mismatch")
    _add(p, d, "--outlier-rate", dest="outlier_rate", type=float, default=0.05, help="gross outlier cell fraction")


def _fusion_flags(p, d):
    _add(p, d, "--tau", dest="objectness_threshold", type=float, default=0.3, help="objectness threshold")
    _add(p, d, "--alpha", dest="max_samples", type=float, default=10.0, help="sample budget per instance")
    _add(p, d, "--lambda", dest="concentration", type=float, default=1.0,
         help="sampling concentration across levels")
    _add(p, d, "--ransac-iterations", dest="ransac_iterations", type=int, default=200,
         help="maximum RANSAC hypotheses")
    _add(p, d, "--inlier-threshold", dest="inlier_threshold", type=float, default=5.0,
         help="RANSAC inlier threshold in pixels")


def build_parser() -> tuple[argparse.ArgumentParser, dict[str, dict]]:
    parser = argparse.ArgumentParser(
        prog="widepose",
        description="Wide-depth-range 6D pose estimation core: sampling, losses, fusion, metrics.",
    )
    parser.add_argument("--version", action="version",
                        version=f"widepose {__version__} (schema {SCHEMA_VERSION})")
    sub = parser.add_subparsers(dest="command", required=True)
    all_defaults: dict[str, dict] = {}

    p = sub.add_parser("sample-plan", help="per-level sample counts for an object size")
    d = all_defaults["sample-plan"] = {}
    p.add_argument("--config", default=_UNSET, help="JSON config file; flags take precedence")
    _add(p, d, "--size", dest="size", type=float, default=None, help="object 2D size in pixels (required)")
    _add(p, d, "--lambda", dest="concentration", type=float, default=1.0, help="sampling concentration")
    _add(p, d, "--alpha", dest="max_samples", type=float, default=10.0, help="sample budget")
    _add(p, d, "--sizes", dest="reference_sizes", type=str, default="16,32,64,128,256",
         help="comma-separated per-level reference sizes")
    _add(p, d, "--out", dest="out", type=str, default=None, help="output CSV path (stdout if omitted)")

    p = sub.add_parser("gradcheck", help="verify analytic loss gradients against finite differences")
    d = all_defaults["gradcheck"] = {}
    p.add_argument("--config", default=_UNSET, help="JSON config file; flags take precedence")
    _add(p, d, "--seed", dest="seed", type=int, default=0, help="RNG seed")
    _add(p, d, "--configs", dest="configs", type=int, default=100, help="random configurations per loss")
    _add(p, d, "--step", dest="step", type=float, default=1e-5, help="finite-difference step")
    _add(p, d, "--out", dest="out", type=str, default=None, help="output JSON path (stdout if omitted)")

    p = sub.add_parser("simulate", help="generate scenes + surrogate predictions as JSON lines")
    d = all_defaults["simulate"] = {}
    p.add_argument("--config", default=_UNSET, help="JSON config file; flags take precedence")
    _add(p, d, "--scenes", dest="scenes", type=int, default=10, help="number of scenes")
    _add(p, d, "--seed", dest="seed", type=int, default=0, help="master seed")
    _scenario_flags(p, d)
    _noise_flags(p, d)
    _add(p, d, "--out", dest="out", type=str, default=None, help="output JSONL path (stdout if omitted)")

    p = sub.add_parser("fuse", help="multi-scale fusion on saved scene records")
    d = all_defaults["fuse"] = {}
    p.add_argument("--config", default=_UNSET, help="JSON config file; flags take precedence")
    _add(p, d, "--in", dest="input", type=str, default=None, help="scene JSONL from `simulate` (required)")
    _add(p, d, "--seed", dest="seed", type=int, default=0, help="RANSAC seed")
    _fusion_flags(p, d)
    _add(p, d, "--out", dest="out", type=str, default=None, help="output JSONL path (stdout if omitted)")

    p = sub.add_parser("bench", help="seeded end-to-end benchmark (live simulation or saved scenes)")
    d = all_defaults["bench"] = {}
    p.add_argument("--config", default=_UNSET, help="JSON config file; flags take precedence")
    _add(p, d, "--scenes", dest="scenes", type=int, default=1000, help="number of scenes")
    _add(p, d, "--seed", dest="seed", type=int, default=0, help="master seed")
    _add(p, d, "--in", dest="input", type=str, default=None,
         help="scene JSONL from `simulate` instead of live simulation")
    _add(p, d, "--workers", dest="workers", type=int, default=1, help="worker processes")
    _scenario_flags(p, d)
    _noise_flags(p, d)
    _fusion_flags(p, d)
    _add(p, d, "--out", dest="out", type=str, default=None,
         help="per-scene CSV path; aggregate goes to stdout")

    p = sub.add_parser("metrics", help="score estimated poses against ground truth")
    d = all_defaults["metrics"] = {}
    p.add_argument("--config", default=_UNSET, help="JSON config file; flags take precedence")
    _add(p, d, "--poses", dest="poses", type=str, default=None,
         help="JSONL with {scene_id, gt_pose, est_pose} records (required)")
    _add(p, d, "--model", dest="model", type=str, default=None,
         help="model cloud file (.obj or .ply); built-in cube if omitted")
    _add(p, d, "--diameter", dest="diameter", type=float, default=1.0,
         help="diameter for the built-in cube model")
    _add(p, d, "--out", dest="out", type=str, default=None, help="output CSV path (stdout if omitted)")

    return parser, all_defaults


def _require(args, name: str, flag: str):
    if getattr(args, name) is None:
        raise _UsageError(f"{flag} is required")


def _validate_common(args):
    def bad(flag, message):
        raise _UsageError(f"{flag} {message}")

    checks = [
        ("concentration", "--lambda", lambda v: v >= 0, "must be >= 0"),
        ("max_samples", "--alpha", lambda v: v > 0, "must be > 0"),
        ("objectness_threshold", "--tau", lambda v: 0.0 < v < 1.0, "must lie in (0, 1)"),
        ("scenes", "--scenes", lambda v: v >= 1, "must be >= 1"),
        ("workers", "--workers", lambda v: v >= 1, "must be >= 1"),
        ("ransac_iterations", "--ransac-iterations", lambda v: v >= 1, "must be >= 1"),
        ("inlier_threshold", "--inlier-threshold", lambda v: v > 0, "must be > 0"),
        ("offset_sigma", "--sigma", lambda v: v >= 0, "must be >= 0"),
        ("offset_sigma_scale", "--sigma-scale", lambda v: v >= 0, "must be >= 0"),
        ("outlier_rate", "--outlier-rate", lambda v: 0.0 <= v <= 1.0, "must lie in [0, 1]"),
        ("fov_deg", "--fov", lambda v: 0.0 < v < 180.0, "must lie in (0, 180)"),
        ("image_size", "--image-size", lambda v: v > 0, "must be > 0"),
        ("diameter", "--diameter", lambda v: v > 0, "must be > 0"),
        ("configs", "--configs", lambda v: v >= 1, "must be >= 1"),
        ("step", "--step", lambda v: v > 0, "must be > 0"),
    ]
    for dest, flag, pred, message in checks:
        value = getattr(args, dest, None)
        if value is not None and not pred(value):
            bad(flag, message)
    depth_min = getattr(args, "depth_min", None)
    depth_max = getattr(args, "depth_max", None)
    if depth_min is not None and depth_max is not None and not 1.0 <= depth_min < depth_max:
        bad("--depth-min/--depth-max", "must satisfy 1 <= min < max")


def _out_stream(path):
    if path is None:
        return sys.stdout, False
    return open(path, "w", encoding="utf-8", newline="\n"), True


def _scenario_from_args(args) -> ScenarioParams:
    return ScenarioParams(
        fov_deg=args.fov_deg,
        image_size=(args.image_size, args.image_size),
        depth_range_diameters=(args.depth_min, args.depth_max),
        diameter=args.diameter,
    )


def _noise_from_args(args) -> NoiseModel:
    return NoiseModel(
        offset_sigma_strides=args.offset_sigma,
        offset_sigma_scale=args.offset_sigma_scale,
        outlier_rate=args.outlier_rate,
    )


def _fusion_from_args(args) -> FusionParams:
    return FusionParams(
        objectness_threshold=args.objectness_threshold,
        sampling=SamplingParams(max_samples=args.max_samples, concentration=args.concentration),
        ransac=RansacParams(max_iterations=args.ransac_iterations,
                            inlier_threshold_px=args.inlier_threshold),
    )


def _cmd_sample_plan(args) -> int:
    _require(args, "size", "--size")
    if args.size <= 0:
        raise _UsageError("--size must be > 0")
    refs = tuple(float(s) for s in str(args.reference_sizes).split(","))
    params = SamplingParams(max_samples=args.max_samples, concentration=args.concentration,
                            reference_sizes=refs)
    deltas = level_scale_deltas(args.size, params)
    plan = round_counts(sample_counts(args.size, params))
    out, close = _out_stream(args.out)
    try:
        out.write("level,reference_size,delta,expected_count,rounded_count\n")
        for i, (ref, dl, n, r) in enumerate(zip(refs, deltas, plan.expected, plan.realized), start=1):
            out.write(f"{i},{float(ref)!r},{float(dl)!r},{float(n)!r},{int(r)}\n")
    finally:
        if close:
            out.close()
    return 0


def _cmd_gradcheck(args) -> int:
    report = gradcheck_report(seed=args.seed, configs=args.configs, step=args.step)
    report["schema"] = f"widepose.gradcheck/{SCHEMA_VERSION}"
    out, close = _out_stream(args.out)
    try:
        out.write(json.dumps(report, sort_keys=True, indent=2) + "\n")
    finally:
        if close:
            out.close()
    return 0 if report["passed"] else 1


def _cmd_simulate(args) -> int:
    scenario = _scenario_from_args(args)
    noise = _noise_from_args(args)
    spec = PyramidSpec.default(scenario.image_size)
    cloud = default_model_cloud(scenario.diameter)
    out, close = _out_stream(args.out)
    try:
        for i in range(args.scenes):
            ss = np.random.SeedSequence([int(args.seed), i])
            scene_seq, synth_seq, _ = ss.spawn(3)
            scene = generate_scene(scenario, scene_seq, cloud)
            pred = synthesize_prediction(scene, spec, noise, synth_seq)
            out.write(json.dumps(scene_record(i, scene, spec, pred), sort_keys=True) + "\n")
    finally:
        if close:
            out.close()
    return 0


def _cmd_fuse(args) -> int:
    _require(args, "input", "--in")
    fusion_params = _fusion_from_args(args)
    failures = 0
    out, close = _out_stream(args.out)
    try:
        with open(args.input, "r", encoding="utf-8") as fh:
            for line in fh:
                line = line.strip()
                if not line:
                    continue
                scene_id, scene, pred = scene_from_record(json.loads(line))
                fuse_seq = np.random.SeedSequence([int(args.seed), scene_id])
                result = try_fuse(pred, scene.keypoints, scene.camera, fusion_params, seed=fuse_seq)
                record = result.to_dict()
                record["schema"] = f"widepose.fusion/{SCHEMA_VERSION}"
                record["scene_id"] = scene_id
                out.write(json.dumps(record, sort_keys=True) + "\n")
                if not result.success:
                    failures += 1
    finally:
        if close:
            out.close()
    return 1 if failures else 0


def _cmd_bench(args) -> int:
    fusion_params = _fusion_from_args(args)
    if args.input is not None:
        with open(args.input, "r", encoding="utf-8") as fh:
            records = [json.loads(line) for line in fh if line.strip()]
        result = run_benchmark_from_records(records, fusion_params, seed=args.seed)
    else:
        scenario = _scenario_from_args(args)
        noise = _noise_from_args(args)
        result = run_benchmark(args.scenes, scenario, noise, fusion_params,
                               seed=args.seed, workers=args.workers)
    if args.out is not None:
        with open(args.out, "w", encoding="utf-8", newline="\n") as fh:
            result.to_csv(fh)
    else:
        result.to_csv(sys.stdout)
    result.aggregate_csv(sys.stdout)
    return 0


def _cmd_metrics(args) -> int:
    _require(args, "poses", "--poses")
    if args.model is not None:
        cloud = load_model_cloud(args.model)
    else:
        cloud = default_model_cloud(args.diameter)
    out, close = _out_stream(args.out)
    try:
        out.write("scene_id,depth_over_d,adi,add,e_q,e_t\n")
        with open(args.poses, "r", encoding="utf-8") as fh:
            for line in fh:
                line = line.strip()
                if not line:
                    continue
                rec = json.loads(line)
                gt = Pose.from_dict(rec["gt_pose"])
                est = Pose.from_dict(rec["est_pose"])
                adi = adi_distance(gt, est, cloud)
                add = add_distance(gt, est, cloud)
                score = speed_score(gt, est)
                depth = float(np.linalg.norm(gt.translation)) / cloud.diameter
                out.write(f"{rec['scene_id']},{depth!r},{adi!r},{add!r},{score.e_q!r},{score.e_t!r}\n")
    finally:
        if close:
            out.close()
    return 0


_COMMANDS = {
    "sample-plan": _cmd_sample_plan,
    "gradcheck": _cmd_gradcheck,
    "simulate": _cmd_simulate,
    "fuse": _cmd_fuse,
    "bench": _cmd_bench,
    "metrics": _cmd_metrics,
}


def main(argv=None) -> int:
    parser, all_defaults = build_parser()
    args = parser.parse_args(argv)
    try:
        args = _merge_config(args, all_defaults[args.command])
        _validate_common(args)
        return _COMMANDS[args.command](args)
    except _UsageError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    except FileNotFoundError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    except (WideposeError, ValueError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
