"""``lightkit`` command-line entry point.

Exit codes: 0 success, 2 usage or configuration error, 3 plugin/backend
failure, 4 numeric failure (non-finite values).
"""
from __future__ import annotations

import argparse
import hashlib
import json
import logging
import sys
import time
from pathlib import Path
from typing import Optional

import numpy as np

from . import __version__
from . import metrics as metrics_mod
from .bridge import (
    Bridge,
    BridgeCodec,
    BridgeDenoiser,
    BridgeError,
    BridgeNormalSource,
    BridgeRelighter,
    healthcheck,
)
from .freq_fusion import DEFAULT_ORDER, ButterworthSpec, dynamic_cutoff, fuse
from .injection import DEFAULT_OMEGA, InjectionConfig, inject, inject_frequency_mode
from .parallel import default_jobs
from .pipeline import ConfigError, NumericStepError, PipelineConfig, Plugins, PluginStepError, run
from .plugins import (
    AnalyticNormalSource,
    FlatNormalSource,
    IdentityCodec,
    IdentityRelighter,
    LambertianRelighter,
    OracleDenoiser,
    PluginError,
)
from .scene import sphere_scene
from .tensor import LCTKError, NonFiniteError, load_frames, load_tensor, save_frames, save_tensor
from .trajectory import DEFAULT_THRESHOLD, TrajectoryError, build_light_maps, load_spec

log = logging.getLogger("lightkit")

EXIT_OK, EXIT_USAGE, EXIT_PLUGIN, EXIT_NUMERIC = 0, 2, 3, 4


class UsageError(Exception):
    pass


def file_sha256(path) -> str:
    h = hashlib.sha256()
    with open(path, "rb") as f:
        for block in iter(lambda: f.read(1 << 20), b""):
            h.update(block)
    return h.hexdigest()


def input_digest(path) -> str:
    """Hash of a file, or of every frame file of a directory in name order."""
    p = Path(path)
    if p.is_dir():
        h = hashlib.sha256()
        for f in sorted(p.glob("frame_*.ppm")):
            h.update(f.name.encode())
            h.update(file_sha256(f).encode())
        return h.hexdigest()
    return file_sha256(p)


def read_video(path) -> np.ndarray:
    """A frame folder (``frame_*.ppm``) or an LCTK file."""
    p = Path(path)
    if p.is_dir():
        return load_frames(p)
    if not p.exists():
        raise FileNotFoundError(f"{p} does not exist")
    return load_tensor(p).astype(np.float64)


def write_json(path, obj) -> None:
    Path(path).write_text(json.dumps(obj, indent=2, sort_keys=True) + "\n", encoding="utf-8")


def write_manifest(out_dir: Path, command: str, config: dict, inputs: dict, seeds: dict) -> Path:
    """Written before any output tensor so partial runs are still traceable."""
    out_dir.mkdir(parents=True, exist_ok=True)
    manifest = {
        "tool": "lightkit",
        "version": __version__,
        "command": command,
        "config": config,
        "inputs": {k: {"path": str(Path(v).resolve()), "sha256": input_digest(v)} for k, v in inputs.items()},
        "seeds": seeds,
        "created_utc": time.strftime("%Y-%m-%dT%H:%M:%SZ", time.gmtime()),
    }
    path = out_dir / "manifest.json"
    write_json(path, manifest)
    return path


# -- subcommands ------------------------------------------------------------------


def cmd_synth(args) -> int:
    if args.scene != "sphere":
        raise UsageError(f"unknown scene {args.scene!r}")
    h, w = args.size
    out = Path(args.out)
    config = {"scene": args.scene, "frames": args.frames, "size": [h, w], "bake_light": args.bake_light,
              "drift": args.drift}
    write_manifest(out, "synth", config, {}, {})
    sc = sphere_scene(args.frames, h, w, args.bake_light, args.drift)
    save_frames(out / "frames", sc.video)
    save_tensor(sc.video, out / "video.lctk")
    save_tensor(sc.normals, out / "normals.lctk")
    save_tensor(sc.albedo, out / "albedo.lctk")
    save_tensor(sc.sphere_mask[None, None].astype(np.float64), out / "sphere_mask.lctk")
    print(f"wrote {args.frames} frames of {h}x{w} to {out}")
    return EXIT_OK


def cmd_trajgen(args) -> int:
    spec = load_spec(args.traj)
    h, w = args.size
    out = Path(args.out)
    config = {"size": [h, w], "latent_scale": args.latent_scale, "threshold": args.threshold,
              "falloff": args.falloff}
    write_manifest(out, "trajgen", config, {"traj": args.traj}, {})
    lm = build_light_maps(spec, h, w, args.latent_scale, args.threshold, args.falloff)
    save_frames(out, lm.maps)
    save_tensor(lm.maps, out / "maps.lctk")
    save_tensor(lm.masks_pixel, out / "masks.lctk")
    save_tensor(lm.masks_latent, out / "latent_masks.lctk")
    print(f"wrote {spec.frame_count} light maps to {out}")
    return EXIT_OK


def cmd_inject(args) -> int:
    z = load_tensor(args.latents).astype(np.float64)
    m = load_tensor(args.masks).astype(np.float64)
    cfg = InjectionConfig(omega=args.omega, seed=args.seed, renormalize_variance=args.renormalize)
    out = Path(args.out)
    write_manifest(out.parent, "inject", {"omega": args.omega, "mode": args.mode, "renormalize": args.renormalize},
                   {"latents": args.latents, "masks": args.masks}, {"seed": args.seed})
    if args.mode == "latent":
        res = inject(z, m, cfg, workers=args.jobs)
    else:
        res = inject_frequency_mode(z, m, cfg, order=args.order, workers=args.jobs)
    save_tensor(res, out)
    print(f"wrote {out}")
    return EXIT_OK


def cmd_fuse(args) -> int:
    low = load_tensor(args.low).astype(np.float64)
    high = load_tensor(args.high).astype(np.float64)
    if args.alpha is not None:
        alpha = args.alpha
    elif args.step is not None:
        alpha = dynamic_cutoff(args.step, args.steps, args.alpha_min)
    else:
        raise UsageError("give --alpha or --step")
    out = Path(args.out)
    write_manifest(out.parent, "fuse", {"alpha": alpha, "order": args.order},
                   {"low": args.low, "high": args.high}, {})
    fused, residue = fuse(low, high, ButterworthSpec.from_cutoff(alpha, args.order), return_residue=True)
    save_tensor(fused, out)
    print(json.dumps({"alpha": alpha, "imag_residue": residue}))
    return EXIT_OK


def build_plugins(config: PipelineConfig, normals=None, albedo=None, workdir=None,
                  keep_artifacts: bool = False) -> tuple[Plugins, Optional[Bridge]]:
    """Resolve plugin ids; ids equal to ``"bridge"`` go through the backend command."""
    ids = (config.codec, config.denoiser, config.relighter, config.normal_source)
    bridge = None
    if "bridge" in ids:
        if not config.backend_command:
            raise ConfigError("a plugin id is 'bridge' but backend_command is not set")
        bridge = Bridge(config.backend_command, workdir=workdir, keep_artifacts=keep_artifacts,
                        deadline_s=config.backend_deadline_s)
    if config.normal_source == "bridge":
        normal_source = BridgeNormalSource(bridge)
    elif config.normal_source == "analytic":
        if normals is None:
            raise ConfigError("normal_source 'analytic' needs --normals")
        normal_source = AnalyticNormalSource(normals)
    elif config.normal_source == "flat":
        normal_source = FlatNormalSource()
    else:
        raise ConfigError(f"unknown normal source {config.normal_source!r}")

    if config.codec == "bridge":
        caps = healthcheck(bridge)
        codec = BridgeCodec(bridge, caps.latent_scale)
    elif config.codec == "identity":
        codec = IdentityCodec(config.latent_scale)
    else:
        raise ConfigError(f"unknown codec {config.codec!r}")
    if config.denoiser == "bridge":
        denoiser = BridgeDenoiser(bridge)
    elif config.denoiser == "oracle":
        denoiser = OracleDenoiser()
    else:
        raise ConfigError(f"unknown denoiser {config.denoiser!r}")

    relighter = factory = None
    if config.relighter == "bridge":
        relighter = BridgeRelighter(bridge)
    elif config.relighter == "identity":
        relighter = IdentityRelighter()
    elif config.relighter == "lambertian":
        def make_relighter(n):
            return LambertianRelighter(n, albedo=albedo, leak=config.relight_leak,
                                       flicker=config.relight_flicker, seed=config.seed)
        factory = make_relighter
    else:
        raise ConfigError(f"unknown relighter {config.relighter!r}")
    return Plugins(codec, denoiser, normal_source, relighter, factory), bridge


def _run_outputs(out: Path, result) -> None:
    save_tensor(result.video, out / "video.lctk")
    save_frames(out / "frames", result.video)
    save_tensor(result.light_maps.maps, out / "light_maps.lctk")
    save_tensor(result.light_maps.masks_pixel, out / "masks.lctk")
    if result.residual is not None:
        save_tensor(result.residual, out / "residual.lctk")
    with open(out / "diagnostics.jsonl", "w", encoding="utf-8") as f:
        for rec in result.diagnostics:
            rec = {k: v for k, v in rec.items() if k != "seconds"}
            f.write(json.dumps(rec, sort_keys=True) + "\n")
    timing = [{"step": r["step"], "seconds": r["seconds"]} for r in result.diagnostics]
    write_json(out / "timing.json", timing)
    write_json(out / "stage_hashes.json", result.stage_hashes)


def cmd_run(args) -> int:
    inputs = {}
    if args.manifest:
        man = json.loads(Path(args.manifest).read_text(encoding="utf-8"))
        if man.get("command") != "run":
            raise UsageError(f"{args.manifest} is not a run manifest")
        cfg_dict = dict(man["config"])
        prompt = cfg_dict.pop("prompt", "")
        for name, rec in man["inputs"].items():
            if input_digest(rec["path"]) != rec["sha256"]:
                raise UsageError(f"input {name} ({rec['path']}) changed since the manifest was written")
            inputs[name] = rec["path"]
    else:
        if not (args.video and args.traj):
            raise UsageError("run needs --video and --traj (or --manifest)")
        cfg_dict = PipelineConfig.load(args.config).to_dict() if args.config else PipelineConfig().to_dict()
        prompt = args.prompt
        inputs = {"video": args.video, "traj": args.traj}
        for name in ("normals", "albedo"):
            if getattr(args, name):
                inputs[name] = getattr(args, name)
        if args.config:
            inputs["config"] = args.config
    if args.seed is not None:
        cfg_dict["seed"] = args.seed
    if args.jobs is not None:
        cfg_dict["jobs"] = args.jobs
    elif not args.manifest and not (args.config and "jobs" in json.loads(Path(args.config).read_text())):
        cfg_dict["jobs"] = default_jobs()
    if args.backend:
        cfg_dict["backend_command"] = args.backend
    if "normals" not in inputs and cfg_dict.get("normal_source", "analytic") == "analytic":
        log.info("no --normals given; using flat normals")
        cfg_dict["normal_source"] = "flat"
    config = PipelineConfig.from_dict(cfg_dict)

    out = Path(args.out)
    seeds = {"seed": config.seed, "inject_seed": config.injection.seed}
    write_manifest(out, "run", {**config.to_dict(), "prompt": prompt}, inputs, seeds)

    video = read_video(inputs["video"])
    spec = load_spec(inputs["traj"])
    normals = load_tensor(inputs["normals"]).astype(np.float64) if "normals" in inputs else None
    albedo = load_tensor(inputs["albedo"]).astype(np.float64) if "albedo" in inputs else None
    plugins, bridge = build_plugins(config, normals, albedo, keep_artifacts=args.keep_artifacts)
    try:
        result = run(config, video, spec, prompt, plugins=plugins)
    finally:
        if bridge is not None:
            bridge.close()
    _run_outputs(out, result)
    print(f"wrote relit video ({result.video.shape[0]} frames) to {out}")
    return EXIT_OK


def cmd_metrics(args) -> int:
    result = read_video(args.result)
    source = read_video(args.source)
    spec = load_spec(args.traj)
    _, _, h, w = result.shape
    lm = build_light_maps(spec, h, w, 1, args.threshold, args.falloff)
    report = metrics_mod.evaluate(result, source, lm.maps, lm.masks_pixel, lm.states,
                                  overlay_gain=args.overlay_gain, overlay_mode=args.overlay_mode)
    d = report.to_dict()
    d["inputs"] = {"result": input_digest(args.result), "source": input_digest(args.source),
                   "traj": input_digest(args.traj)}
    out = Path(args.out)
    if out.suffix != ".json":
        out.mkdir(parents=True, exist_ok=True)
        out = out / "report.json"
    else:
        out.parent.mkdir(parents=True, exist_ok=True)
    write_json(out, d)
    print(json.dumps({k: d[k] for k in ("psnr_y", "psnr_light", "temporal_consistency",
                                        "centroid_track_error")}))
    return EXIT_OK


def cmd_healthcheck(args) -> int:
    caps = healthcheck(args.backend, deadline_s=args.deadline)
    print(json.dumps({"roles": list(caps.roles), "latent_scale": caps.latent_scale}))
    return EXIT_OK


# -- parser -----------------------------------------------------------------------


def _jobs(p):
    p.add_argument("--jobs", type=int, default=None,
                   help=f"frame-parallel worker count (default: available CPUs, here {default_jobs()})")


def build_parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(prog="lightkit", description="Trajectory-controlled video relighting toolkit.")
    ap.add_argument("--version", action="version", version=f"lightkit {__version__}")
    ap.add_argument("-v", "--verbose", action="count", default=0, help="more logging (repeatable)")
    sub = ap.add_subparsers(dest="command", metavar="COMMAND", required=True)

    p = sub.add_parser("synth", help="render the synthetic sphere scene",
                       description="Render the synthetic test scene: frames, normals, albedo.")
    p.add_argument("--scene", default="sphere", choices=["sphere"], help="scene name (default sphere)")
    p.add_argument("--frames", type=int, default=16, help="frame count (default 16)")
    p.add_argument("--size", type=int, nargs=2, metavar=("H", "W"), default=[64, 64], help="frame size (default 64 64)")
    p.add_argument("--bake-light", choices=["none", "left"], default="none",
                   help="baked-in source lighting (default none)")
    p.add_argument("--drift", type=float, default=0.0, help="horizontal sphere motion over the clip (default 0)")
    p.add_argument("--seed", type=int, default=0, help="accepted for uniformity; the scene is deterministic")
    p.add_argument("--out", required=True, help="output directory")
    p.set_defaults(fn=cmd_synth)

    p = sub.add_parser("trajgen", help="render light maps and masks from a trajectory",
                       description="Render per-frame light maps (PPM + LCTK) and binary masks.")
    p.add_argument("--traj", required=True, help="trajectory JSON")
    p.add_argument("--size", type=int, nargs=2, metavar=("H", "W"), required=True, help="frame size")
    p.add_argument("--latent-scale", type=int, default=8, help="pixel-to-latent factor for latent masks (default 8)")
    p.add_argument("--threshold", type=float, default=DEFAULT_THRESHOLD, help="mask threshold (default 0.3)")
    p.add_argument("--falloff", choices=["linear", "gaussian"], default="linear", help="radial profile")
    p.add_argument("--seed", type=int, default=0, help="accepted for uniformity; rendering is deterministic")
    p.add_argument("--out", required=True, help="output directory")
    p.set_defaults(fn=cmd_trajgen)

    p = sub.add_parser("inject", help="blend keyed noise into masked latent cells",
                       description="Light-map injection on an LCTK latent tensor.")
    p.add_argument("--latents", required=True, help="noisy latents (LCTK, F x C x h x w)")
    p.add_argument("--masks", required=True, help="latent masks (LCTK, F x 1 x h x w)")
    p.add_argument("--omega", type=float, default=DEFAULT_OMEGA, help="noise weight inside the mask (default 0.8)")
    p.add_argument("--mode", choices=["latent", "frequency"], default="latent", help="injection variant")
    p.add_argument("--order", type=int, default=DEFAULT_ORDER, help="Butterworth order for frequency mode")
    p.add_argument("--renormalize", action="store_true", help="rescale blended cells to unit variance")
    p.add_argument("--seed", type=int, default=0, help="noise seed (default 0)")
    _jobs(p)
    p.add_argument("--out", required=True, help="output LCTK file")
    p.set_defaults(fn=cmd_inject)

    p = sub.add_parser("fuse", help="low/high frequency fusion of two latent tensors",
                       description="Take low frequencies from --low and high frequencies from --high.")
    p.add_argument("--low", required=True, help="LCTK tensor supplying low frequencies")
    p.add_argument("--high", required=True, help="LCTK tensor supplying high frequencies")
    p.add_argument("--alpha", type=float, default=None, help="cut-off in (0, 1]")
    p.add_argument("--step", type=float, default=None, help="derive the cut-off from a denoising step")
    p.add_argument("--steps", type=int, default=25, help="total steps for --step (default 25)")
    p.add_argument("--alpha-min", type=float, default=0.05, help="cut-off floor for --step (default 0.05)")
    p.add_argument("--order", type=int, default=DEFAULT_ORDER, help="Butterworth order (default 4)")
    p.add_argument("--seed", type=int, default=0, help="accepted for uniformity; fusion is deterministic")
    p.add_argument("--out", required=True, help="output LCTK file")
    p.set_defaults(fn=cmd_fuse)

    p = sub.add_parser("run", help="run the relighting loop",
                       description="Relight a video along a light trajectory.")
    p.add_argument("--config", help="PipelineConfig JSON (field names as in the README)")
    p.add_argument("--manifest", help="re-run from a manifest.json written by an earlier run")
    p.add_argument("--video", help="frame folder (frame_*.ppm) or LCTK video")
    p.add_argument("--traj", help="trajectory JSON")
    p.add_argument("--normals", help="LCTK normal maps (for normal_source 'analytic')")
    p.add_argument("--albedo", help="LCTK albedo handed to the Lambertian relighter")
    p.add_argument("--prompt", default="", help="text forwarded to the relighter")
    p.add_argument("--backend", help="command template for plugin ids set to 'bridge'")
    p.add_argument("--keep-artifacts", action="store_true", help="keep bridge request directories")
    p.add_argument("--seed", type=int, default=None, help="override the config seed")
    _jobs(p)
    p.add_argument("--out", required=True, help="output directory")
    p.set_defaults(fn=cmd_run)

    p = sub.add_parser("metrics", help="score a relit video",
                       description="Compute PSNR_y, PSNR_light, temporal consistency and centroid tracking.")
    p.add_argument("--result", required=True, help="relit video (frame folder or LCTK)")
    p.add_argument("--source", required=True, help="source video (frame folder or LCTK)")
    p.add_argument("--traj", required=True, help="trajectory JSON used for the run")
    p.add_argument("--threshold", type=float, default=DEFAULT_THRESHOLD, help="mask threshold (default 0.3)")
    p.add_argument("--falloff", choices=["linear", "gaussian"], default="linear", help="radial profile")
    p.add_argument("--overlay-gain", type=float, default=1.0, help="light-map gain for PSNR_light (default 1)")
    p.add_argument("--overlay-mode", choices=["add", "alpha"], default="add", help="overlay rule (default add)")
    p.add_argument("--seed", type=int, default=0, help="accepted for uniformity; metrics are deterministic")
    p.add_argument("--out", required=True, help="report path (.json) or directory for report.json")
    p.set_defaults(fn=cmd_metrics)

    p = sub.add_parser("healthcheck", help="probe a bridge backend",
                       description="Send a 1x1x8x8 probe for every role and report what the backend serves.")
    p.add_argument("--backend", required=True, help="backend command template")
    p.add_argument("--deadline", type=float, default=30.0, help="seconds per probe (default 30)")
    p.set_defaults(fn=cmd_healthcheck)
    return ap


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.WARNING - 10 * min(args.verbose, 2),
                        format="%(levelname)s %(name)s: %(message)s")
    if getattr(args, "jobs", None) is not None and args.jobs < 1:
        print("lightkit: error: --jobs must be >= 1", file=sys.stderr)
        return EXIT_USAGE
    if getattr(args, "jobs", 0) is None and args.fn is cmd_inject:
        args.jobs = default_jobs()
    try:
        return args.fn(args)
    except (NumericStepError, NonFiniteError) as exc:
        print(f"lightkit: numeric failure: {exc}", file=sys.stderr)
        return EXIT_NUMERIC
    except (PluginStepError, BridgeError, PluginError) as exc:
        print(f"lightkit: plugin failure: {exc}", file=sys.stderr)
        return EXIT_PLUGIN
    except (UsageError, ConfigError, TrajectoryError, LCTKError, OSError, ValueError, KeyError) as exc:
        print(f"lightkit: error: {exc}", file=sys.stderr)
        return EXIT_USAGE


if __name__ == "__main__":
    sys.exit(main())
