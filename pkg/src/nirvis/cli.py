"""Command-line pipeline.

Subcommands: ``transform`` (VIS bundle -> NIR bundle), ``generate``
(paired VIS/NIR dataset + manifest), ``eval`` (metric report from a
feature file), ``train-toy`` (loss-mode comparison on synthetic data),
``fit-sigma`` (normals width fit). Global flags --config/--seed/--jobs/
--out come before the subcommand; flag values win over config-file
values. NIRVIS_CONFIG names a default config file.
"""
from __future__ import annotations

import argparse
import json
import math
import os
import sys
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, replace
from pathlib import Path

import numpy as np

from .bundle import BundleError, load_bundle, load_reference_normals, save_bundle
from .features import FeatureFormatError, load_features
from .metrics import MetricError, compute_report, tenfold_protocol, write_report
from .nir_transform import (
    TransformParams,
    WavelengthConfig,
    fit_sigma,
    transform_assets,
    wavelength_scale,
)
from .render import (
    Camera,
    EnvironmentMap,
    RenderError,
    RenderQuality,
    default_flood_intensity,
    load_mesh,
    make_flood_env,
    render_pair_set,
    sample_pose_env,
)
from .texmaps import NormalMap, TextureError, TextureMap, load_map, save_map
from .toytrain import (
    LOSS_MODES,
    TrainConfig,
    TrainDivergence,
    synth_two_modality_data,
    train,
    write_history,
)
from .util import rng_from

ENV_CONFIG_VAR = "NIRVIS_CONFIG"
MANIFEST_SCHEMA_VERSION = 1


class ConfigError(ValueError):
    pass


@dataclass(frozen=True)
class PipelineConfig:
    """Run-wide knobs, loaded from a JSON file and overridden by flags."""

    wavelengths: WavelengthConfig = WavelengthConfig()
    transform: TransformParams = TransformParams()
    flood_radius_deg: float = 15.0
    flood_intensity: float | None = None  # None -> default_flood_intensity
    pose_limits: tuple[float, float, float] = (45.0, 15.0, 10.0)
    width: int = 128
    height: int = 128
    spp: int = 64
    focal: float | None = None
    distance: float = 2.5
    pairs_per_identity: int = 20
    exposure: float = 1.0
    seed: int = 0

    def __post_init__(self) -> None:
        if self.pairs_per_identity < 1:
            raise ConfigError(f"pairs_per_identity must be >= 1, got {self.pairs_per_identity}")
        if self.exposure <= 0:
            raise ConfigError(f"exposure must be > 0, got {self.exposure}")
        if not 0 < self.flood_radius_deg < 90:
            raise ConfigError(f"flood_radius_deg must be in (0, 90), got {self.flood_radius_deg}")

    def camera(self) -> Camera:
        return Camera(self.width, self.height, self.focal, self.distance)

    def flood(self, resolution: int) -> EnvironmentMap:
        intensity = self.flood_intensity
        if intensity is None:
            intensity = default_flood_intensity(self.flood_radius_deg)
        return make_flood_env(intensity, self.flood_radius_deg, resolution)


_SECTIONS = {
    "wavelengths",
    "transform",
    "flood",
    "pose_limits",
    "quality",
    "camera",
    "pairs_per_identity",
    "exposure",
    "seed",
}


def config_from_dict(raw: dict) -> PipelineConfig:
    unknown = set(raw) - _SECTIONS
    if unknown:
        raise ConfigError(f"unknown config keys: {sorted(unknown)}")
    kw: dict = {}
    if "wavelengths" in raw:
        w = dict(raw["wavelengths"])
        if "vis_band" in w:
            w["vis_band"] = tuple(w["vis_band"])
        kw["wavelengths"] = WavelengthConfig(**w)
    if "transform" in raw:
        kw["transform"] = TransformParams(**raw["transform"])
    if "flood" in raw:
        f = raw["flood"]
        if "radius_deg" in f:
            kw["flood_radius_deg"] = float(f["radius_deg"])
        if "intensity" in f and f["intensity"] is not None:
            kw["flood_intensity"] = float(f["intensity"])
    if "pose_limits" in raw:
        limits = raw["pose_limits"]
        kw["pose_limits"] = (
            float(limits.get("yaw", 45.0)),
            float(limits.get("pitch", 15.0)),
            float(limits.get("roll", 10.0)),
        )
    if "quality" in raw:
        q = raw["quality"]
        kw["width"] = int(q.get("width", 128))
        kw["height"] = int(q.get("height", 128))
        kw["spp"] = int(q.get("spp", 64))
    if "camera" in raw:
        c = raw["camera"]
        if c.get("focal") is not None:
            kw["focal"] = float(c["focal"])
        if "distance" in c:
            kw["distance"] = float(c["distance"])
    for key in ("pairs_per_identity", "seed"):
        if key in raw:
            kw[key] = int(raw[key])
    if "exposure" in raw:
        kw["exposure"] = float(raw["exposure"])
    try:
        return PipelineConfig(**kw)
    except ValueError as exc:
        raise ConfigError(str(exc)) from exc


def load_config(args: argparse.Namespace) -> PipelineConfig:
    path = args.config or os.environ.get(ENV_CONFIG_VAR)
    if path:
        p = Path(path)
        if not p.is_file():
            raise ConfigError(f"config file not found: {p}")
        try:
            raw = json.loads(p.read_text())
        except json.JSONDecodeError as exc:
            raise ConfigError(f"{p}: invalid JSON ({exc})") from exc
        cfg = config_from_dict(raw)
    else:
        cfg = PipelineConfig()
    if args.seed is not None:
        cfg = replace(cfg, seed=args.seed)
    return cfg


def euler_from_rotation(rot: np.ndarray) -> tuple[float, float, float]:
    """Recover (yaw, pitch, roll) degrees from a yaw-pitch-roll rotation."""
    pitch = math.asin(max(-1.0, min(1.0, -float(rot[1, 2]))))
    yaw = math.atan2(float(rot[0, 2]), float(rot[2, 2]))
    roll = math.atan2(float(rot[1, 0]), float(rot[1, 1]))
    return tuple(math.degrees(a) for a in (yaw, pitch, roll))


# ---------------------------------------------------------------------------
# subcommands
# ---------------------------------------------------------------------------

def _write_image(tex: TextureMap, path: Path, exposure: float, sidecar: bool) -> None:
    """16-bit PNG after fixed exposure + clamp; optional lossless sidecar."""
    exposed = np.clip(tex.data.astype(np.float64) * exposure, 0.0, 1.0).astype(np.float32)
    save_map(TextureMap(exposed), path, encoding="png16")
    if sidecar:
        save_map(tex, path.with_suffix(".pfm"), encoding="pfm")


def cmd_transform(args: argparse.Namespace, cfg: PipelineConfig) -> int:
    src = Path(args.asset_dir)
    try:
        refl = load_bundle(src)
        reference = load_reference_normals(src)
    except (BundleError, TextureError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    params = cfg.transform
    if reference is not None:
        sigma = fit_sigma(refl.normals, reference)
        params = replace(params, sigma=sigma)
    try:
        nir = transform_assets(refl, cfg.wavelengths, params)
    except ValueError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    out = Path(args.out) if args.out else src.parent / f"{src.name}_nir"
    wl = cfg.wavelengths
    provenance = {
        "wavelengths": {
            "w_green": wl.w_green,
            "w_red": wl.w_red,
            "w_nir": wl.w_nir,
            "vis_band": list(wl.vis_band),
        },
        "sigma": params.sigma,
        "sigma_fitted": reference is not None,
        "scaled_sigma": wavelength_scale(wl) * params.sigma,
        "k_rough": params.k_rough,
        "sigma_range": params.sigma_range,
        "source_checksum": refl.checksum(),
    }
    save_bundle(nir, out, provenance=provenance)
    print(f"wrote NIR bundle to {out} (sigma={params.sigma:.4f}, "
          f"{'fitted' if reference is not None else 'configured'})")
    return 0


def _load_envs(env_dir: Path) -> list[EnvironmentMap]:
    if not env_dir.is_dir():
        raise RenderError(f"environment directory not found: {env_dir}")
    paths = sorted(p for p in env_dir.iterdir() if p.suffix.lower() in (".pfm", ".png"))
    if not paths:
        raise RenderError(f"no .pfm/.png environment maps in {env_dir}")
    envs = [EnvironmentMap(load_map(p), kind="scene") for p in paths]
    sizes = {(e.width, e.height) for e in envs}
    if len(sizes) != 1:
        raise RenderError(f"environment maps disagree on resolution: {sorted(sizes)}")
    return envs


def _generate_identity(
    idx: int,
    bundle_dir: Path,
    envs: list,
    e_flood: EnvironmentMap,
    cfg: PipelineConfig,
    out_root: Path,
    sidecar: bool,
) -> list[dict]:
    name = bundle_dir.name
    refl = load_bundle(bundle_dir)
    mesh_path = bundle_dir / "mesh.obj"
    if not mesh_path.is_file():
        raise BundleError(f"{bundle_dir}: missing mesh.obj (needed for rendering)")
    mesh = load_mesh(mesh_path)
    ident_seed = int(rng_from(cfg.seed, idx).integers(0, 2**62))
    samples = sample_pose_env(
        ident_seed, cfg.pairs_per_identity, len(envs), cfg.pose_limits
    )
    quality = RenderQuality(spp=cfg.spp, seed=ident_seed)
    pairs = render_pair_set(
        mesh, refl, cfg.wavelengths, samples, envs, e_flood,
        cfg.camera(), quality, cfg.transform,
    )
    ident_out = out_root / name
    ident_out.mkdir(parents=True, exist_ok=True)
    records = []
    for pr in pairs:
        vis_rel = f"{name}/vis_{pr.index:03d}.png"
        nir_rel = f"{name}/nir_{pr.index:03d}.png"
        _write_image(pr.vis, out_root / vis_rel, cfg.exposure, sidecar)
        _write_image(pr.nir, out_root / nir_rel, cfg.exposure, sidecar)
        yaw, pitch, roll = euler_from_rotation(pr.pose.rotation)
        records.append({
            "schema_version": MANIFEST_SCHEMA_VERSION,
            "identity_id": name,
            "pair_index": pr.index,
            "pose": {"yaw_deg": yaw, "pitch_deg": pitch, "roll_deg": roll},
            "env_index": pr.pose.env_index,
            "env_yaw_deg": pr.pose.env_yaw_deg,
            "vis_path": vis_rel,
            "nir_path": nir_rel,
            "seed": ident_seed,
            "nir_checksum": pr.nir_checksum,
        })
    return records


def cmd_generate(args: argparse.Namespace, cfg: PipelineConfig) -> int:
    if args.pairs is not None:
        cfg = replace(cfg, pairs_per_identity=args.pairs)
    out_root = Path(args.out) if args.out else Path("dataset")
    out_root.mkdir(parents=True, exist_ok=True)
    try:
        envs = _load_envs(Path(args.envs))
    except (RenderError, TextureError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    e_flood = cfg.flood(envs[0].height)
    bundles = sorted((Path(p) for p in args.assets), key=lambda p: p.name)
    names = [b.name for b in bundles]
    if len(set(names)) != len(names):
        print(f"error: duplicate identity names in {names}", file=sys.stderr)
        return 2

    def work(item):
        idx, bundle = item
        try:
            return _generate_identity(idx, bundle, envs, e_flood, cfg, out_root, args.float_sidecar)
        except Exception as exc:  # isolate per-identity failures
            return exc

    with ThreadPoolExecutor(max_workers=max(args.jobs, 1)) as pool:
        results = list(pool.map(work, enumerate(bundles)))

    failures = []
    n_records = 0
    with open(out_root / "manifest.jsonl", "a") as fh:
        for bundle, result in zip(bundles, results):
            if isinstance(result, Exception):
                failures.append((bundle.name, result))
                continue
            for record in result:
                fh.write(json.dumps(record, sort_keys=True) + "\n")
                n_records += 1
    print(f"generated {n_records} pairs over {len(bundles) - len(failures)} identities "
          f"({len(failures)} failed)")
    for name, exc in failures:
        print(f"failed: {name}: {exc}", file=sys.stderr)
    return 1 if failures else 0


def cmd_eval(args: argparse.Namespace, cfg: PipelineConfig) -> int:
    try:
        ds = load_features(args.features)
    except FeatureFormatError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    far_targets = tuple(args.far) if args.far else (1e-4, 1e-3, 1e-2)
    out = Path(args.out) if args.out else Path("eval")
    try:
        if args.folds:
            per_fold, report = tenfold_protocol(
                ds, cfg.seed, folds=args.folds, far_targets=far_targets
            )
        else:
            per_fold, report = None, compute_report(ds, far_targets)
    except MetricError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    write_report(report, out, per_fold)
    print((out / "report.txt").read_text(), end="")
    return 0


def cmd_train_toy(args: argparse.Namespace, cfg: PipelineConfig) -> int:
    modes = [m.strip() for m in args.modes.split(",") if m.strip()]
    bad = [m for m in modes if m not in LOSS_MODES]
    if bad:
        print(f"error: unknown loss modes {bad} (choose from {list(LOSS_MODES)})",
              file=sys.stderr)
        return 2
    out = Path(args.out) if args.out else Path("toytrain")
    out.mkdir(parents=True, exist_ok=True)
    data = synth_two_modality_data(
        cfg.seed, num_ids=args.ids, per_id=args.per_id,
        dim=args.dim, modality_shift=args.shift,
    )
    tc = TrainConfig(
        lam=args.lam, p=args.ids, k=args.per_id, seed=cfg.seed,
        epochs_pretrain=args.epochs_pretrain, epochs_finetune=args.epochs_finetune,
    )
    rows, failed = [], []
    for mode in modes:
        try:
            _, history = train(tc, data, loss_mode=mode)
        except TrainDivergence as exc:
            history = exc.history
            failed.append(mode)
        write_history(history, out / f"history_{mode.replace('+', '_')}.tsv")
        final = history[-1]["centroid_cos"] if history else float("nan")
        rows.append((mode, final))
    lines = ["mode\tfinal_centroid_cos"]
    lines += [f"{mode}\t{value:.6f}" for mode, value in rows]
    table = "\n".join(lines) + "\n"
    (out / "comparison.tsv").write_text(table)
    print(table, end="")
    if failed:
        print(f"diverged: {', '.join(failed)}", file=sys.stderr)
        return 1
    return 0


def cmd_fit_sigma(args: argparse.Namespace, cfg: PipelineConfig) -> int:
    try:
        green = NormalMap(load_map(args.green, role="normal"))
        red = NormalMap(load_map(args.red, role="normal"))
        sigma = fit_sigma(green, red, sigma_max=args.sigma_max)
    except (TextureError, ValueError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    print(f"sigma={sigma:.6f}")
    print(f"scaled_sigma={wavelength_scale(cfg.wavelengths) * sigma:.6f}")
    if args.out:
        out = Path(args.out)
        out.parent.mkdir(parents=True, exist_ok=True)
        out.write_text(json.dumps({
            "sigma": sigma,
            "scaled_sigma": wavelength_scale(cfg.wavelengths) * sigma,
        }, indent=2) + "\n")
    return 0


# ---------------------------------------------------------------------------
# parser
# ---------------------------------------------------------------------------

def build_parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(
        prog="nirvis",
        description="Paired NIR-VIS face data tooling: reflectance transformation, "
                    "physically-based paired rendering, losses, and evaluation.",
    )
    ap.add_argument("--config", default=None,
                    help=f"JSON config file (default: ${ENV_CONFIG_VAR})")
    ap.add_argument("--seed", type=int, default=None, help="override the config seed")
    ap.add_argument("--jobs", type=int, default=1, help="identity-level worker count")
    ap.add_argument("--out", default=None, help="output directory (or file for fit-sigma)")
    sub = ap.add_subparsers(dest="command", required=True)

    t = sub.add_parser("transform", help="turn a VIS reflectance bundle into NIR")
    t.add_argument("asset_dir", help="VIS bundle directory")

    g = sub.add_parser("generate", help="render a paired VIS/NIR dataset + manifest")
    g.add_argument("assets", nargs="+", help="one bundle directory per identity")
    g.add_argument("--envs", required=True, help="directory of scene environment maps")
    g.add_argument("--pairs", type=int, default=None, help="pairs per identity")
    g.add_argument("--float-sidecar", action="store_true",
                   help="also write lossless .pfm images")

    e = sub.add_parser("eval", help="metric report from a labeled feature file")
    e.add_argument("features", help="CSV of identity,modality,feature...")
    e.add_argument("--folds", type=int, default=0,
                   help="run the identity-disjoint split protocol with this many folds")
    e.add_argument("--far", type=float, action="append", default=None,
                   help="FAR target (repeatable)")

    tt = sub.add_parser("train-toy", help="compare loss modes on synthetic data")
    tt.add_argument("--modes", default=",".join(LOSS_MODES),
                    help="comma-separated loss modes")
    tt.add_argument("--lam", type=float, default=100.0, help="alignment-loss weight")
    tt.add_argument("--ids", type=int, default=10)
    tt.add_argument("--per-id", type=int, default=16, dest="per_id")
    tt.add_argument("--dim", type=int, default=16)
    tt.add_argument("--shift", type=float, default=0.8, help="modality shift")
    tt.add_argument("--epochs-pretrain", type=int, default=20, dest="epochs_pretrain")
    tt.add_argument("--epochs-finetune", type=int, default=5, dest="epochs_finetune")

    fs = sub.add_parser("fit-sigma", help="fit the normals blur width")
    fs.add_argument("green", help="green-channel normal map")
    fs.add_argument("red", help="red-channel normal map")
    fs.add_argument("--sigma-max", type=float, default=None, dest="sigma_max")
    return ap


_COMMANDS = {
    "transform": cmd_transform,
    "generate": cmd_generate,
    "eval": cmd_eval,
    "train-toy": cmd_train_toy,
    "fit-sigma": cmd_fit_sigma,
}


def main(argv: list[str] | None = None) -> int:
    args = build_parser().parse_args(argv)
    try:
        cfg = load_config(args)
    except ConfigError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    return _COMMANDS[args.command](args, cfg)


if __name__ == "__main__":
    sys.exit(main())
