"""Command-line entry point: ``pbrpaint <command> ...``.

Commands: gen-data, train, paint, relight, eval, verify. Settings come from
built-in defaults, then an optional ``--config`` key=value file, then
command-line flags. Exit codes: 0 success, 1 verification failure,
2 usage or environment error.
"""
from __future__ import annotations

import argparse
import dataclasses
import logging
import sys
from dataclasses import dataclass, fields
from pathlib import Path
from typing import Optional

import numpy as np
import torch

EXIT_OK, EXIT_VERIFY, EXIT_USAGE = 0, 1, 2

log = logging.getLogger("pbrpaint")


class UsageError(Exception):
    """Bad arguments, missing inputs or unwritable outputs (exit code 2)."""


@dataclass
class Config:
    image_res: int = 64
    uv_res: int = 128
    T: int = 1000
    sampler_steps: int = 50
    lambda_p: float = 0.1
    lambda_2: float = 1.0
    lr: float = 5e-5
    batch_size: int = 8
    steps: int = 1000
    grad_clip: float = 1.0
    width: int = 32
    ckpt_every: int = 0
    seed: int = 0
    threads: int = 1


RANGES = {
    "image_res": (8, 1024), "uv_res": (8, 4096), "T": (2, 100_000), "sampler_steps": (1, 100_000),
    "lambda_p": (0.0, 1e3), "lambda_2": (0.0, 1e3), "lr": (1e-9, 1.0), "batch_size": (1, 4096),
    "steps": (0, 10**8), "grad_clip": (0.0, 1e6), "width": (1, 1024), "ckpt_every": (0, 10**8),
    "seed": (0, 2**63 - 1), "threads": (1, 1024),
}


def parse_config_text(text: str, source: str = "<config>") -> dict[str, str]:
    out = {}
    for n, line in enumerate(text.splitlines(), 1):
        line = line.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise UsageError(f"{source}:{n}: expected key=value, got {line!r}")
        k, v = (s.strip() for s in line.split("=", 1))
        out[k] = v
    return out


def make_config(file_values: dict[str, str], overrides: dict[str, object]) -> Config:
    """Defaults < config file < command line. Unknown keys and out-of-range values are rejected."""
    types = {f.name: f.type for f in fields(Config)}
    cfg = Config()
    for source in (file_values, {k: v for k, v in overrides.items() if v is not None}):
        for k, v in source.items():
            if k not in types:
                raise UsageError(f"unknown config key {k!r}")
            cast = float if types[k] in (float, "float") else int
            try:
                setattr(cfg, k, cast(v))
            except ValueError:
                raise UsageError(f"config key {k!r}: cannot parse {v!r}") from None
    for k, (lo, hi) in RANGES.items():
        val = getattr(cfg, k)
        if not lo <= val <= hi:
            raise UsageError(f"config key {k!r} = {val} outside [{lo}, {hi}]")
    return cfg


def print_config(cfg: Config, out=None):
    out = out or sys.stdout
    out.write("# config\t" + "\t".join(f"{k}={v}" for k, v in dataclasses.asdict(cfg).items()) + "\n")


def _writable_dir(path: Path) -> Path:
    try:
        path.mkdir(parents=True, exist_ok=True)
        probe = path / ".pbrpaint_write_test"
        probe.write_text("")
        probe.unlink()
    except OSError as e:
        raise UsageError(f"cannot write to {path}: {e.strerror or e}") from None
    return path


# --- commands --------------------------------------------------------------

def cmd_gen_data(args, cfg: Config) -> int:
    from .dataset import build_dataset, read_manifest
    from .geometry.camera import camera_ring

    out = _writable_dir(Path(args.out))
    cams = camera_ring(args.views, cfg.image_res)
    manifest = build_dataset(args.objects, cams, out, cfg.seed, threads=cfg.threads, uv_res=cfg.uv_res)
    recs = read_manifest(manifest)
    n_est = sum(r.kind == "estimator" for r in recs)
    n_ref = sum(r.kind == "refiner" for r in recs)
    print(f"manifest\t{manifest}")
    print(f"estimator_records\t{n_est}")
    print(f"refiner_records\t{n_ref}")
    return EXIT_OK


def _manifest_path(p: str) -> Path:
    path = Path(p)
    if path.is_dir():
        path = path / "manifest.tsv"
    if not path.is_file():
        raise UsageError(f"manifest not found: {path}")
    return path


def cmd_train(args, cfg: Config) -> int:
    from .dataset import load_refiner_sample, load_training_sample, load_view, read_manifest
    from .diffusion.model import (ESTIMATOR_COND, ESTIMATOR_COND_NO_CONF, REFINER_COND, ModelConfig,
                                  build_model)
    from .diffusion.train import (TrainConfig, estimator_batch, fixed_source, pool_source, refiner_batch, train,
                                  view_source)

    manifest = _manifest_path(args.data)
    records = read_manifest(manifest)
    kind = args.model
    tcfg = TrainConfig(steps=cfg.steps, batch_size=cfg.batch_size, lr=cfg.lr, lambda_p=cfg.lambda_p,
                       lambda_2=cfg.lambda_2, grad_clip=cfg.grad_clip, T=cfg.T, seed=cfg.seed,
                       ckpt_every=cfg.ckpt_every)
    if kind == "estimator":
        recs = [r for r in records if r.kind == "estimator"]
        if not recs:
            raise UsageError(f"{manifest}: no estimator records")
        use_conf = not args.no_confidence
        mcfg = ModelConfig(cond_channels=ESTIMATOR_COND if use_conf else ESTIMATOR_COND_NO_CONF,
                           width=cfg.width, heads=args.heads)
        if args.overfit:
            batch = estimator_batch([load_training_sample(r) for r in recs[:args.overfit]], use_conf)
            source = fixed_source(batch)
        else:
            source = view_source([load_view(r) for r in recs], tcfg.batch_size, use_conf)
    else:
        recs = [r for r in records if r.kind == "refiner"]
        if not recs:
            raise UsageError(f"{manifest}: no refiner records")
        tcfg = dataclasses.replace(tcfg, lambda_p=0.0)
        mcfg = ModelConfig(cond_channels=REFINER_COND, width=cfg.width, heads=args.heads)
        pool = [load_refiner_sample(r) for r in recs]
        if args.overfit:
            source = fixed_source(refiner_batch(pool[:args.overfit]))
        else:
            source = pool_source(pool, tcfg.batch_size, refiner_batch)
    out = Path(args.out)
    _writable_dir(out.parent)
    resume = Path(args.resume) if args.resume else None
    if resume is not None and not resume.is_file():
        raise UsageError(f"checkpoint not found: {resume}")
    model = build_model(mcfg, seed=cfg.seed)
    print(f"# model\t{kind}\tparameters={model.n_parameters()}")
    print("\t".join(("step", "loss_v", "loss_p", "loss_2", "total", "wall_ms")))
    result = train(model, source, tcfg, kind, ckpt_path=out, log_file=sys.stdout, resume=resume,
                   extra_header={"manifest": str(manifest)})
    hist = [h["total"] for h in result.history]
    if hist:
        early = float(np.mean(hist[:5]))
        final = float(np.mean(hist[-5:]))
        print(f"# summary\tearly_avg={early:.6g}\tfinal_avg={final:.6g}\tratio={final / early:.4g}")
    print(f"checkpoint\t{out}")
    return EXIT_OK


def _load_mesh_arg(spec: str):
    from .geometry.mesh import PRIMITIVES, load_mesh

    if spec in PRIMITIVES:
        return PRIMITIVES[spec]()
    path = Path(spec)
    if not path.is_file():
        raise UsageError(f"mesh not found: {spec}")
    return load_mesh(path)


def _load_model_arg(path: Optional[str], kind: str):
    from .diffusion.checkpoint import CheckpointError, load_model

    if path is None:
        return None
    p = Path(path)
    if not p.is_file():
        raise UsageError(f"{kind} checkpoint not found: {p}")
    try:
        return load_model(p, expect_kind=kind)[0]
    except CheckpointError as e:
        raise UsageError(str(e)) from None


def cmd_paint(args, cfg: Config) -> int:
    from .dataset import TAG_IDS
    from .diffusion.schedule import make_schedule
    from .geometry.camera import camera_ring
    from .geometry.raster import rasterize_uv
    from .imageio import load_material_set, save_material_set, write_pfm, write_png
    from .material import LightingScenario
    from .pipeline import PaintError, PaintJob, coarse_texture, paint_object, render_inputs, tag_texture
    from .shading import PRESET_RIGS, relight

    mesh = _load_mesh_arg(args.mesh)
    if args.tag not in TAG_IDS:
        raise UsageError(f"unknown tag {args.tag!r}")
    scenario = LightingScenario.parse(args.scenario)
    cams = camera_ring(args.views, cfg.image_res)
    estimator = _load_model_arg(args.estimator, "estimator")
    if estimator is None:
        raise UsageError("--estimator is required")
    refiner = None if args.no_refiner else _load_model_arg(args.refiner, "refiner")
    out = _writable_dir(Path(args.out))
    notes = []
    if args.textures:
        tex = load_material_set(args.textures)
        images = render_inputs(mesh, tex, cams, scenario, cfg.seed)
    elif scenario is LightingScenario.GENERATED:
        images = coarse_texture(mesh, args.tag, cams, cfg.seed, cfg.uv_res)
        notes.append("coarse_texture fallback: no input textures, generated tag texture used")
    else:
        tex = tag_texture(args.tag, cfg.uv_res, np.random.default_rng(cfg.seed))
        images = render_inputs(mesh, tex, cams, scenario, cfg.seed)
        notes.append("no input textures: tag palette texture rendered under the scenario lighting")
    if refiner is None:
        notes.append("refiner disabled: pull-push fill used")
    job = PaintJob(mesh, scenario, TAG_IDS[args.tag], cams, images, n_steps=cfg.sampler_steps,
                   uv_res=cfg.uv_res, seed=cfg.seed, notes=notes)
    sched = make_schedule(cfg.T)
    try:
        final, report, records = paint_object(job, estimator, refiner, sched)
    except PaintError as e:
        bake = e.partial.get("bake")
        if bake is not None:
            save_material_set(out / "partial_uv", bake.materials)
        print(f"error\t{e.stage}\t{e}", file=sys.stderr)
        return EXIT_USAGE
    save_material_set(out / "uv", final, png=True)
    (out / "report.tsv").write_text(report.to_tsv())
    for rec in records:
        stem = out / f"view{rec.index:02d}"
        write_pfm(f"{stem}_input.pfm", rec.image)
        save_material_set(stem, rec.materials)
        np.savez_compressed(f"{stem}_gbuffer.npz", **rec.gbuf.to_arrays())
    occ = rasterize_uv(mesh, cfg.uv_res).occupancy
    for name, rig in PRESET_RIGS.items():
        img = relight(mesh, final, rig(), cams[0], occupancy=occ)
        write_png(out / f"preview_{name}.png", img, role="render")
    sys.stdout.write(report.to_tsv())
    return EXIT_OK


def cmd_relight(args, cfg: Config) -> int:
    from .geometry.camera import orbit_camera
    from .geometry.raster import rasterize_uv
    from .imageio import load_material_set, write_pfm, write_png
    from .shading import PRESET_RIGS, LightingRig, relight

    mesh = _load_mesh_arg(args.mesh)
    try:
        mats = load_material_set(args.materials)
    except FileNotFoundError as e:
        raise UsageError(f"materials not found: {e.filename}") from None
    if args.rig_file:
        rig = LightingRig.from_text(Path(args.rig_file).read_text())
    elif args.rig in PRESET_RIGS:
        rig = PRESET_RIGS[args.rig]()
    else:
        raise UsageError(f"unknown rig {args.rig!r}; presets: {', '.join(PRESET_RIGS)}")
    cam = orbit_camera(args.azimuth, args.elevation, resolution=cfg.image_res)
    occ = rasterize_uv(mesh, mats.height).occupancy
    img = relight(mesh, mats, rig, cam, occupancy=occ)
    out = Path(args.out)
    _writable_dir(out.parent)
    if out.suffix == ".pfm":
        write_pfm(out, img)
    else:
        write_png(out, img, role="render")
    print(f"image\t{out}")
    return EXIT_OK


EVAL_COLUMNS = ("id", "albedo", "roughness", "metallic", "bump", "mean")


def _material_index(root: Path) -> dict[str, Path]:
    """Material stems below ``root``, keyed by their path relative to it."""
    if root.is_file():
        return {root.name.removesuffix("_albedo.pfm"): Path(str(root).removesuffix("_albedo.pfm"))}
    if not root.is_dir():
        raise UsageError(f"not found: {root}")
    out = {}
    for p in sorted(root.rglob("*_albedo.pfm")):
        stem = Path(str(p)[: -len("_albedo.pfm")])
        out[str(stem.relative_to(root))] = stem
    return out


def cmd_eval(args, cfg: Config) -> int:
    from .experiments import material_rmse
    from .geometry.raster import GBuffer
    from .imageio import load_material_set
    from .pipeline import ViewRecord, consistency_metric

    pred, gt = _material_index(Path(args.pred)), _material_index(Path(args.gt))
    if not pred or set(pred) != set(gt):
        missing = sorted(set(pred) ^ set(gt))[:5]
        raise UsageError(f"prediction and ground-truth sets differ (e.g. {missing})")
    print("\t".join(EVAL_COLUMNS))
    rows, views = [], []
    for key in sorted(pred):
        p, g = load_material_set(pred[key]), load_material_set(gt[key])
        if p.shape != g.shape:
            raise UsageError(f"{key}: shapes differ {p.shape} vs {g.shape}")
        mask = np.ones(g.shape, bool)
        gpath = Path(str(pred[key]) + "_gbuffer.npz")
        if not gpath.exists():
            gpath = Path(str(gt[key]) + "_gbuffer.npz")
        if gpath.exists():
            gbuf = GBuffer.from_arrays(np.load(gpath))
            mask = gbuf.coverage
            views.append(ViewRecord(len(views), gbuf, np.zeros(0), mask, mask, p))
        r = material_rmse(p, g, mask)
        rows.append(r)
        print("\t".join([key] + [f"{r[c]:.6f}" for c in EVAL_COLUMNS[1:]]))
    print("\t".join(["mean"] + [f"{np.mean([r[c] for r in rows]):.6f}" for c in EVAL_COLUMNS[1:]]))
    cons = consistency_metric(views) if len(views) >= 2 else None
    print(f"consistency\t{'absent' if cons is None else f'{cons:.6f}'}")
    return EXIT_OK


def cmd_verify(args, cfg: Config) -> int:
    from .checks import run_checks

    results = run_checks(quick=args.quick)
    for r in results:
        print(r.line())
    failed = sum(not r.passed for r in results)
    print(f"summary\t{len(results) - failed} passed\t{failed} failed")
    return EXIT_OK if failed == 0 else EXIT_VERIFY


# --- argument parsing ------------------------------------------------------

def build_parser() -> argparse.ArgumentParser:
    def add_globals(parser, default):
        parser.add_argument("--config", default=default, help="key=value settings file")
        parser.add_argument("--seed", type=int, default=default)
        parser.add_argument("--threads", type=int, default=default, help="cap on worker threads")
        parser.add_argument("--image-res", dest="image_res", type=int, default=default)
        parser.add_argument("--uv-res", dest="uv_res", type=int, default=default)
        parser.add_argument("-v", "--verbose", action="store_true", default=default or False)

    p = argparse.ArgumentParser(prog="pbrpaint", description="Material estimation and painting for meshes.")
    add_globals(p, None)
    # the same flags are accepted after the subcommand; SUPPRESS keeps values given before it
    shared = argparse.ArgumentParser(add_help=False)
    add_globals(shared, argparse.SUPPRESS)
    sub = p.add_subparsers(dest="command", required=True)

    g = sub.add_parser("gen-data", parents=[shared], help="write a procedural training corpus")
    g.add_argument("--objects", type=int, required=True)
    g.add_argument("--views", type=int, choices=(6, 10), default=10)
    g.add_argument("--out", required=True)

    t = sub.add_parser("train", parents=[shared], help="train the estimator or the refiner")
    t.add_argument("model", choices=("estimator", "refiner"))
    t.add_argument("--data", required=True, help="dataset directory or manifest")
    t.add_argument("--out", default="model.ckpt")
    t.add_argument("--steps", type=int)
    t.add_argument("--batch-size", dest="batch_size", type=int)
    t.add_argument("--lr", type=float)
    t.add_argument("--lambda-p", dest="lambda_p", type=float)
    t.add_argument("--lambda-2", dest="lambda_2", type=float)
    t.add_argument("--width", type=int)
    t.add_argument("--ckpt-every", dest="ckpt_every", type=int)
    t.add_argument("--heads", type=int, choices=(1, 3), default=3)
    t.add_argument("--no-confidence", action="store_true", help="drop the confidence channel")
    t.add_argument("--overfit", type=int, default=0, help="train on the first N samples only")
    t.add_argument("--resume", help="continue from a checkpoint")

    pa = sub.add_parser("paint", parents=[shared], help="paint materials onto a mesh")
    pa.add_argument("--mesh", required=True, help="OBJ path or primitive name (sphere, cube, ...)")
    pa.add_argument("--scenario", default="generated", choices=("realistic", "lightfree", "generated"))
    pa.add_argument("--tag", default="plastic")
    pa.add_argument("--views", type=int, choices=(6, 10), default=6)
    pa.add_argument("--estimator")
    pa.add_argument("--refiner")
    pa.add_argument("--no-refiner", action="store_true")
    pa.add_argument("--textures", help="material stem of existing UV textures")
    pa.add_argument("--steps", dest="sampler_steps", type=int)
    pa.add_argument("--out", required=True)

    r = sub.add_parser("relight", parents=[shared], help="render painted materials under a lighting rig")
    r.add_argument("--mesh", required=True)
    r.add_argument("--materials", required=True, help="material stem (e.g. out/uv)")
    r.add_argument("--rig", default="front")
    r.add_argument("--rig-file")
    r.add_argument("--azimuth", type=float, default=0.0)
    r.add_argument("--elevation", type=float, default=20.0)
    r.add_argument("--out", required=True)

    e = sub.add_parser("eval", parents=[shared], help="per-material RMSE between predictions and ground truth")
    e.add_argument("--pred", required=True)
    e.add_argument("--gt", required=True)

    v = sub.add_parser("verify", parents=[shared], help="run the invariant battery")
    v.add_argument("--quick", action="store_true")
    return p


COMMANDS = {"gen-data": cmd_gen_data, "train": cmd_train, "paint": cmd_paint, "relight": cmd_relight,
            "eval": cmd_eval, "verify": cmd_verify}
CONFIG_FLAGS = ("seed", "threads", "image_res", "uv_res", "steps", "batch_size", "lr", "lambda_p", "lambda_2",
                "width", "ckpt_every", "sampler_steps")


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as e:
        return EXIT_OK if e.code == 0 else EXIT_USAGE
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, stream=sys.stderr,
                        format="%(levelname)s\t%(name)s\t%(message)s")
    try:
        file_values = {}
        if args.config:
            path = Path(args.config)
            if not path.is_file():
                raise UsageError(f"config file not found: {path}")
            file_values = parse_config_text(path.read_text(), str(path))
        cfg = make_config(file_values, {k: getattr(args, k, None) for k in CONFIG_FLAGS})
        torch.set_num_threads(cfg.threads)
        print_config(cfg)
        return COMMANDS[args.command](args, cfg)
    except UsageError as e:
        print(f"error\t{e}", file=sys.stderr)
        return EXIT_USAGE
    except OSError as e:
        print(f"error\t{e}", file=sys.stderr)
        return EXIT_USAGE


if __name__ == "__main__":
    sys.exit(main())
