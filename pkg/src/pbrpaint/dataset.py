"""Procedural training corpus.

Objects are primitive meshes carrying patterned UV materials drawn from a
small tag vocabulary. Each camera view yields ground-truth material images,
a normal map, an unlit albedo render and eight lit renders (4 point, 2 area,
2 environment). Estimator inputs are stitched from two renders with a
degraded rectangle; refiner inputs are UV maps with punched holes.
"""
from __future__ import annotations

import logging
import math
import os
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path
from typing import Optional, Sequence

import numpy as np
from scipy import ndimage

from .geometry.camera import Camera, camera_ring
from .geometry.mesh import PRIMITIVES, Mesh, load_mesh, save_obj
from .geometry.raster import GBuffer, UVMaps, rasterize_gbuffer, rasterize_uv
from .imageio import load_material_set, read_pfm, save_material_set, write_pfm
from .material import FLAT_BUMP, LightingScenario, MaterialSet, assert_valid
from .shading import LightCategory, LightingRig, materials_from_atlas, render_image, sample_lighting

log = logging.getLogger(__name__)

TAGS = ("metal", "gold", "copper", "wood", "plastic", "stone",
        "fabric", "ceramic", "leather", "rubber", "marble", "concrete")
TAG_IDS = {t: i for i, t in enumerate(TAGS)}
SHAPES = ("sphere", "cube", "cylinder", "torus")
PATTERNS = ("uniform", "stripes", "checker", "noise")
PATTERN_P = (0.15, 0.3, 0.25, 0.3)

# per tag: base colors (linear RGB), roughness range, probability a region is metallic
TAG_TABLE = {
    "metal": ([(0.56, 0.57, 0.58), (0.75, 0.75, 0.77), (0.35, 0.36, 0.40)], (0.25, 0.5), 0.85),
    "gold": ([(1.0, 0.77, 0.34), (0.9, 0.65, 0.25)], (0.25, 0.45), 0.85),
    "copper": ([(0.95, 0.64, 0.54), (0.7, 0.35, 0.22)], (0.25, 0.5), 0.85),
    "wood": ([(0.45, 0.28, 0.14), (0.62, 0.42, 0.22), (0.3, 0.18, 0.08)], (0.55, 0.85), 0.0),
    "plastic": ([(0.8, 0.1, 0.1), (0.1, 0.3, 0.8), (0.1, 0.7, 0.2), (0.9, 0.8, 0.1)], (0.3, 0.6), 0.05),
    "stone": ([(0.4, 0.4, 0.38), (0.55, 0.52, 0.48), (0.3, 0.3, 0.32)], (0.7, 1.0), 0.0),
    "fabric": ([(0.6, 0.15, 0.3), (0.2, 0.25, 0.5), (0.7, 0.65, 0.55)], (0.8, 1.0), 0.0),
    "ceramic": ([(0.9, 0.9, 0.88), (0.2, 0.35, 0.7), (0.85, 0.8, 0.7)], (0.25, 0.4), 0.0),
    "leather": ([(0.35, 0.2, 0.1), (0.15, 0.1, 0.08), (0.5, 0.3, 0.2)], (0.5, 0.75), 0.0),
    "rubber": ([(0.08, 0.08, 0.08), (0.2, 0.2, 0.22), (0.5, 0.1, 0.1)], (0.7, 0.95), 0.0),
    "marble": ([(0.92, 0.92, 0.9), (0.75, 0.75, 0.73), (0.9, 0.85, 0.8)], (0.25, 0.4), 0.0),
    "concrete": ([(0.5, 0.5, 0.48), (0.62, 0.6, 0.57)], (0.8, 1.0), 0.0),
}

GT_UV_RES = 128
LIT_SPLIT = (("point", LightCategory.POINT, 4), ("area", LightCategory.AREA, 2), ("env", LightCategory.ENVIRONMENT, 2))
RENDER_NAMES = ("none",) + tuple(f"{p}{i}" for p, _, n in LIT_SPLIT for i in range(n))
LIT_NAMES = RENDER_NAMES[1:]
MAP_NAMES = ("albedo", "roughness", "metallic", "bump", "normal")


def value_noise(shape: tuple[int, int], freq: int, rng: np.random.Generator, octaves: int = 1) -> np.ndarray:
    """Smooth periodic noise in [0, 1] on a ``shape`` grid (cubic lattice interpolation)."""
    H, W = shape
    out = np.zeros(shape)
    amp, total = 1.0, 0.0
    for o in range(octaves):
        f = freq * 2 ** o
        lattice = rng.random((f, f))
        tiled = np.tile(lattice, (3, 3))
        zoom = ndimage.zoom(tiled, (H / f, W / f), order=3, mode="grid-wrap", grid_mode=True)
        out += amp * zoom[H:2 * H, W:2 * W]
        total += amp
        amp *= 0.5
    out /= total
    lo, hi = out.min(), out.max()
    return (out - lo) / (hi - lo) if hi > lo else np.full(shape, 0.5)


def height_to_bump(height: np.ndarray, strength: float) -> np.ndarray:
    """Tangent-space normal map (encoded to [0, 1]) from a height field over UV."""
    gy, gx = np.gradient(height)
    # rows run toward -v, so d/dv = -d/drow
    n = np.stack([-strength * gx, strength * gy, np.ones_like(height)], -1)
    n /= np.linalg.norm(n, axis=-1, keepdims=True)
    return (0.5 * n + 0.5).astype(np.float32)


@dataclass
class Region:
    albedo: tuple
    roughness: float
    metallic: float
    bump_strength: float


@dataclass
class ProceduralObject:
    mesh: Mesh
    materials: MaterialSet  # GT in UV space
    tag: str
    shape: str
    pattern: str
    regions: list[Region]
    uvmaps: UVMaps
    seed: Optional[int] = None

    @property
    def tag_id(self) -> int:
        return TAG_IDS[self.tag]


def _region_map(pattern: str, n: int, res: int, rng: np.random.Generator) -> np.ndarray:
    v, u = np.meshgrid((np.arange(res)[::-1] + 0.5) / res, (np.arange(res) + 0.5) / res, indexing="ij")
    if pattern == "uniform" or n == 1:
        return np.zeros((res, res), np.int64)
    if pattern == "stripes":
        f = int(rng.integers(2, 7))
        coord = u if rng.random() < 0.5 else v
        return (np.floor(coord * f * n).astype(np.int64)) % n
    if pattern == "checker":
        f = int(rng.integers(2, 6))
        return (np.floor(u * f).astype(np.int64) + np.floor(v * f).astype(np.int64)) % n
    field_ = value_noise((res, res), int(rng.integers(2, 5)), rng)
    edges = np.quantile(field_, np.linspace(0, 1, n + 1)[1:-1])
    return np.digitize(field_, edges)


def _draw_region(tag: str, rng: np.random.Generator) -> Region:
    colors, (r_lo, r_hi), p_metal = TAG_TABLE[tag]
    base = np.asarray(colors[int(rng.integers(len(colors)))])
    albedo = np.clip(base * rng.uniform(0.85, 1.15, 3), 0.02, 0.98)
    metallic = float(rng.uniform(0.9, 1.0) if rng.random() < p_metal else rng.uniform(0.0, 0.1))
    strength = float(rng.choice([0.0, rng.uniform(2.0, 8.0)]))
    return Region(tuple(float(x) for x in albedo), float(rng.uniform(r_lo, r_hi)), metallic, strength)


def gen_object(rng: np.random.Generator, uv_res: int = GT_UV_RES, shape: Optional[str] = None,
               tag: Optional[str] = None) -> ProceduralObject:
    """Draw one procedural object; a pure function of the generator state."""
    shape = shape or SHAPES[int(rng.integers(len(SHAPES)))]
    tag = tag or TAGS[int(rng.integers(len(TAGS)))]
    pattern = PATTERNS[int(rng.choice(len(PATTERNS), p=PATTERN_P))]
    n = 1 if pattern == "uniform" else int(rng.integers(2, 4))
    regions = [_draw_region(tag, rng) for _ in range(n)]
    # guarantee visually distinct neighbours when the palette collides
    for k in range(1, n):
        if np.abs(np.subtract(regions[k].albedo, regions[k - 1].albedo)).max() < 0.05:
            regions[k].albedo = tuple(float(np.clip(1.0 - x, 0.02, 0.98)) for x in regions[k].albedo)
    rmap = _region_map(pattern, n, uv_res, rng)
    detail = value_noise((uv_res, uv_res), 8, rng, octaves=2)
    height = value_noise((uv_res, uv_res), int(rng.integers(4, 12)), rng)

    alb = np.asarray([r.albedo for r in regions])[rmap]
    alb = np.clip(alb * (0.9 + 0.2 * detail[..., None]), 0.0, 1.0)
    rough = np.asarray([r.roughness for r in regions])[rmap]
    metal = np.asarray([r.metallic for r in regions])[rmap]
    strength = np.asarray([r.bump_strength for r in regions])[rmap]
    bump = height_to_bump(height, 1.0)
    flat = np.asarray(FLAT_BUMP)
    # per-region strength: blend the unit-strength map toward flat
    bump = flat + (bump - flat) * np.clip(strength[..., None] / 8.0, 0.0, 1.0)
    bump[..., :2] = np.clip(bump[..., :2], 0.0, 1.0)
    nrm = 2 * bump - 1
    nrm /= np.linalg.norm(nrm, axis=-1, keepdims=True)
    bump = 0.5 * nrm + 0.5
    bump[strength == 0] = flat

    mats = MaterialSet(alb.astype(np.float32), rough.astype(np.float32), metal.astype(np.float32),
                       bump.astype(np.float32))
    assert_valid(mats, "gen_object")
    mesh = PRIMITIVES[shape]()
    return ProceduralObject(mesh, mats, tag, shape, pattern, regions, rasterize_uv(mesh, uv_res))


# --- degradations and stitching -------------------------------------------

def gaussian_blur(img: np.ndarray, sigma: float) -> np.ndarray:
    sig = (sigma, sigma) + (0,) * (img.ndim - 2)
    return ndimage.gaussian_filter(img, sig, mode="nearest")


def color_shift(img: np.ndarray, factors) -> np.ndarray:
    return img * np.asarray(factors, img.dtype)


def add_noise(img: np.ndarray, sigma: float, rng: np.random.Generator) -> np.ndarray:
    return img + rng.normal(0.0, sigma, img.shape).astype(img.dtype)


DEGRADATIONS = ("blur", "color", "noise")


def draw_degradation(rng: np.random.Generator, n_channels: int = 3) -> list[tuple[str, object]]:
    k = int(rng.integers(1, 3))
    ops = rng.choice(len(DEGRADATIONS), size=k, replace=False)
    plan = []
    for i in sorted(ops):
        name = DEGRADATIONS[i]
        if name == "blur":
            plan.append((name, float(rng.uniform(0.5, 2.0))))
        elif name == "color":
            plan.append((name, rng.uniform(0.7, 1.3, n_channels)))
        else:
            plan.append((name, float(rng.uniform(0.0, 0.03))))
    return plan


def apply_degradation(img: np.ndarray, plan, rng: np.random.Generator) -> np.ndarray:
    out = np.asarray(img, np.float32)
    for name, p in plan:
        if name == "blur":
            out = gaussian_blur(out, p)
        elif name == "color":
            out = color_shift(out, p)
        else:
            out = add_noise(out, p, rng)
    return np.clip(out, 0.0, 1.0).astype(np.float32)


def degrade(img: np.ndarray, rng: np.random.Generator) -> np.ndarray:
    """One or two of: Gaussian blur, per-channel colour shift, additive noise; clamped to [0, 1]."""
    nch = img.shape[-1] if img.ndim == 3 else 1
    return apply_degradation(img, draw_degradation(rng, nch if img.ndim == 3 else 1), rng)


def random_rectangle(shape: tuple[int, int], fraction: float, rng: np.random.Generator) -> np.ndarray:
    H, W = shape
    mask = np.zeros(shape, bool)
    if fraction <= 0:
        return mask
    if fraction >= 1:
        mask[:] = True
        return mask
    aspect = math.exp(rng.uniform(math.log(0.5), math.log(2.0)))
    h = int(round(min(H, max(1.0, math.sqrt(fraction * H * W / aspect)))))
    w = int(round(min(W, max(1.0, fraction * H * W / h))))
    y = int(rng.integers(0, H - h + 1))
    x = int(rng.integers(0, W - w + 1))
    mask[y:y + h, x:x + w] = True
    return mask


def compose_inconsistent(img_a: np.ndarray, img_b: np.ndarray, rng: np.random.Generator,
                         fraction: Optional[float] = None) -> tuple[np.ndarray, np.ndarray]:
    """Stitch a degraded rectangle of ``img_b`` into the trusted ``img_a``.

    Returns ``(composite, confidence)`` with confidence 1 outside the
    rectangle and 0 inside.
    """
    if img_a.shape != img_b.shape:
        raise ValueError(f"image shapes differ: {img_a.shape} vs {img_b.shape}")
    if fraction is None:
        fraction = float(rng.uniform(0.2, 0.6))
    rect = random_rectangle(img_a.shape[:2], fraction, rng)
    out = np.array(img_a, np.float32, copy=True)
    if rect.any():
        bad = degrade(img_b, rng)
        out[rect] = bad[rect]
    return out, (~rect).astype(np.float32)


# --- per-view rendering ----------------------------------------------------

@dataclass
class ViewData:
    gbuf: GBuffer
    gt: MaterialSet
    renders: dict[str, np.ndarray]
    rigs: dict[str, LightingRig]
    tag_id: int = 0

    @property
    def normal_map(self) -> np.ndarray:
        return self.gbuf.normal_map()

    def images(self) -> dict[str, np.ndarray]:
        """The 13 per-view images: five maps and eight lit renders."""
        imgs = {"albedo": self.gt.albedo, "roughness": self.gt.roughness, "metallic": self.gt.metallic,
                "bump": self.gt.bump, "normal": self.normal_map}
        imgs.update({k: self.renders[k] for k in LIT_NAMES})
        return imgs


def view_ground_truth(obj: ProceduralObject, gbuf: GBuffer) -> MaterialSet:
    return materials_from_atlas(obj.materials, gbuf)


def render_views(obj: ProceduralObject, cameras: Sequence[Camera], rng: np.random.Generator) -> list[ViewData]:
    views = []
    for cam in cameras:
        gbuf = rasterize_gbuffer(obj.mesh, cam)
        gt = view_ground_truth(obj, gbuf)
        renders = {"none": render_image(gbuf, gt, LightingRig.none())}
        rigs = {"none": LightingRig.none()}
        for prefix, cat, count in LIT_SPLIT:
            for i in range(count):
                rig = sample_lighting(cat, rng, toward=cam.position)
                rigs[f"{prefix}{i}"] = rig
                renders[f"{prefix}{i}"] = render_image(gbuf, gt, rig)
        views.append(ViewData(gbuf, gt, renders, rigs, obj.tag_id))
    return views


@dataclass
class TrainingSample:
    image: np.ndarray  # (H, W, 3) conditioning image
    confidence: np.ndarray  # (H, W) binary
    normal: np.ndarray  # (H, W, 3) encoded camera-space normals
    tag_id: int
    gt: MaterialSet
    gbuf: GBuffer
    scenario: LightingScenario
    rigs: tuple[str, str] = ("", "")


def _category(name: str) -> str:
    return name.rstrip("0123456789")


def make_training_sample(view: ViewData, rng: np.random.Generator,
                         scenario: Optional[LightingScenario] = None) -> TrainingSample:
    """Assemble estimator input for one view.

    Realistic: a clean lit render, confidence 1. Light-free: the albedo
    render, confidence 0. Generated: a lit render with a degraded rectangle
    from a render under a different lighting category, confidence 0 inside.
    """
    if scenario is None:
        scenario = list(LightingScenario)[int(rng.integers(3))]
    shape = view.gbuf.shape
    if scenario is LightingScenario.REALISTIC:
        a = LIT_NAMES[int(rng.integers(len(LIT_NAMES)))]
        image, conf, rigs = view.renders[a], np.ones(shape, np.float32), (a, a)
    elif scenario is LightingScenario.LIGHT_FREE:
        image, conf, rigs = view.renders["none"], np.zeros(shape, np.float32), ("none", "none")
    else:
        a = LIT_NAMES[int(rng.integers(len(LIT_NAMES)))]
        others = [n for n in RENDER_NAMES if _category(n) != _category(a)]
        b = others[int(rng.integers(len(others)))]
        image, conf = compose_inconsistent(view.renders[a], view.renders[b], rng)
        rigs = (a, b)
    return TrainingSample(np.asarray(image, np.float32), conf, view.normal_map, view.tag_id, view.gt,
                          view.gbuf, scenario, rigs)


# --- refiner pairs ---------------------------------------------------------

@dataclass
class RefinerSample:
    inputs: MaterialSet
    hole: np.ndarray
    ccm: np.ndarray
    occupancy: np.ndarray
    gt: MaterialSet
    degraded: bool = False


def _blob_union(centers, radii, scale, res):
    yy, xx = np.mgrid[0:res, 0:res]
    m = np.zeros((res, res), bool)
    for (cy, cx), (ry, rx) in zip(centers, radii):
        m |= ((yy - cy) / (ry * scale)) ** 2 + ((xx - cx) / (rx * scale)) ** 2 <= 1.0
    return m


def make_refiner_pair(uv_gt: MaterialSet, ccm: np.ndarray, occupancy: np.ndarray, rng: np.random.Generator,
                      n_blobs: Optional[int] = None, p_degrade: float = 0.5) -> RefinerSample:
    """Punch 1-4 elliptical holes (5-30% of the occupied area) into a UV material set."""
    if not occupancy.any():
        raise ValueError("occupancy is empty")
    n_blobs = int(rng.integers(1, 5)) if n_blobs is None else n_blobs
    res = occupancy.shape[0]
    hole = np.zeros_like(occupancy)
    if n_blobs > 0:
        occ_idx = np.argwhere(occupancy)
        centers = occ_idx[rng.integers(len(occ_idx), size=n_blobs)]
        radii = rng.uniform(0.5, 1.5, (n_blobs, 2))
        target = float(rng.uniform(0.05, 0.3))
        n_occ = occupancy.sum()

        def frac(s):
            return (_blob_union(centers, radii, s, res) & occupancy).sum() / n_occ

        lo, hi = 0.0, float(res)
        for _ in range(40):
            mid = 0.5 * (lo + hi)
            if frac(mid) < target:
                lo = mid
            else:
                hi = mid
        # hi always meets the target; fall back to lo if hi overshoots the range
        s = hi if frac(hi) <= 0.3 else lo
        hole = _blob_union(centers, radii, s, res) & occupancy
    inputs = uv_gt.copy()
    degraded = False
    if n_blobs > 0 and rng.random() < p_degrade:
        inputs.albedo = degrade(inputs.albedo, rng)
        degraded = True
    stack = inputs.stack()
    stack[hole] = 0.0
    return RefinerSample(MaterialSet.from_stack(stack), hole, ccm, occupancy, uv_gt, degraded)


# --- corpus ----------------------------------------------------------------

@dataclass
class ObjectRecord:
    index: int
    obj: ProceduralObject
    views: list[ViewData]
    samples: list[TrainingSample] = field(default_factory=list)
    refiner: Optional[RefinerSample] = None


def object_rng(seed: int, index: int) -> np.random.Generator:
    return np.random.default_rng([seed, index])


def make_object_record(seed: int, index: int, cameras: Sequence[Camera], uv_res: int = GT_UV_RES) -> ObjectRecord:
    rng = object_rng(seed, index)
    obj = gen_object(rng, uv_res)
    obj.seed = seed
    views = render_views(obj, cameras, rng)
    samples = [make_training_sample(v, rng) for v in views]
    refiner = make_refiner_pair(obj.materials, obj.uvmaps.ccm, obj.uvmaps.occupancy, rng)
    return ObjectRecord(index, obj, views, samples, refiner)


def build_corpus(n_objects: int, cameras: Sequence[Camera], seed: int, threads: int = 1,
                 uv_res: int = GT_UV_RES, start: int = 0) -> list[ObjectRecord]:
    """In-memory corpus; object ``i`` depends only on ``(seed, i)``."""
    idx = range(start, start + n_objects)
    if threads > 1:
        with ThreadPoolExecutor(threads) as ex:
            return list(ex.map(lambda i: make_object_record(seed, i, cameras, uv_res), idx))
    return [make_object_record(seed, i, cameras, uv_res) for i in idx]


MANIFEST_NAME = "manifest.tsv"
MANIFEST_HEADER = "#sample_id\tkind\ttag\tscenario\tseed\tfiles\n"


def _write_view(d: Path, stem: str, view: ViewData, sample: TrainingSample) -> dict[str, str]:
    files = {}
    for k, p in save_material_set(d / f"{stem}_gt", view.gt).items():
        files[f"gt_{k}"] = p
    write_pfm(d / f"{stem}_normal.pfm", view.normal_map)
    files["normal"] = d / f"{stem}_normal.pfm"
    write_pfm(d / f"{stem}_input.pfm", sample.image)
    files["input"] = d / f"{stem}_input.pfm"
    write_pfm(d / f"{stem}_conf.pfm", sample.confidence)
    files["conf"] = d / f"{stem}_conf.pfm"
    for name in RENDER_NAMES:
        write_pfm(d / f"{stem}_render_{name}.pfm", view.renders[name])
        files[f"render_{name}"] = d / f"{stem}_render_{name}.pfm"
    rig_path = d / f"{stem}_rigs.txt"
    with open(rig_path, "w") as f:
        for name in RENDER_NAMES:
            f.write(f"[{name}]\n{view.rigs[name].to_text()}")
    files["rigs"] = rig_path
    gpath = d / f"{stem}_gbuffer.npz"
    np.savez_compressed(gpath, **view.gbuf.to_arrays())
    files["gbuffer"] = gpath
    return files


def build_dataset(n_objects: int, cameras: Sequence[Camera], out_dir, seed: int, threads: int = 1,
                  uv_res: int = GT_UV_RES) -> Path:
    """Write the corpus to ``out_dir`` and return the manifest path."""
    out_dir = Path(out_dir)
    try:
        out_dir.mkdir(parents=True, exist_ok=True)
        probe = out_dir / ".write_test"
        probe.write_text("")
        probe.unlink()
    except OSError as e:
        raise OSError(f"cannot write to {out_dir}: {e}") from e
    records = build_corpus(n_objects, cameras, seed, threads, uv_res)
    lines = [MANIFEST_HEADER]
    for rec in records:
        d = out_dir / f"obj{rec.index:04d}"
        d.mkdir(exist_ok=True)
        save_obj(d / "mesh.obj", rec.obj.mesh)
        for vi, (view, sample) in enumerate(zip(rec.views, rec.samples)):
            stem = f"v{vi:02d}"
            files = _write_view(d, stem, view, sample)
            files["mesh"] = d / "mesh.obj"
            rel = ";".join(f"{k}={os.path.relpath(p, out_dir)}" for k, p in files.items())
            sid = f"obj{rec.index:04d}_v{vi:02d}"
            lines.append(f"{sid}\testimator\t{rec.obj.tag}\t{sample.scenario.value}\t{seed}:{rec.index}\t{rel}\n")
        r = rec.refiner
        files = {}
        for k, p in save_material_set(d / "uv_gt", r.gt).items():
            files[f"gt_{k}"] = p
        for k, p in save_material_set(d / "uv_input", r.inputs).items():
            files[f"in_{k}"] = p
        write_pfm(d / "uv_hole.pfm", r.hole.astype(np.float32))
        write_pfm(d / "uv_ccm.pfm", r.ccm)
        write_pfm(d / "uv_occupancy.pfm", r.occupancy.astype(np.float32))
        files.update(hole=d / "uv_hole.pfm", ccm=d / "uv_ccm.pfm", occupancy=d / "uv_occupancy.pfm",
                     mesh=d / "mesh.obj")
        rel = ";".join(f"{k}={os.path.relpath(p, out_dir)}" for k, p in files.items())
        lines.append(f"obj{rec.index:04d}_uv\trefiner\t{rec.obj.tag}\t-\t{seed}:{rec.index}\t{rel}\n")
    manifest = out_dir / MANIFEST_NAME
    manifest.write_text("".join(lines))
    log.info("wrote %d objects to %s", len(records), out_dir)
    return manifest


@dataclass
class ManifestRecord:
    sample_id: str
    kind: str
    tag: str
    scenario: str
    seed: str
    files: dict[str, Path]


def read_manifest(path) -> list[ManifestRecord]:
    path = Path(path)
    root = path.parent
    out = []
    for line in path.read_text().splitlines():
        if not line.strip() or line.startswith("#"):
            continue
        sid, kind, tag, scen, seed, files = line.split("\t")
        fmap = {k: root / v for k, v in (kv.split("=", 1) for kv in files.split(";"))}
        out.append(ManifestRecord(sid, kind, tag, scen, seed, fmap))
    return out


def load_view(rec: ManifestRecord) -> ViewData:
    f = rec.files
    gbuf = GBuffer.from_arrays(np.load(f["gbuffer"]))
    stem = str(f["gt_albedo"])[: -len("_albedo.pfm")]
    gt = load_material_set(stem)
    renders = {name: read_pfm(f[f"render_{name}"]) for name in RENDER_NAMES}
    rigs = {}
    block, name = [], None
    for line in Path(f["rigs"]).read_text().splitlines() + ["[end]"]:
        if line.startswith("["):
            if name is not None:
                rigs[name] = LightingRig.from_text("\n".join(block))
            name, block = line.strip("[]"), []
        else:
            block.append(line)
    return ViewData(gbuf, gt, renders, rigs, TAG_IDS[rec.tag])


def load_training_sample(rec: ManifestRecord) -> TrainingSample:
    view = load_view(rec)
    return TrainingSample(read_pfm(rec.files["input"]), read_pfm(rec.files["conf"]), view.normal_map,
                          view.tag_id, view.gt, view.gbuf, LightingScenario.parse(rec.scenario))


def load_refiner_sample(rec: ManifestRecord) -> RefinerSample:
    f = rec.files
    gt = load_material_set(str(f["gt_albedo"])[: -len("_albedo.pfm")])
    inp = load_material_set(str(f["in_albedo"])[: -len("_albedo.pfm")])
    return RefinerSample(inp, read_pfm(f["hole"]) > 0.5, read_pfm(f["ccm"]), read_pfm(f["occupancy"]) > 0.5, gt)


def load_mesh_for(rec: ManifestRecord) -> Mesh:
    return load_mesh(rec.files["mesh"])


def default_cameras(n_views: int = 10, resolution: int = 64) -> list[Camera]:
    return camera_ring(n_views, resolution)
