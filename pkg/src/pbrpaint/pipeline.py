"""Progressive multi-view material painting and UV-space refinement.

Views are painted in rig order. Each view starts its sampler from the
materials already baked by earlier views (known-region latent blending),
with the confidence channel set by the job's lighting scenario. Results are
baked winner-take-all into the atlas, and remaining holes are completed by
the UV refiner or by pull-push filling.
"""
from __future__ import annotations

import logging
import time
from dataclasses import dataclass, field
from typing import Optional, Sequence

import numpy as np
import torch
from scipy import ndimage

from .dataset import TAG_TABLE, TAGS, value_noise
from .diffusion.model import Denoiser, ESTIMATOR_COND
from .diffusion.sampler import sample
from .diffusion.schedule import NoiseSchedule, add_noise, materials_to_model
from .diffusion.train import estimator_condition, refiner_condition
from .geometry.bake import BakeState, bake_view_to_uv, hole_fraction, project_known, pullpush_fill
from .geometry.camera import Camera
from .geometry.mesh import Mesh
from .geometry.raster import GBuffer, UVMaps, rasterize_gbuffer, rasterize_uv, uv_to_pixel
from .material import DimensionError, LightingScenario, MaterialSet, assert_valid, assign_confidence
from .shading import LightCategory, LightingRig, materials_from_atlas, render_image, sample_lighting

log = logging.getLogger(__name__)

FEATHER_TEXELS = 2
CONSISTENCY_UV_RES = 32


class PaintError(RuntimeError):
    """A pipeline stage failed; ``partial`` keeps whatever was produced so far."""

    def __init__(self, stage: str, message: str, partial: Optional[dict] = None):
        super().__init__(f"{stage}: {message}")
        self.stage = stage
        self.partial = partial or {}


@dataclass
class PaintJob:
    mesh: Mesh
    scenario: LightingScenario
    tag_id: int
    cameras: list[Camera]
    images: list[np.ndarray]
    n_steps: int = 50
    uv_res: int = 128
    seed: int = 0
    known_init: bool = True  # blend known materials into the sampler latent
    dynamic_confidence: bool = True  # generated lighting: confidence = known mask
    notes: list[str] = field(default_factory=list)

    def __post_init__(self):
        if len(self.images) != len(self.cameras):
            raise DimensionError(f"{len(self.images)} input images for {len(self.cameras)} cameras")
        self.scenario = LightingScenario.parse(self.scenario) if isinstance(self.scenario, str) else self.scenario


@dataclass
class ViewRecord:
    index: int
    gbuf: GBuffer
    image: np.ndarray  # conditioning image v_i
    confidence: np.ndarray  # m
    known: np.ndarray  # m-hat
    materials: MaterialSet


@dataclass
class PaintReport:
    known_fraction: list[float] = field(default_factory=list)
    bake_hole_fraction: float = 1.0
    final_hole_fraction: float = 1.0
    consistency: Optional[float] = None
    refiner: str = "pullpush"
    notes: list[str] = field(default_factory=list)
    seconds: float = 0.0

    def to_tsv(self) -> str:
        rows = [("metric", "value")]
        rows += [(f"known_fraction_view{i}", f"{k:.6f}") for i, k in enumerate(self.known_fraction)]
        rows += [("bake_hole_fraction", f"{self.bake_hole_fraction:.6f}"),
                 ("final_hole_fraction", f"{self.final_hole_fraction:.6f}"),
                 ("consistency", "absent" if self.consistency is None else f"{self.consistency:.6f}"),
                 ("completion", self.refiner), ("seconds", f"{self.seconds:.2f}")]
        rows += [("note", n) for n in self.notes]
        return "".join(f"{a}\t{b}\n" for a, b in rows)


# --- input images ----------------------------------------------------------

def tag_texture(tag: str, uv_res: int, rng: np.random.Generator) -> MaterialSet:
    """Palette-and-noise texture standing in for a generated texture."""
    if tag not in TAG_TABLE:
        raise ValueError(f"unknown tag {tag!r}; expected one of {', '.join(TAGS)}")
    colors, (r_lo, r_hi), p_metal = TAG_TABLE[tag]
    pal = np.asarray(colors, np.float64)
    noise = value_noise((uv_res, uv_res), int(rng.integers(3, 7)), rng, octaves=2)
    # blend between palette entries along the noise value
    pos = noise * (len(pal) - 1)
    lo = np.floor(pos).astype(int)
    hi = np.minimum(lo + 1, len(pal) - 1)
    frac = (pos - lo)[..., None]
    albedo = pal[lo] * (1 - frac) + pal[hi] * frac
    rough = np.full((uv_res, uv_res), 0.5 * (r_lo + r_hi))
    metal = np.full((uv_res, uv_res), 0.95 if p_metal > 0.5 else 0.0)
    bump = np.broadcast_to(np.array([0.5, 0.5, 1.0]), (uv_res, uv_res, 3))
    return MaterialSet(albedo.astype(np.float32), rough.astype(np.float32), metal.astype(np.float32),
                       bump.astype(np.float32).copy())


def coarse_texture(mesh: Mesh, tag: str, cameras: Sequence[Camera], seed: int = 0,
                   uv_res: int = 128) -> list[np.ndarray]:
    """Per-view renders of a tag-coloured procedural texture, each lit by its own point rig.

    Independent per-view lighting mimics the inconsistent highlights and
    shadows of images produced by a texture generator.
    """
    rng = np.random.default_rng([seed, TAGS.index(tag) if tag in TAGS else len(TAGS)])
    tex = tag_texture(tag, uv_res, rng)
    images = []
    for cam in cameras:
        gbuf = rasterize_gbuffer(mesh, cam)
        rig = sample_lighting(LightCategory.POINT, rng, toward=cam.position)
        images.append(render_image(gbuf, materials_from_atlas(tex, gbuf), rig))
    return images


def render_inputs(mesh: Mesh, uv_materials: MaterialSet, cameras: Sequence[Camera],
                  scenario: LightingScenario, seed: int = 0) -> list[np.ndarray]:
    """Input images for a textured mesh under the scenario's lighting.

    Realistic: one world-fixed rig shared by all views. Light-free: albedo
    only. Generated: an independent point rig per view.
    """
    rng = np.random.default_rng(seed)
    shared = sample_lighting(LightCategory.POINT, rng)
    images = []
    for cam in cameras:
        gbuf = rasterize_gbuffer(mesh, cam)
        mats = materials_from_atlas(uv_materials, gbuf)
        if scenario is LightingScenario.REALISTIC:
            rig = shared
        elif scenario is LightingScenario.LIGHT_FREE:
            rig = LightingRig.none()
        else:
            rig = sample_lighting(LightCategory.POINT, rng, toward=cam.position)
        images.append(render_image(gbuf, mats, rig))
    return images


# --- the per-view step -----------------------------------------------------

def latent_blend(z_hat: torch.Tensor, z_known: torch.Tensor, known: torch.Tensor) -> torch.Tensor:
    """``z_hat * (1 - m) + z_known * m`` with a binary ``m`` broadcast over channels.

    Implemented as a selection so that both limits are bit-exact.
    """
    z_hat, z_known = torch.as_tensor(z_hat), torch.as_tensor(z_known)
    if z_hat.shape != z_known.shape:
        raise DimensionError(f"latents {tuple(z_hat.shape)} vs {tuple(z_known.shape)}")
    m = torch.as_tensor(known)
    if tuple(m.shape) != tuple(z_hat.shape[-2:]):
        raise DimensionError(f"mask {tuple(m.shape)} vs latent {tuple(z_hat.shape)}")
    if m.dtype != torch.bool:
        if not torch.all((m == 0) | (m == 1)):
            raise ValueError("known mask must be binary")
        m = m > 0.5
    return torch.where(m, z_known, z_hat)


def confidence_for(job: PaintJob, known: np.ndarray) -> np.ndarray:
    if job.scenario is LightingScenario.GENERATED and not job.dynamic_confidence:
        return np.ones_like(known, dtype=np.float32)
    return assign_confidence(job.scenario, known_mask=known, shape=known.shape)


def check_view_record(job: PaintJob, rec: ViewRecord):
    cov = rec.gbuf.coverage
    if np.any((rec.known > 0) & ~cov):
        raise PaintError("paint_view", f"view {rec.index}: known mask leaves the coverage")
    if job.scenario is LightingScenario.REALISTIC and not np.all(rec.confidence[cov] == 1):
        raise PaintError("paint_view", f"view {rec.index}: realistic confidence must be 1 on coverage")
    if job.scenario is LightingScenario.LIGHT_FREE and np.any(rec.confidence != 0):
        raise PaintError("paint_view", f"view {rec.index}: light-free confidence must be 0")
    if (job.scenario is LightingScenario.GENERATED and job.dynamic_confidence
            and not np.array_equal(rec.confidence, rec.known)):
        raise PaintError("paint_view", f"view {rec.index}: generated confidence must equal the known mask")


def known_override(known_materials: MaterialSet, known: np.ndarray, sched: NoiseSchedule,
                   rng: np.random.Generator, trace: Optional[list] = None):
    """Sampler hook that replaces known pixels by the known materials noised to the current step."""
    x_known = materials_to_model(known_materials)
    mask = torch.as_tensor(known > 0.5)

    def override(z: torch.Tensor, t: int) -> torch.Tensor:
        eps = torch.as_tensor(rng.standard_normal(tuple(z.shape)), dtype=z.dtype)
        z_known = add_noise(x_known.to(z.dtype), eps, t, sched)
        out = latent_blend(z, z_known, mask)
        if trace is not None:
            trace.append((t, z_known, out))
        return out

    return override


def paint_view(job: PaintJob, view_idx: int, bake: BakeState, model: Denoiser, sched: NoiseSchedule,
               rng: np.random.Generator, trace: Optional[list] = None) -> ViewRecord:
    cam = job.cameras[view_idx]
    gbuf = rasterize_gbuffer(job.mesh, cam)
    known_mats, known = project_known(job.mesh, bake, cam, gbuf=gbuf)
    conf = confidence_for(job, known)
    use_conf = model.config.cond_channels == ESTIMATOR_COND
    cond = estimator_condition(job.images[view_idx], conf, gbuf.normal_map(), use_conf)
    override = None
    if job.known_init and known.any():
        override = known_override(known_mats, known, sched, np.random.default_rng([job.seed, view_idx, 1]), trace)
    try:
        mats = sample(model, cond, job.tag_id, sched, job.n_steps, rng, override)
    except Exception as e:  # surface the failing view
        raise PaintError("sample", f"view {view_idx}: {e}") from e
    rec = ViewRecord(view_idx, gbuf, job.images[view_idx], conf, known, mats)
    check_view_record(job, rec)
    return rec


# --- UV refinement ---------------------------------------------------------

def feather_band(hole: np.ndarray, width: int = FEATHER_TEXELS) -> np.ndarray:
    """Weight in [0, 1] for the pull-push fill: 1 on the hole rim, fading to 0 ``width`` texels inside."""
    if not hole.any():
        return np.zeros(hole.shape, np.float32)
    dist = ndimage.distance_transform_edt(hole)
    return np.clip((width + 1 - dist) / (width + 1), 0.0, 1.0).astype(np.float32) * hole


def refine_uv(coarse: MaterialSet, hole: np.ndarray, ccm: np.ndarray, occupancy: np.ndarray,
              model_ref: Optional[Denoiser], sched: NoiseSchedule, rng: np.random.Generator,
              n_steps: int = 50) -> MaterialSet:
    """Complete ``hole`` texels; every other occupied texel is returned unchanged.

    The refiner samples conditioned on the masked maps, hole mask and CCM,
    with the known texels blended into its latent at every step. Inside the
    holes a thin rim is cross-faded with the pull-push fill so refined
    texels meet their known neighbours smoothly. Without a refiner the
    pull-push fill is used directly.
    """
    hole = hole & occupancy
    known = occupancy & ~hole
    base = coarse.stack().copy()
    base[~occupancy] = 0.0
    base[hole] = 0.0
    masked = MaterialSet.from_stack(base)
    if not hole.any():
        return masked
    R = hole.shape[0]
    uvmaps = UVMaps(np.zeros((R, R, 3)), np.zeros((R, R, 3)), ccm, occupancy, np.zeros((R, R), int), 0)
    fill = pullpush_fill(BakeState(masked, known.astype(np.float32), uvmaps)).stack()
    if model_ref is None:
        out = fill
    else:
        cond = refiner_condition(masked, hole, ccm)
        override = known_override(masked, known.astype(np.float32), sched, np.random.default_rng(rng.integers(2**63)))
        refined = sample(model_ref, cond, 0, sched, n_steps, rng, override).stack()
        w = feather_band(hole)[..., None]
        out = refined * (1.0 - w) + fill * w
    out = np.where(hole[..., None], out, base)
    out[~occupancy] = 0.0
    return assert_valid(MaterialSet.from_stack(np.clip(out, 0.0, 1.0).astype(np.float32)), "refine_uv")


# --- consistency -----------------------------------------------------------

def consistency_metric(views: Sequence[ViewRecord], uv_res: int = CONSISTENCY_UV_RES,
                       per_channel: bool = False):
    """Mean per-channel population standard deviation across views at shared texels.

    Each view's covered pixels are binned to their nearest texel of a
    ``uv_res`` grid (averaging pixels that share a texel). Texels seen by at
    least two views contribute. Returns ``None`` when no texel is shared.
    """
    if len(views) < 2:
        raise ValueError("consistency needs at least two views")
    n_tex = uv_res * uv_res
    sums = np.zeros((len(views), n_tex, 8))
    counts = np.zeros((len(views), n_tex))
    for k, rec in enumerate(views):
        cov = rec.gbuf.coverage
        xy = uv_to_pixel(rec.gbuf.uv[cov].astype(np.float64), uv_res)
        col = np.clip(np.floor(xy[:, 0]).astype(int), 0, uv_res - 1)
        row = np.clip(np.floor(xy[:, 1]).astype(int), 0, uv_res - 1)
        idx = row * uv_res + col
        vals = rec.materials.stack()[cov].astype(np.float64)
        np.add.at(sums[k], idx, vals)
        np.add.at(counts[k], idx, 1.0)
    seen = counts > 0
    shared = seen.sum(0) >= 2
    if not shared.any():
        return None
    means = np.where(seen[..., None], sums / np.maximum(counts, 1)[..., None], 0.0)
    w = seen[:, shared].astype(np.float64)[..., None]
    m = means[:, shared]
    n = w.sum(0)
    mu = (m * w).sum(0) / n
    var = (((m - mu) ** 2) * w).sum(0) / n
    std = np.sqrt(var)  # (texels, 8)
    channel = std.mean(0)
    return channel if per_channel else float(channel.mean())


# --- the full loop ---------------------------------------------------------

def paint_object(job: PaintJob, model_est: Denoiser, model_ref: Optional[Denoiser], sched: NoiseSchedule,
                 refine_steps: Optional[int] = None) -> tuple[MaterialSet, PaintReport, list[ViewRecord]]:
    t0 = time.perf_counter()
    report = PaintReport(notes=list(job.notes))
    uvmaps = rasterize_uv(job.mesh, job.uv_res)
    bake = BakeState.empty(job.mesh, job.uv_res, uvmaps)
    records: list[ViewRecord] = []
    rng = np.random.default_rng(job.seed)
    for i in range(len(job.cameras)):
        try:
            rec = paint_view(job, i, bake, model_est, sched, rng)
            bake = bake_view_to_uv(rec.materials, rec.gbuf, bake)
        except PaintError as e:
            e.partial.update(bake=bake, records=records, report=report)
            raise
        except Exception as e:
            raise PaintError("bake", f"view {i}: {e}", dict(bake=bake, records=records, report=report)) from e
        records.append(rec)
        report.known_fraction.append(bake.known_fraction())
        log.info("view %d: known fraction %.3f", i, report.known_fraction[-1])
    occ = uvmaps.occupancy
    report.bake_hole_fraction = hole_fraction(bake.known, occ)
    try:
        final = refine_uv(bake.materials, bake.hole_mask(), uvmaps.ccm, occ, model_ref, sched,
                          np.random.default_rng([job.seed, 7]), refine_steps or job.n_steps)
    except Exception as e:
        raise PaintError("refine", str(e), dict(bake=bake, records=records, report=report)) from e
    report.refiner = "refiner" if model_ref is not None else "pullpush"
    filled = occ.copy()  # refine_uv writes every occupied texel
    report.final_hole_fraction = hole_fraction(filled, occ)
    report.consistency = consistency_metric(records) if len(records) > 1 else None
    report.seconds = time.perf_counter() - t0
    return final, report, records
