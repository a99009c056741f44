"""Differentiable PBR shading of G-buffers.

Lambert diffuse plus a GGX / Smith / Schlick Cook-Torrance lobe, evaluated
in torch so the rendering loss can backpropagate into material maps. No
shadows or interreflection.
"""
from __future__ import annotations

import enum
import math
from dataclasses import dataclass, field
from typing import Optional

import numpy as np
import torch

from .geometry.camera import Camera
from .geometry.mesh import Mesh
from .geometry.raster import GBuffer, rasterize_gbuffer
from .material import MaterialSet

# irradiance scale per watt: P / (4 pi d^2) at the sampled 4-5 m radii keeps lit
# pixels in roughly [0, 4] linear, comparable to the environment strengths
WATT_SCALE = 1.0
MIN_ROUGHNESS = 0.03
DIELECTRIC_F0 = 0.04

POINT_POWER = (900.0, 2400.0)
AREA_POWER = (1000.0, 2000.0)
AREA_SIZE = (3.0, 10.0)
ENV_STRENGTH = (0.5, 3.0)
LIGHT_RADIUS = (4.0, 5.0)
MAX_POLAR_DEG = 60.0


class LightCategory(enum.Enum):
    POINT = "point"
    AREA = "area"
    ENVIRONMENT = "environment"
    NONE = "none"


@dataclass
class PointLight:
    position: np.ndarray
    power: float


@dataclass
class AreaLight:
    position: np.ndarray
    normal: np.ndarray  # emitting direction (toward the object)
    size: float
    power: float

    def corners(self) -> np.ndarray:
        n = self.normal / np.linalg.norm(self.normal)
        helper = np.array([0.0, 0.0, 1.0]) if abs(n[2]) < 0.9 else np.array([1.0, 0.0, 0.0])
        a = np.cross(n, helper)
        a /= np.linalg.norm(a)
        b = np.cross(n, a)
        h = 0.5 * self.size
        return np.stack([self.position + sa * h * a + sb * h * b for sa, sb in ((1, 1), (1, -1), (-1, 1), (-1, -1))])

    def as_points(self) -> list[PointLight]:
        return [PointLight(c, self.power / 4.0) for c in self.corners()]


@dataclass
class LightingRig:
    category: LightCategory
    points: list[PointLight] = field(default_factory=list)
    area: Optional[AreaLight] = None
    env_strength: float = 0.0
    # light-space polar angles (degrees) measured from the hemisphere pole
    polar_deg: list[float] = field(default_factory=list)

    @classmethod
    def none(cls) -> "LightingRig":
        return cls(LightCategory.NONE)

    def emitters(self) -> list[PointLight]:
        if self.category is LightCategory.POINT:
            return list(self.points)
        if self.category is LightCategory.AREA and self.area is not None:
            return self.area.as_points()
        return []

    def total_power(self) -> float:
        if self.category is LightCategory.AREA and self.area is not None:
            return self.area.power
        return float(sum(p.power for p in self.points))

    def satisfies_ranges(self, toward: Optional[np.ndarray] = None, tol: float = 1e-9) -> bool:
        """Check the sampling ranges. With ``toward`` the polar angles are
        recomputed from the light positions instead of the stored values."""
        def in_range(x, lo_hi):
            return lo_hi[0] - tol <= x <= lo_hi[1] + tol

        def polar_ok(pos, stored):
            if toward is None:
                return stored <= MAX_POLAR_DEG + tol
            pole = np.asarray(toward, np.float64)
            c = float(pos @ pole / (np.linalg.norm(pos) * np.linalg.norm(pole)))
            return math.degrees(math.acos(np.clip(c, -1.0, 1.0))) <= MAX_POLAR_DEG + 1e-6

        c = self.category
        if c is LightCategory.NONE:
            return not self.emitters() and self.env_strength == 0.0
        if c is LightCategory.ENVIRONMENT:
            return in_range(self.env_strength, ENV_STRENGTH) and not self.emitters()
        if c is LightCategory.POINT:
            if not 1 <= len(self.points) <= 3 or not in_range(self.total_power(), POINT_POWER):
                return False
            return all(in_range(float(np.linalg.norm(p.position)), LIGHT_RADIUS) and polar_ok(p.position, th)
                       for p, th in zip(self.points, self.polar_deg or [0.0] * len(self.points)))
        a = self.area
        return (a is not None and in_range(a.size, AREA_SIZE) and in_range(a.power, AREA_POWER)
                and in_range(float(np.linalg.norm(a.position)), LIGHT_RADIUS)
                and polar_ok(a.position, self.polar_deg[0] if self.polar_deg else 0.0))

    def scaled(self, factor: float) -> "LightingRig":
        pts = [PointLight(p.position.copy(), p.power * factor) for p in self.points]
        area = None
        if self.area is not None:
            area = AreaLight(self.area.position, self.area.normal, self.area.size, self.area.power * factor)
        return LightingRig(self.category, pts, area, self.env_strength * factor, list(self.polar_deg))

    def to_text(self) -> str:
        lines = [f"category={self.category.value}"]
        for i, p in enumerate(self.points):
            lines.append(f"point{i}.position={' '.join(repr(float(x)) for x in p.position)}")
            lines.append(f"point{i}.power={float(p.power)!r}")
        if self.area is not None:
            a = self.area
            lines.append(f"area.position={' '.join(repr(float(x)) for x in a.position)}")
            lines.append(f"area.normal={' '.join(repr(float(x)) for x in a.normal)}")
            lines.append(f"area.size={float(a.size)!r}")
            lines.append(f"area.power={float(a.power)!r}")
        if self.category is LightCategory.ENVIRONMENT:
            lines.append(f"env.strength={float(self.env_strength)!r}")
        return "\n".join(lines) + "\n"

    @classmethod
    def from_text(cls, text: str) -> "LightingRig":
        kv = {}
        for line in text.splitlines():
            line = line.strip()
            if not line or line.startswith("#"):
                continue
            k, v = line.split("=", 1)
            kv[k.strip()] = v.strip()
        rig = cls(LightCategory(kv["category"]))
        i = 0
        while f"point{i}.position" in kv:
            pos = np.array([float(x) for x in kv[f"point{i}.position"].split()])
            rig.points.append(PointLight(pos, float(kv[f"point{i}.power"])))
            i += 1
        if "area.position" in kv:
            rig.area = AreaLight(np.array([float(x) for x in kv["area.position"].split()]),
                                 np.array([float(x) for x in kv["area.normal"].split()]),
                                 float(kv["area.size"]), float(kv["area.power"]))
        rig.env_strength = float(kv.get("env.strength", 0.0))
        return rig


def _frame_from_pole(pole: np.ndarray) -> np.ndarray:
    """Rotation whose third column is ``pole``."""
    z = pole / np.linalg.norm(pole)
    helper = np.array([0.0, 0.0, 1.0]) if abs(z[2]) < 0.9 else np.array([1.0, 0.0, 0.0])
    x = np.cross(helper, z)
    x /= np.linalg.norm(x)
    y = np.cross(z, x)
    return np.stack([x, y, z], 1)


def _hemisphere_sample(rng: np.random.Generator, frame: np.ndarray) -> tuple[np.ndarray, float]:
    # uniform over the spherical cap of polar angle <= 60 deg
    cos_t = rng.uniform(math.cos(math.radians(MAX_POLAR_DEG)), 1.0)
    phi = rng.uniform(0.0, 2 * math.pi)
    r = rng.uniform(*LIGHT_RADIUS)
    sin_t = math.sqrt(max(0.0, 1 - cos_t * cos_t))
    local = np.array([sin_t * math.cos(phi), sin_t * math.sin(phi), cos_t])
    return r * (frame @ local), math.degrees(math.acos(min(1.0, cos_t)))


def sample_lighting(category: LightCategory | str, rng: np.random.Generator,
                    toward: Optional[np.ndarray] = None) -> LightingRig:
    """Draw a lighting rig. The light hemisphere's pole points at ``toward`` (the camera)."""
    category = LightCategory(category) if isinstance(category, str) else category
    pole = np.array([0.0, 0.0, 1.0]) if toward is None else np.asarray(toward, np.float64)
    frame = _frame_from_pole(pole)
    if category is LightCategory.NONE:
        return LightingRig.none()
    if category is LightCategory.ENVIRONMENT:
        return LightingRig(category, env_strength=float(rng.uniform(*ENV_STRENGTH)))
    if category is LightCategory.POINT:
        n = int(rng.integers(1, 4))
        total = float(rng.uniform(*POINT_POWER))
        share = rng.dirichlet(np.ones(n))
        pts, polar = [], []
        for k in range(n):
            pos, th = _hemisphere_sample(rng, frame)
            pts.append(PointLight(pos, total * float(share[k])))
            polar.append(th)
        return LightingRig(category, points=pts, polar_deg=polar)
    pos, th = _hemisphere_sample(rng, frame)
    normal = -pos / np.linalg.norm(pos)
    area = AreaLight(pos, normal, float(rng.uniform(*AREA_SIZE)), float(rng.uniform(*AREA_POWER)))
    return LightingRig(category, area=area, polar_deg=[th])


# --- BRDF ------------------------------------------------------------------

def _dot(a, b):
    return (a * b).sum(-1, keepdim=True)


def _normalize(v, eps=1e-12):
    return v / torch.clamp(torch.linalg.vector_norm(v, dim=-1, keepdim=True), min=eps)


def perturb_normal(normal, bump, tangent):
    """Rotate the decoded tangent-space bump normal into the frame of ``normal``.

    A flat bump (0.5, 0.5, 1.0) returns the geometric normal unchanged; a
    degenerate decoded vector also falls back to it.
    """
    normal = torch.as_tensor(normal)
    bump = torch.as_tensor(bump, dtype=normal.dtype)
    tangent = torch.as_tensor(tangent, dtype=normal.dtype)
    n = _normalize(normal)
    t = _normalize(tangent - _dot(tangent, n) * n)
    b = torch.cross(n, t, dim=-1)
    nt = 2.0 * bump - 1.0
    out = _normalize(t * nt[..., 0:1] + b * nt[..., 1:2] + n * nt[..., 2:3])
    flat = (nt[..., 0:1] == 0) & (nt[..., 1:2] == 0) & (nt[..., 2:3] > 0)
    degenerate = torch.linalg.vector_norm(nt, dim=-1, keepdim=True) < 1e-8
    return torch.where(flat | degenerate, n, out)


def brdf_terms(albedo, roughness, metallic, n, v, l):
    """Diffuse and specular reflectance, each ``(..., 3)``.

    Both terms vanish below the light horizon. The view cosine is clamped
    rather than gated, so a bump normal tilted past the silhouette shades
    continuously (the Smith term keeps the grazing limit finite).
    """
    albedo = torch.as_tensor(albedo)
    dtype = albedo.dtype
    roughness = torch.as_tensor(roughness, dtype=dtype)
    metallic = torch.as_tensor(metallic, dtype=dtype)
    n, v, l = (torch.as_tensor(x, dtype=dtype) for x in (n, v, l))
    if roughness.dim() == albedo.dim() - 1:
        roughness = roughness.unsqueeze(-1)
    if metallic.dim() == albedo.dim() - 1:
        metallic = metallic.unsqueeze(-1)
    nl = _dot(n, l)
    nv = _dot(n, v)
    above = nl > 0
    nl_c = torch.clamp(nl, min=1e-6)
    nv_c = torch.clamp(nv, min=1e-6)
    h = _normalize(v + l)
    nh = torch.clamp(_dot(n, h), 0.0, 1.0)
    vh = torch.clamp(_dot(v, h), 0.0, 1.0)
    alpha = torch.clamp(roughness, min=MIN_ROUGHNESS) ** 2
    a2 = alpha * alpha
    denom = nh * nh * (a2 - 1.0) + 1.0
    D = a2 / (math.pi * denom * denom)

    def g1(x):
        return 2.0 * x / (x + torch.sqrt(a2 + (1.0 - a2) * x * x))

    G = g1(nl_c) * g1(nv_c)
    f0 = DIELECTRIC_F0 * (1.0 - metallic) + albedo * metallic
    F = f0 + (1.0 - f0) * (1.0 - vh) ** 5
    spec = D * G * F / (4.0 * nl_c * nv_c)
    diffuse = (1.0 - metallic) * albedo / math.pi
    zero = torch.zeros((), dtype=dtype)
    diffuse = torch.where(above, diffuse, zero)
    spec = torch.where(above, torch.clamp(spec, min=0.0), zero)
    return diffuse, spec


def eval_brdf(albedo, roughness, metallic, n, v, l):
    d, s = brdf_terms(albedo, roughness, metallic, n, v, l)
    return d + s


# --- rendering -------------------------------------------------------------

def _mat_tensors(materials: MaterialSet, dtype=None):
    vals = [materials.albedo, materials.roughness, materials.metallic, materials.bump]
    if dtype is None:
        dtype = vals[0].dtype if isinstance(vals[0], torch.Tensor) else torch.float32
        if not isinstance(vals[0], torch.Tensor) and np.asarray(vals[0]).dtype == np.float64:
            dtype = torch.float64
    return [v if isinstance(v, torch.Tensor) else torch.as_tensor(np.asarray(v), dtype=dtype) for v in vals]


def render(gbuf: GBuffer, materials: MaterialSet, rig: LightingRig) -> torch.Tensor:
    """Shade every covered pixel; returns an ``(H, W, 3)`` linear-RGB tensor.

    Material arrays may be torch tensors with ``requires_grad``; gradients
    flow to every channel.
    """
    albedo, rough, metal, bump = _mat_tensors(materials)
    dtype = albedo.dtype
    if tuple(albedo.shape[:2]) != tuple(gbuf.shape):
        raise ValueError(f"materials {tuple(albedo.shape[:2])} vs G-buffer {gbuf.shape}")
    cov = torch.as_tensor(gbuf.coverage)[..., None]
    zero = torch.zeros((), dtype=dtype)
    if rig.category is LightCategory.NONE:
        return torch.where(cov, albedo, zero)
    normal = torch.as_tensor(gbuf.normal, dtype=dtype)
    tangent = torch.as_tensor(gbuf.tangent, dtype=dtype)
    n = perturb_normal(normal, bump, tangent)
    # keep uncovered pixels finite: substitute an arbitrary unit normal there
    n = torch.where(cov, n, torch.tensor([0.0, 0.0, 1.0], dtype=dtype))
    if rig.category is LightCategory.ENVIRONMENT:
        irr = rig.env_strength * (0.5 + 0.5 * n[..., 2:3])
        return torch.where(cov, irr * albedo, zero)
    pos = torch.as_tensor(gbuf.position, dtype=dtype)
    cam = torch.as_tensor(gbuf.camera.position, dtype=dtype)
    v = _normalize(cam - pos)
    v = torch.where(cov, v, torch.tensor([0.0, 0.0, 1.0], dtype=dtype))
    out = torch.zeros_like(albedo)
    for light in rig.emitters():
        lp = torch.as_tensor(light.position, dtype=dtype)
        d = lp - pos
        dist2 = _dot(d, d)
        l = _normalize(d)
        f = eval_brdf(albedo, rough, metal, n, v, l)
        radiance = WATT_SCALE * light.power / (4.0 * math.pi * dist2)
        out = out + f * radiance * torch.clamp(_dot(n, l), min=0.0)
    return torch.where(cov, out, zero)


def render_np(gbuf: GBuffer, materials: MaterialSet, rig: LightingRig) -> np.ndarray:
    with torch.no_grad():
        return render(gbuf, materials, rig).numpy().astype(np.float32)


def render_image(gbuf: GBuffer, materials: MaterialSet, rig: LightingRig) -> np.ndarray:
    """Display-range render used as model input: linear values clamped to [0, 1].

    Albedo renders are already in range and come back unchanged.
    """
    return np.clip(render_np(gbuf, materials, rig), 0.0, 1.0)


def materials_from_atlas(atlas: MaterialSet, gbuf: GBuffer, occupancy: Optional[np.ndarray] = None) -> MaterialSet:
    """Per-pixel materials from a UV atlas (bilinear over ``occupancy``).

    Background pixels get the canonical empty material: zero albedo,
    roughness and metallic, flat bump.
    """
    from .geometry.bake import sample_atlas

    H, W = gbuf.shape
    out = np.zeros((H, W, 8), np.float32)
    out[..., 5:8] = (0.5, 0.5, 1.0)
    cov = gbuf.coverage
    if cov.any():
        vals, _, _ = sample_atlas(atlas, gbuf.uv[cov], occupancy)
        out[cov] = vals
    return MaterialSet.from_stack(out)


def relight(mesh: Mesh, uv_materials: MaterialSet, rig: LightingRig, cam: Camera,
            res=None, occupancy: Optional[np.ndarray] = None) -> np.ndarray:
    gbuf = rasterize_gbuffer(mesh, cam, res)
    return render_np(gbuf, materials_from_atlas(uv_materials, gbuf, occupancy), rig)


PRESET_RIGS = {
    "front": lambda: LightingRig(LightCategory.POINT, points=[PointLight(np.array([0.0, -4.5, 2.0]), 1500.0)]),
    "left": lambda: LightingRig(LightCategory.POINT, points=[PointLight(np.array([-4.0, -2.0, 1.5]), 1500.0)]),
    "environment": lambda: LightingRig(LightCategory.ENVIRONMENT, env_strength=1.0),
}


def white_furnace(brdf=eval_brdf, n_samples: int = 100_000, roughness: float = 1.0, metallic: float = 0.0,
                  seed: int = 0, view=(0.0, 0.0, 1.0)) -> float:
    """Monte Carlo estimate of the directional albedo of a white surface.

    Integrates ``brdf * cos(theta)`` over the upper hemisphere of n = +z
    with uniform hemisphere sampling; an energy-conserving BRDF gives a
    value close to, and not much above, one.
    """
    rng = np.random.default_rng(seed)
    u1, u2 = rng.random(n_samples), rng.random(n_samples)
    cos_t = u1
    sin_t = np.sqrt(1.0 - cos_t ** 2)
    phi = 2 * math.pi * u2
    l = torch.as_tensor(np.stack([sin_t * np.cos(phi), sin_t * np.sin(phi), cos_t], -1), dtype=torch.float64)
    n = torch.tensor([[0.0, 0.0, 1.0]], dtype=torch.float64).expand_as(l)
    v = torch.as_tensor(np.asarray(view, np.float64) / np.linalg.norm(view)).expand_as(l)
    albedo = torch.ones_like(l)
    r = torch.full((n_samples,), roughness, dtype=torch.float64)
    m = torch.full((n_samples,), metallic, dtype=torch.float64)
    f = brdf(albedo, r, m, n, v, l)
    integrand = f.mean(-1) * torch.as_tensor(cos_t)
    return float(2 * math.pi * integrand.mean())
