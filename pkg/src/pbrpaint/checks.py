"""Invariant battery behind ``pbrpaint verify``.

Each check is a function returning ``(passed, detail)``. Checks take their
numerical dependencies as keyword arguments so a test can inject a faulty
implementation and watch the battery catch it.
"""
from __future__ import annotations

import tempfile
import time
from dataclasses import dataclass
from pathlib import Path
from typing import Callable

import numpy as np
import torch

from . import shading
from .dataset import compose_inconsistent, gen_object, make_training_sample, render_views
from .diffusion.gradcheck import grad_check
from .diffusion.model import ModelConfig, build_model
from .diffusion.schedule import add_noise, make_schedule, predict_x0, v_target
from .diffusion.train import estimator_batch
from .geometry.bake import BakeState, bake_view_to_uv, project_known, pullpush_fill
from .geometry.camera import camera_ring, orbit_camera
from .geometry.mesh import uv_sphere
from .geometry.raster import rasterize_gbuffer
from .imageio import read_pfm, write_pfm
from .material import LightingScenario, MaterialSet, pack_rm, unpack_rm
from .pipeline import latent_blend
from .shading import LightCategory, LightingRig, render_np, sample_lighting


@dataclass
class CheckResult:
    name: str
    passed: bool
    detail: str
    seconds: float

    def line(self) -> str:
        return f"{'PASS' if self.passed else 'FAIL'}\t{self.name}\t{self.seconds:.2f}s\t{self.detail}"


def check_v_closure(n: int = 10_000, seed: int = 0):
    sched = make_schedule(1000)
    rng = np.random.default_rng(seed)
    x0 = torch.as_tensor(rng.uniform(-1, 1, (n, 9, 1, 1)))
    eps = torch.as_tensor(rng.standard_normal((n, 9, 1, 1)))
    t = torch.as_tensor(rng.integers(0, 1001, n))
    err = (predict_x0(add_noise(x0, eps, t, sched), v_target(x0, eps, t, sched), t, sched) - x0).abs().max().item()
    return err <= 1e-5, f"max error {err:.2e}"


def check_schedule():
    s = make_schedule(1000)
    ab = s.alpha_bar
    ok = ab[0] == 1.0 and np.all(np.diff(ab) < 0) and ab[-1] < 0.01
    return bool(ok), f"alpha_bar[T] = {ab[-1]:.2e}"


def check_furnace(brdf=shading.eval_brdf, n_samples: int = 100_000):
    val = shading.white_furnace(brdf, n_samples)
    return 0.9 <= val <= 1.05, f"directional albedo {val:.4f}"


def _sphere_view(res: int = 32):
    mesh = uv_sphere()
    gbuf = rasterize_gbuffer(mesh, orbit_camera(0.0, 20.0, resolution=res))
    rng = np.random.default_rng(3)
    H = W = res
    m = MaterialSet(rng.random((H, W, 3)).astype(np.float32), rng.random((H, W)).astype(np.float32),
                    rng.random((H, W)).astype(np.float32), np.full((H, W, 3), (0.5, 0.5, 1.0), np.float32))
    return mesh, gbuf, m


def check_none_render():
    _, gbuf, m = _sphere_view()
    out = render_np(gbuf, m, LightingRig.none())
    cov = gbuf.coverage
    ok = np.array_equal(out[cov], m.albedo[cov]) and not out[~cov].any()
    return ok, "None render equals albedo on coverage" if ok else "None render differs from albedo"


def check_power_linearity(render=shading.render):
    _, gbuf, m = _sphere_view()
    rig = sample_lighting(LightCategory.POINT, np.random.default_rng(1), toward=gbuf.camera.position)
    m64 = m.astype(np.float64)
    with torch.no_grad():
        a = render(gbuf, m64, rig).numpy()
        b = render(gbuf, m64, rig.scaled(2.0)).numpy()
    err = float(np.abs(b - 2 * a).max())
    return err <= 1e-12 * max(1.0, float(np.abs(a).max())), f"max |r(2P) - 2 r(P)| = {err:.2e}"


def check_light_ranges(n: int = 10_000):
    rng = np.random.default_rng(0)
    bad = 0
    for k in range(n):
        cat = (LightCategory.POINT, LightCategory.AREA, LightCategory.ENVIRONMENT)[k % 3]
        pole = np.array([0.0, -2.5, 1.0])
        rig = sample_lighting(cat, rng, toward=pole)
        bad += not rig.satisfies_ranges(toward=pole)
    return bad == 0, f"{bad} of {n} rigs out of range"


def check_latent_blend():
    rng = np.random.default_rng(0)
    a = torch.as_tensor(rng.standard_normal((9, 8, 8)))
    b = torch.as_tensor(rng.standard_normal((9, 8, 8)))
    zero, one = torch.zeros(8, 8), torch.ones(8, 8)
    checker = torch.as_tensor((np.indices((8, 8)).sum(0) % 2).astype(np.float32))
    c = latent_blend(a, b, checker)
    sel = checker.bool()
    ok = (torch.equal(latent_blend(a, b, zero), a) and torch.equal(latent_blend(a, b, one), b)
          and torch.equal(c[:, sel], b[:, sel]) and torch.equal(c[:, ~sel], a[:, ~sel]))
    return ok, "limits and checkerboard exact" if ok else "blend is not a per-pixel selection"


def check_pfm_roundtrip():
    rng = np.random.default_rng(0)
    arrs = [rng.random((5, 7, 3)).astype(np.float32), rng.random((4, 6)).astype(np.float32)]
    with tempfile.TemporaryDirectory() as d:
        ok = True
        for i, a in enumerate(arrs):
            p = Path(d) / f"a{i}.pfm"
            write_pfm(p, a)
            ok &= np.array_equal(read_pfm(p), a)
    return bool(ok), "PFM round trip exact" if ok else "PFM round trip changed data"


def check_pack_roundtrip():
    rng = np.random.default_rng(0)
    r, m = rng.random((6, 6)).astype(np.float32), rng.random((6, 6)).astype(np.float32)
    r2, m2 = unpack_rm(pack_rm(r, m))
    ok = np.array_equal(r, r2) and np.array_equal(m, m2)
    return ok, "pack/unpack exact" if ok else "pack/unpack changed data"


def check_bake_roundtrip(res: int = 64, uv_res: int = 128):
    mesh = uv_sphere()
    cam = orbit_camera(0.0, 20.0, resolution=res)
    gbuf = rasterize_gbuffer(mesh, cam)
    yy, xx = np.mgrid[0:res, 0:res] / res
    view = MaterialSet.uniform(res, res, albedo=(0.2, 0.6, 0.4), roughness=0.5, metallic=0.0)
    view.albedo[..., 0] = 0.2 + 0.6 * xx  # smooth ramp, exactly representable by bilinear lookup
    bake = bake_view_to_uv(view, gbuf, BakeState.empty(mesh, uv_res))
    back, known = project_known(mesh, bake, cam, gbuf=gbuf)
    sel = gbuf.coverage & (known > 0)
    mae = float(np.abs(back.stack()[sel] - view.stack()[sel]).mean())
    cover = float(sel.sum() / gbuf.coverage.sum())
    return mae <= 2 / 255 and cover > 0.9, f"MAE {mae:.4f} over {cover:.1%} of coverage"


def check_pullpush(uv_res: int = 64):
    mesh = uv_sphere()
    bake = BakeState.empty(mesh, uv_res)
    for cam in camera_ring(6, 48):
        gbuf = rasterize_gbuffer(mesh, cam)
        bake = bake_view_to_uv(MaterialSet.uniform(48, 48, albedo=(0.3, 0.5, 0.7)), gbuf, bake)
    filled = pullpush_fill(bake)
    occ = bake.occupancy
    known = bake.known & occ
    same = np.array_equal(filled.stack()[known], bake.materials.stack()[known])
    err = float(np.abs(filled.albedo[occ] - np.array([0.3, 0.5, 0.7])).max())
    return same and err < 1e-5, f"known texels unchanged: {same}; max fill error {err:.2e}"


def check_confidence_composite():
    rng = np.random.default_rng(0)
    a, b = rng.random((32, 32, 3)).astype(np.float32), rng.random((32, 32, 3)).astype(np.float32)
    comp, conf = compose_inconsistent(a, b, rng)
    inside = conf == 0
    ok = np.array_equal(comp[~inside], a[~inside]) and 0.15 <= inside.mean() <= 0.65
    return bool(ok), f"degraded fraction {inside.mean():.2f}"


def check_gradients(n_probes: int = 50, width: int = 8, res: int = 32):
    rng = np.random.default_rng(0)
    obj = gen_object(rng, uv_res=64, shape="sphere")
    views = render_views(obj, camera_ring(6, res)[:2], rng)
    batch = estimator_batch([make_training_sample(v, rng, LightingScenario.GENERATED) for v in views])
    model = build_model(ModelConfig(width=width), seed=0)
    res_ = grad_check(model, batch, make_schedule(1000), n_probes=n_probes, seed=1)
    return res_.max_rel_error < 1e-2, f"max relative error {res_.max_rel_error:.2e} over {n_probes} probes"


QUICK = {
    "v_closure": lambda: check_v_closure(2000),
    "schedule": check_schedule,
    "white_furnace": lambda: check_furnace(n_samples=20_000),
    "none_render": check_none_render,
    "power_linearity": check_power_linearity,
    "latent_blend": check_latent_blend,
    "pfm_roundtrip": check_pfm_roundtrip,
    "pack_roundtrip": check_pack_roundtrip,
    "bake_roundtrip": check_bake_roundtrip,
    "pullpush": check_pullpush,
    "confidence_composite": check_confidence_composite,
    "gradients": lambda: check_gradients(10),
}
FULL = dict(QUICK, v_closure=check_v_closure, white_furnace=check_furnace, gradients=check_gradients,
            light_ranges=check_light_ranges)


def run_checks(quick: bool = False, overrides: dict[str, Callable] | None = None) -> list[CheckResult]:
    table = dict(QUICK if quick else FULL)
    table.update(overrides or {})
    out = []
    for name, fn in table.items():
        t0 = time.perf_counter()
        try:
            passed, detail = fn()
        except Exception as e:  # a crashing check is a failing check
            passed, detail = False, f"{type(e).__name__}: {e}"
        out.append(CheckResult(name, bool(passed), detail, time.perf_counter() - t0))
    return out
