"""Release acceptance suite.

Each test is one numbered criterion; the terminal summary (see conftest)
prints a PASS/FAIL line per criterion. Criteria 7-10 need the trained toy
and ablation estimators; they are read from the experiment cache and
trained on first use (``python -m pbrpaint.experiments`` warms the cache).
"""
import math
import time

import numpy as np
import pytest
import torch

from pbrpaint import cli
from pbrpaint.dataset import (LIT_NAMES, compose_inconsistent, gen_object, make_training_sample, render_views)
from pbrpaint.diffusion import (ModelConfig, StepDraw, add_noise, build_model, estimator_batch, grad_check,
                                make_schedule, materials_to_model, predict_x0, sample, save_model, v_target)
from pbrpaint.experiments import (ABLATION_BASE, ABLATION_SEEDS, TOY, evaluate_cached, train_estimator,
                                  variant)
from pbrpaint.geometry.bake import BakeState, bake_view_to_uv, project_known
from pbrpaint.geometry.camera import camera_ring, orbit_camera
from pbrpaint.geometry.mesh import uv_sphere
from pbrpaint.geometry.raster import compute_ccm_uv, rasterize_gbuffer
from pbrpaint.material import LightingScenario, MaterialSet
from pbrpaint.pipeline import PaintJob, coarse_texture, known_override, latent_blend, paint_object, refine_uv
from pbrpaint.shading import (AREA_POWER, AREA_SIZE, ENV_STRENGTH, LIGHT_RADIUS, POINT_POWER, LightCategory,
                              LightingRig, PointLight, eval_brdf, materials_from_atlas, render_np, sample_lighting,
                              white_furnace)

pytestmark = pytest.mark.acceptance
SCHED = make_schedule(1000)


def _random_materials(rng, h, w):
    return MaterialSet(rng.random((h, w, 3)), rng.random((h, w)), rng.random((h, w)), rng.random((h, w, 3)))


def _packed_materials(rng, h, w):
    """Materials that survive the packed model encoding unchanged."""
    return MaterialSet.from_packed(_random_materials(rng, h, w).packed())


def _mean_over_seeds(name):
    return float(np.mean([evaluate_cached(variant(ABLATION_BASE, name, s))["overall"]["mean"]
                          for s in ABLATION_SEEDS]))


def test_criterion_01_v_closure():
    t0 = time.perf_counter()
    rng = np.random.default_rng(0)
    n = 10_000
    x0 = torch.as_tensor(rng.uniform(-1, 1, (n, 9, 2, 2)))
    eps = torch.as_tensor(rng.standard_normal((n, 9, 2, 2)))
    t = torch.as_tensor(rng.integers(0, 1001, n))
    rec = predict_x0(add_noise(x0, eps, t, SCHED), v_target(x0, eps, t, SCHED), t, SCHED)
    err = (rec - x0).abs().max().item()
    elapsed = time.perf_counter() - t0
    assert err <= 1e-5, err
    assert elapsed < 5.0, elapsed


def test_criterion_02_gradient_check():
    t0 = time.perf_counter()
    rng = np.random.default_rng(11)
    views = render_views(gen_object(rng, uv_res=64), [orbit_camera(0.0, 20.0, resolution=32),
                                                       orbit_camera(180.0, 20.0, resolution=32)], rng)
    batch = estimator_batch([make_training_sample(v, rng) for v in views])
    model = build_model(ModelConfig(width=8), seed=0)
    # all three terms active, with the rendering path drawn through a lit rig
    res = grad_check(model, batch, SCHED, n_probes=50, seed=0, lambda_p=0.1, lambda_2=1.0)
    draw = StepDraw.sample(batch, SCHED, np.random.default_rng(0), with_rigs=True)
    assert draw.rigs, "rendering loss inactive"
    elapsed = time.perf_counter() - t0
    assert res.max_rel_error < 1e-2, res.max_rel_error
    assert elapsed < 120.0, elapsed


def test_criterion_03_renderer_physics():
    mesh = uv_sphere()
    gbuf = rasterize_gbuffer(mesh, orbit_camera(30.0, 20.0, resolution=48))
    m = _random_materials(np.random.default_rng(2), 48, 48)
    cov = gbuf.coverage
    # (a) no lighting shows the albedo itself, exactly at the render's precision
    none = render_np(gbuf, m, LightingRig.none())
    assert np.array_equal(none[cov], m.albedo[cov].astype(none.dtype))
    # (b) white furnace
    val = white_furnace(eval_brdf, 100_000)
    assert 0.9 <= val <= 1.05, val
    # (c) doubling every emitter's power doubles the image exactly (scaling by 2 is exact in binary)
    rig = sample_lighting(LightCategory.POINT, np.random.default_rng(4), toward=gbuf.camera.position)
    doubled = LightingRig(LightCategory.POINT, [PointLight(p.position, 2 * p.power) for p in rig.points])
    a, b = render_np(gbuf, m, rig), render_np(gbuf, m, doubled)
    assert np.array_equal(2 * a, b)


def test_criterion_04_blend_limits():
    rng = np.random.default_rng(5)
    known_mats = _packed_materials(rng, 16, 16)
    model = build_model(ModelConfig(width=8), seed=1)
    cond = torch.as_tensor(rng.standard_normal((7, 16, 16)), dtype=torch.float32)
    # empty known mask: identical to the unconstrained sample
    free = sample(model, cond, 0, SCHED, 8, np.random.default_rng(9))
    hook0 = known_override(known_mats, np.zeros((16, 16), np.float32), SCHED, np.random.default_rng(1))
    blended0 = sample(model, cond, 0, SCHED, 8, np.random.default_rng(9), hook0)
    assert np.array_equal(free.packed(), blended0.packed())
    # full known mask: the known materials come back
    hook1 = known_override(known_mats, np.ones((16, 16), np.float32), SCHED, np.random.default_rng(1))
    full = sample(model, cond, 0, SCHED, 8, np.random.default_rng(9), hook1)
    assert np.abs(full.packed() - known_mats.packed()).max() <= 2 / 255
    # checkerboard: per-pixel source selection, bit-exact
    za, zb = torch.randn(9, 16, 16), torch.randn(9, 16, 16)
    cb = torch.as_tensor(np.add.outer(np.arange(16), np.arange(16)) % 2 == 1)
    out = latent_blend(za, zb, cb)
    assert torch.equal(out[:, cb], zb[:, cb]) and torch.equal(out[:, ~cb], za[:, ~cb])


def test_criterion_05_bake_round_trip():
    uv_res = 128
    obj = gen_object(np.random.default_rng(6), uv_res=uv_res, shape="sphere")
    mesh, atlas = obj.mesh, obj.materials
    cam = orbit_camera(0.0, 20.0, resolution=64)
    gbuf = rasterize_gbuffer(mesh, cam)
    view = materials_from_atlas(atlas, gbuf)
    bake = bake_view_to_uv(view, gbuf, BakeState.empty(mesh, uv_res))
    back, known = project_known(mesh, bake, cam, gbuf=gbuf)
    cov = gbuf.coverage
    mae = np.abs(back.stack()[cov] - view.stack()[cov]).mean()
    assert mae <= 2 / 255, mae
    assert known[cov].all()
    # six ring views leave fewer than 20% holes; completion leaves none
    bake = BakeState.empty(mesh, uv_res)
    for c in camera_ring(6, 64):
        g = rasterize_gbuffer(mesh, c)
        bake = bake_view_to_uv(materials_from_atlas(atlas, g), g, bake)
    holes = bake.hole_mask().sum() / bake.occupancy.sum()
    assert holes < 0.2, holes
    uvm = compute_ccm_uv(mesh, uv_res)
    final = refine_uv(bake.materials, bake.hole_mask(), uvm.ccm, uvm.occupancy, None, SCHED,
                      np.random.default_rng(0))
    st = final.stack()
    assert np.isfinite(st).all() and np.all(st[bake.hole_mask()].any(-1))


def _polar(pos, pole):
    c = pos @ pole / (np.linalg.norm(pos) * np.linalg.norm(pole))
    return math.degrees(math.acos(np.clip(c, -1.0, 1.0)))


def test_criterion_06_dataset_recipe():
    rng = np.random.default_rng(8)
    pole = np.array([1.0, -2.0, 0.8])
    for cat in (LightCategory.POINT, LightCategory.AREA, LightCategory.ENVIRONMENT):
        for _ in range(10_000):
            rig = sample_lighting(cat, rng, toward=pole)
            if cat is LightCategory.POINT:
                assert POINT_POWER[0] <= rig.total_power() <= POINT_POWER[1]
                for p in rig.points:
                    assert _polar(p.position, pole) <= 60 + 1e-9
                    assert LIGHT_RADIUS[0] <= np.linalg.norm(p.position) <= LIGHT_RADIUS[1]
            elif cat is LightCategory.AREA:
                a = rig.area
                assert AREA_SIZE[0] <= a.size <= AREA_SIZE[1] and AREA_POWER[0] <= a.power <= AREA_POWER[1]
                assert _polar(a.position, pole) <= 60 + 1e-9
                assert LIGHT_RADIUS[0] <= np.linalg.norm(a.position) <= LIGHT_RADIUS[1]
            else:
                assert ENV_STRENGTH[0] <= rig.env_strength <= ENV_STRENGTH[1]
    assert (POINT_POWER, AREA_SIZE, AREA_POWER, ENV_STRENGTH, LIGHT_RADIUS) == (
        (900.0, 2400.0), (3.0, 10.0), (1000.0, 2000.0), (0.5, 3.0), (4.0, 5.0))
    views = render_views(gen_object(rng, uv_res=64), camera_ring(6, 32), rng)
    assert all(len(v.images()) == 13 for v in views)
    assert len(LIT_NAMES) == 8
    # confidence 0 marks exactly the stitched pixels: a NaN base image survives only where confidence is 1
    for k in range(1000):
        shape = (int(rng.integers(8, 65)), int(rng.integers(8, 65)), 3)
        base = np.full(shape, np.nan, np.float32)
        comp, conf = compose_inconsistent(base, rng.random(shape).astype(np.float32), rng)
        assert np.array_equal(np.isnan(comp).all(-1), conf == 1)
        assert np.isfinite(comp[conf == 0]).all()
    for v in views:
        s = make_training_sample(v, rng, LightingScenario.GENERATED)
        assert set(np.unique(s.confidence)) <= {0.0, 1.0}


@pytest.mark.slow
def test_criterion_07_toy_training():
    trained = evaluate_cached(TOY)["overall"]["mean"]
    untrained = evaluate_cached(TOY, trained=False)["overall"]["mean"]
    print(f"toy estimator mean RMSE {trained:.4f}, untrained {untrained:.4f}")
    assert trained <= 0.5 * untrained


@pytest.mark.slow
def test_criterion_08_confidence_ablation():
    full, no_conf = _mean_over_seeds("full"), _mean_over_seeds("no_confidence")
    print(f"with confidence {full:.4f}, without {no_conf:.4f}")
    assert full < no_conf


@pytest.mark.slow
def test_criterion_09_architecture_and_loss_ablation():
    full = _mean_over_seeds("full")
    single, no_render = _mean_over_seeds("single_head"), _mean_over_seeds("no_render_loss")
    print(f"triple head {full:.4f}, single head {single:.4f}, without rendering loss {no_render:.4f}")
    assert full < single
    assert full < no_render


@pytest.mark.slow
def test_criterion_10_consistency_strategies():
    model = train_estimator(TOY)
    mesh = uv_sphere()
    cams = camera_ring(6, TOY.resolution)
    images = coarse_texture(mesh, "wood", cams, seed=0, uv_res=TOY.uv_res)
    scores = {}
    for enabled in (True, False):
        job = PaintJob(mesh, LightingScenario.GENERATED, 3, cams, images, n_steps=TOY.eval_steps,
                       uv_res=TOY.uv_res, seed=0, known_init=enabled, dynamic_confidence=enabled)
        _, report, _ = paint_object(job, model, None, SCHED)
        scores[enabled] = report.consistency
    print(f"consistency with known-region initialisation {scores[True]:.4f}, without {scores[False]:.4f}")
    assert scores[True] < scores[False]


def test_criterion_11_paint_determinism(tmp_path):
    ckpt = tmp_path / "est.ckpt"
    save_model(ckpt, build_model(ModelConfig(width=8), seed=0), "estimator")
    outs = []
    for k in range(2):
        d = tmp_path / f"run{k}"
        code = cli.main(["--seed", "5", "--image-res", "32", "--uv-res", "64", "paint", "--mesh", "sphere",
                         "--estimator", str(ckpt), "--no-refiner", "--steps", "4", "--out", str(d)])
        assert code == 0
        outs.append(d)
    names = sorted(p.name for p in outs[0].glob("uv_*"))
    assert names
    for n in names:
        assert (outs[0] / n).read_bytes() == (outs[1] / n).read_bytes(), n
