import math

import numpy as np
import pytest
import torch
from hypothesis import given
from hypothesis import strategies as st
from hypothesis.extra.numpy import arrays

from pbrpaint.geometry.camera import orbit_camera
from pbrpaint.geometry.mesh import uv_sphere
from pbrpaint.geometry.raster import rasterize_gbuffer, rasterize_uv
from pbrpaint.material import MaterialSet
from pbrpaint.shading import (AREA_POWER, AREA_SIZE, ENV_STRENGTH, LIGHT_RADIUS, POINT_POWER, PRESET_RIGS,
                              LightCategory, LightingRig, PointLight, eval_brdf, perturb_normal, relight, render,
                              render_np, sample_lighting, white_furnace)

from conftest import random_materials

unit3 = arrays(np.float64, 3, elements=st.floats(0.0, 1.0))


def _polar(pos, pole):
    c = pos @ pole / (np.linalg.norm(pos) * np.linalg.norm(pole))
    return math.degrees(math.acos(np.clip(c, -1, 1)))


# --- lighting ----------------------------------------------------------------

def test_none_rig_has_no_emitters():
    rig = sample_lighting("none", np.random.default_rng(0))
    assert rig.category is LightCategory.NONE and not rig.emitters() and rig.env_strength == 0


def test_point_rigs_within_ranges():
    rng = np.random.default_rng(0)
    pole = np.array([0.3, -2.0, 1.0])
    for _ in range(10_000):
        rig = sample_lighting(LightCategory.POINT, rng, toward=pole)
        assert POINT_POWER[0] <= rig.total_power() <= POINT_POWER[1]
        for p in rig.points:
            assert _polar(p.position, pole) <= 60 + 1e-6
            assert LIGHT_RADIUS[0] <= np.linalg.norm(p.position) <= LIGHT_RADIUS[1]


def test_area_and_environment_ranges():
    rng = np.random.default_rng(1)
    for _ in range(2000):
        a = sample_lighting(LightCategory.AREA, rng).area
        assert AREA_SIZE[0] <= a.size <= AREA_SIZE[1] and AREA_POWER[0] <= a.power <= AREA_POWER[1]
        # the panel faces the origin
        np.testing.assert_allclose(a.normal, -a.position / np.linalg.norm(a.position))
        e = sample_lighting(LightCategory.ENVIRONMENT, rng)
        assert ENV_STRENGTH[0] <= e.env_strength <= ENV_STRENGTH[1]


def test_sampling_is_deterministic():
    a = sample_lighting("point", np.random.default_rng(5))
    b = sample_lighting("point", np.random.default_rng(5))
    assert a.to_text() == b.to_text()


@pytest.mark.parametrize("cat", list(LightCategory))
def test_rig_text_roundtrip(cat):
    rig = sample_lighting(cat, np.random.default_rng(3))
    back = LightingRig.from_text(rig.to_text())
    assert back.to_text() == rig.to_text()


def test_area_light_splits_power_over_corners():
    rig = sample_lighting("area", np.random.default_rng(2))
    pts = rig.emitters()
    assert len(pts) == 4
    assert math.isclose(sum(p.power for p in pts), rig.area.power)
    np.testing.assert_allclose(np.mean([p.position for p in pts], 0), rig.area.position)


# --- BRDF --------------------------------------------------------------------

def test_flat_bump_keeps_normal():
    rng = np.random.default_rng(0)
    n = rng.normal(size=(50, 3))
    n /= np.linalg.norm(n, axis=1, keepdims=True)
    t = np.cross(n, rng.normal(size=(50, 3)))
    out = perturb_normal(torch.as_tensor(n), torch.tensor([0.5, 0.5, 1.0], dtype=torch.float64).expand(50, 3),
                         torch.as_tensor(t))
    np.testing.assert_allclose(out.numpy(), n, atol=1e-12)


@given(unit3, arrays(np.float64, 3, elements=st.floats(-1, 1)), arrays(np.float64, 3, elements=st.floats(-1, 1)))
def test_perturbed_normal_is_unit(bump, n, t):
    if np.linalg.norm(n) < 1e-3 or np.linalg.norm(np.cross(n, t)) < 1e-3:
        return
    out = perturb_normal(torch.as_tensor(n), torch.as_tensor(bump), torch.as_tensor(t)).numpy()
    assert abs(np.linalg.norm(out) - 1) < 1e-5


def test_bump_tilts_toward_tangent():
    out = perturb_normal(torch.tensor([0.0, 0, 1]), torch.tensor([1.0, 0.5, 1.0]), torch.tensor([1.0, 0, 0]))
    assert out[0] > 0 and out[2] < 1
    np.testing.assert_allclose(out.numpy(), [1 / math.sqrt(2), 0, 1 / math.sqrt(2)], atol=1e-6)


@given(unit3, st.floats(0, 1), arrays(np.float64, 3, elements=st.floats(-1, 1)),
       arrays(np.float64, 3, elements=st.floats(-1, 1)))
def test_metal_has_no_diffuse(albedo, rough, v, l):
    from pbrpaint.shading import brdf_terms

    if np.linalg.norm(v) < 1e-3 or np.linalg.norm(l) < 1e-3:
        return
    v, l = v / np.linalg.norm(v), l / np.linalg.norm(l)
    d, s = brdf_terms(torch.as_tensor(albedo), rough, 1.0, torch.tensor([0.0, 0, 1], dtype=torch.float64),
                      torch.as_tensor(v), torch.as_tensor(l))
    assert torch.all(d == 0)
    assert torch.all(torch.isfinite(s)) and torch.all(s >= 0)


def test_normal_incidence_white_diffuse():
    z = torch.tensor([0.0, 0.0, 1.0], dtype=torch.float64)
    f = eval_brdf(torch.ones(3, dtype=torch.float64), 1.0, 0.0, z, z, z)
    assert torch.all(torch.isfinite(f)) and torch.all(f >= 1 / math.pi)


def test_white_furnace_within_bounds():
    assert 0.9 <= white_furnace(n_samples=100_000) <= 1.05


def test_white_furnace_catches_a_sign_bug():
    def flipped(albedo, r, m, n, v, l):
        return eval_brdf(albedo, r, m, n, v, -l)

    assert not 0.9 <= white_furnace(flipped, n_samples=20_000) <= 1.05


@given(st.floats(0, 1), st.floats(0, 1), st.floats(0.0, 1.4))
def test_brdf_reciprocity(rough, metal, angle):
    n = torch.tensor([0.0, 0, 1], dtype=torch.float64)
    v = torch.tensor([math.sin(angle), 0.0, math.cos(angle)], dtype=torch.float64)
    l = torch.tensor([-0.3, 0.4, 0.866], dtype=torch.float64)
    l = l / l.norm()
    a = torch.tensor([0.8, 0.5, 0.2], dtype=torch.float64)
    torch.testing.assert_close(eval_brdf(a, rough, metal, n, v, l), eval_brdf(a, rough, metal, n, l, v))


# --- rendering ---------------------------------------------------------------

def test_none_render_is_albedo(sphere_gbuf):
    m = random_materials(np.random.default_rng(0), 32, 32)
    out = render_np(sphere_gbuf, m, LightingRig.none())
    cov = sphere_gbuf.coverage
    assert np.array_equal(out[cov], m.albedo[cov]) and not out[~cov].any()


def test_empty_point_rig_is_black(sphere_gbuf):
    m = random_materials(np.random.default_rng(0), 32, 32)
    assert not render_np(sphere_gbuf, m, LightingRig(LightCategory.POINT)).any()


def test_environment_shading(sphere_gbuf):
    m = MaterialSet.uniform(32, 32, albedo=(0.5, 0.5, 0.5))
    out = render_np(sphere_gbuf, m, LightingRig(LightCategory.ENVIRONMENT, env_strength=2.0))
    cov = sphere_gbuf.coverage
    expect = 2.0 * (0.5 + 0.5 * sphere_gbuf.normal[..., 2]) * 0.5
    np.testing.assert_allclose(out[cov][:, 0], expect[cov], rtol=1e-5)


@given(st.floats(0.1, 10.0))
def test_power_linearity(k):
    g = rasterize_gbuffer(uv_sphere(12, 24), orbit_camera(0, 20, resolution=16))
    m = random_materials(np.random.default_rng(0), 16, 16).astype(np.float64)
    rig = sample_lighting("point", np.random.default_rng(1), toward=g.camera.position)
    with torch.no_grad():
        torch.testing.assert_close(render(g, m, rig.scaled(k)), k * render(g, m, rig), rtol=1e-12, atol=0)


def test_inverse_square_falloff():
    g = rasterize_gbuffer(uv_sphere(12, 24), orbit_camera(0, 20, resolution=16))
    m = MaterialSet.uniform(16, 16).astype(np.float64)
    cov = g.coverage
    near = LightingRig(LightCategory.POINT, [PointLight(np.array([0.0, -4.0, 0.0]), 1000.0)])
    far = LightingRig(LightCategory.POINT, [PointLight(np.array([0.0, -8.0, 0.0]), 1000.0)])
    r = render_np(g, m, near)[cov].sum() / render_np(g, m, far)[cov].sum()
    assert 3.0 < r < 5.0  # ~4 with the finite sphere size and changing incidence


def test_render_albedo_gradient_matches_finite_differences(sphere_gbuf):
    rng = np.random.default_rng(0)
    m = random_materials(rng, 32, 32).astype(np.float64)
    rig = sample_lighting("point", rng, toward=sphere_gbuf.camera.position)
    albedo = torch.as_tensor(m.albedo.copy(), dtype=torch.float64).requires_grad_(True)
    mt = MaterialSet(albedo, torch.as_tensor(m.roughness), torch.as_tensor(m.metallic), torch.as_tensor(m.bump))
    out = render(sphere_gbuf, mt, rig)
    pix = np.argwhere(sphere_gbuf.coverage)
    pix = pix[rng.choice(len(pix), 100, replace=False)]
    ch = rng.integers(0, 3, 100)
    h = 1e-3
    for (i, j), c in zip(pix, ch):
        (g,) = torch.autograd.grad(out[i, j, c], albedo, retain_graph=True)
        a = g[i, j, c].item()
        with torch.no_grad():
            up, dn = albedo.detach().clone(), albedo.detach().clone()
            up[i, j, c] += h
            dn[i, j, c] -= h
            f_up = render(sphere_gbuf, MaterialSet(up, mt.roughness, mt.metallic, mt.bump), rig)[i, j, c]
            f_dn = render(sphere_gbuf, MaterialSet(dn, mt.roughness, mt.metallic, mt.bump), rig)[i, j, c]
        num = ((f_up - f_dn) / (2 * h)).item()
        assert abs(a - num) <= 1e-3 * max(abs(a), abs(num), 1e-8)


# --- relighting --------------------------------------------------------------

def test_relight_uniform_sphere_without_light():
    mesh = uv_sphere()
    atlas = MaterialSet.uniform(64, 64, albedo=(0.3, 0.6, 0.1))
    occ = rasterize_uv(mesh, 64).occupancy
    cam = orbit_camera(0, 20, resolution=32)
    img = relight(mesh, atlas, LightingRig.none(), cam, occupancy=occ)
    cov = rasterize_gbuffer(mesh, cam).coverage
    np.testing.assert_allclose(img[cov], np.broadcast_to([0.3, 0.6, 0.1], img[cov].shape), atol=1e-6)
    assert not img[~cov].any()
    np.testing.assert_array_equal(img, relight(mesh, atlas, LightingRig.none(), cam, occupancy=occ))


def test_relight_left_right_mirror():
    mesh = uv_sphere(48, 96)
    atlas = MaterialSet.uniform(64, 64, albedo=(0.7, 0.7, 0.7), roughness=0.6)
    occ = rasterize_uv(mesh, 64).occupancy
    cam = orbit_camera(0, 0, resolution=64)
    left = LightingRig(LightCategory.POINT, [PointLight(np.array([-3.0, -3.0, 0.0]), 1500.0)])
    right = LightingRig(LightCategory.POINT, [PointLight(np.array([3.0, -3.0, 0.0]), 1500.0)])
    lum_l = relight(mesh, atlas, left, cam, occupancy=occ).mean(-1).sum(0)
    lum_r = relight(mesh, atlas, right, cam, occupancy=occ).mean(-1).sum(0)
    np.testing.assert_allclose(lum_l, lum_r[::-1], rtol=0.02, atol=0.02 * lum_l.max())


@pytest.mark.parametrize("name", sorted(PRESET_RIGS))
def test_presets_render(name):
    rig = PRESET_RIGS[name]()
    g = rasterize_gbuffer(uv_sphere(12, 24), orbit_camera(0, 20, resolution=16))
    out = render_np(g, MaterialSet.uniform(16, 16), rig)
    assert np.isfinite(out).all() and out[g.coverage].mean() > 0.01
