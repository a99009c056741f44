import math
import warnings

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from pbrpaint.geometry.bake import BakeState, bake_view_to_uv, hole_fraction, project_known, pullpush_fill
from pbrpaint.geometry.camera import RING_RADIUS, Camera, camera_ring, orbit_camera
from pbrpaint.geometry.mesh import (PRIMITIVES, Mesh, MeshParseError, cube, load_mesh, plane, save_obj,
                                    uv_sphere)
from pbrpaint.geometry.raster import compute_ccm_uv, rasterize_gbuffer, rasterize_triangles, rasterize_uv
from pbrpaint.material import MaterialSet

CUBE_OBJ = """\
v -1 -1 -1
v 1 -1 -1
v 1 1 -1
v -1 1 -1
v -1 -1 1
v 1 -1 1
v 1 1 1
v -1 1 1
vt 0 0
vt 1 0
vt 1 1
vt 0 1
f 1/1 4/4 3/3 2/2
f 5/1 6/2 7/3 8/4
f 1/1 2/2 6/3 5/4
f 2/1 3/2 7/3 6/4
f 3/1 4/2 8/3 7/4
f 4/1 1/2 5/3 8/4
"""


def empty_mesh():
    return Mesh(np.zeros((0, 3), np.float32), np.zeros((0, 3), np.int64), np.zeros((0, 3, 3), np.float32),
                np.zeros((0, 3, 2), np.float32))


# --- mesh ------------------------------------------------------------------

def test_load_cube_obj(tmp_path):
    p = tmp_path / "cube.obj"
    p.write_text(CUBE_OBJ)
    m = load_mesh(p)
    assert m.n_vertices == 8 and m.n_faces == 12
    lo, hi = m.bounds()
    np.testing.assert_allclose(lo, -0.5)
    np.testing.assert_allclose(hi, 0.5)


def test_obj_without_uvs_warns(tmp_path):
    p = tmp_path / "tri.obj"
    p.write_text("v 0 0 0\nv 1 0 0\nv 0 1 0\nf 1 2 3\n")
    with pytest.warns(UserWarning, match="box-projection"):
        m = load_mesh(p)
    assert m.uvs.shape == (1, 3, 2)
    assert m.uvs.min() >= 0 and m.uvs.max() <= 1


def test_malformed_face_names_line(tmp_path):
    p = tmp_path / "bad.obj"
    p.write_text("v 0 0 0\nv 1 0 0\nv 0 1 0\nvt 0 0\nvt 1 0\nvn 0 0 1\nf 1/1/1 2/2\n")
    with pytest.raises(MeshParseError, match=":7"):
        load_mesh(p)


def test_obj_roundtrip(tmp_path):
    m = uv_sphere(8, 16)
    save_obj(tmp_path / "s.obj", m)
    m2 = load_mesh(tmp_path / "s.obj")
    assert m2.n_faces == m.n_faces
    np.testing.assert_allclose(m2.uvs, m.uvs, atol=1e-6)


@pytest.mark.parametrize("name", sorted(PRIMITIVES))
def test_primitives_are_valid(name):
    m = PRIMITIVES[name]()
    m.validate()
    lo, hi = m.bounds()
    assert lo.min() >= -0.5 - 1e-6 and hi.max() <= 0.5 + 1e-6
    assert m.uvs.min() >= 0 and m.uvs.max() <= 1


# --- camera ----------------------------------------------------------------

def test_camera_ring_six():
    cams = camera_ring(6)
    assert len(cams) == 6
    for c in cams:
        assert math.isclose(np.linalg.norm(c.position), RING_RADIUS, rel_tol=1e-12)
    # azimuth 0 looks from -y
    p = cams[0].position
    assert abs(p[0]) < 1e-12 and p[1] < 0


def test_camera_ring_ten_distinct():
    pos = np.array([c.position for c in camera_ring(10)])
    d = np.linalg.norm(pos[:, None] - pos[None], axis=-1)
    assert len(pos) == 10 and (d + np.eye(10)).min() > 0.1


def test_camera_ring_rejects_other_counts():
    with pytest.raises(ValueError):
        camera_ring(7)


@given(st.floats(0, 360), st.floats(-80, 80))
def test_orbit_camera_projects_origin_to_center(az, el):
    cam = orbit_camera(az, el, resolution=32)
    xy, depth = cam.project(np.zeros(3))
    np.testing.assert_allclose(xy, [16, 16], atol=1e-9)
    assert math.isclose(depth, RING_RADIUS, rel_tol=1e-9)


def test_camera_space_is_right_handed_looking_down_minus_z():
    cam = orbit_camera(0, 0)
    R = cam.rotation()
    np.testing.assert_allclose(R @ R.T, np.eye(3), atol=1e-12)
    assert np.isclose(np.linalg.det(R), 1.0)
    # the target lies along -z in camera space
    assert cam.world_to_camera(np.zeros(3))[2] < 0


# --- rasterization ---------------------------------------------------------

def test_triangle_coverage_matches_area():
    xy = np.array([[[2.0, 2.0], [62.0, 2.0], [2.0, 62.0]]])
    frags = rasterize_triangles(xy, 64, 64)
    assert abs(frags.coverage.sum() - 0.5 * 60 * 60) < 64


def test_mesh_behind_camera_gives_empty_coverage(sphere):
    cam = Camera(np.array([0.0, -2.5, 0.0]), np.array([0.0, -5.0, 0.0]), np.array([0, 0, 1.0]))
    gbuf = rasterize_gbuffer(sphere, cam)
    assert not gbuf.coverage.any()


def test_sphere_center_normal_faces_camera(sphere):
    gbuf = rasterize_gbuffer(sphere, orbit_camera(30, 20, resolution=33))
    n = gbuf.normal_camera()[16, 16]
    np.testing.assert_allclose(n, [0, 0, 1], atol=1e-2)


def test_gbuffer_roundtrip_arrays(sphere_gbuf):
    from pbrpaint.geometry.raster import GBuffer

    g2 = GBuffer.from_arrays(sphere_gbuf.to_arrays())
    np.testing.assert_array_equal(g2.uv, sphere_gbuf.uv)
    np.testing.assert_array_equal(g2.coverage, sphere_gbuf.coverage)
    np.testing.assert_allclose(g2.camera.position, sphere_gbuf.camera.position)


def test_cube_plus_x_face_ccm():
    m = cube()
    cam = Camera(np.array([3.0, 0.0, 0.0]), np.zeros(3), np.array([0, 0, 1.0]), 30.0, 48, 48)
    gbuf = rasterize_gbuffer(m, cam)
    cov = gbuf.coverage
    assert cov.sum() > 100
    # every visible surface point lies on the +x face
    np.testing.assert_allclose(gbuf.ccm[cov][:, 0], 1.0, atol=1e-3)


# --- UV-space CCM ----------------------------------------------------------

def test_cube_ccm_on_surface():
    maps = compute_ccm_uv(cube(), 64)
    ccm, occ = maps.ccm, maps.occupancy
    vals = ccm[occ]
    assert len(vals) > 0
    on_face = (np.abs(vals - 0.0) < 1e-3) | (np.abs(vals - 1.0) < 1e-3)
    assert on_face.any(axis=1).all()


def test_empty_mesh_occupancy():
    maps = compute_ccm_uv(empty_mesh(), 16)
    ccm, occ = maps.ccm, maps.occupancy
    assert not occ.any()
    assert ccm.shape == (16, 16, 3)


@pytest.mark.parametrize("name", sorted(PRIMITIVES))
def test_ccm_in_unit_cube(name):
    maps = compute_ccm_uv(PRIMITIVES[name](), 64)
    ccm, occ = maps.ccm, maps.occupancy
    assert ccm.min() >= 0 and ccm.max() <= 1
    assert not ccm[~occ].any()


def test_degenerate_uv_triangles_are_counted():
    m = uv_sphere(6, 12)
    m.uvs[0] = m.uvs[0, 0]  # collapse one triangle in UV space
    assert rasterize_uv(m, 32).n_degenerate >= 1


# --- baking ----------------------------------------------------------------

def test_front_plane_bake_is_complete():
    mesh = plane(1.0, 4)
    cam = orbit_camera(0.0, 0.0, resolution=96)
    gbuf = rasterize_gbuffer(mesh, cam)
    bake = bake_view_to_uv(MaterialSet.uniform(96, 96), gbuf, BakeState.empty(mesh, 32))
    occ = bake.occupancy
    assert bake.known[occ].all()
    assert bake.weight[occ].min() > 0.95


def test_lower_weight_view_leaves_bake_unchanged(sphere):
    front = rasterize_gbuffer(sphere, orbit_camera(0.0, 20.0, resolution=48))
    bake = bake_view_to_uv(MaterialSet.uniform(48, 48, albedo=(1, 0, 0)), front, BakeState.empty(sphere, 64))
    # an identical camera cannot beat the stored weights
    again = bake_view_to_uv(MaterialSet.uniform(48, 48, albedo=(0, 1, 0)), front, bake)
    np.testing.assert_array_equal(again.materials.stack(), bake.materials.stack())
    np.testing.assert_array_equal(again.weight, bake.weight)


def test_six_view_sphere_bake_fraction(sphere):
    bake = BakeState.empty(sphere, 128)
    for cam in camera_ring(6, 64):
        bake = bake_view_to_uv(MaterialSet.uniform(64, 64), rasterize_gbuffer(sphere, cam), bake)
    assert bake.known_fraction() > 0.8
    assert hole_fraction(bake.known, bake.occupancy) < 0.2


def test_project_known_empty_bake(sphere):
    cam = orbit_camera(0, 20, resolution=32)
    _, known = project_known(sphere, BakeState.empty(sphere, 64), cam)
    assert not known.any()


def test_project_known_full_bake_matches_coverage(sphere):
    bake = BakeState.empty(sphere, 128)
    bake.weight[bake.occupancy] = 1.0
    for cam in camera_ring(10, 48):
        gbuf = rasterize_gbuffer(sphere, cam)
        _, known = project_known(sphere, bake, cam, gbuf=gbuf)
        np.testing.assert_array_equal(known > 0, gbuf.coverage)


def test_bake_then_project_into_second_view(sphere):
    # materials are a smooth function of the surface point, so both views agree on shared surface
    a, b = orbit_camera(0, 20, resolution=64), orbit_camera(60, 20, resolution=64)
    ga, gb = rasterize_gbuffer(sphere, a), rasterize_gbuffer(sphere, b)

    def surface_materials(g):
        m = MaterialSet.uniform(64, 64)
        m.albedo = g.ccm.astype(np.float32)
        return m

    bake = bake_view_to_uv(surface_materials(ga), ga, BakeState.empty(sphere, 256))
    mats, known = project_known(sphere, bake, b, gbuf=gb)
    to_a = a.position[None, None] - gb.position
    facing_a = (gb.normal * to_a).sum(-1) / np.maximum(np.linalg.norm(to_a, axis=-1), 1e-12)
    # grazing pixels mix across the silhouette at this resolution; compare where A sees the surface squarely
    sel = (known > 0) & (facing_a > 0.5)
    assert sel.sum() > 0.2 * gb.coverage.sum()
    assert np.abs(mats.albedo[sel] - gb.ccm[sel]).max() <= 1 / 255


# --- pull-push -------------------------------------------------------------

def _bake_from(materials: MaterialSet, known: np.ndarray) -> BakeState:
    R = materials.height
    occ = np.ones((R, R), bool)
    from pbrpaint.geometry.raster import UVMaps

    maps = UVMaps(np.zeros((R, R, 3)), np.zeros((R, R, 3)), np.zeros((R, R, 3)), occ, np.zeros((R, R), int), 0)
    return BakeState(materials, known.astype(np.float32), maps)


def test_pullpush_no_holes_identity():
    rng = np.random.default_rng(0)
    m = MaterialSet.from_stack(rng.random((16, 16, 8)).astype(np.float32))
    out = pullpush_fill(_bake_from(m, np.ones((16, 16))))
    np.testing.assert_array_equal(out.stack(), m.stack())


def test_pullpush_single_texel_hole():
    m = MaterialSet.uniform(9, 9, albedo=(0.2, 0.4, 0.9), roughness=0.3, metallic=1.0)
    known = np.ones((9, 9))
    known[4, 4] = 0
    m.albedo[4, 4] = 0.0
    out = pullpush_fill(_bake_from(m, known))
    np.testing.assert_allclose(out.albedo[4, 4], [0.2, 0.4, 0.9], atol=1 / 255)


@given(st.integers(0, 12), st.integers(0, 12), st.integers(0, 2**31))
def test_pullpush_checkerboard_hole_bounded(r0, c0, seed):
    rng = np.random.default_rng(seed)
    lo, hi = rng.random(8) * 0.5, 0.5 + rng.random(8) * 0.5
    board = (np.indices((16, 16)).sum(0) % 2).astype(bool)
    stack = np.where(board[..., None], hi, lo).astype(np.float32)
    known = np.ones((16, 16))
    known[r0:r0 + 4, c0:c0 + 4] = 0
    out = pullpush_fill(_bake_from(MaterialSet.from_stack(stack), known)).stack()
    hole = known == 0
    assert np.all(out[hole] >= lo - 1e-6) and np.all(out[hole] <= hi + 1e-6)
    np.testing.assert_array_equal(out[~hole], stack[~hole])


def test_pullpush_without_known_texels_is_gray():
    m = MaterialSet.filled(8, 8, 0.0)
    with warnings.catch_warnings(record=True) as w:
        warnings.simplefilter("always")
        out = pullpush_fill(_bake_from(m, np.zeros((8, 8))))
    assert any("mid-gray" in str(x.message) for x in w)
    np.testing.assert_array_equal(out.stack(), 0.5)
