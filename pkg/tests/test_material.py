import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st
from hypothesis.extra.numpy import arrays

from pbrpaint.material import (DimensionError, DomainError, FormatError, LightingScenario, MaterialSet,
                               assert_valid, assign_confidence, pack_rm, unpack_rm, validate_material_set)

unit = st.floats(0.0, 1.0, width=32)


def test_pack_rm_layout():
    out = pack_rm(np.full((2, 2), 0.5, np.float32), np.full((2, 2), 0.2, np.float32))
    assert out.shape == (2, 2, 3)
    np.testing.assert_array_equal(out, np.broadcast_to(np.float32([1.0, 0.5, 0.2]), (2, 2, 3)))
    np.testing.assert_array_equal(pack_rm(np.zeros((1, 1)), np.zeros((1, 1)))[0, 0], [1, 0, 0])


def test_pack_rm_rejects_bad_input():
    with pytest.raises(DimensionError):
        pack_rm(np.zeros((2, 2)), np.zeros((3, 3)))
    with pytest.raises(DomainError):
        pack_rm(np.full((2, 2), 1.5), np.zeros((2, 2)))
    with pytest.raises(DomainError):
        pack_rm(np.full((2, 2), np.nan), np.zeros((2, 2)))


def test_unpack_rm():
    r, m = unpack_rm(np.float32([[[1.0, 0.7, 0.1]]]))
    assert (r[0, 0], m[0, 0]) == (np.float32(0.7), np.float32(0.1))
    r, m = unpack_rm(np.float32([[[1.0, 0.0, 0.0]]]))
    assert r[0, 0] == 0 and m[0, 0] == 0
    with pytest.raises(FormatError):
        unpack_rm(np.float32([[[0.2, 0.5, 0.5]]]))
    # without a tolerance the red channel is ignored
    r, _ = unpack_rm(np.float32([[[0.2, 0.5, 0.5]]]), tol=None)
    assert r[0, 0] == np.float32(0.5)


@given(arrays(np.float32, (5, 4), elements=unit), arrays(np.float32, (5, 4), elements=unit))
def test_pack_unpack_roundtrip(r, m):
    r2, m2 = unpack_rm(pack_rm(r, m))
    np.testing.assert_array_equal(r2, r)
    np.testing.assert_array_equal(m2, m)


def test_pack_unpack_hundred_grids():
    rng = np.random.default_rng(0)
    for _ in range(100):
        r, m = rng.random((8, 8)), rng.random((8, 8))
        r2, m2 = unpack_rm(pack_rm(r, m))
        assert np.array_equal(r, r2) and np.array_equal(m, m2)


def test_confidence_by_scenario():
    np.testing.assert_array_equal(assign_confidence(LightingScenario.REALISTIC, shape=(64, 64)), np.ones((64, 64)))
    np.testing.assert_array_equal(assign_confidence(LightingScenario.LIGHT_FREE, shape=(64, 64)), np.zeros((64, 64)))
    known = np.zeros((64, 64))
    known[:, :32] = 1
    conf = assign_confidence(LightingScenario.GENERATED, known_mask=known)
    assert conf[:, :32].min() == 1 and conf[:, 32:].max() == 0


def test_confidence_generated_needs_mask():
    with pytest.raises(ValueError):
        assign_confidence(LightingScenario.GENERATED, shape=(4, 4))
    with pytest.raises(DimensionError):
        assign_confidence(LightingScenario.GENERATED, known_mask=np.ones((4, 4)), shape=(5, 5))


@given(st.sampled_from(list(LightingScenario)), arrays(np.float32, (6, 7), elements=unit))
def test_confidence_is_binary(scen, known):
    conf = assign_confidence(scen, known_mask=known, shape=known.shape)
    assert conf.shape == known.shape
    assert set(np.unique(conf)) <= {0.0, 1.0}


def test_scenario_parse():
    assert LightingScenario.parse("Light-Free") is LightingScenario.LIGHT_FREE
    assert LightingScenario.parse("generated") is LightingScenario.GENERATED
    with pytest.raises(ValueError):
        LightingScenario.parse("sunny")


def test_validate_material_set():
    m = MaterialSet.uniform(4, 4)
    assert validate_material_set(m).ok
    m.albedo[1, 2, 0] = 1.5
    rep = validate_material_set(m)
    assert len(rep) == 1 and rep.violations[0].kind == "range" and rep.violations[0].index == (1, 2, 0)
    with pytest.raises(DomainError):
        assert_valid(m)
    bad = MaterialSet(np.zeros((8, 8, 3)), np.zeros((8, 8)), np.zeros((8, 8)), np.zeros((4, 4, 3)))
    rep = validate_material_set(bad)
    assert [v.kind for v in rep.violations] == ["shape"]
    with pytest.raises(DimensionError):
        assert_valid(bad)


def test_validate_reports_nonfinite():
    m = MaterialSet.uniform(3, 3)
    m.roughness[0, 0] = np.nan
    assert validate_material_set(m).violations[0].kind == "finite"


@given(arrays(np.float32, (3, 5, 8), elements=unit))
def test_stack_roundtrip(a):
    m = MaterialSet.from_stack(a)
    np.testing.assert_array_equal(m.stack(), a)
    np.testing.assert_array_equal(MaterialSet.from_packed(m.packed()).stack(), a)


def test_where_selects_per_pixel():
    a, b = MaterialSet.filled(4, 4, 0.0), MaterialSet.filled(4, 4, 1.0)
    mask = np.eye(4, dtype=bool)
    out = a.where(mask, b)
    assert np.all(out.stack()[mask] == 0) and np.all(out.stack()[~mask] == 1)
