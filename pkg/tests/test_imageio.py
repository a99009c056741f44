import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st
from hypothesis.extra.numpy import arrays

from pbrpaint.imageio import (linear_to_srgb, load_material_set, read_pfm, read_png, save_material_set,
                              srgb_to_linear, write_pfm, write_png)
from pbrpaint.material import MaterialSet


@given(arrays(np.float32, st.tuples(st.integers(1, 6), st.integers(1, 6), st.sampled_from([1, 3])),
              elements=st.floats(-1e6, 1e6, width=32)))
def test_pfm_roundtrip_exact(tmp_path_factory, a):
    p = tmp_path_factory.mktemp("pfm") / "a.pfm"
    if a.shape[-1] == 1:
        a = a[..., 0]
    write_pfm(p, a)
    np.testing.assert_array_equal(read_pfm(p), a)


def test_pfm_rejects_garbage(tmp_path):
    p = tmp_path / "bad.pfm"
    p.write_bytes(b"P5\n1 1\n-1\n\0\0\0\0")
    with pytest.raises(ValueError):
        read_pfm(p)


def test_srgb_roundtrip():
    x = np.linspace(0, 1, 101)
    np.testing.assert_allclose(srgb_to_linear(linear_to_srgb(x)), x, atol=1e-6)


def test_png_quantization(tmp_path):
    a = np.random.default_rng(0).random((5, 6, 3)).astype(np.float32)
    write_png(tmp_path / "a.png", a)
    assert np.abs(read_png(tmp_path / "a.png") - a).max() <= 0.5 / 255 + 1e-6


def test_material_set_roundtrip(tmp_path):
    rng = np.random.default_rng(1)
    m = MaterialSet(rng.random((4, 5, 3), dtype=np.float32), rng.random((4, 5), dtype=np.float32),
                    rng.random((4, 5), dtype=np.float32), rng.random((4, 5, 3), dtype=np.float32))
    paths = save_material_set(tmp_path / "x", m, png=True)
    assert {p.name for p in paths.values()} >= {"x_albedo.pfm", "x_rm.pfm", "x_bump.pfm"}
    assert (tmp_path / "x_albedo.png").exists()
    np.testing.assert_array_equal(load_material_set(tmp_path / "x").stack(), m.stack())
