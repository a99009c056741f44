import os

import numpy as np
import pytest
import torch
from hypothesis import HealthCheck, settings

from pbrpaint.geometry.camera import orbit_camera
from pbrpaint.geometry.mesh import uv_sphere
from pbrpaint.geometry.raster import rasterize_gbuffer
from pbrpaint.material import MaterialSet

settings.register_profile("pbrpaint", max_examples=40, deadline=None,
                          suppress_health_check=[HealthCheck.too_slow])
settings.load_profile("pbrpaint")
torch.set_num_threads(int(os.environ.get("PBRPAINT_TEST_THREADS", "1")))


@pytest.fixture(scope="session")
def sphere():
    return uv_sphere()


@pytest.fixture(scope="session")
def sphere_gbuf(sphere):
    return rasterize_gbuffer(sphere, orbit_camera(0.0, 20.0, resolution=32))


def random_materials(rng: np.random.Generator, h: int, w: int) -> MaterialSet:
    return MaterialSet(rng.random((h, w, 3)).astype(np.float32), rng.random((h, w)).astype(np.float32),
                       rng.random((h, w)).astype(np.float32), rng.random((h, w, 3)).astype(np.float32))


def pytest_terminal_summary(terminalreporter):
    """One PASS/FAIL line per acceptance criterion."""
    lines = []
    for outcome in ("passed", "failed", "error", "skipped"):
        for rep in terminalreporter.stats.get(outcome, []):
            nodeid = getattr(rep, "nodeid", "")
            if "test_acceptance.py::test_criterion_" not in nodeid or rep.when not in ("call", "setup"):
                continue
            if rep.when == "setup" and outcome == "passed":
                continue
            name = nodeid.split("::test_criterion_")[1]
            num, _, label = name.partition("_")
            verdict = {"passed": "PASS", "skipped": "SKIP"}.get(outcome, "FAIL")
            lines.append((int(num), f"criterion {int(num):2d}  {verdict}  {label}"))
    if lines:
        terminalreporter.section("acceptance")
        for _, line in sorted(lines):
            terminalreporter.write_line(line)
