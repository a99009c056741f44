"""The invariant battery must pass on the real code and catch injected faults."""
import numpy as np
import pytest
import torch

from pbrpaint import checks, shading


def test_quick_battery_passes():
    results = checks.run_checks(quick=True)
    failed = [r.line() for r in results if not r.passed]
    assert not failed, failed
    assert {r.name for r in results} == set(checks.QUICK)


def test_full_table_extends_quick():
    assert set(checks.QUICK) <= set(checks.FULL)
    assert "light_ranges" in checks.FULL


def test_furnace_catches_energy_gain():
    def hot(*a, **kw):
        return 1.5 * shading.eval_brdf(*a, **kw)

    ok, detail = checks.check_furnace(hot, n_samples=20_000)
    assert not ok and "directional albedo" in detail


def test_linearity_catches_saturation():
    def saturating(gbuf, m, rig):
        return torch.clamp(shading.render(gbuf, m, rig), max=0.5)

    ok, _ = checks.check_power_linearity(saturating)
    assert not ok


def test_crashing_check_is_reported_as_failure():
    def boom():
        raise ValueError("broken")

    res = checks.run_checks(quick=True, overrides={"boom": boom})
    bad = [r for r in res if r.name == "boom"]
    assert len(bad) == 1 and not bad[0].passed
    assert bad[0].detail == "ValueError: broken"


def test_result_line_format():
    r = checks.CheckResult("x", True, "fine", 0.125)
    assert r.line() == "PASS\tx\t0.12s\tfine"
