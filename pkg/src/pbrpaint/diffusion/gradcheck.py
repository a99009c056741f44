"""Finite-difference verification of parameter gradients of the full training objective."""
from __future__ import annotations

import copy
from dataclasses import dataclass

import numpy as np
import torch

from .model import Denoiser
from .schedule import NoiseSchedule
from .train import Batch, StepDraw, compute_losses

FD_STEP = 1e-3


@dataclass
class GradCheckResult:
    max_rel_error: float
    probes: list[tuple[str, tuple[int, ...]]]
    analytic: np.ndarray
    numeric: np.ndarray

    @property
    def max_abs_analytic(self) -> float:
        return float(np.abs(self.analytic).max()) if self.analytic.size else 0.0

    @property
    def max_abs_numeric(self) -> float:
        return float(np.abs(self.numeric).max()) if self.numeric.size else 0.0


def relative_error(a: np.ndarray, n: np.ndarray, floor: float = 1e-8) -> np.ndarray:
    return np.abs(a - n) / np.maximum(np.maximum(np.abs(a), np.abs(n)), floor)


def choose_probes(model: Denoiser, n_probes: int, rng: np.random.Generator) -> list[tuple[str, tuple[int, ...]]]:
    """Parameter entries drawn uniformly over all scalar parameters."""
    named = [(k, p) for k, p in model.named_parameters() if p.requires_grad]
    sizes = np.array([p.numel() for _, p in named])
    flat = rng.choice(sizes.sum(), size=n_probes, replace=n_probes > sizes.sum())
    offsets = np.concatenate([[0], np.cumsum(sizes)])
    probes = []
    for f in np.sort(flat):
        i = int(np.searchsorted(offsets, f, side="right") - 1)
        name, p = named[i]
        probes.append((name, tuple(int(x) for x in np.unravel_index(int(f - offsets[i]), p.shape))))
    return probes


def grad_check(model: Denoiser, batch: Batch, sched: NoiseSchedule, n_probes: int = 20, seed: int = 0,
               lambda_p: float = 0.1, lambda_2: float = 1.0, eps: float = FD_STEP,
               draw: StepDraw | None = None) -> GradCheckResult:
    """Compare autograd against central differences on ``n_probes`` random parameters.

    Runs in float64 on a copy of ``model`` with the timestep, noise and
    lighting drawn once from ``seed`` and held fixed across evaluations.
    """
    if n_probes < 1:
        raise ValueError("n_probes must be >= 1")
    rng = np.random.default_rng(seed)
    m = copy.deepcopy(model).double()
    m.eval()
    b = batch.to(torch.float64)
    if draw is None:
        draw = StepDraw.sample(b, sched, rng, with_rigs=lambda_p != 0)
    draw = StepDraw(draw.t, draw.eps.to(torch.float64), draw.rigs)
    probes = choose_probes(m, n_probes, rng)

    def objective() -> torch.Tensor:
        return compute_losses(m, b, sched, draw, lambda_p, lambda_2)["total"]

    m.zero_grad(set_to_none=True)
    objective().backward()
    params = dict(m.named_parameters())
    analytic = np.array([params[n].grad[idx].item() if params[n].grad is not None else 0.0 for n, idx in probes])
    numeric = np.empty(len(probes))
    with torch.no_grad():
        for k, (n, idx) in enumerate(probes):
            p = params[n]
            orig = p[idx].item()
            p[idx] = orig + eps
            fp = objective().item()
            p[idx] = orig - eps
            fm = objective().item()
            p[idx] = orig
            numeric[k] = (fp - fm) / (2 * eps)
    rel = relative_error(analytic, numeric)
    return GradCheckResult(float(rel.max()), probes, analytic, numeric)
