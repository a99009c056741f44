"""Deterministic DDIM sampling (eta = 0) with a per-step latent override hook."""
from __future__ import annotations

from typing import Callable, Optional

import numpy as np
import torch

from ..material import MaterialSet
from .model import Denoiser
from .schedule import NoiseSchedule, model_to_materials, predict_eps, predict_x0

# override(z, t) -> z; called on the initial latent and after every update
Override = Callable[[torch.Tensor, int], torch.Tensor]


def timestep_subset(T: int, n_steps: int) -> list[int]:
    """Uniformly strided, strictly decreasing timesteps from T down to at least 1."""
    if not 1 <= n_steps <= T:
        raise ValueError(f"n_steps must lie in [1, {T}], got {n_steps}")
    ts = np.round(np.linspace(T, 1, n_steps)).astype(int) if n_steps > 1 else np.array([T])
    return [int(t) for t in ts]


@torch.no_grad()
def sample_latent(model: Denoiser, cond: torch.Tensor, tag, sched: NoiseSchedule, n_steps: int,
                  rng: np.random.Generator, override: Optional[Override] = None) -> torch.Tensor:
    """Run the sampler on a ``(B, C, H, W)`` conditioning batch; returns clipped x0 in model space."""
    model.eval()
    B, _, H, W = cond.shape
    z = torch.as_tensor(rng.standard_normal((B, 9, H, W)), dtype=cond.dtype)
    steps = timestep_subset(sched.T, n_steps)
    if override is not None:
        z = override(z, steps[0])
    x0 = z
    for k, t in enumerate(steps):
        t_prev = steps[k + 1] if k + 1 < len(steps) else 0
        tt = torch.full((B,), t, dtype=torch.long)
        v = model(z, cond, tt, tag)
        x0 = predict_x0(z, v, t, sched).clamp(-1.0, 1.0)
        eps = predict_eps(z, v, t, sched)
        a_prev = float(sched.alpha_bar[t_prev])
        z = np.sqrt(a_prev) * x0 + np.sqrt(1.0 - a_prev) * eps
        if override is not None:
            z = override(z, t_prev)
    # at t_prev = 0 the latent is the clean estimate (possibly overridden)
    return z.clamp(-1.0, 1.0)


def sample(model: Denoiser, cond: torch.Tensor, tag, sched: NoiseSchedule, n_steps: int,
           rng: np.random.Generator, override: Optional[Override] = None) -> MaterialSet:
    """Sample one MaterialSet for a single ``(C, H, W)`` conditioning tensor."""
    if cond.ndim != 3:
        raise ValueError("sample expects a single (C, H, W) conditioning tensor; use sample_latent for batches")
    x = sample_latent(model, cond[None], torch.as_tensor([tag]), sched, n_steps, rng,
                      None if override is None else _batched(override))
    return model_to_materials(x[0])


def _batched(override: Override) -> Override:
    return lambda z, t: override(z[0], t)[None]
