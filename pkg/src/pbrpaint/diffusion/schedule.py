"""Cosine noise schedule, forward noising and the v-parameterization."""
from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Optional, Union

import numpy as np
import torch

from ..material import DimensionError, MaterialSet

COSINE_OFFSET = 0.008

TimeLike = Union[int, torch.Tensor, np.ndarray]


@dataclass(frozen=True)
class NoiseSchedule:
    """``alpha_bar[t]`` for t = 0..T, with ``alpha_bar[0] == 1``."""

    T: int
    alpha_bar: np.ndarray  # float64, length T + 1

    def _gather(self, t: TimeLike, ref: torch.Tensor) -> torch.Tensor:
        ab = torch.as_tensor(self.alpha_bar, dtype=torch.float64)
        t = torch.as_tensor(t, dtype=torch.long)
        if torch.any(t < 0) or torch.any(t > self.T):
            raise ValueError(f"timestep outside [0, {self.T}]")
        a = ab[t].to(ref.dtype)
        # broadcast a per-sample timestep over (C, H, W)
        if a.ndim == 1 and ref.ndim > 1:
            a = a.reshape(-1, *([1] * (ref.ndim - 1)))
        return a

    def coefficients(self, t: TimeLike, ref: torch.Tensor) -> tuple[torch.Tensor, torch.Tensor]:
        a = self._gather(t, ref)
        return a.sqrt(), (1.0 - a).sqrt()


def make_schedule(T: int, s: float = COSINE_OFFSET) -> NoiseSchedule:
    if int(T) != T or T < 2:
        raise ValueError(f"schedule needs T >= 2, got {T}")
    t = np.arange(T + 1, dtype=np.float64)
    f = np.cos((t / T + s) / (1 + s) * math.pi / 2) ** 2
    ab = f / f[0]
    ab[0] = 1.0
    return NoiseSchedule(int(T), ab)


def _check(x0: torch.Tensor, eps: torch.Tensor):
    if tuple(x0.shape) != tuple(eps.shape):
        raise DimensionError(f"x0 {tuple(x0.shape)} vs eps {tuple(eps.shape)}")


def add_noise(x0, eps, t: TimeLike, sched: NoiseSchedule) -> torch.Tensor:
    x0, eps = torch.as_tensor(x0), torch.as_tensor(eps)
    _check(x0, eps)
    a, b = sched.coefficients(t, x0)
    return a * x0 + b * eps


def v_target(x0, eps, t: TimeLike, sched: NoiseSchedule) -> torch.Tensor:
    x0, eps = torch.as_tensor(x0), torch.as_tensor(eps)
    _check(x0, eps)
    a, b = sched.coefficients(t, x0)
    return a * eps - b * x0


def predict_x0(z, v, t: TimeLike, sched: NoiseSchedule) -> torch.Tensor:
    """Unclamped ``sqrt(ab) z - sqrt(1 - ab) v`` in model space."""
    z, v = torch.as_tensor(z), torch.as_tensor(v)
    _check(z, v)
    a, b = sched.coefficients(t, z)
    return a * z - b * v


def predict_eps(z, v, t: TimeLike, sched: NoiseSchedule) -> torch.Tensor:
    z, v = torch.as_tensor(z), torch.as_tensor(v)
    a, b = sched.coefficients(t, z)
    return b * z + a * v


# --- model space <-> MaterialSet --------------------------------------------
# model layout: 9 channels (albedo 3, packed RM 3, bump 3), values in [-1, 1]

def materials_to_model(m: MaterialSet, dtype=torch.float32) -> torch.Tensor:
    """``(9, H, W)`` tensor in [-1, 1]."""
    return torch.as_tensor(m.packed(), dtype=dtype).permute(2, 0, 1) * 2.0 - 1.0


def model_to_unit(x: torch.Tensor) -> torch.Tensor:
    return torch.clamp((x + 1.0) * 0.5, 0.0, 1.0)


def model_to_materials(x: torch.Tensor, rm_tol: Optional[float] = None) -> MaterialSet:
    """Rescale a ``(9, H, W)`` model tensor to [0, 1], clamp and unpack.

    ``rm_tol`` bounds the packed red channel's deviation from 1; ``None``
    skips the check (sampled predictions carry a free red channel).
    """
    u = model_to_unit(x.detach()).permute(1, 2, 0).cpu().numpy().astype(np.float32)
    return MaterialSet.from_packed(u, rm_tol=rm_tol)


def reconstruct_x0(z, v, t: TimeLike, sched: NoiseSchedule, rm_tol: Optional[float] = None):
    """Clamped material estimate for a single ``(9, H, W)`` latent, or a list for a batch."""
    x = predict_x0(z, v, t, sched)
    if x.ndim == 4:
        return [model_to_materials(xi, rm_tol) for xi in x]
    return model_to_materials(x, rm_tol)


def unit_channels(x: torch.Tensor):
    """Differentiable split of a ``(9, H, W)`` model tensor into [0, 1]
    material arrays laid out ``(H, W, C)`` as the renderer expects."""
    u = model_to_unit(x).permute(1, 2, 0)
    return u[..., 0:3], u[..., 4], u[..., 5], u[..., 6:9]
