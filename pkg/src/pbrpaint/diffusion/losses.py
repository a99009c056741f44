"""Training objectives: v-prediction MSE, pyramid rendering loss and per-component L2."""
from __future__ import annotations

import warnings
from typing import Sequence

import torch
import torch.nn.functional as F

from ..geometry.raster import GBuffer
from ..material import DimensionError, MaterialSet
from ..shading import LightingRig, render
from .schedule import unit_channels

PYRAMID_LEVELS = 4
MIN_PYRAMID_SIZE = 2  # the coarsest level keeps at least this many pixels per side


def loss_v(pred: torch.Tensor, target: torch.Tensor, n_modalities: int = 3) -> torch.Tensor:
    """MSE per modality (consecutive channel groups), averaged equally over modalities."""
    if pred.shape != target.shape:
        raise DimensionError(f"prediction {tuple(pred.shape)} vs target {tuple(target.shape)}")
    groups = torch.chunk((pred - target) ** 2, n_modalities, dim=-3)
    return sum(g.mean() for g in groups) / n_modalities


def _gaussian_down(img: torch.Tensor) -> torch.Tensor:
    """Separable [1 4 6 4 1]/16 blur followed by 2x decimation; ``img`` is (C, H, W)."""
    k = torch.tensor([1.0, 4.0, 6.0, 4.0, 1.0], dtype=img.dtype) / 16.0
    C = img.shape[0]
    x = img[None]
    x = F.conv2d(F.pad(x, (2, 2, 0, 0), mode="replicate"), k.view(1, 1, 1, 5).expand(C, 1, 1, 5), groups=C)
    x = F.conv2d(F.pad(x, (0, 0, 2, 2), mode="replicate"), k.view(1, 1, 5, 1).expand(C, 1, 5, 1), groups=C)
    return x[0, :, ::2, ::2]


def _gradients(x: torch.Tensor) -> tuple[torch.Tensor, torch.Tensor]:
    gx = torch.zeros_like(x)
    gy = torch.zeros_like(x)
    gx[:, :, :-1] = x[:, :, 1:] - x[:, :, :-1]
    gy[:, :-1, :] = x[:, 1:, :] - x[:, :-1, :]
    return gx, gy


def pyramid_features(img: torch.Tensor, levels: int = PYRAMID_LEVELS, warn: bool = True) -> list[torch.Tensor]:
    """Gaussian pyramid of an ``(H, W, 3)`` image; level ``l`` is ``(9, H/2^l, W/2^l)``:
    colour plus horizontal and vertical forward differences."""
    x = torch.as_tensor(img).permute(2, 0, 1)
    size = min(x.shape[1:])
    usable = 1
    while usable < levels and size // 2 ** usable >= MIN_PYRAMID_SIZE:
        usable += 1
    if usable < levels and warn:
        warnings.warn(f"{size}px image supports only {usable} pyramid levels", stacklevel=2)
    feats = []
    for l in range(usable):
        if l:
            x = _gaussian_down(x)
        gx, gy = _gradients(x)
        feats.append(torch.cat([x, gx, gy], 0))
    return feats


def feature_distance(a: Sequence[torch.Tensor], b: Sequence[torch.Tensor]) -> torch.Tensor:
    """Sum over levels of the per-level mean squared difference."""
    return sum(((fa - fb) ** 2).mean() for fa, fb in zip(a, b))


def render_unit(x_unit: Sequence[torch.Tensor], gbuf: GBuffer, rig: LightingRig) -> torch.Tensor:
    albedo, rough, metal, bump = x_unit
    return render(gbuf, MaterialSet(albedo, rough, metal, bump), rig)


def loss_render(x_hat, gbuf: GBuffer, rig: LightingRig, gt_render: torch.Tensor,
                levels: int = PYRAMID_LEVELS) -> torch.Tensor:
    """Pyramid feature distance between a render of ``x_hat`` and ``gt_render``.

    ``x_hat`` is either a MaterialSet (arrays or tensors) or a ``(9, H, W)``
    model-space tensor, which is clamped to [0, 1] differentiably.
    """
    if isinstance(x_hat, torch.Tensor):
        r_hat = render_unit(unit_channels(x_hat), gbuf, rig)
    else:
        r_hat = render(gbuf, x_hat, rig)
    gt_render = torch.as_tensor(gt_render, dtype=r_hat.dtype)
    return feature_distance(pyramid_features(r_hat, levels, warn=False),
                            pyramid_features(gt_render, levels, warn=False))


def loss_l2(x_hat: torch.Tensor, x0: torch.Tensor) -> torch.Tensor:
    """Mean squared error of the material estimate per component (albedo, roughness,
    metallic, bump), averaged over components. Inputs are model-space batches."""
    if x_hat.shape != x0.shape:
        raise DimensionError(f"estimate {tuple(x_hat.shape)} vs target {tuple(x0.shape)}")
    d = (x_hat - x0) ** 2
    parts = (d[:, 0:3], d[:, 4:5], d[:, 5:6], d[:, 6:9])
    return sum(p.mean() for p in parts) / len(parts)
