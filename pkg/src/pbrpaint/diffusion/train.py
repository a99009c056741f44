"""Batch assembly, the training step and a small training loop with checkpointing."""
from __future__ import annotations

import dataclasses
import logging
import math
import time
from dataclasses import dataclass, field
from pathlib import Path
from typing import Callable, Optional, Sequence, TextIO

import numpy as np
import torch

from ..dataset import RefinerSample, TrainingSample, make_training_sample
from ..geometry.raster import GBuffer
from ..material import MaterialSet
from ..shading import LightCategory, render, sample_lighting
from .checkpoint import load_model, restore_optimizer, save_model
from .losses import PYRAMID_LEVELS, loss_l2, loss_render, loss_v
from .model import Denoiser
from .schedule import NoiseSchedule, add_noise, make_schedule, materials_to_model, predict_x0, v_target

log = logging.getLogger(__name__)

RENDER_CATEGORIES = (LightCategory.POINT, LightCategory.AREA, LightCategory.ENVIRONMENT)
LOG_COLUMNS = ("step", "loss_v", "loss_p", "loss_2", "total", "wall_ms")


@dataclass
class TrainConfig:
    steps: int = 1000
    batch_size: int = 8
    lr: float = 5e-5
    lambda_p: float = 0.1
    lambda_2: float = 1.0
    grad_clip: float = 1.0
    T: int = 1000
    seed: int = 0
    ckpt_every: int = 0  # 0 = only at the end
    log_every: int = 1


class NonFiniteLossError(RuntimeError):
    def __init__(self, step: int, term: str, max_grad: float):
        super().__init__(f"non-finite loss at step {step}: term {term}, max|grad| = {max_grad:.4g}")
        self.step, self.term, self.max_grad = step, term, max_grad


@dataclass
class Batch:
    x0: torch.Tensor  # (B, 9, H, W) model space
    cond: torch.Tensor  # (B, C, H, W)
    tag: torch.Tensor  # (B,)
    gbufs: Optional[list[GBuffer]] = None  # present for view-space batches
    gt: Optional[list[MaterialSet]] = None

    def to(self, dtype) -> "Batch":
        np_dtype = np.float64 if dtype == torch.float64 else np.float32
        gt = None if self.gt is None else [m.astype(np_dtype) for m in self.gt]
        return dataclasses.replace(self, x0=self.x0.to(dtype), cond=self.cond.to(dtype), gt=gt)

    def __len__(self) -> int:
        return self.x0.shape[0]


def _signed(a) -> torch.Tensor:
    return torch.as_tensor(np.asarray(a, np.float32)) * 2.0 - 1.0


def estimator_condition(image: np.ndarray, confidence: np.ndarray, normal: np.ndarray,
                        use_confidence: bool = True) -> torch.Tensor:
    """``(C, H, W)`` conditioning: image, optional confidence, normal map, each mapped to [-1, 1]."""
    parts = [_signed(image).permute(2, 0, 1)]
    if use_confidence:
        parts.append(_signed(confidence)[None])
    parts.append(_signed(normal).permute(2, 0, 1))
    return torch.cat(parts, 0)


def refiner_condition(masked: MaterialSet, hole: np.ndarray, ccm: np.ndarray) -> torch.Tensor:
    """``(13, R, R)``: masked materials (packed), hole mask, CCM; each mapped to [-1, 1]."""
    return torch.cat([materials_to_model(masked), _signed(hole)[None], _signed(ccm).permute(2, 0, 1)], 0)


def estimator_batch(samples: Sequence[TrainingSample], use_confidence: bool = True) -> Batch:
    if not samples:
        raise ValueError("empty batch")
    x0 = torch.stack([materials_to_model(s.gt) for s in samples])
    cond = torch.stack([estimator_condition(s.image, s.confidence, s.normal, use_confidence) for s in samples])
    tag = torch.tensor([s.tag_id for s in samples], dtype=torch.long)
    return Batch(x0, cond, tag, [s.gbuf for s in samples], [s.gt for s in samples])


def refiner_batch(samples: Sequence[RefinerSample]) -> Batch:
    if not samples:
        raise ValueError("empty batch")
    x0 = torch.stack([materials_to_model(s.gt) for s in samples])
    cond = torch.stack([refiner_condition(s.inputs, s.hole, s.ccm) for s in samples])
    return Batch(x0, cond, torch.zeros(len(samples), dtype=torch.long))


@dataclass
class StepDraw:
    """Everything random in one training step, so a step can be replayed exactly."""

    t: torch.Tensor
    eps: torch.Tensor
    rigs: list

    @classmethod
    def sample(cls, batch: Batch, sched: NoiseSchedule, rng: np.random.Generator, with_rigs: bool) -> "StepDraw":
        B = len(batch)
        t = torch.as_tensor(rng.integers(1, sched.T + 1, size=B), dtype=torch.long)
        eps = torch.as_tensor(rng.standard_normal(tuple(batch.x0.shape)), dtype=batch.x0.dtype)
        rigs = []
        if with_rigs and batch.gbufs is not None:
            for g in batch.gbufs:
                cat = RENDER_CATEGORIES[int(rng.integers(len(RENDER_CATEGORIES)))]
                rigs.append(sample_lighting(cat, rng, toward=g.camera.position))
        return cls(t, eps, rigs)


def compute_losses(model: Denoiser, batch: Batch, sched: NoiseSchedule, draw: StepDraw,
                   lambda_p: float, lambda_2: float, levels: int = PYRAMID_LEVELS) -> dict[str, torch.Tensor]:
    """Total objective ``L_v + lambda_p L_p + lambda_2 L_2`` for one batch and one random draw."""
    x0 = batch.x0
    z = add_noise(x0, draw.eps, draw.t, sched)
    v = v_target(x0, draw.eps, draw.t, sched)
    v_pred = model(z, batch.cond, draw.t, batch.tag)
    lv = loss_v(v_pred, v)
    x_hat = predict_x0(z, v_pred, draw.t, sched)
    zero = torch.zeros((), dtype=x0.dtype)
    l2 = loss_l2(x_hat, x0) if lambda_2 else zero
    lp = zero
    if lambda_p and draw.rigs:
        terms = []
        for b, (g, rig) in enumerate(zip(batch.gbufs, draw.rigs)):
            with torch.no_grad():
                gt_render = render(g, batch.gt[b], rig)
            terms.append(loss_render(x_hat[b], g, rig, gt_render, levels))
        lp = torch.stack(terms).mean()
    total = lv + lambda_p * lp + lambda_2 * l2
    return {"loss_v": lv, "loss_p": lp, "loss_2": l2, "total": total}


def _max_grad(model) -> float:
    g = [p.grad.abs().max().item() for p in model.parameters() if p.grad is not None]
    return max(g) if g else 0.0


def train_step(model: Denoiser, batch: Batch, sched: NoiseSchedule, optimizer: torch.optim.Optimizer,
               rng: np.random.Generator, cfg: TrainConfig, step: int = 0) -> dict[str, float]:
    """One optimizer update; returns the loss terms as floats plus timing."""
    t0 = time.perf_counter()
    model.train()
    draw = StepDraw.sample(batch, sched, rng, with_rigs=cfg.lambda_p != 0)
    losses = compute_losses(model, batch, sched, draw, cfg.lambda_p, cfg.lambda_2)
    optimizer.zero_grad(set_to_none=True)
    losses["total"].backward()
    for name in ("loss_v", "loss_p", "loss_2", "total"):
        if not torch.isfinite(losses[name]):
            raise NonFiniteLossError(step, name, _max_grad(model))
    grad_norm = torch.nn.utils.clip_grad_norm_(model.parameters(), cfg.grad_clip if cfg.grad_clip > 0 else math.inf)
    if not torch.isfinite(grad_norm):
        raise NonFiniteLossError(step, "gradient", _max_grad(model))
    optimizer.step()
    out = {k: float(v.detach()) for k, v in losses.items()}
    out["grad_norm"] = float(grad_norm)
    out["wall_ms"] = 1000.0 * (time.perf_counter() - t0)
    return out


def make_optimizer(model: Denoiser, cfg: TrainConfig) -> torch.optim.Optimizer:
    return torch.optim.Adam(model.parameters(), lr=cfg.lr)


BatchSource = Callable[[np.random.Generator], Batch]


@dataclass
class TrainResult:
    model: Denoiser
    history: list[dict[str, float]] = field(default_factory=list)
    step: int = 0


def format_log_line(step: int, m: dict[str, float]) -> str:
    return "\t".join([str(step)] + [f"{m[k]:.6g}" for k in LOG_COLUMNS[1:]])


def train(model: Denoiser, source: BatchSource, cfg: TrainConfig, kind: str = "estimator",
          ckpt_path: Optional[Path] = None, log_file: Optional[TextIO] = None,
          resume: Optional[Path] = None, extra_header: Optional[dict] = None) -> TrainResult:
    """Run ``cfg.steps`` updates, drawing each batch from ``source``.

    The training stream is a pure function of ``cfg.seed``; resuming from a
    checkpoint restores the optimizer moments and the RNG state.
    """
    sched = make_schedule(cfg.T)
    optimizer = make_optimizer(model, cfg)
    rng = np.random.default_rng(cfg.seed)
    start = 0
    if resume is not None:
        m2, header, tensors = load_model(resume, expect_kind=kind)
        model.load_state_dict(m2.state_dict())
        if "optimizer" in header:
            restore_optimizer(optimizer, header["optimizer"], tensors)
        start = int(header.get("step", 0))
        if "rng_state" in header:
            rng.bit_generator.state = header["rng_state"]
    result = TrainResult(model, step=start)
    header_extra = dict(extra_header or {})
    header_extra["train"] = dataclasses.asdict(cfg)

    def checkpoint(step):
        if ckpt_path is not None:
            save_model(ckpt_path, model, kind, dict(header_extra, step=step, rng_state=rng.bit_generator.state),
                       optimizer)

    for step in range(start + 1, cfg.steps + 1):
        batch = source(rng)
        m = train_step(model, batch, sched, optimizer, rng, cfg, step)
        result.history.append(m)
        result.step = step
        if log_file is not None and (step % max(cfg.log_every, 1) == 0 or step == cfg.steps):
            log_file.write(format_log_line(step, m) + "\n")
            log_file.flush()
        if cfg.ckpt_every and step % cfg.ckpt_every == 0:
            checkpoint(step)
    checkpoint(result.step)
    model.eval()
    return result


# --- batch sources ---------------------------------------------------------

def fixed_source(batch: Batch) -> BatchSource:
    """Always the same batch (overfitting runs)."""
    return lambda rng: batch


def pool_source(pool: Sequence, batch_size: int, make: Callable[[list], Batch]) -> BatchSource:
    def draw(rng):
        idx = rng.integers(len(pool), size=batch_size)
        return make([pool[i] for i in idx])
    return draw


def view_source(views: Sequence, batch_size: int, use_confidence: bool = True,
                scenarios=None) -> BatchSource:
    """Fresh estimator samples each step: random view, scenario and composite."""
    def draw(rng):
        idx = rng.integers(len(views), size=batch_size)
        samples = []
        for i in idx:
            scen = None if scenarios is None else scenarios[int(rng.integers(len(scenarios)))]
            samples.append(make_training_sample(views[i], rng, scen))
        return estimator_batch(samples, use_confidence)
    return draw
