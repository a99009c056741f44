"""Toy-scale training runs, held-out evaluation and the ablation variants.

Every run is a pure function of its :class:`ExperimentConfig`. Trained
weights are cached on disk under a hash of the config, so repeated
evaluations (tests, the CLI) reuse them.
"""
from __future__ import annotations

import dataclasses
import hashlib
import json
import logging
import os
from dataclasses import dataclass
from functools import lru_cache
from pathlib import Path
from typing import Optional, Sequence

import numpy as np
import torch

from .dataset import ViewData, build_corpus, make_training_sample
from .diffusion.checkpoint import load_model
from .diffusion.model import ESTIMATOR_COND, ESTIMATOR_COND_NO_CONF, Denoiser, ModelConfig, build_model
from .diffusion.sampler import sample_latent
from .diffusion.schedule import make_schedule, model_to_materials
from .diffusion.train import TrainConfig, estimator_batch, train, view_source
from .geometry.camera import camera_ring
from .material import LightingScenario, MaterialSet

log = logging.getLogger(__name__)

# bump when a change to training or data generation invalidates cached weights
CACHE_VERSION = 3
MATERIALS = ("albedo", "roughness", "metallic", "bump")
SCENARIOS = (LightingScenario.REALISTIC, LightingScenario.LIGHT_FREE, LightingScenario.GENERATED)
HELDOUT_OFFSET = 100_000  # held-out objects use indices far from the training range


@dataclass(frozen=True)
class ExperimentConfig:
    n_objects: int = 64
    n_views: int = 10
    resolution: int = 64
    uv_res: int = 128
    data_seed: int = 0
    width: int = 32
    heads: int = 3
    use_confidence: bool = True
    lambda_p: float = 0.1
    lambda_2: float = 1.0
    steps: int = 5000
    batch_size: int = 8
    lr: float = 5e-4
    seed: int = 0
    n_heldout: int = 8
    eval_views: int = 6
    eval_steps: int = 20

    def key(self) -> str:
        blob = json.dumps(dict(dataclasses.asdict(self), cache_version=CACHE_VERSION), sort_keys=True)
        return hashlib.sha256(blob.encode()).hexdigest()[:16]

    def model_config(self) -> ModelConfig:
        cond = ESTIMATOR_COND if self.use_confidence else ESTIMATOR_COND_NO_CONF
        return ModelConfig(cond_channels=cond, width=self.width, heads=self.heads)

    def train_config(self) -> TrainConfig:
        return TrainConfig(steps=self.steps, batch_size=self.batch_size, lr=self.lr, lambda_p=self.lambda_p,
                           lambda_2=self.lambda_2, seed=self.seed)


# Ablation budget: identical for every variant; small enough for twelve runs on one core.
ABLATION_BASE = ExperimentConfig(n_objects=64, n_views=6, resolution=32, uv_res=64, width=16, steps=2000,
                                 n_heldout=8, eval_views=6, eval_steps=20)
ABLATION_SEEDS = (0, 1, 2)
VARIANTS = {
    "full": {},
    "no_confidence": {"use_confidence": False},
    "single_head": {"heads": 1},
    "no_render_loss": {"lambda_p": 0.0},
}


def variant(base: ExperimentConfig, name: str, seed: int) -> ExperimentConfig:
    return dataclasses.replace(base, seed=seed, **VARIANTS[name])


def cache_dir() -> Path:
    d = Path(os.environ.get("PBRPAINT_CACHE", Path.home() / ".cache" / "pbrpaint"))
    d.mkdir(parents=True, exist_ok=True)
    return d


# --- data ------------------------------------------------------------------

@lru_cache(maxsize=4)
def _views(n_objects: int, n_views: int, resolution: int, uv_res: int, seed: int, start: int) -> tuple:
    cams = camera_ring(n_views, resolution)
    records = build_corpus(n_objects, cams, seed, uv_res=uv_res, start=start)
    return tuple(v for r in records for v in r.views)


def training_views(cfg: ExperimentConfig) -> tuple[ViewData, ...]:
    return _views(cfg.n_objects, cfg.n_views, cfg.resolution, cfg.uv_res, cfg.data_seed, 0)


def heldout_samples(cfg: ExperimentConfig) -> dict[LightingScenario, list]:
    """Fixed evaluation inputs per scenario, from objects never seen in training."""
    views = _views(cfg.n_heldout, cfg.eval_views, cfg.resolution, cfg.uv_res, cfg.data_seed, HELDOUT_OFFSET)
    out = {}
    for k, scen in enumerate(SCENARIOS):
        rng = np.random.default_rng([cfg.data_seed, 17, k])
        out[scen] = [make_training_sample(v, rng, scen) for v in views]
    return out


# --- training --------------------------------------------------------------

def checkpoint_path(cfg: ExperimentConfig) -> Path:
    return cache_dir() / f"estimator-{cfg.key()}.ckpt"


def train_estimator(cfg: ExperimentConfig, use_cache: bool = True, log_path: Optional[Path] = None) -> Denoiser:
    path = checkpoint_path(cfg)
    if use_cache and path.exists():
        model, header, _ = load_model(path, expect_kind="estimator")
        if header.get("step") == cfg.steps:
            return model
    torch.manual_seed(cfg.seed)
    model = build_model(cfg.model_config(), seed=cfg.seed)
    source = view_source(training_views(cfg), cfg.batch_size, cfg.use_confidence)
    extra = {"experiment": dataclasses.asdict(cfg)}
    log_path = log_path or path.with_suffix(".log")
    with open(log_path, "w") as f:
        train(model, source, cfg.train_config(), "estimator", ckpt_path=path, log_file=f, extra_header=extra)
    return model


def untrained_estimator(cfg: ExperimentConfig) -> Denoiser:
    return build_model(cfg.model_config(), seed=cfg.seed).eval()


# --- evaluation ------------------------------------------------------------

def material_rmse(pred: MaterialSet, gt: MaterialSet, mask: np.ndarray) -> dict[str, float]:
    """Per-material RMSE over masked pixels, values in [0, 1]."""
    out = {}
    for name in MATERIALS:
        p = np.asarray(getattr(pred, name), np.float64)[mask]
        g = np.asarray(getattr(gt, name), np.float64)[mask]
        out[name] = float(np.sqrt(np.mean((p - g) ** 2))) if p.size else 0.0
    out["mean"] = float(np.mean([out[n] for n in MATERIALS]))
    return out


def predict(model: Denoiser, samples: Sequence, use_confidence: bool, n_steps: int, seed: int,
            batch: int = 32) -> list[MaterialSet]:
    sched = make_schedule(1000)
    rng = np.random.default_rng(seed)
    preds = []
    for i in range(0, len(samples), batch):
        chunk = samples[i:i + batch]
        b = estimator_batch(chunk, use_confidence)
        x = sample_latent(model, b.cond, b.tag, sched, n_steps, rng)
        preds += [model_to_materials(xi) for xi in x]
    return preds


def evaluate(model: Denoiser, cfg: ExperimentConfig, seed: int = 1234) -> dict[str, dict[str, float]]:
    """Held-out RMSE per scenario (averaged over samples) plus ``overall`` (mean over scenarios)."""
    use_conf = model.config.cond_channels == ESTIMATOR_COND
    result = {}
    for scen, samples in heldout_samples(cfg).items():
        preds = predict(model, samples, use_conf, cfg.eval_steps, seed)
        rows = [material_rmse(p, s.gt, s.gbuf.coverage) for p, s in zip(preds, samples)]
        result[scen.value] = {k: float(np.mean([r[k] for r in rows])) for k in rows[0]}
    result["overall"] = {k: float(np.mean([result[s.value][k] for s in SCENARIOS])) for k in result[SCENARIOS[0].value]}
    return result


def eval_cache_path(cfg: ExperimentConfig, trained: bool) -> Path:
    return cache_dir() / f"eval-{cfg.key()}-{'trained' if trained else 'init'}.json"


def evaluate_cached(cfg: ExperimentConfig, trained: bool = True) -> dict[str, dict[str, float]]:
    path = eval_cache_path(cfg, trained)
    if path.exists():
        return json.loads(path.read_text())
    model = train_estimator(cfg) if trained else untrained_estimator(cfg)
    res = evaluate(model, cfg)
    path.write_text(json.dumps(res, indent=1, sort_keys=True))
    return res


def ablation_table(base: ExperimentConfig = ABLATION_BASE, seeds=ABLATION_SEEDS,
                   names: Sequence[str] = tuple(VARIANTS)) -> dict[str, list[float]]:
    """Overall held-out mean RMSE per variant and seed."""
    return {n: [evaluate_cached(variant(base, n, s))["overall"]["mean"] for s in seeds] for n in names}


# --- cache warm-up ---------------------------------------------------------

TOY = ExperimentConfig()


def _report(name: str, cfg: ExperimentConfig):
    res = evaluate_cached(cfg)
    init = evaluate_cached(cfg, trained=False)
    print(f"{name}\tseed={cfg.seed}\ttrained={res['overall']['mean']:.4f}\tuntrained={init['overall']['mean']:.4f}",
          flush=True)


def main(argv=None) -> int:
    """Train and evaluate the cached experiments: ``python -m pbrpaint.experiments [toy] [ablation]``."""
    import argparse

    p = argparse.ArgumentParser(prog="python -m pbrpaint.experiments")
    p.add_argument("which", nargs="*", default=["toy", "ablation"], choices=["toy", "ablation"])
    args = p.parse_args(argv)
    torch.set_num_threads(1)
    logging.basicConfig(level=logging.INFO, format="%(asctime)s\t%(message)s")
    if "toy" in args.which:
        _report("toy", TOY)
    if "ablation" in args.which:
        for seed in ABLATION_SEEDS:
            for name in VARIANTS:
                _report(name, variant(ABLATION_BASE, name, seed))
    return 0


if __name__ == "__main__":
    raise SystemExit(main())
