"""Pixel-space material diffusion: schedule, network, losses, training, sampling."""
from .checkpoint import CheckpointError, load_model, read_checkpoint, save_model, write_checkpoint
from .gradcheck import GradCheckResult, grad_check
from .losses import feature_distance, loss_l2, loss_render, loss_v, pyramid_features
from .model import (ESTIMATOR_COND, ESTIMATOR_COND_NO_CONF, REFINER_COND, Denoiser, ModelConfig,
                    build_model)
from .sampler import sample, sample_latent, timestep_subset
from .schedule import (NoiseSchedule, add_noise, make_schedule, materials_to_model, model_to_materials,
                       predict_eps, predict_x0, reconstruct_x0, v_target)
from .train import (Batch, NonFiniteLossError, StepDraw, TrainConfig, compute_losses, estimator_batch,
                    estimator_condition, refiner_batch, refiner_condition, train, train_step)
