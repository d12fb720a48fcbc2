"""Noisy-label training: adaptive class-balanced selection, mean-teacher correction, re-weighting."""

from .dataset import LabeledDataset, NoiseSpec, augment, generate_blobs, inject_noise
from .errors import ConfigError, NonFiniteLossError
from .model import ModelParams, cosine_lr, forward, init_params, loss_and_grads, softmax_probs
from .trainer import AblationSpec, TrainConfig, Trainer

__version__ = "0.1.0"
