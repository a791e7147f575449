"""Multi-layer contractive autoencoders with an exact full-encoder Jacobian penalty."""

from .models import (AutoencoderModel, EncoderSpec, decode, dumps_model, encode, init_model, loads_model,
                     loss, pca_fit, reconstruct)
from .penalty import ForwardTrace, deepcae_penalty, stacked_penalty
from .train import DivergedError, TrainConfig, fit, successive_halving_search

__version__ = "0.1.0"

__all__ = [
    "AutoencoderModel", "EncoderSpec", "ForwardTrace", "DivergedError", "TrainConfig",
    "decode", "deepcae_penalty", "dumps_model", "encode", "fit", "init_model", "loads_model", "loss",
    "pca_fit", "reconstruct", "stacked_penalty", "successive_halving_search",
]
