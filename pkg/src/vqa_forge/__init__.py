"""Masked-LSTM question answering over text stories and image features.

The LSTM recurrence runs in a compiled extension when it is available and in
numpy otherwise; ``vqa_forge.BACKEND`` says which one was picked.
"""
from .kernels import BACKEND
from .models import ModelConfig, build_model, config_for_model, load_weights, save_weights
from .text import Vocabulary

__version__ = "0.1.0"

__all__ = ["BACKEND", "ModelConfig", "Vocabulary", "build_model", "config_for_model", "load_weights",
           "save_weights", "__version__"]
