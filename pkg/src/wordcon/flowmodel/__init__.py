"""Rectified-flow mini DiT: schedule, joint-attention model, Euler sampler, parameter files."""

from .config import FONT_ORDER, ModelConfig
from .container import ContainerIntegrityError, load_model, load_tensors, save_model, save_tensors
from .model import (
    AttentionRecord,
    Condition,
    ConditionBatch,
    FlowDiT,
    extract_word_attention,
    patchify,
    unpatchify,
    word_attention_maps,
)
from .sampling import euler_integrate, initial_noise, sample
from .schedule import (
    LINEAR,
    LatentState,
    NoiseSchedule,
    conditional_target,
    forward_process,
    image_to_latent,
    latent_to_image,
    noise_schedule,
)

__all__ = [
    "AttentionRecord",
    "Condition",
    "ConditionBatch",
    "ContainerIntegrityError",
    "FONT_ORDER",
    "FlowDiT",
    "LINEAR",
    "LatentState",
    "ModelConfig",
    "NoiseSchedule",
    "conditional_target",
    "euler_integrate",
    "extract_word_attention",
    "forward_process",
    "image_to_latent",
    "initial_noise",
    "latent_to_image",
    "load_model",
    "load_tensors",
    "noise_schedule",
    "patchify",
    "sample",
    "save_model",
    "save_tensors",
    "unpatchify",
    "word_attention_maps",
]
