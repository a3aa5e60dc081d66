"""Linear rectified-flow forward process: z_t = (1 - t) x0 + t eps."""

from __future__ import annotations

from dataclasses import dataclass
from typing import Callable

import torch


@dataclass(frozen=True)
class NoiseSchedule:
    a: Callable[[float], float]
    b: Callable[[float], float]


LINEAR = NoiseSchedule(a=lambda t: 1.0 - t, b=lambda t: t)


@dataclass
class LatentState:
    z: torch.Tensor  # (B, C, H, W)
    t: torch.Tensor  # (B,) in [0, 1]


def _check_t(t) -> torch.Tensor:
    # Python floats go to float64 so float64 latents see t without rounding.
    t = t if isinstance(t, torch.Tensor) else torch.as_tensor(t, dtype=torch.float64)
    if not torch.isfinite(t).all() or (t < 0).any() or (t > 1).any():
        raise ValueError(f"t must lie in [0, 1], got {t}")
    return t


def noise_schedule(t: float) -> tuple[float, float]:
    _check_t(t)
    return LINEAR.a(float(t)), LINEAR.b(float(t))


def _broadcast_t(t, like: torch.Tensor) -> torch.Tensor:
    t = _check_t(t).to(dtype=like.dtype)
    if t.ndim == 0:
        return t
    return t.reshape(-1, *([1] * (like.ndim - 1)))


def forward_process(x0: torch.Tensor, eps: torch.Tensor, t) -> LatentState:
    if x0.shape != eps.shape:
        raise ValueError(f"x0 shape {tuple(x0.shape)} != eps shape {tuple(eps.shape)}")
    tt = _broadcast_t(t, x0)
    z = (1.0 - tt) * x0 + tt * eps
    t_vec = _check_t(t).to(x0.dtype).reshape(-1).expand(x0.shape[0])
    return LatentState(z=z, t=t_vec)


def conditional_target(x0: torch.Tensor, eps: torch.Tensor, t=None) -> torch.Tensor:
    """d z_t / dt under the linear schedule; constant in t."""
    if x0.shape != eps.shape:
        raise ValueError(f"x0 shape {tuple(x0.shape)} != eps shape {tuple(eps.shape)}")
    if t is not None:
        _check_t(t)
    return eps - x0


def image_to_latent(images: torch.Tensor) -> torch.Tensor:
    """Channels-last (B, H, W, C) images in [0, 1] -> channels-first latents in [-1, 1]."""
    return images.permute(0, 3, 1, 2) * 2.0 - 1.0


def latent_to_image(z: torch.Tensor) -> torch.Tensor:
    """Inverse of :func:`image_to_latent`, clamped to [0, 1], channels-last."""
    return ((z + 1.0) / 2.0).clamp(0.0, 1.0).permute(0, 2, 3, 1)
