from __future__ import annotations

from typing import Callable

import torch

from .model import ConditionBatch, FlowDiT

VelocityFn = Callable[[torch.Tensor, torch.Tensor], torch.Tensor]


def euler_integrate(velocity: VelocityFn, noise: torch.Tensor, steps: int) -> torch.Tensor:
    """Integrate dz/dt = v(z, t) from t=1 down to t=0 with uniform steps of -1/steps."""
    if steps < 1:
        raise ValueError(f"steps must be >= 1, got {steps}")
    z = noise
    dt = 1.0 / steps
    for i in range(steps):
        t = torch.full((z.shape[0],), 1.0 - i * dt, dtype=z.dtype)
        z = z - dt * velocity(z, t)
    return z


def initial_noise(shape: tuple[int, ...], seed: int, dtype=torch.float32) -> torch.Tensor:
    gen = torch.Generator().manual_seed(int(seed))
    return torch.randn(shape, generator=gen, dtype=dtype)


@torch.no_grad()
def sample(
    model: FlowDiT,
    cond,
    steps: int,
    seed: int | list[int],
    adapters=None,
) -> torch.Tensor:
    """Generate latents for a batch of conditions.

    ``cond`` is a ConditionBatch or a sequence of Condition.
    ``seed`` may be a single seed for the whole batch or one seed per condition;
    per-condition seeds make each row independent of batch composition.
    """
    cfg = model.config
    if not isinstance(cond, ConditionBatch):
        cond = ConditionBatch.from_conditions(list(cond), cfg)
    shape = (cfg.channels, cfg.image_size, cfg.image_size)
    dtype = next(model.parameters()).dtype
    if isinstance(seed, int):
        noise = initial_noise((len(cond), *shape), seed, dtype)
    else:
        if len(seed) != len(cond):
            raise ValueError("need one seed per condition")
        noise = torch.stack([initial_noise(shape, s, dtype) for s in seed])

    def velocity(z, t):
        return model(z, t, cond, adapters)[0]

    return euler_integrate(velocity, noise, steps)
