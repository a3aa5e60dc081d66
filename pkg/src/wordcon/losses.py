"""Word masks and the three training losses: vanilla CFM, masked CFM, joint-attention."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
import torch

from .flowmodel.model import AttentionRecord, word_attention_maps

DEFAULT_LAMBDA_ATTN = 0.01


@dataclass
class MaskSet:
    """Per-word latent-grid masks (k, g, g); the union is derived, never stored separately."""

    word_masks: np.ndarray

    def __post_init__(self):
        self.word_masks = np.asarray(self.word_masks).astype(bool)
        if self.word_masks.ndim != 3:
            raise ValueError(f"word_masks must be (k, g, g), got shape {self.word_masks.shape}")

    @property
    def k(self) -> int:
        return self.word_masks.shape[0]

    @property
    def union(self) -> np.ndarray:
        return np.logical_or.reduce(self.word_masks, axis=0)

    @property
    def grid_shape(self) -> tuple[int, int]:
        return self.word_masks.shape[1:]

    def __eq__(self, other) -> bool:
        return isinstance(other, MaskSet) and np.array_equal(self.word_masks, other.word_masks)


@dataclass
class LossWeights:
    lambda_attn: float = DEFAULT_LAMBDA_ATTN

    def __post_init__(self):
        if self.lambda_attn < 0:
            raise ValueError("lambda_attn must be >= 0")


def downsample_mask(pixel_mask: np.ndarray, patch_size: int) -> np.ndarray:
    """Area-average each patch, then mark it as text iff at least half of its pixels are text."""
    mask = np.asarray(pixel_mask, dtype=np.float64)
    h, w = mask.shape
    if h % patch_size or w % patch_size:
        raise ValueError(f"mask shape {(h, w)} is not divisible by patch_size {patch_size}")
    pooled = mask.reshape(h // patch_size, patch_size, w // patch_size, patch_size).mean(axis=(1, 3))
    return pooled >= 0.5


def stack_masks(masksets: list[MaskSet], n_tokens: int, dtype=torch.float32):
    """Batch MaskSets into (word_masks (B, T, g, g), union (B, g, g), valid (B, T))."""
    g = masksets[0].grid_shape
    words = torch.zeros(len(masksets), n_tokens, *g, dtype=dtype)
    valid = torch.zeros(len(masksets), n_tokens, dtype=torch.bool)
    for i, ms in enumerate(masksets):
        if ms.k > n_tokens:
            raise ValueError(f"{ms.k} masks but only {n_tokens} text tokens")
        words[i, : ms.k] = torch.from_numpy(ms.word_masks.astype(np.float64)).to(dtype)
        valid[i, : ms.k] = True
    union = words.amax(dim=1)
    return words, union, valid


def cfm_loss(v_pred: torch.Tensor, target: torch.Tensor) -> torch.Tensor:
    if v_pred.shape != target.shape:
        raise ValueError(f"shape mismatch {tuple(v_pred.shape)} vs {tuple(target.shape)}")
    return ((v_pred - target) ** 2).mean()


def _expand_grid(union: torch.Tensor, like: torch.Tensor) -> torch.Tensor:
    """(B, g, g) or (g, g) grid mask -> (B, 1, H, W) pixel mask matching ``like`` (B, C, H, W)."""
    if union.ndim == 2:
        union = union[None]
    _, _, h, w = like.shape
    gh, gw = union.shape[-2:]
    if h % gh or w % gw or h // gh != w // gw:
        raise ValueError(f"mask grid {(gh, gw)} does not tile latent {(h, w)}")
    p = h // gh
    pixel = union.repeat_interleave(p, dim=-2).repeat_interleave(p, dim=-1)
    if pixel.shape[0] not in (1, like.shape[0]):
        raise ValueError(f"mask batch {pixel.shape[0]} != latent batch {like.shape[0]}")
    return pixel[:, None].to(like.dtype)


def masked_loss(v_pred: torch.Tensor, target: torch.Tensor, union: torch.Tensor) -> torch.Tensor:
    """Mean of (M_k * (v - u))^2 over *all* elements, so an all-ones mask gives the plain CFM loss."""
    if v_pred.shape != target.shape:
        raise ValueError(f"shape mismatch {tuple(v_pred.shape)} vs {tuple(target.shape)}")
    m = _expand_grid(torch.as_tensor(union), v_pred)
    return ((m * (v_pred - target)) ** 2).mean()


def joint_attention_loss(rec: AttentionRecord, word_masks: torch.Tensor, word_valid: torch.Tensor) -> torch.Tensor:
    """Mean over supervised words of the per-cell squared error between attention map and word mask."""
    if word_masks.shape[1] != rec.n_text:
        raise ValueError(f"{word_masks.shape[1]} mask slots but {rec.n_text} text tokens")
    if word_masks.shape[-1] != rec.grid:
        raise ValueError(f"mask grid {tuple(word_masks.shape[-2:])} != attention grid {rec.grid}")
    maps = word_attention_maps(rec)  # (B, T, g, g)
    per_word = ((maps - word_masks.to(maps.dtype)) ** 2).mean(dim=(-2, -1))
    weight = word_valid.to(maps.dtype)
    n = weight.sum()
    if n == 0:
        raise ValueError("no supervised words in batch")
    return (per_word * weight).sum() / n


def total_loss(masked, attn, weights: LossWeights = LossWeights()):
    return masked + weights.lambda_attn * attn
