"""Miniature rectified-flow DiT with double-stream joint attention and single-stream blocks."""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import TYPE_CHECKING, Sequence

import torch
import torch.nn as nn
import torch.nn.functional as F

from ..glyphforge.raster import AttributeSet
from .config import FONT_ORDER, N_ATTRIBUTES, ModelConfig

if TYPE_CHECKING:
    from ..adapters import AdapterSet


@dataclass
class Condition:
    """One text token per word: (token_id, attributes)."""

    words: list[tuple[int, AttributeSet]]

    def validate(self, config: ModelConfig) -> None:
        if not 1 <= len(self.words) <= config.max_words:
            raise ValueError(f"condition has {len(self.words)} words; expected 1..{config.max_words}")
        for token_id, _ in self.words:
            if not 0 <= token_id < config.vocab_size:
                raise ValueError(f"token_id {token_id} out of range for vocab_size {config.vocab_size}")


@dataclass
class ConditionBatch:
    token_ids: torch.Tensor  # (B, T) long
    flags: torch.Tensor  # (B, T, 3) float
    fonts: torch.Tensor  # (B, T) long
    valid: torch.Tensor  # (B, T) bool

    @classmethod
    def from_conditions(cls, conditions: Sequence[Condition], config: ModelConfig) -> "ConditionBatch":
        for c in conditions:
            c.validate(config)
        b = len(conditions)
        t = max(len(c.words) for c in conditions)
        ids = torch.zeros(b, t, dtype=torch.long)
        flags = torch.zeros(b, t, N_ATTRIBUTES)
        fonts = torch.zeros(b, t, dtype=torch.long)
        valid = torch.zeros(b, t, dtype=torch.bool)
        for i, c in enumerate(conditions):
            for j, (tok, attrs) in enumerate(c.words):
                ids[i, j] = tok
                flags[i, j] = torch.tensor([float(f) for f in attrs.flags])
                fonts[i, j] = FONT_ORDER.index(attrs.font_class)
                valid[i, j] = True
        return cls(ids, flags, fonts, valid)

    def __len__(self) -> int:
        return self.token_ids.shape[0]

    @property
    def num_tokens(self) -> int:
        return self.token_ids.shape[1]


@dataclass
class AttentionRecord:
    """Softmax rows of every text query over the joint [text; image] keys, per double block.

    ``rows[k]`` has shape (B, heads, T, T + N).
    """

    rows: list[torch.Tensor]
    n_text: int
    grid: int
    text_valid: torch.Tensor

    def text_to_image(self, block: int) -> torch.Tensor:
        return self.rows[block][..., self.n_text :]


def _linear(layer: nn.Linear, x: torch.Tensor, adapters: "AdapterSet | None") -> torch.Tensor:
    out = F.linear(x, layer.weight, layer.bias)
    if adapters is not None:
        factor = adapters.get(layer.param_name)
        if factor is not None:
            out = out + factor.scale * F.linear(F.linear(x, factor.A), factor.B)
    return out


class Mlp(nn.Module):
    def __init__(self, dim: int, ratio: int):
        super().__init__()
        self.fc1 = nn.Linear(dim, dim * ratio)
        self.fc2 = nn.Linear(dim * ratio, dim)

    def forward(self, x, adapters=None):
        return _linear(self.fc2, F.gelu(_linear(self.fc1, x, adapters), approximate="tanh"), adapters)


class AttnProjections(nn.Module):
    def __init__(self, dim: int):
        super().__init__()
        self.q = nn.Linear(dim, dim)
        self.k = nn.Linear(dim, dim)
        self.v = nn.Linear(dim, dim)
        self.out = nn.Linear(dim, dim)

    def qkv(self, x, heads: int, adapters=None):
        b, n, d = x.shape

        def split(t):
            return t.view(b, n, heads, d // heads).transpose(1, 2)

        return (split(_linear(self.q, x, adapters)), split(_linear(self.k, x, adapters)), split(_linear(self.v, x, adapters)))


def joint_attention(q, k, v, key_valid: torch.Tensor, n_probs: int = 0):
    """Scaled dot-product attention over the joint sequence.

    Returns the output and the softmax rows of the first ``n_probs`` queries
    (None when ``n_probs`` is 0). The full probability matrix is never built.
    """
    mask = key_valid[:, None, None, :]
    out = F.scaled_dot_product_attention(q, k, v, attn_mask=mask)
    probs = None
    if n_probs:
        scores = q[:, :, :n_probs] @ k.transpose(-2, -1) / math.sqrt(q.shape[-1])
        probs = scores.masked_fill(~mask, float("-inf")).softmax(dim=-1)
    b, h, n, dh = out.shape
    return out.transpose(1, 2).reshape(b, n, h * dh), probs


class DoubleStreamBlock(nn.Module):
    """Separate text/image projections, one attention over the concatenated sequence."""

    def __init__(self, dim: int, heads: int, mlp_ratio: int):
        super().__init__()
        self.heads = heads
        self.img_norm1 = nn.LayerNorm(dim)
        self.txt_norm1 = nn.LayerNorm(dim)
        self.img_attn = AttnProjections(dim)
        self.txt_attn = AttnProjections(dim)
        self.img_norm2 = nn.LayerNorm(dim)
        self.txt_norm2 = nn.LayerNorm(dim)
        self.img_mlp = Mlp(dim, mlp_ratio)
        self.txt_mlp = Mlp(dim, mlp_ratio)

    def forward(self, txt, img, key_valid, adapters=None):
        n_txt = txt.shape[1]
        tq, tk, tv = self.txt_attn.qkv(self.txt_norm1(txt), self.heads, adapters)
        iq, ik, iv = self.img_attn.qkv(self.img_norm1(img), self.heads, adapters)
        q = torch.cat([tq, iq], dim=2)
        k = torch.cat([tk, ik], dim=2)
        v = torch.cat([tv, iv], dim=2)
        out, probs = joint_attention(q, k, v, key_valid, n_probs=n_txt)
        txt = txt + _linear(self.txt_attn.out, out[:, :n_txt], adapters)
        img = img + _linear(self.img_attn.out, out[:, n_txt:], adapters)
        txt = txt + self.txt_mlp(self.txt_norm2(txt), adapters)
        img = img + self.img_mlp(self.img_norm2(img), adapters)
        return txt, img, probs


class SingleStreamBlock(nn.Module):
    def __init__(self, dim: int, heads: int, mlp_ratio: int):
        super().__init__()
        self.heads = heads
        self.norm1 = nn.LayerNorm(dim)
        self.attn = AttnProjections(dim)
        self.norm2 = nn.LayerNorm(dim)
        self.mlp = Mlp(dim, mlp_ratio)

    def forward(self, x, key_valid, adapters=None):
        q, k, v = self.attn.qkv(self.norm1(x), self.heads, adapters)
        out, _ = joint_attention(q, k, v, key_valid)
        x = x + _linear(self.attn.out, out, adapters)
        return x + self.mlp(self.norm2(x), adapters)


def timestep_embedding(t: torch.Tensor, dim: int, max_period: float = 10000.0) -> torch.Tensor:
    """Sinusoidal features of t (scaled by 1000, DiT convention)."""
    half = dim // 2
    freqs = torch.exp(-math.log(max_period) * torch.arange(half, dtype=t.dtype) / half)
    args = (t * 1000.0)[:, None] * freqs[None]
    return torch.cat([torch.cos(args), torch.sin(args)], dim=-1)


def patchify(z: torch.Tensor, patch: int) -> torch.Tensor:
    b, c, h, w = z.shape
    g_h, g_w = h // patch, w // patch
    x = z.reshape(b, c, g_h, patch, g_w, patch).permute(0, 2, 4, 1, 3, 5)
    return x.reshape(b, g_h * g_w, c * patch * patch)


def unpatchify(x: torch.Tensor, patch: int, channels: int, grid: int) -> torch.Tensor:
    b = x.shape[0]
    x = x.reshape(b, grid, grid, channels, patch, patch).permute(0, 3, 1, 4, 2, 5)
    return x.reshape(b, channels, grid * patch, grid * patch)


def sincos_2d(grid: int, dim: int) -> torch.Tensor:
    """Fixed 2-D sine/cosine position code, (grid*grid, dim), row-major like ``patchify``.

    Half the channels encode the row, half the column.
    """
    if dim % 4:
        raise ValueError(f"dim {dim} must be divisible by 4")
    quarter = dim // 4
    freqs = 1.0 / (10000.0 ** (torch.arange(quarter, dtype=torch.float64) / quarter))
    pos = torch.arange(grid, dtype=torch.float64)
    ang = pos[:, None] * freqs[None]  # (grid, quarter)
    axis = torch.cat([ang.sin(), ang.cos()], dim=1)  # (grid, dim/2)
    rows = axis[:, None, :].expand(grid, grid, dim // 2)
    cols = axis[None, :, :].expand(grid, grid, dim // 2)
    return torch.cat([rows, cols], dim=-1).reshape(grid * grid, dim).float()


class TextEmbedding(nn.Module):
    def __init__(self, config: ModelConfig):
        super().__init__()
        d = config.hidden_dim
        self.word = nn.Parameter(torch.randn(config.vocab_size, d))
        self.attr = nn.Parameter(torch.randn(N_ATTRIBUTES, d))
        self.font = nn.Parameter(torch.randn(len(FONT_ORDER), d))
        self.pos = nn.Parameter(torch.randn(config.max_words, d))

    def forward(self, cond: ConditionBatch) -> torch.Tensor:
        tok = self.word[cond.token_ids]
        tok = tok + cond.flags.to(tok.dtype) @ self.attr
        tok = tok + self.font[cond.fonts]
        tok = tok + self.pos[: cond.num_tokens][None]
        return tok * cond.valid[..., None].to(tok.dtype)


class FlowDiT(nn.Module):
    def __init__(self, config: ModelConfig):
        super().__init__()
        self.config = config
        d = config.hidden_dim
        self.embed = TextEmbedding(config)
        self.patch_embed = nn.Linear(config.patch_dim, d)
        self.img_pos = nn.Parameter(sincos_2d(config.grid, d))
        self.time_mlp = Mlp(d, 1)
        self.double_blocks = nn.ModuleList(
            DoubleStreamBlock(d, config.heads, config.mlp_ratio) for _ in range(config.double_blocks)
        )
        self.single_blocks = nn.ModuleList(
            SingleStreamBlock(d, config.heads, config.mlp_ratio) for _ in range(config.single_blocks)
        )
        self.final_norm = nn.LayerNorm(d)
        self.final = nn.Linear(d, config.patch_dim)
        nn.init.zeros_(self.final.weight)
        nn.init.zeros_(self.final.bias)
        for name, module in self.named_modules():
            if isinstance(module, nn.Linear):
                module.param_name = f"{name}.weight"

    def encode_condition(self, cond: ConditionBatch) -> torch.Tensor:
        return self.embed(cond)

    def forward(
        self,
        z: torch.Tensor,
        t: torch.Tensor,
        cond: ConditionBatch,
        adapters: "AdapterSet | None" = None,
    ) -> tuple[torch.Tensor, AttentionRecord]:
        cfg = self.config
        expected = (cfg.channels, cfg.image_size, cfg.image_size)
        if z.ndim != 4 or tuple(z.shape[1:]) != expected:
            raise ValueError(f"latent shape {tuple(z.shape)} does not match (B, {expected})")
        if len(cond) != z.shape[0]:
            raise ValueError(f"condition batch {len(cond)} != latent batch {z.shape[0]}")
        t = torch.as_tensor(t, dtype=z.dtype).reshape(-1).expand(z.shape[0])

        txt = self.encode_condition(cond)
        img = _linear(self.patch_embed, patchify(z, cfg.patch_size), adapters) + self.img_pos[None]
        temb = self.time_mlp(timestep_embedding(t, cfg.hidden_dim).to(z.dtype), adapters)
        img = img + temb[:, None, :]

        key_valid = torch.cat([cond.valid, torch.ones(z.shape[0], cfg.num_patches, dtype=torch.bool)], dim=1)
        rows = []
        for block in self.double_blocks:
            txt, img, probs = block(txt, img, key_valid, adapters)
            rows.append(probs)
        x = torch.cat([txt, img], dim=1)
        for block in self.single_blocks:
            x = block(x, key_valid, adapters)
        img = x[:, cond.num_tokens :]
        out = _linear(self.final, self.final_norm(img), adapters)
        v = unpatchify(out, cfg.patch_size, cfg.channels, cfg.grid)
        return v, AttentionRecord(rows=rows, n_text=cond.num_tokens, grid=cfg.grid, text_valid=cond.valid)


def extract_word_attention(rec: AttentionRecord, word_index: int) -> torch.Tensor:
    """Per-sample (grid, grid) map for one text token, mean over heads and double blocks, max-rescaled."""
    if not 0 <= word_index < rec.n_text:
        raise IndexError(f"word_index {word_index} out of range for {rec.n_text} text tokens")
    maps = torch.stack([rec.text_to_image(k)[:, :, word_index, :] for k in range(len(rec.rows))], dim=0)
    m = maps.mean(dim=(0, 2))  # (B, N)
    m = m / m.amax(dim=-1, keepdim=True).clamp_min(torch.finfo(m.dtype).tiny)
    return m.reshape(-1, rec.grid, rec.grid)


def word_attention_maps(rec: AttentionRecord) -> torch.Tensor:
    """All words at once: (B, T, grid, grid)."""
    return torch.stack([extract_word_attention(rec, i) for i in range(rec.n_text)], dim=1)
