from __future__ import annotations

import hashlib
import json
from dataclasses import asdict, dataclass

N_ATTRIBUTES = 3
FONT_ORDER = ("sans", "serif", "slab", "mono", "script")


@dataclass(frozen=True)
class ModelConfig:
    vocab_size: int
    max_words: int = 4
    image_size: int = 32
    patch_size: int = 4
    channels: int = 3
    hidden_dim: int = 64
    heads: int = 4
    double_blocks: int = 2
    single_blocks: int = 2
    mlp_ratio: int = 4

    def __post_init__(self):
        if self.image_size % self.patch_size:
            raise ValueError(f"image_size {self.image_size} is not divisible by patch_size {self.patch_size}")
        if self.hidden_dim % 4:
            raise ValueError(f"hidden_dim {self.hidden_dim} must be divisible by 4 (2-D position code)")
        if self.hidden_dim % self.heads:
            raise ValueError(f"hidden_dim {self.hidden_dim} is not divisible by heads {self.heads}")
        for name in ("vocab_size", "max_words", "patch_size", "channels", "heads", "double_blocks", "single_blocks"):
            if getattr(self, name) < 1:
                raise ValueError(f"{name} must be >= 1")

    @property
    def grid(self) -> int:
        return self.image_size // self.patch_size

    @property
    def num_patches(self) -> int:
        return self.grid * self.grid

    @property
    def patch_dim(self) -> int:
        return self.channels * self.patch_size * self.patch_size

    def to_dict(self) -> dict:
        return asdict(self)

    @classmethod
    def from_dict(cls, d: dict) -> "ModelConfig":
        return cls(**d)

    def config_hash(self) -> str:
        blob = json.dumps(self.to_dict(), sort_keys=True, separators=(",", ":")).encode()
        return hashlib.sha256(blob).hexdigest()[:16]
