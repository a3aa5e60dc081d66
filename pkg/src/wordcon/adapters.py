"""Selective low-rank reparameterization of the text-stream attention projections."""

from __future__ import annotations

import os
from dataclasses import dataclass

import torch

from .flowmodel.config import ModelConfig
from .flowmodel.container import ContainerIntegrityError, load_tensors, save_tensors

PROJECTIONS = ("q", "k", "v", "out")


class AdapterMismatchError(ValueError):
    pass


@dataclass
class LoraFactor:
    A: torch.Tensor  # (rank, d_in)
    B: torch.Tensor  # (d_out, rank)
    rank: int
    alpha: float

    @property
    def scale(self) -> float:
        return self.alpha / self.rank

    def delta(self) -> torch.Tensor:
        return self.scale * (self.B @ self.A)

    @property
    def num_params(self) -> int:
        return self.A.numel() + self.B.numel()


class AdapterSet:
    """Ordered mapping of target weight name -> low-rank factor."""

    def __init__(self, factors: dict[str, LoraFactor], base_config_hash: str = ""):
        self.factors = factors
        self.base_config_hash = base_config_hash

    def get(self, name: str) -> LoraFactor | None:
        return self.factors.get(name)

    def __iter__(self):
        return iter(self.factors)

    def __len__(self) -> int:
        return len(self.factors)

    def items(self):
        return self.factors.items()

    def parameters(self) -> list[torch.Tensor]:
        out = []
        for f in self.factors.values():
            out.extend([f.A, f.B])
        return out

    def named_parameters(self) -> list[tuple[str, torch.Tensor]]:
        out = []
        for name, f in self.factors.items():
            out.extend([(f"{name}.lora_A", f.A), (f"{name}.lora_B", f.B)])
        return out

    @property
    def num_params(self) -> int:
        return sum(f.num_params for f in self.factors.values())

    def requires_grad_(self, flag: bool = True) -> "AdapterSet":
        for p in self.parameters():
            p.requires_grad_(flag)
        return self

    def to(self, dtype) -> "AdapterSet":
        return AdapterSet(
            {n: LoraFactor(f.A.detach().to(dtype), f.B.detach().to(dtype), f.rank, f.alpha) for n, f in self.factors.items()},
            self.base_config_hash,
        )

    def clone(self) -> "AdapterSet":
        return AdapterSet(
            {n: LoraFactor(f.A.detach().clone(), f.B.detach().clone(), f.rank, f.alpha) for n, f in self.factors.items()},
            self.base_config_hash,
        )


def select_parameters(config: ModelConfig) -> list[str]:
    """Text-stream q/k/v/out weights of every double-stream block, in block order."""
    return [f"double_blocks.{i}.txt_attn.{p}.weight" for i in range(config.double_blocks) for p in PROJECTIONS]


def init_adapter(
    model,
    targets: list[str],
    rank: int = 4,
    alpha: float | None = None,
    seed: int = 0,
    init_std: float = 0.02,
) -> AdapterSet:
    """Fresh adapters: A ~ N(0, init_std^2), B = 0. ``alpha`` defaults to ``rank``."""
    if rank < 1:
        raise ValueError("rank must be >= 1")
    alpha = float(rank if alpha is None else alpha)
    params = dict(model.named_parameters())
    gen = torch.Generator().manual_seed(int(seed))
    dtype = next(model.parameters()).dtype
    factors = {}
    for name in targets:
        if name not in params:
            raise KeyError(f"target {name!r} is not a model parameter")
        d_out, d_in = params[name].shape
        if rank > min(d_in, d_out):
            raise ValueError(f"rank {rank} exceeds min(d_in, d_out)={min(d_in, d_out)} for {name}")
        A = (torch.randn(rank, d_in, generator=gen, dtype=torch.float64) * init_std).to(dtype)
        B = torch.zeros(d_out, rank, dtype=dtype)
        factors[name] = LoraFactor(A, B, rank, alpha)
    return AdapterSet(factors, model.config.config_hash())


def merge_adapter(params: dict[str, torch.Tensor], adapters: AdapterSet) -> dict[str, torch.Tensor]:
    """W' = W + (alpha / rank) B A for every target; other entries are passed through untouched."""
    merged = dict(params)
    for name, f in adapters.items():
        if name not in params:
            raise AdapterMismatchError(f"adapter target {name!r} missing from parameters")
        w = params[name]
        if tuple(w.shape) != (f.B.shape[0], f.A.shape[1]):
            raise AdapterMismatchError(
                f"{name}: weight shape {tuple(w.shape)} vs adapter ({f.B.shape[0]}, {f.A.shape[1]})"
            )
        merged[name] = w + f.delta().to(w.dtype)
    return merged


def merged_model(model, adapters: AdapterSet):
    import copy

    out = copy.deepcopy(model)
    state = merge_adapter({k: v.detach() for k, v in model.state_dict().items()}, adapters)
    out.load_state_dict(state)
    return out


def save_adapter(path: str | os.PathLike, adapters: AdapterSet) -> None:
    tensors, ranks = {}, {}
    for name, f in adapters.items():
        tensors[f"{name}.lora_A"] = f.A
        tensors[f"{name}.lora_B"] = f.B
        ranks[name] = {"rank": f.rank, "alpha": f.alpha}
    meta = {"kind": "adapter", "base_config_hash": adapters.base_config_hash, "targets": ranks, "order": list(adapters)}
    save_tensors(path, tensors, meta)


def load_adapter(path: str | os.PathLike, expected_config_hash: str | None = None) -> AdapterSet:
    tensors, meta = load_tensors(path)
    if meta.get("kind") != "adapter":
        raise ContainerIntegrityError(f"{path}: not an adapter file")
    if expected_config_hash is not None and meta["base_config_hash"] != expected_config_hash:
        raise AdapterMismatchError(
            f"{path}: adapter was trained for base config {meta['base_config_hash']}, "
            f"refusing to load against {expected_config_hash}"
        )
    factors = {}
    for name in meta["order"]:
        info = meta["targets"][name]
        factors[name] = LoraFactor(tensors[f"{name}.lora_A"], tensors[f"{name}.lora_B"], int(info["rank"]), float(info["alpha"]))
    return AdapterSet(factors, meta["base_config_hash"])
