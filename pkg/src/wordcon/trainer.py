"""Adapter training loop (plus full-parameter base pretraining) with exact checkpoint/resume."""

from __future__ import annotations

import hashlib
import json
import logging
import math
import os
import time
from dataclasses import asdict, dataclass, field
from pathlib import Path

import numpy as np
import torch

from .adapters import AdapterSet, init_adapter, save_adapter, select_parameters
from .flowmodel.config import ModelConfig
from .flowmodel.container import ContainerIntegrityError, load_model, load_tensors, save_model, save_tensors
from .flowmodel.model import Condition, ConditionBatch, FlowDiT
from .flowmodel.schedule import conditional_target, forward_process, image_to_latent
from .glyphforge.dataset import DatasetManifest, load_manifest, load_sample
from .grounding import import_masks, oracle_masks
from .losses import LossWeights, MaskSet, cfm_loss, joint_attention_loss, masked_loss, stack_masks, total_loss

log = logging.getLogger(__name__)

LOSS_MODES = ("vanilla", "masked", "masked+attn")
STATE_VERSION = 1


class NumericError(FloatingPointError):
    pass


class StateMismatchError(ValueError):
    pass


@dataclass
class TrainConfig:
    manifest: str
    base_model: str
    out_dir: str
    loss_mode: str = "masked+attn"
    rank: int = 4
    alpha: float | None = None
    lambda_attn: float = 0.01
    batch_size: int = 16
    grad_accum: int = 1
    steps: int = 500
    lr_policy: dict = field(default_factory=lambda: {"kind": "constant", "lr": 1e-3})
    seed: int = 0
    checkpoint_interval: int = 0
    val_interval: int = 0
    val_split: str = "test"
    val_timesteps: int = 8
    mask_source: str = "oracle"  # or "import"
    mask_dir: str | None = None

    def validate(self) -> None:
        if self.loss_mode not in LOSS_MODES:
            raise ValueError(f"loss_mode must be one of {LOSS_MODES}, got {self.loss_mode!r}")
        if self.steps < 1:
            raise ValueError(f"steps must be >= 1, got {self.steps}")
        if self.batch_size < 1 or self.grad_accum < 1:
            raise ValueError("batch_size and grad_accum must be >= 1")
        if self.lambda_attn < 0:
            raise ValueError("lambda_attn must be >= 0")
        if self.lr_policy.get("kind") != "constant":
            raise ValueError(f"unsupported learning-rate policy {self.lr_policy}")
        if self.mask_source not in ("oracle", "import"):
            raise ValueError("mask_source must be 'oracle' or 'import'")
        if self.mask_source == "import" and not self.mask_dir:
            raise ValueError("mask_source='import' requires mask_dir")

    def to_dict(self) -> dict:
        return asdict(self)

    @classmethod
    def from_dict(cls, d: dict) -> "TrainConfig":
        return cls(**d)

    def config_hash(self) -> str:
        d = self.to_dict()
        d.pop("out_dir")
        d.pop("checkpoint_interval")
        blob = json.dumps(d, sort_keys=True, separators=(",", ":")).encode()
        return hashlib.sha256(blob).hexdigest()[:16]


@dataclass
class StepMetrics:
    step: int
    loss_total: float
    loss_cfm: float
    loss_mask: float
    loss_attn: float


@dataclass
class TrainState:
    step: int
    adapters: AdapterSet
    optimizer: torch.optim.Adam
    generator: torch.Generator
    running: dict = field(default_factory=lambda: {"count": 0, "mean_total": 0.0})


class TrainingData:
    """Whole split held in memory: latents, condition tensors and word masks."""

    def __init__(
        self,
        manifest: DatasetManifest,
        split: str,
        vocabulary: list[str],
        config: ModelConfig,
        mask_source: str = "oracle",
        mask_dir: str | None = None,
    ):
        records = manifest.split(split)
        if not records:
            raise ValueError(f"split {split!r} is empty in {manifest.path}")
        self.records = records
        self.ids = [r["sample_id"] for r in records]
        token = {w: i for i, w in enumerate(vocabulary)}
        images, conditions, masksets = [], [], []
        for rec in records:
            sample = load_sample(manifest, rec)
            sample.meta["sample_id"] = rec["sample_id"]
            missing = [w for w in rec["words"] if w not in token]
            if missing:
                raise ValueError(f"{rec['sample_id']}: words {missing} are not in the model vocabulary")
            images.append(sample.image)
            conditions.append(Condition([(token[t], a) for t, a in sample.words]))
            if mask_source == "import":
                masksets.append(import_masks(mask_dir, rec["sample_id"], config.patch_size, len(sample.words)))
            else:
                masksets.append(oracle_masks(sample, config.patch_size))
        self.x0 = image_to_latent(torch.from_numpy(np.stack(images)))
        self.conditions = conditions
        self.cond = ConditionBatch.from_conditions(conditions, config)
        self.word_masks, self.union, self.mask_valid = stack_masks(masksets, self.cond.num_tokens)

    def __len__(self) -> int:
        return len(self.ids)

    def batch(self, idx: torch.Tensor) -> dict:
        return {
            "ids": [self.ids[i] for i in idx.tolist()],
            "x0": self.x0[idx],
            "cond": ConditionBatch(
                self.cond.token_ids[idx], self.cond.flags[idx], self.cond.fonts[idx], self.cond.valid[idx]
            ),
            "word_masks": self.word_masks[idx],
            "union": self.union[idx],
            "mask_valid": self.mask_valid[idx],
        }


def compute_losses(model, batch: dict, t: torch.Tensor, eps: torch.Tensor, adapters, loss_mode: str, lambda_attn: float):
    x0 = batch["x0"]
    state = forward_process(x0, eps, t)
    target = conditional_target(x0, eps)
    v, rec = model(state.z, state.t, batch["cond"], adapters)
    loss_cfm = cfm_loss(v, target)
    loss_mask = masked_loss(v, target, batch["union"])
    loss_attn = joint_attention_loss(rec, batch["word_masks"], batch["mask_valid"])
    if loss_mode == "vanilla":
        total = loss_cfm
    elif loss_mode == "masked":
        total = loss_mask
    else:
        total = total_loss(loss_mask, loss_attn, LossWeights(lambda_attn))
    return total, {"loss_cfm": loss_cfm, "loss_mask": loss_mask, "loss_attn": loss_attn}


def draw_noise(batch: dict, gen: torch.Generator) -> tuple[torch.Tensor, torch.Tensor]:
    """Per-example uniform timesteps and Gaussian noise from the run's generator."""
    x0 = batch["x0"]
    t = torch.rand(x0.shape[0], generator=gen, dtype=x0.dtype)
    eps = torch.randn(x0.shape, generator=gen, dtype=x0.dtype)
    return t, eps


def train_step(model: FlowDiT, data: TrainingData, state: TrainState, config: TrainConfig) -> StepMetrics:
    state.optimizer.zero_grad(set_to_none=True)
    sums = {"loss_total": 0.0, "loss_cfm": 0.0, "loss_mask": 0.0, "loss_attn": 0.0}
    for _ in range(config.grad_accum):
        idx = torch.randint(len(data), (config.batch_size,), generator=state.generator)
        batch = data.batch(idx)
        t, eps = draw_noise(batch, state.generator)
        total, parts = compute_losses(model, batch, t, eps, state.adapters, config.loss_mode, config.lambda_attn)
        if not torch.isfinite(total):
            raise NumericError(f"non-finite loss {total.item()} at step {state.step + 1}; batch ids {batch['ids']}")
        (total / config.grad_accum).backward()
        sums["loss_total"] += total.item() / config.grad_accum
        for k, v in parts.items():
            sums[k] += v.item() / config.grad_accum
    state.optimizer.step()
    state.step += 1
    n = state.running["count"] + 1
    state.running["mean_total"] += (sums["loss_total"] - state.running["mean_total"]) / n
    state.running["count"] = n
    return StepMetrics(step=state.step, **sums)


@torch.no_grad()
def validation_losses(
    model: FlowDiT, data: TrainingData, adapters=None, timesteps: int = 8, seed: int = 1234, batch_size: int = 64
) -> tuple[float, float]:
    """(CFM, masked CFM) on a fixed stratified timestep grid with fixed noise; deterministic."""
    gen = torch.Generator().manual_seed(seed)
    ts = (torch.arange(timesteps, dtype=torch.float64) + 0.5) / timesteps
    total, total_masked, count = 0.0, 0.0, 0
    for start in range(0, len(data), batch_size):
        idx = torch.arange(start, min(start + batch_size, len(data)))
        batch = data.batch(idx)
        x0 = batch["x0"]
        for tv in ts.tolist():
            eps = torch.randn(x0.shape, generator=gen, dtype=x0.dtype)
            state = forward_process(x0, eps, torch.full((x0.shape[0],), tv, dtype=x0.dtype))
            v, _ = model(state.z, state.t, batch["cond"], adapters)
            target = conditional_target(x0, eps)
            total += cfm_loss(v, target).item() * x0.shape[0]
            total_masked += masked_loss(v, target, batch["union"]).item() * x0.shape[0]
            count += x0.shape[0]
    return total / count, total_masked / count


def validation_cfm(model: FlowDiT, data: TrainingData, adapters=None, timesteps: int = 8, seed: int = 1234, batch_size: int = 64) -> float:
    return validation_losses(model, data, adapters, timesteps, seed, batch_size)[0]


def new_state(model: FlowDiT, config: TrainConfig) -> TrainState:
    torch.manual_seed(config.seed)
    adapters = init_adapter(model, select_parameters(model.config), config.rank, config.alpha, seed=config.seed)
    adapters.requires_grad_(True)
    optimizer = torch.optim.Adam(adapters.parameters(), lr=config.lr_policy["lr"])
    gen = torch.Generator().manual_seed(config.seed + 1)
    return TrainState(step=0, adapters=adapters, optimizer=optimizer, generator=gen)


def freeze_base(model: FlowDiT) -> None:
    for p in model.parameters():
        p.requires_grad_(False)


# ---------------------------------------------------------------- checkpoints


def save_state(state: TrainState, path: str | os.PathLike, config: TrainConfig, model_config: ModelConfig) -> None:
    tensors: dict[str, torch.Tensor] = {}
    opt_state = state.optimizer.state
    adam_steps = {}
    for name, p in state.adapters.named_parameters():
        tensors[f"adapter.{name}"] = p
        s = opt_state.get(p)
        if s:
            tensors[f"adam.exp_avg.{name}"] = s["exp_avg"]
            tensors[f"adam.exp_avg_sq.{name}"] = s["exp_avg_sq"]
            adam_steps[name] = float(s["step"])
    tensors["rng.state"] = state.generator.get_state()
    meta = {
        "kind": "train_state",
        "version": STATE_VERSION,
        "step": state.step,
        "running": state.running,
        "adam_steps": adam_steps,
        "adam_defaults": {k: v for k, v in state.optimizer.defaults.items() if isinstance(v, (int, float, bool, list, tuple))},
        "targets": {n: {"rank": f.rank, "alpha": f.alpha} for n, f in state.adapters.items()},
        "order": list(state.adapters),
        "train_config_hash": config.config_hash(),
        "model_config_hash": model_config.config_hash(),
        "base_config_hash": state.adapters.base_config_hash,
    }
    save_tensors(path, tensors, meta)


def load_state(path: str | os.PathLike, config: TrainConfig, model_config: ModelConfig) -> TrainState:
    from .adapters import LoraFactor

    tensors, meta = load_tensors(path)
    if meta.get("kind") != "train_state":
        raise ContainerIntegrityError(f"{path}: not a training state file")
    if meta.get("version") != STATE_VERSION:
        raise StateMismatchError(f"{path}: state version {meta.get('version')} != {STATE_VERSION}")
    if meta["model_config_hash"] != model_config.config_hash():
        raise StateMismatchError(
            f"{path}: saved for model config {meta['model_config_hash']}, current is {model_config.config_hash()}"
        )
    if meta["train_config_hash"] != config.config_hash():
        raise StateMismatchError(
            f"{path}: saved for train config {meta['train_config_hash']}, current is {config.config_hash()}"
        )
    factors = {}
    for name in meta["order"]:
        info = meta["targets"][name]
        A = tensors[f"adapter.{name}.lora_A"].clone().requires_grad_(True)
        B = tensors[f"adapter.{name}.lora_B"].clone().requires_grad_(True)
        factors[name] = LoraFactor(A, B, int(info["rank"]), float(info["alpha"]))
    adapters = AdapterSet(factors, meta["base_config_hash"])
    optimizer = torch.optim.Adam(adapters.parameters(), lr=config.lr_policy["lr"])
    for name, p in adapters.named_parameters():
        if name in meta["adam_steps"]:
            optimizer.state[p] = {
                "step": torch.tensor(meta["adam_steps"][name], dtype=torch.float32),
                "exp_avg": tensors[f"adam.exp_avg.{name}"].clone(),
                "exp_avg_sq": tensors[f"adam.exp_avg_sq.{name}"].clone(),
            }
    gen = torch.Generator()
    gen.set_state(tensors["rng.state"].clone())
    return TrainState(step=int(meta["step"]), adapters=adapters, optimizer=optimizer, generator=gen, running=dict(meta["running"]))


# ---------------------------------------------------------------- driver


@dataclass
class RunResult:
    out_dir: Path
    adapters: AdapterSet
    metrics: list[dict]
    val_history: list[tuple[int, float, float]]  # (step, val CFM, val masked CFM)


def load_base(path: str | os.PathLike) -> tuple[FlowDiT, list[str]]:
    model = load_model(path)
    _, meta = load_tensors(path)
    freeze_base(model)
    model.eval()
    return model, list(meta.get("vocabulary", []))


def train(config: TrainConfig, resume_from: str | os.PathLike | None = None) -> RunResult:
    config.validate()
    out = Path(config.out_dir)
    out.mkdir(parents=True, exist_ok=True)
    with open(out / "config.json", "w", encoding="utf-8") as fh:
        json.dump(config.to_dict(), fh, indent=2, sort_keys=True)

    model, vocabulary = load_base(config.base_model)
    manifest = load_manifest(config.manifest)
    data = TrainingData(manifest, "train", vocabulary, model.config, config.mask_source, config.mask_dir)
    val = None
    if config.val_interval and manifest.split(config.val_split):
        val = TrainingData(manifest, config.val_split, vocabulary, model.config, config.mask_source, config.mask_dir)

    if resume_from is not None:
        state = load_state(resume_from, config, model.config)
        mode = "a"
    else:
        state = new_state(model, config)
        mode = "w"

    metrics: list[dict] = []
    val_history: list[tuple[int, float, float]] = []
    if val is not None and state.step == 0:
        val_history.append((0, *validation_losses(model, val, state.adapters, config.val_timesteps)))
    start = time.perf_counter()
    with open(out / "metrics.jsonl", mode, encoding="utf-8") as fh:
        while state.step < config.steps:
            m = train_step(model, data, state, config)
            rec = {
                "step": m.step,
                "loss_total": m.loss_total,
                "loss_cfm": m.loss_cfm,
                "loss_mask": m.loss_mask,
                "loss_attn": m.loss_attn,
                "wallclock_s": round(time.perf_counter() - start, 3),
            }
            if val is not None and (m.step % config.val_interval == 0 or m.step == config.steps):
                vc, vm = validation_losses(model, val, state.adapters, config.val_timesteps)
                rec["val_cfm"], rec["val_masked"] = vc, vm
                val_history.append((m.step, vc, vm))
            fh.write(json.dumps(rec, sort_keys=True) + "\n")
            metrics.append(rec)
            if config.checkpoint_interval and m.step % config.checkpoint_interval == 0:
                save_state(state, out / "checkpoints" / f"step_{m.step:06d}.wcp", config, model.config)
    save_state(state, out / "state.wcp", config, model.config)
    save_adapter(out / "adapter.wcp", state.adapters)
    if val_history:
        with open(out / "validation.json", "w", encoding="utf-8") as fh:
            json.dump([{"step": s, "val_cfm": v, "val_masked": vm} for s, v, vm in val_history], fh, indent=2)
    return RunResult(out, state.adapters, metrics, val_history)


# ---------------------------------------------------------------- base pretraining


@dataclass
class PretrainConfig:
    """Full-parameter CFM training of the base model (the frozen backbone adapters attach to)."""

    manifest: str
    out_path: str
    model: dict = field(default_factory=dict)
    steps: int = 4000
    batch_size: int = 32
    lr: float = 1e-3
    warmup: int = 200
    seed: int = 0

    def to_dict(self) -> dict:
        return asdict(self)


def pretrain_base(config: PretrainConfig, log_every: int = 0) -> FlowDiT:
    manifest = load_manifest(config.manifest)
    with open(manifest.root / "dataset_config.json", encoding="utf-8") as fh:
        vocabulary = json.load(fh)["vocabulary"]
    model_cfg = ModelConfig(**{"vocab_size": len(vocabulary), **config.model})
    torch.manual_seed(config.seed)
    model = FlowDiT(model_cfg)
    data = TrainingData(manifest, "train", vocabulary, model_cfg)
    opt = torch.optim.AdamW(model.parameters(), lr=config.lr, weight_decay=0.0)

    def lr_at(step: int) -> float:
        if step < config.warmup:
            return config.lr * (step + 1) / config.warmup
        frac = (step - config.warmup) / max(1, config.steps - config.warmup)
        return config.lr * 0.5 * (1 + math.cos(math.pi * frac))

    gen = torch.Generator().manual_seed(config.seed + 1)
    model.train()
    for step in range(config.steps):
        for group in opt.param_groups:
            group["lr"] = lr_at(step)
        idx = torch.randint(len(data), (config.batch_size,), generator=gen)
        batch = data.batch(idx)
        t, eps = draw_noise(batch, gen)
        loss, _ = compute_losses(model, batch, t, eps, None, "vanilla", 0.0)
        if not torch.isfinite(loss):
            raise NumericError(f"non-finite pretraining loss at step {step}; batch ids {batch['ids']}")
        opt.zero_grad(set_to_none=True)
        loss.backward()
        opt.step()
        if log_every and (step + 1) % log_every == 0:
            log.info("pretrain step %d loss %.5f", step + 1, loss.item())
    model.eval()
    save_model(config.out_path, model, {"vocabulary": vocabulary, "pretrain": config.to_dict()})
    return model
