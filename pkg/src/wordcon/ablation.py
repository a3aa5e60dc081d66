"""Loss-mode ablation: train one adapter per (mode, seed) on a shared dataset and base, benchmark each."""

from __future__ import annotations

import hashlib
import json
import logging
import os
from dataclasses import asdict, dataclass, field
from pathlib import Path

import numpy as np

from .evalharness.benchmark import BenchmarkConfig, run_benchmark
from .glyphforge.dataset import CONFIG_NAME, MANIFEST_NAME, DatasetConfig, build_dataset, load_manifest
from .trainer import LOSS_MODES, PretrainConfig, TrainConfig, load_base, new_state, pretrain_base, train

log = logging.getLogger(__name__)

DESK_VOCABULARY = ["GO", "UP", "ON", "IT", "AT", "TO", "IN", "NO"]
COLUMNS = ("type_acc", "word_acc", "total_acc", "ocr_precision", "ocr_recall", "mean_attention_iou")


@dataclass
class AblationConfig:
    """Everything an ablation run needs; dataset and base are built on demand and cached by content hash."""

    vocabulary: list[str] = field(default_factory=lambda: list(DESK_VOCABULARY))
    finetune_dataset: dict = field(default_factory=lambda: {"n_samples": 300, "seed": 2})
    base_dataset: dict = field(
        default_factory=lambda: {"n_samples": 800, "attribute_types": [], "splits": {"train": 0.9, "test": 0.1}, "seed": 1}
    )
    base_model: dict = field(default_factory=lambda: {"max_words": 2, "patch_size": 2})
    pretrain: dict = field(default_factory=lambda: {"steps": 8000, "batch_size": 16, "lr": 3e-3, "warmup": 200, "seed": 0})
    base_path: str | None = None  # use an existing base instead of pretraining one
    train: dict = field(default_factory=lambda: {"steps": 1000, "batch_size": 16, "rank": 4, "lr_policy": {"kind": "constant", "lr": 3e-4}, "val_interval": 100})
    modes: list[str] = field(default_factory=lambda: list(LOSS_MODES))
    seeds: list[int] = field(default_factory=lambda: [0, 1, 2])
    benchmark: dict = field(default_factory=dict)
    cache_dir: str | None = None

    def validate(self) -> None:
        bad = [m for m in self.modes if m not in LOSS_MODES]
        if bad:
            raise ValueError(f"unknown loss modes {bad}")
        if not self.seeds:
            raise ValueError("at least one seed is required")
        if len(set(self.seeds)) != len(self.seeds):
            raise ValueError("seeds must be distinct")

    def to_dict(self) -> dict:
        return asdict(self)

    @classmethod
    def from_dict(cls, d: dict) -> "AblationConfig":
        return cls(**d)

    def finetune_config(self) -> DatasetConfig:
        return DatasetConfig(vocabulary=list(self.vocabulary), **self.finetune_dataset)

    def base_dataset_config(self) -> DatasetConfig:
        return DatasetConfig(vocabulary=list(self.vocabulary), **self.base_dataset)

    def benchmark_config(self) -> BenchmarkConfig:
        return BenchmarkConfig(**self.benchmark)


def _hash(obj) -> str:
    return hashlib.sha256(json.dumps(obj, sort_keys=True).encode()).hexdigest()[:16]


def ensure_dataset(config: DatasetConfig, root: Path) -> Path:
    """Build ``config`` under ``root/<config_hash>`` unless a complete build is already there."""
    out = root / f"ds_{config.config_hash()}"
    if not ((out / MANIFEST_NAME).exists() and (out / CONFIG_NAME).exists()):
        build_dataset(config, out)
    return out


def ensure_base(config: AblationConfig, root: Path) -> Path:
    if config.base_path:
        return Path(config.base_path)
    base_ds = ensure_dataset(config.base_dataset_config(), root)
    key = _hash({"ds": config.base_dataset_config().config_hash(), "model": config.base_model, "pretrain": config.pretrain})
    path = root / f"base_{key}.wcp"
    if not path.exists():
        log.info("pretraining base model -> %s", path)
        pretrain_base(PretrainConfig(manifest=str(base_ds), out_path=str(path), model=dict(config.base_model), **config.pretrain))
    return path


@dataclass
class ArmResult:
    mode: str
    seed: int
    summary: dict
    init_adapter_hash: str
    out_dir: str


def adapter_hash(adapters) -> str:
    h = hashlib.sha256()
    for name, t in adapters.named_parameters():
        h.update(name.encode())
        h.update(t.detach().double().numpy().tobytes())
    return h.hexdigest()[:16]


def aggregate(arms: list[ArmResult], modes: list[str]) -> list[dict]:
    """One row per mode: 3-seed means of every report column plus the per-seed values."""
    rows = []
    for mode in modes:
        mine = [a for a in arms if a.mode == mode]
        row = {"mode": mode, "seeds": [a.seed for a in mine]}
        for col in COLUMNS:
            vals = [a.summary[col] for a in mine if a.summary.get(col) is not None]
            row[col] = float(np.mean(vals)) if vals else None
            row[f"{col}_per_seed"] = [a.summary.get(col) for a in mine]
        rows.append(row)
    return rows


def format_table(rows: list[dict]) -> str:
    head = ["mode", "type", "word", "total", "ocr_P", "ocr_R", "attn_IoU"]
    lines = ["{:<12} {:>7} {:>7} {:>7} {:>7} {:>7} {:>9}".format(*head)]
    for r in rows:
        iou = r["mean_attention_iou"]
        lines.append(
            "{:<12} {:>7.2f} {:>7.2f} {:>7.2f} {:>7.2f} {:>7.2f} {:>9}".format(
                r["mode"], r["type_acc"], r["word_acc"], r["total_acc"], r["ocr_precision"], r["ocr_recall"],
                "-" if iou is None else f"{iou:.4f}",
            )
        )
    return "\n".join(lines) + "\n"


def run_ablation(config: AblationConfig, out_dir: str | os.PathLike) -> dict:
    """Train and benchmark every (mode, seed) arm; write ``table.json`` and ``table.txt``.

    Arms share the dataset, base model and per-seed adapter initialization, so
    the loss mode is the only thing that differs within a seed. A failing arm
    raises immediately; artifacts of finished arms stay on disk.
    """
    config.validate()
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    (out / "resolved_config.json").write_text(json.dumps(config.to_dict(), indent=2, sort_keys=True) + "\n")
    cache = Path(config.cache_dir) if config.cache_dir else out / "cache"
    cache.mkdir(parents=True, exist_ok=True)

    ft_path = ensure_dataset(config.finetune_config(), cache)
    base_path = ensure_base(config, cache)
    manifest = load_manifest(ft_path)
    bench_cfg = config.benchmark_config()

    arms: list[ArmResult] = []
    for seed in config.seeds:
        for mode in config.modes:
            arm_dir = out / f"{mode.replace('+', '_')}_seed{seed}"
            tcfg = TrainConfig(
                manifest=str(ft_path), base_model=str(base_path), out_dir=str(arm_dir),
                **{**config.train, "loss_mode": mode, "seed": seed},
            )
            model, vocab = load_base(base_path)
            init_hash = adapter_hash(new_state(model, tcfg).adapters)
            log.info("arm %s seed %d", mode, seed)
            result = train(tcfg)
            report = run_benchmark(model, manifest, vocab, result.adapters, bench_cfg, out_dir=arm_dir)
            summary = report.summary()
            arms.append(ArmResult(mode, seed, summary, init_hash, str(arm_dir)))
            log.info("arm %s seed %d: %s", mode, seed, summary)

    rows = aggregate(arms, config.modes)
    table = {
        "columns": list(COLUMNS),
        "rows": rows,
        "arms": [asdict(a) for a in arms],
        "base_model": str(base_path),
        "dataset": str(ft_path),
    }
    (out / "table.json").write_text(json.dumps(table, indent=2, sort_keys=True) + "\n")
    (out / "table.txt").write_text(format_table(rows))
    return table
