"""Dataset builder writing PNG images, per-word PNG masks and a JSONL manifest."""

from __future__ import annotations

import hashlib
import json
import os
from dataclasses import asdict, dataclass, field
from pathlib import Path

import numpy as np
from PIL import Image

from .compose import BackgroundSpec, Layout, LayoutPolicy, StyledSample, compose_sample
from .font import FONT_CLASSES, GLYPHS
from .raster import ATTRIBUTE_TYPES, AttributeSet
from .validate import validate_masks

MANIFEST_NAME = "manifest.jsonl"
CONFIG_NAME = "dataset_config.json"


class DatasetError(RuntimeError):
    pass


@dataclass
class DatasetConfig:
    vocabulary: list[str]
    n_samples: int
    words_per_sample: int = 2
    controlled_per_sample: int = 1
    attribute_types: list[str] = field(default_factory=lambda: list(ATTRIBUTE_TYPES))
    font_classes: list[str] = field(default_factory=lambda: ["sans"])
    image_size: tuple[int, int] = (32, 32)
    layout: LayoutPolicy = field(default_factory=LayoutPolicy)
    background: BackgroundSpec = field(default_factory=lambda: BackgroundSpec(level=1.0, dark_text=True))
    splits: dict[str, float] = field(default_factory=lambda: {"train": 0.8, "test": 0.2})
    seed: int = 0
    balance_tolerance: float = 0.05

    def __post_init__(self):
        self.image_size = tuple(self.image_size)
        if isinstance(self.layout, dict):
            self.layout = LayoutPolicy(**self.layout)
        if isinstance(self.background, dict):
            self.background = BackgroundSpec(**self.background)

    def validate(self) -> None:
        if self.n_samples < 1:
            raise ValueError("n_samples must be >= 1")
        if len(set(self.vocabulary)) != len(self.vocabulary) or not self.vocabulary:
            raise ValueError("vocabulary must be a nonempty list of distinct words")
        for word in self.vocabulary:
            bad = [c for c in word if c not in GLYPHS]
            if not word or bad:
                raise ValueError(f"vocabulary word {word!r} uses unsupported characters {bad}")
        if not 1 <= self.words_per_sample <= len(self.vocabulary):
            raise ValueError("words_per_sample must be between 1 and the vocabulary size")
        if self.attribute_types and not 1 <= self.controlled_per_sample <= self.words_per_sample:
            raise ValueError("controlled_per_sample must be between 1 and words_per_sample")
        for t in self.attribute_types:
            if t not in ATTRIBUTE_TYPES:
                raise ValueError(f"unknown attribute type {t!r}")
        for fc in self.font_classes:
            if fc not in FONT_CLASSES:
                raise ValueError(f"unknown font class {fc!r}")
        if abs(sum(self.splits.values()) - 1.0) > 1e-9 or any(v < 0 for v in self.splits.values()):
            raise ValueError(f"split fractions must be nonnegative and sum to 1, got {self.splits}")
        if self.attribute_types:
            n_types = len(self.attribute_types)
            uniform = self.n_samples / n_types
            worst = max(abs(np.ceil(uniform) - uniform), abs(np.floor(uniform) - uniform)) / uniform
            if worst > self.balance_tolerance:
                raise ValueError(
                    f"infeasible balance: {self.n_samples} samples over {n_types} attribute types "
                    f"deviates {worst:.1%} from uniform (tolerance {self.balance_tolerance:.0%})"
                )

    def to_dict(self) -> dict:
        d = asdict(self)
        d["image_size"] = list(self.image_size)
        return d

    @classmethod
    def from_dict(cls, d: dict) -> "DatasetConfig":
        return cls(**d)

    def config_hash(self) -> str:
        blob = json.dumps(self.to_dict(), sort_keys=True, separators=(",", ":")).encode()
        return hashlib.sha256(blob).hexdigest()[:16]


@dataclass
class DatasetManifest:
    records: list[dict]
    generator_config_hash: str
    root: Path

    def split(self, name: str) -> list[dict]:
        return [r for r in self.records if r["split"] == name]

    def by_id(self, sample_id: str) -> dict:
        for r in self.records:
            if r["sample_id"] == sample_id:
                return r
        raise KeyError(sample_id)

    @property
    def path(self) -> Path:
        return self.root / MANIFEST_NAME


def sample_seed(seed: int, index: int) -> int:
    return int(np.random.SeedSequence([seed, index]).generate_state(1)[0])


def _split_assignment(n: int, splits: dict[str, float], rng: np.random.Generator) -> list[str]:
    # Sorted so the assignment does not depend on dict order (config hashes sort keys too).
    names = sorted(splits, key=lambda k: (-splits[k], k))
    counts = [int(round(n * splits[k])) for k in names]
    counts[0] += n - sum(counts)
    labels = [name for name, c in zip(names, counts) for _ in range(c)]
    order = rng.permutation(n)
    out = [""] * n
    for pos, idx in enumerate(order):
        out[idx] = labels[pos]
    return out


def plan_samples(config: DatasetConfig) -> list[dict]:
    """Choose words, attributes, font and seed for every sample (no rendering)."""
    config.validate()
    n = config.n_samples
    plan_rng = np.random.default_rng([config.seed, 0xA77])
    if config.attribute_types:
        types = np.arange(n) % len(config.attribute_types)
        types = plan_rng.permutation(types)
    else:
        types = None
    splits = _split_assignment(n, config.splits, np.random.default_rng([config.seed, 0x5B1]))

    plans = []
    for i in range(n):
        rng = np.random.default_rng([config.seed, i, 0xC0DE])
        idx = rng.choice(len(config.vocabulary), size=config.words_per_sample, replace=False)
        texts = [config.vocabulary[j] for j in idx]
        font = config.font_classes[int(rng.integers(len(config.font_classes)))]
        attrs = [AttributeSet(font_class=font) for _ in texts]
        controlled: list[int] = []
        attr_type = None
        if types is not None:
            attr_type = config.attribute_types[int(types[i])]
            controlled = sorted(int(c) for c in rng.choice(len(texts), size=config.controlled_per_sample, replace=False))
            for c in controlled:
                attrs[c] = AttributeSet.of_type(attr_type, font)
        plans.append(
            {
                "sample_id": f"s{i:06d}",
                "words": texts,
                "attrs": attrs,
                "font_class": font,
                "controlled": controlled,
                "attribute_type": attr_type,
                "split": splits[i],
                "seed": sample_seed(config.seed, i),
            }
        )
    return plans


def save_png(array: np.ndarray, path: Path) -> None:
    Image.fromarray(array).save(path, format="PNG")


def image_to_uint8(image: np.ndarray) -> np.ndarray:
    return np.clip(np.rint(image * 255.0), 0, 255).astype(np.uint8)


def build_dataset(config: DatasetConfig, out_dir: str | os.PathLike) -> DatasetManifest:
    plans = plan_samples(config)
    root = Path(out_dir)
    try:
        (root / "images").mkdir(parents=True, exist_ok=True)
        (root / "masks").mkdir(parents=True, exist_ok=True)
    except OSError as exc:
        raise DatasetError(f"cannot create output directory {root}: {exc}") from exc
    if not os.access(root, os.W_OK):
        raise DatasetError(f"output directory {root} is not writable")

    config_hash = config.config_hash()
    records = []
    for plan in plans:
        sample = compose_sample(
            list(zip(plan["words"], plan["attrs"])),
            background=config.background,
            policy=config.layout,
            seed=plan["seed"],
            image_size=config.image_size,
        )
        report = validate_masks(sample)
        if not report.ok:
            raise DatasetError(f"sample {plan['sample_id']} failed mask validation: {report.summary()}")
        sid = plan["sample_id"]
        image_rel = f"images/{sid}.png"
        save_png(image_to_uint8(sample.image), root / image_rel)
        mask_rels = []
        for w, mask in enumerate(sample.pixel_masks):
            rel = f"masks/{sid}.word{w}.png"
            save_png(mask.astype(np.uint8) * 255, root / rel)
            mask_rels.append(rel)
        records.append(
            {
                "sample_id": sid,
                "image_path": image_rel,
                "mask_paths": mask_rels,
                "words": plan["words"],
                "attrs": [a.to_dict() for a in plan["attrs"]],
                "font_class": plan["font_class"],
                "controlled": plan["controlled"],
                "attribute_type": plan["attribute_type"],
                "split": plan["split"],
                "seed": plan["seed"],
                "layout": sample.layout.to_dict(),
                "text_color": [float(c) for c in sample.text_color],
                "generator_config_hash": config_hash,
            }
        )

    with open(root / CONFIG_NAME, "w", encoding="utf-8") as fh:
        json.dump(config.to_dict(), fh, indent=2, sort_keys=True)
    with open(root / MANIFEST_NAME, "w", encoding="utf-8") as fh:
        for rec in records:
            fh.write(json.dumps(rec, sort_keys=True) + "\n")
    return DatasetManifest(records, config_hash, root)


def load_manifest(path: str | os.PathLike) -> DatasetManifest:
    path = Path(path)
    if path.is_dir():
        path = path / MANIFEST_NAME
    records = []
    with open(path, encoding="utf-8") as fh:
        for line in fh:
            line = line.strip()
            if line:
                records.append(json.loads(line))
    ids = [r["sample_id"] for r in records]
    if len(set(ids)) != len(ids):
        raise DatasetError(f"duplicate sample ids in {path}")
    hashes = {r.get("generator_config_hash", "") for r in records}
    return DatasetManifest(records, hashes.pop() if len(hashes) == 1 else "", path.parent)


def record_words(record: dict) -> list[tuple[str, AttributeSet]]:
    return [(t, AttributeSet.from_dict(a)) for t, a in zip(record["words"], record["attrs"])]


def load_image(manifest: DatasetManifest, record: dict) -> np.ndarray:
    with Image.open(manifest.root / record["image_path"]) as im:
        return np.asarray(im.convert("RGB"), dtype=np.float32) / 255.0


def load_sample(manifest: DatasetManifest, record: dict) -> StyledSample:
    masks = []
    for rel in record["mask_paths"]:
        with Image.open(manifest.root / rel) as im:
            masks.append(np.asarray(im.convert("L")) >= 128)
    return StyledSample(
        image=load_image(manifest, record),
        words=record_words(record),
        pixel_masks=masks,
        layout=Layout.from_dict(record["layout"]),
        seed=record["seed"],
        text_color=tuple(record.get("text_color", (0.0, 0.0, 0.0))),
        meta={"sample_id": record["sample_id"], "controlled": record.get("controlled", [])},
    )
