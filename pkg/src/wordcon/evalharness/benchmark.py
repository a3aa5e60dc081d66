"""End-to-end benchmark: sample every test condition, grade, aggregate, report."""

from __future__ import annotations

import hashlib
import json
import os
from dataclasses import asdict, dataclass, field
from pathlib import Path

import numpy as np
import torch

from ..adapters import AdapterMismatchError, AdapterSet
from ..flowmodel.model import Condition, ConditionBatch, FlowDiT, extract_word_attention
from ..flowmodel.sampling import initial_noise, sample
from ..flowmodel.schedule import forward_process, image_to_latent, latent_to_image
from ..glyphforge.dataset import DatasetManifest, image_to_uint8, load_sample, record_words, save_png
from ..grounding import oracle_masks
from .grader import GraderConfig, SampleGrade, grade_sample
from .metrics import accuracy_metrics, attention_alignment, ocr_counts, precision_recall
from .ocr import OcrConfig, recognize


@dataclass
class BenchmarkConfig:
    steps: int = 20
    seed: int = 0
    split: str = "test"
    limit: int | None = None
    probe_timesteps: tuple[float, ...] = (0.25, 0.5, 0.75)
    attn_threshold: float = 0.5
    batch_size: int = 64
    grader: GraderConfig = field(default_factory=GraderConfig)
    ocr: OcrConfig = field(default_factory=OcrConfig)

    def to_dict(self) -> dict:
        d = asdict(self)
        d["grader"] = {k: v for k, v in d["grader"].items() if k != "style"}
        d["ocr"] = {k: v for k, v in d["ocr"].items() if k != "style"}
        d["probe_timesteps"] = list(self.probe_timesteps)
        return d

    def config_hash(self) -> str:
        return hashlib.sha256(json.dumps(self.to_dict(), sort_keys=True).encode()).hexdigest()[:16]


@dataclass
class BenchmarkReport:
    type_acc: float
    word_acc: float
    total_acc: float
    ocr_precision: float
    ocr_recall: float
    mean_attention_iou: float | None
    grades: list[SampleGrade]
    config_hash: str = ""
    run_id: str = ""

    def __post_init__(self):
        for name in ("type_acc", "word_acc", "total_acc", "ocr_precision", "ocr_recall"):
            v = getattr(self, name)
            if not 0.0 <= v <= 100.0:
                raise ValueError(f"{name}={v} outside [0, 100]")
        if self.total_acc > min(self.type_acc, self.word_acc) + 1e-9:
            raise ValueError("total_acc exceeds min(type_acc, word_acc)")

    def summary(self) -> dict:
        return {
            "type_acc": round(self.type_acc, 4),
            "word_acc": round(self.word_acc, 4),
            "total_acc": round(self.total_acc, 4),
            "ocr_precision": round(self.ocr_precision, 4),
            "ocr_recall": round(self.ocr_recall, 4),
            "mean_attention_iou": None if self.mean_attention_iou is None else round(self.mean_attention_iou, 6),
            "n_samples": len(self.grades),
        }

    def to_dict(self) -> dict:
        return {
            "run_id": self.run_id,
            "config_hash": self.config_hash,
            **self.summary(),
            "samples": [g.to_dict() for g in self.grades],
        }

    def write(self, path: str | os.PathLike) -> None:
        Path(path).parent.mkdir(parents=True, exist_ok=True)
        Path(path).write_text(json.dumps(self.to_dict(), indent=2, sort_keys=True) + "\n")


def condition_seed(seed: int, record: dict) -> int:
    """Sampling seed for one test condition; independent of batch composition and order."""
    return int(np.random.SeedSequence([int(seed), int(record["seed"]) % 2**32]).generate_state(1)[0])


def grade_images(images: list[np.ndarray], records: list[dict], config: BenchmarkConfig = BenchmarkConfig()):
    """Grade a list of images against the conditions in ``records``.

    Returns (sample grades, ocr (matches, recognized, expected) totals).
    """
    grades, ocr_tot = [], np.zeros(3, dtype=np.int64)
    for img, rec in zip(images, records, strict=True):
        words = record_words(rec)
        grades.append(SampleGrade(words, grade_sample(img, words, config.grader), sample_id=rec["sample_id"]))
        ocr_tot += np.asarray(ocr_counts(recognize(img, config.ocr), [t for t, _ in words]))
    return grades, tuple(int(v) for v in ocr_tot)


def check_adapters(model: FlowDiT, adapters: AdapterSet | None) -> None:
    if adapters is not None and adapters.base_config_hash != model.config.config_hash():
        raise AdapterMismatchError(
            f"adapters target base config {adapters.base_config_hash}, model is {model.config.config_hash()}"
        )


def _token_map(vocabulary: list[str]) -> dict[str, int]:
    return {w: i for i, w in enumerate(vocabulary)}


def conditions_for(records: list[dict], vocabulary: list[str]) -> list[Condition]:
    token = _token_map(vocabulary)
    out = []
    for rec in records:
        missing = [w for w in rec["words"] if w not in token]
        if missing:
            raise ValueError(f"{rec['sample_id']}: words {missing} are not in the model vocabulary")
        out.append(Condition([(token[t], a) for t, a in record_words(rec)]))
    return out


def generate(model: FlowDiT, records: list[dict], vocabulary: list[str], adapters, config: BenchmarkConfig) -> np.ndarray:
    """One image per record, (N, H, W, 3) in [0, 1]."""
    conds = conditions_for(records, vocabulary)
    out = []
    for i in range(0, len(conds), config.batch_size):
        chunk = conds[i : i + config.batch_size]
        seeds = [condition_seed(config.seed, r) for r in records[i : i + config.batch_size]]
        batch = ConditionBatch.from_conditions(chunk, model.config)
        out.append(latent_to_image(sample(model, batch, config.steps, seeds, adapters)).numpy())
    return np.concatenate(out)


@torch.no_grad()
def probe_attention(
    model: FlowDiT,
    manifest: DatasetManifest,
    records: list[dict],
    vocabulary: list[str],
    adapters=None,
    timesteps=(0.25, 0.5, 0.75),
    seed: int = 0,
) -> list[dict]:
    """Per-sample word attention maps on noised ground-truth latents, averaged over ``timesteps``.

    Each entry holds ``maps`` (k, g, g) and the oracle word masks (k, g, g).
    """
    samples = [load_sample(manifest, r) for r in records]
    for s, r in zip(samples, records):
        s.meta["sample_id"] = r["sample_id"]
    x0 = image_to_latent(torch.from_numpy(np.stack([s.image for s in samples])))
    cond = ConditionBatch.from_conditions(conditions_for(records, vocabulary), model.config)
    acc = None
    for j, t in enumerate(timesteps):
        eps = torch.stack([initial_noise(x0.shape[1:], condition_seed(seed + 7919 * (j + 1), r)) for r in records])
        zt = forward_process(x0, eps.to(x0.dtype), torch.full((len(records),), float(t))).z
        _, rec = model(zt, torch.full((len(records),), float(t)), cond, adapters)
        maps = torch.stack([extract_word_attention(rec, i) for i in range(rec.n_text)], dim=1)
        acc = maps if acc is None else acc + maps
    acc = (acc / len(timesteps)).numpy()
    out = []
    for i, s in enumerate(samples):
        k = len(s.words)
        out.append({"maps": acc[i, :k], "masks": oracle_masks(s, model.config.patch_size).word_masks})
    return out


def attention_iou(probes: list[dict], records: list[dict], threshold: float = 0.5) -> float:
    """Mean IoU over controlled words (every word when a sample has none controlled)."""
    scores = []
    for p, rec in zip(probes, records):
        words = record_words(rec)
        idx = [i for i, (_, a) in enumerate(words) if not a.is_plain] or list(range(len(words)))
        scores.extend(attention_alignment(p["maps"][i], p["masks"][i], threshold) for i in idx)
    return float(np.mean(scores))


def _digest(tensors) -> str:
    h = hashlib.sha256()
    for name, t in tensors:
        h.update(name.encode())
        h.update(t.detach().to(torch.float64).contiguous().numpy().tobytes())
    return h.hexdigest()


def run_benchmark(
    model: FlowDiT,
    manifest: DatasetManifest,
    vocabulary: list[str],
    adapters: AdapterSet | None = None,
    config: BenchmarkConfig = BenchmarkConfig(),
    out_dir: str | os.PathLike | None = None,
    dump_images: bool = False,
) -> BenchmarkReport:
    check_adapters(model, adapters)
    records = manifest.split(config.split)
    if config.limit is not None:
        records = records[: config.limit]
    if not records:
        raise ValueError(f"split {config.split!r} has no records")
    model.eval()
    images = generate(model, records, vocabulary, adapters, config)
    grades, (matches, n_rec, n_exp) = grade_images(list(images), records, config)
    type_acc, word_acc, total_acc = accuracy_metrics(grades)
    precision, recall = precision_recall(matches, n_rec, n_exp)
    iou = None
    if config.probe_timesteps:
        probes = probe_attention(model, manifest, records, vocabulary, adapters, config.probe_timesteps, config.seed)
        iou = attention_iou(probes, records, config.attn_threshold)

    run_hash = hashlib.sha256()
    run_hash.update(config.config_hash().encode())
    run_hash.update(_digest(sorted(model.state_dict().items())).encode())
    if adapters is not None:
        run_hash.update(_digest(adapters.named_parameters()).encode())
    run_hash.update(",".join(r["sample_id"] for r in records).encode())
    report = BenchmarkReport(
        type_acc, word_acc, total_acc, precision, recall, iou, grades,
        config_hash=config.config_hash(), run_id=run_hash.hexdigest()[:12],
    )
    if out_dir is not None:
        out = Path(out_dir)
        out.mkdir(parents=True, exist_ok=True)
        report.write(out / "report.json")
        if dump_images:
            (out / "samples").mkdir(exist_ok=True)
            for rec, img in zip(records, images):
                save_png(image_to_uint8(img), out / "samples" / f"{rec['sample_id']}.png")
    return report
