"""Command-line entry point: ``wordcon <subcommand> ...``.

Exit codes: 0 success, 2 configuration error, 3 validation failure, 4 non-finite loss.
"""

from __future__ import annotations

import argparse
import json
import logging
import sys
from pathlib import Path

import numpy as np

EXIT_OK, EXIT_CONFIG, EXIT_VALIDATION, EXIT_NUMERIC = 0, 2, 3, 4

log = logging.getLogger("wordcon")


class ConfigError(ValueError):
    pass


def _read_json(path: str) -> dict:
    try:
        with open(path, encoding="utf-8") as fh:
            data = json.load(fh)
    except FileNotFoundError as e:
        raise ConfigError(f"config file not found: {path}") from e
    except json.JSONDecodeError as e:
        raise ConfigError(f"{path}: invalid JSON ({e})") from e
    if not isinstance(data, dict):
        raise ConfigError(f"{path}: top level must be a JSON object")
    return data


def _snapshot(out_dir: Path, command: str, resolved: dict) -> None:
    """Every run leaves the fully resolved config next to its outputs so it can be replayed."""
    out_dir.mkdir(parents=True, exist_ok=True)
    doc = {"command": command, "config": resolved}
    (out_dir / "resolved_config.json").write_text(json.dumps(doc, indent=2, sort_keys=True) + "\n")


def _build(cls, data: dict, what: str):
    try:
        return cls(**data)
    except TypeError as e:
        raise ConfigError(f"bad {what} config: {e}") from e


def parse_words(spec: str):
    """``"GO:bold+italic,UP"`` -> [("GO", bold+italic), ("UP", plain)]; ``@font`` picks the font class."""
    from .glyphforge.raster import ATTRIBUTE_TYPES, AttributeSet

    words = []
    for item in spec.split(","):
        item = item.strip()
        if not item:
            continue
        font = "sans"
        if "@" in item:
            item, font = item.split("@", 1)
        text, _, attrs = item.partition(":")
        flags = [a for a in attrs.split("+") if a]
        unknown = [a for a in flags if a not in ATTRIBUTE_TYPES]
        if unknown:
            raise ConfigError(f"unknown attributes {unknown} in {item!r}; expected {ATTRIBUTE_TYPES}")
        words.append((text.upper(), AttributeSet(font_class=font, **{a: True for a in flags})))
    if not words:
        raise ConfigError("no words given")
    return words


# ---------------------------------------------------------------- subcommands


def cmd_synth(args) -> int:
    from .glyphforge.dataset import DatasetConfig, build_dataset
    from .glyphforge.validate import validate_masks
    from .glyphforge.dataset import load_sample

    data = _read_json(args.config)
    if args.seed is not None:
        data["seed"] = args.seed
    cfg = DatasetConfig.from_dict(data)
    cfg.validate()
    out = Path(args.out)
    _snapshot(out, "synth", cfg.to_dict())
    manifest = build_dataset(cfg, out)
    failures = []
    for rec in manifest.records:
        report = validate_masks(load_sample(manifest, rec))
        if not report.ok:
            failures.append(f"{rec['sample_id']}: {report.summary()}")
    if failures:
        for f in failures[:20]:
            print(f, file=sys.stderr)
        return EXIT_VALIDATION
    print(f"wrote {len(manifest.records)} samples to {out}")
    return EXIT_OK


def cmd_pretrain(args) -> int:
    from .trainer import PretrainConfig, pretrain_base

    data = _read_json(args.config)
    if args.seed is not None:
        data["seed"] = args.seed
    if args.out:
        data["out_path"] = args.out
    cfg = _build(PretrainConfig, data, "pretrain")
    _snapshot(Path(cfg.out_path).parent, "pretrain", cfg.to_dict())
    pretrain_base(cfg, log_every=args.log_every)
    print(f"saved base model to {cfg.out_path}")
    return EXIT_OK


def cmd_train(args) -> int:
    from .trainer import TrainConfig, train

    data = _read_json(args.config)
    if args.seed is not None:
        data["seed"] = args.seed
    if args.out:
        data["out_dir"] = args.out
    cfg = _build(TrainConfig, data, "train")
    cfg.validate()
    _snapshot(Path(cfg.out_dir), "train", cfg.to_dict())
    result = train(cfg, resume_from=args.resume)
    last = result.metrics[-1] if result.metrics else {}
    print(json.dumps({"out_dir": str(result.out_dir), "final": last}, sort_keys=True))
    return EXIT_OK


def _load_model_and_adapter(base: str, adapter: str | None):
    from .adapters import load_adapter
    from .trainer import load_base

    model, vocab = load_base(base)
    adapters = load_adapter(adapter, expected_config_hash=model.config.config_hash()) if adapter else None
    return model, vocab, adapters


def cmd_sample(args) -> int:
    from PIL import Image

    from .flowmodel.model import Condition
    from .flowmodel.sampling import sample
    from .flowmodel.schedule import latent_to_image
    from .glyphforge.dataset import image_to_uint8

    model, vocab, adapters = _load_model_and_adapter(args.base, args.adapter)
    words = parse_words(args.words)
    token = {w: i for i, w in enumerate(vocab)}
    missing = [t for t, _ in words if t not in token]
    if missing:
        raise ConfigError(f"words {missing} are not in the model vocabulary {vocab}")
    cond = [Condition([(token[t], a) for t, a in words])]
    out = Path(args.out)
    resolved = {"base": args.base, "adapter": args.adapter, "words": args.words, "seed": args.seed, "steps": args.steps}
    _snapshot(out.parent, "sample", resolved)
    img = latent_to_image(sample(model, cond, args.steps, [args.seed], adapters))[0].numpy()
    Image.fromarray(image_to_uint8(img)).resize((img.shape[1] * args.scale, img.shape[0] * args.scale), Image.NEAREST).save(out)
    print(f"wrote {out}")
    return EXIT_OK


def _bench_config(args):
    from .evalharness.benchmark import BenchmarkConfig

    data = _read_json(args.config) if getattr(args, "config", None) else {}
    if args.seed is not None:
        data["seed"] = args.seed
    if getattr(args, "limit", None) is not None:
        data["limit"] = args.limit
    if "probe_timesteps" in data:
        data["probe_timesteps"] = tuple(data["probe_timesteps"])
    return _build(BenchmarkConfig, data, "benchmark")


def cmd_eval(args) -> int:
    from .evalharness.benchmark import run_benchmark
    from .glyphforge.dataset import load_manifest

    model, vocab, adapters = _load_model_and_adapter(args.base, args.adapter)
    cfg = _bench_config(args)
    out = Path(args.out)
    _snapshot(out, "eval", {"base": args.base, "adapter": args.adapter, "manifest": args.manifest, "benchmark": cfg.to_dict()})
    report = run_benchmark(model, load_manifest(args.manifest), vocab, adapters, cfg, out_dir=out, dump_images=args.dump_images)
    print(json.dumps({"run_id": report.run_id, **report.summary()}, sort_keys=True))
    return EXIT_OK


def cmd_merge(args) -> int:
    from .adapters import load_adapter, merged_model
    from .flowmodel.container import load_tensors, save_model
    from .trainer import load_base

    model, vocab = load_base(args.base)
    adapters = load_adapter(args.adapter, expected_config_hash=model.config.config_hash())
    merged = merged_model(model, adapters)
    _, meta = load_tensors(args.base)
    out = Path(args.out)
    _snapshot(out.parent, "merge-adapter", {"base": args.base, "adapter": args.adapter, "out": args.out})
    save_model(out, merged, {"vocabulary": vocab, "merged_from": {"base": args.base, "adapter": args.adapter}})
    print(f"wrote merged model to {out}")
    return EXIT_OK


def cmd_attn_probe(args) -> int:
    from PIL import Image

    from .evalharness.benchmark import probe_attention
    from .evalharness.metrics import attention_alignment
    from .glyphforge.dataset import load_manifest, record_words

    model, vocab, adapters = _load_model_and_adapter(args.checkpoint, args.adapter)
    manifest = load_manifest(args.manifest)
    try:
        rec = manifest.by_id(args.sample)
    except KeyError as e:
        raise ConfigError(f"sample {args.sample!r} not in {args.manifest}") from e
    ts = tuple(float(t) for t in args.timesteps.split(","))
    probe = probe_attention(model, manifest, [rec], vocab, adapters, ts, args.seed or 0)[0]
    out = Path(args.out)
    _snapshot(out, "attn-probe", {"checkpoint": args.checkpoint, "adapter": args.adapter, "manifest": args.manifest,
                                  "sample": args.sample, "timesteps": list(ts), "seed": args.seed or 0})
    words = []
    for i, (text, attrs) in enumerate(record_words(rec)):
        amap, mask = probe["maps"][i], probe["masks"][i]
        name = f"{args.sample}.word{i}"
        big = np.kron(np.clip(amap, 0, 1), np.ones((8, 8)))
        Image.fromarray((big * 255).round().astype(np.uint8)).save(out / f"{name}.attn.png")
        Image.fromarray(np.kron(mask.astype(np.uint8) * 255, np.ones((8, 8), dtype=np.uint8))).save(out / f"{name}.mask.png")
        words.append({"index": i, "text": text, "attrs": attrs.to_dict(),
                      "iou": attention_alignment(amap, mask), "map": np.round(amap, 6).tolist()})
    (out / "probe.json").write_text(json.dumps({"sample": args.sample, "words": words}, indent=2, sort_keys=True) + "\n")
    print(json.dumps({w["text"]: round(w["iou"], 4) for w in words}))
    return EXIT_OK


def cmd_ablate(args) -> int:
    from .ablation import AblationConfig, format_table, run_ablation

    data = _read_json(args.config) if args.config else {}
    if args.seed is not None:
        data["seeds"] = [args.seed]
    cfg = _build(AblationConfig, data, "ablation")
    table = run_ablation(cfg, args.out)
    print(format_table(table["rows"]), end="")
    return EXIT_OK


# ---------------------------------------------------------------- wiring


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="wordcon", description=__doc__.splitlines()[0])
    p.add_argument("-v", "--verbose", action="store_true")
    sub = p.add_subparsers(dest="command", required=True)

    s = sub.add_parser("synth", help="build a synthetic dataset")
    s.add_argument("--config", required=True)
    s.add_argument("--out", required=True)
    s.add_argument("--seed", type=int)
    s.set_defaults(func=cmd_synth)

    s = sub.add_parser("pretrain", help="train a base model on plain renders")
    s.add_argument("--config", required=True)
    s.add_argument("--out", help="output .wcp path (overrides out_path)")
    s.add_argument("--seed", type=int)
    s.add_argument("--log-every", type=int, default=250)
    s.set_defaults(func=cmd_pretrain)

    s = sub.add_parser("train", help="train adapters")
    s.add_argument("--config", required=True)
    s.add_argument("--out", help="output directory (overrides out_dir)")
    s.add_argument("--seed", type=int)
    s.add_argument("--resume", help="state file to resume from")
    s.set_defaults(func=cmd_train)

    s = sub.add_parser("sample", help="generate one image")
    s.add_argument("--base", required=True)
    s.add_argument("--adapter")
    s.add_argument("--words", required=True, help='e.g. "GO:bold,UP" or "IT:italic+underline,NO"')
    s.add_argument("--steps", type=int, default=20)
    s.add_argument("--seed", type=int, default=0)
    s.add_argument("--scale", type=int, default=1, help="nearest-neighbour upscaling of the saved PNG")
    s.add_argument("--out", required=True)
    s.set_defaults(func=cmd_sample)

    s = sub.add_parser("eval", help="benchmark a base model plus optional adapter")
    s.add_argument("--base", required=True)
    s.add_argument("--adapter")
    s.add_argument("--manifest", required=True)
    s.add_argument("--config", help="benchmark settings JSON")
    s.add_argument("--limit", type=int)
    s.add_argument("--seed", type=int)
    s.add_argument("--dump-images", action="store_true")
    s.add_argument("--out", required=True)
    s.set_defaults(func=cmd_eval)

    s = sub.add_parser("merge-adapter", help="fold an adapter into the base weights")
    s.add_argument("--base", required=True)
    s.add_argument("--adapter", required=True)
    s.add_argument("--out", required=True)
    s.set_defaults(func=cmd_merge)

    s = sub.add_parser("attn-probe", help="per-word attention maps and IoU for one sample")
    s.add_argument("--checkpoint", required=True, help="base model file")
    s.add_argument("--adapter")
    s.add_argument("--manifest", required=True)
    s.add_argument("--sample", required=True)
    s.add_argument("--timesteps", default="0.25,0.5,0.75")
    s.add_argument("--seed", type=int)
    s.add_argument("--out", required=True)
    s.set_defaults(func=cmd_attn_probe)

    s = sub.add_parser("ablate", help="train and benchmark every loss mode over several seeds")
    s.add_argument("--config")
    s.add_argument("--seed", type=int, help="run a single seed instead of the configured list")
    s.add_argument("--out", required=True)
    s.set_defaults(func=cmd_ablate)
    return p


def main(argv: list[str] | None = None) -> int:
    from .adapters import AdapterMismatchError
    from .flowmodel.container import ContainerIntegrityError
    from .glyphforge.dataset import DatasetError
    from .grounding import MaskValidationError, MissingMaskError, NonBinaryMaskError
    from .trainer import NumericError, StateMismatchError

    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(levelname)s %(name)s: %(message)s")
    try:
        return args.func(args)
    except NumericError as e:
        print(f"numeric failure: {e}", file=sys.stderr)
        return EXIT_NUMERIC
    except (MaskValidationError, MissingMaskError, NonBinaryMaskError, AdapterMismatchError,
            ContainerIntegrityError, StateMismatchError, DatasetError) as e:
        print(f"validation failure: {e}", file=sys.stderr)
        return EXIT_VALIDATION
    except (ConfigError, ValueError, KeyError, TypeError, FileNotFoundError) as e:
        print(f"config error: {e}", file=sys.stderr)
        return EXIT_CONFIG


if __name__ == "__main__":
    sys.exit(main())
