import json

import pytest

from wordcon.cli import main, parse_words
from wordcon.flowmodel import save_model
from wordcon.glyphforge import AttributeSet

from conftest import VOCAB, tiny_model


@pytest.fixture(scope="module")
def base(tmp_path_factory):
    path = tmp_path_factory.mktemp("cli") / "base.wcp"
    save_model(path, tiny_model(seed=2), {"vocabulary": VOCAB})
    return path


def _write(path, obj):
    path.write_text(json.dumps(obj))
    return str(path)


def test_parse_words():
    words = parse_words("go:bold+italic,UP,it:underline@serif")
    assert words[0] == ("GO", AttributeSet(bold=True, italic=True))
    assert words[1] == ("UP", AttributeSet())
    assert words[2] == ("IT", AttributeSet(underline=True, font_class="serif"))


def test_synth_writes_dataset_and_snapshot(tmp_path):
    cfg = _write(tmp_path / "ds.json", {"vocabulary": VOCAB, "n_samples": 6})
    assert main(["synth", "--config", cfg, "--out", str(tmp_path / "ds"), "--seed", "4"]) == 0
    snap = json.loads((tmp_path / "ds" / "resolved_config.json").read_text())
    assert snap["command"] == "synth" and snap["config"]["seed"] == 4
    assert len((tmp_path / "ds" / "manifest.jsonl").read_text().splitlines()) == 6


def test_synth_replay_from_snapshot(tmp_path):
    cfg = _write(tmp_path / "ds.json", {"vocabulary": VOCAB, "n_samples": 6, "seed": 1})
    main(["synth", "--config", cfg, "--out", str(tmp_path / "a")])
    snap = json.loads((tmp_path / "a" / "resolved_config.json").read_text())["config"]
    main(["synth", "--config", _write(tmp_path / "replay.json", snap), "--out", str(tmp_path / "b")])
    assert (tmp_path / "a" / "manifest.jsonl").read_text() == (tmp_path / "b" / "manifest.jsonl").read_text()


def test_config_errors_exit_2(tmp_path):
    assert main(["synth", "--config", str(tmp_path / "missing.json"), "--out", str(tmp_path / "x")]) == 2
    bad = _write(tmp_path / "bad.json", {"vocabulary": VOCAB, "n_samples": 4})  # infeasible balance
    assert main(["synth", "--config", bad, "--out", str(tmp_path / "x")]) == 2
    (tmp_path / "junk.json").write_text("{nope")
    assert main(["synth", "--config", str(tmp_path / "junk.json"), "--out", str(tmp_path / "x")]) == 2


def test_train_sample_eval_merge_probe(tmp_path, small_dataset, base):
    tcfg = _write(tmp_path / "train.json", {"manifest": str(small_dataset.root), "base_model": str(base),
                                            "out_dir": str(tmp_path / "run"), "steps": 2, "batch_size": 4})
    assert main(["train", "--config", tcfg]) == 0
    adapter = str(tmp_path / "run" / "adapter.wcp")
    assert (tmp_path / "run" / "resolved_config.json").exists()

    assert main(["sample", "--base", str(base), "--adapter", adapter, "--words", "GO:bold,UP",
                 "--steps", "2", "--out", str(tmp_path / "img.png")]) == 0
    assert (tmp_path / "img.png").exists()

    assert main(["eval", "--base", str(base), "--adapter", adapter, "--manifest", str(small_dataset.root),
                 "--limit", "2", "--out", str(tmp_path / "eval")]) == 0
    report = json.loads((tmp_path / "eval" / "report.json").read_text())
    assert report["n_samples"] == 2

    assert main(["merge-adapter", "--base", str(base), "--adapter", adapter, "--out", str(tmp_path / "merged.wcp")]) == 0
    assert (tmp_path / "merged.wcp").exists()

    sid = small_dataset.records[0]["sample_id"]
    assert main(["attn-probe", "--checkpoint", str(base), "--adapter", adapter, "--manifest", str(small_dataset.root),
                 "--sample", sid, "--out", str(tmp_path / "probe")]) == 0
    probe = json.loads((tmp_path / "probe" / "probe.json").read_text())
    assert len(probe["words"]) == 2 and all(0 <= w["iou"] <= 1 for w in probe["words"])
    assert (tmp_path / "probe" / f"{sid}.word0.attn.png").exists()


def test_unknown_word_is_config_error(tmp_path, base):
    assert main(["sample", "--base", str(base), "--words", "ZZ", "--out", str(tmp_path / "x.png")]) == 2


def test_adapter_for_other_base_is_validation_error(tmp_path, small_dataset, base):
    other = tmp_path / "other.wcp"
    save_model(other, tiny_model(hidden_dim=16), {"vocabulary": VOCAB})
    tcfg = _write(tmp_path / "t.json", {"manifest": str(small_dataset.root), "base_model": str(other),
                                        "out_dir": str(tmp_path / "run"), "steps": 1, "batch_size": 2})
    assert main(["train", "--config", tcfg]) == 0
    assert main(["merge-adapter", "--base", str(base), "--adapter", str(tmp_path / "run" / "adapter.wcp"),
                 "--out", str(tmp_path / "m.wcp")]) == 3


def test_missing_imported_masks_is_validation_error(tmp_path, small_dataset, base):
    tcfg = _write(tmp_path / "t.json", {"manifest": str(small_dataset.root), "base_model": str(base),
                                        "out_dir": str(tmp_path / "run"), "steps": 1, "mask_source": "import",
                                        "mask_dir": str(tmp_path / "nomasks")})
    assert main(["train", "--config", tcfg]) == 3


def test_non_finite_loss_exit_4(tmp_path, small_dataset, base):
    tcfg = _write(tmp_path / "t.json", {"manifest": str(small_dataset.root), "base_model": str(base),
                                        "out_dir": str(tmp_path / "run"), "steps": 3, "batch_size": 2,
                                        "lr_policy": {"kind": "constant", "lr": float("inf")}})
    assert main(["train", "--config", tcfg]) == 4


def test_ablate_small(tmp_path, base):
    cfg = {
        "vocabulary": VOCAB,
        "finetune_dataset": {"n_samples": 12, "seed": 3},
        "base_path": str(base),
        "train": {"steps": 2, "batch_size": 4},
        "seeds": [0],
        "benchmark": {"steps": 1, "limit": 2},
    }
    path = _write(tmp_path / "abl.json", cfg)
    assert main(["ablate", "--config", path, "--out", str(tmp_path / "a")]) == 0
    table = json.loads((tmp_path / "a" / "table.json").read_text())
    assert [r["mode"] for r in table["rows"]] == ["vanilla", "masked", "masked+attn"]
    assert len({a["init_adapter_hash"] for a in table["arms"]}) == 1
    assert len((tmp_path / "a" / "table.txt").read_text().splitlines()) == 4
    assert main(["ablate", "--config", path, "--out", str(tmp_path / "b")]) == 0
    again = json.loads((tmp_path / "b" / "table.json").read_text())
    assert [r["total_acc"] for r in again["rows"]] == [r["total_acc"] for r in table["rows"]]
    assert [a["summary"] for a in again["arms"]] == [a["summary"] for a in table["arms"]]
