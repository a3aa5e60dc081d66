"""Acceptance suite: one test per criterion, each printing a PASS/FAIL line in the terminal summary.

Criteria 7 and 8 train real adapters on a pretrained desk-scale base. The base and
datasets are cached under ``$WORDCON_ACCEPTANCE_CACHE`` (default ``.cache/acceptance``
in the repository) so repeat runs skip pretraining.
"""

import hashlib
import json
import os
import time
from pathlib import Path

import numpy as np
import pytest
import torch

from wordcon.ablation import DESK_VOCABULARY, AblationConfig, run_ablation
from wordcon.adapters import init_adapter, merged_model, select_parameters
from wordcon.evalharness import accuracy_metrics, grade_images, grade_sample, precision_recall
from wordcon.evalharness.grader import SampleGrade
from wordcon.flowmodel import Condition, ConditionBatch, conditional_target, forward_process
from wordcon.flowmodel.sampling import euler_integrate
from wordcon.glyphforge import ATTRIBUTE_TYPES, AttributeSet, DatasetConfig, build_dataset, load_sample, record_words, validate_masks
from wordcon.losses import cfm_loss, masked_loss
from wordcon.trainer import TrainConfig, TrainingData, compute_losses, freeze_base, load_base, new_state, train_step
from wordcon.flowmodel import save_model

from conftest import ACCEPTANCE, VOCAB, tiny_model

REPO = Path(__file__).resolve().parents[1]
CACHE = Path(os.environ.get("WORDCON_ACCEPTANCE_CACHE", REPO / ".cache" / "acceptance"))


def record(n, ok, detail):
    ACCEPTANCE[n] = (bool(ok), detail)
    assert ok, f"criterion {n}: {detail}"


def _inputs(model, n, seed):
    g = torch.Generator().manual_seed(seed)
    dtype = next(model.parameters()).dtype
    z = torch.randn(n, 3, 32, 32, generator=g, dtype=dtype)
    t = torch.rand(n, generator=g, dtype=dtype)
    conds = []
    for i in range(n):
        a, b = torch.randint(len(VOCAB), (2,), generator=g).tolist()
        conds.append(Condition([(a, AttributeSet.of_type(ATTRIBUTE_TYPES[i % 3])), (b, AttributeSet())]))
    return z, t, ConditionBatch.from_conditions(conds, model.config)


# ---------------------------------------------------------------- 1


def test_criterion_1_masked_loss_degeneracy():
    start = time.perf_counter()
    rng = np.random.default_rng(0)
    worst = 0.0
    for _ in range(100):
        b, c, g = int(rng.integers(1, 5)), int(rng.integers(1, 5)), int(rng.choice([2, 4, 8]))
        patch = int(rng.choice([1, 2, 4]))
        v = torch.from_numpy(rng.normal(size=(b, c, g * patch, g * patch)) * rng.uniform(0.1, 10))
        u = torch.from_numpy(rng.normal(size=v.shape))
        worst = max(worst, abs(masked_loss(v, u, torch.ones(b, g, g)).item() - cfm_loss(v, u).item()))
    elapsed = time.perf_counter() - start
    record(1, worst <= 1e-6 and elapsed < 1.0, f"masked(all-ones) vs cfm: max |diff| {worst:.1e} over 100 fixtures, {elapsed:.2f}s")


# ---------------------------------------------------------------- 2


def _fd_fixture():
    model = tiny_model(seed=0, dtype=torch.float64, double_blocks=2, hidden_dim=32)
    freeze_base(model)
    adapters = init_adapter(model, select_parameters(model.config), rank=2, seed=1)
    g = torch.Generator().manual_seed(2)
    with torch.no_grad():
        for f in adapters.factors.values():
            f.B.copy_(torch.randn(f.B.shape, generator=g, dtype=torch.float64) * 0.1)
    adapters.requires_grad_(True)
    n = 2
    x0 = torch.rand(n, 3, 32, 32, generator=g, dtype=torch.float64) * 2 - 1
    eps = torch.randn(n, 3, 32, 32, generator=g, dtype=torch.float64)
    t = torch.rand(n, generator=g, dtype=torch.float64)
    cond = ConditionBatch.from_conditions(
        [Condition([(0, AttributeSet(bold=True)), (3, AttributeSet())]),
         Condition([(5, AttributeSet(italic=True)), (1, AttributeSet())])],
        model.config,
    )
    wm = torch.zeros(n, 2, 8, 8, dtype=torch.float64)
    wm[0, 0, 2:4, 1:4] = 1
    wm[0, 1, 2:4, 5:7] = 1
    wm[1, 0, 4:6, 0:3] = 1
    wm[1, 1, 4:6, 4:8] = 1
    batch = {"x0": x0, "cond": cond, "word_masks": wm, "union": wm.amax(1), "mask_valid": torch.ones(n, 2, dtype=torch.bool)}
    return model, adapters, batch, t, eps


def test_criterion_2_gradient_oracle():
    start = time.perf_counter()
    model, adapters, batch, t, eps = _fd_fixture()

    def loss():
        return compute_losses(model, batch, t, eps, adapters, "masked+attn", 0.01)[0]

    loss().backward()
    h, analytic, numeric, values = 1e-5, [], [], []
    with torch.no_grad():
        for _, p in adapters.named_parameters():
            flat = p.view(-1)
            analytic.append(p.grad.view(-1).clone())
            fd = torch.empty_like(flat)
            for i in range(flat.numel()):
                orig = flat[i].item()
                flat[i] = orig + h
                lp = loss().item()
                flat[i] = orig - h
                lm = loss().item()
                flat[i] = orig
                fd[i] = (lp - lm) / (2 * h)
                values += [lp, lm]
            numeric.append(fd)
    a, f = torch.cat(analytic), torch.cat(numeric)
    err = (a - f).abs()
    scale = torch.maximum(a.abs(), f.abs())
    # Central differences cannot resolve a derivative below the rounding of the two loss values.
    roundoff = 4 * torch.finfo(torch.float64).eps * max(abs(v) for v in values) / h
    ok_scalar = err <= 1e-4 * scale + roundoff
    raw_rel = (err / scale.clamp_min(torch.finfo(torch.float64).tiny)).max().item()
    vec_rel = ((a - f).norm() / torch.maximum(a.norm(), f.norm())).item()
    elapsed = time.perf_counter() - start
    ok = bool(ok_scalar.all()) and elapsed < 300
    record(
        2, ok,
        f"{a.numel()} adapter scalars, λ=0.01, h=1e-5: {int((~ok_scalar).sum())} outside rel 1e-4 (+ roundoff {roundoff:.1e}); "
        f"vector rel err {vec_rel:.1e}, worst raw per-scalar rel {raw_rel:.1e}; {elapsed:.0f}s",
    )


# ---------------------------------------------------------------- 3


def test_criterion_3_adapter_contracts(small_dataset, tmp_path):
    start = time.perf_counter()
    m = tiny_model(seed=4)
    ad = init_adapter(m, select_parameters(m.config), rank=4, seed=3)
    z, t, c = _inputs(m, 4, seed=0)
    with torch.no_grad():
        transparency = (m(z, t, c)[0] - m(z, t, c, ad)[0]).abs().max().item()

    g = torch.Generator().manual_seed(5)
    with torch.no_grad():
        for f in ad.factors.values():
            f.B.copy_(torch.randn(f.B.shape, generator=g) * 0.1)
    merged = merged_model(m, ad)
    merge_err = 0.0
    for i in range(10):
        z, t, c = _inputs(m, 2, seed=100 + i)
        with torch.no_grad():
            merge_err = max(merge_err, (m(z, t, c, ad)[0] - merged(z, t, c)[0]).abs().max().item())

    params = dict(m.named_parameters())
    formula = sum(4 * (params[n].shape[1] + params[n].shape[0]) for n in select_parameters(m.config))

    base_path = tmp_path / "base.wcp"
    save_model(base_path, tiny_model(seed=3), {"vocabulary": VOCAB})
    model, _ = load_base(base_path)
    freeze_base(model)
    before = {n: p.detach().clone() for n, p in model.state_dict().items()}
    cfg = TrainConfig(manifest=str(small_dataset.root), base_model=str(base_path), out_dir=str(tmp_path / "run"),
                      loss_mode="masked+attn", batch_size=4, steps=100)
    data = TrainingData(small_dataset, "train", VOCAB, model.config)
    state = new_state(model, cfg)
    n_opt = sum(p.numel() for grp in state.optimizer.param_groups for p in grp["params"])
    for _ in range(100):
        train_step(model, data, state, cfg)
    frozen = all(torch.equal(before[n], p) for n, p in model.state_dict().items())
    moved = any(f.B.abs().sum() > 0 for f in state.adapters.factors.values())
    elapsed = time.perf_counter() - start
    ok = (transparency <= 1e-6 and merge_err <= 1e-5 and ad.num_params == formula == n_opt
          and frozen and moved and elapsed < 120)
    record(
        3, ok,
        f"zero-init delta {transparency:.1e}, merge err {merge_err:.1e}, trainable {ad.num_params}=Σr(d_in+d_out)={formula}"
        f"=optimizer {n_opt}, base bitwise frozen after 100 steps: {frozen}; {elapsed:.0f}s",
    )


# ---------------------------------------------------------------- 4


def test_criterion_4_flow_identities():
    start = time.perf_counter()
    g = torch.Generator().manual_seed(0)
    x0 = torch.randn(3, 3, 8, 8, generator=g, dtype=torch.float64)
    eps = torch.randn(3, 3, 8, 8, generator=g, dtype=torch.float64)
    boundaries = torch.equal(forward_process(x0, eps, 0.0).z, x0) and torch.equal(forward_process(x0, eps, 1.0).z, eps)

    fd_err = 0.0
    for tv in np.linspace(0.05, 0.95, 10):
        h = 1e-6
        fd = (forward_process(x0, eps, tv + h).z - forward_process(x0, eps, tv - h).z) / (2 * h)
        fd_err = max(fd_err, (fd - conditional_target(x0, eps)).abs().max().item())

    m = tiny_model(seed=1)
    row_err = 0.0
    for seed in range(5):
        z, t, c = _inputs(m, 2, seed)
        with torch.no_grad():
            _, rec = m(z, t, c)
        for rows in rec.rows:
            row_err = max(row_err, (rows.sum(-1) - 1).abs().max().item())

    # Dyadic values keep every intermediate exactly representable, so "exact" means bitwise.
    x0d = torch.randint(-64, 64, (2, 3, 8, 8), generator=g).double() / 64
    epsd = torch.randint(-64, 64, (2, 3, 8, 8), generator=g).double() / 64
    exact = torch.equal(euler_integrate(lambda z, t: epsd - x0d, epsd, 1), x0d)
    euler_err = (euler_integrate(lambda z, t: eps - x0, eps, 1) - x0).abs().max().item()
    elapsed = time.perf_counter() - start
    ok = boundaries and fd_err <= 1e-6 and row_err <= 1e-6 and exact and euler_err <= 1e-12 and elapsed < 60
    record(
        4, ok,
        f"boundaries exact: {boundaries}, target vs FD {fd_err:.1e}, attention row-sum err {row_err:.1e}, "
        f"1-step Euler bitwise on dyadic inputs: {exact} (float64 random: {euler_err:.1e}); {elapsed:.1f}s",
    )


# ---------------------------------------------------------------- 5 and 6


ACCEPTANCE_DATASET = DatasetConfig(vocabulary=list(DESK_VOCABULARY), n_samples=200, seed=11)


@pytest.fixture(scope="module")
def dataset_200(tmp_path_factory):
    start = time.perf_counter()
    root = tmp_path_factory.mktemp("accept")
    manifest = build_dataset(ACCEPTANCE_DATASET, root / "a")
    return manifest, root, time.perf_counter() - start


def _tree_hashes(root: Path) -> dict:
    return {p.relative_to(root).as_posix(): hashlib.sha256(p.read_bytes()).hexdigest()
            for p in sorted(root.rglob("*")) if p.is_file()}


def test_criterion_5_dataset_soundness(dataset_200):
    manifest, root, build_s = dataset_200
    start = time.perf_counter()
    reports = [validate_masks(load_sample(manifest, r)) for r in manifest.records]
    n_ok = sum(r.ok for r in reports)
    build_dataset(ACCEPTANCE_DATASET, root / "b")
    identical = _tree_hashes(root / "a") == _tree_hashes(root / "b")
    counts = {k: sum(r["attribute_type"] == k for r in manifest.records) for k in ATTRIBUTE_TYPES}
    uniform = len(manifest.records) / len(ATTRIBUTE_TYPES)
    worst = max(abs(c - uniform) / uniform for c in counts.values())
    elapsed = build_s + time.perf_counter() - start
    ok = n_ok == len(reports) == 200 and identical and worst <= 0.05 and elapsed < 120
    record(
        5, ok,
        f"validate_masks {n_ok}/{len(reports)}, rebuild file hashes identical: {identical}, "
        f"attribute counts {counts} (max deviation {worst:.1%}); {elapsed:.0f}s",
    )


def _flipped(words):
    """Every flag of each controlled word inverted; plain words kept."""
    return [(text, a if a.is_plain else AttributeSet(*(not f for f in a.flags), font_class=a.font_class))
            for text, a in words]


def test_criterion_6_grader_calibration(dataset_200):
    manifest, _, _ = dataset_200
    start = time.perf_counter()
    recs = manifest.records
    images = [load_sample(manifest, r).image for r in recs]
    grades, (matches, n_rec, n_exp) = grade_images(images, recs)
    type_acc, word_acc, total_acc = accuracy_metrics(grades)
    precision, recall = precision_recall(matches, n_rec, n_exp)

    n_ctrl = n_correct = 0
    for img, rec in zip(images, recs):
        words = _flipped(record_words(rec))
        sg = SampleGrade(words, grade_sample(img, words))
        n_ctrl += len(sg.controlled)
        n_correct += sum(sg.grades[i].attribute_correct for i in sg.controlled)
    flipped_acc = 100.0 * n_correct / n_ctrl
    elapsed = time.perf_counter() - start
    ok = (type_acc == word_acc == total_acc == precision == recall == 100.0) and flipped_acc == 0.0 and elapsed < 120
    record(
        6, ok,
        f"ground truth type/word/total {type_acc:.1f}/{word_acc:.1f}/{total_acc:.1f}, OCR P/R {precision:.1f}/{recall:.1f}; "
        f"flipped-attribute accuracy {flipped_acc:.1f}% over {n_ctrl} words; {elapsed:.0f}s",
    )


# ---------------------------------------------------------------- 7 and 8


@pytest.fixture(scope="module")
def desk_ablation(tmp_path_factory):
    CACHE.mkdir(parents=True, exist_ok=True)
    out = tmp_path_factory.mktemp("ablation")
    config = AblationConfig(cache_dir=str(CACHE))
    start = time.perf_counter()
    table = run_ablation(config, out)
    return config, table, time.perf_counter() - start


def test_criterion_7_directional_ablation(desk_ablation):
    config, table, elapsed = desk_ablation
    rows = {r["mode"]: r for r in table["rows"]}
    van, full = rows["vanilla"], rows["masked+attn"]
    margin = full["total_acc"] - van["total_acc"]
    iou_ok = full["mean_attention_iou"] > van["mean_attention_iou"]
    per_seed = [round(b - a, 1) for a, b in zip(van["total_acc_per_seed"], full["total_acc_per_seed"])]
    ok = margin >= 10.0 and iou_ok
    record(
        7, ok,
        f"{len(config.seeds)} seeds x {config.train['steps']} steps: mean total acc vanilla {van['total_acc']:.1f} / "
        f"masked {rows['masked']['total_acc']:.1f} / masked+attn {full['total_acc']:.1f} (margin {margin:+.1f}pp, "
        f"per seed {per_seed}); IoU vanilla {van['mean_attention_iou']:.3f} vs masked+attn {full['mean_attention_iou']:.3f}; "
        f"{elapsed / 60:.1f} min incl. dataset/base",
    )


def test_criterion_8_training_progress(desk_ablation):
    _, table, elapsed = desk_ablation
    results, ok = [], True
    for arm in table["arms"]:
        hist = json.loads((Path(arm["out_dir"]) / "validation.json").read_text())
        v0 = hist[0]["val_cfm"]
        window = [h for h in hist if 0 < h["step"] <= 500]
        best = min(h["val_cfm"] for h in window)
        drop = 1 - best / v0
        masked_drop = 1 - min(h["val_masked"] for h in window) / hist[0]["val_masked"]
        ok &= drop >= 0.5
        results.append(f"{arm['mode']}/s{arm['seed']} {drop:+.0%} (masked {masked_drop:+.0%})")
    record(8, ok, "val CFM drop within 500 steps: " + ", ".join(results))
