import numpy as np
import pytest
import torch

from wordcon.flowmodel import FlowDiT, ModelConfig
from wordcon.glyphforge import DatasetConfig, build_dataset

VOCAB = ["GO", "UP", "ON", "IT", "AT", "TO", "IN", "NO"]


@pytest.fixture(scope="session")
def small_dataset(tmp_path_factory):
    """24-sample, 3-attribute dataset shared by read-only tests."""
    out = tmp_path_factory.mktemp("ds")
    return build_dataset(DatasetConfig(vocabulary=VOCAB, n_samples=24, seed=5), out)


@pytest.fixture(scope="session")
def plain_dataset(tmp_path_factory):
    out = tmp_path_factory.mktemp("plain")
    cfg = DatasetConfig(vocabulary=VOCAB, n_samples=20, attribute_types=[], seed=9)
    return build_dataset(cfg, out)


def tiny_model(seed=0, dtype=torch.float32, **overrides):
    cfg = dict(vocab_size=len(VOCAB), max_words=2, hidden_dim=32, heads=2, double_blocks=2, single_blocks=1)
    cfg.update(overrides)
    torch.manual_seed(seed)
    model = FlowDiT(ModelConfig(**cfg)).to(dtype)
    # A zero final layer makes every output identical; perturb it so outputs depend on the inputs.
    with torch.no_grad():
        model.final.weight.normal_(0, 0.1)
    return model


@pytest.fixture
def rng():
    return np.random.default_rng(0)


# criterion number -> (passed, one-line detail); filled by test_acceptance.py
ACCEPTANCE: dict[int, tuple[bool, str]] = {}


def pytest_terminal_summary(terminalreporter):
    if not ACCEPTANCE:
        return
    terminalreporter.write_sep("=", "acceptance criteria")
    for n in sorted(ACCEPTANCE):
        ok, detail = ACCEPTANCE[n]
        terminalreporter.write_line(f"criterion {n}: {'PASS' if ok else 'FAIL'}  {detail}")
