import numpy as np
import pytest
import torch

from wordcon.flowmodel import AttentionRecord
from wordcon.losses import (
    LossWeights,
    MaskSet,
    cfm_loss,
    downsample_mask,
    joint_attention_loss,
    masked_loss,
    stack_masks,
    total_loss,
)


def test_downsample_all_ones():
    assert downsample_mask(np.ones((32, 32), bool), 4).all()


def test_downsample_one_patch():
    m = np.zeros((8, 8), bool)
    m[4:8, 0:4] = True
    assert downsample_mask(m, 4).tolist() == [[False, False], [True, False]]


@pytest.mark.parametrize("n,expected", [(7, False), (8, True)])
def test_downsample_half_threshold(n, expected):
    m = np.zeros((4, 4), bool)
    m.flat[:n] = True
    assert downsample_mask(m, 4)[0, 0] == expected


def test_downsample_rejects_non_tiling():
    with pytest.raises(ValueError):
        downsample_mask(np.zeros((6, 6)), 4)


def test_cfm_simple_values():
    x = torch.randn(2, 3, 8, 8)
    assert cfm_loss(x, x) == 0
    assert cfm_loss(x + 1, x).item() == pytest.approx(1.0)


def test_cfm_matches_loop():
    g = torch.Generator().manual_seed(0)
    a = torch.randn(2, 3, 4, 4, generator=g, dtype=torch.float64)
    b = torch.randn(2, 3, 4, 4, generator=g, dtype=torch.float64)
    total = 0.0
    for v, u in zip(a.flatten().tolist(), b.flatten().tolist()):
        total += (v - u) ** 2
    assert cfm_loss(a, b).item() == pytest.approx(total / a.numel(), rel=1e-12)


def test_masked_all_ones_equals_cfm():
    a, b = torch.randn(2, 3, 8, 8), torch.randn(2, 3, 8, 8)
    assert masked_loss(a, b, torch.ones(2, 2, 2)) == cfm_loss(a, b)


def test_masked_all_zeros():
    a, b = torch.randn(2, 3, 8, 8), torch.randn(2, 3, 8, 8)
    assert masked_loss(a, b, torch.zeros(2, 2, 2)) == 0


def test_masked_single_patch_hand_value():
    v = torch.zeros(1, 3, 8, 8)
    u = torch.zeros(1, 3, 8, 8)
    v[:, :, 0:4, 4:8] = 2.0  # delta 2 inside the (0, 1) patch
    v[:, :, 4:8, 0:4] = 5.0  # outside the mask, must not count
    mask = torch.tensor([[[0.0, 1.0], [0.0, 0.0]]])
    p, n = 3 * 16, v.numel()
    assert masked_loss(v, u, mask).item() == pytest.approx(4 * p / n)


def test_masked_monotone_in_mask():
    g = torch.Generator().manual_seed(2)
    a, b = torch.randn(1, 3, 8, 8, generator=g), torch.randn(1, 3, 8, 8, generator=g)
    small = torch.tensor([[[1.0, 0.0], [0.0, 0.0]]])
    big = torch.tensor([[[1.0, 1.0], [0.0, 1.0]]])
    assert masked_loss(a, b, big) >= masked_loss(a, b, small)


def test_masked_rejects_bad_grid():
    with pytest.raises(ValueError):
        masked_loss(torch.zeros(1, 3, 8, 8), torch.zeros(1, 3, 8, 8), torch.ones(1, 3, 3))


def _record_from_maps(maps):
    """AttentionRecord whose extracted word maps equal ``maps`` (B, T, g, g) with max 1 per map."""
    b, t, g, _ = maps.shape
    img = maps.reshape(b, t, g * g) / (g * g)
    rest = 1 - img.sum(-1, keepdim=True)
    row = torch.cat([rest, torch.zeros(b, t, t - 1), img], dim=-1)[:, None]
    return AttentionRecord(rows=[row], n_text=t, grid=g, text_valid=torch.ones(b, t, dtype=torch.bool))


def test_attn_loss_perfect_maps_zero():
    masks = torch.tensor([[[[1.0, 0.0], [0.0, 1.0]], [[0.0, 1.0], [1.0, 1.0]]]])
    rec = _record_from_maps(masks)
    assert joint_attention_loss(rec, masks, torch.ones(1, 2, dtype=torch.bool)).item() == pytest.approx(0.0, abs=1e-12)


def test_attn_loss_ones_vs_zeros():
    rec = _record_from_maps(torch.ones(1, 1, 3, 3))
    assert joint_attention_loss(rec, torch.zeros(1, 1, 3, 3), torch.ones(1, 1, dtype=torch.bool)).item() == pytest.approx(1.0)


def test_attn_loss_two_words_hand():
    maps = torch.tensor([[[[1.0, 0.5], [0.0, 0.25]], [[0.5, 1.0], [0.5, 0.0]]]])
    masks = torch.tensor([[[[1.0, 1.0], [0.0, 0.0]], [[0.0, 1.0], [1.0, 0.0]]]])
    # word 0: (0 + .25 + 0 + .0625)/4 = .078125 ; word 1: (.25 + 0 + .25 + 0)/4 = .125
    expected = (0.078125 + 0.125) / 2
    rec = _record_from_maps(maps)
    assert joint_attention_loss(rec, masks, torch.ones(1, 2, dtype=torch.bool)).item() == pytest.approx(expected)


def test_attn_loss_ignores_invalid_words():
    maps = torch.ones(1, 2, 2, 2)
    masks = torch.stack([torch.ones(2, 2), torch.zeros(2, 2)])[None]
    rec = _record_from_maps(maps)
    valid = torch.tensor([[True, False]])
    assert joint_attention_loss(rec, masks, valid).item() == pytest.approx(0.0, abs=1e-12)
    with pytest.raises(ValueError):
        joint_attention_loss(rec, masks, torch.zeros(1, 2, dtype=torch.bool))


@pytest.mark.parametrize("m,a,lam,expected", [(1.0, 2.0, 0.01, 1.02), (3.5, 100.0, 0.0, 3.5), (0.0, 0.0, 7.0, 0.0)])
def test_total_loss(m, a, lam, expected):
    assert total_loss(m, a, LossWeights(lam)) == pytest.approx(expected)


def test_default_lambda():
    assert LossWeights().lambda_attn == 0.01
    with pytest.raises(ValueError):
        LossWeights(-1)


def test_maskset_union_and_stack():
    a = np.zeros((2, 2), bool)
    a[0, 0] = True
    b = np.zeros((2, 2), bool)
    b[1, 1] = True
    ms = MaskSet(np.stack([a, b]))
    assert ms.k == 2 and np.array_equal(ms.union, a | b)
    words, union, valid = stack_masks([ms, MaskSet(a[None])], 2)
    assert words.shape == (2, 2, 2, 2)
    assert valid.tolist() == [[True, True], [True, False]]
    assert torch.equal(union[1], torch.from_numpy(a).float())
    with pytest.raises(ValueError):
        stack_masks([ms], 1)
