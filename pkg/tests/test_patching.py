import math

import pytest
import torch
from hypothesis import given, settings
from hypothesis import strategies as st

from maskdit.errors import ShapeError
from maskdit.patching import (
    cosine_ratio,
    gather_unmasked,
    num_masked,
    patchify,
    sample_mask,
    scatter_with_mask_token,
    unpatchify,
)


def test_patchify_token_count_32x32():
    tokens = patchify(torch.zeros(2, 3, 32, 32), 2)
    assert tokens.shape == (2, 256, 4 * 3)


def test_patchify_4x4_layout():
    img = torch.arange(16.0).reshape(1, 1, 4, 4)
    tokens = patchify(img, 2)
    assert tokens.shape == (1, 4, 4)
    # token 1 is the top-right block, row-major inside the patch
    assert tokens[0, 1].tolist() == [2.0, 3.0, 6.0, 7.0]
    assert tokens[0, 2].tolist() == [8.0, 9.0, 12.0, 13.0]


def test_patchify_channel_order_within_token():
    img = torch.stack([torch.zeros(2, 2), torch.ones(2, 2)]).unsqueeze(0)
    assert patchify(img, 2)[0, 0].tolist() == [0.0, 1.0] * 4


def test_patchify_rejects_non_divisible():
    with pytest.raises(ShapeError):
        patchify(torch.zeros(1, 1, 5, 4), 2)


@given(
    b=st.integers(1, 3),
    c=st.integers(1, 3),
    gh=st.integers(1, 5),
    gw=st.integers(1, 5),
    p=st.integers(1, 4),
    seed=st.integers(0, 1000),
)
@settings(max_examples=60, deadline=None)
def test_patchify_roundtrip_bijection(b, c, gh, gw, p, seed):
    g = torch.Generator().manual_seed(seed)
    img = torch.randn(b, c, gh * p, gw * p, generator=g)
    tokens = patchify(img, p)
    assert tokens.shape == (b, gh * gw, p * p * c)
    assert torch.equal(unpatchify(tokens, p, gh, gw), img)
    assert torch.equal(patchify(unpatchify(tokens, p, gh, gw), p), tokens)


def test_unpatchify_zeros():
    assert torch.equal(unpatchify(torch.zeros(1, 4, 8), 2, 2, 2), torch.zeros(1, 2, 4, 4))


def test_unpatchify_token_swap_swaps_blocks():
    img = torch.randn(1, 1, 4, 4)
    tokens = patchify(img, 2)
    swapped = tokens[:, [3, 1, 2, 0]]
    out = unpatchify(swapped, 2, 2, 2)
    assert torch.equal(out[..., :2, :2], img[..., 2:, 2:])
    assert torch.equal(out[..., 2:, 2:], img[..., :2, :2])
    assert torch.equal(out[..., :2, 2:], img[..., :2, 2:])


def test_unpatchify_geometry_errors():
    with pytest.raises(ShapeError):
        unpatchify(torch.zeros(1, 5, 4), 2, 2, 2)
    with pytest.raises(ShapeError):
        unpatchify(torch.zeros(1, 4, 6), 2, 2, 2)


@pytest.mark.parametrize("n, r, expected", [(256, 0.5, 128), (10, 0.75, 7), (64, 0.0, 0), (256, 0.75, 192), (100, 0.29, 29)])
def test_mask_count_is_floor(n, r, expected, gen):
    mask = sample_mask(n, r, gen, batch_size=5)
    assert mask.shape == (5, n)
    assert mask.sum(dim=1).tolist() == [expected] * 5
    assert num_masked(n, r) == expected


def test_zero_ratio_mask_is_empty(gen):
    assert not sample_mask(16, 0.0, gen, 3).any()


@pytest.mark.parametrize("r", [-0.1, 1.0, 1.5])
def test_mask_ratio_validated(r, gen):
    with pytest.raises(ValueError):
        sample_mask(16, r, gen)


def test_masks_differ_across_images(gen):
    mask = sample_mask(64, 0.5, gen, 8)
    assert len({tuple(row.tolist()) for row in mask}) == 8


def test_mask_marginals_uniform(gen):
    n, r = 16, 0.5
    mask = sample_mask(n, r, gen, batch_size=100_000)
    freq = mask.double().mean(dim=0)
    target = math.floor(r * n) / n
    assert torch.all((freq - target).abs() <= 0.01 * target), freq


def test_gather_keeps_order():
    tokens = torch.arange(4.0).reshape(1, 4, 1)
    mask = torch.tensor([[True, False, True, False]])
    visible, ids = gather_unmasked(tokens, mask)
    assert ids.tolist() == [[1, 3]]
    assert visible.flatten().tolist() == [1.0, 3.0]


def test_gather_identity_without_mask():
    tokens = torch.randn(2, 5, 3)
    visible, ids = gather_unmasked(tokens, torch.zeros(2, 5, dtype=torch.bool))
    assert torch.equal(visible, tokens)
    assert ids.tolist() == [list(range(5))] * 2


def test_gather_length_mismatch():
    with pytest.raises(ShapeError):
        gather_unmasked(torch.zeros(1, 4, 2), torch.zeros(1, 3, dtype=torch.bool))


@given(n=st.integers(2, 40), r=st.floats(0.0, 0.95), b=st.integers(1, 4), seed=st.integers(0, 10_000))
@settings(max_examples=60, deadline=None)
def test_gather_scatter_sentinels(n, r, b, seed):
    g = torch.Generator().manual_seed(seed)
    # sentinel token at slot k carries the value k in every channel
    tokens = torch.arange(float(n)).view(1, n, 1).expand(b, n, 3).clone()
    mask = sample_mask(n, r, g, b)
    visible, ids = gather_unmasked(tokens, mask)
    assert visible.shape[1] == n - num_masked(n, r)
    mt = torch.full((3,), -1.0)
    full = scatter_with_mask_token(visible, ids, mask, mt)
    expected = torch.where(mask.unsqueeze(-1), mt.expand(b, n, 3), tokens)
    assert torch.equal(full, expected)


def test_scatter_identity_and_all_but_one():
    tokens = torch.randn(1, 6, 2)
    mt = torch.tensor([9.0, 9.0])
    none = torch.zeros(1, 6, dtype=torch.bool)
    v, ids = gather_unmasked(tokens, none)
    assert torch.equal(scatter_with_mask_token(v, ids, none, mt), tokens)

    mostly = torch.ones(1, 6, dtype=torch.bool)
    mostly[0, 4] = False
    v, ids = gather_unmasked(tokens, mostly)
    full = scatter_with_mask_token(v, ids, mostly, mt)
    assert torch.equal(full[0, 4], tokens[0, 4])
    assert int((full == 9.0).all(dim=-1).sum()) == 5


def test_scatter_index_out_of_range():
    mask = torch.tensor([[True, False]])
    with pytest.raises(IndexError):
        scatter_with_mask_token(torch.zeros(1, 1, 2), torch.tensor([[5]]), mask, torch.zeros(2))


def test_scatter_gradient_reaches_mask_token():
    mt = torch.zeros(3, requires_grad=True)
    mask = torch.tensor([[True, False, True]])
    v, ids = gather_unmasked(torch.randn(1, 3, 3), mask)
    scatter_with_mask_token(v, ids, mask, mt).sum().backward()
    assert mt.grad.tolist() == [2.0, 2.0, 2.0]


def test_cosine_ratio_values():
    assert cosine_ratio(0, 100) == 0.5
    assert cosine_ratio(100, 100) == 0.0
    assert cosine_ratio(50, 100) == pytest.approx(0.125, abs=1e-15)


@given(total=st.integers(1, 500))
def test_cosine_ratio_monotone(total):
    vals = [cosine_ratio(i, total) for i in range(total + 1)]
    assert all(a >= b for a, b in zip(vals, vals[1:]))


def test_cosine_ratio_errors():
    with pytest.raises(ValueError):
        cosine_ratio(11, 10)
    with pytest.raises(ValueError):
        cosine_ratio(0, 0)
