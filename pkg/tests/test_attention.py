import numpy as np
import pytest

from freqrestore import tensor as T
from freqrestore.attention import (MASK_VALUE, WindowAttention, effective_shift, relative_position_index,
                                   shift_mask, window_partition, window_reverse, windowed)
from freqrestore.dformer import FABlock, inter_band_attention, intra_band_attention
from freqrestore.errors import ConfigError, DimensionError
from freqrestore.tensor import Tensor, grad_check

from oracles import attention_oracle


def make_attn(dim=8, heads=2, window=4, seed=0, tiles=1):
    rng = np.random.default_rng(seed)
    attn = WindowAttention(dim, heads, window, rng, tiles=tiles)
    # non-trivial biases everywhere
    for p in attn.parameters():
        p.data = rng.normal(scale=0.5, size=p.shape)
    return attn


def grid_positions(w):
    return np.stack(np.meshgrid(np.arange(w), np.arange(w), indexing="ij"), -1).reshape(-1, 2)


def test_partition_roundtrip(rng):
    x = Tensor(rng.normal(size=(2, 8, 12, 3)))
    win = window_partition(x, 4)
    assert win.shape == (2 * 2 * 3, 16, 3)
    np.testing.assert_array_equal(window_reverse(win, 4, 8, 12).data, x.data)
    np.testing.assert_array_equal(win.data[1], x.data[0, 0:4, 4:8].reshape(16, 3))
    with pytest.raises(DimensionError):
        window_partition(x, 5)


def test_relative_index_range():
    idx = relative_position_index(3)
    assert idx.shape == (9, 9)
    assert idx.min() == 0 and idx.max() == 24
    assert (np.diag(idx) == 12).all()


def test_heads_must_divide_dim():
    with pytest.raises(ConfigError):
        WindowAttention(6, 4, 4, np.random.default_rng(0))


def test_unshifted_windows_match_plain_attention_oracle(rng):
    attn = make_attn()
    x = rng.normal(size=(2, 8, 8, 8))
    out = windowed(attn, Tensor(x), shifted=False).data
    pos = grid_positions(4)
    for b in range(2):
        for i in range(0, 8, 4):
            for j in range(0, 8, 4):
                tokens = x[b, i:i + 4, j:j + 4].reshape(16, 8)
                ref = attention_oracle(attn, tokens, pos).reshape(4, 4, 8)
                np.testing.assert_allclose(out[b, i:i + 4, j:j + 4], ref, atol=1e-10)


@pytest.mark.parametrize("seed", range(5))
def test_shifted_mask_matches_region_extraction(seed):
    """Masked shifted attention == unmasked attention over each contiguous region."""
    w, s, H = 8, 4, 16
    attn = make_attn(dim=8, heads=2, window=w, seed=seed)
    x = np.random.default_rng(100 + seed).normal(size=(1, H, H, 8))
    out = windowed(attn, Tensor(x), shifted=True).data
    rolled_in = np.roll(x, (-s, -s), (1, 2))
    rolled_out = np.roll(out, (-s, -s), (1, 2))
    # region id per pixel of the rolled map: which original strip each row/col came from
    strip = lambda n: np.where(np.arange(n) < n - w, 0, np.where(np.arange(n) < n - s, 1, 2))
    region = strip(H)[:, None] * 3 + strip(H)[None, :]
    worst = 0.0
    for i in range(0, H, w):
        for j in range(0, H, w):
            reg = region[i:i + w, j:j + w]
            for r in np.unique(reg):
                ii, jj = np.nonzero(reg == r)
                tokens = rolled_in[0, i + ii, j + jj]
                ref = attention_oracle(attn, tokens, np.stack([ii, jj], 1))
                worst = max(worst, np.abs(rolled_out[0, i + ii, j + jj] - ref).max())
    assert worst <= 1e-10


def test_masked_pairs_get_negligible_weight():
    attn = make_attn(window=4)
    x = Tensor(np.random.default_rng(0).normal(size=(1, 8, 8, 8)))
    rolled = T.roll(x, (-2, -2), (1, 2))
    mask = shift_mask(8, 8, 4, 2)
    z, _ = attn.attention_map(window_partition(rolled, 4), mask)
    blocked = np.broadcast_to((mask < 0)[:, None], z.shape)
    assert blocked.any()
    assert z.data[blocked].max() < 1e-30
    assert MASK_VALUE == -1e9


def test_single_window_map_is_never_shifted():
    assert effective_shift(8, 8, 8, True) == 0
    assert effective_shift(16, 16, 8, True) == 4
    assert effective_shift(16, 16, 8, False) == 0


def test_single_token_window_returns_value_projection(rng):
    attn = make_attn(window=1)
    x = rng.normal(size=(1, 3, 3, 8))
    out = windowed(attn, Tensor(x), shifted=False).data
    v = x @ attn.qkv.weight.data[:, 16:] + attn.qkv.bias.data[16:]
    np.testing.assert_allclose(out, v @ attn.proj.weight.data + attn.proj.bias.data, atol=1e-12)


def test_window_permutation_consistency(rng):
    attn = make_attn()
    x = rng.normal(size=(1, 8, 8, 8))
    swapped = x.copy()
    swapped[:, :4, :4], swapped[:, 4:, 4:] = x[:, 4:, 4:], x[:, :4, :4]
    a = windowed(attn, Tensor(x), False).data
    b = windowed(attn, Tensor(swapped), False).data
    np.testing.assert_allclose(b[:, :4, :4], a[:, 4:, 4:], atol=1e-14)
    np.testing.assert_allclose(b[:, 4:, 4:], a[:, :4, :4], atol=1e-14)
    np.testing.assert_allclose(b[:, :4, 4:], a[:, :4, 4:], atol=1e-14)


@pytest.mark.parametrize("shifted", [False, True])
def test_intra_band_matches_per_band_loop(shifted, rng):
    attn = make_attn()
    x = rng.normal(size=(2, 3, 8, 8, 8))
    out = intra_band_attention(Tensor(x), attn, shifted).data
    for band in range(3):
        ref = windowed(attn, Tensor(x[:, band]), shifted).data
        np.testing.assert_allclose(out[:, band], ref, atol=1e-10)


@pytest.mark.parametrize("shifted", [False, True])
def test_intra_band_isolation(shifted, rng):
    attn = make_attn()
    x = rng.normal(size=(1, 2, 8, 8, 8))
    y = x.copy()
    y[:, 1] += rng.normal(size=y[:, 1].shape)
    a = intra_band_attention(Tensor(x), attn, shifted).data
    b = intra_band_attention(Tensor(y), attn, shifted).data
    np.testing.assert_array_equal(a[:, 0], b[:, 0])
    assert not np.allclose(a[:, 1], b[:, 1])


@pytest.mark.parametrize("shifted", [False, True])
def test_inter_band_with_one_band_equals_intra_band(shifted, rng):
    attn = make_attn(tiles=1)
    x = Tensor(rng.normal(size=(2, 1, 8, 8, 8)))
    np.testing.assert_allclose(inter_band_attention(x, attn, None, shifted).data,
                               intra_band_attention(x, attn, shifted).data, atol=1e-12)
    zero = Tensor(np.zeros((1, 8)))
    np.testing.assert_allclose(inter_band_attention(x, attn, zero, shifted).data,
                               intra_band_attention(x, attn, shifted).data, atol=1e-12)


def test_inter_band_matches_joint_window_oracle(rng):
    L, w = 2, 4
    attn = make_attn(window=w, tiles=L)
    embed = rng.normal(size=(L, 8))
    x = rng.normal(size=(1, L, 8, 8, 8))
    out = inter_band_attention(Tensor(x), attn, Tensor(embed), shifted=False).data
    pos = np.tile(grid_positions(w), (L, 1))
    for i in range(0, 8, w):
        for j in range(0, 8, w):
            tokens = np.concatenate([(x[0, b, i:i + w, j:j + w] + embed[b]).reshape(-1, 8) for b in range(L)])
            ref = attention_oracle(attn, tokens, pos).reshape(L, w, w, 8)
            np.testing.assert_allclose(out[0, :, i:i + w, j:j + w], ref, atol=1e-10)


@pytest.mark.parametrize("shifted", [False, True])
def test_inter_band_symmetry_for_identical_bands(shifted, rng):
    attn = make_attn(tiles=3)
    band = rng.normal(size=(1, 1, 8, 8, 8))
    x = Tensor(np.repeat(band, 3, axis=1))
    out = inter_band_attention(x, attn, Tensor(np.ones((3, 8))), shifted).data
    np.testing.assert_allclose(out[:, 1], out[:, 0], atol=1e-12)
    np.testing.assert_allclose(out[:, 2], out[:, 0], atol=1e-12)


def test_inter_band_rejects_wrong_band_count(rng):
    with pytest.raises(ConfigError):
        inter_band_attention(Tensor(rng.normal(size=(1, 3, 4, 4, 8))), make_attn(tiles=2))


def weighted_sum(seed):
    w = {}

    def f(y):
        if "w" not in w:
            w["w"] = np.random.default_rng(seed).normal(size=y.shape)
        return T.sum_(y * w["w"])
    return f


@pytest.mark.parametrize("shifted", [False, True])
def test_intra_band_gradients(shifted):
    for i in range(3):
        attn = make_attn(dim=4, heads=2, window=4, seed=i)
        x = Tensor(np.random.default_rng(i).normal(size=(1, 2, 8, 8, 4)))
        probe = weighted_sum(50 + i)
        f = lambda t: probe(intra_band_attention(t, attn, shifted))
        idx = [tuple(np.random.default_rng(i).integers(0, s) for s in x.shape) for _ in range(40)]
        assert grad_check(f, x, indices=idx) <= 1e-4
        g = lambda t: probe(intra_band_attention(x, attn, shifted))
        assert grad_check(g, attn.rel_bias) <= 1e-4
        assert grad_check(g, attn.qkv.weight) <= 1e-4


@pytest.mark.parametrize("shifted", [False, True])
def test_inter_band_gradients(shifted):
    for i in range(3):
        attn = make_attn(dim=4, heads=2, window=4, seed=i, tiles=2)
        embed = Tensor(np.random.default_rng(i).normal(size=(2, 4)))
        x = Tensor(np.random.default_rng(i).normal(size=(1, 2, 8, 8, 4)))
        probe = weighted_sum(60 + i)
        f = lambda t: probe(inter_band_attention(t, attn, embed, shifted))
        idx = [tuple(np.random.default_rng(i).integers(0, s) for s in x.shape) for _ in range(40)]
        assert grad_check(f, x, indices=idx) <= 1e-4
        g = lambda t: probe(inter_band_attention(x, attn, t, shifted))
        assert grad_check(g, embed) <= 1e-4
        g = lambda t: probe(inter_band_attention(x, attn, embed, shifted))
        assert grad_check(g, attn.proj.weight) <= 1e-4


def test_fa_block_gradient():
    rng = np.random.default_rng(0)
    blk = FABlock(4, 2, 4, 2, True, rng)
    for p in blk.parameters():
        p.data = p.data + rng.normal(scale=0.1, size=p.shape)
    x = Tensor(rng.normal(size=(1, 2, 8, 8, 4)))
    probe = weighted_sum(7)
    idx = [tuple(rng.integers(0, s) for s in x.shape) for _ in range(30)]
    assert grad_check(lambda t: probe(blk(t)), x, indices=idx) <= 1e-4
    for name, p in blk.named_parameters():
        sub = [tuple(rng.integers(0, s) for s in p.shape) for _ in range(5)]
        if name.endswith("qkv.bias"):
            # the key bias shifts every logit of a query equally: its true gradient is 0
            sub = [(j,) for j in (0, 3, 8, 11)]
        assert grad_check(lambda t: probe(blk(x)), p, indices=sub) <= 1e-4, name
