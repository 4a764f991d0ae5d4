"""Degradation-adaptive U-shaped restoration transformer.

Every attention layer rescales the non-DC frequency bands of its
post-softmax attention map::

    z' = z + sum_{k=2..L} m[k-2] * band_k(z)

where the ratios ``m`` come either from a degradation representation via
a small projection MLP, or (``learnable_ratios``) from free parameters.
The projection's last layer and the output convolution start at zero, so
an untrained network is exactly the identity map.
"""

from __future__ import annotations

from dataclasses import asdict, dataclass, field

import numpy as np

from . import tensor as T
from .attention import WindowAttention, windowed
from .dformer import reflect_pad_to
from .errors import ConfigError, ContractError
from .nn import MLP, Conv2d, LayerNorm, Module, Parameter, to_channels_first, to_channels_last
from .spectral import band_filter
from .tensor import Tensor


@dataclass
class RformerConfig:
    dims: list[int] = field(default_factory=lambda: [16, 32])
    heads: list[int] = field(default_factory=lambda: [2, 4])
    blocks: list[int] = field(default_factory=lambda: [2, 2])
    bottleneck_heads: int = 8
    bottleneck_blocks: int = 2
    window: int = 8
    L: int = 2
    repr_dim: int = 64
    mlp_ratio: int = 4
    seed: int = 0

    def __post_init__(self):
        self.dims, self.heads, self.blocks = list(self.dims), list(self.heads), list(self.blocks)
        if not (len(self.dims) == len(self.heads) == len(self.blocks)) or not self.dims:
            raise ConfigError("dims, heads and blocks must be non-empty and the same length")
        if self.L < 2:
            raise ConfigError("modulation needs L >= 2 bands")
        for d, h in zip(self.dims + [self.bottleneck_dim], self.heads + [self.bottleneck_heads]):
            if d % h:
                raise ConfigError(f"dim {d} not divisible by {h} heads")

    @property
    def depth(self) -> int:
        return len(self.dims)

    @property
    def bottleneck_dim(self) -> int:
        return 2 * self.dims[-1]

    @property
    def size_multiple(self) -> int:
        return self.window * 2 ** self.depth

    def layer_heads(self) -> list[int]:
        """Head count of every attention layer in forward order."""
        enc = [h for h, n in zip(self.heads, self.blocks) for _ in range(n)]
        mid = [self.bottleneck_heads] * self.bottleneck_blocks
        dec = [h for h, n in reversed(list(zip(self.heads, self.blocks))) for _ in range(n)]
        return enc + mid + dec

    def to_dict(self) -> dict:
        return asdict(self)


class ModulationRatios:
    """Per-sample ratios for every (layer, head, band) triple.

    ``values`` has shape (B, sum_l heads_l * (L-1)); :meth:`layer` returns
    the (B, heads_l, L-1) slice consumed by attention layer ``l``.
    """

    def __init__(self, values: Tensor, layer_heads: list[int], L: int):
        self.values = values
        self.layer_heads = list(layer_heads)
        self.L = L
        self._offsets = np.concatenate([[0], np.cumsum(layer_heads) * (L - 1)]).astype(int)
        if values.shape[-1] != self._offsets[-1]:
            raise ContractError(f"expected {self._offsets[-1]} ratios, got {values.shape[-1]}")

    @property
    def n_layers(self) -> int:
        return len(self.layer_heads)

    def layer(self, i: int) -> Tensor:
        lo, hi = self._offsets[i], self._offsets[i + 1]
        vals = self.values[:, lo:hi]
        return T.reshape(vals, (vals.shape[0], self.layer_heads[i], self.L - 1))

    def band_means(self) -> np.ndarray:
        """Mean of each M_k over samples, layers and heads; shape (L-1,)."""
        v = self.values.data.reshape(self.values.shape[0], -1, self.L - 1)
        return v.mean(axis=(0, 1))


def modulate(z, m, L: int):
    """Apply ``z + sum_k m_k * band_{k+1}(z)`` to attention maps.

    ``z`` is (Bw, heads, n, n). ``m`` is (L-1,), (heads, L-1) or
    (B, heads, L-1); in the last case the windows of each image are assumed
    contiguous in ``z``'s leading axis.
    """
    m = T.as_tensor(m)
    Bw, h, n, _ = z.shape
    if m.ndim == 3:
        B = m.shape[0]
        zb = T.reshape(z, (B, Bw // B, h, n, n))
        out = zb
        for k in range(2, L + 1):
            coef = T.reshape(m[:, :, k - 2], (B, 1, h, 1, 1))
            out = out + coef * band_filter(zb, k, L)
        return T.reshape(out, (Bw, h, n, n))
    out = z
    for k in range(2, L + 1):
        coef = m[k - 2] if m.ndim == 1 else T.reshape(m[:, k - 2], (h, 1, 1))
        out = out + coef * band_filter(z, k, L)
    return out


def da_self_attention(x, m, attn: WindowAttention, L: int = 2, mask: np.ndarray | None = None):
    """Degradation-adaptive attention over window tokens ``x`` (Bw, n, C)."""
    return attn(x, mask, lambda z: modulate(z, m, L))


class DABlock(Module):
    """Pre-norm transformer block whose attention map is band-modulated."""

    def __init__(self, dim: int, heads: int, window: int, shifted: bool, L: int,
                 rng: np.random.Generator, mlp_ratio: int = 4):
        self.shifted = shifted
        self.L = L
        self.norm1 = LayerNorm(dim)
        self.attn = WindowAttention(dim, heads, window, rng)
        self.norm2 = LayerNorm(dim)
        self.mlp = MLP(dim, dim * mlp_ratio, dim, rng)

    def forward(self, x, m=None):
        """``x`` is (B, H, W, C); ``m`` is this layer's (B, heads, L-1) ratios."""
        mod = None if m is None else (lambda z: modulate(z, m, self.L))
        x = x + windowed(self.attn, self.norm1(x), self.shifted, mod)
        return x + self.mlp(self.norm2(x))


class DegradationProjection(Module):
    """Two-layer MLP from a representation to all modulation ratios."""

    def __init__(self, cfg: RformerConfig, rng: np.random.Generator):
        self.cfg = cfg
        n_out = sum(cfg.layer_heads()) * (cfg.L - 1)
        self.mlp = MLP(cfg.repr_dim, cfg.repr_dim, n_out, rng, zero_init_last=True)

    def forward(self, d) -> ModulationRatios:
        d = T.as_tensor(d)
        if d.ndim == 1:
            d = T.reshape(d, (1, -1))
        if not np.isfinite(d.data).all():
            raise ContractError("degradation representation is not finite")
        return ModulationRatios(self.mlp(d), self.cfg.layer_heads(), self.cfg.L)


class Rformer(Module):
    """U-shaped windowed transformer with a global residual connection."""

    def __init__(self, cfg: RformerConfig | None = None, learnable_ratios: bool = False):
        cfg = cfg or RformerConfig()
        self.cfg = cfg
        self.learnable_ratios = learnable_ratios
        rng = np.random.default_rng(cfg.seed + 1)
        w, L, r = cfg.window, cfg.L, cfg.mlp_ratio
        self.input_proj = Conv2d(3, cfg.dims[0], 3, rng, pad=1)
        self.encoder = []
        self.downsamples = []
        for i, (d, h, n) in enumerate(zip(cfg.dims, cfg.heads, cfg.blocks)):
            self.encoder.append([DABlock(d, h, w, j % 2 == 1, L, rng, r) for j in range(n)])
            nxt = cfg.dims[i + 1] if i + 1 < cfg.depth else cfg.bottleneck_dim
            self.downsamples.append(Conv2d(d, nxt, 4, rng, stride=2, pad=1))
        self.bottleneck = [DABlock(cfg.bottleneck_dim, cfg.bottleneck_heads, w, j % 2 == 1, L, rng, r)
                           for j in range(cfg.bottleneck_blocks)]
        self.upsamples = []
        self.fuse = []
        self.decoder = []
        for i in reversed(range(cfg.depth)):
            d, h, n = cfg.dims[i], cfg.heads[i], cfg.blocks[i]
            deeper = cfg.dims[i + 1] if i + 1 < cfg.depth else cfg.bottleneck_dim
            self.upsamples.append(Conv2d(deeper, d, 3, rng, pad=1))
            self.fuse.append(Conv2d(2 * d, d, 1, rng))
            self.decoder.append([DABlock(d, h, w, j % 2 == 1, L, rng, r) for j in range(n)])
        self.output_proj = Conv2d(cfg.dims[0], 3, 3, rng, pad=1, zero_init=True)
        if learnable_ratios:
            self.ratios = Parameter(np.zeros(sum(cfg.layer_heads()) * (L - 1)))
        else:
            self.projection = DegradationProjection(cfg, rng)

    def modulation_ratios(self, d=None, batch: int = 1) -> ModulationRatios:
        if self.learnable_ratios:
            vals = T.reshape(self.ratios, (1, -1))
            if batch > 1:
                vals = vals + np.zeros((batch, 1))
            return ModulationRatios(vals, self.cfg.layer_heads(), self.cfg.L)
        if d is None:
            raise ContractError("a degradation representation is required")
        return self.projection(d)

    def forward(self, img, d=None, ratios: ModulationRatios | None = None) -> Tensor:
        """Restore ``img`` ((3, H, W) or (B, 3, H, W)); returns the same shape."""
        x_in = T.as_tensor(img)
        single = x_in.ndim == 3
        if single:
            x_in = T.reshape(x_in, (1,) + x_in.shape)
        B, _, H, W = x_in.shape
        if ratios is None:
            ratios = self.modulation_ratios(d, B)
        if ratios.values.shape[0] != B:
            raise ContractError(f"{ratios.values.shape[0]} ratio sets for a batch of {B}")
        padded = reflect_pad_to(x_in.data, self.cfg.size_multiple)
        layer = iter(range(ratios.n_layers))

        def run(blocks, x):
            for blk in blocks:
                x = blk(x, ratios.layer(next(layer)))
            return x

        x = to_channels_last(self.input_proj(Tensor(padded)))
        skips = []
        for blocks, down in zip(self.encoder, self.downsamples):
            x = run(blocks, x)
            skips.append(x)
            x = to_channels_last(down(to_channels_first(x)))
        x = run(self.bottleneck, x)
        for up, fuse, blocks, skip in zip(self.upsamples, self.fuse, self.decoder, reversed(skips)):
            x = up(T.upsample_nearest2x(to_channels_first(x)))
            x = fuse(T.concat([x, to_channels_first(skip)], axis=1))
            x = run(blocks, to_channels_last(x))
        out = T.crop2d(self.output_proj(to_channels_first(x)), H, W) + x_in
        return out[0] if single else out
