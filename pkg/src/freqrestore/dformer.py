"""Frequency-aware degradation encoder.

The input image is split into ``L`` frequency-band images which share a
convolutional stem and a stack of frequency-aware transformer blocks.
Features are carried as a (B, L, H, W, C) tensor: batch, band, space,
channels.
"""

from __future__ import annotations

from dataclasses import asdict, dataclass, field

import numpy as np

from . import spectral
from . import tensor as T
from .attention import WindowAttention, effective_shift, shift_mask, window_partition, window_reverse
from .errors import ConfigError, ContractError
from .nn import MLP, Conv2d, LayerNorm, Module, Parameter, trunc_normal
from .tensor import Tensor


@dataclass
class DformerConfig:
    L: int = 2
    K: int = 2
    N: int = 2
    dim0: int = 16
    heads: list[int] = field(default_factory=lambda: [2, 4])
    window: int = 8
    repr_dim: int = 64
    mlp_ratio: int = 4
    seed: int = 0

    def __post_init__(self):
        self.heads = list(self.heads)
        if self.L < 1:
            raise ConfigError("L must be >= 1")
        if self.K < 1 or self.N < 1:
            raise ConfigError("K and N must be >= 1")
        if len(self.heads) != self.K:
            raise ConfigError(f"need {self.K} head counts, got {self.heads}")
        for k, h in enumerate(self.heads):
            if (self.dim0 * 2 ** k) % h:
                raise ConfigError(f"stage {k} dim {self.dim0 * 2 ** k} not divisible by {h} heads")

    def stage_dim(self, k: int) -> int:
        return self.dim0 * 2 ** k

    @property
    def size_multiple(self) -> int:
        return self.window * 2 ** (self.K - 1)

    def to_dict(self) -> dict:
        return asdict(self)


def reflect_pad_to(img: np.ndarray, multiple: int) -> np.ndarray:
    """Reflect-pad the last two axes up to the next multiple."""
    H, W = img.shape[-2:]
    ph = (-H) % multiple
    pw = (-W) % multiple
    if not ph and not pw:
        return img
    widths = [(0, 0)] * (img.ndim - 2) + [(0, ph), (0, pw)]
    mode = "reflect" if ph < H and pw < W else "symmetric"
    return np.pad(img, widths, mode=mode)


def decompose_input(img: np.ndarray, L: int) -> list[np.ndarray]:
    """Split an image (``..., 3, H, W``) into ``L`` band images."""
    if L == 1:
        return [np.asarray(img, dtype=float)]
    return spectral.decompose(img, L).bands


# ---------------------------------------------------------------------------
# intra-/inter-band attention on (B, L, H, W, C) features
# ---------------------------------------------------------------------------

def intra_band_attention(x, attn: WindowAttention, shifted: bool = False):
    """Windowed attention run separately inside each band."""
    B, L, H, W, C = x.shape
    w = attn.window
    s = effective_shift(H, W, w, shifted)
    y = T.reshape(x, (B * L, H, W, C))
    if s:
        y = T.roll(y, (-s, -s), (1, 2))
    mask = shift_mask(H, W, w, s) if s else None
    y = window_reverse(attn(window_partition(y, w), mask), w, H, W)
    if s:
        y = T.roll(y, (s, s), (1, 2))
    return T.reshape(y, (B, L, H, W, C))


def inter_band_attention(x, attn: WindowAttention, band_embed=None, shifted: bool = False):
    """Joint attention over all bands' tokens that share a spatial window.

    ``band_embed`` (L, C) is added to every token of its band first.
    """
    B, L, H, W, C = x.shape
    w = attn.window
    if attn.tiles != L:
        raise ConfigError(f"attention built for {attn.tiles} bands, input has {L}")
    if band_embed is not None:
        x = x + T.reshape(band_embed, (1, L, 1, 1, C))
    s = effective_shift(H, W, w, shifted)
    if s:
        x = T.roll(x, (-s, -s), (2, 3))
    nh, nw = H // w, W // w
    y = T.reshape(x, (B, L, nh, w, nw, w, C))
    y = T.transpose(y, (0, 2, 4, 1, 3, 5, 6))
    y = T.reshape(y, (B * nh * nw, L * w * w, C))
    mask = shift_mask(H, W, w, s, L) if s else None
    y = attn(y, mask)
    y = T.reshape(y, (B, nh, nw, L, w, w, C))
    y = T.transpose(y, (0, 3, 1, 4, 2, 5, 6))
    y = T.reshape(y, (B, L, H, W, C))
    if s:
        y = T.roll(y, (s, s), (2, 3))
    return y


class FABlock(Module):
    """Frequency-aware transformer block: intra-band, inter-band, then MLP."""

    def __init__(self, dim: int, heads: int, window: int, L: int, shifted: bool,
                 rng: np.random.Generator, mlp_ratio: int = 4):
        self.shifted = shifted
        self.norm1 = LayerNorm(dim)
        self.intra = WindowAttention(dim, heads, window, rng)
        self.norm2 = LayerNorm(dim)
        self.band_embed = Parameter(trunc_normal(rng, (L, dim)))
        self.inter = WindowAttention(dim, heads, window, rng, tiles=L)
        self.norm3 = LayerNorm(dim)
        self.mlp = MLP(dim, dim * mlp_ratio, dim, rng)

    def forward(self, x):
        x = x + intra_band_attention(self.norm1(x), self.intra, self.shifted)
        x = x + inter_band_attention(self.norm2(x), self.inter, self.band_embed, self.shifted)
        return x + self.mlp(self.norm3(x))


def _bands_to_maps(x):
    """(B, L, H, W, C) -> (B*L, C, H, W)."""
    B, L, H, W, C = x.shape
    return T.transpose(T.reshape(x, (B * L, H, W, C)), (0, 3, 1, 2))


def _maps_to_bands(x, B: int, L: int):
    """(B*L, C, H, W) -> (B, L, H, W, C)."""
    _, C, H, W = x.shape
    return T.reshape(T.transpose(x, (0, 2, 3, 1)), (B, L, H, W, C))


class Dformer(Module):
    """Degradation encoder returning unit-norm representation vectors."""

    def __init__(self, cfg: DformerConfig | None = None):
        cfg = cfg or DformerConfig()
        self.cfg = cfg
        rng = np.random.default_rng(cfg.seed)
        self.stem = Conv2d(3, cfg.dim0, 3, rng, pad=1)
        self.stages = []
        self.downsamples = []
        for k in range(cfg.K):
            dim = cfg.stage_dim(k)
            self.stages.append([FABlock(dim, cfg.heads[k], cfg.window, cfg.L, i % 2 == 1, rng,
                                        cfg.mlp_ratio) for i in range(cfg.N)])
            if k < cfg.K - 1:
                self.downsamples.append(Conv2d(dim, 2 * dim, 4, rng, stride=2, pad=1))
        last = cfg.stage_dim(cfg.K - 1)
        self.norm = LayerNorm(last)
        self.head = MLP(last, cfg.repr_dim, cfg.repr_dim, rng)

    def features(self, img) -> Tensor:
        """Pooled (B, C_last) features before the output MLP."""
        img = img.data if isinstance(img, Tensor) else np.asarray(img, dtype=float)
        if img.ndim == 3:
            img = img[None]
        if img.ndim != 4 or img.shape[1] != 3:
            raise ContractError(f"expected (B, 3, H, W) or (3, H, W) image, got {img.shape}")
        cfg = self.cfg
        img = reflect_pad_to(img, cfg.size_multiple)
        B = img.shape[0]
        bands = np.stack(decompose_input(img, cfg.L), axis=1)  # B, L, 3, H, W
        x = self.stem(Tensor(bands.reshape((B * cfg.L,) + bands.shape[2:])))
        x = _maps_to_bands(x, B, cfg.L)
        for k, blocks in enumerate(self.stages):
            for blk in blocks:
                x = blk(x)
            if k < cfg.K - 1:
                x = _maps_to_bands(self.downsamples[k](_bands_to_maps(x)), B, cfg.L)
        # per-token norm before pooling keeps local energy visible to the mean
        return T.mean(self.norm(x), axis=(1, 2, 3))

    def forward(self, img) -> Tensor:
        """Degradation representation ``d``: (repr_dim,) or (B, repr_dim)."""
        single = (img.data if isinstance(img, Tensor) else np.asarray(img)).ndim == 3
        d = T.l2_normalize(self.head(self.features(img)), axis=-1, eps=0.0)
        return d[0] if single else d


def momentum_update(key: Module, query: Module, m: float) -> None:
    """In place: key <- m * key + (1 - m) * query, parameter by parameter."""
    kp = dict(key.named_parameters())
    qp = dict(query.named_parameters())
    if kp.keys() != qp.keys():
        raise ContractError("key and query encoders have different parameter trees")
    for name, p in kp.items():
        q = qp[name]
        if p.shape != q.shape:
            raise ContractError(f"{name}: shape {p.shape} != {q.shape}")
        p.data = m * p.data + (1.0 - m) * q.data
