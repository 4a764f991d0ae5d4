"""Window partitioning, shift masks and windowed multi-head self-attention."""

from __future__ import annotations

from functools import lru_cache
from typing import Callable

import numpy as np

from . import tensor as T
from .errors import ConfigError, DimensionError
from .nn import Linear, Module, Parameter, trunc_normal

MASK_VALUE = -1e9


def window_partition(x, w: int):
    """(B, H, W, C) -> (B * nWin, w*w, C), windows in row-major order."""
    B, H, W, C = x.shape
    if H % w or W % w:
        raise DimensionError(f"feature map {H}x{W} not divisible by window {w}")
    x = T.reshape(x, (B, H // w, w, W // w, w, C))
    x = T.transpose(x, (0, 1, 3, 2, 4, 5))
    return T.reshape(x, (B * (H // w) * (W // w), w * w, C))


def window_reverse(windows, w: int, H: int, W: int):
    """Inverse of :func:`window_partition`."""
    C = windows.shape[-1]
    B = windows.shape[0] // ((H // w) * (W // w))
    x = T.reshape(windows, (B, H // w, W // w, w, w, C))
    x = T.transpose(x, (0, 1, 3, 2, 4, 5))
    return T.reshape(x, (B, H, W, C))


@lru_cache(maxsize=None)
def relative_position_index(w: int) -> np.ndarray:
    """(w*w, w*w) index into a ((2w-1)^2)-entry relative bias table."""
    coords = np.stack(np.meshgrid(np.arange(w), np.arange(w), indexing="ij")).reshape(2, -1)
    rel = coords[:, :, None] - coords[:, None, :] + (w - 1)
    idx = rel[0] * (2 * w - 1) + rel[1]
    idx.setflags(write=False)
    return idx


@lru_cache(maxsize=None)
def shift_region_labels(H: int, W: int, w: int, shift: int) -> np.ndarray:
    """Region id of every token per window, (nWin, w*w), in shifted coordinates."""
    labels = np.zeros((H, W), dtype=np.int64)
    cuts = (slice(0, -w), slice(-w, -shift), slice(-shift, None))
    cnt = 0
    for hs in cuts:
        for ws in cuts:
            labels[hs, ws] = cnt
            cnt += 1
    lab = labels.reshape(H // w, w, W // w, w).transpose(0, 2, 1, 3).reshape(-1, w * w)
    lab.setflags(write=False)
    return lab


@lru_cache(maxsize=None)
def shift_mask(H: int, W: int, w: int, shift: int, tiles: int = 1) -> np.ndarray:
    """Additive mask (nWin, n, n) forbidding pairs from different regions.

    ``tiles`` repeats the spatial pattern across that many stacked token
    groups (bands), so any two tokens in one valid region may interact.
    """
    lab = shift_region_labels(H, W, w, shift)
    if tiles > 1:
        lab = np.tile(lab, (1, tiles))
    mask = np.where(lab[:, :, None] == lab[:, None, :], 0.0, MASK_VALUE)
    mask.setflags(write=False)
    return mask


def effective_shift(H: int, W: int, w: int, shifted: bool) -> int:
    """Half-window shift, disabled when the map is a single window."""
    if not shifted or (H <= w and W <= w):
        return 0
    return w // 2


class WindowAttention(Module):
    """Multi-head self-attention inside windows with a relative position bias.

    ``tiles`` > 1 means each window holds ``tiles`` stacked groups of w*w
    tokens sharing the same spatial layout; the spatial bias is repeated for
    every group pair.
    """

    def __init__(self, dim: int, heads: int, window: int, rng: np.random.Generator,
                 tiles: int = 1):
        if dim % heads:
            raise ConfigError(f"dim {dim} not divisible by {heads} heads")
        self.dim = dim
        self.heads = heads
        self.window = window
        self.tiles = tiles
        self.scale = (dim // heads) ** -0.5
        self.qkv = Linear(dim, 3 * dim, rng)
        self.proj = Linear(dim, dim, rng)
        self.rel_bias = Parameter(trunc_normal(rng, ((2 * window - 1) ** 2, heads)))
        self._index = np.tile(relative_position_index(window), (tiles, tiles))

    def position_bias(self):
        """(heads, n, n) bias gathered from the table."""
        return T.transpose(self.rel_bias[self._index], (2, 0, 1))

    def qkv_split(self, x):
        Bw, n, C = x.shape
        h = self.heads
        qkv = T.reshape(self.qkv(x), (Bw, n, 3, h, C // h))
        qkv = T.transpose(qkv, (2, 0, 3, 1, 4))
        return qkv[0], qkv[1], qkv[2]

    def attention_map(self, x, mask: np.ndarray | None = None):
        """Post-softmax attention ``z`` of shape (Bw, heads, n, n) and values."""
        q, k, v = self.qkv_split(x)
        logits = T.scale(q, self.scale) @ T.swapaxes(k, -1, -2) + self.position_bias()
        if mask is not None:
            nw, n = mask.shape[0], mask.shape[-1]
            Bw = logits.shape[0]
            logits = T.reshape(logits, (Bw // nw, nw, self.heads, n, n)) + mask[None, :, None]
            logits = T.reshape(logits, (Bw, self.heads, n, n))
        return T.softmax(logits, axis=-1), v

    def forward(self, x, mask: np.ndarray | None = None,
                modulation: Callable | None = None):
        """``x`` is (Bw, n, C); ``modulation`` maps z to z' before mixing values."""
        Bw, n, C = x.shape
        z, v = self.attention_map(x, mask)
        if modulation is not None:
            z = modulation(z)
        out = T.transpose(z @ v, (0, 2, 1, 3))
        return self.proj(T.reshape(out, (Bw, n, C)))


def windowed(attn: WindowAttention, x, shifted: bool, modulation: Callable | None = None):
    """Run ``attn`` over (shifted) windows of a (B, H, W, C) map."""
    B, H, W, C = x.shape
    w = attn.window
    s = effective_shift(H, W, w, shifted)
    if s:
        x = T.roll(x, (-s, -s), (1, 2))
    mask = shift_mask(H, W, w, s) if s else None
    out = attn(window_partition(x, w), mask, modulation)
    out = window_reverse(out, w, H, W)
    if s:
        out = T.roll(out, (s, s), (1, 2))
    return out
