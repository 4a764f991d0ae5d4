"""Shifted-window attention, band-restricted attention and ratio modulation."""

import numpy as np

from freqrestore import Tensor
from freqrestore import tensor as T
from freqrestore.attention import WindowAttention, shift_mask, windowed
from freqrestore.dformer import inter_band_attention, intra_band_attention
from freqrestore.rformer import modulate

rng = np.random.default_rng(0)
attn = WindowAttention(dim=8, heads=2, window=4, rng=rng)
x = Tensor(rng.normal(size=(1, 8, 8, 8)))

plain = windowed(attn, x, shifted=False)
shifted = windowed(attn, x, shifted=True)
print("windowed output", plain.shape, " shifted differs:", not np.allclose(plain.data, shifted.data))

mask = shift_mask(8, 8, 4, 2)
print("mask per window", mask.shape, " blocked pairs in last window:", int((mask[-1] < 0).sum()))

# two frequency bands of the same token map: (B, L, H, W, C)
bands = Tensor(rng.normal(size=(1, 2, 8, 8, 8)))
intra = intra_band_attention(bands, attn, shifted=True)
joint = WindowAttention(8, 2, 4, rng, tiles=2)
embed = Tensor(rng.normal(scale=0.02, size=(2, 8)))
inter = inter_band_attention(bands, joint, embed, shifted=True)
print("intra-band", intra.shape, " inter-band", inter.shape)

# ratio modulation of an attention map: zero keeps it, -1 leaves only the mean
z = T.softmax(Tensor(rng.normal(size=(1, 2, 16, 16))), axis=-1)
print("m=0 unchanged:", np.allclose(modulate(z, np.zeros(1), 2).data, z.data))
print("m=-1 constant:", np.ptp(modulate(z, np.array([-1.0]), 2).data[0, 0]) < 1e-9)
