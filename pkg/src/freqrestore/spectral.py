"""2-D DFT and radial frequency-band partitioning.

Transforms are unnormalised in the forward direction and scaled by
1/(H*W) in the inverse. Power-of-two lengths use an iterative radix-2 FFT;
any other length goes through Bluestein's chirp-z algorithm on top of it.

Band membership uses the Chebyshev radius of the *centred* frequency index,
``max(|i - H//2|, |j - W//2|)``, evaluated directly on the uncentred layout
as ``max(min(u, H-u), min(v, W-v))``.
"""

from __future__ import annotations

from dataclasses import dataclass
from functools import lru_cache

import numpy as np

from . import tensor as T
from .errors import ContractError, SymmetryError

IMAG_TOLERANCE = 1e-6


# ---------------------------------------------------------------------------
# 1-D transforms along the last axis
# ---------------------------------------------------------------------------

@lru_cache(maxsize=None)
def _bit_reverse(n: int) -> np.ndarray:
    bits = n.bit_length() - 1
    idx = np.arange(n)
    rev = np.zeros(n, dtype=np.int64)
    for b in range(bits):
        rev |= ((idx >> b) & 1) << (bits - 1 - b)
    return rev


@lru_cache(maxsize=None)
def _twiddles(m: int) -> np.ndarray:
    return np.exp(-2j * np.pi * np.arange(m) / (2 * m))


def _fft_pow2(x: np.ndarray) -> np.ndarray:
    n = x.shape[-1]
    lead = x.shape[:-1]
    a = x[..., _bit_reverse(n)]
    m = 1
    while m < n:
        a = a.reshape(lead + (n // (2 * m), 2, m))
        even = a[..., 0, :]
        odd = a[..., 1, :] * _twiddles(m)
        a = np.stack((even + odd, even - odd), axis=-2)
        m *= 2
    return a.reshape(lead + (n,))


@lru_cache(maxsize=None)
def _bluestein_plan(n: int):
    k = np.arange(n)
    chirp = np.exp(-1j * np.pi * ((k * k) % (2 * n)) / n)
    size = 1 << (2 * n - 2).bit_length()
    b = np.zeros(size, dtype=complex)
    b[:n] = np.conj(chirp)
    b[size - n + 1:] = np.conj(chirp[1:])[::-1]
    return chirp, size, _fft_pow2(b)


def _fft_bluestein(x: np.ndarray) -> np.ndarray:
    n = x.shape[-1]
    chirp, size, fb = _bluestein_plan(n)
    a = np.zeros(x.shape[:-1] + (size,), dtype=complex)
    a[..., :n] = x * chirp
    conv = _ifft_pow2(_fft_pow2(a) * fb)
    return conv[..., :n] * chirp


def _ifft_pow2(x: np.ndarray) -> np.ndarray:
    return np.conj(_fft_pow2(np.conj(x))) / x.shape[-1]


def fft(x: np.ndarray, axis: int = -1) -> np.ndarray:
    """Unnormalised 1-D DFT along ``axis``."""
    x = np.moveaxis(np.asarray(x, dtype=complex), axis, -1)
    n = x.shape[-1]
    if n == 1:
        out = x.copy()
    elif n & (n - 1) == 0:
        out = _fft_pow2(x)
    else:
        out = _fft_bluestein(x)
    return np.moveaxis(out, -1, axis)


def ifft(x: np.ndarray, axis: int = -1) -> np.ndarray:
    """Inverse of :func:`fft` (includes the 1/n factor)."""
    x = np.asarray(x, dtype=complex)
    return np.conj(fft(np.conj(x), axis)) / x.shape[axis]


def fft2(x: np.ndarray) -> np.ndarray:
    """2-D DFT over the last two axes (leading axes are batch)."""
    return fft(fft(x, -1), -2)


def ifft2(x: np.ndarray) -> np.ndarray:
    return ifft(ifft(x, -1), -2)


# ---------------------------------------------------------------------------
# spectrum type
# ---------------------------------------------------------------------------

@dataclass
class Spectrum:
    """Complex spectrum stored as separate real and imaginary buffers.

    With ``centered`` false (the default) the DC term sits at index (0, 0);
    when true it sits at ``(H//2, W//2)``.
    """

    re: np.ndarray
    im: np.ndarray
    centered: bool = False

    @property
    def shape(self) -> tuple[int, ...]:
        return self.re.shape

    @property
    def complex(self) -> np.ndarray:
        return self.re + 1j * self.im

    @property
    def magnitude(self) -> np.ndarray:
        return np.hypot(self.re, self.im)

    def to_centered(self) -> "Spectrum":
        if self.centered:
            return self
        H, W = self.shape[-2:]
        shift = (H // 2, W // 2)
        return Spectrum(np.roll(self.re, shift, (-2, -1)), np.roll(self.im, shift, (-2, -1)), True)

    def to_uncentered(self) -> "Spectrum":
        if not self.centered:
            return self
        H, W = self.shape[-2:]
        shift = (-(H // 2), -(W // 2))
        return Spectrum(np.roll(self.re, shift, (-2, -1)), np.roll(self.im, shift, (-2, -1)), False)

    @classmethod
    def from_complex(cls, s: np.ndarray, centered: bool = False) -> "Spectrum":
        return cls(np.ascontiguousarray(s.real), np.ascontiguousarray(s.imag), centered)


def dft2d(x: np.ndarray) -> Spectrum:
    """Unnormalised forward 2-D DFT of a real H x W array."""
    x = np.asarray(x, dtype=float)
    return Spectrum.from_complex(fft2(x))


def _real_part(z: np.ndarray) -> np.ndarray:
    if z.size and np.abs(z.imag).max() > IMAG_TOLERANCE:
        raise SymmetryError(
            f"inverse DFT has imaginary residue {np.abs(z.imag).max():.3e}; "
            "the spectrum is not conjugate-symmetric")
    return np.ascontiguousarray(z.real)


def idft2d(s: Spectrum) -> np.ndarray:
    """Inverse 2-D DFT returning a real array.

    Raises SymmetryError when the imaginary residue exceeds 1e-6, which
    means the spectrum did not come from a real signal.
    """
    return _real_part(ifft2(s.to_uncentered().complex))


# ---------------------------------------------------------------------------
# band partition
# ---------------------------------------------------------------------------

def max_radius(H: int, W: int) -> int:
    return max(H // 2, W // 2)


@lru_cache(maxsize=None)
def radius_map(H: int, W: int) -> np.ndarray:
    """Chebyshev radius of every frequency cell in uncentred layout."""
    u = np.arange(H)
    v = np.arange(W)
    du = np.minimum(u, H - u)
    dv = np.minimum(v, W - v)
    out = np.maximum(du[:, None], dv[None, :])
    out.setflags(write=False)
    return out


def split_radii(lo: int, hi: int, parts: int) -> list[tuple[int, int]]:
    """Split ``lo..hi`` into ``parts`` contiguous near-equal intervals.

    Leftover radii go to the highest intervals. Intervals may be empty
    (``r < l``) when there are fewer radii than parts.
    """
    count = hi - lo + 1
    base, rem = divmod(count, parts)
    sizes = [base] * (parts - rem) + [base + 1] * rem
    out, start = [], lo
    for size in sizes:
        out.append((start, start + size - 1))
        start += size
    return out


def band_ranges(L: int, H: int, W: int) -> list[tuple[int, int]]:
    """Radius interval ``(l_k, r_k)`` of each of ``L`` bands; band 0 is DC only."""
    if L < 2:
        raise ContractError(f"need at least 2 bands, got L={L}")
    R = max_radius(H, W)
    if R < L - 1:
        raise ContractError(f"a {H}x{W} grid has only {R} non-DC radii; cannot form {L} bands")
    return [(0, 0)] + split_radii(1, R, L - 1)


@lru_cache(maxsize=None)
def band_masks(L: int, H: int, W: int) -> tuple[np.ndarray, ...]:
    """Boolean masks (uncentred layout) selecting each band's cells."""
    r = radius_map(H, W)
    masks = []
    for lo, hi in band_ranges(L, H, W):
        m = (r >= lo) & (r <= hi)
        m.setflags(write=False)
        masks.append(m)
    return tuple(masks)


@dataclass
class BandSet:
    """Spatial-domain band components whose sum is the original signal."""

    bands: list[np.ndarray]
    L: int
    band_ranges: list[tuple[int, int]]

    def reconstruct(self) -> np.ndarray:
        return np.sum(self.bands, axis=0)


def decompose(x: np.ndarray, L: int) -> BandSet:
    """Split ``x`` (``..., H, W``; leading axes are channels) into ``L`` bands.

    Each channel is transformed independently; band ``k`` keeps only the
    spectrum cells whose radius lies in its interval.
    """
    x = np.asarray(x, dtype=float)
    H, W = x.shape[-2:]
    ranges = band_ranges(L, H, W)
    spec = fft2(x)
    bands = [_real_part(ifft2(spec * m)) for m in band_masks(L, H, W)]
    return BandSet(bands, L, ranges)


def _band_filter_array(z: np.ndarray, k: int, L: int) -> np.ndarray:
    H, W = z.shape[-2:]
    if L == 2:
        # Two bands: DC is the mean, the rest is its complement.
        dc = np.broadcast_to(z.mean(axis=(-2, -1), keepdims=True), z.shape)
        return np.array(dc) if k == 1 else z - dc
    mask = band_masks(L, H, W)[k - 1]
    return _real_part(ifft2(fft2(z) * mask))


def band_filter(z, k: int, L: int):
    """Extract band ``k`` (1-based) of the last two axes of ``z``.

    Accepts an ndarray or a Tensor. The filter is linear and self-adjoint,
    so its gradient is the same filter applied to the upstream gradient.
    """
    if not 1 <= k <= L:
        raise ContractError(f"band index k={k} outside 1..{L}")
    if not isinstance(z, T.Tensor):
        return _band_filter_array(np.asarray(z, dtype=float), k, L)
    return T._result(_band_filter_array(z.data, k, L), (z,),
                     lambda g: (_band_filter_array(g, k, L),))
