"""Frequency statistics of degradations.

Amplitude spectra are binned by Chebyshev radius (see
:mod:`freqrestore.spectral`). "Low" frequencies are radii up to
``cutoff_fraction * R``; everything above is "high". DC counts as low.
"""

from __future__ import annotations

import csv
import io
import math
import os
from dataclasses import dataclass
from typing import Iterable, TextIO

import numpy as np

from . import spectral
from .degrade import DegradationSpec, ImagePair, apply, synth_clean

N_BINS = 20


@dataclass
class Spectrogram:
    """Channel-averaged amplitude map (uncentred layout) normalised to unit sum.

    ``empty`` flags an all-zero input, in which case ``amplitude`` is zeros.
    """

    amplitude: np.ndarray
    empty: bool = False


@dataclass
class BandHistogram:
    bins: np.ndarray
    bin_ranges: list[tuple[int, int]]


@dataclass
class RatioPoint:
    clean_ratio: float
    degraded_ratio: float
    kind: str


def _normalized(amp: np.ndarray) -> Spectrogram:
    total = amp.sum()
    if total <= 1e-12 * amp.size:
        return Spectrogram(np.zeros_like(amp), empty=True)
    return Spectrogram(amp / total)


def residual_spectrum(pair: ImagePair) -> Spectrogram:
    """|F(clean) - F(degraded)| averaged over channels, normalised."""
    clean = np.asarray(pair.clean, dtype=float)
    degraded = np.asarray(pair.degraded, dtype=float)
    resid = spectral.fft2(clean) - spectral.fft2(degraded)
    amp = np.abs(resid)
    if amp.ndim == 3:
        amp = amp.mean(axis=0)
    return _normalized(amp)


def amplitude_spectrum(x: np.ndarray) -> Spectrogram:
    amp = np.abs(spectral.fft2(np.asarray(x, dtype=float)))
    if amp.ndim == 3:
        amp = amp.mean(axis=0)
    return _normalized(amp)


def histogram_ranges(H: int, W: int, n_bins: int = N_BINS) -> list[tuple[int, int]]:
    """Radius intervals of ``n_bins`` equal-width bins over 0..R.

    Grids with fewer radii than bins get one radius per bin from DC upwards;
    the trailing bins are empty.
    """
    R = spectral.max_radius(H, W)
    if R + 1 < n_bins:
        return [(i, i) for i in range(R + 1)] + [(R + 1, R)] * (n_bins - R - 1)
    return spectral.split_radii(0, R, n_bins)


def bin_histogram(s, n_bins: int = N_BINS) -> BandHistogram:
    """Sum normalised amplitude within equal-width radius bins."""
    if n_bins < 2:
        raise ValueError("n_bins must be >= 2")
    if isinstance(s, spectral.Spectrum):
        s = _normalized(s.to_uncentered().magnitude)
    elif not isinstance(s, Spectrogram):
        s = _normalized(np.abs(np.asarray(s, dtype=float)))
    H, W = s.amplitude.shape
    ranges = histogram_ranges(H, W, n_bins)
    r = spectral.radius_map(H, W)
    per_radius = np.bincount(r.ravel(), weights=s.amplitude.ravel(), minlength=spectral.max_radius(H, W) + 1)
    bins = np.array([per_radius[lo:hi + 1].sum() if hi >= lo else 0.0 for lo, hi in ranges])
    return BandHistogram(bins, ranges)


def _split_energy(x: np.ndarray, cutoff_fraction: float) -> tuple[float, float]:
    x = np.asarray(x, dtype=float)
    amp = np.abs(spectral.fft2(x))
    if amp.ndim == 3:
        amp = amp.sum(axis=0)
    H, W = amp.shape
    r = spectral.radius_map(H, W)
    low = r <= cutoff_fraction * spectral.max_radius(H, W)
    return float(amp[low].sum()), float(amp[~low].sum())


def low_high_ratio(x: np.ndarray, cutoff_fraction: float = 0.5) -> float:
    """Low- to high-frequency amplitude ratio; +inf if there is no high part."""
    low, high = _split_energy(x, cutoff_fraction)
    if high <= 1e-12 * max(low, 1.0):
        return math.inf
    return low / high


def high_fraction(x: np.ndarray, cutoff_fraction: float = 0.5) -> float:
    """Share of spectral amplitude above the cutoff radius."""
    low, high = _split_energy(x, cutoff_fraction)
    total = low + high
    return high / total if total > 0 else 0.0


def ratio_point(pair: ImagePair, cutoff_fraction: float = 0.5) -> RatioPoint:
    kind = pair.spec.kind if pair.spec is not None else ""
    return RatioPoint(low_high_ratio(pair.clean, cutoff_fraction),
                      low_high_ratio(pair.degraded, cutoff_fraction), kind)


CSV_HEADER = (["kind", "seed", "param1", "param2", "param3", "param4",
               "clean_ratio", "degraded_ratio"] + [f"bin_{i:02d}" for i in range(N_BINS)])


def pair_seeds(base_seed: int, task_index: int, i: int) -> tuple[int, int]:
    """(clean-image seed, degradation seed) for pair ``i`` of a task."""
    ss = np.random.SeedSequence([base_seed, task_index, i])
    a, b = ss.generate_state(2, dtype=np.uint32)
    return int(a), int(b)


def analysis_row(pair: ImagePair, seed: int) -> list:
    spec = pair.spec
    params = list(spec.values()) + [""] * (4 - len(spec.values()))
    point = ratio_point(pair)
    hist = bin_histogram(residual_spectrum(pair))
    return [spec.kind, seed] + params + [point.clean_ratio, point.degraded_ratio] + list(hist.bins)


def analyze(specs: Iterable[DegradationSpec], n_pairs: int, out: str | os.PathLike | TextIO | None = None,
            size: int = 64, seed: int = 0) -> list[list]:
    """Sample ``n_pairs`` procedural pairs per spec; one CSV row per pair.

    ``out`` may be a path, an open text file, or None (rows are only
    returned). Returns the data rows without the header.
    """
    if n_pairs < 1:
        raise ValueError("n_pairs must be >= 1")
    rows = []
    for t, spec in enumerate(specs):
        for i in range(n_pairs):
            clean_seed, deg_seed = pair_seeds(seed, t, i)
            pair = apply(synth_clean(clean_seed, size, size), spec.with_seed(deg_seed))
            rows.append(analysis_row(pair, deg_seed))
    if out is not None:
        if isinstance(out, (str, os.PathLike)):
            with open(out, "w", newline="") as fh:
                _write_rows(fh, rows)
        else:
            _write_rows(out, rows)
    return rows


def _write_rows(fh: TextIO, rows: list[list]) -> None:
    writer = csv.writer(fh)
    writer.writerow(CSV_HEADER)
    writer.writerows(rows)


def rows_to_csv(rows: list[list]) -> str:
    buf = io.StringIO()
    _write_rows(buf, rows)
    return buf.getvalue()


def direction_summary(rows: list[list]) -> dict[str, dict[str, float]]:
    """Per kind: fraction of pairs whose high-frequency share went up.

    Uses ratio r = low/high, so the high share is 1 / (1 + r).
    """
    out: dict[str, dict[str, float]] = {}
    for row in rows:
        kind, clean_r, deg_r = row[0], float(row[6]), float(row[7])
        d = out.setdefault(kind, {"n": 0, "increased": 0, "mean_delta": 0.0})
        delta = 1.0 / (1.0 + deg_r) - 1.0 / (1.0 + clean_r)
        d["n"] += 1
        d["increased"] += delta > 0
        d["mean_delta"] += delta
    for d in out.values():
        d["frac_increased"] = d["increased"] / d["n"]
        d["mean_delta"] /= d["n"]
    return out
