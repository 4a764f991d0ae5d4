"""Procedural clean images, synthetic degradations and patch sampling.

Images are float arrays of shape (3, H, W) with values in [0, 1].
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view

from .errors import ContractError

KINDS = ("noise", "rain", "haze", "blur", "lowlight")

PARAM_NAMES: dict[str, tuple[str, ...]] = {
    "noise": ("sigma",),
    "rain": ("count", "length", "angle", "intensity"),
    "haze": ("t", "A"),
    "blur": ("size", "sigma", "length", "angle"),
    "lowlight": ("gamma", "gain"),
}

DEFAULT_PARAMS: dict[str, dict[str, float]] = {
    "noise": {"sigma": 25.0},
    "rain": {"count": 60.0, "length": 12.0, "angle": 15.0, "intensity": 0.6},
    "haze": {"t": 0.5, "A": 0.8},
    # length > 0 switches from a Gaussian to a linear motion kernel
    "blur": {"size": 9.0, "sigma": 2.0, "length": 0.0, "angle": 0.0},
    "lowlight": {"gamma": 2.0, "gain": 0.5},
}


@dataclass(frozen=True)
class DegradationSpec:
    """One synthetic degradation: kind, its parameters and an RNG seed.

    ``sigma`` for noise is on the 0-255 scale.
    """

    kind: str
    params: dict = field(default_factory=dict)
    seed: int = 0

    def __post_init__(self):
        if self.kind not in KINDS:
            raise ContractError(f"unknown degradation kind {self.kind!r}; expected one of {KINDS}")
        unknown = set(self.params) - set(PARAM_NAMES[self.kind])
        if unknown:
            raise ContractError(f"{self.kind}: unknown parameters {sorted(unknown)}")
        full = {**DEFAULT_PARAMS[self.kind], **{k: float(v) for k, v in self.params.items()}}
        object.__setattr__(self, "params", full)
        _validate(self.kind, full)

    def values(self) -> tuple[float, ...]:
        return tuple(self.params[n] for n in PARAM_NAMES[self.kind])

    def with_seed(self, seed: int) -> "DegradationSpec":
        return DegradationSpec(self.kind, dict(self.params), int(seed))

    @property
    def label(self) -> str:
        vals = ",".join(f"{v:g}" for v in self.values())
        return f"{self.kind}:{vals}"

    def __hash__(self):
        return hash((self.kind, self.values(), self.seed))


def _validate(kind: str, p: dict) -> None:
    def need(cond, msg):
        if not cond:
            raise ContractError(f"{kind}: {msg}")

    if kind == "noise":
        need(0 < p["sigma"] <= 255, "sigma must lie in (0, 255]")
    elif kind == "haze":
        need(0 < p["t"] <= 1, "transmission t must lie in (0, 1]")
        need(0 <= p["A"] <= 1, "airlight A must lie in [0, 1]")
    elif kind == "blur":
        size = p["size"]
        need(size >= 3 and size == int(size) and int(size) % 2 == 1, "kernel size must be odd and >= 3")
        need(p["sigma"] > 0, "sigma must be positive")
        need(0 <= p["length"] <= size, "motion length must lie in [0, size]")
    elif kind == "lowlight":
        need(p["gamma"] >= 1, "gamma must be >= 1")
        need(0 < p["gain"] <= 1, "gain must lie in (0, 1]")
    elif kind == "rain":
        need(p["count"] >= 0 and p["count"] == int(p["count"]), "count must be a non-negative integer")
        need(p["length"] > 0, "length must be positive")
        need(0 <= p["intensity"] <= 1, "intensity must lie in [0, 1]")


def parse_task(text: str, seed: int = 0) -> DegradationSpec:
    """Parse ``kind[:v1,v2,...]`` or ``kind:name=v,...`` into a spec."""
    kind, _, rest = text.strip().partition(":")
    params: dict[str, float] = {}
    if kind not in PARAM_NAMES:
        raise ContractError(f"unknown degradation kind {kind!r}")
    if rest:
        names = PARAM_NAMES[kind]
        for i, item in enumerate(rest.split(",")):
            if "=" in item:
                key, val = item.split("=", 1)
                params[key.strip()] = float(val)
            elif i < len(names):
                params[names[i]] = float(item)
            else:
                raise ContractError(f"too many values for {kind}: {text!r}")
    return DegradationSpec(kind, params, seed)


@dataclass
class ImagePair:
    clean: np.ndarray
    degraded: np.ndarray
    spec: DegradationSpec | None = None

    def __post_init__(self):
        if self.clean.shape != self.degraded.shape:
            raise ContractError(f"shape mismatch {self.clean.shape} vs {self.degraded.shape}")


# ---------------------------------------------------------------------------
# kernels
# ---------------------------------------------------------------------------

def gaussian_kernel(size: int, sigma: float) -> np.ndarray:
    ax = np.arange(size) - (size - 1) / 2
    g = np.exp(-(ax ** 2) / (2 * sigma ** 2))
    k = np.outer(g, g)
    return k / k.sum()


def motion_kernel(size: int, length: float, angle_deg: float) -> np.ndarray:
    """Normalised line of ``length`` pixels through the kernel centre."""
    k = np.zeros((size, size))
    c = (size - 1) / 2
    theta = math.radians(angle_deg)
    ts = np.linspace(-(length - 1) / 2, (length - 1) / 2, max(2, int(4 * length)))
    rows = np.clip(np.rint(c - ts * math.sin(theta)).astype(int), 0, size - 1)
    cols = np.clip(np.rint(c + ts * math.cos(theta)).astype(int), 0, size - 1)
    k[rows, cols] = 1.0
    return k / k.sum()


def filter2d(img: np.ndarray, kernel: np.ndarray, mode: str = "wrap") -> np.ndarray:
    """Per-channel 2-D convolution, output same size as input.

    ``mode`` is an ``np.pad`` mode; "wrap" keeps periodic images periodic.
    """
    kh, kw = kernel.shape
    ph, pw = kh // 2, kw // 2
    padded = np.pad(img, ((0, 0), (ph, ph), (pw, pw)), mode=mode)
    win = sliding_window_view(padded, (kh, kw), axis=(1, 2))
    return np.einsum("chwij,ij->chw", win, kernel[::-1, ::-1])


# ---------------------------------------------------------------------------
# degradations
# ---------------------------------------------------------------------------

def _rain_layer(H: int, W: int, p: dict, rng: np.random.Generator) -> np.ndarray:
    layer = np.zeros((H, W))
    n = int(p["count"])
    if n == 0:
        return layer
    lengths = p["length"] * rng.uniform(0.7, 1.3, n)
    angles = np.radians(p["angle"] + rng.normal(0.0, 4.0, n))
    y0 = rng.uniform(0, H, n)
    x0 = rng.uniform(0, W, n)
    bright = p["intensity"] * rng.uniform(0.7, 1.0, n)
    steps = np.linspace(0.0, 1.0, int(2 * p["length"] * 1.3) + 2)
    ys = y0[:, None] + steps[None] * lengths[:, None] * np.cos(angles)[:, None]
    xs = x0[:, None] + steps[None] * lengths[:, None] * np.sin(angles)[:, None]
    r = np.clip(np.rint(ys).astype(int), 0, H - 1).ravel()
    c = np.clip(np.rint(xs).astype(int), 0, W - 1).ravel()
    np.maximum.at(layer, (r, c), np.repeat(bright, len(steps)))
    return layer


def apply(clean: np.ndarray, spec: DegradationSpec) -> ImagePair:
    """Degrade ``clean`` according to ``spec``; a pure function of both."""
    clean = np.asarray(clean, dtype=float)
    if clean.ndim != 3:
        raise ContractError(f"expected a (C, H, W) image, got shape {clean.shape}")
    if clean.min() < 0 or clean.max() > 1:
        raise ContractError("clean image values must lie in [0, 1]")
    p = spec.params
    rng = np.random.default_rng(spec.seed)
    if spec.kind == "noise":
        out = clean + rng.normal(0.0, p["sigma"] / 255.0, clean.shape)
    elif spec.kind == "haze":
        out = clean * p["t"] + p["A"] * (1.0 - p["t"])
    elif spec.kind == "rain":
        out = clean + _rain_layer(clean.shape[1], clean.shape[2], p, rng)[None]
    elif spec.kind == "blur":
        size = int(p["size"])
        if p["length"] > 0:
            kernel = motion_kernel(size, p["length"], p["angle"])
        else:
            kernel = gaussian_kernel(size, p["sigma"])
        out = filter2d(clean, kernel)
    else:
        out = p["gain"] * clean ** p["gamma"]
    return ImagePair(clean, np.clip(out, 0.0, 1.0), spec)


def box_blur(clean: np.ndarray, size: int = 3) -> np.ndarray:
    return np.clip(filter2d(np.asarray(clean, dtype=float), np.full((size, size), 1.0 / size ** 2)), 0, 1)


# ---------------------------------------------------------------------------
# procedural clean images
# ---------------------------------------------------------------------------

def _soft_step(dist: np.ndarray, width: float = 0.75) -> np.ndarray:
    return 1.0 / (1.0 + np.exp(np.clip(dist / width, -50, 50)))


def _torus_delta(a: np.ndarray, b: float, period: int) -> np.ndarray:
    d = np.abs(a - b) % period
    return np.minimum(d, period - d)


def synth_clean(seed: int, H: int = 64, W: int = 64) -> np.ndarray:
    """Seamless piecewise-smooth RGB image: gradient, soft shapes, mild texture.

    Every component is periodic in both axes, so the DFT sees no jump at the
    wrap-around border and the spectrum reflects image content only.
    """
    if H < 16 or W < 16:
        raise ContractError("procedural images need H, W >= 16")
    rng = np.random.default_rng(seed)
    yy, xx = np.meshgrid(np.arange(H) / H, np.arange(W) / W, indexing="ij")
    py, px = rng.uniform(0, 2 * np.pi, 2)
    wy, wx = rng.uniform(0.3, 1.0, 2)
    ramp = wy * np.cos(2 * np.pi * yy + py) + wx * np.cos(2 * np.pi * xx + px)
    ramp = (ramp - ramp.min()) / (np.ptp(ramp) + 1e-12)
    c0, c1 = rng.uniform(0.15, 0.75, 3), rng.uniform(0.15, 0.75, 3)
    img = c0[:, None, None] + (c1 - c0)[:, None, None] * ramp[None]
    rows, cols = np.arange(H)[:, None], np.arange(W)[None, :]
    for _ in range(rng.integers(3, 7)):
        color = rng.uniform(0.05, 0.95, 3)
        cy, cx = rng.uniform(0, H), rng.uniform(0, W)
        dy, dx = _torus_delta(rows, cy, H), _torus_delta(cols, cx, W)
        if rng.random() < 0.5:
            dist = np.hypot(dy, dx) - rng.uniform(0.08, 0.3) * min(H, W)
        else:
            hh, hw = rng.uniform(0.08, 0.3, 2) * np.array([H, W])
            dist = np.maximum(dy - hh, dx - hw)
        alpha = rng.uniform(0.5, 1.0) * _soft_step(dist)
        img = img * (1 - alpha[None]) + color[:, None, None] * alpha[None]
    for _ in range(3):
        fy, fx = rng.integers(1, 7, 2)
        phase = rng.uniform(0, 2 * np.pi)
        amp = rng.uniform(0.01, 0.04)
        img = img + amp * np.sin(2 * np.pi * (fy * yy + fx * xx) + phase)[None]
    return np.clip(img, 0.0, 1.0)


# ---------------------------------------------------------------------------
# patches
# ---------------------------------------------------------------------------

def augment(img: np.ndarray, flip: bool, rot: int) -> np.ndarray:
    """Horizontal flip followed by ``rot`` quarter turns (spatial axes)."""
    out = img[..., ::-1] if flip else img
    return np.ascontiguousarray(np.rot90(out, rot, axes=(-2, -1)))


def unaugment(img: np.ndarray, flip: bool, rot: int) -> np.ndarray:
    out = np.rot90(img, -rot, axes=(-2, -1))
    return np.ascontiguousarray(out[..., ::-1] if flip else out)


def sample_patch(pair: ImagePair, size: int, rng: np.random.Generator,
                 augment_patch: bool = False) -> ImagePair:
    """Same random crop (and optional flip/rotation) of clean and degraded."""
    _, H, W = pair.clean.shape
    if size > min(H, W) or size < 1:
        raise ContractError(f"patch size {size} does not fit a {H}x{W} image")
    i = int(rng.integers(0, H - size + 1))
    j = int(rng.integers(0, W - size + 1))
    clean = pair.clean[:, i:i + size, j:j + size]
    degraded = pair.degraded[:, i:i + size, j:j + size]
    if augment_patch:
        flip, rot = bool(rng.integers(2)), int(rng.integers(4))
        clean, degraded = augment(clean, flip, rot), augment(degraded, flip, rot)
    return ImagePair(np.ascontiguousarray(clean), np.ascontiguousarray(degraded), pair.spec)
