"""Time-series augmentations for contrastive pretraining.

Every function takes a single series shaped (channels, length) and a numpy
``Generator``; none mutates its input. Strengths live in
:class:`AugmentParams`, whose :meth:`AugmentParams.identity` settings turn every
kind into an exact copy.
"""

from dataclasses import dataclass, replace
from enum import Enum

import numpy as np
from scipy.interpolate import CubicSpline, PchipInterpolator


class AugmentKind(str, Enum):
    JITTER = "jitter"
    SCALING = "scaling"
    NEGATION = "negation"
    SMOOTHING = "smoothing"
    MAGNITUDE_WARP = "magnitude_warp"
    TIME_WARP = "time_warp"
    CIRCULAR_SHIFT = "circular_shift"
    ADD_SLOPE = "add_slope"
    ADD_SPIKE = "add_spike"
    ADD_STEP = "add_step"
    MASK = "mask"
    CROP = "crop"


TIMECLR_BANK = tuple(AugmentKind)


@dataclass(frozen=True)
class AugmentParams:
    """Strengths per augmentation kind.

    Magnitudes of jitter, slope, spike and step are relative to the standard
    deviation of the series being augmented.
    """

    jitter_sigma: float = 0.03
    scale_range: tuple = (0.7, 1.4)
    smooth_window: int = 5
    warp_knots: int = 4
    warp_sigma: float = 0.2
    shift: int = None  # None draws uniformly from [0, L)
    slope: float = 1.0
    spike_magnitude: float = 3.0
    step_height: float = 1.0
    mask_fraction: float = 0.1
    crop_range: tuple = (0.5, 0.9)

    def __post_init__(self):
        for name in ("jitter_sigma", "warp_sigma", "slope", "spike_magnitude", "step_height"):
            if getattr(self, name) < 0:
                raise ValueError(f"{name} must be >= 0")
        if not 0.0 <= self.mask_fraction <= 1.0:
            raise ValueError("mask_fraction must lie in [0, 1]")
        lo, hi = self.crop_range
        if not 0.0 < lo <= hi <= 1.0:
            raise ValueError("crop_range must satisfy 0 < lo <= hi <= 1")
        if self.smooth_window < 1:
            raise ValueError("smooth_window must be >= 1")

    @classmethod
    def identity(cls):
        """Settings under which every kind except negation returns its input."""
        return cls(
            jitter_sigma=0.0,
            scale_range=(1.0, 1.0),
            smooth_window=1,
            warp_sigma=0.0,
            shift=0,
            slope=0.0,
            spike_magnitude=0.0,
            step_height=0.0,
            mask_fraction=0.0,
            crop_range=(1.0, 1.0),
        )

    def with_(self, **changes):
        return replace(self, **changes)


def _std(x):
    s = float(np.std(x))
    return s if s > 0 else 1.0


def jitter(x, params, rng):
    if params.jitter_sigma == 0:
        return x.copy()
    return x + rng.normal(0.0, params.jitter_sigma * _std(x), size=x.shape)


def scaling(x, params, rng):
    lo, hi = params.scale_range
    return x * (lo if lo == hi else rng.uniform(lo, hi))


def negation(x, params, rng):
    return -x


def smoothing(x, params, rng):
    w = params.smooth_window
    if w == 1:
        return x.copy()
    left = (w - 1) // 2
    padded = np.pad(x, ((0, 0), (left, w - 1 - left)), mode="edge")
    kernel = np.ones(w) / w
    return np.stack([np.convolve(row, kernel, mode="valid") for row in padded])


def _knot_curve(length, params, rng):
    knots = np.linspace(0, length - 1, params.warp_knots + 2)
    values = rng.normal(1.0, params.warp_sigma, size=knots.size)
    return knots, values


def magnitude_warp(x, params, rng):
    length = x.shape[-1]
    if params.warp_sigma == 0 or length < 2:
        return x.copy()
    knots, values = _knot_curve(length, params, rng)
    return x * CubicSpline(knots, values)(np.arange(length))


def time_warp(x, params, rng):
    """Resample along a random monotone (PCHIP) warp of the time axis."""
    length = x.shape[-1]
    if params.warp_sigma == 0 or length < 2:
        return x.copy()
    knots, speeds = _knot_curve(length, params, rng)
    speeds = np.clip(speeds[1:], 0.1, None)
    warped = np.concatenate([[0.0], np.cumsum(speeds)])
    warped *= (length - 1) / warped[-1]
    t_new = np.clip(PchipInterpolator(knots, warped)(np.arange(length)), 0, length - 1)
    grid = np.arange(length)
    return np.stack([np.interp(t_new, grid, row) for row in x])


def circular_shift(x, params, rng):
    length = x.shape[-1]
    k = int(rng.integers(0, length)) if params.shift is None else int(params.shift)
    return np.roll(x, k % length, axis=-1)


def add_slope(x, params, rng):
    if params.slope == 0:
        return x.copy()
    length = x.shape[-1]
    rise = rng.uniform(-params.slope, params.slope) * _std(x)
    return x + rise * np.arange(length) / max(length - 1, 1)


def add_spike(x, params, rng):
    if params.spike_magnitude == 0:
        return x.copy()
    out = x.copy()
    pos = int(rng.integers(0, x.shape[-1]))
    out[:, pos] += rng.choice([-1.0, 1.0]) * params.spike_magnitude * _std(x)
    return out


def add_step(x, params, rng):
    if params.step_height == 0:
        return x.copy()
    out = x.copy()
    pos = int(rng.integers(0, x.shape[-1]))
    out[:, pos:] += rng.choice([-1.0, 1.0]) * params.step_height * _std(x)
    return out


def mask(x, params, rng):
    length = x.shape[-1]
    width = int(round(params.mask_fraction * length))
    if width == 0:
        return x.copy()
    out = x.copy()
    start = int(rng.integers(0, length - width + 1))
    out[:, start : start + width] = 0.0
    return out


def crop(x, params, rng):
    """Take a random contiguous window and stretch it back to full length by
    linear interpolation, so batches stay rectangular."""
    length = x.shape[-1]
    lo, hi = params.crop_range
    frac = lo if lo == hi else rng.uniform(lo, hi)
    width = max(2, int(round(frac * length)))
    if width >= length:
        return x.copy()
    start = int(rng.integers(0, length - width + 1))
    window = x[:, start : start + width]
    src = np.linspace(0, width - 1, length)
    grid = np.arange(width)
    return np.stack([np.interp(src, grid, row) for row in window])


_FUNCS = {
    AugmentKind.JITTER: jitter,
    AugmentKind.SCALING: scaling,
    AugmentKind.NEGATION: negation,
    AugmentKind.SMOOTHING: smoothing,
    AugmentKind.MAGNITUDE_WARP: magnitude_warp,
    AugmentKind.TIME_WARP: time_warp,
    AugmentKind.CIRCULAR_SHIFT: circular_shift,
    AugmentKind.ADD_SLOPE: add_slope,
    AugmentKind.ADD_SPIKE: add_spike,
    AugmentKind.ADD_STEP: add_step,
    AugmentKind.MASK: mask,
    AugmentKind.CROP: crop,
}


def augment(kind, x, params=None, rng=None):
    """Apply one augmentation to a (channels, length) or (length,) series."""
    try:
        kind = AugmentKind(kind)
    except ValueError:
        raise ValueError(f"unknown augmentation {kind!r}") from None
    x = np.asarray(x, dtype=np.float64)
    if x.size == 0:
        raise ValueError("cannot augment an empty series")
    params = params or AugmentParams()
    rng = rng if isinstance(rng, np.random.Generator) else np.random.default_rng(rng)
    squeeze = x.ndim == 1
    out = _FUNCS[kind](np.atleast_2d(x), params, rng)
    return out[0] if squeeze else out


def sample_one_augmentation(rng, bank=TIMECLR_BANK):
    return bank[int(rng.integers(0, len(bank)))]


def augment_batch(batch, rng, params=None, bank=TIMECLR_BANK, kind=None):
    """Augment each (channels, length) sample of ``batch`` independently.

    With ``kind=None`` a single kind is drawn per sample; otherwise ``kind``
    is used for all samples (with per-sample randomness).
    """
    params = params or AugmentParams()
    out = np.empty_like(batch, dtype=np.float64)
    for i, x in enumerate(batch):
        k = sample_one_augmentation(rng, bank) if kind is None else kind
        out[i] = augment(k, x, params, rng)
    return out


@dataclass(frozen=True)
class CropBounds:
    first: tuple  # [start, stop) of the first crop
    second: tuple
    overlap: tuple

    @property
    def overlap_length(self):
        return self.overlap[1] - self.overlap[0]


def crop_pair(x, rng, min_overlap=8, stride=1):
    """Two overlapping contiguous crops of ``x`` along its last axis.

    The same bounds apply to every leading index, so a whole batch can be
    cropped at once. ``stride`` keeps the two start offsets congruent so that
    a strided encoder maps the overlap to aligned output steps.
    Returns ``(x0, x1, bounds)`` with ``x0``/``x1`` exact slices of ``x``.
    """
    x = np.asarray(x)
    length = x.shape[-1]
    if length < 8:
        raise ValueError(f"series of length {length} is too short to crop (need >= 8)")
    min_overlap = max(1, min(min_overlap, length))
    overlap_len = int(rng.integers(min_overlap, length + 1))
    ov_start = int(rng.integers(0, length - overlap_len + 1))
    ov_stop = ov_start + overlap_len
    first_start = ov_start - stride * int(rng.integers(0, ov_start // stride + 1))
    second_stop = int(rng.integers(ov_stop, length + 1))
    bounds = CropBounds((first_start, ov_stop), (ov_start, second_stop), (ov_start, ov_stop))
    return x[..., first_start:ov_stop], x[..., ov_start:second_stop], bounds


def frequency_augment(spectrum, rng, remove_fraction=0.1, add_fraction=0.1, add_scale=0.1):
    """Remove and inject frequency components of a real-signal half-spectrum.

    A random ``remove_fraction`` of bins is zeroed; a random ``add_fraction``
    of bins gets a real-valued boost of up to ``add_scale`` times the largest
    magnitude. Real additions keep the DC and Nyquist bins real, so the result
    stays a valid half-spectrum.
    """
    spectrum = np.asarray(spectrum)
    out = spectrum.copy()
    if remove_fraction > 0:
        out = out * (rng.random(spectrum.shape) >= remove_fraction)
    if add_fraction > 0:
        chosen = rng.random(spectrum.shape) < add_fraction
        peak = np.abs(spectrum).max(axis=-1, keepdims=True)
        out = out + chosen * rng.random(spectrum.shape) * add_scale * peak
    return out
