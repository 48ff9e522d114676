"""Per-event first variation of the contrast and the fit/residual split.

The variation of event k is the gradient of the contrast with respect to
the event's *original* coordinates under a fixed motion; its magnitude says
how strongly the event supports that motion.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import DegenerateError
from .objective import grad_wrt_warped_coords
from .warps import coord_jacobians, warp

ABOVE_IS_FIT = "above-is-fit"
BELOW_IS_FIT = "below-is-fit"
N_BINS = 256


def minmax_scale(values, top=255.0):
    values = np.asarray(values, dtype=np.float64)
    if values.size == 0:
        return values.copy()
    lo, hi = values.min(), values.max()
    if hi == lo:
        return np.zeros_like(values)
    return top * (values - lo) / (hi - lo)


@dataclass(frozen=True, eq=False)
class VariationField:
    magnitudes: np.ndarray
    gradients: np.ndarray  # (N, 2) dC/dx_k
    warped: object = None

    @property
    def scaled(self):
        """Magnitudes min-max scaled to [0, 255]."""
        return minmax_scale(self.magnitudes)

    def __len__(self):
        return len(self.magnitudes)

    def to_csv(self):
        return "index,magnitude\n" + "".join(f"{i},{m!r}\n" for i, m in enumerate(self.magnitudes.tolist()))


@dataclass(frozen=True, eq=False)
class SplitResult:
    fit_indices: np.ndarray
    residual_indices: np.ndarray
    threshold_used: float
    rule: str = ABOVE_IS_FIT


def variation(events, model, epsilon=1.0, use_polarity=False):
    warped = warp(events, model)
    g_warped = grad_wrt_warped_coords(warped, epsilon, use_polarity)
    # chain rule: dC/dx_k = dC/dx'_k . dx'_k/dx_k
    grads = np.einsum("ni,nij->nj", g_warped, coord_jacobians(events, model))
    return VariationField(np.linalg.norm(grads, axis=1), grads, warped)


def mvi(field, geometry=None):
    """Mean variation magnitude per pixel of the warped layout.

    Warped events are binned to the nearest pixel; pixels that receive no
    event (and events warped off the sensor) contribute nothing.
    """
    warped = field.warped
    g = geometry or warped.geometry
    ix = np.rint(warped.coords[:, 0]).astype(np.int64)
    iy = np.rint(warped.coords[:, 1]).astype(np.int64)
    ok = (ix >= 0) & (ix < g.width) & (iy >= 0) & (iy < g.height)
    flat = iy[ok] * g.width + ix[ok]
    total = np.bincount(flat, weights=field.magnitudes[ok], minlength=g.n_pixels)
    count = np.bincount(flat, minlength=g.n_pixels)
    out = np.zeros(g.n_pixels)
    hit = count > 0
    out[hit] = total[hit] / count[hit]
    return out.reshape(g.shape)


def otsu_bin(hist):
    """Cut index maximizing the between-class variance of a histogram.

    Returns ``k`` such that bins ``0..k-1`` form the lower class. Ties go
    to the lowest ``k``.
    """
    hist = np.asarray(hist, dtype=np.float64)
    levels = np.arange(len(hist), dtype=np.float64)
    w0 = np.cumsum(hist)[:-1]
    s0 = np.cumsum(hist * levels)[:-1]
    total, s_total = hist.sum(), (hist * levels).sum()
    w1 = total - w0
    with np.errstate(divide="ignore", invalid="ignore"):
        between = w0 * w1 * (s0 / w0 - (s_total - s0) / w1) ** 2
    between = np.where((w0 > 0) & (w1 > 0), between, -np.inf)
    if not np.isfinite(between.max()):
        raise DegenerateError("histogram has a single occupied bin")
    return int(np.argmax(between)) + 1


def scaled_histogram(field):
    """256-bin histogram of the scaled magnitudes (bin = floor, 255 -> 255)."""
    bins = np.minimum(np.floor(field.scaled).astype(np.int64), N_BINS - 1)
    return np.bincount(bins, minlength=N_BINS)


def otsu_threshold(field):
    """Otsu threshold on the scaled variation histogram, in raw magnitude units."""
    m = field.magnitudes
    if len(m) < 2:
        raise DegenerateError("Otsu needs at least two events")
    lo, hi = float(m.min()), float(m.max())
    if hi == lo:
        raise DegenerateError("all variation magnitudes are equal")
    k = otsu_bin(scaled_histogram(field))
    # boundary between bin k-1 and bin k on the [0, 255] scale
    return lo + k * (hi - lo) / 255.0


def split(field, threshold, rule=ABOVE_IS_FIT):
    """Partition events at ``threshold``; events exactly at it are residual."""
    if not np.isfinite(threshold):
        raise ValueError("threshold must be finite")
    m = field.magnitudes if hasattr(field, "magnitudes") else np.asarray(field)
    if rule == ABOVE_IS_FIT:
        fit = m > threshold
    elif rule == BELOW_IS_FIT:
        fit = m < threshold
    else:
        raise ValueError(f"unknown rule {rule!r}")
    return SplitResult(np.flatnonzero(fit), np.flatnonzero(~fit), float(threshold), rule)
