"""Shared scenes and independent oracles for the test suite."""

import numpy as np

from evseg.events import EventSlice, SensorGeometry
from evseg.objective import TRUNCATION, accumulate_iwe, contrast
from evseg.synth import ObjectSpec, SceneSpec, generate
from evseg.warps import WarpedEvents, warp

DAVIS = SensorGeometry(346, 260)
DAVIS_K = SensorGeometry(346, 260, 200.0, 200.0)


def random_slice(rng, n=250, geometry=DAVIS, duration=0.02, margin=0):
    """Unstructured slice with continuous coordinates."""
    t = np.sort(rng.uniform(0, duration, n))
    x = rng.uniform(margin, geometry.width - 1 - margin, n)
    y = rng.uniform(margin, geometry.height - 1 - margin, n)
    p = rng.choice([-1, 1], n).astype(np.int8)
    return EventSlice(t, x, y, p, geometry, t_ref=0.0)


def random_scene(rng, n_objects=None, geometry=DAVIS, quantize=True, duration=None):
    """Random bars/rectangles/discs with random velocities plus some noise."""
    n_objects = int(rng.integers(1, 4)) if n_objects is None else n_objects
    duration = float(rng.uniform(0.02, 0.06)) if duration is None else duration
    objs = []
    for _ in range(n_objects):
        shape = str(rng.choice(["bar", "rectangle", "disc"]))
        pos = (float(rng.uniform(60, geometry.width - 60)), float(rng.uniform(50, geometry.height - 50)))
        vel = tuple(float(v) for v in rng.uniform(-120, 120, 2))
        objs.append(ObjectSpec(shape, pos, vel, float(rng.uniform(30, 80)),
                               length=float(rng.uniform(20, 60)), thickness=2.0,
                               angle=float(rng.uniform(0, 180)),
                               width=float(rng.uniform(15, 40)), height=float(rng.uniform(15, 40)),
                               radius=float(rng.uniform(6, 20))))
    spec = SceneSpec(geometry, duration, objs, float(rng.uniform(0, 3000)),
                     int(rng.integers(0, 2**31)), quantize)
    return generate(spec)


def two_bar_spec(seed=0, n=6000, duration=0.1, noise=0.02, geometry=DAVIS):
    """The two-motion benchmark: two thin vertical bars sharing 70/30 of the
    object events, velocities (100, 0) and (-80, 40) px/s, plus noise."""
    n_obj = n * (1 - noise)
    l1, l2, th = 120.0, 80.0, 2.0
    b1 = ObjectSpec("bar", (110.0, 130.0), (100.0, 0.0), 0.7 * n_obj / (duration * 2 * (l1 + th)),
                    length=l1, thickness=th, angle=90.0)
    b2 = ObjectSpec("bar", (240.0, 130.0), (-80.0, 40.0), 0.3 * n_obj / (duration * 2 * (l2 + th)),
                    length=l2, thickness=th, angle=90.0)
    return SceneSpec(geometry, duration, (b1, b2), noise * n / duration, seed)


def three_bar_spec(seed=0, n=4000, duration=0.1, geometry=DAVIS):
    """Three thin vertical bars with distinct horizontal speeds, 50/30/20."""
    n_obj = 0.98 * n
    rows = [((70.0, 130.0), (90.0, 0.0), 0.5, 110.0),
            ((180.0, 120.0), (-70.0, 30.0), 0.3, 90.0),
            ((280.0, 140.0), (20.0, -40.0), 0.2, 70.0)]
    objs = [ObjectSpec("bar", pos, vel, share * n_obj / (duration * 2 * (length + 2.0)),
                       length=length, thickness=2.0, angle=90.0)
            for pos, vel, share, length in rows]
    return SceneSpec(geometry, duration, tuple(objs), 0.02 * n / duration, seed)


def contrast_of_coords(coords, source, epsilon=1.0, use_polarity=False):
    w = WarpedEvents(np.asarray(coords, dtype=np.float64), source, None)
    return contrast(accumulate_iwe(w, epsilon, use_polarity)).value


def _single_footprint(c, source, epsilon, b):
    one = source.subset([0])
    w = WarpedEvents(np.asarray([c], dtype=np.float64), one, None)
    return accumulate_iwe(w, epsilon, False).pixels * b


def window_changes(c, h, epsilon=1.0, size=None):
    """True when moving coordinate ``c`` by +-h changes which pixel centers
    fall inside the truncated stencil (the model is discontinuous there)."""
    r = TRUNCATION * epsilon
    lo, hi = c - h, c + h

    def window(v):
        a, b = int(np.ceil(v - r)), int(np.floor(v + r))
        if size is not None:
            a, b = max(a, 0), min(b, size - 1)
        return a, b

    return window(lo) != window(hi)


def fd_coord_grad(warped, epsilon=1.0, h=1e-3, use_polarity=False):
    """Central differences of the contrast w.r.t. every warped coordinate.

    Moving one event only changes its own footprint, so the difference of the
    two perturbed contrasts is formed from the local change, which keeps the
    subtraction accurate. Entries whose stencil window changes between the
    two probes are returned as NaN.
    """
    src, g = warped.source, warped.geometry
    coords = np.asarray(warped.coords, dtype=np.float64)
    b = src.p.astype(np.float64) if use_polarity else np.ones(len(coords))
    base = accumulate_iwe(warped, epsilon, use_polarity).pixels
    n_pix = g.n_pixels
    out = np.full(coords.shape, np.nan)
    for k in range(len(coords)):
        own = _single_footprint(coords[k], src, epsilon, b[k])
        rest = base - own
        s_rest = rest.sum()
        for i, size in ((0, g.width), (1, g.height)):
            if window_changes(coords[k, i], h, epsilon, size):
                continue
            cp, cm = coords[k].copy(), coords[k].copy()
            cp[i] += h
            cm[i] -= h
            fp = _single_footprint(cp, src, epsilon, b[k])
            fm = _single_footprint(cm, src, epsilon, b[k])
            d_sq = ((rest + fp) ** 2 - (rest + fm) ** 2).sum() / n_pix
            mp, mm = (s_rest + fp.sum()) / n_pix, (s_rest + fm.sum()) / n_pix
            out[k, i] = (d_sq - (mp * mp - mm * mm)) / (2 * h)
    return out


def any_window_change(events, model_a, model_b, epsilon=1.0):
    """Whether any event's stencil window differs between two models."""
    ca, cb = warp(events, model_a).coords, warp(events, model_b).coords
    r = TRUNCATION * epsilon
    g = events.geometry
    for c1, c2, size in ((ca[:, 0], cb[:, 0], g.width), (ca[:, 1], cb[:, 1], g.height)):
        lo1, hi1 = np.clip(np.ceil(c1 - r), 0, size - 1), np.clip(np.floor(c1 + r), 0, size - 1)
        lo2, hi2 = np.clip(np.ceil(c2 - r), 0, size - 1), np.clip(np.floor(c2 + r), 0, size - 1)
        if np.any(lo1 != lo2) or np.any(hi1 != hi2):
            return True
    return False


def otsu_bruteforce(hist):
    """Exhaustive search over the 255 cuts of a 256-bin histogram; the lower
    class is bins [0, k). Written as a plain loop, independent of the library."""
    hist = [float(v) for v in hist]
    best_k, best = None, -1.0
    total = sum(hist)
    for k in range(1, len(hist)):
        w0 = sum(hist[:k])
        w1 = total - w0
        if w0 == 0 or w1 == 0:
            continue
        m0 = sum(i * hist[i] for i in range(k)) / w0
        m1 = sum(i * hist[i] for i in range(k, len(hist))) / w1
        between = w0 * w1 * (m0 - m1) ** 2
        if between > best:
            best_k, best = k, between
    return best_k
