"""Event records, sensor geometry and the ``t x y p`` text format.

A slice stores its events column-wise in read-only numpy arrays; ``Event``
is only materialized when a single record is indexed.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import NamedTuple

import numpy as np

from .errors import BoundsError, OrderError, ParseError


class Event(NamedTuple):
    t: float
    x: float
    y: float
    p: int


@dataclass(frozen=True)
class SensorGeometry:
    width: int
    height: int
    fx: float = 1.0
    fy: float = 1.0
    cx: float | None = None
    cy: float | None = None

    def __post_init__(self):
        if self.width <= 0 or self.height <= 0:
            raise ValueError("sensor width and height must be positive")
        if not (self.fx > 0 and self.fy > 0):
            raise ValueError("focal lengths must be positive")
        # principal point defaults to the image center
        if self.cx is None:
            object.__setattr__(self, "cx", (self.width - 1) / 2.0)
        if self.cy is None:
            object.__setattr__(self, "cy", (self.height - 1) / 2.0)

    @property
    def shape(self):
        """(rows, cols) of an image on this sensor."""
        return (self.height, self.width)

    @property
    def n_pixels(self):
        return self.width * self.height

    def contains(self, x, y):
        x = np.asarray(x)
        y = np.asarray(y)
        return (x >= 0) & (x < self.width) & (y >= 0) & (y < self.height)


def _frozen(a, dtype):
    a = np.array(a, dtype=dtype, copy=True).reshape(-1)
    a.setflags(write=False)
    return a


@dataclass(frozen=True, eq=False)
class EventSlice:
    """Time-ordered batch of events on one sensor.

    ``t_ref`` defaults to the earliest timestamp (0.0 for an empty slice).
    """

    t: np.ndarray
    x: np.ndarray
    y: np.ndarray
    p: np.ndarray
    geometry: SensorGeometry
    t_ref: float | None = field(default=None)

    def __post_init__(self):
        t = _frozen(self.t, np.float64)
        x = _frozen(self.x, np.float64)
        y = _frozen(self.y, np.float64)
        p = _frozen(self.p, np.int8)
        if not (len(t) == len(x) == len(y) == len(p)):
            raise ValueError("event columns differ in length")
        if len(t) > 1 and np.any(np.diff(t) < 0):
            raise OrderError(int(np.argmax(np.diff(t) < 0)) + 2)
        if not np.all(np.isin(p, (-1, 1))):
            raise ValueError("polarity must be +1 or -1")
        object.__setattr__(self, "t", t)
        object.__setattr__(self, "x", x)
        object.__setattr__(self, "y", y)
        object.__setattr__(self, "p", p)
        if self.t_ref is None:
            object.__setattr__(self, "t_ref", float(t[0]) if len(t) else 0.0)
        elif not math.isfinite(self.t_ref):
            raise ValueError("t_ref must be finite")
        else:
            object.__setattr__(self, "t_ref", float(self.t_ref))

    @classmethod
    def from_events(cls, events, geometry, t_ref=None):
        events = list(events)
        cols = np.array([(e.t, e.x, e.y, e.p) for e in events], dtype=np.float64).reshape(-1, 4)
        return cls(cols[:, 0], cols[:, 1], cols[:, 2], cols[:, 3].astype(np.int8), geometry, t_ref)

    def __len__(self):
        return len(self.t)

    def __getitem__(self, k):
        return Event(float(self.t[k]), float(self.x[k]), float(self.y[k]), int(self.p[k]))

    def __iter__(self):
        for k in range(len(self)):
            yield self[k]

    @property
    def dt(self):
        """Per-event time offset from the reference time."""
        return self.t - self.t_ref

    @property
    def xy(self):
        return np.stack([self.x, self.y], axis=1)

    def subset(self, indices):
        """Events at ``indices`` (kept in time order), same geometry and t_ref."""
        idx = np.sort(np.asarray(indices, dtype=np.intp))
        return EventSlice(self.t[idx], self.x[idx], self.y[idx], self.p[idx], self.geometry, self.t_ref)

    def with_t_ref(self, t_ref):
        return EventSlice(self.t, self.x, self.y, self.p, self.geometry, t_ref)

    def shifted(self, dx, dy):
        """Translate all event coordinates; bounds are re-checked."""
        x = self.x + dx
        y = self.y + dy
        if not np.all(self.geometry.contains(x, y)):
            raise BoundsError("shift moves events outside the sensor")
        return EventSlice(self.t, x, y, self.p, self.geometry, self.t_ref)


def _parse_polarity(tok):
    v = int(tok)
    if v in (1, -1):
        return v
    if v == 0:
        return -1
    raise ValueError(tok)


def load_events(path, geometry):
    """Read a ``t x y p`` text file (``#`` starts a comment).

    Polarity may be given as 0/1 or -1/+1; 0 maps to -1.
    """
    ts, xs, ys, ps = [], [], [], []
    last_t = -math.inf
    with open(path) as fh:
        for lineno, raw in enumerate(fh, start=1):
            line = raw.split("#", 1)[0].strip()
            if not line:
                continue
            parts = line.split()
            if len(parts) != 4:
                raise ParseError(lineno, f"expected 4 fields, got {len(parts)}")
            try:
                t = float(parts[0])
                x = float(parts[1])
                y = float(parts[2])
                p = _parse_polarity(parts[3])
            except ValueError:
                raise ParseError(lineno) from None
            if not (math.isfinite(t) and math.isfinite(x) and math.isfinite(y)):
                raise ParseError(lineno, "non-finite value")
            if not (0 <= x < geometry.width and 0 <= y < geometry.height):
                raise BoundsError(f"line {lineno}: ({x}, {y}) outside {geometry.width}x{geometry.height}")
            if t < last_t:
                raise OrderError(lineno)
            last_t = t
            ts.append(t)
            xs.append(x)
            ys.append(y)
            ps.append(p)
    return EventSlice(np.array(ts), np.array(xs), np.array(ys), np.array(ps, dtype=np.int8), geometry)


def format_events(events):
    """Text body in the interchange format; x and y are written as integers."""
    lines = [
        "%.6f %d %d %d\n" % (t, round(x), round(y), p)
        for t, x, y, p in zip(events.t.tolist(), events.x.tolist(), events.y.tolist(), events.p.tolist())
    ]
    return "".join(lines)


def save_events(events, path):
    Path(path).write_text(format_events(events))


def slice_by_duration(events, window):
    """Split into half-open windows ``[t0 + k*w, t0 + (k+1)*w)``.

    Each sub-slice gets its window start as ``t_ref``; empty windows are
    skipped.
    """
    if not window > 0:
        raise ValueError("window must be positive")
    if len(events) == 0:
        return []
    t0 = float(events.t[0])
    k = np.floor((events.t - t0) / window).astype(np.int64)
    out = []
    starts = np.flatnonzero(np.r_[True, np.diff(k) != 0])
    stops = np.r_[starts[1:], len(k)]
    for a, b in zip(starts, stops):
        idx = np.arange(a, b)
        sub = events.subset(idx).with_t_ref(t0 + int(k[a]) * window)
        out.append(sub)
    return out
