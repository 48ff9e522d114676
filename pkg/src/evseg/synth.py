"""Ground-truth-labeled synthetic event streams.

Objects are 1-D edge sets that translate with constant velocity: the
perimeter of a solid bar (any orientation), a rectangle outline or a circle.
Events are drawn uniformly along the edge and in time, then quantized to whole microseconds and (by default) integer
pixels, so a generated slice survives a text round trip unchanged. Counts are
deterministic: ``round(density * duration * edge_length)`` per object and
``round(noise_rate * duration)`` noise events.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field

import numpy as np

from .errors import SpecError
from .events import EventSlice, SensorGeometry

SHAPES = ("bar", "rectangle", "disc")
_ALIASES = {"rectangle-outline": "rectangle", "disc-outline": "disc"}


@dataclass(frozen=True)
class ObjectSpec:
    shape: str
    position: tuple  # center at t = 0, px
    velocity: tuple  # px/s
    event_density: float  # events per px of edge per second
    length: float = 40.0  # bar
    thickness: float = 6.0  # bar
    angle: float = 90.0  # bar long axis in degrees from +x; 90 is vertical
    width: float = 30.0  # rectangle
    height: float = 20.0  # rectangle
    radius: float = 10.0  # disc

    def __post_init__(self):
        object.__setattr__(self, "shape", _ALIASES.get(self.shape, self.shape))
        if self.shape not in SHAPES:
            raise SpecError(f"unknown shape {self.shape!r}; expected one of {SHAPES}")
        if len(self.velocity) != 2 or not all(math.isfinite(v) for v in self.velocity):
            raise SpecError("velocity must be two finite numbers")
        if len(self.position) != 2:
            raise SpecError("position must have two coordinates")
        if not self.event_density > 0:
            raise SpecError("event_density must be positive")
        sizes = {"bar": (self.length, self.thickness), "rectangle": (self.width, self.height), "disc": (self.radius,)}
        if any(not s > 0 for s in sizes[self.shape]):
            raise SpecError(f"{self.shape} size parameters must be positive")

    @property
    def edge_length(self):
        if self.shape == "bar":
            return 2.0 * (self.length + self.thickness)
        if self.shape == "rectangle":
            return 2.0 * (self.width + self.height)
        return 2.0 * math.pi * self.radius

    def edge_points(self, s):
        """Edge samples at arc-length fractions ``s`` in [0, 1), relative to
        the center, plus the outward unit normal at each sample."""
        s = np.asarray(s, dtype=np.float64)
        if self.shape == "bar":
            a = math.radians(self.angle)
            rot = np.array([[math.cos(a), -math.sin(a)], [math.sin(a), math.cos(a)]])
            pts, nrm = _box_outline(s, self.length, self.thickness)
            return pts @ rot.T, nrm @ rot.T
        if self.shape == "disc":
            ang = 2 * math.pi * s
            nrm = np.stack([np.cos(ang), np.sin(ang)], axis=1)
            return self.radius * nrm, nrm
        return _box_outline(s, self.width, self.height)


def _box_outline(s, w, h):
    """Perimeter of an axis-aligned w x h box centered at 0, walked clockwise
    from the top-left corner (image coordinates, y down)."""
    d = s * 2 * (w + h)
    pts = np.zeros((len(s), 2))
    nrm = np.zeros((len(s), 2))
    top = d < w
    right = (d >= w) & (d < w + h)
    bottom = (d >= w + h) & (d < 2 * w + h)
    left = d >= 2 * w + h
    pts[top] = np.stack([d[top] - w / 2, np.full(top.sum(), -h / 2)], axis=1)
    nrm[top] = (0, -1)
    pts[right] = np.stack([np.full(right.sum(), w / 2), d[right] - w - h / 2], axis=1)
    nrm[right] = (1, 0)
    pts[bottom] = np.stack([w / 2 - (d[bottom] - w - h), np.full(bottom.sum(), h / 2)], axis=1)
    nrm[bottom] = (0, 1)
    pts[left] = np.stack([np.full(left.sum(), -w / 2), h / 2 - (d[left] - 2 * w - h)], axis=1)
    nrm[left] = (-1, 0)
    return pts, nrm


@dataclass(frozen=True)
class SceneSpec:
    geometry: SensorGeometry
    duration: float
    objects: tuple = field(default_factory=tuple)
    noise_rate: float = 0.0
    seed: int = 0
    quantize: bool = True  # round object events to integer pixels like a real sensor

    def __post_init__(self):
        if not self.duration > 0:
            raise SpecError("duration must be positive")
        if not self.noise_rate >= 0:
            raise SpecError("noise_rate must be non-negative")
        if not self.objects and self.noise_rate == 0:
            raise SpecError("scene has neither objects nor noise")
        object.__setattr__(self, "objects", tuple(self.objects))

    @classmethod
    def from_dict(cls, d):
        try:
            geometry = SensorGeometry(**d["geometry"])
            objects = []
            for o in d.get("objects", []):
                o = dict(o)
                o["position"] = tuple(o["position"])
                o["velocity"] = tuple(o["velocity"])
                objects.append(ObjectSpec(**o))
            return cls(geometry, float(d["duration"]), tuple(objects),
                       float(d.get("noise_rate", 0.0)), int(d.get("seed", 0)),
                       bool(d.get("quantize", True)))
        except (KeyError, TypeError, ValueError) as exc:
            raise SpecError(f"invalid scene spec: {exc}") from exc

    @classmethod
    def from_json(cls, text):
        try:
            return cls.from_dict(json.loads(text))
        except json.JSONDecodeError as exc:
            raise SpecError(f"scene spec is not valid JSON: {exc}") from exc


@dataclass(frozen=True, eq=False)
class GroundTruth:
    labels: np.ndarray  # 0 = noise, 1..N = objects
    velocities: list
    bboxes: list  # (x0, y0, x1, y1) inclusive at t_ref, or None if off-sensor
    t_ref: float = 0.0

    def to_json(self):
        objects = [
            {"v": [float(v[0]), float(v[1])], "bbox": None if b is None else [int(c) for c in b]}
            for v, b in zip(self.velocities, self.bboxes)
        ]
        return json.dumps({"labels": self.labels.tolist(), "objects": objects, "t_ref": self.t_ref})

    @classmethod
    def from_json(cls, text):
        d = json.loads(text)
        return cls(
            np.asarray(d["labels"], dtype=np.int64),
            [tuple(o["v"]) for o in d["objects"]],
            [None if o["bbox"] is None else tuple(o["bbox"]) for o in d["objects"]],
            float(d.get("t_ref", 0.0)),
        )


def _edge_bbox(obj, geometry, t):
    pts, _ = obj.edge_points(np.linspace(0.0, 1.0, 4096, endpoint=False))
    pts = pts + np.asarray(obj.position) + t * np.asarray(obj.velocity)
    q = np.rint(pts)
    inside = geometry.contains(q[:, 0], q[:, 1])
    if not inside.any():
        return None
    q = q[inside]
    return (int(q[:, 0].min()), int(q[:, 1].min()), int(q[:, 0].max()), int(q[:, 1].max()))


def generate(spec):
    """Sample a labeled slice; identical spec and seed give identical output."""
    rng = np.random.default_rng(spec.seed)
    g = spec.geometry
    cols = []
    for label, obj in enumerate(spec.objects, start=1):
        if not any(_edge_bbox(obj, g, t) is not None for t in np.linspace(0, spec.duration, 33)):
            raise SpecError(f"object {label} never intersects the sensor")
        n = int(round(obj.event_density * spec.duration * obj.edge_length))
        t = rng.uniform(0.0, spec.duration, n)
        pts, nrm = obj.edge_points(rng.uniform(0.0, 1.0, n))
        v = np.asarray(obj.velocity, dtype=np.float64)
        # edges sliding along themselves count as positive; the tolerance
        # absorbs rounding in the rotated normals
        pol = np.where(nrm @ v >= -1e-9 * (np.hypot(*v) + 1.0), 1, -1)
        xy = pts + np.asarray(obj.position) + t[:, None] * v[None, :]
        if spec.quantize:
            xy = np.rint(xy)
        cols.append((t, xy[:, 0], xy[:, 1], pol, np.full(n, label)))
    n_noise = int(round(spec.noise_rate * spec.duration))
    if n_noise:
        cols.append((
            rng.uniform(0.0, spec.duration, n_noise),
            rng.integers(0, g.width, n_noise).astype(np.float64),
            rng.integers(0, g.height, n_noise).astype(np.float64),
            rng.choice([-1, 1], n_noise),
            np.zeros(n_noise, dtype=np.int64),
        ))
    t, x, y, p, labels = (np.concatenate(c) for c in zip(*cols))
    t = np.rint(t * 1e6) / 1e6
    keep = g.contains(x, y)
    order = np.argsort(t[keep], kind="stable")
    t, x, y, p, labels = (a[keep][order] for a in (t, x, y, p, labels))
    events = EventSlice(t, x, y, p.astype(np.int8), g, t_ref=0.0)
    gt = GroundTruth(
        labels.astype(np.int64),
        [tuple(float(c) for c in o.velocity) for o in spec.objects],
        [_edge_bbox(o, g, 0.0) for o in spec.objects],
        0.0,
    )
    return events, gt
