"""Greedy iterative motion segmentation.

Each round fits the dominant motion of the remaining events by contrast
maximization, keeps the events whose first-variation magnitude clears the
threshold as a new cluster, and hands the rest to the next round.
"""

from __future__ import annotations

import json
import logging
from dataclasses import dataclass, field

import numpy as np

from . import metrics
from .errors import EmptyInputError, EvsegError
from .objective import evaluate
from .optimizer import OptimizerConfig, maximize
from .variation import ABOVE_IS_FIT, otsu_threshold, split, variation
from .warps import DENSEFLOW, TRANSLATION2D, MotionModel

log = logging.getLogger(__name__)

SCHEMA_VERSION = 1


@dataclass(frozen=True)
class SegmentationConfig:
    warp_kind: str = TRANSLATION2D
    epsilon: float = 1.0
    use_polarity: bool = False
    threshold: object = "otsu"  # "otsu" or a float in raw magnitude units
    rule: str = ABOVE_IS_FIT
    optimizer: OptimizerConfig = field(default_factory=OptimizerConfig)
    min_residual_fraction: float = 0.05
    max_clusters: int = 8
    external_motion: MotionModel | None = None  # replaces the first fit
    denoise: metrics.DenoiseConfig | None = field(default_factory=metrics.DenoiseConfig)

    def __post_init__(self):
        if not 0 <= self.min_residual_fraction < 1:
            raise ValueError("min_residual_fraction must lie in [0, 1)")
        if self.max_clusters < 1:
            raise ValueError("max_clusters must be at least 1")
        if self.threshold != "otsu" and not np.isfinite(float(self.threshold)):
            raise ValueError("threshold must be 'otsu' or a finite number")
        if self.warp_kind == DENSEFLOW and self.external_motion is None:
            raise ValueError("denseflow segmentation needs an external motion")


@dataclass(eq=False)
class ClusterResult:
    cluster_id: int
    model: MotionModel
    event_indices: np.ndarray
    contrast_before: float
    contrast_after: float
    fwl: float
    threshold: float
    bbox: tuple | None = None

    @property
    def theta_star(self):
        return self.model.params

    def to_dict(self):
        return {
            "id": self.cluster_id,
            "theta": [float(v) for v in self.model.params],
            "warp_kind": self.model.kind,
            "n_events": int(len(self.event_indices)),
            "event_indices": [int(i) for i in self.event_indices],
            "fwl": float(self.fwl),
            "contrast_before": float(self.contrast_before),
            "contrast_after": float(self.contrast_after),
            "threshold": float(self.threshold),
            "bbox": None if self.bbox is None else list(self.bbox.as_tuple()),
        }


@dataclass(eq=False)
class SegmentationResult:
    clusters: list
    noise: np.ndarray
    stop_reason: str
    valid: bool = True
    error: str | None = None

    def __iter__(self):
        # allows ``clusters, noise = segment(...)``
        return iter((self.clusters, self.noise))

    def labels(self, n_events):
        """Per-event cluster id, 0 for noise."""
        out = np.zeros(n_events, dtype=np.int64)
        for c in self.clusters:
            out[c.event_indices] = c.cluster_id
        return out

    def to_dict(self):
        return {
            "version": SCHEMA_VERSION,
            "clusters": [c.to_dict() for c in self.clusters],
            "noise_indices": [int(i) for i in self.noise],
            "stop_reason": self.stop_reason,
            "valid": self.valid,
            "error": self.error,
        }

    def to_json(self):
        return json.dumps(self.to_dict(), indent=1)


def _fit_motion(events, config, first):
    if first and config.external_motion is not None:
        return config.external_motion
    if len(events) == 0:
        raise EmptyInputError("nothing to fit")
    # a depth-driven flow cannot be optimized; later rounds fit feature flow
    kind = TRANSLATION2D if config.warp_kind == DENSEFLOW else config.warp_kind
    res = maximize(events, kind, None, config.optimizer, config.epsilon, config.use_polarity)
    return MotionModel(kind, res.theta_star)


def segment(events, config=None):
    """Split ``events`` into motion clusters in decreasing order of dominance.

    Returns a ``SegmentationResult``; unpacking it yields ``(clusters, noise)``.
    Errors raised mid-way are caught after the first round: the clusters found
    so far are returned with ``valid=False``.
    """
    config = config or SegmentationConfig()
    n_total = len(events)
    if n_total == 0:
        raise EmptyInputError("cannot segment an empty slice")
    residual = np.arange(n_total)
    clusters = []
    stop = "max_clusters"
    try:
        while len(clusters) < config.max_clusters:
            if len(residual) < max(config.min_residual_fraction * n_total, 1):
                stop = "residual_small"
                break
            sub = events.subset(residual)
            model = _fit_motion(sub, config, first=not clusters)
            field_ = variation(sub, model, config.epsilon, config.use_polarity)
            if config.threshold == "otsu":
                if len(sub) < 2 or field_.magnitudes.min() == field_.magnitudes.max():
                    stop = "degenerate_variation"
                    break
                T = otsu_threshold(field_)
            else:
                T = float(config.threshold)
            parts = split(field_, T, config.rule)
            if len(parts.fit_indices) == 0:
                stop = "no_progress"
                break
            members = residual[parts.fit_indices]
            clusters.append(_describe_cluster(events, members, model, config, len(clusters) + 1, T))
            log.info("cluster %d: %d events, theta=%s", len(clusters), len(members), model.params)
            residual = residual[parts.residual_indices]
    except EvsegError as exc:
        if not clusters:
            raise
        log.warning("segmentation aborted after %d clusters: %s", len(clusters), exc)
        return SegmentationResult(clusters, residual, "error", valid=False, error=str(exc))
    return SegmentationResult(clusters, residual, stop)


def _describe_cluster(events, members, model, config, cluster_id, threshold):
    sub = events.subset(members)
    before = evaluate(sub, model.with_params(np.zeros_like(model.params)) if model.kind != DENSEFLOW
                      else MotionModel(DENSEFLOW, flow=np.zeros_like(model.flow)),
                      config.epsilon, config.use_polarity).value
    after = evaluate(sub, model, config.epsilon, config.use_polarity).value
    fwl = after / before if before > 0 else float("nan")
    bbox = metrics.extract_bbox(sub, model, config.denoise, config.epsilon) if config.denoise else None
    return ClusterResult(cluster_id, model, members, before, after, fwl, threshold, bbox)
