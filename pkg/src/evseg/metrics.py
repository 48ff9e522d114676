"""Evaluation: flow warp loss, box IoU, box extraction and label accuracy."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy import ndimage

from .errors import DegenerateError, ShapeError
from .objective import Iwe, accumulate_iwe, contrast, evaluate
from .warps import DENSEFLOW, MotionModel, warp


@dataclass(frozen=True)
class Bbox:
    """Axis-aligned pixel box, corners inclusive."""

    x0: int
    y0: int
    x1: int
    y1: int

    def __post_init__(self):
        if self.x1 < self.x0 or self.y1 < self.y0:
            raise ValueError(f"inverted box {self}")

    @property
    def area(self):
        return (self.x1 - self.x0 + 1) * (self.y1 - self.y0 + 1)

    def as_tuple(self):
        return (self.x0, self.y0, self.x1, self.y1)

    def shifted(self, dx, dy):
        return Bbox(self.x0 + dx, self.y0 + dy, self.x1 + dx, self.y1 + dy)


@dataclass(frozen=True)
class DenoiseConfig:
    sigma: float = 2.0
    mask_threshold: float = 0.1  # fraction of the blurred maximum

    def __post_init__(self):
        if not self.sigma > 0:
            raise ValueError("sigma must be positive")
        if not 0 < self.mask_threshold < 1:
            raise ValueError("mask_threshold must lie in (0, 1)")


def _as_bbox(b):
    if b is None or isinstance(b, Bbox):
        return b
    return Bbox(*(int(c) for c in b))


def _zero_like(model):
    if model.kind == DENSEFLOW:
        return MotionModel(DENSEFLOW, flow=np.zeros_like(model.flow))
    return model.with_params(np.zeros_like(model.params))


def fwl(events, model, epsilon=1.0, use_polarity=False):
    """Flow warp loss: IWE variance under ``model`` over the unwarped variance."""
    if len(events) == 0:
        raise ValueError("fwl needs at least one event")
    base = evaluate(events, _zero_like(model), epsilon, use_polarity).value
    if base == 0:
        raise DegenerateError("unwarped IWE has zero variance")
    return evaluate(events, model, epsilon, use_polarity).value / base


def segmentation_fwl(events, clusters, epsilon=1.0):
    """FWL of all clustered events, each warped with its own cluster's model."""
    g = events.geometry
    warped_img = np.zeros(g.shape)
    idx = []
    for c in clusters:
        sub = events.subset(c.event_indices)
        warped_img += accumulate_iwe(warp(sub, c.model), epsilon).pixels
        idx.append(c.event_indices)
    if not idx:
        return float("nan")
    sub = events.subset(np.concatenate(idx))
    base = evaluate(sub, MotionModel("translation2d"), epsilon).value
    if base == 0:
        raise DegenerateError("unwarped IWE has zero variance")
    return contrast(Iwe(warped_img, g, epsilon, False)).value / base


def iou(p, g):
    """Intersection over union of inclusive pixel boxes."""
    p, g = _as_bbox(p), _as_bbox(g)
    ix = min(p.x1, g.x1) - max(p.x0, g.x0) + 1
    iy = min(p.y1, g.y1) - max(p.y0, g.y0) + 1
    inter = max(ix, 0) * max(iy, 0)
    return inter / (p.area + g.area - inter)


def blur(image, sigma):
    # 'nearest' keeps constant images constant
    return ndimage.gaussian_filter(np.asarray(image, dtype=np.float64), sigma, mode="nearest", truncate=4.0)


def largest_component_bbox(mask):
    """Tight box of the largest 8-connected component, None for an empty mask."""
    labels, n = ndimage.label(mask, structure=np.ones((3, 3), dtype=bool))
    if n == 0:
        return None
    sizes = np.bincount(labels.ravel())[1:]
    # ties: lowest label, i.e. first in raster order
    biggest = int(np.argmax(sizes)) + 1
    ys, xs = np.nonzero(labels == biggest)
    return Bbox(int(xs.min()), int(ys.min()), int(xs.max()), int(ys.max()))


def extract_bbox(events, model, cfg=None, epsilon=1.0):
    """Box of a cluster: IWE at ``model``, Gaussian blur, relative threshold,
    largest connected component. None when no pixel survives."""
    cfg = cfg or DenoiseConfig()
    if len(events) == 0:
        raise ValueError("cannot box an empty cluster")
    img = blur(accumulate_iwe(warp(events, model), epsilon).pixels, cfg.sigma)
    peak = img.max()
    if not peak > 0:
        return None
    return largest_component_bbox(img >= cfg.mask_threshold * peak)


def match_clusters(cluster_labels, gt_labels):
    """Greedy one-to-one matching of predicted clusters to ground-truth objects
    by event overlap. Label 0 is noise on both sides and never matched.

    Returns a list of (pred_id, gt_id, overlap), largest overlap first.
    """
    pred = np.asarray(cluster_labels)
    gt = np.asarray(gt_labels)
    if pred.shape != gt.shape:
        raise ShapeError(f"{pred.size} predicted labels vs {gt.size} ground-truth labels")
    pids = [int(i) for i in np.unique(pred) if i != 0]
    gids = [int(i) for i in np.unique(gt) if i != 0]
    overlap = {(p, q): int(np.count_nonzero((pred == p) & (gt == q))) for p in pids for q in gids}
    pairs = []
    while overlap:
        (p, q), n = max(overlap.items(), key=lambda kv: (kv[1], -kv[0][0], -kv[0][1]))
        if n == 0:
            break
        pairs.append((p, q, n))
        overlap = {k: v for k, v in overlap.items() if k[0] != p and k[1] != q}
    return pairs


@dataclass
class AccuracyReport:
    overall: float
    per_cluster: list  # dicts: id, gt_id, overlap, precision, recall


def label_accuracy(cluster_labels, gt_labels):
    """Fraction of non-noise ground-truth events that land in their matched cluster."""
    pred = np.asarray(cluster_labels)
    gt = np.asarray(gt_labels)
    pairs = match_clusters(pred, gt)
    total = int(np.count_nonzero(gt != 0))
    per = []
    for p, q, n in pairs:
        per.append({
            "id": p,
            "gt_id": q,
            "overlap": n,
            "precision": n / int(np.count_nonzero(pred == p)),
            "recall": n / int(np.count_nonzero(gt == q)),
        })
    overall = sum(n for _, _, n in pairs) / total if total else 1.0
    return AccuracyReport(overall, per)


def cluster_ious(events, clusters, gt, cfg=None, epsilon=1.0):
    """IoU of each matched cluster's extracted box against its object's box."""
    pairs = match_clusters(_labels_from(clusters, len(events)), gt.labels)
    by_id = {c.cluster_id: c for c in clusters}
    out = {}
    for p, q, _ in pairs:
        gbox = gt.bboxes[q - 1]
        c = by_id[p]
        pbox = extract_bbox(events.subset(c.event_indices), c.model, cfg, epsilon)
        out[p] = 0.0 if pbox is None or gbox is None else iou(pbox, gbox)
    return out


def _labels_from(clusters, n):
    out = np.zeros(n, dtype=np.int64)
    for c in clusters:
        out[c.event_indices] = c.cluster_id
    return out


def sensitivity_sweep(events, gt, sigma_grid, threshold_grid, seg_config=None, segmentation=None):
    """Mean matched-cluster box IoU for every (sigma, mask threshold) pair.

    The segmentation does not depend on the denoising parameters, so it is
    computed once (or taken from ``segmentation``) and only the box
    extraction is repeated per cell. Rows come out in grid order.
    """
    from .segmentation import segment

    sigma_grid = list(sigma_grid)
    threshold_grid = list(threshold_grid)
    if not sigma_grid or not threshold_grid:
        raise ValueError("sweep grids must be non-empty")
    if segmentation is None:
        segmentation = segment(events, seg_config)
    rows = []
    for s in sigma_grid:
        for t in threshold_grid:
            ious = cluster_ious(events, segmentation.clusters, gt, DenoiseConfig(s, t),
                                seg_config.epsilon if seg_config else 1.0)
            rows.append((float(s), float(t), float(np.mean(list(ious.values()))) if ious else 0.0))
    return rows


def sweep_csv(rows):
    return "sigma,threshold,iou\n" + "".join(f"{s!r},{t!r},{v!r}\n" for s, t, v in rows)
