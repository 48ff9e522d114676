"""Command line entry point: synth, segment, eval, render, sweep.

Exit codes: 0 success, 2 usage, 3 bad data, 4 numerical failure.
"""

from __future__ import annotations

import argparse
import hashlib
import json
import logging
import sys
import time
from pathlib import Path

import numpy as np

from . import __version__
from .errors import DataError, DegenerateError, EvsegError, ModelError, NumericalError, SpecError
from .events import EventSlice, SensorGeometry, load_events, save_events, slice_by_duration
from .imageio import atomic_write, pgm_bytes, read_depth
from .metrics import DenoiseConfig, extract_bbox, iou, label_accuracy, match_clusters, segmentation_fwl, sensitivity_sweep, sweep_csv
from .objective import accumulate_iwe
from .optimizer import OptimizerConfig
from .segmentation import SegmentationConfig, segment
from .synth import GroundTruth, SceneSpec, generate
from .variation import ABOVE_IS_FIT, BELOW_IS_FIT, mvi, variation
from .warps import DENSEFLOW, KINDS, ROTATION3D, TRANSLATION2D, MotionModel, build_motion_field, warp

log = logging.getLogger("evseg")

EXIT_USAGE, EXIT_DATA, EXIT_NUMERICAL = 2, 3, 4


class UsageError(Exception):
    pass


def sha256(path):
    h = hashlib.sha256()
    with open(path, "rb") as fh:
        for chunk in iter(lambda: fh.read(1 << 20), b""):
            h.update(chunk)
    return h.hexdigest()


class Manifest:
    """Replay record written next to a command's outputs."""

    def __init__(self, argv, config):
        self.data = {
            "command_line": list(argv),
            "config": config,
            "inputs": {},
            "outputs": [],
            "version": __version__,
            "timings": {},
        }
        self._t = time.perf_counter()

    def add_input(self, path):
        self.data["inputs"][str(path)] = sha256(path)

    def add_output(self, path):
        self.data["outputs"].append(str(path))

    def lap(self, stage):
        now = time.perf_counter()
        self.data["timings"][stage] = self.data["timings"].get(stage, 0.0) + now - self._t
        self._t = now

    def write(self, path):
        atomic_write(path, json.dumps(self.data, indent=1, sort_keys=True) + "\n")


def _vec3(text):
    try:
        v = [float(s) for s in text.split(",")]
    except ValueError:
        raise argparse.ArgumentTypeError(f"expected a,b,c, got {text!r}") from None
    if len(v) != 3:
        raise argparse.ArgumentTypeError(f"expected three comma-separated numbers, got {text!r}")
    return v


def _float_list(text):
    try:
        return [float(s) for s in text.split(",") if s.strip()]
    except ValueError:
        raise argparse.ArgumentTypeError(f"expected comma-separated numbers, got {text!r}") from None


def _threshold(text):
    if text == "otsu":
        return text
    try:
        return float(text)
    except ValueError:
        raise argparse.ArgumentTypeError("threshold must be 'otsu' or a number") from None


def _geometry_args(p, required=True):
    p.add_argument("--width", type=int, required=required)
    p.add_argument("--height", type=int, required=required)
    p.add_argument("--fx", type=float)
    p.add_argument("--fy", type=float)
    p.add_argument("--cx", type=float)
    p.add_argument("--cy", type=float)


def _geometry(args, need_intrinsics=False):
    if need_intrinsics and (args.fx is None or args.fy is None):
        raise UsageError("this warp needs camera intrinsics (--fx and --fy)")
    kw = {k: getattr(args, k) for k in ("fx", "fy", "cx", "cy") if getattr(args, k) is not None}
    try:
        return SensorGeometry(args.width, args.height, **kw)
    except (ValueError, TypeError) as exc:
        raise UsageError(f"bad sensor geometry: {exc}") from None


def _read_json(path):
    try:
        return json.loads(Path(path).read_text())
    except json.JSONDecodeError as exc:
        raise DataError(f"{path}: invalid JSON: {exc}") from None


# -- synth --------------------------------------------------------------------

def cmd_synth(args, argv):
    try:
        text = Path(args.scene).read_text()
        d = json.loads(text)
        if args.seed is not None:
            d["seed"] = args.seed
        spec = SceneSpec.from_dict(d)
    except (OSError, json.JSONDecodeError, SpecError) as exc:
        raise UsageError(f"scene spec: {exc}") from None
    man = Manifest(argv, {"seed": spec.seed})
    man.add_input(args.scene)
    events, gt = generate(spec)
    man.lap("generate")
    save_events(events, args.out)
    atomic_write(args.gt, gt.to_json() + "\n")
    man.add_output(args.out)
    man.add_output(args.gt)
    man.lap("write")
    man.write(str(args.out) + ".manifest.json")
    print(json.dumps({"events": len(events), "objects": len(gt.velocities)}))
    return 0


# -- segment ------------------------------------------------------------------

def _segment_config(args, geometry):
    external = None
    if args.warp == DENSEFLOW:
        if args.flow_from_depth is None or args.lin_vel is None or args.ang_vel is None:
            raise UsageError("--warp denseflow needs --flow-from-depth, --lin-vel and --ang-vel")
        depth = read_depth(args.flow_from_depth, geometry)
        external = build_motion_field(depth, args.lin_vel, args.ang_vel, geometry)
    elif args.flow_from_depth is not None:
        raise UsageError("--flow-from-depth only applies to --warp denseflow")
    try:
        return SegmentationConfig(
            warp_kind=args.warp,
            epsilon=args.epsilon,
            threshold=args.threshold,
            rule=BELOW_IS_FIT if args.invert_rule else ABOVE_IS_FIT,
            optimizer=OptimizerConfig(learning_rate=args.lr, max_iters=args.max_iters),
            min_residual_fraction=args.min_residual_frac,
            max_clusters=args.max_clusters,
            external_motion=external,
        )
    except ValueError as exc:
        raise UsageError(str(exc)) from None


def _config_snapshot(cfg):
    return {
        "warp_kind": cfg.warp_kind,
        "epsilon": cfg.epsilon,
        "threshold": cfg.threshold,
        "rule": cfg.rule,
        "learning_rate": cfg.optimizer.learning_rate,
        "max_iters": cfg.optimizer.max_iters,
        "min_residual_fraction": cfg.min_residual_fraction,
        "max_clusters": cfg.max_clusters,
        "external_motion": cfg.external_motion is not None,
        "denoise_sigma": cfg.denoise.sigma,
        "denoise_threshold": cfg.denoise.mask_threshold,
    }


def _write_slice(out, sub, res, cfg, index):
    """Per-slice outputs: clusters.json, one IWE image per cluster, the MVI."""
    out.mkdir(parents=True, exist_ok=True)
    doc = res.to_dict()
    doc.update({
        "slice": index,
        "t_ref": sub.t_ref,
        "n_events": len(sub),
        "geometry": {"width": sub.geometry.width, "height": sub.geometry.height,
                     "fx": sub.geometry.fx, "fy": sub.geometry.fy,
                     "cx": sub.geometry.cx, "cy": sub.geometry.cy},
        "bbox_kind": "box",
    })
    written = [out / "clusters.json"]
    atomic_write(out / "clusters.json", json.dumps(doc, indent=1) + "\n")
    for c in res.clusters:
        img = accumulate_iwe(warp(sub.subset(c.event_indices), c.model), cfg.epsilon).pixels
        path = out / f"iwe_cluster_{c.cluster_id}.pgm"
        try:
            atomic_write(path, pgm_bytes(img))
            written.append(path)
        except DegenerateError:
            log.warning("slice %d cluster %d: constant IWE, image skipped", index, c.cluster_id)
    # MVI of the whole slice under the dominant motion
    if res.clusters:
        field = variation(sub, res.clusters[0].model, cfg.epsilon)
        try:
            atomic_write(out / "mvi.pgm", pgm_bytes(mvi(field)))
            written.append(out / "mvi.pgm")
        except DegenerateError:
            log.warning("slice %d: constant MVI, image skipped", index)
    return written


def cmd_segment(args, argv):
    need_k = args.warp in (ROTATION3D, DENSEFLOW)
    geometry = _geometry(args, need_intrinsics=need_k)
    if not args.slice_ms > 0:
        raise UsageError("--slice-ms must be positive")
    cfg = _segment_config(args, geometry)
    man = Manifest(argv, _config_snapshot(cfg) | {"slice_ms": args.slice_ms})
    man.add_input(args.events)
    if args.flow_from_depth:
        man.add_input(args.flow_from_depth)
    events = load_events(args.events, geometry)
    man.lap("load")
    out_dir = Path(args.out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    summary, failed = [], None
    for i, sub in enumerate(slice_by_duration(events, args.slice_ms / 1000.0)):
        try:
            res = segment(sub, cfg)
        except NumericalError as exc:
            # nothing usable from this slice; flag it and keep going
            failed = failed or exc
            summary.append({"slice": i, "n_events": len(sub), "clusters": 0, "valid": False, "error": str(exc)})
            continue
        man.lap("segment")
        for path in _write_slice(out_dir / f"slice_{i:04d}", sub, res, cfg, i):
            man.add_output(path)
        man.lap("write")
        if not res.valid:
            failed = failed or NumericalError(res.error)
        summary.append({"slice": i, "n_events": len(sub), "clusters": len(res.clusters),
                        "stop_reason": res.stop_reason, "valid": res.valid})
    man.data["slices"] = summary
    man.write(out_dir / "manifest.json")
    print(json.dumps({"slices": summary}))
    if failed is not None:
        print(f"evseg: numerical failure: {failed}", file=sys.stderr)
        return EXIT_NUMERICAL
    return 0


# -- eval ---------------------------------------------------------------------

def _models_from(doc):
    out = []
    for c in doc["clusters"]:
        if c["warp_kind"] == DENSEFLOW:
            raise DataError("denseflow clusters cannot be rebuilt from clusters.json")
        out.append((int(c["id"]), MotionModel(c["warp_kind"], c["theta"]),
                    np.asarray(c["event_indices"], dtype=np.int64)))
    return out


class _Cluster:
    # the minimal shape metrics.segmentation_fwl needs
    def __init__(self, cid, model, idx):
        self.cluster_id, self.model, self.event_indices = cid, model, idx


def _geometry_from(args, doc):
    if args.width is not None and args.height is not None:
        return _geometry(args)
    g = doc.get("geometry")
    if not g:
        raise UsageError("sensor size unknown: pass --width and --height")
    return SensorGeometry(**g)


def cmd_eval(args, argv):
    pred = _read_json(args.pred)
    gt = GroundTruth.from_json(Path(args.gt).read_text())
    geometry = _geometry_from(args, pred)
    events = load_events(args.events, geometry).with_t_ref(gt.t_ref)
    n = len(events)
    if len(gt.labels) != n or pred.get("n_events", n) != n:
        raise DataError(f"event counts disagree: events {n}, gt {len(gt.labels)}, pred {pred.get('n_events')}")
    try:
        clusters = [_Cluster(*m) for m in _models_from(pred)]
    except (KeyError, TypeError) as exc:
        raise DataError(f"{args.pred}: malformed clusters file ({exc})") from None
    labels = np.zeros(n, dtype=np.int64)
    for c in clusters:
        if len(c.event_indices) and (c.event_indices.min() < 0 or c.event_indices.max() >= n):
            raise DataError(f"cluster {c.cluster_id} indexes past the event list")
        labels[c.event_indices] = c.cluster_id
    acc = label_accuracy(labels, gt.labels)
    recall = {r["id"]: r["recall"] for r in acc.per_cluster}
    by_id = {c.cluster_id: c for c in clusters}
    per = []
    for p, q, _ in match_clusters(labels, gt.labels):
        c = by_id[p]
        pbox = extract_bbox(events.subset(c.event_indices), c.model)
        gbox = gt.bboxes[q - 1]
        per.append({"id": p, "gt_id": q, "iou": 0.0 if pbox is None or gbox is None else iou(pbox, gbox),
                    "accuracy": recall[p]})
    per.sort(key=lambda r: r["id"])
    report = {
        "fwl": segmentation_fwl(events, clusters) if clusters else None,
        "per_cluster": per,
        "overall_accuracy": acc.overall,
        "iou_kind": "bounding-box",
    }
    print(json.dumps(report, indent=1))
    return 0


# -- render -------------------------------------------------------------------

def _parse_model(text, kind, cluster_id):
    path = Path(text)
    if path.suffix == ".json" or path.exists():
        doc = _read_json(path)
        if "clusters" in doc:
            match = [c for c in doc["clusters"] if int(c["id"]) == cluster_id]
            if not match:
                raise DataError(f"{text}: no cluster {cluster_id}")
            doc = match[0]
        kind = doc.get("warp_kind", kind)
        theta = doc["theta"]
    else:
        try:
            theta = [float(s) for s in text.split(",")]
        except ValueError:
            raise UsageError(f"--model must be comma-separated numbers or a JSON file, got {text!r}") from None
    return MotionModel(kind, theta)


def cmd_render(args, argv):
    geometry = _geometry(args, need_intrinsics=args.warp == ROTATION3D)
    model = _parse_model(args.model, args.warp, args.cluster)
    events = load_events(args.events, geometry)
    if args.t_ref is not None:
        events = events.with_t_ref(args.t_ref)
    if args.what == "iwe":
        img = accumulate_iwe(warp(events, model), args.epsilon).pixels
    else:
        img = mvi(variation(events, model, args.epsilon))
    try:
        data = pgm_bytes(img)
    except DegenerateError as exc:
        # a flat image is a property of the input, not a solver failure
        raise DataError(str(exc)) from None
    atomic_write(args.out, data)
    return 0


# -- sweep --------------------------------------------------------------------

def cmd_sweep(args, argv):
    if not args.sigmas or not args.thresholds:
        raise UsageError("--sigmas and --thresholds must be non-empty")
    try:
        for s in args.sigmas:
            for t in args.thresholds:
                DenoiseConfig(s, t)
    except ValueError as exc:
        raise UsageError(str(exc)) from None
    geometry = _geometry(args)
    gt = GroundTruth.from_json(Path(args.gt).read_text())
    events = load_events(args.events, geometry).with_t_ref(gt.t_ref)
    if len(gt.labels) != len(events):
        raise DataError(f"{len(events)} events but {len(gt.labels)} ground-truth labels")
    man = Manifest(argv, {"sigmas": args.sigmas, "thresholds": args.thresholds})
    man.add_input(args.events)
    man.add_input(args.gt)
    cfg = SegmentationConfig(epsilon=args.epsilon)
    rows = sensitivity_sweep(events, gt, args.sigmas, args.thresholds, cfg)
    man.lap("sweep")
    atomic_write(args.out, sweep_csv(rows))
    man.add_output(args.out)
    man.write(str(args.out) + ".manifest.json")
    return 0


def build_parser():
    ap = argparse.ArgumentParser(prog="evseg", description="Event-based motion segmentation by contrast maximization.")
    ap.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    ap.add_argument("-v", "--verbose", action="store_true")
    sub = ap.add_subparsers(dest="command", required=True)

    p = sub.add_parser("synth", help="generate a labeled synthetic event file")
    p.add_argument("--scene", required=True, help="scene spec (JSON)")
    p.add_argument("--out", required=True)
    p.add_argument("--gt", required=True)
    p.add_argument("--seed", type=int)
    p.set_defaults(func=cmd_synth)

    p = sub.add_parser("segment", help="segment an event file slice by slice")
    p.add_argument("--events", required=True)
    _geometry_args(p)
    p.add_argument("--warp", choices=KINDS, default=TRANSLATION2D)
    p.add_argument("--flow-from-depth", metavar="DEPTH",
                   help="depth map: .pgm is 16-bit millimeters, anything else raw float32 meters")
    p.add_argument("--lin-vel", type=_vec3, metavar="A,B,C",
                   help="camera linear velocity in m/s; write --lin-vel=-1,0,0 when the first value is negative")
    p.add_argument("--ang-vel", type=_vec3, metavar="A,B,C", help="camera angular velocity in rad/s")
    p.add_argument("--slice-ms", type=float, default=10.0)
    p.add_argument("--epsilon", type=float, default=1.0)
    p.add_argument("--threshold", type=_threshold, default="otsu")
    p.add_argument("--invert-rule", action="store_true", help="low variation is the fit class")
    p.add_argument("--min-residual-frac", type=float, default=0.05)
    p.add_argument("--max-clusters", type=int, default=8)
    p.add_argument("--lr", type=float, default=0.5)
    p.add_argument("--max-iters", type=int, default=OptimizerConfig.max_iters)
    p.add_argument("--out-dir", required=True)
    p.set_defaults(func=cmd_segment)

    p = sub.add_parser("eval", help="score a clusters.json against ground truth")
    p.add_argument("--pred", required=True)
    p.add_argument("--gt", required=True)
    p.add_argument("--events", required=True)
    _geometry_args(p, required=False)
    p.set_defaults(func=cmd_eval)

    p = sub.add_parser("render", help="write the IWE or MVI under a motion as PGM")
    p.add_argument("--events", required=True)
    _geometry_args(p)
    p.add_argument("--model", required=True, help="theta as a,b[,c] or a JSON file")
    p.add_argument("--warp", choices=(TRANSLATION2D, ROTATION3D), default=TRANSLATION2D)
    p.add_argument("--cluster", type=int, default=1, help="cluster id when --model is a clusters.json")
    p.add_argument("--t-ref", type=float)
    p.add_argument("--what", choices=("iwe", "mvi"), default="iwe")
    p.add_argument("--epsilon", type=float, default=1.0)
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_render)

    p = sub.add_parser("sweep", help="box IoU over a grid of blur sigmas and mask thresholds")
    p.add_argument("--events", required=True)
    p.add_argument("--gt", required=True)
    _geometry_args(p)
    p.add_argument("--sigmas", type=_float_list, default=[1.0, 2.0, 3.0])
    p.add_argument("--thresholds", type=_float_list, default=[0.05, 0.1, 0.2, 0.3])
    p.add_argument("--epsilon", type=float, default=1.0)
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_sweep)
    return ap


def main(argv=None):
    argv = sys.argv[1:] if argv is None else list(argv)
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(name)s: %(message)s")
    try:
        return args.func(args, ["evseg", *argv])
    except UsageError as exc:
        print(f"evseg: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except (DataError, ModelError, OSError) as exc:
        print(f"evseg: {exc}", file=sys.stderr)
        return EXIT_DATA
    except NumericalError as exc:
        print(f"evseg: numerical failure: {exc}", file=sys.stderr)
        return EXIT_NUMERICAL


if __name__ == "__main__":
    sys.exit(main())
