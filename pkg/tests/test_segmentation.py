import json

import numpy as np
import pytest
from hypothesis import HealthCheck, given, settings
from hypothesis import strategies as st

from evseg import segmentation as seg
from evseg.errors import DegenerateError, EmptyInputError
from evseg.events import EventSlice
from evseg.optimizer import OptimizerConfig
from evseg.segmentation import SegmentationConfig, segment
from evseg.synth import ObjectSpec, SceneSpec, generate
from evseg.warps import DENSEFLOW, MotionModel, translation
from helpers import DAVIS, random_scene, two_bar_spec

FAST = OptimizerConfig(max_iters=150)


def _check_partition(res, n):
    parts = [c.event_indices for c in res.clusters] + [res.noise]
    allidx = np.concatenate(parts) if parts else np.zeros(0, int)
    assert np.array_equal(np.sort(allidx), np.arange(n))


@pytest.mark.parametrize("kw", [dict(min_residual_fraction=1.0), dict(min_residual_fraction=-0.1),
                                dict(max_clusters=0), dict(threshold=float("nan")),
                                dict(warp_kind=DENSEFLOW)])
def test_config_validation(kw):
    with pytest.raises(ValueError):
        SegmentationConfig(**kw)


@settings(max_examples=8, deadline=None, suppress_health_check=[HealthCheck.too_slow])
@given(st.integers(0, 2**16))
def test_clusters_partition_the_slice(seed):
    ev, _ = random_scene(np.random.default_rng(seed))
    res = segment(ev, SegmentationConfig(optimizer=FAST))
    _check_partition(res, len(ev))
    assert all(len(c.event_indices) > 0 for c in res.clusters)
    assert res.stop_reason in {"residual_small", "max_clusters", "no_progress", "degenerate_variation", "error"}


@pytest.fixture(scope="module")
def benchmark():
    ev, gt = generate(two_bar_spec())
    return ev, gt, segment(ev)


def test_dominant_motion_comes_first(benchmark):
    ev, gt, res = benchmark
    _check_partition(res, len(ev))
    c1, c2 = res.clusters[:2]
    assert np.linalg.norm(c1.theta_star - [100, 0]) <= 0.05 * 100
    assert np.linalg.norm(c2.theta_star - [-80, 40]) <= 0.05 * np.hypot(80, 40)
    lab = res.labels(len(ev))
    assert np.mean(lab[gt.labels == 1] == 1) > 0.9 and np.mean(lab[gt.labels == 2] == 2) > 0.9
    assert c1.fwl > 1 and c1.contrast_after > c1.contrast_before


@pytest.mark.xfail(strict=True, reason="with one object Otsu splits that object's own magnitude spread; "
                                       "about 40% of its events go on to later clusters")
def test_single_motion_with_noise_gives_one_cluster():
    bar = ObjectSpec("bar", (150, 130), (100, 0), 3000 / (0.1 * 2 * 122), length=120, thickness=2)
    ev, gt = generate(SceneSpec(DAVIS, 0.1, [bar], 0.01 * 3000 / 0.1, 0))
    res = segment(ev)
    lab = res.labels(len(ev))
    assert np.mean(lab[gt.labels == 0] == 0) >= 0.9
    assert len(res.clusters) == 1


def test_single_motion_noise_is_left_over():
    bar = ObjectSpec("bar", (150, 130), (100, 0), 3000 / (0.1 * 2 * 122), length=120, thickness=2)
    ev, gt = generate(SceneSpec(DAVIS, 0.1, [bar], 0.01 * 3000 / 0.1, 0))
    res = segment(ev)
    lab = res.labels(len(ev))
    assert np.mean(lab[gt.labels == 0] == 0) >= 0.9
    # a lone straight bar only pins the velocity across it
    assert abs(res.clusters[0].theta_star[0] - 100) <= 5


def test_threshold_above_everything_gives_no_clusters():
    ev, _ = random_scene(np.random.default_rng(1))
    res = segment(ev, SegmentationConfig(threshold=1e9, optimizer=FAST))
    assert res.clusters == [] and res.stop_reason == "no_progress"
    assert np.array_equal(res.noise, np.arange(len(ev)))


def test_tiny_threshold_takes_nearly_everything():
    ev, _ = generate(two_bar_spec(n=2000))
    res = segment(ev, SegmentationConfig(threshold=1e-12, optimizer=FAST))
    assert len(res.clusters[0].event_indices) >= 0.95 * len(ev)


def test_cluster_cap():
    ev, _ = generate(two_bar_spec(n=2000))
    res = segment(ev, SegmentationConfig(max_clusters=1, optimizer=FAST))
    assert len(res.clusters) == 1 and res.stop_reason == "max_clusters"


def test_external_motion_replaces_first_fit():
    ev, _ = generate(two_bar_spec(n=2000))
    ext = translation(100, 0)
    res = segment(ev, SegmentationConfig(external_motion=ext, max_clusters=2, optimizer=FAST))
    assert res.clusters[0].model is ext
    assert res.clusters[1].model.kind == "translation2d"


def test_denseflow_first_round_then_translation():
    ev, _ = generate(two_bar_spec(n=2000))
    flow = np.zeros(DAVIS.shape + (2,))
    flow[..., 0] = 100.0
    ext = MotionModel(DENSEFLOW, flow=flow)
    res = segment(ev, SegmentationConfig(warp_kind=DENSEFLOW, external_motion=ext, max_clusters=2, optimizer=FAST))
    assert res.clusters[0].model.kind == DENSEFLOW
    assert res.clusters[1].model.kind == "translation2d"
    json.loads(res.to_json())


def test_error_after_first_cluster_returns_partial(monkeypatch):
    ev, _ = generate(two_bar_spec(n=2000))
    real = seg.variation
    calls = []

    def flaky(*a, **k):
        calls.append(1)
        if len(calls) > 1:
            raise DegenerateError("boom")
        return real(*a, **k)

    monkeypatch.setattr(seg, "variation", flaky)
    res = segment(ev, SegmentationConfig(optimizer=FAST))
    assert not res.valid and res.stop_reason == "error" and "boom" in res.error
    assert len(res.clusters) == 1
    _check_partition(res, len(ev))


def test_empty_slice_rejected():
    with pytest.raises(EmptyInputError):
        segment(EventSlice([], [], [], [], DAVIS))


def test_result_serialization(benchmark):
    ev, _, res = benchmark
    clusters, noise = res
    d = json.loads(res.to_json())
    assert d["version"] == 1 and len(d["clusters"]) == len(clusters)
    assert d["clusters"][0]["id"] == 1 and d["clusters"][0]["warp_kind"] == "translation2d"
    assert sorted(sum((c["event_indices"] for c in d["clusters"]), []) + d["noise_indices"]) == list(range(len(ev)))
    assert len(d["clusters"][0]["bbox"]) == 4
