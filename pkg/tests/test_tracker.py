import numpy as np
import pytest

from crystalseg.errors import ShapeMismatch
from crystalseg.flowfield import compute_flow
from crystalseg.metrics import iou, panoptic_quality
from crystalseg.tracker import TrackerParams, euler_track
from reference import disk_mask


def _disks(shape, specs):
    lab = np.zeros(shape, np.int32)
    for i, (cy, cx, r) in enumerate(specs, 1):
        lab[disk_mask(shape, (cy, cx), r)] = i
    return lab


class TestTrackerParams:
    def test_defaults(self):
        p = TrackerParams()
        assert (p.n_steps, p.step_size, p.cluster_radius) == (200, 1.0, 2.5)
        assert (p.min_instance_px, p.h) == (15, 0.0)

    @pytest.mark.parametrize(
        "kwargs",
        [
            {"n_steps": 0},
            {"step_size": 0.0},
            {"step_size": -1.0},
            {"cluster_radius": 0.0},
            {"min_instance_px": 0},
            {"h": 1.0},
            {"h": -0.1},
        ],
    )
    def test_rejects_bad_fields(self, kwargs):
        with pytest.raises(ValueError):
            TrackerParams(**kwargs)


class TestEulerTrack:
    def test_empty_foreground(self):
        flow = np.zeros((2, 16, 16), np.float32)
        fg = np.zeros((16, 16), np.float32)
        out = euler_track(flow, fg)
        assert out.shape == (16, 16)
        assert not out.any()

    def test_shape_mismatch(self):
        with pytest.raises(ShapeMismatch):
            euler_track(np.zeros((2, 8, 8), np.float32), np.zeros((8, 9), np.float32))
        with pytest.raises(ShapeMismatch):
            euler_track(np.zeros((3, 8, 8), np.float32), np.zeros((8, 8), np.float32))

    def test_one_disk_roundtrip(self):
        lab = _disks((64, 64), [(32, 32, 20)])
        pred = euler_track(*compute_flow(lab))
        assert pred.max() == 1
        assert iou(pred == 1, lab == 1) >= 0.95

    def test_five_disks_bijective(self):
        lab = _disks(
            (200, 200),
            [(35, 35, 22), (35, 160, 22), (100, 100, 22), (165, 40, 22), (160, 165, 22)],
        )
        pred = euler_track(*compute_flow(lab))
        assert pred.max() == 5
        pq, match = panoptic_quality(lab, pred)
        assert len(match.tp) == 5 and not match.fp and not match.fn
        assert min(v for _, _, v in match.tp) >= 0.9

    def test_ids_are_canonical_raster_order(self):
        lab = _disks((90, 90), [(70, 20, 10), (20, 70, 10), (45, 45, 10)])
        pred = euler_track(*compute_flow(lab))
        ids = np.unique(pred)
        assert ids.tolist() == [0, 1, 2, 3]
        anchors = []
        for i in (1, 2, 3):
            ys, xs = np.nonzero(pred == i)
            k = np.lexsort((xs, ys))[0]
            anchors.append((ys[k], xs[k]))
        assert anchors == sorted(anchors)

    def test_h_monotonicity(self):
        lab = _disks((80, 80), [(25, 25, 14), (55, 55, 14)])
        flow, fg = compute_flow(lab)
        fg = fg * 0.6
        fg[lab == 1] = 0.3
        prev = None
        for h in (0.0, 0.25, 0.45):
            out = euler_track(flow, fg, TrackerParams(h=h))
            cur = out > 0
            if prev is not None:
                assert not (cur & ~prev).any()
            prev = cur

    def test_min_instance_px_filters_small_blobs(self):
        lab = np.zeros((60, 60), np.int32)
        lab[disk_mask((60, 60), (30, 30), 15)] = 1
        lab[5:8, 5:9] = 2
        flow, fg = compute_flow(lab)
        default = euler_track(flow, fg)
        assert default.max() == 1
        keep_all = euler_track(flow, fg, TrackerParams(min_instance_px=1))
        assert keep_all.max() >= 2

    def test_filtered_pixels_become_background(self):
        lab = np.zeros((40, 40), np.int32)
        lab[10:13, 10:13] = 1
        flow, fg = compute_flow(lab)
        out = euler_track(flow, fg, TrackerParams(min_instance_px=50))
        assert not out.any()

    def test_deterministic(self):
        rng = np.random.default_rng(5)
        flow = rng.normal(size=(2, 50, 50)).astype(np.float32)
        mag = np.hypot(flow[0], flow[1])
        flow /= np.maximum(mag, 1e-9)
        fg = (rng.random((50, 50)) < 0.5).astype(np.float32)
        a = euler_track(flow, fg)
        b = euler_track(flow, fg)
        assert np.array_equal(a, b)

    def test_output_dtype_and_background(self):
        lab = _disks((64, 64), [(32, 32, 20)])
        flow, fg = compute_flow(lab)
        pred = euler_track(flow, fg)
        assert pred.dtype.kind == "i"
        assert (pred[fg == 0] == 0).all()

    def test_cluster_radius_merges_neighbor_endpoints(self):
        flow = np.zeros((2, 30, 30), np.float32)
        fg = np.zeros((30, 30), np.float32)
        fg[10:14, 10:18] = 1.0
        merged = euler_track(flow, fg, TrackerParams(min_instance_px=1))
        assert merged.max() == 1
        split = euler_track(
            flow, fg, TrackerParams(min_instance_px=1, cluster_radius=0.5)
        )
        assert split.max() == fg.sum()
