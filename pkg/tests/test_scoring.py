import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from mvlabel.geometry import PointCloud
from mvlabel.labelmap import Detection2D
from mvlabel.mvpdist import TopKSelection
from mvlabel.scoring import box_iou, combine_scores, nms_keep, nms_proposals, projected_bbox, score_mask
from mvlabel.visibility import ProposalSet, point_visibility

from conftest import flat_depth, identity_frame


class TestNMS:
    def test_duplicate_removed(self):
        props = ProposalSet(([0, 1, 2], [0, 1, 2]), 5, [0.8, 0.9])
        assert nms_keep(props, 0.5) == [1]
        assert nms_proposals(props, 0.5).confidences.tolist() == [0.9]

    def test_disjoint_kept(self):
        props = ProposalSet(([0, 1], [2, 3]), 5, [0.8, 0.9])
        for t in (0.01, 0.5, 1.0):
            assert sorted(nms_keep(props, t)) == [0, 1]

    def test_threshold_semantics(self):
        # |A & B| = 6, |A | B| = 10 -> IoU 0.6
        a = list(range(8))
        b = list(range(6)) + [8, 9]
        props = ProposalSet((a, b), 10, [0.9, 0.4])
        assert nms_keep(props, 0.5) == [0]
        assert nms_keep(props, 0.6) == [0]
        assert nms_keep(props, 0.7) == [0, 1]

    @settings(max_examples=30, deadline=None)
    @given(st.integers(0, 10_000))
    def test_order_independent(self, seed):
        rng = np.random.default_rng(seed)
        masks = [rng.choice(30, size=int(rng.integers(1, 15)), replace=False) for _ in range(8)]
        conf = rng.permutation(8) / 10.0 + 0.05
        props = ProposalSet(tuple(masks), 30, conf)
        perm = rng.permutation(8)
        shuffled = ProposalSet(tuple(masks[i] for i in perm), 30, conf[perm])
        kept = [masks[i].tolist() for i in nms_keep(props, 0.3)]
        kept2 = [masks[perm[i]].tolist() for i in nms_keep(shuffled, 0.3)]
        assert sorted(map(sorted, kept)) == sorted(map(sorted, kept2))

    def test_bad_threshold(self):
        with pytest.raises(ValueError):
            nms_keep(ProposalSet(([0],), 1), 0.0)


class TestBoxIoU:
    def test_identical(self):
        assert box_iou((1, 2, 5, 9), (1, 2, 5, 9)) == 1.0

    def test_disjoint(self):
        assert box_iou((0, 0, 1, 1), (2, 2, 3, 3)) == 0.0

    def test_half_overlap(self):
        assert box_iou((0, 0, 10, 10), (5, 0, 15, 10)) == pytest.approx(1 / 3, abs=1e-15)

    def test_degenerate(self):
        assert box_iou((5, 5, 5, 5), (0, 0, 10, 10)) == 0.0
        assert box_iou((5, 5, 5, 5), (5, 5, 5, 5)) == 0.0


def scene(pts):
    cloud = PointCloud.from_xyz([[x, y, 1.0] for x, y in pts])
    frames = [identity_frame(0, 64, 64), identity_frame(1, 64, 64)]
    proj, pv = point_visibility(cloud, frames, [flat_depth(64, 64, 1.0)] * 2)
    return proj, pv, ProposalSet((np.arange(len(pts)),), len(pts))


class TestProjectedBBox:
    def test_envelope(self):
        proj, pv, props = scene([(10, 10), (20, 30), (15.2, 12.4)])
        assert projected_bbox(0, 0, proj, pv, props) == (10, 10, 20, 30)

    def test_single_point(self):
        proj, pv, props = scene([(5, 5)])
        assert projected_bbox(0, 0, proj, pv, props) == (5, 5, 5, 5)

    def test_none_visible(self):
        proj, pv, props = scene([(100, 100)])
        assert projected_bbox(0, 0, proj, pv, props) is None


class TestScoreMask:
    def test_perfect_alignment(self):
        proj, pv, props = scene([(10, 10), (20, 30)])
        dets = [[Detection2D((10, 10, 20, 30), 1), Detection2D((0, 0, 5, 5), 2)], []]
        pred = score_mask(0, TopKSelection((0,)), dets, proj, pv, props, 0.8, class_id=1, prompt="x")
        assert pred.s_iou == 1.0
        assert pred.score == pytest.approx(0.8, abs=1e-12)

    def test_mean_over_frames(self):
        proj, pv, props = scene([(0, 0), (10, 10)])
        dets = [[Detection2D((0, 0, 10, 10), 1)], [Detection2D((0, 0, 10, 5), 1)]]
        pred = score_mask(0, TopKSelection((0, 1)), dets, proj, pv, props, 1.0, class_id=1)
        assert pred.s_iou == 0.75

    def test_frame_without_detections_contributes_zero(self):
        proj, pv, props = scene([(0, 0), (10, 10)])
        dets = [[Detection2D((0, 0, 10, 10), 1)], []]
        assert score_mask(0, TopKSelection((0, 1)), dets, proj, pv, props, 1.0, class_id=1).s_iou == 0.5

    def test_empty_selection_unlabeled(self):
        proj, pv, props = scene([(0, 0)])
        pred = score_mask(0, TopKSelection(()), [[], []], proj, pv, props, 0.0, class_id=None)
        assert pred.score == 0.0 and not pred.labeled


@settings(max_examples=200)
@given(st.lists(st.floats(0, 1), min_size=1, max_size=40), st.floats(0, 1))
def test_score_bounds(ious, s_class):
    p = combine_scores(0, 1, s_class, ious)
    assert abs(p.score - p.s_iou * p.s_class) <= 1e-12
    assert 0 <= p.score <= min(p.s_iou, p.s_class) + 1e-15 <= 1 + 1e-15
