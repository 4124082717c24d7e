"""Proposal NMS and instance confidence scoring."""

from __future__ import annotations

from dataclasses import dataclass
from typing import List, Optional, Sequence

import numpy as np

from .geometry import Projection
from .labelmap import Detection2D
from .mvpdist import TopKSelection
from .visibility import PointVisibility, ProposalSet, pixel_round

DEFAULT_NMS_IOU = 0.5


@dataclass(frozen=True)
class InstancePrediction:
    proposal_id: int
    class_id: Optional[int]
    prompt: Optional[str]
    s_class: float
    s_iou: float
    score: float
    point_indices: Optional[np.ndarray] = None

    @property
    def labeled(self) -> bool:
        return self.class_id is not None

    def to_dict(self, with_points: bool = True) -> dict:
        out = {
            "proposal_id": int(self.proposal_id),
            "class_id": None if self.class_id is None else int(self.class_id),
            "prompt": self.prompt,
            "s_class": float(self.s_class),
            "s_iou": float(self.s_iou),
            "score": float(self.score),
        }
        if with_points and self.point_indices is not None:
            out["point_indices"] = [int(i) for i in self.point_indices]
        return out


def mask_iou_matrix(props: ProposalSet) -> np.ndarray:
    """Pairwise point-set IoU between all proposals."""
    M = props.matrix
    inter = np.asarray((M @ M.T).todense())
    c = props.counts.astype(np.float64)
    union = c[:, None] + c[None, :] - inter
    return inter / union


def nms_keep(props: ProposalSet, iou_threshold: float = DEFAULT_NMS_IOU) -> List[int]:
    """Indices surviving greedy NMS, in descending confidence order.

    Equal confidences are visited in index order.
    """
    if not 0 < iou_threshold <= 1:
        raise ValueError("iou_threshold must be in (0, 1]")
    if len(props) == 0:
        return []
    iou = mask_iou_matrix(props)
    order = np.lexsort((np.arange(len(props)), -props.confidences))
    keep: List[int] = []
    for j in order:
        if all(iou[j, k] < iou_threshold for k in keep):
            keep.append(int(j))
    return keep


def nms_proposals(props: ProposalSet, iou_threshold: float = DEFAULT_NMS_IOU) -> ProposalSet:
    return props.subset(nms_keep(props, iou_threshold))


def bbox_of(pixel_x: np.ndarray, pixel_y: np.ndarray, visible: np.ndarray):
    """Envelope ``(u_min, v_min, u_max, v_max)`` of the rounded visible pixels."""
    if not np.any(visible):
        return None
    u = pixel_round(pixel_x[visible])
    v = pixel_round(pixel_y[visible])
    return (float(u.min()), float(v.min()), float(u.max()), float(v.max()))


def projected_bbox(proposal_id: int, frame_id: int, projections: Projection,
                   pv: PointVisibility, props: ProposalSet):
    mask = props.masks[proposal_id]
    vis = pv.in_frame[frame_id, mask] & pv.unoccluded[frame_id, mask]
    return bbox_of(projections.pixel_x[frame_id, mask], projections.pixel_y[frame_id, mask], vis)


def box_iou(a, b) -> float:
    ax1, ay1, ax2, ay2 = a
    bx1, by1, bx2, by2 = b
    area_a = max(0.0, ax2 - ax1) * max(0.0, ay2 - ay1)
    area_b = max(0.0, bx2 - bx1) * max(0.0, by2 - by1)
    if area_a == 0.0 or area_b == 0.0:
        return 0.0
    iw = max(0.0, min(ax2, bx2) - max(ax1, bx1))
    ih = max(0.0, min(ay2, by2) - max(ay1, by1))
    inter = iw * ih
    union = area_a + area_b - inter
    return inter / union if union > 0 else 0.0


def best_box_iou(box, detections: Sequence[Detection2D]) -> float:
    """Highest IoU between ``box`` and any detection, regardless of class."""
    if box is None:
        return 0.0
    return max((box_iou(box, d.box) for d in detections), default=0.0)


def combine_scores(proposal_id: int, class_id: Optional[int], s_class: float,
                   frame_ious: Sequence[float], prompt: Optional[str] = None,
                   point_indices=None) -> InstancePrediction:
    """Mean the per-frame IoUs and multiply by the class share.

    No frames, or no class, gives an unlabeled prediction with score 0.
    """
    s_iou = sum(frame_ious) / len(frame_ious) if len(frame_ious) else 0.0
    if not len(frame_ious) or class_id is None:
        return InstancePrediction(proposal_id, None, None, float(s_class), s_iou, 0.0, point_indices)
    return InstancePrediction(proposal_id, int(class_id), prompt, float(s_class), s_iou,
                              s_iou * s_class, point_indices)


def score_mask(proposal_id: int, sel: TopKSelection, detections: Sequence[Sequence[Detection2D]],
               projections: Projection, pv: PointVisibility, props: ProposalSet,
               s_class: float, class_id: Optional[int] = None,
               prompt: Optional[str] = None) -> InstancePrediction:
    """Score one proposal over its selected frames.

    A frame contributes the best IoU between the proposal's projected box
    and that frame's detections, or 0 when either side is missing.
    """
    ious = [best_box_iou(projected_bbox(proposal_id, i, projections, pv, props), detections[i])
            for i in sel.frame_ids]
    return combine_scores(proposal_id, class_id, s_class, ious, prompt, props.masks[proposal_id])
