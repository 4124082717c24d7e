"""Average precision of labeled 3D instances against ground truth.

Matching follows the usual detection convention: predictions of a class
are visited in descending score order and each takes the unmatched
ground-truth instance of that class with the highest point-set IoU, if
that IoU reaches the threshold. AP is the area under the monotone
precision envelope (all-point interpolation).
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Dict, List, Optional, Sequence

import numpy as np

from .errors import ValidationError

DEFAULT_THRESHOLDS = tuple(np.round(np.linspace(0.5, 0.95, 10), 2).tolist())


@dataclass(frozen=True)
class GroundTruthInstance:
    point_indices: np.ndarray
    class_id: int

    def __post_init__(self):
        idx = np.unique(np.asarray(self.point_indices, dtype=np.int64))
        if idx.size == 0:
            raise ValidationError("ground-truth instance is empty")
        if idx[0] < 0:
            raise ValidationError("ground-truth instance has negative indices")
        object.__setattr__(self, "point_indices", idx)
        object.__setattr__(self, "class_id", int(self.class_id))


@dataclass(frozen=True)
class ScoredMask:
    """The part of a prediction the evaluator needs."""

    point_indices: np.ndarray
    class_id: int
    score: float


@dataclass
class APReport:
    map: float
    map50: float
    map25: float
    per_class: Dict[int, Dict[str, float]] = field(default_factory=dict)
    per_threshold: Dict[float, float] = field(default_factory=dict)

    def to_dict(self, prompts: Optional[Sequence[str]] = None) -> dict:
        per_class = {}
        for c, row in self.per_class.items():
            key = prompts[c] if prompts is not None and c < len(prompts) else str(c)
            per_class[key] = row
        return {
            "map": self.map,
            "map50": self.map50,
            "map25": self.map25,
            "per_threshold": {f"{t:.2f}": v for t, v in self.per_threshold.items()},
            "per_class": per_class,
        }


def point_iou(a: np.ndarray, b: np.ndarray) -> float:
    inter = np.intersect1d(a, b, assume_unique=True).size
    return inter / (a.size + b.size - inter)


def average_precision(tp: Sequence[bool], n_gt: int) -> float:
    """All-point interpolated AP for a score-ordered list of TP/FP flags."""
    if n_gt == 0:
        raise ValueError("AP is undefined without ground truth")
    tp = np.asarray(tp, dtype=np.float64)
    if tp.size == 0:
        return 0.0
    ctp = np.cumsum(tp)
    cfp = np.cumsum(1.0 - tp)
    recall = ctp / n_gt
    precision = ctp / (ctp + cfp)
    mrec = np.concatenate([[0.0], recall, [1.0]])
    mpre = np.concatenate([[0.0], precision, [0.0]])
    mpre = np.maximum.accumulate(mpre[::-1])[::-1]
    steps = np.flatnonzero(mrec[1:] != mrec[:-1])
    return float(np.sum((mrec[steps + 1] - mrec[steps]) * mpre[steps + 1]))


def match_class(preds: Sequence[ScoredMask], gts: Sequence[GroundTruthInstance],
                ious: np.ndarray, threshold: float) -> List[bool]:
    """Greedy score-order matching; ``ious`` is ``len(preds) x len(gts)``."""
    order = sorted(range(len(preds)), key=lambda i: -preds[i].score)
    taken = np.zeros(len(gts), dtype=bool)
    flags = []
    for i in order:
        cand = np.where(taken, -1.0, ious[i]) if len(gts) else np.zeros(0)
        j = int(np.argmax(cand)) if cand.size else -1
        if j >= 0 and cand[j] >= threshold:
            taken[j] = True
            flags.append(True)
        else:
            flags.append(False)
    return flags


def evaluate_ap(preds: Sequence, gts: Sequence[GroundTruthInstance],
                thresholds: Sequence[float] = DEFAULT_THRESHOLDS,
                n_points: Optional[int] = None) -> APReport:
    """mAP over ``thresholds`` plus AP at 0.50 and 0.25.

    ``preds`` are :class:`ScoredMask` or anything with ``point_indices``,
    ``class_id`` and ``score`` attributes. Classes without ground truth are
    skipped.
    """
    masks = []
    for p in preds:
        if p.class_id is None:
            continue
        idx = np.asarray(p.point_indices, dtype=np.int64)
        if idx.size == 0 or idx.min() < 0 or (n_points is not None and idx.max() >= n_points):
            raise ValidationError("prediction mask has invalid point indices")
        masks.append(ScoredMask(np.unique(idx), int(p.class_id), float(p.score)))
    if n_points is not None:
        for g in gts:
            if g.point_indices[-1] >= n_points:
                raise ValidationError("ground-truth instance indexes outside the cloud")

    classes = sorted({g.class_id for g in gts})
    all_thr = sorted(set(float(t) for t in thresholds) | {0.5, 0.25})
    table = {}
    for c in classes:
        cp = [m for m in masks if m.class_id == c]
        cg = [g for g in gts if g.class_id == c]
        ious = np.array([[point_iou(p.point_indices, g.point_indices) for g in cg] for p in cp])
        ious = ious.reshape(len(cp), len(cg))
        table[c] = {t: average_precision(match_class(cp, cg, ious, t), len(cg)) for t in all_thr}

    def mean_at(t):
        return float(np.mean([table[c][t] for c in classes])) if classes else 0.0

    per_threshold = {float(t): mean_at(float(t)) for t in thresholds}
    per_class = {
        c: {"ap": float(np.mean([table[c][float(t)] for t in thresholds])),
            "ap50": table[c][0.5], "ap25": table[c][0.25]}
        for c in classes
    }
    mapv = float(np.mean(list(per_threshold.values()))) if per_threshold else 0.0
    return APReport(mapv, mean_at(0.5), mean_at(0.25), per_class, per_threshold)
