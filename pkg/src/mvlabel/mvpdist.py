"""Multi-view prompt distribution.

Each proposal votes with the label-map class under every visible projected
point across its most-visible frames; the majority class wins.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Dict, Optional, Sequence, Tuple

import numpy as np

from .geometry import Projection
from .labelmap import NO_CLASS, LabelMap
from .visibility import PointVisibility, ProposalSet, VisibilityMatrix, pixel_round

DEFAULT_TOPK = 40


@dataclass
class PromptDistribution:
    histogram: Dict[int, int] = field(default_factory=dict)

    @property
    def total_votes(self) -> int:
        return sum(self.histogram.values())

    @classmethod
    def from_counts(cls, counts: np.ndarray) -> "PromptDistribution":
        nz = np.flatnonzero(counts)
        return cls({int(c): int(counts[c]) for c in nz})


@dataclass(frozen=True)
class TopKSelection:
    frame_ids: tuple = ()

    def __len__(self) -> int:
        return len(self.frame_ids)


def select_topk_frames(vis: VisibilityMatrix, proposal_id: int, k: int) -> TopKSelection:
    """Frames with the largest visible fraction of the proposal, best first.

    Ties go to the lower frame index; frames where nothing is visible are
    never selected.
    """
    if k < 1:
        raise ValueError("k must be at least 1")
    col = np.asarray(vis.fractions)[:, proposal_id]
    order = np.lexsort((np.arange(col.size), -col))
    order = order[col[order] > 0][:k]
    return TopKSelection(tuple(int(i) for i in order))


def vote_counts(label_map: LabelMap, pixel_x: np.ndarray, pixel_y: np.ndarray,
                visible: np.ndarray, n_classes: int) -> np.ndarray:
    """Per-class vote counts for one frame; ``-1`` pixels are dropped."""
    u = pixel_round(pixel_x[visible]).astype(np.intp)
    v = pixel_round(pixel_y[visible]).astype(np.intp)
    labels = label_map.labels[v, u]
    labels = labels[labels != NO_CLASS]
    return np.bincount(labels, minlength=n_classes)[:n_classes] if labels.size else np.zeros(n_classes, np.int64)


def gather_label_distribution(proposal_id: int, sel: TopKSelection, label_maps: Sequence[LabelMap],
                              projections: Projection, pv: PointVisibility, props: ProposalSet,
                              n_classes: Optional[int] = None) -> PromptDistribution:
    """Accumulate label votes of the proposal's visible points over the selected frames.

    ``projections`` and ``pv`` cover the whole scene, rows indexed by frame
    and columns by point.
    """
    if n_classes is None:
        n_classes = max((int(m.labels.max()) for m in label_maps), default=-1) + 1
    counts = np.zeros(max(n_classes, 0), dtype=np.int64)
    mask = props.masks[proposal_id]
    for i in sel.frame_ids:
        vis = pv.in_frame[i, mask] & pv.unoccluded[i, mask]
        counts += vote_counts(label_maps[i], projections.pixel_x[i, mask],
                              projections.pixel_y[i, mask], vis, counts.size)
    return PromptDistribution.from_counts(counts)


def predict_class(dist: PromptDistribution) -> Tuple[Optional[int], float]:
    """Majority class and its vote share; ``(None, 0.0)`` without votes."""
    total = dist.total_votes
    if total == 0:
        return None, 0.0
    best = max(dist.histogram.items(), key=lambda kv: (kv[1], -kv[0]))
    return best[0], best[1] / total
