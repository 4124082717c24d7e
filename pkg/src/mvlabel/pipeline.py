"""End-to-end labeling of a scene bundle.

The per-proposal work is organised frame-major: each frame's label map is
built once, used by every proposal that selected the frame, and dropped.
Only the selected (frame, proposal) slices are ever projected, so memory
stays bounded by one frame block plus one label map per worker.
"""

from __future__ import annotations

import logging
import os
import time
from collections import defaultdict
from concurrent.futures import ThreadPoolExecutor
from contextlib import contextmanager
from dataclasses import dataclass, field
from typing import Dict, List, Optional

import numpy as np

from .labelmap import MODES, build_label_map
from .mvpdist import DEFAULT_TOPK, PromptDistribution, predict_class, select_topk_frames, vote_counts
from .scene_io import SceneBundle
from .scoring import DEFAULT_NMS_IOU, InstancePrediction, bbox_of, best_box_iou, combine_scores, nms_keep
from .visibility import VisibilityConfig, VisibilityMatrix, mask_visibility, point_visibility

logger = logging.getLogger(__name__)


@dataclass(frozen=True)
class RunConfig:
    topk: int = DEFAULT_TOPK
    tau_depth: float = 0.10
    nms_iou: float = DEFAULT_NMS_IOU
    frame_stride: int = 1
    depth_scale: float = 1000.0
    label_map_mode: str = "LG"
    keep_unlabeled: bool = False
    threads: Optional[int] = None
    frame_block: int = 16
    treat_invalid_depth_as_occluded: bool = True

    def __post_init__(self):
        if self.topk < 1 or self.frame_stride < 1 or self.frame_block < 1:
            raise ValueError("topk, frame_stride and frame_block must be positive")
        if not (self.tau_depth > 0 and self.depth_scale > 0):
            raise ValueError("tau_depth and depth_scale must be positive")
        if not 0 < self.nms_iou <= 1:
            raise ValueError("nms_iou must lie in (0, 1]")
        if self.label_map_mode not in MODES:
            raise ValueError(f"label_map_mode must be one of {MODES}")
        if self.threads is not None and self.threads < 1:
            raise ValueError("threads must be positive")

    @property
    def visibility(self) -> VisibilityConfig:
        return VisibilityConfig(self.tau_depth, self.treat_invalid_depth_as_occluded)

    @property
    def n_threads(self) -> int:
        return self.threads or os.cpu_count() or 1


@dataclass
class LabelingResult:
    instances: List[InstancePrediction]
    diagnostics: List[InstancePrediction]
    visibility: VisibilityMatrix
    kept: List[int]
    timings: Dict[str, float] = field(default_factory=dict)


class StageTimer:
    def __init__(self):
        self.timings: Dict[str, float] = {}

    @contextmanager
    def __call__(self, name: str):
        t0 = time.perf_counter()
        try:
            yield
        finally:
            self.timings[name] = self.timings.get(name, 0.0) + time.perf_counter() - t0


def label_scene(bundle: SceneBundle, cfg: RunConfig = RunConfig(),
                timer: Optional[StageTimer] = None) -> LabelingResult:
    """NMS, visibility, top-k selection, label voting and scoring for one scene."""
    timer = timer or StageTimer()
    vcfg = cfg.visibility
    cloud, frames, depths, dets = bundle.cloud, bundle.frames, bundle.depth_maps, bundle.detections
    n_classes = len(bundle.vocabulary)
    executor = ThreadPoolExecutor(cfg.n_threads) if cfg.n_threads > 1 else None
    try:
        with timer("nms"):
            kept = nms_keep(bundle.proposals, cfg.nms_iou)
            props = bundle.proposals.subset(kept)

        with timer("visibility"):
            vis = mask_visibility(cloud, frames, depths, props, vcfg, cfg.frame_block, executor)

        with timer("topk"):
            sels = [select_topk_frames(vis, j, cfg.topk) for j in range(len(props))]
            by_frame = defaultdict(list)
            for j, sel in enumerate(sels):
                for rank, i in enumerate(sel.frame_ids):
                    by_frame[i].append((j, rank))

        def do_frame(i):
            fr = frames[i]
            lm = build_label_map(dets[i], fr.width, fr.height, cfg.label_map_mode)
            out = []
            for j, rank in by_frame[i]:
                proj, pv = point_visibility(cloud, [fr], [depths[i]], vcfg, point_ids=props.masks[j])
                visible = pv.visible[0]
                px, py = proj.pixel_x[0], proj.pixel_y[0]
                votes = vote_counts(lm, px, py, visible, n_classes)
                out.append((j, rank, votes, best_box_iou(bbox_of(px, py, visible), dets[i])))
            return out

        with timer("mvpdist_scoring"):
            hist = np.zeros((len(props), n_classes), dtype=np.int64)
            ious = [[0.0] * len(sel) for sel in sels]
            order = sorted(by_frame)
            results = executor.map(do_frame, order) if executor else map(do_frame, order)
            for rows in results:
                for j, rank, votes, iou in rows:
                    hist[j] += votes
                    ious[j][rank] = iou
            instances, diagnostics = [], []
            for j in range(len(props)):
                cls, s_class = predict_class(PromptDistribution.from_counts(hist[j]))
                prompt = None if cls is None else bundle.vocabulary[cls]
                pred = combine_scores(kept[j], cls, s_class, ious[j], prompt, props.masks[j])
                (instances if pred.labeled else diagnostics).append(pred)
            instances.sort(key=lambda p: p.proposal_id)
            diagnostics.sort(key=lambda p: p.proposal_id)
    finally:
        if executor is not None:
            executor.shutdown()
    return LabelingResult(instances, diagnostics, vis, kept, dict(timer.timings))
