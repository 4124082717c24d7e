"""Per-frame label maps painted from 2D detections.

Label maps are stored image-style, ``labels[v, u]`` with shape ``(H, W)``;
``-1`` marks pixels with no class.
"""

from __future__ import annotations

import logging
import math
from dataclasses import dataclass
from typing import List, Optional, Sequence

import numpy as np

from .errors import ModeMismatchError, ValidationError

logger = logging.getLogger(__name__)

NO_CLASS = -1
MODES = ("LG", "HG")


@dataclass(frozen=True)
class Detection2D:
    box: tuple
    class_id: int
    score: float = 1.0
    pixel_mask: Optional[np.ndarray] = None

    def __post_init__(self):
        box = tuple(float(c) for c in self.box)
        if len(box) != 4 or not all(math.isfinite(c) for c in box):
            raise ValidationError(f"box must be four finite numbers, got {self.box}")
        x1, y1, x2, y2 = box
        if not (x1 < x2 and y1 < y2):
            raise ValidationError(f"degenerate box {box}")
        if int(self.class_id) < 0:
            raise ValidationError(f"negative class id {self.class_id}")
        object.__setattr__(self, "box", box)
        object.__setattr__(self, "class_id", int(self.class_id))
        object.__setattr__(self, "score", float(self.score))
        if self.pixel_mask is not None:
            object.__setattr__(self, "pixel_mask", np.asarray(self.pixel_mask, dtype=bool))


@dataclass(frozen=True)
class PromptVocabulary:
    prompts: tuple

    def __post_init__(self):
        prompts = tuple(str(p) for p in self.prompts)
        if not prompts:
            raise ValidationError("prompt vocabulary is empty")
        if len(set(prompts)) != len(prompts):
            raise ValidationError("prompt vocabulary contains duplicates")
        object.__setattr__(self, "prompts", prompts)

    def __len__(self) -> int:
        return len(self.prompts)

    def __getitem__(self, class_id: int) -> str:
        return self.prompts[class_id]


@dataclass(frozen=True)
class LabelMap:
    labels: np.ndarray

    @property
    def height(self) -> int:
        return self.labels.shape[0]

    @property
    def width(self) -> int:
        return self.labels.shape[1]


def clamp_detection(det: Detection2D, width: int, height: int) -> Optional[Detection2D]:
    """Clamp ``det`` into ``[0, W] x [0, H]``; ``None`` if nothing is left."""
    x1, y1, x2, y2 = det.box
    box = (min(max(x1, 0.0), width), min(max(y1, 0.0), height),
           min(max(x2, 0.0), width), min(max(y2, 0.0), height))
    if not (box[0] < box[2] and box[1] < box[3]):
        logger.debug("dropping detection %s: empty after clamping", det.box)
        return None
    if box == det.box:
        return det
    return Detection2D(box, det.class_id, det.score, det.pixel_mask)


def box_weight(det: Detection2D) -> float:
    """Painting weight: box height plus box width."""
    x1, y1, x2, y2 = det.box
    return (y2 - y1) + (x2 - x1)


def box_pixel_range(box, width: int, height: int):
    """Half-open integer pixel range ``(u0, v0, u1, v1)`` covered by a box."""
    x1, y1, x2, y2 = (math.floor(c) for c in box)
    return (min(max(x1, 0), width), min(max(y1, 0), height),
            min(max(x2, 0), width), min(max(y2, 0), height))


def paint_order(dets: Sequence[Detection2D]) -> np.ndarray:
    """Indices in painting order: weight descending, ingest order on ties."""
    weights = np.array([box_weight(d) for d in dets], dtype=np.float64)
    return np.argsort(-weights, kind="stable")


def build_label_map(dets: Sequence[Detection2D], width: int, height: int,
                    mode: str = "LG", dtype=np.int32) -> LabelMap:
    """Paint detections into a ``(H, W)`` label raster.

    Larger detections are painted first so that smaller ones, painted
    later, stay on top. In ``HG`` mode each detection's ``pixel_mask`` is
    painted instead of its rectangle.
    """
    if mode not in MODES:
        raise ModeMismatchError(f"unknown label map mode {mode!r}")
    labels = np.full((height, width), NO_CLASS, dtype=dtype)
    if not dets:
        return LabelMap(labels)
    if mode == "HG":
        for d in dets:
            if d.pixel_mask is None:
                raise ModeMismatchError("HG label maps need a pixel_mask on every detection")
            if d.pixel_mask.shape != (height, width):
                raise ModeMismatchError(
                    f"pixel mask shape {d.pixel_mask.shape} does not match frame {(height, width)}")
    for idx in paint_order(dets):
        d = dets[idx]
        if mode == "LG":
            u0, v0, u1, v1 = box_pixel_range(d.box, width, height)
            labels[v0:v1, u0:u1] = d.class_id
        else:
            labels[d.pixel_mask] = d.class_id
    return LabelMap(labels)


def build_label_maps(per_frame: Sequence[Sequence[Detection2D]], sizes,
                     mode: str = "LG") -> List[LabelMap]:
    return [build_label_map(d, w, h, mode) for d, (w, h) in zip(per_frame, sizes)]
