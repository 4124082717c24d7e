"""Accelerated visibility computation.

For every frame the cloud is projected, tested against the image bounds
and against the sensor depth, and the surviving points are counted per
proposal with one sparse matrix product. Frames are processed in blocks
so memory stays ``O(block * N)``.

:func:`oracle_mask_visibility` computes the same matrix with plain Python
loops and serves as the reference for the batched path.
"""

from __future__ import annotations

import math
from concurrent.futures import Executor
from dataclasses import dataclass, field
from functools import cached_property
from typing import Optional, Sequence

import numpy as np
import scipy.sparse as sp

from .errors import DimensionError, ValidationError
from .geometry import CameraFrame, DepthMap, PointCloud, Projection, project_points


@dataclass(frozen=True)
class VisibilityConfig:
    tau_depth: float = 0.10
    treat_invalid_depth_as_occluded: bool = True

    def __post_init__(self):
        if not self.tau_depth > 0:
            raise ValueError("tau_depth must be positive")


@dataclass(frozen=True, eq=False)
class ProposalSet:
    """Class-agnostic 3D masks stored as sorted point-index arrays."""

    masks: tuple
    n_points: int
    confidences: np.ndarray = field(default=None)

    def __post_init__(self):
        masks = []
        for j, m in enumerate(self.masks):
            m = np.asarray(m, dtype=np.int64)
            if m.ndim != 1 or m.size == 0:
                raise ValidationError(f"proposal {j} is empty")
            if m.min() < 0 or m.max() >= self.n_points:
                raise ValidationError(f"proposal {j} indexes outside the cloud of {self.n_points} points")
            s = np.sort(m)
            if np.any(s[1:] == s[:-1]):
                raise ValidationError(f"proposal {j} contains duplicate point indices")
            s.setflags(write=False)
            masks.append(s)
        object.__setattr__(self, "masks", tuple(masks))
        conf = (np.ones(len(masks)) if self.confidences is None
                else np.asarray(self.confidences, dtype=np.float64))
        if conf.shape != (len(masks),):
            raise ValidationError("one confidence per proposal is required")
        if np.any(~np.isfinite(conf)) or np.any(conf < 0) or np.any(conf > 1):
            raise ValidationError("proposal confidences must lie in [0, 1]")
        object.__setattr__(self, "confidences", conf)

    def __len__(self) -> int:
        return len(self.masks)

    @property
    def counts(self) -> np.ndarray:
        return np.array([m.size for m in self.masks], dtype=np.int64)

    @cached_property
    def matrix(self) -> sp.csr_matrix:
        """``K x N`` binary membership matrix."""
        k = len(self.masks)
        if k == 0:
            return sp.csr_matrix((0, self.n_points))
        indptr = np.concatenate([[0], np.cumsum(self.counts)])
        indices = np.concatenate(self.masks)
        data = np.ones(indices.size)
        return sp.csr_matrix((data, indices, indptr), shape=(k, self.n_points))

    def subset(self, keep) -> "ProposalSet":
        keep = list(keep)
        return ProposalSet(tuple(self.masks[i] for i in keep), self.n_points,
                           self.confidences[keep] if keep else np.zeros(0))


@dataclass(frozen=True)
class PointVisibility:
    in_frame: np.ndarray
    unoccluded: np.ndarray

    @property
    def visible(self) -> np.ndarray:
        return self.in_frame & self.unoccluded


@dataclass(frozen=True)
class VisibilityMatrix:
    """``frames x proposals`` fraction of each mask's points visible per frame."""

    fractions: np.ndarray
    counts: Optional[np.ndarray] = None


def pixel_round(x):
    """Round half up to the nearest pixel index."""
    return np.floor(np.asarray(x) + 0.5)


def compute_frame_visibility(proj: Projection, frames: Sequence[CameraFrame]) -> np.ndarray:
    """In-frame test: rounded pixel inside the image and point in front of the camera."""
    W = np.array([f.width for f in frames], dtype=np.float64)[:, None]
    H = np.array([f.height for f in frames], dtype=np.float64)[:, None]
    u = pixel_round(proj.pixel_x)
    v = pixel_round(proj.pixel_y)
    return (proj.depth_z > 0) & (u >= 0) & (u < W) & (v >= 0) & (v < H)


def _check_depth_dims(frames, depth_maps):
    if len(frames) != len(depth_maps):
        raise DimensionError(f"{len(frames)} frames but {len(depth_maps)} depth maps")
    for f, d in zip(frames, depth_maps):
        if d.width != f.width or d.height != f.height:
            raise DimensionError(
                f"frame {f.frame_id}: depth map is {d.width}x{d.height}, "
                f"camera is {f.width}x{f.height}")


def compute_depth_visibility(proj: Projection, frames: Sequence[CameraFrame],
                             depth_maps: Sequence[DepthMap], cfg: VisibilityConfig = VisibilityConfig(),
                             in_frame: Optional[np.ndarray] = None) -> np.ndarray:
    """Occlusion test ``|z - D(u, v)| < tau`` for in-frame points.

    Out-of-frame entries are always ``False``. Pixels without a depth
    reading count as occluded unless the config says otherwise.
    """
    _check_depth_dims(frames, depth_maps)
    if in_frame is None:
        in_frame = compute_frame_visibility(proj, frames)
    out = np.zeros(proj.shape, dtype=bool)
    for i, dm in enumerate(depth_maps):
        cols = np.flatnonzero(in_frame[i])
        if cols.size == 0:
            continue
        u = pixel_round(proj.pixel_x[i, cols]).astype(np.intp)
        v = pixel_round(proj.pixel_y[i, cols]).astype(np.intp)
        sensed = dm.depth[v, u]
        ok = np.abs(proj.depth_z[i, cols] - sensed) < cfg.tau_depth
        valid = dm.valid[v, u]
        if cfg.treat_invalid_depth_as_occluded:
            ok &= valid
        else:
            ok |= ~valid
        out[i, cols] = ok
    return out


def point_visibility(cloud: PointCloud, frames: Sequence[CameraFrame],
                     depth_maps: Sequence[DepthMap], cfg: VisibilityConfig = VisibilityConfig(),
                     point_ids=None) -> tuple:
    """Project and test visibility in one go; returns ``(Projection, PointVisibility)``."""
    proj = project_points(cloud, frames, point_ids)
    in_frame = compute_frame_visibility(proj, frames)
    unocc = compute_depth_visibility(proj, frames, depth_maps, cfg, in_frame)
    return proj, PointVisibility(in_frame, unocc)


def visible_counts(visible: np.ndarray, props: ProposalSet) -> np.ndarray:
    """Integer ``frames x proposals`` counts of visible mask points."""
    if len(props) == 0:
        return np.zeros((visible.shape[0], 0), dtype=np.int64)
    counts = props.matrix @ visible.T.astype(np.float64)
    return np.rint(np.asarray(counts).T).astype(np.int64)


def compute_mask_visibility(pv: PointVisibility, props: ProposalSet) -> VisibilityMatrix:
    counts = visible_counts(pv.visible, props)
    return VisibilityMatrix(counts / props.counts[None, :].astype(np.float64), counts)


def mask_visibility(cloud: PointCloud, frames: Sequence[CameraFrame], depth_maps: Sequence[DepthMap],
                    props: ProposalSet, cfg: VisibilityConfig = VisibilityConfig(),
                    block: int = 16, executor: Optional[Executor] = None) -> VisibilityMatrix:
    """Frame-blocked visibility matrix for a whole scene.

    Blocks run on ``executor`` when one is given; each block writes its
    own rows, so the result does not depend on scheduling.
    """
    _check_depth_dims(frames, depth_maps)
    n_f = len(frames)
    counts = np.zeros((n_f, len(props)), dtype=np.int64)
    starts = list(range(0, n_f, block))

    def run(s):
        e = min(s + block, n_f)
        _, pv = point_visibility(cloud, frames[s:e], depth_maps[s:e], cfg)
        counts[s:e] = visible_counts(pv.visible, props)

    if executor is None:
        for s in starts:
            run(s)
    else:
        for fut in [executor.submit(run, s) for s in starts]:
            fut.result()
    denom = props.counts[None, :].astype(np.float64)
    return VisibilityMatrix(counts / denom if len(props) else np.zeros((n_f, 0)), counts)


def oracle_point_visibility(cloud: PointCloud, frames: Sequence[CameraFrame],
                            depth_maps: Sequence[DepthMap], cfg: VisibilityConfig = VisibilityConfig()):
    """Per-point, per-frame scalar reference; returns ``(in_frame, unoccluded)`` lists of lists."""
    _check_depth_dims(frames, depth_maps)
    pts = cloud.points.tolist()
    in_frame, unocc = [], []
    for f, dm in zip(frames, depth_maps):
        K = f.intrinsic.tolist()
        E = f.extrinsic.tolist()
        C = [[((K[r][0] * E[0][c] + K[r][1] * E[1][c]) + K[r][2] * E[2][c]) + K[r][3] * E[3][c]
              for c in range(4)] for r in range(3)]
        depth = dm.depth
        valid = dm.valid
        row_f, row_d = [], []
        for x, y, z, w in pts:
            xp = ((C[0][0] * x + C[0][1] * y) + C[0][2] * z) + C[0][3] * w
            yp = ((C[1][0] * x + C[1][1] * y) + C[1][2] * z) + C[1][3] * w
            zp = ((C[2][0] * x + C[2][1] * y) + C[2][2] * z) + C[2][3] * w
            if not zp > 0:
                row_f.append(False)
                row_d.append(False)
                continue
            u = math.floor(xp / zp + 0.5)
            v = math.floor(yp / zp + 0.5)
            inside = 0 <= u < f.width and 0 <= v < f.height
            row_f.append(inside)
            if not inside:
                row_d.append(False)
                continue
            if not valid[v, u]:
                row_d.append(not cfg.treat_invalid_depth_as_occluded)
            else:
                row_d.append(abs(zp - float(depth[v, u])) < cfg.tau_depth)
        in_frame.append(row_f)
        unocc.append(row_d)
    return in_frame, unocc


def oracle_mask_visibility(cloud: PointCloud, frames: Sequence[CameraFrame],
                           depth_maps: Sequence[DepthMap], props: ProposalSet,
                           cfg: VisibilityConfig = VisibilityConfig()) -> VisibilityMatrix:
    in_frame, unocc = oracle_point_visibility(cloud, frames, depth_maps, cfg)
    fractions = np.zeros((len(frames), len(props)))
    counts = np.zeros((len(frames), len(props)), dtype=np.int64)
    for i in range(len(frames)):
        for j, mask in enumerate(props.masks):
            n = 0
            for p in mask.tolist():
                if in_frame[i][p] and unocc[i][p]:
                    n += 1
            counts[i, j] = n
            fractions[i, j] = n / len(mask)
    return VisibilityMatrix(fractions, counts)
