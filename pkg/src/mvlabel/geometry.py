"""Camera models and batched projection of a point cloud into many frames.

Projection is written as explicit elementwise arithmetic rather than a
matrix product. Every output element depends only on its own point and
frame, so projecting any subset of points or frames reproduces the
corresponding entries of the full batch bit for bit. The pipeline relies
on this to recompute small slices on demand instead of holding the full
``frames x points`` tensor in memory.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Optional, Sequence

import numpy as np

from .errors import InvalidCameraError, InvalidPoseError

ORTHONORMAL_TOL = 1e-6


@dataclass(frozen=True)
class PointCloud:
    """``N`` homogeneous points, shape ``(N, 4)``, in meters."""

    points: np.ndarray
    colors: Optional[np.ndarray] = None

    def __post_init__(self):
        pts = np.ascontiguousarray(self.points, dtype=np.float64)
        if pts.ndim != 2 or pts.shape[1] != 4 or pts.shape[0] < 1:
            raise ValueError(f"point cloud must have shape (N>=1, 4), got {pts.shape}")
        if not np.all(np.isfinite(pts)):
            raise ValueError("point cloud contains non-finite coordinates")
        if not np.all(pts[:, 3] == 1.0):
            raise ValueError("homogeneous coordinate must be exactly 1")
        object.__setattr__(self, "points", pts)
        if self.colors is not None:
            colors = np.asarray(self.colors, dtype=np.uint8)
            if colors.shape != (pts.shape[0], 3):
                raise ValueError("colors must have shape (N, 3)")
            object.__setattr__(self, "colors", colors)

    @classmethod
    def from_xyz(cls, xyz, colors=None) -> "PointCloud":
        xyz = np.asarray(xyz, dtype=np.float64).reshape(-1, 3)
        return cls(np.hstack([xyz, np.ones((xyz.shape[0], 1))]), colors)

    @property
    def xyz(self) -> np.ndarray:
        return self.points[:, :3]

    def __len__(self) -> int:
        return self.points.shape[0]


@dataclass(frozen=True)
class CameraFrame:
    """A pinhole camera for one frame.

    ``extrinsic`` maps world to camera coordinates. ``intrinsic`` is the
    4x4 pixel projection matrix used by ScanNet-style datasets. ``pose``
    optionally keeps the camera-to-world matrix the extrinsic was derived
    from, so that writers can reproduce it exactly.
    """

    frame_id: int
    intrinsic: np.ndarray
    extrinsic: np.ndarray
    width: int
    height: int
    pose: Optional[np.ndarray] = field(default=None, compare=False, repr=False)

    def __post_init__(self):
        K = np.array(self.intrinsic, dtype=np.float64)
        E = np.array(self.extrinsic, dtype=np.float64)
        if K.shape != (4, 4) or E.shape != (4, 4):
            raise InvalidCameraError(f"frame {self.frame_id}: camera matrices must be 4x4")
        if not (np.all(np.isfinite(K)) and np.all(np.isfinite(E))):
            raise InvalidCameraError(f"frame {self.frame_id}: non-finite camera matrix entry")
        if K[0, 0] <= 0 or K[1, 1] <= 0:
            raise InvalidCameraError(f"frame {self.frame_id}: focal lengths must be positive")
        R = E[:3, :3]
        if (np.abs(R @ R.T - np.eye(3)).max() > ORTHONORMAL_TOL
                or np.linalg.det(R) <= 0):
            raise InvalidCameraError(f"frame {self.frame_id}: extrinsic rotation is not orthonormal")
        if int(self.width) <= 0 or int(self.height) <= 0:
            raise InvalidCameraError(f"frame {self.frame_id}: image size must be positive")
        K.setflags(write=False)
        E.setflags(write=False)
        object.__setattr__(self, "intrinsic", K)
        object.__setattr__(self, "extrinsic", E)
        object.__setattr__(self, "width", int(self.width))
        object.__setattr__(self, "height", int(self.height))

    @classmethod
    def from_pose(cls, frame_id: int, intrinsic, pose, width: int, height: int) -> "CameraFrame":
        """Build from a camera-to-world pose, keeping it for round trips."""
        pose = np.array(pose, dtype=np.float64)
        frame = cls(frame_id, intrinsic, invert_pose(pose), width, height, pose)
        pose.setflags(write=False)
        return frame

    @property
    def camera_to_world(self) -> np.ndarray:
        return self.pose if self.pose is not None else invert_pose(self.extrinsic)


@dataclass(frozen=True)
class DepthMap:
    """Sensor depth in meters, shape ``(H, W)``; non-positive or NaN means no reading."""

    depth: np.ndarray

    def __post_init__(self):
        d = np.asarray(self.depth, dtype=np.float64)
        if d.ndim != 2:
            raise ValueError(f"depth map must be 2-D, got shape {d.shape}")
        ok = np.isfinite(d) & (d > 0)
        d = np.where(ok, d, 0.0)
        d.setflags(write=False)
        ok.setflags(write=False)
        object.__setattr__(self, "depth", d)
        object.__setattr__(self, "_valid", ok)

    @property
    def valid(self) -> np.ndarray:
        return self._valid

    @property
    def width(self) -> int:
        return self.depth.shape[1]

    @property
    def height(self) -> int:
        return self.depth.shape[0]


@dataclass(frozen=True)
class Projection:
    """Projected pixel coordinates and camera depths, shape ``(frames, points)``.

    Entries with ``depth_z <= 0`` lie behind the camera; their pixel
    coordinates are the raw, undivided values.
    """

    pixel_x: np.ndarray
    pixel_y: np.ndarray
    depth_z: np.ndarray

    @property
    def behind(self) -> np.ndarray:
        return ~(self.depth_z > 0)

    @property
    def shape(self) -> tuple:
        return self.depth_z.shape

    def __len__(self) -> int:
        return self.depth_z.shape[0]

    def take(self, frames=None, points=None) -> "Projection":
        """Sub-projection restricted to the given frame rows / point columns."""
        def sel(a):
            if frames is not None:
                a = a[np.asarray(frames, dtype=np.intp)]
            if points is not None:
                a = a[:, np.asarray(points, dtype=np.intp)]
            return a
        return Projection(sel(self.pixel_x), sel(self.pixel_y), sel(self.depth_z))


def compose_camera(intrinsic: np.ndarray, extrinsic: np.ndarray) -> np.ndarray:
    """``intrinsic @ extrinsic`` with a fixed left-to-right summation order."""
    K = np.asarray(intrinsic, dtype=np.float64).tolist()
    E = np.asarray(extrinsic, dtype=np.float64).tolist()
    return np.array([[((K[r][0] * E[0][c] + K[r][1] * E[1][c]) + K[r][2] * E[2][c]) + K[r][3] * E[3][c]
                      for c in range(4)] for r in range(4)])


def project_points(cloud: PointCloud, frames: Sequence[CameraFrame],
                   point_ids=None) -> Projection:
    """Project the cloud (or the ``point_ids`` subset) into every frame.

    Pixel coordinates are perspective-divided, ``(x'/z', y'/z')`` with
    ``(x', y', z') = K E p``. Points at or behind the camera plane keep
    their undivided coordinates.

    Raises
    ------
    InvalidCameraError
        If a camera matrix holds a non-finite entry.
    """
    if len(frames) == 0:
        raise ValueError("at least one frame is required")
    pts = cloud.points if point_ids is None else cloud.points[np.asarray(point_ids, dtype=np.intp)]
    X = pts[:, 0][None, :]
    Y = pts[:, 1][None, :]
    Z = pts[:, 2][None, :]
    C = np.empty((len(frames), 3, 4))
    for i, f in enumerate(frames):
        if not (np.all(np.isfinite(f.intrinsic)) and np.all(np.isfinite(f.extrinsic))):
            raise InvalidCameraError(f"frame {f.frame_id}: non-finite camera matrix entry")
        C[i] = compose_camera(f.intrinsic, f.extrinsic)[:3]
    C = C[:, :, :, None]
    xs = ((C[:, 0, 0] * X + C[:, 0, 1] * Y) + C[:, 0, 2] * Z) + C[:, 0, 3]
    ys = ((C[:, 1, 0] * X + C[:, 1, 1] * Y) + C[:, 1, 2] * Z) + C[:, 1, 3]
    zs = ((C[:, 2, 0] * X + C[:, 2, 1] * Y) + C[:, 2, 2] * Z) + C[:, 2, 3]
    front = zs > 0
    safe = np.where(front, zs, 1.0)
    px = np.where(front, xs / safe, xs)
    py = np.where(front, ys / safe, ys)
    return Projection(px, py, zs)


def invert_pose(camera_to_world: np.ndarray) -> np.ndarray:
    """Invert a rigid 4x4 transform (camera-to-world -> world-to-camera)."""
    T = np.asarray(camera_to_world, dtype=np.float64)
    if T.shape != (4, 4) or not np.all(np.isfinite(T)):
        raise InvalidPoseError("pose must be a finite 4x4 matrix")
    if not np.allclose(T[3], [0.0, 0.0, 0.0, 1.0], atol=1e-9, rtol=0):
        raise InvalidPoseError("pose bottom row must be (0, 0, 0, 1)")
    R = T[:3, :3]
    t = T[:3, 3]
    if np.abs(R @ R.T - np.eye(3)).max() <= ORTHONORMAL_TOL:
        out = np.eye(4)
        out[:3, :3] = R.T
        out[:3, 3] = -R.T @ t
        return out
    if abs(np.linalg.det(R)) < 1e-12:
        raise InvalidPoseError("pose is not invertible")
    return np.linalg.inv(T)


def look_at(eye, target, up=(0.0, 0.0, 1.0)) -> np.ndarray:
    """World-to-camera extrinsic for a camera at ``eye`` looking at ``target``.

    Camera axes follow the OpenCV convention: +x right, +y down, +z forward.
    """
    eye = np.asarray(eye, dtype=np.float64)
    fwd = np.asarray(target, dtype=np.float64) - eye
    fwd /= np.linalg.norm(fwd)
    right = np.cross(fwd, np.asarray(up, dtype=np.float64))
    if np.linalg.norm(right) < 1e-9:
        right = np.cross(fwd, np.array([0.0, 1.0, 0.0]))
    right /= np.linalg.norm(right)
    down = np.cross(fwd, right)
    R = np.stack([right, down, fwd])
    E = np.eye(4)
    E[:3, :3] = R
    E[:3, 3] = -R @ eye
    return E


def pinhole_intrinsic(fx: float, fy: float, cx: float, cy: float) -> np.ndarray:
    K = np.eye(4)
    K[0, 0], K[1, 1], K[0, 2], K[1, 2] = fx, fy, cx, cy
    return K
