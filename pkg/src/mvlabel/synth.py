"""Deterministic synthetic scenes with exact ground truth.

Objects are boxes or spheres sampled as surface point sets. Cameras sit on
a ring around the scene centroid and look at it. Depth maps are rendered
by splatting every point into a 3x3 pixel neighbourhood of a min-depth
buffer, using the same projection the pipeline uses. Ground-truth boxes
are the pixel envelopes of each object's visible points, and detections
are those boxes with their class flipped at random with probability
``detector_noise``.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import Dict, List, Optional, Tuple

import numpy as np

from .errors import GenerationError
from .evalap import GroundTruthInstance
from .geometry import CameraFrame, DepthMap, PointCloud, invert_pose, look_at, pinhole_intrinsic, project_points
from .labelmap import Detection2D, PromptVocabulary
from .scene_io import (SceneBundle, write_depth_png, write_detections, write_ground_truth, write_matrix,
                       write_points, write_proposals, write_vocabulary)
from .visibility import ProposalSet, VisibilityConfig, compute_depth_visibility, compute_frame_visibility, pixel_round

DEFAULT_PROMPTS = ("chair", "table", "sofa", "lamp", "bookshelf", "monitor", "plant", "cabinet",
                   "bed", "toilet", "sink", "door", "window", "pillow", "box", "trash can")
SPLAT_RADIUS = 1
DEPTH_SCALE = 1000.0


@dataclass(frozen=True)
class ObjectSpec:
    shape: str
    center: Tuple[float, float, float]
    size: Tuple[float, float, float]
    class_id: int

    def __post_init__(self):
        if self.shape not in ("box", "sphere"):
            raise ValueError(f"unknown shape {self.shape!r}")
        size = self.size
        if np.isscalar(size):
            size = (size, size, size)
        size = tuple(float(s) for s in size)
        if len(size) != 3 or min(size) <= 0:
            raise ValueError("object size must be positive")
        object.__setattr__(self, "size", size)
        object.__setattr__(self, "center", tuple(float(c) for c in self.center))
        object.__setattr__(self, "class_id", int(self.class_id))


@dataclass(frozen=True)
class SynthConfig:
    seed: int
    objects: tuple
    n_cameras: int = 8
    ring_radius: float = 3.0
    camera_height: float = 2.0
    resolution: Tuple[int, int] = (160, 120)
    points_per_object: int = 500
    detector_noise: float = 0.0
    prompts: tuple = DEFAULT_PROMPTS[:10]
    focal_scale: float = 1.0
    camera_positions: Optional[tuple] = None

    def __post_init__(self):
        objs = tuple(o if isinstance(o, ObjectSpec) else ObjectSpec(**o) for o in self.objects)
        object.__setattr__(self, "objects", objs)
        object.__setattr__(self, "prompts", tuple(self.prompts))
        object.__setattr__(self, "resolution", tuple(int(r) for r in self.resolution))
        if not objs:
            raise ValueError("at least one object is required")
        if self.resolution[0] < 16 or self.resolution[1] < 16:
            raise ValueError("resolution must be at least 16x16")
        if self.camera_positions is None and self.n_cameras < 1:
            raise ValueError("at least one camera is required")
        if self.camera_positions is not None and len(self.camera_positions) == 0:
            raise ValueError("at least one camera is required")
        if not 0.0 <= self.detector_noise <= 1.0:
            raise ValueError("detector_noise must lie in [0, 1]")
        if self.points_per_object < 1:
            raise ValueError("points_per_object must be positive")
        for o in objs:
            if o.class_id >= len(self.prompts):
                raise ValueError(f"object class {o.class_id} outside the {len(self.prompts)} prompts")

    @classmethod
    def from_dict(cls, d: dict) -> "SynthConfig":
        d = dict(d)
        d["objects"] = tuple(ObjectSpec(**o) for o in d["objects"])
        if d.get("camera_positions") is not None:
            d["camera_positions"] = tuple(tuple(map(float, p)) for p in d["camera_positions"])
        return cls(**d)


@dataclass(eq=False)
class SynthScene:
    bundle: SceneBundle
    ground_truth: List[GroundTruthInstance]
    gt_boxes: List[Dict[int, tuple]] = field(default_factory=list)
    object_classes: List[int] = field(default_factory=list)


def sample_surface(rng: np.random.Generator, obj: ObjectSpec, n: int) -> np.ndarray:
    c = np.array(obj.center)
    half = np.array(obj.size) / 2.0
    if obj.shape == "sphere":
        d = rng.normal(size=(n, 3))
        d /= np.linalg.norm(d, axis=1, keepdims=True)
        return c + d * half
    # face areas: pairs of faces normal to x, y, z
    sx, sy, sz = obj.size
    areas = np.array([sy * sz, sx * sz, sx * sy])
    axis = rng.choice(3, size=n, p=areas / areas.sum())
    side = rng.choice([-1.0, 1.0], size=n)
    pts = rng.uniform(-1.0, 1.0, size=(n, 3)) * half
    pts[np.arange(n), axis] = side * half[axis]
    return c + pts


def render_depth(cloud: PointCloud, frame: CameraFrame, radius: int = SPLAT_RADIUS) -> DepthMap:
    """Min-depth point splatting, quantized to the 16-bit PNG depth grid."""
    proj = project_points(cloud, [frame])
    z = proj.depth_z[0]
    front = z > 0
    u = pixel_round(proj.pixel_x[0][front]).astype(np.int64)
    v = pixel_round(proj.pixel_y[0][front]).astype(np.int64)
    z = z[front]
    W, H = frame.width, frame.height
    buf = np.full(W * H, np.inf)
    for du in range(-radius, radius + 1):
        for dv in range(-radius, radius + 1):
            uu, vv = u + du, v + dv
            ok = (uu >= 0) & (uu < W) & (vv >= 0) & (vv < H)
            np.minimum.at(buf, vv[ok] * W + uu[ok], z[ok])
    buf[~np.isfinite(buf)] = 0.0
    buf = np.rint(buf * DEPTH_SCALE) / DEPTH_SCALE
    return DepthMap(buf.reshape(H, W))


def _camera_poses(cfg: SynthConfig, centroid: np.ndarray) -> List[np.ndarray]:
    """Camera-to-world poses looking at ``centroid``."""
    if cfg.camera_positions is not None:
        eyes = [np.asarray(p, dtype=np.float64) for p in cfg.camera_positions]
    else:
        eyes = []
        for i in range(cfg.n_cameras):
            a = 2.0 * math.pi * i / cfg.n_cameras
            eyes.append(centroid + np.array([cfg.ring_radius * math.cos(a),
                                             cfg.ring_radius * math.sin(a), cfg.camera_height]))
    return [invert_pose(look_at(eye, centroid)) for eye in eyes]


def generate_scene(cfg: SynthConfig) -> SynthScene:
    rng = np.random.default_rng(cfg.seed)
    chunks, masks = [], []
    start = 0
    for obj in cfg.objects:
        chunks.append(sample_surface(rng, obj, cfg.points_per_object))
        masks.append(np.arange(start, start + cfg.points_per_object))
        start += cfg.points_per_object
    cloud = PointCloud.from_xyz(np.concatenate(chunks))
    centroid = np.mean([o.center for o in cfg.objects], axis=0)

    W, H = cfg.resolution
    f = cfg.focal_scale * W
    K = pinhole_intrinsic(f, f, W / 2.0, H / 2.0)
    frames = [CameraFrame.from_pose(i, K, pose, W, H)
              for i, pose in enumerate(_camera_poses(cfg, centroid))]
    depths = [render_depth(cloud, fr) for fr in frames]

    n_classes = len(cfg.prompts)
    vcfg = VisibilityConfig()
    gt_boxes: List[Dict[int, tuple]] = []
    detections = []
    seen = np.zeros(len(cfg.objects), dtype=bool)
    for fr, dm in zip(frames, depths):
        proj = project_points(cloud, [fr])
        inf = compute_frame_visibility(proj, [fr])
        vis = (inf & compute_depth_visibility(proj, [fr], [dm], vcfg, inf))[0]
        boxes, dets = {}, []
        for o, (obj, m) in enumerate(zip(cfg.objects, masks)):
            sel = vis[m]
            if not sel.any():
                continue
            seen[o] = True
            u = pixel_round(proj.pixel_x[0, m][sel])
            v = pixel_round(proj.pixel_y[0, m][sel])
            box = (float(u.min()), float(v.min()), float(u.max()) + 1.0, float(v.max()) + 1.0)
            boxes[o] = box
            cls = obj.class_id
            if n_classes > 1 and rng.random() < cfg.detector_noise:
                wrong = int(rng.integers(n_classes - 1))
                cls = wrong if wrong < obj.class_id else wrong + 1
            dets.append(Detection2D(box, cls, 1.0))
        gt_boxes.append(boxes)
        detections.append(dets)
    if not seen.all():
        missing = [int(o) for o in np.flatnonzero(~seen)]
        raise GenerationError(f"objects {missing} are not visible from any camera")

    props = ProposalSet(tuple(masks), len(cloud), np.ones(len(masks)))
    bundle = SceneBundle(cloud, tuple(frames), tuple(depths), tuple(detections), props,
                         PromptVocabulary(cfg.prompts))
    gts = [GroundTruthInstance(m, o.class_id) for m, o in zip(masks, cfg.objects)]
    return SynthScene(bundle, gts, gt_boxes, [o.class_id for o in cfg.objects])


def with_proposals(scene: SynthScene, props: ProposalSet) -> SynthScene:
    b = scene.bundle
    bundle = SceneBundle(b.cloud, b.frames, b.depth_maps, b.detections, props, b.vocabulary)
    return SynthScene(bundle, scene.ground_truth, scene.gt_boxes, scene.object_classes)


def write_scene(scene: SynthScene, root) -> Path:
    """Write ``scene`` in the on-disk scene layout; returns the directory."""
    root = Path(root)
    b = scene.bundle
    for sub in ("pose", "depth", "detections"):
        (root / sub).mkdir(parents=True, exist_ok=True)
    write_vocabulary(root / "prompts.json", b.vocabulary)
    write_points(root / "points.ply", b.cloud)
    write_matrix(root / "intrinsic.txt", b.frames[0].intrinsic)
    for fr, dm, dets in zip(b.frames, b.depth_maps, b.detections):
        write_matrix(root / "pose" / f"{fr.frame_id}.txt", fr.camera_to_world)
        write_depth_png(root / "depth" / f"{fr.frame_id}.png", dm, DEPTH_SCALE)
        write_detections(root / "detections" / f"{fr.frame_id}.json", dets)
    write_proposals(root / "proposals.oy3d", b.proposals)
    write_ground_truth(root / "gt.json", scene.ground_truth)
    return root


# -- scene families used by tests and benchmarks -----------------------------

def separated_config(seed: int, n_objects: int = 4, n_cameras: int = 12, noise: float = 0.0,
                     points_per_object: int = 400, resolution=(160, 120), n_classes: int = 10,
                     spacing: float = 2.0) -> SynthConfig:
    """Objects spread on a floor grid, seen from a steep ring of cameras.

    Spacing is large relative to object size so that no two objects'
    image boxes overlap in any view.
    """
    rng = np.random.default_rng(seed)
    cols = int(math.ceil(math.sqrt(n_objects)))
    cells = rng.permutation(cols * cols)[:n_objects]
    objects = []
    for cell in cells:
        gx, gy = divmod(int(cell), cols)
        size = float(rng.uniform(0.4, 0.7))
        cx = (gx - (cols - 1) / 2.0) * spacing + rng.uniform(-0.2, 0.2)
        cy = (gy - (cols - 1) / 2.0) * spacing + rng.uniform(-0.2, 0.2)
        objects.append(ObjectSpec(str(rng.choice(["box", "sphere"])), (cx, cy, size / 2.0),
                                  (size, size, size), int(rng.integers(n_classes))))
    return SynthConfig(seed=seed, objects=tuple(objects), n_cameras=n_cameras,
                       ring_radius=0.5 + 0.3 * cols, camera_height=3.0 + 2.0 * cols,
                       resolution=tuple(resolution), points_per_object=points_per_object,
                       detector_noise=noise, prompts=DEFAULT_PROMPTS[:n_classes], focal_scale=0.9)


def random_config(seed: int, max_points: int = 5000, max_frames: int = 20) -> SynthConfig:
    """Cluttered random scene: overlapping views, occlusion, cameras of varied reach."""
    rng = np.random.default_rng(seed)
    n_obj = int(rng.integers(1, 7))
    per = int(rng.integers(50, max_points // n_obj + 1))
    objects = []
    for _ in range(n_obj):
        size = tuple(rng.uniform(0.2, 1.2, size=3).tolist())
        center = tuple(rng.uniform(-1.5, 1.5, size=3).tolist())
        objects.append(ObjectSpec(str(rng.choice(["box", "sphere"])), center, size, int(rng.integers(10))))
    W = int(rng.integers(32, 161))
    H = int(rng.integers(24, 121))
    return SynthConfig(seed=seed, objects=tuple(objects), n_cameras=int(rng.integers(1, max_frames + 1)),
                       ring_radius=float(rng.uniform(2.5, 5.0)), camera_height=float(rng.uniform(-1.0, 3.0)),
                       resolution=(W, H), points_per_object=per, detector_noise=float(rng.uniform(0, 0.5)),
                       focal_scale=float(rng.uniform(0.5, 1.2)))


def random_proposals(rng: np.random.Generator, scene: SynthScene, max_k: int = 10) -> ProposalSet:
    """GT masks mixed with random unions, crops and point soups, up to ``max_k`` proposals."""
    n = len(scene.bundle.cloud)
    gt = [g.point_indices for g in scene.ground_truth]
    masks = []
    for m in gt[:max_k]:
        keep = rng.random(m.size) < rng.uniform(0.5, 1.0)
        masks.append(m[keep] if keep.any() else m)
    while len(masks) < max_k and rng.random() < 0.8:
        size = int(rng.integers(1, max(2, n // 3)))
        masks.append(rng.choice(n, size=size, replace=False))
    conf = np.round(rng.uniform(0.05, 1.0, size=len(masks)), 3).astype(np.float32).astype(np.float64)
    return ProposalSet(tuple(masks), n, conf)


def load_config(path) -> SynthConfig:
    with open(path) as fh:
        return SynthConfig.from_dict(json.load(fh))


def benchmark_config(seed: int = 0, n_points: int = 200_000, n_frames: int = 200, n_objects: int = 150,
                     resolution=(640, 480)) -> SynthConfig:
    """Room-sized scene used for throughput measurements."""
    rng = np.random.default_rng(seed)
    objects = []
    for _ in range(n_objects):
        size = tuple(rng.uniform(0.2, 0.9, size=3).tolist())
        center = (float(rng.uniform(-4, 4)), float(rng.uniform(-4, 4)), size[2] / 2.0)
        objects.append(ObjectSpec(str(rng.choice(["box", "sphere"])), center, size, int(rng.integers(16))))
    return SynthConfig(seed=seed, objects=tuple(objects), n_cameras=n_frames, ring_radius=6.0,
                       camera_height=2.5, resolution=tuple(resolution),
                       points_per_object=n_points // n_objects, detector_noise=0.2,
                       prompts=DEFAULT_PROMPTS, focal_scale=0.6)
