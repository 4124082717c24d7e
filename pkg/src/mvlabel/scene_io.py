"""Reading and writing scene directories.

Layout::

    points.ply | points.bin        point cloud
    intrinsic.txt                  4x4 intrinsic, row-major
    pose/<id>.txt                  4x4 camera-to-world, row-major
    depth/<id>.png                 16-bit depth, value / depth_scale meters, 0 = invalid
    detections/<id>.json           {"detections": [{"box": [x1,y1,x2,y2], "class_id": k, "score": s}]}
    detections/<id>.masks.json     optional run-length pixel masks, one per detection
    proposals.oy3d | proposals.json
    prompts.json                   ["prompt 0", "prompt 1", ...]
    gt.json                        optional ground truth instances

``points.bin`` is a headerless little-endian float64 ``N x 3`` array.
"""

from __future__ import annotations

import colorsys
import json
import logging
import struct
from dataclasses import dataclass
from pathlib import Path
from typing import List, Optional, Sequence

import numpy as np
from PIL import Image
from plyfile import PlyData, PlyElement

from .errors import InputError, InvalidPoseError, SceneFormatError, ValidationError
from .evalap import GroundTruthInstance
from .geometry import CameraFrame, DepthMap, PointCloud
from .labelmap import Detection2D, PromptVocabulary, clamp_detection
from .scoring import InstancePrediction
from .visibility import ProposalSet

logger = logging.getLogger(__name__)

OY3D_MAGIC = b"OY3D"
OY3D_VERSION = 1
UNLABELED_COLOR = (128, 128, 128)


@dataclass(frozen=True)
class LoadConfig:
    depth_scale: float = 1000.0
    frame_stride: int = 1

    def __post_init__(self):
        if not self.depth_scale > 0:
            raise ValueError("depth_scale must be positive")
        if self.frame_stride < 1:
            raise ValueError("frame_stride must be >= 1")


@dataclass(frozen=True, eq=False)
class SceneBundle:
    cloud: PointCloud
    frames: tuple
    depth_maps: tuple
    detections: tuple
    proposals: ProposalSet
    vocabulary: PromptVocabulary

    def __post_init__(self):
        n = len(self.frames)
        if len(self.depth_maps) != n or len(self.detections) != n:
            raise ValidationError("frames, depth maps and detections must be index-aligned")
        if self.proposals.n_points != len(self.cloud):
            raise ValidationError("proposals refer to a cloud of a different size")

    @property
    def frame_ids(self) -> List[int]:
        return [f.frame_id for f in self.frames]


# -- small readers ---------------------------------------------------------

def _read_json(path: Path):
    try:
        with open(path) as fh:
            return json.load(fh)
    except FileNotFoundError:
        raise SceneFormatError(f"{path}: missing file") from None
    except json.JSONDecodeError as e:
        raise SceneFormatError(f"{path}: malformed JSON ({e})") from None


def read_matrix(path: Path) -> np.ndarray:
    try:
        m = np.loadtxt(path, dtype=np.float64, ndmin=2)
    except FileNotFoundError:
        raise SceneFormatError(f"{path}: missing file") from None
    except ValueError as e:
        raise SceneFormatError(f"{path}: malformed matrix ({e})") from None
    if m.shape != (4, 4):
        raise SceneFormatError(f"{path}: expected a 4x4 matrix, got shape {m.shape}")
    return m


def write_matrix(path: Path, m: np.ndarray):
    with open(path, "w") as fh:
        for row in np.asarray(m, dtype=np.float64):
            fh.write(" ".join(repr(float(v)) for v in row) + "\n")


def read_points(root: Path) -> PointCloud:
    ply, raw = root / "points.ply", root / "points.bin"
    if ply.exists():
        try:
            v = PlyData.read(str(ply))["vertex"]
            xyz = np.stack([np.asarray(v[c], dtype=np.float64) for c in "xyz"], axis=1)
            names = v.data.dtype.names
            colors = None
            if all(c in names for c in ("red", "green", "blue")):
                colors = np.stack([np.asarray(v[c], dtype=np.uint8) for c in ("red", "green", "blue")], axis=1)
        except Exception as e:
            raise SceneFormatError(f"{ply}: unreadable PLY ({e})") from None
    elif raw.exists():
        data = np.fromfile(raw, dtype="<f8")
        if data.size == 0 or data.size % 3:
            raise SceneFormatError(f"{raw}: size is not a multiple of 3 doubles")
        xyz, colors = data.reshape(-1, 3), None
    else:
        raise SceneFormatError(f"{root}: missing points.ply or points.bin")
    try:
        return PointCloud.from_xyz(xyz, colors)
    except ValueError as e:
        raise SceneFormatError(f"{root}: {e}") from None


def write_points(path: Path, cloud: PointCloud, colors: Optional[np.ndarray] = None):
    path = Path(path)
    if path.suffix == ".bin":
        np.ascontiguousarray(cloud.xyz, dtype="<f8").tofile(path)
        return
    colors = cloud.colors if colors is None else colors
    fields = [("x", "<f8"), ("y", "<f8"), ("z", "<f8")]
    if colors is not None:
        fields += [("red", "u1"), ("green", "u1"), ("blue", "u1")]
    arr = np.empty(len(cloud), dtype=fields)
    arr["x"], arr["y"], arr["z"] = cloud.xyz.T
    if colors is not None:
        arr["red"], arr["green"], arr["blue"] = np.asarray(colors, dtype=np.uint8).T
    PlyData([PlyElement.describe(arr, "vertex")], byte_order="<").write(str(path))


def read_depth_png(path: Path, depth_scale: float = 1000.0) -> DepthMap:
    try:
        with Image.open(path) as img:
            raw = np.array(img)
    except FileNotFoundError:
        raise SceneFormatError(f"{path}: missing file") from None
    except OSError as e:
        raise SceneFormatError(f"{path}: unreadable PNG ({e})") from None
    if raw.ndim != 2:
        raise SceneFormatError(f"{path}: depth PNG must be single-channel")
    if raw.dtype != np.uint16:
        if raw.min() < 0 or raw.max() > 0xFFFF:
            raise SceneFormatError(f"{path}: depth values out of 16-bit range")
        raw = raw.astype(np.uint16)
    return DepthMap(raw.astype(np.float64) / depth_scale)


def depth_to_raw(depth: DepthMap, depth_scale: float = 1000.0) -> np.ndarray:
    raw = np.rint(depth.depth * depth_scale)
    if raw.max(initial=0) > 0xFFFF:
        raise InputError("depth exceeds the 16-bit PNG range at this depth_scale")
    return raw.astype(np.uint16)


def write_depth_png(path: Path, depth: DepthMap, depth_scale: float = 1000.0):
    Image.fromarray(depth_to_raw(depth, depth_scale)).save(path)


# -- masks -----------------------------------------------------------------

def rle_encode(mask: np.ndarray) -> dict:
    """Row-major run lengths, starting with a (possibly empty) run of zeros."""
    flat = np.asarray(mask, dtype=bool).ravel()
    change = np.flatnonzero(flat[1:] != flat[:-1]) + 1
    bounds = np.concatenate([[0], change, [flat.size]])
    runs = np.diff(bounds).tolist()
    if flat.size and flat[0]:
        runs = [0] + runs
    return {"size": list(mask.shape), "counts": runs}


def rle_decode(rle: dict) -> np.ndarray:
    h, w = rle["size"]
    counts = np.asarray(rle["counts"], dtype=np.int64)
    if counts.sum() != h * w or np.any(counts < 0):
        raise ValueError("run lengths do not cover the mask")
    values = np.arange(counts.size) % 2 == 1
    return np.repeat(values, counts).reshape(h, w)


# -- detections ------------------------------------------------------------

def read_detections(path: Path, frame: CameraFrame, n_classes: int) -> List[Detection2D]:
    doc = _read_json(path)
    try:
        raw = doc["detections"]
    except (TypeError, KeyError):
        raise SceneFormatError(f"{path}: missing 'detections' list") from None
    masks = None
    sidecar = path.with_name(path.stem + ".masks.json")
    if sidecar.exists():
        masks = _read_json(sidecar).get("masks")
        if masks is None or len(masks) != len(raw):
            raise SceneFormatError(f"{sidecar}: need exactly one mask per detection")
    dets = []
    for n, d in enumerate(raw):
        try:
            box, cid = d["box"], int(d["class_id"])
            score = float(d.get("score", 1.0))
        except (TypeError, KeyError, ValueError):
            raise SceneFormatError(f"{path}: detection {n} is malformed") from None
        if not 0 <= cid < n_classes:
            raise ValidationError(
                f"{path} (frame {frame.frame_id}): class_id {cid} outside vocabulary of {n_classes}")
        pm = None
        if masks is not None:
            try:
                pm = rle_decode(masks[n])
            except (KeyError, ValueError, TypeError) as e:
                raise SceneFormatError(f"{sidecar}: mask {n} is malformed ({e})") from None
            if pm.shape != (frame.height, frame.width):
                raise ValidationError(f"{sidecar} (frame {frame.frame_id}): mask {n} has shape {pm.shape}")
        try:
            det = Detection2D(tuple(box), cid, score, pm)
        except ValidationError as e:
            raise ValidationError(f"{path} (frame {frame.frame_id}): detection {n}: {e}") from None
        det = clamp_detection(det, frame.width, frame.height)
        if det is not None:
            dets.append(det)
    return dets


def write_detections(path: Path, dets: Sequence[Detection2D]):
    path = Path(path)
    doc = {"detections": [{"box": list(d.box), "class_id": d.class_id, "score": d.score} for d in dets]}
    with open(path, "w") as fh:
        json.dump(doc, fh)
    if dets and all(d.pixel_mask is not None for d in dets):
        with open(path.with_name(path.stem + ".masks.json"), "w") as fh:
            json.dump({"masks": [rle_encode(d.pixel_mask) for d in dets]}, fh)


# -- proposals -------------------------------------------------------------

def read_proposals(root: Path, n_points: int) -> ProposalSet:
    binp, jsonp = root / "proposals.oy3d", root / "proposals.json"
    if binp.exists():
        return read_oy3d(binp, n_points)
    doc = _read_json(jsonp)
    try:
        items = doc["proposals"]
        masks = [np.asarray(p["indices"], dtype=np.int64) for p in items]
        conf = [float(p.get("confidence", 1.0)) for p in items]
    except (TypeError, KeyError, ValueError):
        raise SceneFormatError(f"{jsonp}: malformed proposals") from None
    try:
        return ProposalSet(tuple(masks), n_points, np.asarray(conf))
    except ValidationError as e:
        raise ValidationError(f"{jsonp}: {e}") from None


def read_oy3d(path: Path, n_points: int) -> ProposalSet:
    buf = Path(path).read_bytes()
    if len(buf) < 10 or buf[:4] != OY3D_MAGIC:
        raise SceneFormatError(f"{path}: not an OY3D proposal file")
    version, k = struct.unpack_from("<HI", buf, 4)
    if version != OY3D_VERSION:
        raise SceneFormatError(f"{path}: unsupported OY3D version {version}")
    off = 10
    masks, conf = [], []
    for j in range(k):
        if off + 8 > len(buf):
            raise SceneFormatError(f"{path}: truncated at proposal {j}")
        c, n = struct.unpack_from("<fI", buf, off)
        off += 8
        if off + 4 * n > len(buf):
            raise SceneFormatError(f"{path}: truncated at proposal {j}")
        masks.append(np.frombuffer(buf, dtype="<u4", count=n, offset=off).astype(np.int64))
        conf.append(c)
        off += 4 * n
    if off != len(buf):
        raise SceneFormatError(f"{path}: trailing bytes after {k} proposals")
    try:
        return ProposalSet(tuple(masks), n_points, np.asarray(conf, dtype=np.float64))
    except ValidationError as e:
        raise ValidationError(f"{path}: {e}") from None


def write_proposals(path: Path, props: ProposalSet):
    path = Path(path)
    if path.suffix == ".json":
        doc = {"proposals": [{"confidence": float(c), "indices": m.tolist()}
                             for m, c in zip(props.masks, props.confidences)]}
        with open(path, "w") as fh:
            json.dump(doc, fh)
        return
    parts = [OY3D_MAGIC, struct.pack("<HI", OY3D_VERSION, len(props))]
    for m, c in zip(props.masks, props.confidences):
        parts.append(struct.pack("<fI", c, m.size))
        parts.append(m.astype("<u4").tobytes())
    path.write_bytes(b"".join(parts))


# -- vocabulary / ground truth ---------------------------------------------

def read_vocabulary(path: Path) -> PromptVocabulary:
    doc = _read_json(path)
    if not isinstance(doc, list):
        raise SceneFormatError(f"{path}: expected a JSON list of prompts")
    try:
        return PromptVocabulary(tuple(doc))
    except ValidationError as e:
        raise ValidationError(f"{path}: {e}") from None


def write_vocabulary(path: Path, vocab: PromptVocabulary):
    with open(path, "w") as fh:
        json.dump(list(vocab.prompts), fh)


def read_ground_truth(path: Path) -> List[GroundTruthInstance]:
    doc = _read_json(Path(path))
    try:
        return [GroundTruthInstance(np.asarray(g["point_indices"], dtype=np.int64), int(g["class_id"]))
                for g in doc["instances"]]
    except (TypeError, KeyError, ValueError):
        raise SceneFormatError(f"{path}: malformed ground truth") from None


def write_ground_truth(path: Path, gts: Sequence[GroundTruthInstance]):
    doc = {"instances": [{"class_id": g.class_id, "point_indices": g.point_indices.tolist()} for g in gts]}
    with open(path, "w") as fh:
        json.dump(doc, fh)


# -- scenes ----------------------------------------------------------------

def _frame_ids(root: Path) -> List[int]:
    pose_dir = root / "pose"
    if not pose_dir.is_dir():
        raise SceneFormatError(f"{pose_dir}: missing pose directory")
    ids = []
    for p in pose_dir.glob("*.txt"):
        try:
            ids.append(int(p.stem))
        except ValueError:
            raise SceneFormatError(f"{p}: pose file name is not a frame number") from None
    if not ids:
        raise SceneFormatError(f"{pose_dir}: no poses")
    return sorted(ids)


def _frame_file(root: Path, sub: str, fid: int, suffix: str) -> Path:
    """Resolve ``<sub>/<fid><suffix>``, accepting zero-padded names."""
    plain = root / sub / f"{fid}{suffix}"
    if plain.exists():
        return plain
    for cand in (root / sub).glob(f"*{suffix}"):
        stem = cand.name[:-len(suffix)]
        if stem.isdigit() and int(stem) == fid:
            return cand
    return plain


def load_scene(root, config: LoadConfig = LoadConfig()) -> SceneBundle:
    """Load and validate a scene directory.

    Poses on disk are camera-to-world and are inverted here. Image size is
    taken from each frame's depth map. Every ``frame_stride``-th frame is
    kept, in frame-number order.
    """
    root = Path(root)
    if not root.is_dir():
        raise SceneFormatError(f"{root}: scene directory does not exist")
    vocab = read_vocabulary(root / "prompts.json")
    cloud = read_points(root)
    intrinsic = read_matrix(root / "intrinsic.txt")
    frames, depths, dets = [], [], []
    for fid in _frame_ids(root)[::config.frame_stride]:
        pose_path = _frame_file(root, "pose", fid, ".txt")
        depth = read_depth_png(_frame_file(root, "depth", fid, ".png"), config.depth_scale)
        try:
            frame = CameraFrame.from_pose(fid, intrinsic, read_matrix(pose_path), depth.width, depth.height)
        except InvalidPoseError as e:
            raise InvalidPoseError(f"{pose_path} (frame {fid}): {e}") from None
        frames.append(frame)
        depths.append(depth)
        dets.append(read_detections(_frame_file(root, "detections", fid, ".json"), frame, len(vocab)))
    props = read_proposals(root, len(cloud))
    return SceneBundle(cloud, tuple(frames), tuple(depths), tuple(dets), props, vocab)


def save_predictions(preds: Sequence[InstancePrediction], out_path,
                     diagnostics: Optional[Sequence[InstancePrediction]] = None,
                     with_points: bool = True):
    doc = {"instances": [p.to_dict(with_points) for p in preds]}
    if diagnostics is not None:
        doc["diagnostics"] = [p.to_dict(with_points=False) for p in diagnostics]
    text = json.dumps(doc, indent=1)
    try:
        Path(out_path).write_text(text + "\n")
    except OSError as e:
        raise InputError(f"{out_path}: cannot write predictions ({e})") from None


def read_predictions(path) -> List[InstancePrediction]:
    doc = _read_json(Path(path))
    out = []
    try:
        for d in doc["instances"]:
            idx = d.get("point_indices")
            out.append(InstancePrediction(
                int(d["proposal_id"]), d["class_id"], d.get("prompt"), float(d["s_class"]),
                float(d["s_iou"]), float(d["score"]),
                None if idx is None else np.asarray(idx, dtype=np.int64)))
    except (TypeError, KeyError, ValueError):
        raise SceneFormatError(f"{path}: malformed predictions") from None
    return out


def class_color(class_id: int) -> tuple:
    """Stable, well-separated RGB color for a class id."""
    h = (class_id * 0.618033988749895) % 1.0
    r, g, b = colorsys.hsv_to_rgb(h, 0.75, 0.95)
    return int(round(r * 255)), int(round(g * 255)), int(round(b * 255))


def labeled_colors(n_points: int, preds: Sequence[InstancePrediction]) -> np.ndarray:
    """Per-point colors; higher-scoring instances are painted last and win overlaps."""
    colors = np.tile(np.array(UNLABELED_COLOR, dtype=np.uint8), (n_points, 1))
    for p in sorted(preds, key=lambda p: (p.score, -p.proposal_id)):
        if p.class_id is None or p.point_indices is None:
            continue
        colors[np.asarray(p.point_indices, dtype=np.intp)] = class_color(p.class_id)
    return colors


def export_labeled_cloud(cloud: PointCloud, preds: Sequence[InstancePrediction], out_path):
    try:
        write_points(Path(out_path), cloud, labeled_colors(len(cloud), preds))
    except OSError as e:
        raise InputError(f"{out_path}: cannot write point cloud ({e})") from None
