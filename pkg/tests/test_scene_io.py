import json
import shutil

import numpy as np
import pytest
from PIL import Image

from mvlabel.errors import (InvalidCameraError, InvalidPoseError, SceneFormatError, ValidationError)
from mvlabel.geometry import DepthMap, PointCloud
from mvlabel.labelmap import Detection2D
from mvlabel.scene_io import (UNLABELED_COLOR, LoadConfig, read_ground_truth, class_color, export_labeled_cloud, load_scene, read_depth_png,
                              read_detections, read_oy3d, read_points, read_predictions, read_proposals,
                              rle_decode, rle_encode, save_predictions, write_depth_png, write_detections,
                              write_points, write_proposals)
from mvlabel.scoring import InstancePrediction
from mvlabel.synth import SynthScene, generate_scene, separated_config, write_scene
from mvlabel.visibility import ProposalSet
from plyfile import PlyData

from conftest import identity_frame


@pytest.fixture(scope="module")
def scene_dir(tmp_path_factory):
    root = tmp_path_factory.mktemp("scene")
    write_scene(generate_scene(separated_config(5, n_objects=3, n_cameras=4)), root)
    return root


def fresh_copy(scene_dir, tmp_path):
    dst = tmp_path / "s"
    shutil.copytree(scene_dir, dst)
    return dst


def test_proposals_oy3d_round_trip(tmp_path):
    props = ProposalSet(([3, 1, 2], [0], list(range(7))), 10, [0.5, 0.25, 1.0])
    write_proposals(tmp_path / "proposals.oy3d", props)
    back = read_oy3d(tmp_path / "proposals.oy3d", 10)
    assert [m.tolist() for m in back.masks] == [m.tolist() for m in props.masks]
    assert back.confidences.tolist() == props.confidences.tolist()


def test_proposals_json(tmp_path):
    doc = {"proposals": [{"confidence": 0.75, "indices": [4, 2]}, {"confidence": 0.5, "indices": [0]}]}
    (tmp_path / "proposals.json").write_text(json.dumps(doc))
    props = read_proposals(tmp_path, 5)
    assert [m.tolist() for m in props.masks] == [[2, 4], [0]]
    assert props.confidences.tolist() == [0.75, 0.5]


def test_oy3d_preferred_over_json(tmp_path):
    write_proposals(tmp_path / "proposals.oy3d", ProposalSet(([1],), 3, [1.0]))
    (tmp_path / "proposals.json").write_text(json.dumps({"proposals": [{"confidence": 1, "indices": [2]}]}))
    assert read_proposals(tmp_path, 3).masks[0].tolist() == [1]


def test_detections_round_trip(tmp_path):
    frame = identity_frame(0, 50, 40)
    dets = [Detection2D((1.5, 2.0, 30.25, 20.0), 3, 0.5), Detection2D((0.0, 0.0, 5.0, 5.0), 0, 0.9)]
    write_detections(tmp_path / "0.json", dets)
    back = read_detections(tmp_path / "0.json", frame, 10)
    assert [(d.box, d.class_id, d.score) for d in back] == [(d.box, d.class_id, d.score) for d in dets]


def test_detection_boxes_clamped(tmp_path):
    frame = identity_frame(0, 50, 40)
    write_detections(tmp_path / "0.json", [Detection2D((-5, -5, 80, 80), 1), Detection2D((60, 60, 70, 70), 1)])
    back = read_detections(tmp_path / "0.json", frame, 10)
    assert [d.box for d in back] == [(0.0, 0.0, 50.0, 40.0)]


def test_out_of_vocabulary_class_rejected(tmp_path):
    write_detections(tmp_path / "7.json", [Detection2D((0, 0, 5, 5), 99)])
    with pytest.raises(ValidationError, match="7.json.*frame 7"):
        read_detections(tmp_path / "7.json", identity_frame(7, 50, 40), 10)


def test_depth_scale(tmp_path):
    Image.fromarray(np.array([[2000, 0], [1000, 65535]], dtype=np.uint16)).save(tmp_path / "d.png")
    d = read_depth_png(tmp_path / "d.png", 1000.0)
    assert d.depth.tolist() == [[2.0, 0.0], [1.0, 65.535]]
    assert d.valid.tolist() == [[True, False], [True, True]]


def test_depth_png_round_trip(tmp_path):
    d = DepthMap(np.array([[1.234, 0.0, 3.5]]))
    write_depth_png(tmp_path / "d.png", d)
    assert read_depth_png(tmp_path / "d.png").depth.tolist() == [[1.234, 0.0, 3.5]]


def test_points_ply_and_bin(tmp_path):
    xyz = np.random.default_rng(0).normal(size=(20, 3))
    write_points(tmp_path / "points.ply", PointCloud.from_xyz(xyz))
    assert np.array_equal(read_points(tmp_path).xyz, xyz)
    (tmp_path / "points.ply").unlink()
    xyz.astype("<f8").tofile(tmp_path / "points.bin")
    assert np.array_equal(read_points(tmp_path).xyz, xyz)


def test_rle_round_trip():
    rng = np.random.default_rng(1)
    for shape in [(1, 1), (3, 7), (12, 5)]:
        for p in (0.0, 0.3, 1.0):
            m = rng.random(shape) < p
            assert np.array_equal(rle_decode(rle_encode(m)), m)


def test_mask_sidecar_round_trip(tmp_path):
    frame = identity_frame(0, 8, 6)
    pm = np.zeros((6, 8), bool)
    pm[1:3, 2:5] = True
    write_detections(tmp_path / "0.json", [Detection2D((2, 1, 5, 3), 2, 1.0, pm)])
    assert (tmp_path / "0.masks.json").exists()
    back = read_detections(tmp_path / "0.json", frame, 4)
    assert np.array_equal(back[0].pixel_mask, pm)


def test_scene_round_trip(scene_dir, tmp_path):
    a = load_scene(scene_dir)
    b = load_scene(write_scene(SynthScene(a, read_ground_truth(scene_dir / "gt.json")), tmp_path / "again"))
    assert np.array_equal(a.cloud.points, b.cloud.points)
    for fa, fb in zip(a.frames, b.frames):
        assert np.array_equal(fa.extrinsic, fb.extrinsic) and np.array_equal(fa.intrinsic, fb.intrinsic)
    for da, db in zip(a.depth_maps, b.depth_maps):
        assert np.array_equal(da.depth, db.depth)
    assert [[(d.box, d.class_id) for d in f] for f in a.detections] == \
           [[(d.box, d.class_id) for d in f] for f in b.detections]
    assert [m.tolist() for m in a.proposals.masks] == [m.tolist() for m in b.proposals.masks]


def test_frame_stride(scene_dir):
    assert load_scene(scene_dir).frame_ids == [0, 1, 2, 3]
    assert load_scene(scene_dir, LoadConfig(frame_stride=3)).frame_ids == [0, 3]


def _drop(path):
    path.unlink()


CORRUPTIONS = {
    "missing_prompts": (lambda r: _drop(r / "prompts.json"), SceneFormatError),
    "missing_points": (lambda r: _drop(r / "points.ply"), SceneFormatError),
    "malformed_intrinsic": (lambda r: (r / "intrinsic.txt").write_text("1 2 3\n"), SceneFormatError),
    "negative_focal": (lambda r: (r / "intrinsic.txt").write_text(
        "-100 0 80 0\n0 100 60 0\n0 0 1 0\n0 0 0 1\n"), InvalidCameraError),
    "singular_pose": (lambda r: (r / "pose" / "1.txt").write_text(
        "0 0 0 0\n0 0 0 0\n0 0 0 0\n0 0 0 1\n"), InvalidPoseError),
    "nan_pose": (lambda r: (r / "pose" / "2.txt").write_text(
        "nan 0 0 0\n0 1 0 0\n0 0 1 0\n0 0 0 1\n"), InvalidPoseError),
    "bad_class": (lambda r: (r / "detections" / "0.json").write_text(
        json.dumps({"detections": [{"box": [0, 0, 4, 4], "class_id": 99}]})), ValidationError),
    "degenerate_box": (lambda r: (r / "detections" / "0.json").write_text(
        json.dumps({"detections": [{"box": [5, 0, 4, 4], "class_id": 0}]})), ValidationError),
    "malformed_detection_json": (lambda r: (r / "detections" / "0.json").write_text("{"), SceneFormatError),
    "missing_depth": (lambda r: _drop(r / "depth" / "3.png"), SceneFormatError),
    "truncated_proposals": (lambda r: (r / "proposals.oy3d").write_bytes(
        (r / "proposals.oy3d").read_bytes()[:-3]), SceneFormatError),
    "proposal_out_of_range": (lambda r: write_proposals(
        r / "proposals.oy3d", ProposalSet(([0, 10 ** 6],), 10 ** 6 + 1)), ValidationError),
    "no_poses": (lambda r: [_drop(p) for p in (r / "pose").iterdir()], SceneFormatError),
}


@pytest.mark.parametrize("name", sorted(CORRUPTIONS))
def test_corrupted_scene(scene_dir, tmp_path, name):
    root = fresh_copy(scene_dir, tmp_path)
    corrupt, err = CORRUPTIONS[name]
    corrupt(root)
    with pytest.raises(err):
        load_scene(root)


def test_missing_directory(tmp_path):
    with pytest.raises(SceneFormatError):
        load_scene(tmp_path / "nope")


def pred(pid, cls, score, idx):
    return InstancePrediction(pid, cls, None if cls is None else f"c{cls}", 1.0, score, score,
                              None if idx is None else np.asarray(idx))


def test_predictions_schema(tmp_path):
    out = tmp_path / "p.json"
    save_predictions([pred(3, 1, 0.5, [0, 2])], out)
    doc = json.loads(out.read_text())
    assert set(doc) == {"instances"}
    inst = doc["instances"][0]
    assert {"proposal_id", "class_id", "prompt", "s_class", "s_iou", "score", "point_indices"} <= set(inst)
    assert inst["proposal_id"] == 3 and inst["class_id"] == 1 and inst["point_indices"] == [0, 2]
    back = read_predictions(out)[0]
    assert back.proposal_id == 3 and back.score == 0.5 and back.point_indices.tolist() == [0, 2]


def test_empty_predictions(tmp_path):
    save_predictions([], tmp_path / "p.json")
    assert json.loads((tmp_path / "p.json").read_text()) == {"instances": []}


def test_export_labeled_cloud(tmp_path):
    cloud = PointCloud.from_xyz(np.arange(24, dtype=float).reshape(8, 3))
    export_labeled_cloud(cloud, [pred(0, 2, 0.7, [0, 1, 2, 3])], tmp_path / "c.ply")
    v = PlyData.read(str(tmp_path / "c.ply"))["vertex"]
    rgb = np.stack([v["red"], v["green"], v["blue"]], axis=1)
    assert len(rgb) == 8
    assert (rgb[:4] == class_color(2)).all()
    assert (rgb[4:] == UNLABELED_COLOR).all()
    assert np.array_equal(np.stack([v["x"], v["y"], v["z"]], axis=1), cloud.xyz)
