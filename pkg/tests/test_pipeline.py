import numpy as np
import pytest

from mvlabel.labelmap import build_label_map
from mvlabel.mvpdist import gather_label_distribution, predict_class, select_topk_frames
from mvlabel.pipeline import RunConfig, label_scene
from mvlabel.scene_io import SceneBundle
from mvlabel.scoring import nms_proposals, score_mask
from mvlabel.synth import generate_scene, random_config, random_proposals, with_proposals
from mvlabel.errors import GenerationError, ModeMismatchError
from mvlabel.visibility import compute_mask_visibility, point_visibility

from conftest import flat_depth


def reference_labels(bundle, cfg):
    """Straight composition of the per-stage operations on full projections."""
    props = nms_proposals(bundle.proposals, cfg.nms_iou)
    proj, pv = point_visibility(bundle.cloud, bundle.frames, bundle.depth_maps, cfg.visibility)
    vis = compute_mask_visibility(pv, props)
    maps = [build_label_map(d, f.width, f.height, cfg.label_map_mode)
            for d, f in zip(bundle.detections, bundle.frames)]
    out = []
    for j in range(len(props)):
        sel = select_topk_frames(vis, j, cfg.topk)
        dist = gather_label_distribution(j, sel, maps, proj, pv, props, len(bundle.vocabulary))
        cls, s_class = predict_class(dist)
        out.append(score_mask(j, sel, bundle.detections, proj, pv, props, s_class, cls))
    return props, out


@pytest.mark.parametrize("seed", range(6))
def test_frame_major_matches_reference(seed):
    try:
        scene = generate_scene(random_config(seed, max_points=2000, max_frames=10))
    except GenerationError:
        pytest.skip("scene generation rejected this seed")
    rng = np.random.default_rng(seed)
    bundle = with_proposals(scene, random_proposals(rng, scene, 8)).bundle
    cfg = RunConfig(topk=4, nms_iou=0.9, threads=1)
    res = label_scene(bundle, cfg)
    props, ref = reference_labels(bundle, cfg)
    got = sorted(res.instances + res.diagnostics, key=lambda p: p.proposal_id)
    assert len(got) == len(ref) == len(props)
    masks = {pid: m.tolist() for pid, m in zip(res.kept, props.masks)}
    by_mask = {tuple(m.tolist()): r for m, r in zip(props.masks, ref)}
    for p in got:
        r = by_mask[tuple(masks[p.proposal_id])]
        assert (p.class_id, p.s_class, p.s_iou, p.score) == (r.class_id, r.s_class, r.s_iou, r.score)


def test_no_detections_gives_no_instances(clean_scene):
    b = clean_scene.bundle
    empty = SceneBundle(b.cloud, b.frames, b.depth_maps, tuple([] for _ in b.frames), b.proposals, b.vocabulary)
    res = label_scene(empty, RunConfig(threads=1))
    assert res.instances == []
    assert sorted(p.proposal_id for p in res.diagnostics) == list(range(len(b.proposals)))
    assert all(p.score == 0.0 and p.class_id is None for p in res.diagnostics)


def test_no_valid_depth_gives_no_instances(clean_scene):
    b = clean_scene.bundle
    holes = tuple(flat_depth(f.width, f.height, 0.0) for f in b.frames)
    res = label_scene(SceneBundle(b.cloud, b.frames, holes, b.detections, b.proposals, b.vocabulary),
                      RunConfig(threads=1))
    assert res.instances == [] and not res.visibility.fractions.any()


def test_threads_do_not_change_results(noisy_scene):
    a = label_scene(noisy_scene.bundle, RunConfig(threads=1, frame_block=3))
    b = label_scene(noisy_scene.bundle, RunConfig(threads=4, frame_block=16))
    assert [p.to_dict() for p in a.instances] == [p.to_dict() for p in b.instances]


def test_hg_mode_needs_pixel_masks(clean_scene):
    with pytest.raises(ModeMismatchError):
        label_scene(clean_scene.bundle, RunConfig(label_map_mode="HG", threads=1))


def test_invalid_config():
    for bad in (dict(topk=0), dict(tau_depth=0), dict(nms_iou=1.5), dict(label_map_mode="XX"), dict(threads=0)):
        with pytest.raises(ValueError):
            RunConfig(**bad)


def test_timings_recorded(clean_scene):
    res = label_scene(clean_scene.bundle, RunConfig(threads=1))
    assert {"nms", "visibility", "topk", "mvpdist_scoring"} <= set(res.timings)
