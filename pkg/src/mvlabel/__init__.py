"""Open-vocabulary labeling of class-agnostic 3D instance proposals from 2D detections."""

from .evalap import APReport, GroundTruthInstance, evaluate_ap
from .geometry import CameraFrame, DepthMap, PointCloud, Projection, invert_pose, project_points
from .labelmap import Detection2D, LabelMap, PromptVocabulary, box_weight, build_label_map
from .mvpdist import PromptDistribution, TopKSelection, gather_label_distribution, predict_class, select_topk_frames
from .pipeline import LabelingResult, RunConfig, label_scene
from .scene_io import LoadConfig, SceneBundle, export_labeled_cloud, load_scene, save_predictions
from .scoring import InstancePrediction, box_iou, nms_proposals, projected_bbox, score_mask
from .synth import SynthConfig, generate_scene, write_scene
from .visibility import (PointVisibility, ProposalSet, VisibilityConfig, VisibilityMatrix,
                         compute_depth_visibility, compute_frame_visibility, compute_mask_visibility,
                         oracle_mask_visibility)

__version__ = "0.1.0"

__all__ = [
    "APReport",
    "CameraFrame",
    "DepthMap",
    "Detection2D",
    "GroundTruthInstance",
    "InstancePrediction",
    "LabelMap",
    "LabelingResult",
    "LoadConfig",
    "PointCloud",
    "PointVisibility",
    "Projection",
    "PromptDistribution",
    "PromptVocabulary",
    "ProposalSet",
    "RunConfig",
    "SceneBundle",
    "SynthConfig",
    "TopKSelection",
    "VisibilityConfig",
    "VisibilityMatrix",
    "box_iou",
    "box_weight",
    "build_label_map",
    "compute_depth_visibility",
    "compute_frame_visibility",
    "compute_mask_visibility",
    "evaluate_ap",
    "export_labeled_cloud",
    "gather_label_distribution",
    "generate_scene",
    "invert_pose",
    "label_scene",
    "load_scene",
    "nms_proposals",
    "oracle_mask_visibility",
    "predict_class",
    "project_points",
    "projected_bbox",
    "save_predictions",
    "score_mask",
    "select_topk_frames",
    "write_scene",
]
