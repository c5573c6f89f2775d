"""Deterministic post-processing, losses and evaluation for temporal action detection."""

__version__ = "0.1.0"

from .annotations import (
    GroundTruthDataset, LabelSpace, PredictionSet, expand_label_space, fold_class_scores,
    load_ground_truth, load_label_space, load_predictions, write_predictions,
)
from .cmap import ConfidenceMap, extract_top_k, fuse_maps, read_map, write_map
from .ensemble import (
    NmsConfig, VideoClassScores, assign_labels, ensemble_class_scores, merge_detections, soft_nms,
    soft_nms_predictions, topk_accuracy,
)
from .errors import FormatError, RangeError, TadError, UnknownLabelError
from .evaluation import EvalConfig, EvalReport, average_precision, evaluate, select_top_m
from .losses import (
    CircleParams, SamplerConfig, SimilarityBatch, TripletParams, circle_loss, combined_loss,
    cross_entropy, pk_sample, triplet_loss,
)
from .segments import FakeProposal, ScoredDetection, Segment, clamp_segment, generate_fake_proposals, tiou
