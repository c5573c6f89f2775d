"""Per-category soft-NMS, multi-model merging and video-level classifier ensembling."""
from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Mapping, Optional, Sequence

import numpy as np

from .annotations import LabelSpace, PredictionSet, read_json
from .errors import FormatError, RangeError, TadError
from .segments import ScoredDetection, sort_key, tiou

HARD_SIGMA = 1e-9
METHODS = ("gaussian", "linear", "hard")


@dataclass(frozen=True)
class NmsConfig:
    """Soft-NMS settings with optional per-category ``(sigma, score_floor)`` overrides.

    ``iou_threshold`` only matters for the linear and hard methods. A gaussian
    sigma below ``HARD_SIGMA`` degenerates to hard NMS that suppresses any
    overlap at all.
    """

    sigma: float = 0.5
    score_floor: float = 1e-4
    method: str = "gaussian"
    iou_threshold: float = 0.0
    per_category: Mapping[int, tuple[float, float]] = field(default_factory=dict)

    def __post_init__(self):
        if self.method not in METHODS:
            raise TadError(f"unknown NMS method {self.method!r}, expected one of {METHODS}")
        for sigma, floor in [(self.sigma, self.score_floor), *self.per_category.values()]:
            _check_params(sigma, floor)

    def for_label(self, label: Optional[int]) -> tuple[float, float]:
        return self.per_category.get(label, (self.sigma, self.score_floor))


def _check_params(sigma, floor):
    if not sigma > 0:
        raise RangeError(f"sigma must be > 0, got {sigma}")
    if not 0 <= floor < 1:
        raise RangeError(f"score_floor must lie in [0, 1), got {floor}")


def soft_nms(detections: Sequence[ScoredDetection], cfg: NmsConfig = NmsConfig()) -> list[ScoredDetection]:
    """Soft-NMS over detections of a single (video, label) group.

    Repeatedly emits the best remaining detection and decays the others by
    ``exp(-tiou**2 / sigma)`` against it (or ``1 - tiou`` above the threshold
    in linear mode). Anything that drops below the score floor is discarded.
    """
    if not detections:
        return []
    label = detections[0].label
    sigma, floor = cfg.for_label(label)
    method = cfg.method
    threshold = cfg.iou_threshold
    if method == "gaussian" and sigma < HARD_SIGMA:
        method, threshold = "hard", 0.0

    remaining = [d for d in detections if d.score >= floor]
    kept = []
    while remaining:
        best = min(remaining, key=sort_key)
        remaining.remove(best)
        kept.append(best)
        survivors = []
        for d in remaining:
            t = tiou(best.segment, d.segment)
            if method == "gaussian":
                score = d.score * math.exp(-t * t / sigma)
            elif method == "linear":
                score = d.score * (1.0 - t) if t > threshold else d.score
            else:
                if t > threshold:
                    continue
                score = d.score
            if score >= floor:
                survivors.append(d.rescored(score))
        remaining = survivors
    kept.sort(key=sort_key)
    return kept


def soft_nms_predictions(preds: PredictionSet, cfg: NmsConfig = NmsConfig()) -> PredictionSet:
    """Apply soft-NMS to every (video, label) group of a prediction set.

    Output videos are in lexicographic order and, within a video, groups are
    in ascending label order.
    """
    results = {}
    for vid in sorted(preds.results):
        groups: dict = {}
        for d in preds.results[vid]:
            groups.setdefault(d.label, []).append(d)
        out = []
        for label in sorted(groups, key=lambda x: (x is None, x)):
            out.extend(soft_nms(groups[label], cfg))
        results[vid] = out
    return PredictionSet(results, preds.labels, preds.version)


def _normalized_weights(weights, n, by="sum"):
    w = np.asarray(weights, dtype=np.float64)
    if w.shape != (n,):
        raise TadError(f"{len(w)} weights given for {n} inputs")
    if np.any(w < 0) or not np.all(np.isfinite(w)):
        raise RangeError("weights must be finite and non-negative")
    total = w.max() if by == "max" else w.sum()
    if not total > 0:
        raise TadError("weights are all zero")
    return w / total


def merge_detections(sets: Sequence[PredictionSet], weights: Sequence[float]) -> PredictionSet:
    """Union of several models' detections, each scaled by its weight over the max weight."""
    w = _normalized_weights(weights, len(sets), by="max")
    labels = next((s.labels for s in sets if s.labels is not None), None)
    for s in sets:
        if s.labels is not None and labels is not None and s.labels != labels:
            raise TadError("prediction sets use different label spaces")
    results: dict = {}
    for wi, s in zip(w, sets):
        for vid, dets in s.results.items():
            bucket = results.setdefault(vid, [])
            bucket.extend(d.rescored(d.score * float(wi)) for d in dets)
    return PredictionSet({vid: results[vid] for vid in sorted(results)}, labels)


@dataclass(frozen=True, eq=False)
class VideoClassScores:
    video_id: str
    probs: np.ndarray

    def __post_init__(self):
        p = np.asarray(self.probs, dtype=np.float64)
        if p.ndim != 1 or np.any(p < 0) or not np.all(np.isfinite(p)):
            raise RangeError(f"{self.video_id}: class scores must be a non-negative vector")
        object.__setattr__(self, "probs", p)


def ensemble_class_scores(all_scores: Sequence[VideoClassScores], weights: Sequence[float]) -> VideoClassScores:
    """Weighted mean of several classifiers' probability vectors for one video.

    Weights are normalised before mixing, so a one-hot weight vector returns
    that classifier's scores unchanged, bit for bit.
    """
    if not all_scores:
        raise TadError("nothing to ensemble")
    dims = {len(s.probs) for s in all_scores}
    if len(dims) != 1:
        raise TadError(f"class score vectors differ in length: {sorted(dims)}")
    w = _normalized_weights(weights, len(all_scores))
    fused = np.zeros(dims.pop())
    for wi, s in zip(w, all_scores):
        fused += wi * s.probs
    return VideoClassScores(all_scores[0].video_id, fused)


def ranked_classes(probs: np.ndarray) -> np.ndarray:
    """Class indices by probability, ties going to the lower index."""
    return np.argsort(-np.asarray(probs), kind="stable")


def topk_accuracy(scores: Sequence[VideoClassScores], truth: Mapping[str, int], k: int = 1) -> float:
    if k < 1:
        raise RangeError(f"k must be >= 1, got {k}")
    if not scores:
        return 0.0
    hits = 0
    for s in scores:
        if s.video_id not in truth:
            raise TadError(f"no ground-truth label for video {s.video_id!r}")
        hits += int(truth[s.video_id] in ranked_classes(s.probs)[:k])
    return 100.0 * hits / len(scores)


def assign_labels(proposals: Sequence[ScoredDetection], class_scores: VideoClassScores,
                  top_n: int = 1) -> list[ScoredDetection]:
    """Label class-agnostic proposals with the video's top-n classes.

    Each proposal yields ``top_n`` detections scored ``proposal * p_class``.
    """
    top = ranked_classes(class_scores.probs)[:top_n]
    out = []
    for c in top:
        pc = float(class_scores.probs[c])
        out.extend(ScoredDetection(p.video_id, p.segment, int(c), p.score * pc) for p in proposals)
    return out


@dataclass(frozen=True)
class EnsembleSpec:
    predictions: tuple[str, ...]
    weights: tuple[float, ...]
    nms: NmsConfig


def load_ensemble_spec(path, labels: Optional[LabelSpace] = None) -> EnsembleSpec:
    """Parse ``{"models": [{"predictions", "weight"}], "nms": {...}}``.

    ``per_category`` keys are label names and need ``labels`` to resolve.
    Relative prediction paths are taken as given (relative to the CWD).
    """
    data = read_json(path)
    if not isinstance(data, dict) or not isinstance(data.get("models"), list) or not data["models"]:
        raise FormatError(f"{path}: 'models' must be a non-empty list")
    preds, weights = [], []
    for m in data["models"]:
        if not isinstance(m, dict) or "predictions" not in m:
            raise FormatError(f"{path}: each model needs a 'predictions' path")
        preds.append(str(m["predictions"]))
        weights.append(float(m.get("weight", 1.0)))
    raw = data.get("nms", {})
    sigma = float(raw.get("sigma", NmsConfig.sigma))
    floor = float(raw.get("score_floor", NmsConfig.score_floor))
    overrides = {}
    for name, o in raw.get("per_category", {}).items():
        if labels is None:
            raise TadError("per-category NMS overrides need a label space")
        overrides[labels.index(name)] = (float(o.get("sigma", sigma)), float(o.get("score_floor", floor)))
    nms = NmsConfig(sigma, floor, raw.get("method", "gaussian"), float(raw.get("iou_threshold", 0.0)), overrides)
    return EnsembleSpec(tuple(preds), tuple(weights), nms)
