"""Ground-truth / prediction files and the background-expanded label space."""
from __future__ import annotations

import json
import logging
import math
from dataclasses import dataclass, field
from typing import Iterable, Mapping, Optional

import numpy as np

from .errors import FormatError, RangeError, TadError, UnknownLabelError
from .segments import ScoredDetection, Segment, clamp_segment

logger = logging.getLogger(__name__)

BACKGROUND_SUFFIX = "--background"


@dataclass(frozen=True)
class LabelSpace:
    """Ordered class names.

    In an expanded space of size 2N, entry ``i + N`` is the background
    counterpart of entry ``i``.
    """

    names: tuple[str, ...]
    expanded: bool = False
    _index: dict = field(init=False, repr=False, compare=False)

    def __post_init__(self):
        names = tuple(self.names)
        object.__setattr__(self, "names", names)
        if any(not isinstance(n, str) or not n for n in names):
            raise TadError("label names must be non-empty strings")
        if len(set(names)) != len(names):
            raise TadError("label names must be unique")
        if self.expanded:
            n = len(names) // 2
            if len(names) % 2 or any(names[i + n] != names[i] + BACKGROUND_SUFFIX for i in range(n)):
                raise TadError("expanded label space must be [names..., names--background...]")
        object.__setattr__(self, "_index", {name: i for i, name in enumerate(names)})

    def __len__(self):
        return len(self.names)

    @property
    def base_size(self) -> int:
        return len(self.names) // 2 if self.expanded else len(self.names)

    def index(self, name: str) -> int:
        try:
            return self._index[name]
        except KeyError:
            raise UnknownLabelError(name) from None

    def name(self, index: int) -> str:
        return self.names[index]

    def base(self) -> "LabelSpace":
        """The foreground-only space (identity on a non-expanded space)."""
        return LabelSpace(self.names[: self.base_size])


def expand_label_space(base: LabelSpace) -> LabelSpace:
    if base.expanded:
        raise TadError("label space is already expanded")
    return LabelSpace(base.names + tuple(n + BACKGROUND_SUFFIX for n in base.names), expanded=True)


def fold_class_scores(scores) -> np.ndarray:
    """Map 2N-way scores over an expanded space back to the N base classes.

    Background mass is discarded and the foreground renormalised; a vector
    with no foreground mass folds to the uniform distribution.
    """
    p = np.asarray(scores, dtype=np.float64)
    if p.ndim != 1 or len(p) % 2:
        raise TadError(f"expanded score vector must have even length, got {p.shape}")
    if np.any(p < 0) or not np.all(np.isfinite(p)):
        raise RangeError("class scores must be finite and non-negative")
    fg = p[: len(p) // 2]
    total = fg.sum()
    if total <= 0:
        return np.full(len(fg), 1.0 / len(fg))
    return fg / total


def load_label_space(path) -> LabelSpace:
    """Read a JSON array of class names; background expansion is auto-detected."""
    data = read_json(path)
    if not isinstance(data, list):
        raise FormatError(f"{path}: label file must be a JSON array of strings")
    names = tuple(data)
    n = len(names) // 2
    expanded = (len(names) > 0 and len(names) % 2 == 0
                and all(isinstance(x, str) for x in names)
                and all(names[i + n] == f"{names[i]}{BACKGROUND_SUFFIX}" for i in range(n)))
    return LabelSpace(names, expanded=expanded)


def write_label_space(labels: LabelSpace, path) -> None:
    with open(path, "w", encoding="utf-8") as f:
        json.dump(list(labels.names), f, indent=1)
        f.write("\n")


@dataclass(frozen=True)
class Annotation:
    segment: Segment
    label: int


@dataclass(frozen=True)
class VideoGroundTruth:
    duration: float
    subset: str
    annotations: tuple[Annotation, ...]


@dataclass(frozen=True)
class GroundTruthDataset:
    videos: Mapping[str, VideoGroundTruth]
    labels: LabelSpace
    clamped: int = 0  # number of annotation segments clipped into [0, duration]

    def instances(self, label: int):
        """(video_id, segment) pairs for one class, videos in sorted order."""
        for vid in sorted(self.videos):
            for ann in self.videos[vid].annotations:
                if ann.label == label:
                    yield vid, ann.segment


@dataclass(frozen=True)
class PredictionSet:
    results: Mapping[str, tuple[ScoredDetection, ...]]
    labels: Optional[LabelSpace] = None
    version: str = "VERSION 1.3"

    def __post_init__(self):
        object.__setattr__(self, "results", {k: tuple(v) for k, v in self.results.items()})

    def __len__(self):
        return sum(len(v) for v in self.results.values())

    def all_detections(self) -> Iterable[ScoredDetection]:
        for vid in sorted(self.results):
            yield from self.results[vid]


def read_json(path):
    try:
        with open(path, "r", encoding="utf-8") as f:
            return json.load(f)
    except json.JSONDecodeError as e:
        raise FormatError(f"{path}: malformed JSON ({e})") from e
    except UnicodeDecodeError as e:
        raise FormatError(f"{path}: not UTF-8 ({e})") from e


def _require(obj, key, where):
    if not isinstance(obj, dict) or key not in obj:
        raise FormatError(f"{where}: missing key {key!r}")
    return obj[key]


def _number(x, where) -> float:
    if isinstance(x, bool) or not isinstance(x, (int, float)):
        raise FormatError(f"{where}: expected a number, got {x!r}")
    return float(x)


def _segment_pair(raw, where) -> tuple[float, float]:
    if not isinstance(raw, (list, tuple)) or len(raw) != 2:
        raise FormatError(f"{where}: segment must be a [start, end] pair")
    return _number(raw[0], where), _number(raw[1], where)


def load_ground_truth(path, labels: LabelSpace) -> GroundTruthDataset:
    data = read_json(path)
    database = _require(data, "database", str(path))
    if not isinstance(database, dict):
        raise FormatError(f"{path}: 'database' must be an object")
    videos = {}
    clamped = 0
    for vid, entry in database.items():
        where = f"{path}:{vid}"
        duration = _number(_require(entry, "duration", where), where)
        if not duration > 0 or not math.isfinite(duration):
            raise RangeError(f"{where}: duration must be positive, got {duration}")
        subset = entry.get("subset", "")
        anns = []
        for raw in _require(entry, "annotations", where):
            start, end = _segment_pair(_require(raw, "segment", where), where)
            label = labels.index(_require(raw, "label", where))
            if start >= end:
                raise RangeError(f"{where}: annotation [{start}, {end}] has start >= end")
            seg = Segment(start, end)
            if start < 0 or end > duration:
                seg = clamp_segment(seg, duration)
                clamped += 1
            anns.append(Annotation(seg, label))
        videos[vid] = VideoGroundTruth(duration, str(subset), tuple(anns))
    if clamped:
        logger.warning("%s: clamped %d annotation segment(s) into [0, duration]", path, clamped)
    return GroundTruthDataset(videos, labels, clamped)


def parse_predictions(data, labels: Optional[LabelSpace], where="predictions") -> PredictionSet:
    results = _require(data, "results", where)
    if not isinstance(results, dict):
        raise FormatError(f"{where}: 'results' must be an object")
    if labels is None:
        labels = infer_label_space(results)
    out = {}
    for vid, dets in results.items():
        if not isinstance(dets, list):
            raise FormatError(f"{where}:{vid}: detections must be a list")
        parsed = []
        for raw in dets:
            start, end = _segment_pair(_require(raw, "segment", f"{where}:{vid}"), f"{where}:{vid}")
            score = _number(_require(raw, "score", f"{where}:{vid}"), f"{where}:{vid}")
            if not 0.0 <= score <= 1.0:
                raise RangeError(f"{where}:{vid}: score {score} outside [0, 1]")
            if not start < end:
                raise RangeError(f"{where}:{vid}: segment [{start}, {end}] has start >= end")
            label = labels.index(_require(raw, "label", f"{where}:{vid}"))
            parsed.append(ScoredDetection(vid, Segment(start, end), label, score))
        out[vid] = parsed
    return PredictionSet(out, labels, str(data.get("version", "VERSION 1.3")))


def infer_label_space(results: Mapping) -> LabelSpace:
    """Sorted set of label names appearing in a raw results object."""
    names = set()
    for dets in results.values():
        for raw in dets if isinstance(dets, list) else ():
            if isinstance(raw, dict) and isinstance(raw.get("label"), str):
                names.add(raw["label"])
    return LabelSpace(tuple(sorted(names)))


def load_predictions(path, labels: Optional[LabelSpace] = None) -> PredictionSet:
    """Load a submission file. Without ``labels`` the space is inferred from the file."""
    return parse_predictions(read_json(path), labels, str(path))


def predictions_to_json(preds: PredictionSet, labels: Optional[LabelSpace] = None) -> dict:
    labels = labels or preds.labels
    results = {}
    for vid in sorted(preds.results):
        results[vid] = [
            {"segment": [d.segment.start, d.segment.end],
             "label": labels.name(d.label),
             "score": d.score}
            for d in preds.results[vid]
        ]
    return {"version": preds.version, "results": results, "external_data": {}}


def write_predictions(preds: PredictionSet, labels: Optional[LabelSpace], path) -> None:
    # json emits repr() floats: shortest string that round-trips bit-exactly
    text = json.dumps(predictions_to_json(preds, labels), indent=1, allow_nan=False)
    with open(path, "w", encoding="utf-8") as f:
        f.write(text + "\n")


def load_class_scores(path) -> dict[str, np.ndarray]:
    """Read ``{"<video_id>": [p_0, ..., p_{C-1}]}``."""
    data = read_json(path)
    if not isinstance(data, dict):
        raise FormatError(f"{path}: class scores must be an object of video_id -> list")
    out = {}
    for vid, probs in data.items():
        if not isinstance(probs, list):
            raise FormatError(f"{path}:{vid}: scores must be a list")
        out[vid] = np.array([_number(p, f"{path}:{vid}") for p in probs], dtype=np.float64)
    return out
