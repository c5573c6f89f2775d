"""ActivityNet-style detection metrics: AP per tIoU threshold and average mAP."""
from __future__ import annotations

from dataclasses import dataclass
from typing import Sequence

import numpy as np

from .annotations import GroundTruthDataset, LabelSpace, PredictionSet
from .errors import RangeError, TadError
from .segments import ScoredDetection, Segment, tiou_many

DEFAULT_THRESHOLDS = tuple(round(0.5 + 0.05 * i, 2) for i in range(10))
DEFAULT_TOP_M = 120


@dataclass(frozen=True)
class EvalConfig:
    tiou_thresholds: tuple[float, ...] = DEFAULT_THRESHOLDS
    top_m: int = DEFAULT_TOP_M

    def __post_init__(self):
        t = tuple(float(x) for x in self.tiou_thresholds)
        if not t:
            raise RangeError("at least one tIoU threshold is required")
        if any(not 0 < x <= 1 for x in t) or any(b <= a for a, b in zip(t, t[1:])):
            raise RangeError(f"thresholds must be strictly increasing within (0, 1], got {t}")
        if self.top_m < 1:
            raise RangeError(f"top_m must be >= 1, got {self.top_m}")
        object.__setattr__(self, "tiou_thresholds", t)


def parse_thresholds(text: str) -> tuple[float, ...]:
    """``"0.5:0.05:0.95"`` (start:step:stop, inclusive) or ``"0.5,0.75,0.95"``."""
    try:
        if ":" in text:
            start, step, stop = (float(x) for x in text.split(":"))
            if step <= 0:
                raise ValueError
            n = int(np.floor((stop - start) / step + 1e-9)) + 1
            return tuple(round(start + i * step, 10) for i in range(n))
        return tuple(float(x) for x in text.split(","))
    except ValueError:
        raise RangeError(f"cannot parse thresholds {text!r}") from None


def _det_key(d: ScoredDetection):
    return (-d.score, d.segment.start, d.segment.end, d.video_id)


def select_top_m(preds: PredictionSet, m: int = DEFAULT_TOP_M) -> PredictionSet:
    """Keep the ``m`` highest-scoring detections of each video."""
    if m < 1:
        raise RangeError(f"m must be >= 1, got {m}")
    key = lambda d: (-d.score, d.segment.start, d.segment.end, -1 if d.label is None else d.label)
    results = {vid: sorted(dets, key=key)[:m] for vid, dets in preds.results.items()}
    return PredictionSet(results, preds.labels, preds.version)


def ap_per_threshold(dets: Sequence[ScoredDetection], gt: Sequence[tuple[str, Segment]],
                     thresholds: Sequence[float]) -> np.ndarray:
    """AP of one class at each threshold.

    Detections are visited by score (ties: start, end, video id) and each is
    matched to the unmatched ground truth of its video with the highest tIoU,
    provided it clears the threshold. AP integrates the interpolated
    (right-to-left running max) precision over recall.
    """
    thresholds = np.asarray(thresholds, dtype=np.float64)
    n_thr = len(thresholds)
    if not gt or not dets:
        return np.zeros(n_thr)

    by_video: dict = {}
    for gi, (vid, seg) in enumerate(gt):
        by_video.setdefault(vid, []).append((gi, seg))
    gt_arrays = {vid: (np.array([g for g, _ in items]),
                       np.array([s.start for _, s in items]),
                       np.array([s.end for _, s in items]))
                 for vid, items in by_video.items()}

    order = sorted(range(len(dets)), key=lambda i: _det_key(dets[i]))
    tp = np.zeros((n_thr, len(dets)))
    locked = np.zeros((n_thr, len(gt)), dtype=bool)
    for rank, i in enumerate(order):
        d = dets[i]
        if d.video_id not in gt_arrays:
            continue
        ids, starts, ends = gt_arrays[d.video_id]
        ious = tiou_many(d.segment, starts, ends)
        # highest tIoU first, lower ground-truth index on ties
        cand = np.lexsort((ids, -ious))
        for ti, thr in enumerate(thresholds):
            for j in cand:
                if ious[j] < thr:
                    break
                if locked[ti, ids[j]]:
                    continue
                locked[ti, ids[j]] = True
                tp[ti, rank] = 1.0
                break

    tp_cum = np.cumsum(tp, axis=1)
    precision = tp_cum / np.arange(1, len(dets) + 1)
    # running max from the right = interpolated precision
    interp = np.maximum.accumulate(precision[:, ::-1], axis=1)[:, ::-1]
    # recall steps by exactly 1/n_gt at every true positive
    return (interp * tp).sum(axis=1) / len(gt)


def average_precision(dets: Sequence[ScoredDetection], gt: Sequence[tuple[str, Segment]], threshold: float) -> float:
    return float(ap_per_threshold(dets, gt, [threshold])[0])


@dataclass(frozen=True, eq=False)
class EvalReport:
    labels: LabelSpace
    thresholds: tuple[float, ...]
    per_class_ap: np.ndarray      # classes x thresholds
    map_per_threshold: np.ndarray
    average_map: float
    num_gt: np.ndarray

    def to_json(self, digits: int = 9) -> dict:
        fmt = lambda x: float(f"{x:.{digits}g}")
        return {
            "tiou_thresholds": [fmt(t) for t in self.thresholds],
            "map_per_threshold": [fmt(x) for x in self.map_per_threshold],
            "average_map": fmt(self.average_map),
            "per_class": {
                self.labels.name(c): {
                    "num_gt": int(self.num_gt[c]),
                    "ap": [fmt(x) for x in self.per_class_ap[c]],
                }
                for c in range(len(self.labels))
            },
        }

    def table(self) -> str:
        """Per-threshold mAP row plus the average, in percent."""
        head = ["tIoU"] + [f"{t:.2f}" for t in self.thresholds] + ["Average mAP"]
        row = ["mAP"] + [f"{100 * x:.2f}" for x in self.map_per_threshold] + [f"{100 * self.average_map:.2f}"]
        widths = [max(len(h), len(r)) for h, r in zip(head, row)]
        fmt = lambda cells: " | ".join(c.rjust(w) for c, w in zip(cells, widths))
        return f"{fmt(head)}\n{fmt(row)}"


def evaluate(preds: PredictionSet, gt: GroundTruthDataset, cfg: EvalConfig = EvalConfig()) -> EvalReport:
    if preds.labels is not None and preds.labels != gt.labels:
        raise TadError("prediction and ground-truth label spaces differ")
    labels = gt.labels
    preds = select_top_m(preds, cfg.top_m)
    by_class: dict = {c: [] for c in range(len(labels))}
    for d in preds.all_detections():
        if d.label is None:
            raise TadError(f"{d.video_id}: unlabeled detection cannot be evaluated")
        by_class[d.label].append(d)

    n_cls, n_thr = len(labels), len(cfg.tiou_thresholds)
    ap = np.zeros((n_cls, n_thr))
    num_gt = np.zeros(n_cls, dtype=int)
    for c in range(n_cls):
        instances = list(gt.instances(c))
        num_gt[c] = len(instances)
        ap[c] = ap_per_threshold(by_class[c], instances, cfg.tiou_thresholds)

    present = num_gt > 0
    map_t = ap[present].mean(axis=0) if present.any() else np.zeros(n_thr)
    return EvalReport(labels, cfg.tiou_thresholds, ap, map_t, float(map_t.mean()), num_gt)
