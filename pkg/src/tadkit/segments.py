"""Temporal interval geometry and fake-proposal augmentation.

All coordinates are in seconds.
"""
from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Optional, Sequence

import numpy as np

from .errors import RangeError, TadError

DEFAULT_OFFSETS = (-0.2, -0.1, -0.05, 0.0, 0.05, 0.1, 0.2)


@dataclass(frozen=True, slots=True)
class Segment:
    """Half-open interval [start, end) on a video timeline."""

    start: float
    end: float

    def __post_init__(self):
        if not (math.isfinite(self.start) and math.isfinite(self.end)):
            raise RangeError(f"non-finite segment [{self.start}, {self.end}]")
        if not self.start < self.end:
            raise RangeError(f"segment start must be < end, got [{self.start}, {self.end}]")

    @property
    def duration(self) -> float:
        return self.end - self.start

    def as_list(self) -> list[float]:
        return [self.start, self.end]


@dataclass(frozen=True, slots=True)
class ScoredDetection:
    video_id: str
    segment: Segment
    label: Optional[int]
    score: float

    def rescored(self, score: float) -> "ScoredDetection":
        return ScoredDetection(self.video_id, self.segment, self.label, score)


def sort_key(det: ScoredDetection):
    """Score descending, then start, end ascending."""
    return (-det.score, det.segment.start, det.segment.end)


def tiou(a: Segment, b: Segment) -> float:
    inter = min(a.end, b.end) - max(a.start, b.start)
    if inter <= 0:
        return 0.0
    union = (a.end - a.start) + (b.end - b.start) - inter
    return inter / union


def tiou_many(target: Segment, starts: np.ndarray, ends: np.ndarray) -> np.ndarray:
    """tIoU of one segment against arrays of candidate boundaries."""
    inter = np.clip(np.minimum(ends, target.end) - np.maximum(starts, target.start), 0.0, None)
    union = (ends - starts) + (target.end - target.start) - inter
    return inter / union


def clamp_segment(s: Segment, duration: float) -> Segment:
    if not duration > 0:
        raise RangeError(f"duration must be positive, got {duration}")
    start = min(max(s.start, 0.0), duration)
    end = min(max(s.end, 0.0), duration)
    if not start < end:
        raise RangeError(f"segment [{s.start}, {s.end}] lies outside [0, {duration}]")
    return Segment(start, end)


@dataclass(frozen=True, slots=True)
class FakeProposal:
    """A perturbed ground-truth segment with its boundary-regression target.

    The target is normalised by the fake segment's own duration, so
    ``start + target[0] * duration`` recovers the ground-truth start.
    """

    segment: Segment
    target: tuple[float, float]

    def apply_target(self) -> Segment:
        d = self.segment.duration
        return Segment(self.segment.start + self.target[0] * d,
                       self.segment.end + self.target[1] * d)


def generate_fake_proposals(gt: Segment, offsets: Sequence[float] = DEFAULT_OFFSETS) -> list[FakeProposal]:
    """Shift each ground-truth boundary by every pair of offsets.

    Offsets are fractions of the ground-truth duration, applied to the start
    and end independently (Cartesian product, row-major over
    ``(start_offset, end_offset)``). Pairs that collapse the segment are
    skipped.
    """
    offsets = list(offsets)
    if not offsets:
        raise TadError("offset list is empty")
    for f in offsets:
        if not abs(f) < 0.5:
            raise RangeError(f"offset fraction must satisfy |f| < 0.5, got {f}")
    d = gt.duration
    out = []
    for fs in offsets:
        for fe in offsets:
            start = gt.start + fs * d
            end = gt.end + fe * d
            if not start < end:
                continue
            d_fake = end - start
            target = ((gt.start - start) / d_fake, (gt.end - end) / d_fake)
            out.append(FakeProposal(Segment(start, end), target))
    return out
