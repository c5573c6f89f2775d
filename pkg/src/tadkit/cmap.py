"""Boundary-matching confidence maps: binary I/O, weighted fusion, top-K proposals.

Row ``d`` of the grid holds proposals spanning ``d + 1`` stride steps and
column ``t`` holds proposals starting at ``t * stride`` seconds, so cell
``(d, t)`` is the segment ``[t * stride, (t + d + 1) * stride]``.

Binary layout (little-endian)::

    b"TADCMAP1" | u32 D | u32 T | f64 stride | u32 n | n bytes video id (UTF-8)
    | D*T float32 row-major
"""
from __future__ import annotations

import struct
from dataclasses import dataclass
from typing import Sequence

import numpy as np

from .errors import FormatError, RangeError, TadError
from .segments import ScoredDetection, Segment

MAGIC = b"TADCMAP1"
_HEADER = struct.Struct("<IId")
_U32 = struct.Struct("<I")
DEFAULT_TOP_K = 120


@dataclass(frozen=True, eq=False)
class ConfidenceMap:
    grid: np.ndarray
    stride: float
    video_id: str

    def __post_init__(self):
        grid = np.array(self.grid, dtype=np.float32)
        if grid.ndim != 2 or grid.shape[0] < 1 or grid.shape[1] < 1:
            raise FormatError(f"confidence map grid must be a non-empty 2-D array, got shape {grid.shape}")
        if not np.all((grid >= 0) & (grid <= 1)):
            raise RangeError("confidence map entries must lie in [0, 1]")
        if not self.stride > 0 or not np.isfinite(self.stride):
            raise RangeError(f"stride must be positive, got {self.stride}")
        grid.flags.writeable = False
        object.__setattr__(self, "grid", grid)
        object.__setattr__(self, "stride", float(self.stride))

    @property
    def shape(self) -> tuple[int, int]:
        return self.grid.shape

    def __eq__(self, other):
        if not isinstance(other, ConfidenceMap):
            return NotImplemented
        return (self.video_id == other.video_id and self.stride == other.stride
                and self.grid.shape == other.grid.shape
                and self.grid.tobytes() == other.grid.tobytes())


def to_bytes(cmap: ConfidenceMap) -> bytes:
    vid = cmap.video_id.encode("utf-8")
    d, t = cmap.shape
    return b"".join([
        MAGIC,
        _HEADER.pack(d, t, cmap.stride),
        _U32.pack(len(vid)),
        vid,
        cmap.grid.astype("<f4").tobytes(order="C"),
    ])


def from_bytes(buf: bytes, where: str = "map") -> ConfidenceMap:
    if buf[: len(MAGIC)] != MAGIC:
        raise FormatError(f"{where}: bad magic {buf[:len(MAGIC)]!r}, expected {MAGIC!r}")
    pos = len(MAGIC)
    if len(buf) < pos + _HEADER.size + _U32.size:
        raise FormatError(f"{where}: truncated header")
    d, t, stride = _HEADER.unpack_from(buf, pos)
    pos += _HEADER.size
    (n,) = _U32.unpack_from(buf, pos)
    pos += _U32.size
    if len(buf) < pos + n:
        raise FormatError(f"{where}: truncated video id")
    try:
        vid = buf[pos: pos + n].decode("utf-8")
    except UnicodeDecodeError as e:
        raise FormatError(f"{where}: video id is not UTF-8") from e
    pos += n
    payload = len(buf) - pos
    if payload % 4:
        raise FormatError(f"{where}: payload of {payload} bytes is not a whole number of float32 values")
    if payload // 4 != d * t:
        raise FormatError(f"{where}: declared {d}x{t} grid but payload holds {payload // 4} values")
    grid = np.frombuffer(buf, dtype="<f4", count=d * t, offset=pos).reshape(d, t)
    return ConfidenceMap(grid, stride, vid)


def write_map(cmap: ConfidenceMap, path) -> None:
    with open(path, "wb") as f:
        f.write(to_bytes(cmap))


def read_map(path) -> ConfidenceMap:
    with open(path, "rb") as f:
        return from_bytes(f.read(), str(path))


def fuse_maps(maps: Sequence[ConfidenceMap], weights: Sequence[float]) -> ConfidenceMap:
    """Weighted arithmetic mean of maps that share video, shape and stride."""
    if not maps:
        raise TadError("no maps to fuse")
    if len(weights) != len(maps):
        raise TadError(f"{len(weights)} weights given for {len(maps)} maps")
    w = np.asarray(weights, dtype=np.float64)
    if np.any(w < 0) or not np.all(np.isfinite(w)):
        raise RangeError("fusion weights must be finite and non-negative")
    if not w.sum() > 0:
        raise TadError("fusion weights are all zero")
    ref = maps[0]
    for m in maps[1:]:
        if m.shape != ref.shape or m.stride != ref.stride or m.video_id != ref.video_id:
            raise TadError(
                f"map mismatch: {m.video_id} {m.shape} stride {m.stride} vs "
                f"{ref.video_id} {ref.shape} stride {ref.stride}")
    # normalise first: exact rescalings of w give bit-identical coefficients
    w = w / w.sum()
    acc = np.zeros(ref.shape, dtype=np.float64)
    for wi, m in zip(w, maps):
        acc += wi * m.grid.astype(np.float64)
    return ConfidenceMap(np.clip(acc, 0.0, 1.0), ref.stride, ref.video_id)


def cell_segments(shape: tuple[int, int], stride: float, video_duration: float):
    """Clamped (start, end) arrays for every cell, plus a usability mask."""
    d_idx, t_idx = np.indices(shape)
    starts = t_idx * stride
    ends = np.minimum((t_idx + d_idx + 1) * stride, video_duration)
    usable = starts < ends
    return starts, ends, usable


def extract_top_k(cmap: ConfidenceMap, k: int = DEFAULT_TOP_K, video_duration: float = np.inf) -> list[ScoredDetection]:
    """The ``k`` highest-confidence cells as unlabeled proposals.

    Cells whose segment is empty after clamping to the video are skipped.
    Ties are broken by start, then end, ascending.
    """
    if k < 1:
        raise RangeError(f"k must be >= 1, got {k}")
    starts, ends, usable = cell_segments(cmap.shape, cmap.stride, video_duration)
    scores = cmap.grid.astype(np.float64)[usable]
    starts, ends = starts[usable], ends[usable]
    order = np.lexsort((ends, starts, -scores))[:k]
    return [ScoredDetection(cmap.video_id, Segment(float(starts[i]), float(ends[i])), None, float(scores[i]))
            for i in order]
