"""Moving-object box filtering and mask rasterisation.

Detector boxes are kept when they hold enough dynamic points. The count
needed scales with box area relative to a *unit box*: the smallest box whose
own count already meets the base threshold ``tau_0``. This stops large
static boxes from qualifying just because they happen to contain a few
stray dynamic points.

Pixel convention: pixel ``(col, row)`` covers ``[col, col+1) x [row, row+1)``.
A box rasterises to every pixel whose cell overlaps it with positive area,
and a point belongs to the pixel that contains it.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Protocol, Sequence

import numpy as np

from .errors import ValidationError, ZeroUnitAreaError


@dataclass(frozen=True)
class BoundingBox:
    t: int
    x_min: float
    y_min: float
    x_max: float
    y_max: float
    class_id: int = 0
    score: float = 1.0
    gt_moving: bool | None = None

    def __post_init__(self):
        if not (self.x_min < self.x_max and self.y_min < self.y_max):
            raise ValidationError(
                f"box ({self.x_min}, {self.y_min}, {self.x_max}, {self.y_max}) has no area"
            )
        if not 0.0 <= self.score <= 1.0:
            raise ValidationError(f"box score {self.score} outside [0, 1]")

    @property
    def xyxy(self) -> tuple[float, float, float, float]:
        return (self.x_min, self.y_min, self.x_max, self.y_max)

    @property
    def area(self) -> float:
        return (self.x_max - self.x_min) * (self.y_max - self.y_min)

    def scaled(self, s: float) -> BoundingBox:
        return BoundingBox(self.t, self.x_min * s, self.y_min * s, self.x_max * s, self.y_max * s,
                           self.class_id, self.score, self.gt_moving)


@dataclass(frozen=True)
class BoxDynamics:
    box: BoundingBox
    count: int
    tau: float


@dataclass(frozen=True)
class FilteredBoxSet:
    t: int
    tau_0: float
    boxes: tuple[BoxDynamics, ...]
    kept_indices: tuple[int, ...]
    unit_index: int | None = None

    @property
    def kept(self) -> list[BoxDynamics]:
        return [self.boxes[i] for i in self.kept_indices]

    @property
    def unit_box(self) -> BoundingBox | None:
        return None if self.unit_index is None else self.boxes[self.unit_index].box


def count_dynamic_in_box(box: BoundingBox, points) -> int:
    """Number of points inside the closed box."""
    p = np.asarray(points, dtype=np.float64).reshape(-1, 2)
    inside = (p[:, 0] >= box.x_min) & (p[:, 0] <= box.x_max) & (p[:, 1] >= box.y_min) & (p[:, 1] <= box.y_max)
    return int(np.count_nonzero(inside))


def select_unit_box(boxes_with_counts: Sequence[BoxDynamics], tau_0: float) -> int | None:
    """Index of the smallest-area box whose count reaches ``tau_0``; first index wins ties."""
    if not tau_0 > 0:
        raise ValidationError(f"tau_0 must be > 0, got {tau_0!r}")
    best = None
    for i, bd in enumerate(boxes_with_counts):
        if bd.count >= tau_0 and (best is None or bd.box.area < boxes_with_counts[best].box.area):
            best = i
    return best


def adaptive_box_threshold(tau_0: float, area_i: float, area_u: float) -> float:
    if not area_u > 0:
        raise ZeroUnitAreaError(f"unit box area must be > 0, got {area_u!r}")
    if not (area_i > 0 and tau_0 > 0):
        raise ValidationError("box area and tau_0 must be > 0")
    return tau_0 * area_i / area_u


def filter_boxes(boxes: Sequence[BoundingBox], dynamic_points, tau_0: float, t: int | None = None) -> FilteredBoxSet:
    """Keep the boxes whose dynamic count meets their area-scaled threshold.

    Without a unit box nothing is kept and every threshold is reported as inf.
    """
    if not tau_0 > 0:
        raise ValidationError(f"tau_0 must be > 0, got {tau_0!r}")
    if t is None:
        t = boxes[0].t if boxes else 0
    counted = [BoxDynamics(b, count_dynamic_in_box(b, dynamic_points), math.inf) for b in boxes]
    u = select_unit_box(counted, tau_0)
    if u is None:
        return FilteredBoxSet(t, tau_0, tuple(counted), ())
    area_u = counted[u].box.area
    scored = []
    kept = []
    for i, bd in enumerate(counted):
        tau = tau_0 if i == u else adaptive_box_threshold(tau_0, bd.box.area, area_u)
        scored.append(BoxDynamics(bd.box, bd.count, tau))
        if bd.count >= tau:
            kept.append(i)
    return FilteredBoxSet(t, tau_0, tuple(scored), tuple(kept), u)


# ---------------------------------------------------------------------------
# masks
# ---------------------------------------------------------------------------


def encode_rle_row(row) -> tuple[int, ...]:
    """Alternating run lengths starting with a (possibly empty) run of zeros."""
    row = np.asarray(row, dtype=bool)
    change = np.flatnonzero(np.diff(row.astype(np.int8))) + 1
    bounds = np.concatenate(([0], change, [row.size]))
    runs = np.diff(bounds).tolist()
    if row.size and row[0]:
        runs.insert(0, 0)
    return tuple(int(r) for r in runs)


def decode_rle_row(runs: Sequence[int], width: int) -> np.ndarray:
    out = np.zeros(width, dtype=bool)
    pos = 0
    value = False
    for r in runs:
        out[pos:pos + r] = value
        pos += r
        value = not value
    return out


@dataclass(frozen=True)
class ObjectMask:
    t: int
    width: int
    height: int
    rows: tuple[tuple[int, ...], ...]

    def __post_init__(self):
        if self.width <= 0 or self.height <= 0:
            raise ValidationError("mask dimensions must be positive")
        if len(self.rows) != self.height:
            raise ValidationError(f"mask frame {self.t}: {len(self.rows)} rows for height {self.height}")
        for r, runs in enumerate(self.rows):
            if any(x < 0 for x in runs) or sum(runs) != self.width:
                raise ValidationError(f"mask frame {self.t} row {r}: runs must be >= 0 and sum to width")

    @classmethod
    def from_array(cls, t: int, bitmap) -> ObjectMask:
        bitmap = np.asarray(bitmap, dtype=bool)
        h, w = bitmap.shape
        return cls(t, w, h, tuple(encode_rle_row(row) for row in bitmap))

    @classmethod
    def empty(cls, t: int, width: int, height: int) -> ObjectMask:
        return cls(t, width, height, ((width,),) * height)

    def to_array(self) -> np.ndarray:
        return np.stack([decode_rle_row(r, self.width) for r in self.rows])

    @property
    def population(self) -> int:
        return int(sum(sum(r[1::2]) for r in self.rows))


def box_pixel_range(box: BoundingBox, width: int, height: int) -> tuple[int, int, int, int]:
    """Half-open ``(c0, c1, r0, r1)`` pixel span of the box, clipped to the image."""
    c0 = max(int(math.floor(box.x_min)), 0)
    c1 = min(int(math.ceil(box.x_max)), width)
    r0 = max(int(math.floor(box.y_min)), 0)
    r1 = min(int(math.ceil(box.y_max)), height)
    return c0, c1, r0, r1


class Segmenter(Protocol):
    """Turns a box prompt into a boolean (height, width) region."""

    serial: bool

    def __call__(self, box: BoundingBox, width: int, height: int) -> np.ndarray: ...


class BoxSegmenter:
    """Fills the box, optionally dilated by ``margin`` pixels on every side.

    Stands in for a promptable segmentation model.
    """

    serial = False

    def __init__(self, margin: float = 0.0):
        if margin < 0:
            raise ValidationError("mask margin must be >= 0")
        self.margin = float(margin)

    def __call__(self, box: BoundingBox, width: int, height: int) -> np.ndarray:
        out = np.zeros((height, width), dtype=bool)
        if self.margin:
            m = self.margin
            box = BoundingBox(box.t, box.x_min - m, box.y_min - m, box.x_max + m, box.y_max + m,
                              box.class_id, box.score, box.gt_moving)
        c0, c1, r0, r1 = box_pixel_range(box, width, height)
        if c1 > c0 and r1 > r0:
            out[r0:r1, c0:c1] = True
        return out


class PrecomputedSegmenter:
    """Uses externally produced masks, cropped to each prompt box."""

    serial = False

    def __init__(self, masks: Sequence[ObjectMask]):
        self._masks = {m.t: m.to_array() for m in masks}

    def __call__(self, box: BoundingBox, width: int, height: int) -> np.ndarray:
        full = self._masks.get(box.t)
        if full is None:
            return np.zeros((height, width), dtype=bool)
        return full & BoxSegmenter()(box, width, height)


def rasterize_masks(kept: FilteredBoxSet, width: int, height: int, segmenter: Segmenter | None = None) -> ObjectMask:
    segmenter = segmenter or BoxSegmenter()
    if width <= 0 or height <= 0:
        raise ValidationError("frame dimensions must be positive")
    out = np.zeros((height, width), dtype=bool)
    for bd in kept.kept:
        out |= segmenter(bd.box, width, height)
    return ObjectMask.from_array(kept.t, out)


def remove_masked_points(points: Sequence[tuple[int, Sequence[float]]], mask: ObjectMask) -> list:
    """Drop ``(track_id, xy)`` entries whose containing pixel is set in the mask."""
    bitmap = mask.to_array()
    kept = []
    for tid, xy in points:
        col, row = int(math.floor(xy[0])), int(math.floor(xy[1]))
        inside = 0 <= col < mask.width and 0 <= row < mask.height
        if not (inside and bitmap[row, col]):
            kept.append((tid, xy))
    return kept


def masked_point_flags(pixels, mask: ObjectMask) -> np.ndarray:
    """Vectorised membership test used by the evaluator: True where masked."""
    px = np.asarray(pixels, dtype=np.float64).reshape(-1, 2)
    bitmap = mask.to_array()
    col = np.floor(px[:, 0]).astype(int)
    row = np.floor(px[:, 1]).astype(int)
    inside = (col >= 0) & (col < mask.width) & (row >= 0) & (row < mask.height)
    out = np.zeros(len(px), dtype=bool)
    out[inside] = bitmap[row[inside], col[inside]]
    return out
