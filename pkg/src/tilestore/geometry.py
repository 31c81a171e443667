"""Tile layouts: construction, validation and rectangle-to-tile mapping.

Rectangles are half-open integer pixel ranges ``(x1, y1, x2, y2)``.
A layout is a regular grid described by its row heights and column widths;
the untiled layout is the 1x1 grid covering the whole frame.
"""
from __future__ import annotations

from bisect import bisect_left, bisect_right, insort
from dataclasses import dataclass
from itertools import accumulate
from typing import Iterable, Sequence

from .errors import InvalidLayoutError, OutOfBoundsError

Rect = tuple  # (x1, y1, x2, y2), half-open


@dataclass(frozen=True)
class FrameDims:
    width: int
    height: int

    @property
    def area(self) -> int:
        return self.width * self.height


@dataclass(frozen=True)
class LayoutConfig:
    align: int = 32
    min_tile_w: int = 64
    min_tile_h: int = 64

    def __post_init__(self):
        if self.align <= 0:
            raise ValueError("align must be positive")
        for v in (self.min_tile_w, self.min_tile_h):
            if v <= 0 or v % self.align:
                raise ValueError(f"minimum tile dims must be positive multiples of {self.align}")


@dataclass(frozen=True, order=True)
class BoundingBox:
    frame: int
    label: str
    x1: int
    y1: int
    x2: int
    y2: int

    def __post_init__(self):
        if not self.label:
            raise ValueError("label must be non-empty")
        if self.x1 < 0 or self.y1 < 0 or self.x2 <= self.x1 or self.y2 <= self.y1:
            raise ValueError(f"degenerate box {self.rect}")
        if self.frame < 0:
            raise ValueError("frame must be non-negative")

    @property
    def rect(self) -> Rect:
        return (self.x1, self.y1, self.x2, self.y2)

    @property
    def area(self) -> int:
        return (self.x2 - self.x1) * (self.y2 - self.y1)

    def within(self, dims: FrameDims) -> bool:
        return self.x2 <= dims.width and self.y2 <= dims.height

    @classmethod
    def clipped(cls, frame, label, x1, y1, x2, y2, dims: FrameDims):
        """Clip raw coordinates to the frame; ``None`` if nothing is left."""
        x1, y1 = max(0, x1), max(0, y1)
        x2, y2 = min(dims.width, x2), min(dims.height, y2)
        if x2 <= x1 or y2 <= y1:
            return None
        return cls(frame, label, x1, y1, x2, y2)


@dataclass(frozen=True)
class TileRect:
    tile_id: int
    x: int
    y: int
    w: int
    h: int

    @property
    def rect(self) -> Rect:
        return (self.x, self.y, self.x + self.w, self.y + self.h)

    @property
    def area(self) -> int:
        return self.w * self.h


@dataclass(frozen=True)
class TileLayout:
    row_heights: tuple
    col_widths: tuple

    def __post_init__(self):
        object.__setattr__(self, "row_heights", tuple(int(h) for h in self.row_heights))
        object.__setattr__(self, "col_widths", tuple(int(w) for w in self.col_widths))
        if not self.row_heights or not self.col_widths:
            raise InvalidLayoutError("layout needs at least one row and one column")

    @classmethod
    def omega(cls, dims: FrameDims) -> "TileLayout":
        return cls((dims.height,), (dims.width,))

    @property
    def n_rows(self) -> int:
        return len(self.row_heights)

    @property
    def n_cols(self) -> int:
        return len(self.col_widths)

    @property
    def n_tiles(self) -> int:
        return self.n_rows * self.n_cols

    @property
    def width(self) -> int:
        return sum(self.col_widths)

    @property
    def height(self) -> int:
        return sum(self.row_heights)

    @property
    def dims(self) -> FrameDims:
        return FrameDims(self.width, self.height)

    @property
    def is_omega(self) -> bool:
        return self.n_tiles == 1

    @property
    def x_bounds(self) -> list:
        """Column start offsets followed by the frame width."""
        return [0, *accumulate(self.col_widths)]

    @property
    def y_bounds(self) -> list:
        return [0, *accumulate(self.row_heights)]

    def tile_rect(self, tile_id: int) -> TileRect:
        r, c = divmod(tile_id, self.n_cols)
        xs, ys = self.x_bounds, self.y_bounds
        return TileRect(tile_id, xs[c], ys[r], self.col_widths[c], self.row_heights[r])

    def to_dict(self) -> dict:
        return {"rows": list(self.row_heights), "cols": list(self.col_widths)}

    @classmethod
    def from_dict(cls, d) -> "TileLayout":
        return cls(tuple(d["rows"]), tuple(d["cols"]))

    def __str__(self):
        return f"{self.n_rows}x{self.n_cols} rows={list(self.row_heights)} cols={list(self.col_widths)}"


def validate_layout(layout: TileLayout, dims: FrameDims, cfg: LayoutConfig = LayoutConfig()) -> list:
    """Return every violated layout invariant as a message; empty means valid."""
    problems = []
    if any(h <= 0 for h in layout.row_heights) or any(w <= 0 for w in layout.col_widths):
        problems.append("non-positive row height or column width")
    if layout.height != dims.height:
        problems.append(f"row heights sum to {layout.height}, frame height is {dims.height}")
    if layout.width != dims.width:
        problems.append(f"column widths sum to {layout.width}, frame width is {dims.width}")
    for i, y in enumerate(layout.y_bounds[1:-1], start=1):
        if y % cfg.align:
            problems.append(f"row boundary {i} at y={y} not a multiple of {cfg.align}")
    for i, x in enumerate(layout.x_bounds[1:-1], start=1):
        if x % cfg.align:
            problems.append(f"column boundary {i} at x={x} not a multiple of {cfg.align}")
    if not layout.is_omega:
        for i, h in enumerate(layout.row_heights):
            if h < cfg.min_tile_h:
                problems.append(f"row {i} height {h} < minimum {cfg.min_tile_h}")
        for i, w in enumerate(layout.col_widths):
            if w < cfg.min_tile_w:
                problems.append(f"column {i} width {w} < minimum {cfg.min_tile_w}")
    return problems


def tile_rects(layout: TileLayout) -> list:
    xs, ys = layout.x_bounds, layout.y_bounds
    rects = []
    for r, h in enumerate(layout.row_heights):
        for c, w in enumerate(layout.col_widths):
            rects.append(TileRect(r * layout.n_cols + c, xs[c], ys[r], w, h))
    return rects


def _span_indices(bounds, lo, hi):
    # bands [bounds[i], bounds[i+1]) overlapping [lo, hi)
    first = bisect_right(bounds, lo) - 1
    last = bisect_left(bounds, hi) - 1
    return range(first, last + 1)


def tiles_intersecting(layout: TileLayout, rect: Rect) -> set:
    x1, y1, x2, y2 = rect
    if x1 < 0 or y1 < 0 or x2 > layout.width or y2 > layout.height or x2 <= x1 or y2 <= y1:
        raise OutOfBoundsError(f"rect {tuple(rect)} outside {layout.width}x{layout.height} frame")
    cols = _span_indices(layout.x_bounds, x1, x2)
    rows = _span_indices(layout.y_bounds, y1, y2)
    return {r * layout.n_cols + c for r in rows for c in cols}


def boxes_to_tiles(layout: TileLayout, boxes: Iterable[BoundingBox]) -> dict:
    return {b: tiles_intersecting(layout, b.rect) for b in boxes}


def _check(layout: TileLayout, dims: FrameDims, cfg: LayoutConfig) -> TileLayout:
    problems = validate_layout(layout, dims, cfg)
    if problems:
        raise InvalidLayoutError("; ".join(problems), problems)
    return layout


def uniform_layout(rows: int, cols: int, dims: FrameDims, cfg: LayoutConfig = LayoutConfig()) -> TileLayout:
    """Equal-as-possible aligned grid; leftover pixels go to the last row/column."""
    if rows < 1 or cols < 1:
        raise InvalidLayoutError(f"grid {rows}x{cols} must have at least one tile")

    def split(extent, n):
        unit = extent // n // cfg.align * cfg.align
        if n > 1 and unit == 0:
            raise InvalidLayoutError(f"cannot split {extent}px into {n} aligned bands")
        return [unit] * (n - 1) + [extent - unit * (n - 1)]

    return _check(TileLayout(split(dims.height, rows), split(dims.width, cols)), dims, cfg)


def _snap_down(v, a):
    return v // a * a


def _snap_up(v, a):
    return -(-v // a) * a


def _clusters(intervals):
    """Merge overlapping half-open intervals."""
    out = []
    for lo, hi in sorted(intervals):
        if out and lo < out[-1][1]:
            out[-1][1] = max(out[-1][1], hi)
        else:
            out.append([lo, hi])
    return [tuple(c) for c in out]


def _inside_any(b, clusters):
    return any(lo < b < hi for lo, hi in clusters)


def _keep_spaced(cands, extent, min_size):
    # left-to-right; a boundary too close to the previous one is dropped,
    # which merges the two bands it separated
    kept, prev = [], 0
    for b in sorted(set(cands)):
        if 0 < b < extent and b - prev >= min_size:
            kept.append(b)
            prev = b
    while kept and extent - kept[-1] < min_size:
        kept.pop()
    return kept


def _axis_sizes(intervals, extent, align, min_size, fine):
    clusters = _clusters(intervals)
    if not clusters:
        return [extent]
    hull_lo, hull_hi = _snap_down(clusters[0][0], align), _snap_up(clusters[-1][1], align)
    kept = _keep_spaced([hull_lo, min(hull_hi, extent)], extent, min_size)
    if fine:
        inner = set()
        for lo, hi in clusters:
            inner.add(_snap_down(lo, align))
            inner.add(_snap_up(hi, align))
        for b in sorted(inner):
            if b <= 0 or b >= extent or b in kept or _inside_any(b, clusters):
                continue
            i = bisect_left(kept, b)
            left = kept[i - 1] if i else 0
            right = kept[i] if i < len(kept) else extent
            if b - left >= min_size and right - b >= min_size:
                insort(kept, b)
    bounds = [0, *kept, extent]
    return [b - a for a, b in zip(bounds, bounds[1:])]


def _box_layout(boxes: Sequence[BoundingBox], dims: FrameDims, cfg: LayoutConfig, fine: bool) -> TileLayout:
    boxes = list(boxes)
    if not boxes:
        return TileLayout.omega(dims)
    for b in boxes:
        if not b.within(dims):
            raise OutOfBoundsError(f"box {b.rect} outside {dims.width}x{dims.height} frame")
    cols = _axis_sizes([(b.x1, b.x2) for b in boxes], dims.width, cfg.align, cfg.min_tile_w, fine)
    rows = _axis_sizes([(b.y1, b.y2) for b in boxes], dims.height, cfg.align, cfg.min_tile_h, fine)
    layout = TileLayout(rows, cols)
    if validate_layout(layout, dims, cfg):
        # only reachable when one axis is shorter than the minimum tile size
        return TileLayout.omega(dims)
    return layout


def fine_grained_layout(boxes, dims: FrameDims, cfg: LayoutConfig = LayoutConfig()) -> TileLayout:
    """Layout that isolates each cluster of boxes in its own band on both axes.

    Boundaries sit on alignment multiples just outside each cluster of
    boxes whose axis projections overlap, so no boundary ever cuts a box.
    The hull boundaries are placed first and inner ones are only added when
    both neighbouring bands stay at least the minimum size, which makes the
    result a refinement of :func:`coarse_grained_layout`.
    """
    return _box_layout(boxes, dims, cfg, fine=True)


def coarse_grained_layout(boxes, dims: FrameDims, cfg: LayoutConfig = LayoutConfig()) -> TileLayout:
    """At most 3x3 grid whose central tile is the aligned hull of all boxes."""
    return _box_layout(boxes, dims, cfg, fine=False)
