"""Initial layouts around regions of interest, found by cheap detectors at ingest."""
from __future__ import annotations

from dataclasses import dataclass
from typing import Callable, Optional

import numpy as np
from scipy import ndimage

from .cost_model import demand_counts, tile_demand
from .errors import TileStoreError
from .geometry import BoundingBox, FrameDims, TileLayout, fine_grained_layout
from .semantic_index import IndexEntry

ROI_LABEL = "roi"

# (frame pixels) -> list of (x1, y1, x2, y2)
RoiDetector = Callable[[np.ndarray], list]

_EIGHT = np.ones((3, 3), dtype=bool)


@dataclass(frozen=True)
class RoiConfig:
    sample_stride: Optional[int] = None  # None: first frame of every GOP
    diff_threshold: int = 30
    min_component_area: int = 16
    background_samples: int = 5
    dilate: Optional[int] = None         # None: one alignment unit

    def __post_init__(self):
        if self.sample_stride is not None and self.sample_stride < 1:
            raise ValueError("sample_stride must be >= 1")


def foreground_components(frame, background, cfg: RoiConfig = RoiConfig()) -> list:
    """Bounding rects of 8-connected foreground components, in scan order."""
    frame, background = np.asarray(frame), np.asarray(background)
    if frame.shape != background.shape:
        raise TileStoreError(f"frame {frame.shape} and background {background.shape} differ")
    mask = np.abs(frame.astype(np.int16) - background.astype(np.int16)) > cfg.diff_threshold
    labels, n = ndimage.label(mask, structure=_EIGHT)
    if not n:
        return []
    areas = np.bincount(labels.ravel(), minlength=n + 1)
    rects = []
    for i, sl in enumerate(ndimage.find_objects(labels), start=1):
        if sl is not None and areas[i] >= cfg.min_component_area:
            ys, xs = sl
            rects.append((xs.start, ys.start, xs.stop, ys.stop))
    return rects


class BackgroundSubtractor:
    """Static-camera detector: threshold the difference against a fixed background."""

    def __init__(self, background, cfg: RoiConfig = RoiConfig()):
        self.background = np.asarray(background, dtype=np.uint8)
        self.cfg = cfg

    def __call__(self, frame) -> list:
        return foreground_components(frame, self.background, self.cfg)


def median_background(frames, sample_idx, count=5) -> np.ndarray:
    picks = list(sample_idx)[:count]
    return np.median(frames[picks], axis=0).astype(np.uint8)


def detect_rois_bgsub(frames, background, cfg: RoiConfig = RoiConfig(), frame_indices=None) -> list:
    frames = np.asarray(frames)
    if frames.ndim == 2:
        frames = frames[None]
    idx = range(len(frames)) if frame_indices is None else frame_indices
    out = []
    for f, frame in zip(idx, frames):
        out.extend(BoundingBox(f, ROI_LABEL, *r) for r in foreground_components(frame, background, cfg))
    return out


def _dilate(rect, by, dims: FrameDims):
    x1, y1, x2, y2 = rect
    return (max(0, x1 - by), max(0, y1 - by), min(dims.width, x2 + by), min(dims.height, y2 + by))


def roi_ingest(store, name, frames, detector: Optional[RoiDetector] = None, cfg: RoiConfig = RoiConfig(),
               gop_len: int = 30, alpha: float = 0.8):
    """Ingest ``frames`` with each GOP tiled around the ROIs its sampled frames show.

    Every sampled frame's ROIs (dilated by ``cfg.dilate``) are recorded under
    the ``roi`` label for the frames up to the next sample, so a full scan of
    ``roi`` touches exactly the tiles the layout was built around.
    """
    frames = np.asarray(frames)
    n, h, w = frames.shape
    dims = FrameDims(w, h)
    lcfg = store.layout_cfg
    stride = cfg.sample_stride or gop_len
    grow = lcfg.align if cfg.dilate is None else cfg.dilate
    samples = list(range(0, n, stride))
    if detector is None:
        detector = BackgroundSubtractor(median_background(frames, samples, cfg.background_samples), cfg)

    boxes = []
    layouts = []
    for g in range(-(-n // gop_len)):
        a, b = g * gop_len, min((g + 1) * gop_len, n)
        gop_boxes = []
        marks = sorted({a, *(s for s in samples if a <= s < b)})
        for s, nxt in zip(marks, marks[1:] + [b]):
            src = max(x for x in samples if x <= s)
            rects = sorted({_dilate(r, grow, dims) for r in detector(frames[src])})
            for f in range(s, nxt):
                gop_boxes.extend(BoundingBox(f, ROI_LABEL, *r) for r in rects)
        layout = fine_grained_layout(gop_boxes, dims, lcfg)
        if not layout.is_omega:
            entries = [IndexEntry(name, bx) for bx in gop_boxes]
            tiled = demand_counts(layout, tile_demand(layout, entries, a))[0]
            omega = TileLayout.omega(dims)
            untiled = demand_counts(omega, tile_demand(omega, entries, a))[0]
            if tiled > alpha * untiled:
                layout = omega
        layouts.append(layout)
        boxes.extend(gop_boxes)
    vs = store.ingest(name, frames, gop_len, layouts)
    store.index.add_boxes(name, boxes)
    return vs
