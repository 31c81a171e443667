"""What-if cost estimates for running a query over one SOT with a given layout.

The decode cost of query ``q`` over SOT ``s`` stored with layout ``L`` is
``beta * P + gamma * T`` where ``P`` counts decoded pixels and ``T`` decoded
tile chunks.  A tile needed on some frame of the SOT must be decoded from the
SOT's keyframe up to the last frame it is needed on.
"""
from __future__ import annotations

import csv
import warnings
from dataclasses import dataclass
from typing import Optional

import numpy as np
from scipy import optimize

from .errors import CalibrationError
from .geometry import TileLayout, tiles_intersecting
from .semantic_index import LabelPredicate


@dataclass(frozen=True)
class CostParams:
    beta: float = 2e-9       # s per decoded pixel
    gamma: float = 1e-4      # s per decoded tile chunk
    enc_beta: float = 5e-9   # s per re-encoded pixel
    enc_fixed: float = 0.0   # s per tile chunk written

    def __post_init__(self):
        if min(self.beta, self.gamma, self.enc_beta, self.enc_fixed) < 0:
            raise ValueError("cost parameters must be non-negative")


@dataclass(frozen=True)
class QuerySpec:
    video: str
    predicate: LabelPredicate
    frame_range: Optional[tuple] = None  # [start, end)

    @classmethod
    def for_labels(cls, video, *labels, frame_range=None):
        return cls(video, LabelPredicate.any_of(*labels), frame_range)

    @property
    def labels(self) -> frozenset:
        return self.predicate.labels


@dataclass(frozen=True)
class CostEstimate:
    pixels: int
    tiles: int
    cost: float


@dataclass(frozen=True)
class Calibration:
    slope_pixels: float
    slope_tiles: float
    r2: float
    n: int


def sot_span(sot) -> tuple:
    if isinstance(sot, tuple):
        return sot
    return (sot.start, sot.end)


def touches(q: QuerySpec, sot) -> bool:
    start, end = sot_span(sot)
    if q.frame_range is None:
        return True
    a, b = q.frame_range
    return a < end and start < b


def query_entries(sot, q: QuerySpec, index) -> tuple:
    """Index entries matching ``q`` inside this SOT."""
    start, end = sot_span(sot)
    if q.frame_range is not None:
        start, end = max(start, q.frame_range[0]), min(end, q.frame_range[1])
    if end <= start:
        return ()
    return index.lookup(q.video, q.predicate, (start, end))


def tile_demand(layout: TileLayout, entries, sot_start: int) -> dict:
    """Map tile id -> last frame (relative to the SOT start) it is needed on."""
    need = {}
    for e in entries:
        rel = e.box.frame - sot_start
        for t in tiles_intersecting(layout, e.box.rect):
            if need.get(t, -1) < rel:
                need[t] = rel
    return need


def demand_counts(layout: TileLayout, need: dict) -> tuple:
    pixels = 0
    for t, last in need.items():
        r, c = divmod(t, layout.n_cols)
        pixels += layout.row_heights[r] * layout.col_widths[c] * (last + 1)
    return pixels, len(need)


def decode_counts(sot, q: QuerySpec, layout: TileLayout, index) -> tuple:
    entries = query_entries(sot, q, index)
    if not entries:
        return 0, 0
    return demand_counts(layout, tile_demand(layout, entries, sot_span(sot)[0]))


def pixels_decoded(sot, q: QuerySpec, layout: TileLayout, index) -> int:
    return decode_counts(sot, q, layout, index)[0]


def tiles_decoded(sot, q: QuerySpec, layout: TileLayout, index) -> int:
    return decode_counts(sot, q, layout, index)[1]


def cost_of(pixels, tiles, params: CostParams) -> float:
    return params.beta * pixels + params.gamma * tiles


def estimate_cost(sot, q: QuerySpec, layout: TileLayout, index, params: CostParams) -> CostEstimate:
    p, t = decode_counts(sot, q, layout, index)
    return CostEstimate(p, t, cost_of(p, t, params))


def delta(q: QuerySpec, layout: TileLayout, alt: TileLayout, sot, index, params: CostParams) -> float:
    """Estimated seconds saved by running ``q`` on ``alt`` instead of ``layout``."""
    if layout == alt:
        return 0.0
    return (estimate_cost(sot, q, layout, index, params).cost
            - estimate_cost(sot, q, alt, index, params).cost)


def reencode_cost(sot, layout: TileLayout, params: CostParams) -> float:
    start, end = sot_span(sot)
    pixels = layout.width * layout.height * (end - start)
    return params.enc_beta * pixels + params.enc_fixed * layout.n_tiles


def should_tile(sot, workload, layout: TileLayout, index, alpha: float = 0.8) -> bool:
    """Keep ``layout`` only if it decodes at most ``alpha`` of the untiled pixels."""
    omega = TileLayout.omega(layout.dims)
    tiled = sum(pixels_decoded(sot, q, layout, index) for q in workload)
    untiled = sum(pixels_decoded(sot, q, omega, index) for q in workload)
    return tiled <= alpha * untiled


def fit_linear(samples) -> Calibration:
    """Least-squares fit of ``seconds ~ a * pixels + b * tiles`` (no intercept).

    Coefficients are constrained to be non-negative so the cost stays
    monotone; when one would go negative it is clamped to zero (with a
    warning) and the other is refitted alone.
    """
    arr = np.asarray([(float(p), float(t), float(s)) for p, t, s in samples], dtype=float)
    if arr.ndim != 2 or len(arr) < 2:
        raise CalibrationError("need at least two samples")
    X, y = arr[:, :2], arr[:, 2]
    scale = np.linalg.norm(X, axis=0)
    if np.any(scale == 0):
        raise CalibrationError("a regressor is identically zero")
    Xs = X / scale
    if np.linalg.matrix_rank(Xs, tol=1e-10) < 2:
        raise CalibrationError("samples are collinear; cannot separate pixel and tile cost")
    free, *_ = np.linalg.lstsq(Xs, y, rcond=None)
    if np.any(free < 0):
        warnings.warn(f"clamping negative fitted coefficients {(free / scale).tolist()} to 0")
        coef = optimize.nnls(Xs, y)[0] / scale
    else:
        coef = free / scale
    resid = y - X @ coef
    ss_tot = float(np.sum((y - y.mean()) ** 2))
    ss_res = float(np.sum(resid ** 2))
    r2 = 1.0 - ss_res / ss_tot if ss_tot > 0 else (1.0 if ss_res == 0 else 0.0)
    return Calibration(float(coef[0]), float(coef[1]), r2, len(arr))


def calibrate(samples, base: CostParams = CostParams()) -> tuple:
    """Fit the decode coefficients; returns ``(params, r2)``."""
    fit = fit_linear(samples)
    return CostParams(fit.slope_pixels, fit.slope_tiles, base.enc_beta, base.enc_fixed), fit.r2


def calibrate_encoder(samples, base: CostParams = CostParams()) -> tuple:
    fit = fit_linear(samples)
    return CostParams(base.beta, base.gamma, fit.slope_pixels, fit.slope_tiles), fit.r2


def load_samples(path) -> list:
    with open(path, newline="") as f:
        reader = csv.DictReader(f)
        missing = {"pixels", "tiles", "seconds"} - set(reader.fieldnames or ())
        if missing:
            raise CalibrationError(f"{path}: missing columns {sorted(missing)}")
        return [(float(r["pixels"]), float(r["tiles"]), float(r["seconds"])) for r in reader]


def save_samples(path, samples):
    with open(path, "w", newline="") as f:
        w = csv.writer(f)
        w.writerow(["pixels", "tiles", "seconds"])
        for p, t, s in samples:
            w.writerow([int(p), int(t), repr(float(s))])
