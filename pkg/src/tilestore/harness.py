"""Run layout strategies over synthetic scenes and report normalized cumulative cost."""
from __future__ import annotations

import csv
import shutil
import tempfile
import time
from dataclasses import dataclass, field
from pathlib import Path
from statistics import median
from typing import Optional

import numpy as np

from . import cost_model as cm
from .cost_model import CostParams, QuerySpec
from .engine import TileStore, decode_stats
from .geometry import LayoutConfig, TileLayout, fine_grained_layout
from .semantic_index import LabelPredicate
from .tuner import Strategy, StrategyRunner, TunerConfig

VIDEO = "video"
REPORT_HEADER = ["strategy", "query_idx", "label", "start_frame", "span", "measured_s", "model_s",
                 "pixels", "tiles", "retile_s", "cum_norm"]


@dataclass(frozen=True)
class BenchConfig:
    gop_len: int = 30
    repeats: int = 3
    tuner: TunerConfig = TunerConfig()
    params: CostParams = CostParams()
    workdir: Optional[str] = None


@dataclass
class ReportRow:
    strategy: str
    query_idx: int
    label: str
    start_frame: int
    span: int
    measured_s: float
    model_s: float
    pixels: int
    tiles: int
    retile_s: float
    cum_norm: float = 0.0


@dataclass
class BenchReport:
    rows: list
    events: dict = field(default_factory=dict)

    def strategies(self) -> list:
        return list(dict.fromkeys(r.strategy for r in self.rows))

    def series(self, strategy) -> list:
        return [r for r in self.rows if r.strategy == str(Strategy(strategy).value)]

    def cumulative(self, strategy, at: Optional[int] = None) -> float:
        """Normalized cumulative cost after ``at`` queries (default all)."""
        s = self.series(strategy)
        at = len(s) if at is None else at
        return s[at - 1].cum_norm if at else 0.0

    def write_csv(self, path):
        with open(path, "w", newline="") as f:
            w = csv.writer(f)
            w.writerow(REPORT_HEADER)
            for r in self.rows:
                w.writerow([r.strategy, r.query_idx, r.label, r.start_frame, r.span,
                            repr(r.measured_s), repr(r.model_s), r.pixels, r.tiles,
                            repr(r.retile_s), repr(r.cum_norm)])


def ingest_scene(store: TileStore, scene, gop_len=30, layouts=None, name=VIDEO):
    vs = store.ingest(name, scene.frames, gop_len, layouts)
    store.index.add_boxes(name, scene.boxes)
    return vs


def _retarget(workload, video):
    return [q if q.video == video else QuerySpec(video, q.predicate, q.frame_range) for q in workload]


def run_benchmark(scene, workload, strategies, cfg: BenchConfig = BenchConfig()) -> BenchReport:
    """Run each strategy on its own fresh untiled copy of ``scene``.

    Strategies advance in lock-step, one query at a time (with the order
    rotating between queries), so slow drift in machine speed hits all of
    them alike.  Wall-clock columns are per-query medians over
    ``cfg.repeats`` runs.  ``cum_norm`` is the running sum of
    ``(measured_s + retile_s) / not_tiled measured_s``, so the untiled series
    reaches exactly ``n`` after ``n`` queries.
    """
    order = [Strategy.NOT_TILED] + list(dict.fromkeys(
        s for s in map(Strategy, strategies) if s is not Strategy.NOT_TILED))
    workload = _retarget(workload, VIDEO)
    tmp = tempfile.mkdtemp(prefix="bench-", dir=cfg.workdir)
    runs = {s: [] for s in order}
    try:
        pristine = Path(tmp) / "pristine"
        with TileStore(pristine, cfg.tuner.layout_cfg) as st:
            ingest_scene(st, scene, cfg.gop_len)
        for rep in range(max(1, cfg.repeats)):
            stores, runners = [], []
            for strat in order:
                work = Path(tmp) / f"{strat.value}-{rep}"
                shutil.copytree(pristine, work)
                st = TileStore(work, cfg.tuner.layout_cfg)
                stores.append(st)
                runners.append(StrategyRunner(strat, st, VIDEO, cfg.tuner, cfg.params))
            for r in runners:
                r.prepare()
            for i, q in enumerate(workload):
                k = i % len(runners)
                for r in runners[k:] + runners[:k]:
                    r.step(q)
            for strat, r, st in zip(order, runners, stores):
                runs[strat].append(r.finish())
                st.close()
                shutil.rmtree(st.root)
    finally:
        shutil.rmtree(tmp, ignore_errors=True)
    rows, events = [], {}
    for strat in order:
        rs = runs[strat]
        events[strat.value] = rs[0].events
        for i, first in enumerate(rs[0].results):
            rows.append(ReportRow(strat.value, i, first.label, first.start_frame, first.span,
                                  median(r.results[i].measured_s for r in rs), first.model_s,
                                  first.pixels, first.tiles,
                                  median(r.results[i].retile_s for r in rs)))
    base = [r.measured_s for r in rows if r.strategy == Strategy.NOT_TILED.value]
    for strat in order:
        total = 0.0
        for r in (r for r in rows if r.strategy == strat.value):
            total += (r.measured_s + r.retile_s) / base[r.query_idx]
            r.cum_norm = total
    return BenchReport(rows, events)


def random_box_layout(rng, boxes, dims, cfg: LayoutConfig = LayoutConfig()) -> TileLayout:
    """Fine layout around a random subset of ``boxes``; untiled if the subset is empty."""
    if not boxes:
        return TileLayout.omega(dims)
    keep = [b for b in boxes if rng.random() < 0.5] or [boxes[int(rng.integers(len(boxes)))]]
    return fine_grained_layout(keep, dims, cfg)


def decode_samples(store: TileStore, video, queries, repeats: int = 1) -> list:
    """``(pixels, tiles, seconds)`` per query; seconds are the minimum over repeats
    of the time spent decoding tile chunks."""
    out = []
    for q in queries:
        best = None
        for _ in range(repeats):
            before = decode_stats()
            store.scan(video, q.predicate, q.frame_range)
            d = decode_stats().minus(before)
            if best is None or d.seconds < best.seconds:
                best = d
        if best.tiles_decoded:
            out.append((best.pixels_decoded, best.tiles_decoded, best.seconds))
    return out


def encode_samples(store: TileStore, video, layouts) -> list:
    """``(frame pixels re-encoded, tiles written, seconds)`` for retiling SOTs in turn."""
    vs = store.video(video)
    out = []
    for j, lay in enumerate(layouts):
        sot = vs.sots[j % len(vs.sots)]
        t0 = time.perf_counter()
        store.retile(video, sot.index, lay)
        out.append((vs.dims.area * sot.length, lay.n_tiles, time.perf_counter() - t0))
    return out


def collect_calibration_samples(scene, gop_len=30, n_decode=60, n_encode=12, seed=0, workdir=None) -> tuple:
    """Decode and re-encode timings on ``scene`` stored with random box-driven layouts.

    Returns ``(decode_samples, encode_samples)`` as ``(pixels, tiles, seconds)`` rows.
    """
    rng = np.random.default_rng(seed)
    dims = scene.spec.dims
    by_gop = {}
    for b in scene.boxes:
        by_gop.setdefault(b.frame // gop_len, []).append(b)
    labels = scene.labels
    tmp = tempfile.mkdtemp(prefix="calib-", dir=workdir)
    try:
        with TileStore(tmp) as st:
            n_gops = -(-scene.spec.length // gop_len)
            lays = [random_box_layout(rng, by_gop.get(g, []), dims, st.layout_cfg) for g in range(n_gops)]
            ingest_scene(st, scene, gop_len, lays)
            queries = []
            for _ in range(n_decode):
                a = int(rng.integers(0, scene.spec.length - 1))
                b = int(rng.integers(a + 1, min(scene.spec.length, a + 3 * gop_len) + 1))
                lbl = labels[int(rng.integers(len(labels)))]
                queries.append(QuerySpec(VIDEO, LabelPredicate.any_of(lbl), (a, b)))
            dec = decode_samples(st, VIDEO, queries, repeats=2)
            enc_lays = [random_box_layout(rng, by_gop.get(j, []), dims, st.layout_cfg) for j in range(n_encode)]
            enc = encode_samples(st, VIDEO, enc_lays)
    finally:
        shutil.rmtree(tmp, ignore_errors=True)
    return dec, enc


def fit_params(dec, enc, base: CostParams = CostParams()) -> tuple:
    """``(params, decode_r2, encode_r2)`` from timing samples."""
    params, r2 = cm.calibrate(dec, base)
    if len({t for _, t, _ in enc}) > 1:
        fit = cm.fit_linear(enc)
        return CostParams(params.beta, params.gamma, fit.slope_pixels, fit.slope_tiles), r2, fit.r2
    # a single tile count cannot separate the per-tile term; fit pixels only
    arr = np.asarray(enc, dtype=float)
    slope = float(arr[:, 2] @ arr[:, 0] / (arr[:, 0] @ arr[:, 0]))
    return CostParams(params.beta, params.gamma, slope, 0.0), r2, float("nan")


def calibrate_on_scene(scene, gop_len=30, n_decode=60, n_encode=12, seed=0, workdir=None,
                       base: CostParams = CostParams()) -> tuple:
    """Fit decode and re-encode coefficients on ``scene``; returns ``(params, decode_r2, encode_r2)``."""
    dec, enc = collect_calibration_samples(scene, gop_len, n_decode, n_encode, seed, workdir)
    return fit_params(dec, enc, base)
