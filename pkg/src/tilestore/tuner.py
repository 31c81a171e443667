"""Layout policies: known-workload optimizer, regret-driven incremental retiling,
and the baselines they are compared against.
"""
from __future__ import annotations

import csv
import time
from dataclasses import dataclass, field
from enum import Enum
from itertools import combinations

from . import cost_model as cm
from .cost_model import CostParams, QuerySpec
from .engine import decode_stats
from .geometry import LayoutConfig, TileLayout, fine_grained_layout
from .semantic_index import LabelPredicate


class Strategy(str, Enum):
    NOT_TILED = "not_tiled"
    ALL_OBJECTS = "all_objects"
    INCREMENTAL_MORE = "incremental_more"
    INCREMENTAL_REGRET = "incremental_regret"


@dataclass(frozen=True)
class TunerConfig:
    alpha: float = 0.8
    eta: float = 1.0
    max_candidate_labels: int = 8
    max_subset_size: int = 3
    layout_cfg: LayoutConfig = LayoutConfig()

    def __post_init__(self):
        if not 0 < self.alpha <= 1:
            raise ValueError("alpha must be in (0, 1]")
        if self.eta < 0:
            raise ValueError("eta must be non-negative")


@dataclass
class SotState:
    span: tuple
    layout: TileLayout
    history: list
    regret: dict = field(default_factory=dict)
    window: list = field(default_factory=list)    # (query_idx, layout in effect) since last retile
    observed: list = field(default_factory=list)  # every query index that touched this SOT
    retiled_at: list = field(default_factory=list)


@dataclass
class RetileAction:
    query_idx: int
    sot_idx: int
    labels: tuple
    layout: TileLayout
    regret: float
    reencode_cost: float
    seconds: float = 0.0


@dataclass
class RegretState:
    video: str
    sots: list
    seen: list = field(default_factory=list)
    candidates: set = field(default_factory=set)
    queries: list = field(default_factory=list)
    _layouts: dict = field(default_factory=dict, repr=False)
    _costs: dict = field(default_factory=dict, repr=False)
    _version: int = field(default=-1, repr=False)

    @classmethod
    def from_layouts(cls, video, spans, layouts) -> "RegretState":
        return cls(video, [SotState(tuple(s), l, [l]) for s, l in zip(spans, layouts)])

    @classmethod
    def from_store(cls, store, video) -> "RegretState":
        vs = store.video(video)
        return cls.from_layouts(video, [s.frame_range for s in vs.sots], vs.layouts())

    def _sync(self, index):
        if index.version != self._version:
            self._layouts.clear()
            self._costs.clear()
            self._version = index.version

    def candidate_layout(self, j, labels: frozenset, index, cfg: TunerConfig) -> TileLayout:
        self._sync(index)
        key = (j, labels)
        lay = self._layouts.get(key)
        if lay is None:
            st = self.sots[j]
            ents = index.lookup(self.video, LabelPredicate.any_of(*labels), st.span)
            lay = fine_grained_layout([e.box for e in ents], st.layout.dims, cfg.layout_cfg)
            self._layouts[key] = lay
        return lay

    def cost(self, j, q, layout, index, params) -> float:
        self._sync(index)
        key = (j, q, layout)
        c = self._costs.get(key)
        if c is None:
            c = self._costs[key] = cm.estimate_cost(self.sots[j].span, q, layout, index, params).cost
        return c

    def delta(self, j, q, layout, alt, index, params) -> float:
        if layout == alt:
            return 0.0
        return self.cost(j, q, layout, index, params) - self.cost(j, q, alt, index, params)


def candidate_sets(labels, cfg: TunerConfig) -> set:
    """Non-empty label subsets up to ``max_subset_size`` plus the full set."""
    labels = sorted(labels)
    out = set()
    for r in range(1, min(cfg.max_subset_size, len(labels)) + 1):
        out.update(frozenset(c) for c in combinations(labels, r))
    if labels:
        out.add(frozenset(labels))
    return out


def _key(labels) -> tuple:
    return tuple(sorted(labels))


def alpha_ok(state: RegretState, j, layout: TileLayout, index, alpha) -> bool:
    """True unless ``layout`` decodes more than ``alpha`` of the untiled pixels for some
    query already observed on SOT ``j``."""
    st = state.sots[j]
    omega = TileLayout.omega(st.layout.dims)
    for m in st.observed:
        q = state.queries[m]
        p = cm.pixels_decoded(st.span, q, layout, index)
        if p and p > alpha * cm.pixels_decoded(st.span, q, omega, index):
            return False
    return True


def observe_query(state: RegretState, q: QuerySpec, index, cfg: TunerConfig, params: CostParams,
                  engine=None, log=None) -> list:
    """Account one executed query and retile the SOTs whose regret pays for it.

    With ``engine=None`` layouts only change in ``state`` (dry run).
    """
    i = len(state.queries)
    state.queries.append(q)
    for lbl in sorted(q.labels):
        if lbl not in state.seen:
            state.seen.append(lbl)
    located = index.distinct_labels(state.video)
    universe = [l for l in state.seen[:cfg.max_candidate_labels] if l in located]
    alts = candidate_sets(universe, cfg)

    # new candidates inherit the regret they would have earned since the last retile
    for k in sorted(alts - state.candidates, key=_key):
        for j, st in enumerate(state.sots):
            if not st.window:
                st.regret[k] = 0.0
                continue
            lay = state.candidate_layout(j, k, index, cfg)
            st.regret[k] = sum(state.delta(j, state.queries[m], lm, lay, index, params)
                               for m, lm in st.window)
    state.candidates = alts

    touched = [j for j, st in enumerate(state.sots) if cm.touches(q, st.span)]
    step = {}
    for j in touched:
        st = state.sots[j]
        st.observed.append(i)
        st.window.append((i, st.layout))
        for k in alts:
            d = state.delta(j, q, st.layout, state.candidate_layout(j, k, index, cfg), index, params)
            st.regret[k] += d
            step[(j, k)] = d

    actions = []
    for j, st in enumerate(state.sots):
        if not st.window:
            continue
        best = None
        for k in sorted(alts, key=lambda k: (-st.regret[k], _key(k))):
            if st.regret[k] <= 0:
                break
            lay = state.candidate_layout(j, k, index, cfg)
            if lay != st.layout and alpha_ok(state, j, lay, index, cfg.alpha):
                best = (k, lay)
                break
        r = cm.reencode_cost(st.span, best[1], params) if best else 0.0
        if log is not None and j in touched:
            k = best[0] if best else None
            log.append((i, j, "observe", "+".join(_key(k)) if k else "",
                        step.get((j, k), 0.0), st.regret[k] if k else 0.0, r))
        if best is None or st.regret[best[0]] <= cfg.eta * r:
            continue
        k, lay = best
        act = RetileAction(i, j, _key(k), lay, st.regret[k], r)
        t0 = time.perf_counter()
        if engine is not None:
            engine.retile(state.video, j, lay)
        act.seconds = time.perf_counter() - t0
        st.layout = lay
        st.history.append(lay)
        st.retiled_at.append(i)
        st.window = []
        st.regret = {kk: 0.0 for kk in alts}
        actions.append(act)
        if log is not None:
            log.append((i, j, "retile", "+".join(_key(k)), step.get((j, k), 0.0), act.regret, r))
    return actions


def optimize_known(video, workload, index, spans, dims, cfg: TunerConfig = TunerConfig(),
                   params: CostParams = CostParams()) -> dict:
    """Per-SOT layouts for a fully known workload and index.

    Each SOT gets a fine-grained layout around the queried objects present in
    it when that layout passes the alpha rule and is estimated cheaper than
    leaving the SOT untiled.
    """
    omega = TileLayout.omega(dims)
    located = index.distinct_labels(video)
    out = {}
    for j, span in enumerate(spans):
        qs = [q for q in workload if cm.touches(q, span)]
        labels = sorted({l for q in qs for l in q.labels} & located)
        out[j] = omega
        if not labels:
            continue
        ents = index.lookup(video, LabelPredicate.any_of(*labels), span)
        cand = fine_grained_layout([e.box for e in ents], dims, cfg.layout_cfg)
        if cand == omega or not cm.should_tile(span, qs, cand, index, cfg.alpha):
            continue
        c_cand = sum(cm.estimate_cost(span, q, cand, index, params).cost for q in qs)
        c_omega = sum(cm.estimate_cost(span, q, omega, index, params).cost for q in qs)
        if c_cand <= c_omega:
            out[j] = cand
    return out


@dataclass
class QueryResult:
    query_idx: int
    label: str
    start_frame: int
    span: int
    measured_s: float
    model_s: float
    pixels: int
    tiles: int
    retile_s: float
    retiles: int = 0


@dataclass
class StrategyRun:
    strategy: Strategy
    results: list
    events: list
    layouts: list


def _fine_around(store, video, sot, labels, cfg):
    if not labels:
        return TileLayout.omega(store.video(video).dims)
    ents = store.index.lookup(video, LabelPredicate.any_of(*labels), sot.frame_range)
    return fine_grained_layout([e.box for e in ents], sot.layout.dims, cfg.layout_cfg)


class StrategyRunner:
    """Applies one strategy to one store query by query.

    ``measured_s`` is the wall-clock scan time of a query and ``retile_s`` the
    time spent re-encoding SOTs after it; the up-front tiling of
    ``all_objects`` is charged to the first query.
    """

    def __init__(self, strategy, store, video, cfg: TunerConfig = TunerConfig(),
                 params: CostParams = CostParams()):
        self.strategy = Strategy(strategy)
        self.store, self.video, self.cfg, self.params = store, video, cfg, params
        self.state = RegretState.from_store(store, video) if self.strategy is Strategy.INCREMENTAL_REGRET else None
        self.events = []
        self.results = []
        self.seen = set()
        self._upfront = (0.0, 0)

    def prepare(self):
        if self.strategy is not Strategy.ALL_OBJECTS:
            return
        store, video = self.store, self.video
        labels = sorted(store.index.distinct_labels(video))
        spent, n = 0.0, 0
        for sot in store.video(video).sots:
            lay = _fine_around(store, video, sot, labels, self.cfg)
            if lay != sot.layout:
                t0 = time.perf_counter()
                store.retile(video, sot.index, lay)
                spent += time.perf_counter() - t0
                n += 1
                self.events.append((-1, sot.index, "retile", "+".join(labels), 0.0, 0.0,
                                    cm.reencode_cost(sot.frame_range, lay, self.params)))
        self._upfront = (spent, n)

    def step(self, q: QuerySpec) -> QueryResult:
        store, video = self.store, self.video
        i = len(self.results)
        vs = store.video(video)
        lo, hi = q.frame_range or (0, vs.length)
        model = sum(cm.estimate_cost(s.frame_range, q, s.layout, store.index, self.params).cost
                    for s in vs.sots_overlapping(lo, hi))
        before = decode_stats()
        t0 = time.perf_counter()
        store.scan(video, q.predicate, q.frame_range)
        measured = time.perf_counter() - t0
        used = decode_stats().minus(before)

        retile_s, retiles = self._upfront if i == 0 else (0.0, 0)
        if self.strategy is Strategy.INCREMENTAL_REGRET:
            acts = observe_query(self.state, q, store.index, self.cfg, self.params, engine=store, log=self.events)
            retile_s += sum(a.seconds for a in acts)
            retiles += len(acts)
        elif self.strategy is Strategy.INCREMENTAL_MORE:
            self.seen |= q.labels
            labels = sorted(self.seen & store.index.distinct_labels(video))
            for sot in vs.sots_overlapping(lo, hi):
                lay = _fine_around(store, video, sot, labels, self.cfg)
                if lay != store.video(video).sots[sot.index].layout:
                    t0 = time.perf_counter()
                    store.retile(video, sot.index, lay)
                    retile_s += time.perf_counter() - t0
                    retiles += 1
                    self.events.append((i, sot.index, "retile", "+".join(sorted(self.seen)), 0.0, 0.0,
                                        cm.reencode_cost(sot.frame_range, lay, self.params)))
        res = QueryResult(i, str(q.predicate), lo, hi - lo, measured, model,
                          used.pixels_decoded, used.tiles_decoded, retile_s, retiles)
        self.results.append(res)
        return res

    def finish(self) -> StrategyRun:
        return StrategyRun(self.strategy, self.results, self.events, self.store.video(self.video).layouts())


def run_strategy(strategy, store, video, workload, cfg: TunerConfig = TunerConfig(),
                 params: CostParams = CostParams()) -> StrategyRun:
    """Execute ``workload`` against ``store`` while applying ``strategy``."""
    runner = StrategyRunner(strategy, store, video, cfg, params)
    runner.prepare()
    for q in workload:
        runner.step(q)
    return runner.finish()


EVENT_HEADER = ["query_idx", "sot_idx", "action", "layout_labels", "delta_cost", "regret", "reencode_cost"]


def write_event_log(path, events):
    with open(path, "w", newline="") as f:
        w = csv.writer(f)
        w.writerow(EVENT_HEADER)
        for row in events:
            w.writerow([row[0], row[1], row[2], row[3], repr(float(row[4])),
                        repr(float(row[5])), repr(float(row[6]))])
