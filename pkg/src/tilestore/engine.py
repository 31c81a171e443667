"""On-disk tiled video store.

Layout on disk::

    <root>/index.tidx                               semantic index log
    <root>/<video>/manifest.json                    dims, gop length, SOT list
    <root>/<video>/frames_<a>-<b>/tile<k>.chk       chunks of SOT [a, b] (inclusive)
    <root>/<video>/frames_<a>-<b>.v<n>/tile<k>.chk  same SOT after its n-th retile

Each SOT is one GOP.  Readers work on an immutable snapshot of the video's
SOT list; ``retile`` writes the new chunks to a fresh directory and then
swaps the manifest, so a reader always sees exactly one layout version.
"""
from __future__ import annotations

import json
import os
import shutil
import threading
import time
from bisect import bisect_right
from collections import Counter, defaultdict
from dataclasses import dataclass, field, replace
from pathlib import Path
from typing import Callable, Optional, Sequence, Union

import numpy as np

from . import codec
from .cost_model import demand_counts, tile_demand
from .errors import (ConcurrentRetileError, InvalidLayoutError, OutOfBoundsError,
                     TileStoreError, UnknownVideoError)
from .geometry import FrameDims, LayoutConfig, TileLayout, tile_rects, tiles_intersecting, validate_layout
from .semantic_index import LabelPredicate, SemanticIndex

MANIFEST = "manifest.json"
INDEX_FILE = "index.tidx"


@dataclass(frozen=True)
class SotRecord:
    index: int
    start: int
    end: int  # exclusive
    layout: TileLayout
    dirname: str
    version: int = 0

    @property
    def frame_range(self) -> tuple:
        return (self.start, self.end)

    @property
    def length(self) -> int:
        return self.end - self.start

    def chunk_name(self, tile_id: int) -> str:
        return f"{self.dirname}/tile{tile_id}.chk"

    @property
    def chunks(self) -> list:
        return [self.chunk_name(k) for k in range(self.layout.n_tiles)]

    def to_dict(self) -> dict:
        return {"start": self.start, "end": self.end, "layout": self.layout.to_dict(),
                "dir": self.dirname, "version": self.version, "chunks": self.chunks}

    @classmethod
    def from_dict(cls, i, d) -> "SotRecord":
        return cls(i, d["start"], d["end"], TileLayout.from_dict(d["layout"]), d["dir"], d["version"])


@dataclass(frozen=True)
class VideoStore:
    name: str
    video_id: int
    dims: FrameDims
    gop_len: int
    length: int
    sots: tuple
    path: Path

    def sot_at(self, frame: int) -> int:
        return bisect_right([s.start for s in self.sots], frame) - 1

    def sots_overlapping(self, lo: int, hi: int) -> list:
        return [s for s in self.sots if s.start < hi and lo < s.end]

    def layouts(self) -> list:
        return [s.layout for s in self.sots]

    def to_manifest(self) -> dict:
        return {"name": self.name, "video_id": self.video_id,
                "dims": [self.dims.width, self.dims.height],
                "gop_len": self.gop_len, "length": self.length,
                "sots": [s.to_dict() for s in self.sots]}

    @classmethod
    def from_manifest(cls, d, path) -> "VideoStore":
        sots = tuple(SotRecord.from_dict(i, s) for i, s in enumerate(d["sots"]))
        return cls(d["name"], d["video_id"], FrameDims(*d["dims"]), d["gop_len"], d["length"], sots, Path(path))


@dataclass(frozen=True)
class PixelRegion:
    frame: int
    label: str
    rect: tuple
    data: bytes

    def array(self) -> np.ndarray:
        x1, y1, x2, y2 = self.rect
        return np.frombuffer(self.data, dtype=np.uint8).reshape(y2 - y1, x2 - x1)


@dataclass
class DecodeStats:
    pixels_decoded: int = 0
    tiles_decoded: int = 0
    chunks_read: int = 0
    seconds: float = 0.0

    def minus(self, other: "DecodeStats") -> "DecodeStats":
        return DecodeStats(self.pixels_decoded - other.pixels_decoded,
                           self.tiles_decoded - other.tiles_decoded,
                           self.chunks_read - other.chunks_read,
                           self.seconds - other.seconds)


_stats = DecodeStats()
_stats_lock = threading.Lock()


def decode_stats() -> DecodeStats:
    with _stats_lock:
        return replace(_stats)


def reset_decode_stats():
    global _stats
    with _stats_lock:
        _stats = DecodeStats()


def _count(pixels, tiles, chunks, seconds):
    with _stats_lock:
        _stats.pixels_decoded += pixels
        _stats.tiles_decoded += tiles
        _stats.chunks_read += chunks
        _stats.seconds += seconds


@dataclass
class StitchedSot:
    start: int
    end: int
    layout: TileLayout
    chunks: list
    reencoded: frozenset = frozenset()


@dataclass
class AnnotatedStream:
    """Encoded output of annotate-and-stitch: per SOT, one chunk per tile."""

    dims: FrameDims
    frame_range: tuple
    sots: list = field(default_factory=list)

    def decode(self) -> np.ndarray:
        lo, hi = self.frame_range
        out = np.empty((hi - lo, self.dims.height, self.dims.width), dtype=np.uint8)
        for s in self.sots:
            frames = _assemble(s.layout, [codec.decode_chunk(c) for c in s.chunks])
            a, b = max(lo, s.start), min(hi, s.end)
            out[a - lo:b - lo] = frames[a - s.start:b - s.start]
        return out


LayoutSpec = Union[None, TileLayout, Sequence, Callable]


def _assemble(layout: TileLayout, tiles: list) -> np.ndarray:
    n = min(t.shape[0] for t in tiles)
    out = np.empty((n, layout.height, layout.width), dtype=np.uint8)
    for r in tile_rects(layout):
        out[:, r.y:r.y + r.h, r.x:r.x + r.w] = tiles[r.tile_id][:n]
    return out


def draw_outline(tile: np.ndarray, tile_xy, rect, value):
    """Draw the 1px border of ``rect`` (frame coords) onto one tile raster."""
    tx, ty = tile_xy
    th, tw = tile.shape
    x1, y1, x2, y2 = rect
    for ex1, ey1, ex2, ey2 in ((x1, y1, x2, y1 + 1), (x1, y2 - 1, x2, y2),
                               (x1, y1, x1 + 1, y2), (x2 - 1, y1, x2, y2)):
        ax1, ay1 = max(ex1, tx), max(ey1, ty)
        ax2, ay2 = min(ex2, tx + tw), min(ey2, ty + th)
        if ax1 < ax2 and ay1 < ay2:
            tile[ay1 - ty:ay2 - ty, ax1 - tx:ax2 - tx] = value


class TileStore:
    def __init__(self, root, layout_cfg: Optional[LayoutConfig] = None):
        self.root = Path(root)
        self.root.mkdir(parents=True, exist_ok=True)
        self.layout_cfg = layout_cfg or LayoutConfig()
        self.index = SemanticIndex(self.root / INDEX_FILE)
        self._lock = threading.RLock()
        self._videos = {}
        self._sot_locks = defaultdict(threading.Lock)
        self._pins = Counter()
        self._graveyard = set()
        for manifest in sorted(self.root.glob(f"*/{MANIFEST}")):
            vs = VideoStore.from_manifest(json.loads(manifest.read_text()), manifest.parent)
            self._videos[vs.name] = vs
            self.index.register_video(vs.name, vs.video_id, vs.dims, vs.length)
            self._sweep_orphans(vs)

    def close(self):
        self.index.close()

    def __enter__(self):
        return self

    def __exit__(self, *exc):
        self.close()

    # -- catalog -------------------------------------------------------------

    def videos(self) -> list:
        return sorted(self._videos)

    def video(self, name) -> VideoStore:
        try:
            return self._videos[name]
        except KeyError:
            raise UnknownVideoError(f"unknown video {name!r}") from None

    def _range(self, vs: VideoStore, frame_range) -> tuple:
        if frame_range is None:
            return 0, vs.length
        lo, hi = frame_range
        if lo < 0 or hi > vs.length or lo >= hi:
            raise OutOfBoundsError(f"frame range [{lo}, {hi}) outside video of {vs.length} frames")
        return lo, hi

    def _write_manifest(self, vs: VideoStore):
        tmp = vs.path / (MANIFEST + ".tmp")
        tmp.write_text(json.dumps(vs.to_manifest(), sort_keys=True, indent=1) + "\n")
        os.replace(tmp, vs.path / MANIFEST)

    def _sweep_orphans(self, vs: VideoStore):
        live = {s.dirname for s in vs.sots}
        for d in vs.path.iterdir():
            if d.is_dir() and d.name.startswith("frames_") and d.name not in live:
                shutil.rmtree(d, ignore_errors=True)

    # -- ingest --------------------------------------------------------------

    def _resolve_layouts(self, layouts: LayoutSpec, n_gops, frames, gop_len, dims):
        if layouts is None or isinstance(layouts, TileLayout):
            one = layouts or TileLayout.omega(dims)
            return [one] * n_gops
        if callable(layouts):
            out = []
            for g in range(n_gops):
                a, b = g * gop_len, min((g + 1) * gop_len, len(frames))
                out.append(layouts(g, a, b, frames[a:b]) or TileLayout.omega(dims))
            return out
        out = [l or TileLayout.omega(dims) for l in layouts]
        if len(out) != n_gops:
            raise InvalidLayoutError(f"{len(out)} layouts given for {n_gops} GOPs")
        return out

    def ingest(self, name: str, frames: np.ndarray, gop_len: int = 30, layouts: LayoutSpec = None) -> VideoStore:
        """Split ``frames`` (n, h, w) into GOP-sized SOTs and store each tile as a chunk.

        ``layouts`` may be one layout for every GOP, a per-GOP sequence (None
        entries mean untiled) or ``f(gop_idx, start, end, gop_frames)``.
        """
        frames = np.asarray(frames)
        if frames.ndim != 3 or frames.dtype != np.uint8:
            raise TileStoreError("frames must be a (n, height, width) uint8 array")
        n, h, w = frames.shape
        if n == 0:
            raise TileStoreError("cannot ingest an empty video")
        a = self.layout_cfg.align
        if w % a or h % a or w == 0 or h == 0:
            raise TileStoreError(f"frame size {w}x{h} must be a positive multiple of {a}")
        if gop_len < 1:
            raise TileStoreError("gop_len must be at least 1")
        if not name or "/" in name or name.startswith("."):
            raise TileStoreError(f"bad video name {name!r}")
        with self._lock:
            if name in self._videos:
                raise TileStoreError(f"video {name!r} already exists")
            vid = max((v.video_id for v in self._videos.values()), default=-1) + 1
        dims = FrameDims(w, h)
        n_gops = -(-n // gop_len)
        per_gop = self._resolve_layouts(layouts, n_gops, frames, gop_len, dims)
        for i, lay in enumerate(per_gop):
            problems = validate_layout(lay, dims, self.layout_cfg)
            if problems:
                raise InvalidLayoutError(f"GOP {i}: " + "; ".join(problems), problems)
        vpath = self.root / name
        vpath.mkdir(parents=True, exist_ok=False)
        sots = []
        for g, lay in enumerate(per_gop):
            start, end = g * gop_len, min((g + 1) * gop_len, n)
            sot = SotRecord(g, start, end, lay, f"frames_{start}-{end - 1}")
            self._write_sot(vpath, sot, frames[start:end])
            sots.append(sot)
        vs = VideoStore(name, vid, dims, gop_len, n, tuple(sots), vpath)
        with self._lock:
            self._write_manifest(vs)
            self._videos[name] = vs
            self.index.register_video(name, vid, dims, n)
        return vs

    def _write_sot(self, vpath: Path, sot: SotRecord, frames: np.ndarray, final_dir=None):
        d = vpath / (final_dir or sot.dirname)
        d.mkdir(parents=True, exist_ok=True)
        for r in tile_rects(sot.layout):
            tile = frames[:, r.y:r.y + r.h, r.x:r.x + r.w]
            (d / f"tile{r.tile_id}.chk").write_bytes(codec.encode_chunk(tile, (r.x, r.y, r.w, r.h)))

    # -- metadata -------------------------------------------------------------

    def add_metadata(self, video, frame, label, x1, y1, x2, y2) -> bool:
        self.video(video)
        return self.index.add_metadata(video, frame, label, x1, y1, x2, y2)

    # -- reading ---------------------------------------------------------------

    def _pin(self, vs, sots):
        with self._lock:
            for s in sots:
                self._pins[vs.path / s.dirname] += 1

    def _unpin(self, vs, sots):
        with self._lock:
            for s in sots:
                p = vs.path / s.dirname
                self._pins[p] -= 1
                if self._pins[p] <= 0:
                    del self._pins[p]
                    if p in self._graveyard:
                        self._graveyard.discard(p)
                        shutil.rmtree(p, ignore_errors=True)

    def _read_chunk(self, vs, sot, tile_id) -> bytes:
        return (vs.path / sot.chunk_name(tile_id)).read_bytes()

    def _decode_tile(self, vs, sot, tile_id, upto=None, count=True) -> np.ndarray:
        t0 = time.perf_counter()
        data = self._read_chunk(vs, sot, tile_id)
        out = codec.decode_chunk(data, upto)
        if count:
            _count(out.shape[0] * out.shape[1] * out.shape[2], 1, 1, time.perf_counter() - t0)
        return out

    def _decode_sot(self, vs, sot, upto=None, count=True) -> np.ndarray:
        tiles = [self._decode_tile(vs, sot, k, upto, count) for k in range(sot.layout.n_tiles)]
        return _assemble(sot.layout, tiles)

    def scan(self, video, pred: LabelPredicate, frame_range=None) -> list:
        """Pixels of every box matching ``pred``, decoding only the tiles those boxes touch.

        One region per box, ordered by (frame, label, x1, y1).
        """
        vs = self.video(video)
        lo, hi = self._range(vs, frame_range)
        entries = self.index.lookup(video, pred, (lo, hi))
        if not entries:
            return []
        groups = defaultdict(list)
        for e in entries:
            groups[vs.sot_at(e.frame)].append(e)
        touched = [vs.sots[i] for i in sorted(groups)]
        out = []
        self._pin(vs, touched)
        try:
            for sot in touched:
                ents = groups[sot.index]
                need = tile_demand(sot.layout, ents, sot.start)
                tiles = {t: self._decode_tile(vs, sot, t, last) for t, last in need.items()}
                for e in ents:
                    out.append(self._crop(sot, tiles, e))
        finally:
            self._unpin(vs, touched)
        out.sort(key=lambda r: (r.frame, r.label, r.rect[0], r.rect[1]))
        return out

    def _crop(self, sot, tiles, e) -> PixelRegion:
        x1, y1, x2, y2 = e.rect
        rel = e.frame - sot.start
        region = np.empty((y2 - y1, x2 - x1), dtype=np.uint8)
        for t in tiles_intersecting(sot.layout, e.rect):
            r = sot.layout.tile_rect(t)
            ax1, ay1 = max(x1, r.x), max(y1, r.y)
            ax2, ay2 = min(x2, r.x + r.w), min(y2, r.y + r.h)
            region[ay1 - y1:ay2 - y1, ax1 - x1:ax2 - x1] = \
                tiles[t][rel, ay1 - r.y:ay2 - r.y, ax1 - r.x:ax2 - r.x]
        return PixelRegion(e.frame, e.label, e.rect, region.tobytes())

    def predicted_counts(self, video, pred: LabelPredicate, frame_range=None) -> tuple:
        """(pixels, tiles) that :meth:`scan` will decode under the current layouts."""
        vs = self.video(video)
        lo, hi = self._range(vs, frame_range)
        groups = defaultdict(list)
        for e in self.index.lookup(video, pred, (lo, hi)):
            groups[vs.sot_at(e.frame)].append(e)
        p = t = 0
        for i, ents in groups.items():
            sot = vs.sots[i]
            dp, dt = demand_counts(sot.layout, tile_demand(sot.layout, ents, sot.start))
            p, t = p + dp, t + dt
        return p, t

    def stitch(self, video, frame_range=None) -> np.ndarray:
        """Reassemble full frames for ``frame_range`` from the stored tiles."""
        vs = self.video(video)
        lo, hi = self._range(vs, frame_range)
        out = np.empty((hi - lo, vs.dims.height, vs.dims.width), dtype=np.uint8)
        sots = vs.sots_overlapping(lo, hi)
        self._pin(vs, sots)
        try:
            for sot in sots:
                a, b = max(lo, sot.start), min(hi, sot.end)
                frames = self._decode_sot(vs, sot, upto=b - 1 - sot.start)
                out[a - lo:b - lo] = frames[a - sot.start:]
        finally:
            self._unpin(vs, sots)
        return out

    # -- physical tuning -------------------------------------------------------

    def retile(self, video, sot_index: int, layout: TileLayout) -> SotRecord:
        """Re-encode one SOT with ``layout``; returns the new record."""
        vs = self.video(video)
        if not 0 <= sot_index < len(vs.sots):
            raise OutOfBoundsError(f"SOT {sot_index} outside 0..{len(vs.sots) - 1}")
        problems = validate_layout(layout, vs.dims, self.layout_cfg)
        if problems:
            raise InvalidLayoutError("; ".join(problems), problems)
        with self._lock:
            lock = self._sot_locks[(video, sot_index)]
        if not lock.acquire(blocking=False):
            raise ConcurrentRetileError(f"SOT {sot_index} of {video!r} is already being retiled")
        try:
            old = self.video(video).sots[sot_index]
            frames = self._decode_sot(vs, old, count=False)
            new = replace(old, layout=layout, version=old.version + 1,
                          dirname=f"frames_{old.start}-{old.end - 1}.v{old.version + 1}")
            tmp = new.dirname + ".tmp"
            shutil.rmtree(vs.path / tmp, ignore_errors=True)
            self._write_sot(vs.path, new, frames, final_dir=tmp)
            os.rename(vs.path / tmp, vs.path / new.dirname)
            with self._lock:
                cur = self.video(video)
                sots = list(cur.sots)
                sots[sot_index] = new
                updated = replace(cur, sots=tuple(sots))
                self._write_manifest(updated)
                self._videos[video] = updated
                old_dir = vs.path / old.dirname
                if self._pins[old_dir] > 0:
                    self._graveyard.add(old_dir)
                else:
                    self._pins.pop(old_dir, None)
                    shutil.rmtree(old_dir, ignore_errors=True)
            return new
        finally:
            lock.release()

    def annotate_and_stitch(self, video, labels, frame_range=None, box_value: int = 255) -> AnnotatedStream:
        """Draw 1px outlines around boxes of ``labels`` and emit a re-stitched stream.

        Only tiles that intersect a matching box are decoded and re-encoded;
        all other chunks are passed through byte-for-byte.
        """
        vs = self.video(video)
        lo, hi = self._range(vs, frame_range)
        labels = sorted(set(labels))
        entries = self.index.lookup(video, LabelPredicate.any_of(*labels), (lo, hi)) if labels else ()
        groups = defaultdict(list)
        for e in entries:
            groups[vs.sot_at(e.frame)].append(e)
        stream = AnnotatedStream(vs.dims, (lo, hi))
        sots = vs.sots_overlapping(lo, hi)
        self._pin(vs, sots)
        try:
            for sot in sots:
                chunks = [self._read_chunk(vs, sot, k) for k in range(sot.layout.n_tiles)]
                ents = groups.get(sot.index, [])
                touched = set()
                for e in ents:
                    touched |= tiles_intersecting(sot.layout, e.rect)
                for t in sorted(touched):
                    r = sot.layout.tile_rect(t)
                    frames = self._decode_tile(vs, sot, t)
                    for e in ents:
                        draw_outline(frames[e.frame - sot.start], (r.x, r.y), e.rect, box_value)
                    chunks[t] = codec.encode_chunk(frames, (r.x, r.y, r.w, r.h))
                stream.sots.append(StitchedSot(sot.start, sot.end, sot.layout, chunks, frozenset(touched)))
        finally:
            self._unpin(vs, sots)
        return stream

    # -- accounting --------------------------------------------------------------

    def storage_bytes(self, video) -> int:
        vs = self.video(video)
        total = (vs.path / MANIFEST).stat().st_size
        for sot in vs.sots:
            total += sum(f.stat().st_size for f in (vs.path / sot.dirname).iterdir())
        return total

    def chunk_bytes(self, video, sot_index: int) -> list:
        vs = self.video(video)
        sot = vs.sots[sot_index]
        return [self._read_chunk(vs, sot, k) for k in range(sot.layout.n_tiles)]
