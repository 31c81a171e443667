"""Persistent store of labeled bounding boxes, clustered on (video, label, frame).

On disk the index is an append-only log::

    b"TASMIDX1"
    repeated: u32 record_length | u32 video_id | u32 frame | u16 label_len
              | label (utf-8) | u16 x1 | u16 y1 | u16 x2 | u16 y2

(all little-endian).  The log is replayed into an ordered in-memory map on
open; :meth:`SemanticIndex.compact` rewrites it as one sorted run.
"""
from __future__ import annotations

import os
import struct
import threading
from bisect import bisect_left, insort
from dataclasses import dataclass
from pathlib import Path

from .errors import CorruptDataError, OutOfBoundsError, TileStoreError, UnknownVideoError
from .geometry import BoundingBox, FrameDims

MAGIC = b"TASMIDX1"
_LEN = struct.Struct("<I")
_HEAD = struct.Struct("<IIH")
_BOX = struct.Struct("<4H")


@dataclass(frozen=True)
class LabelPredicate:
    """Conjunction of clauses; each clause is a disjunction of label literals."""

    clauses: tuple

    def __post_init__(self):
        clauses = tuple(frozenset(c) for c in self.clauses)
        if not clauses or any(not c for c in clauses):
            raise ValueError("predicate needs at least one non-empty clause")
        if any(not lbl for c in clauses for lbl in c):
            raise ValueError("labels must be non-empty strings")
        object.__setattr__(self, "clauses", clauses)

    @classmethod
    def any_of(cls, *labels) -> "LabelPredicate":
        return cls((frozenset(labels),))

    @classmethod
    def parse(cls, text: str) -> "LabelPredicate":
        """``"car|bicycle & red"`` -> (car OR bicycle) AND red."""
        clauses = []
        for part in text.split("&"):
            lits = [s.strip() for s in part.split("|")]
            if not part.strip() or any(not s for s in lits):
                raise ValueError(f"malformed predicate {text!r}")
            clauses.append(frozenset(lits))
        return cls(tuple(clauses))

    @property
    def labels(self) -> frozenset:
        return frozenset().union(*self.clauses)

    def satisfied_by(self, labels_present) -> bool:
        return all(c & labels_present for c in self.clauses)

    def __str__(self):
        return " & ".join("|".join(sorted(c)) for c in self.clauses)


@dataclass(frozen=True, order=True)
class IndexEntry:
    video: str
    box: BoundingBox

    @property
    def label(self):
        return self.box.label

    @property
    def frame(self):
        return self.box.frame

    @property
    def rect(self):
        return self.box.rect


@dataclass(frozen=True)
class _VideoInfo:
    name: str
    video_id: int
    dims: FrameDims
    length: int


class SemanticIndex:
    def __init__(self, path):
        self.path = Path(path)
        self._lock = threading.RLock()
        self._videos = {}  # name -> _VideoInfo
        self._by_id = {}
        # (video_id, label) -> sorted frame list, plus (video_id, label, frame) -> sorted rects
        self._frames = {}
        self._boxes = {}
        self._cache = {}
        self.version = 0
        self._load()
        self._fh = open(self.path, "ab")

    # -- persistence -----------------------------------------------------

    def _load(self):
        if not self.path.exists() or self.path.stat().st_size == 0:
            with open(self.path, "wb") as f:
                f.write(MAGIC)
            return
        data = self.path.read_bytes()
        if data[:8] != MAGIC:
            raise CorruptDataError(f"{self.path} is not an index file")
        pos, end = 8, len(data)
        while pos < end:
            if pos + 4 > end:
                break  # torn tail from an interrupted append
            (n,) = _LEN.unpack_from(data, pos)
            if pos + 4 + n > end:
                break
            rec = _decode_record(data[pos + 4:pos + 4 + n])
            self._insert(*rec)
            pos += 4 + n

    def close(self):
        with self._lock:
            if not self._fh.closed:
                self._fh.close()

    def __enter__(self):
        return self

    def __exit__(self, *exc):
        self.close()

    def compact(self):
        """Rewrite the log as a single sorted run."""
        with self._lock:
            tmp = self.path.with_suffix(".compact")
            with open(tmp, "wb") as f:
                f.write(MAGIC)
                for key in sorted(self._boxes):
                    vid, label, frame = key
                    for rect in self._boxes[key]:
                        rec = _encode_record(vid, frame, label, rect)
                        f.write(_LEN.pack(len(rec)) + rec)
            self._fh.close()
            os.replace(tmp, self.path)
            self._fh = open(self.path, "ab")

    # -- registry ----------------------------------------------------------

    def register_video(self, name: str, video_id: int, dims: FrameDims, length: int):
        with self._lock:
            info = _VideoInfo(name, video_id, dims, length)
            self._videos[name] = info
            self._by_id[video_id] = info
            self._cache = {}

    def _info(self, video) -> _VideoInfo:
        try:
            return self._videos[video]
        except KeyError:
            raise UnknownVideoError(f"unknown video {video!r}") from None

    # -- writes ------------------------------------------------------------

    def _insert(self, vid, frame, label, rect) -> bool:
        key = (vid, label, frame)
        rects = self._boxes.get(key)
        if rects is None:
            self._boxes[key] = [rect]
            insort(self._frames.setdefault((vid, label), []), frame)
            return True
        i = bisect_left(rects, rect)
        if i < len(rects) and rects[i] == rect:
            return False
        rects.insert(i, rect)
        return True

    def add_metadata(self, video, frame, label, x1, y1, x2, y2) -> bool:
        """Insert one box; returns False when it was already present."""
        return self.add_many([(video, frame, label, x1, y1, x2, y2)]) == 1

    def add_many(self, rows) -> int:
        rows = list(rows)
        with self._lock:
            checked = [self._validate(*r) for r in rows]
            buf = bytearray()
            added = 0
            for vid, frame, label, rect in checked:
                if self._insert(vid, frame, label, rect):
                    rec = _encode_record(vid, frame, label, rect)
                    buf += _LEN.pack(len(rec)) + rec
                    added += 1
            if added:
                self._fh.write(buf)
                self._fh.flush()
                self.version += 1
                self._cache = {}
            return added

    def add_boxes(self, video, boxes) -> int:
        return self.add_many((video, b.frame, b.label, *b.rect) for b in boxes)

    def _validate(self, video, frame, label, x1, y1, x2, y2):
        info = self._info(video)
        if not isinstance(label, str) or not label:
            raise TileStoreError("label must be a non-empty string")
        if not 0 <= frame < info.length:
            raise OutOfBoundsError(f"frame {frame} outside video of {info.length} frames")
        if not (0 <= x1 < x2 <= info.dims.width and 0 <= y1 < y2 <= info.dims.height):
            raise OutOfBoundsError(
                f"box {(x1, y1, x2, y2)} invalid for {info.dims.width}x{info.dims.height} frame")
        return info.video_id, int(frame), label, (int(x1), int(y1), int(x2), int(y2))

    # -- reads -------------------------------------------------------------

    def _frames_in(self, vid, label, lo, hi):
        frames = self._frames.get((vid, label), ())
        return frames[bisect_left(frames, lo):bisect_left(frames, hi)]

    def lookup(self, video, pred: LabelPredicate, frame_range=None) -> tuple:
        """Entries for labels in ``pred`` on frames that satisfy the CNF.

        A frame satisfies the predicate when, for every clause, some box on
        that frame carries one of the clause's labels.  Results are ordered by
        (label, frame, rect).
        """
        with self._lock:
            info = self._info(video)
            lo, hi = frame_range if frame_range is not None else (0, info.length)
            lo, hi = max(0, lo), min(info.length, hi)
            key = (info.video_id, pred, lo, hi)
            hit = self._cache.get(key)
            if hit is not None:
                return hit
            vid = info.video_id
            per_label = {lbl: self._frames_in(vid, lbl, lo, hi) for lbl in sorted(pred.labels)}
            ok = None
            if len(pred.clauses) > 1:
                for clause in pred.clauses:
                    frames = set()
                    for lbl in clause:
                        frames.update(per_label[lbl])
                    ok = frames if ok is None else ok & frames
            out = []
            for lbl, frames in per_label.items():
                for f in frames:
                    if ok is not None and f not in ok:
                        continue
                    for rect in self._boxes[(vid, lbl, f)]:
                        out.append(IndexEntry(video, BoundingBox(f, lbl, *rect)))
            result = tuple(out)
            self._cache[key] = result
            return result

    def entries(self, video) -> list:
        """Every entry of one video in physical (label, frame) order."""
        with self._lock:
            vid = self._info(video).video_id
            out = []
            for (v, lbl, f) in sorted(k for k in self._boxes if k[0] == vid):
                out.extend(IndexEntry(video, BoundingBox(f, lbl, *r)) for r in self._boxes[(v, lbl, f)])
            return out

    def distinct_labels(self, video) -> set:
        with self._lock:
            vid = self._info(video).video_id
            return {lbl for (v, lbl), frames in self._frames.items() if v == vid and frames}

    def __len__(self):
        with self._lock:
            return sum(len(r) for r in self._boxes.values())


def _encode_record(vid, frame, label, rect) -> bytes:
    raw = label.encode("utf-8")
    return _HEAD.pack(vid, frame, len(raw)) + raw + _BOX.pack(*rect)


def _decode_record(rec):
    vid, frame, n = _HEAD.unpack_from(rec, 0)
    label = bytes(rec[_HEAD.size:_HEAD.size + n]).decode("utf-8")
    rect = _BOX.unpack_from(rec, _HEAD.size + n)
    return vid, frame, label, rect
