"""Synthetic labeled videos and query workloads for benchmarking layouts.

Scenes are a static textured background (values below 100) with textured
rectangular objects (values of 150 and above) bouncing around the frame, so
ground-truth boxes are exact and a background subtractor can find them.  A
small per-frame sensor noise keeps every coded frame similarly expensive to
decode, as in real footage; without it static regions decode almost for free.
"""
from __future__ import annotations

from dataclasses import dataclass
from typing import Optional

import numpy as np

from .cost_model import QuerySpec
from .errors import SceneError
from .geometry import BoundingBox, FrameDims
from .semantic_index import LabelPredicate

SPARSE_LIMIT = 0.20


@dataclass(frozen=True)
class ObjectSpec:
    label: str
    w: int
    h: int
    x0: int
    y0: int
    vx: int = 0
    vy: int = 0
    texture_seed: int = 0


@dataclass(frozen=True)
class SceneSpec:
    dims: FrameDims = FrameDims(640, 320)
    length: int = 1800
    objects: tuple = ()
    density_class: Optional[str] = None   # "sparse", "dense" or None (unchecked)
    target_density: Optional[float] = None
    background_seed: int = 0
    noise: int = 1                        # per-pixel, per-frame noise amplitude

    def __post_init__(self):
        if not 0 <= self.noise <= 1:
            raise SceneError("noise amplitude must be 0 or 1")
        if self.density_class not in (None, "sparse", "dense"):
            raise SceneError(f"unknown density class {self.density_class!r}")
        for o in self.objects:
            if not (0 < o.w <= self.dims.width and 0 < o.h <= self.dims.height):
                raise SceneError(f"object {o.label} of {o.w}x{o.h} does not fit the frame")


@dataclass
class Scene:
    spec: SceneSpec
    frames: np.ndarray
    boxes: list
    density: float

    @property
    def labels(self) -> list:
        return sorted({o.label for o in self.spec.objects})


def _bounce(p0, v, t, lo, hi):
    """Position at time ``t`` of a point moving at ``v`` and reflecting inside [lo, hi]."""
    span = hi - lo
    if span == 0 or v == 0:
        return min(max(p0, lo), hi)
    p = (p0 - lo + v * t) % (2 * span)
    return lo + (p if p <= span else 2 * span - p)


def object_box(o: ObjectSpec, t: int, dims: FrameDims) -> tuple:
    x = _bounce(o.x0, o.vx, t, 0, dims.width - o.w)
    y = _bounce(o.y0, o.vy, t, 0, dims.height - o.h)
    return x, y, x + o.w, y + o.h


def density_class(density: float) -> str:
    return "sparse" if density < SPARSE_LIMIT else "dense"


def generate_scene(spec: SceneSpec, seed: int = 0) -> Scene:
    """Render ``spec``; deterministic in ``(spec, seed)``."""
    w, h = spec.dims.width, spec.dims.height
    rng = np.random.default_rng([seed, spec.background_seed])
    # ranges leave room for +-1 noise: background stays in 0..99, objects in 150..255
    background = rng.integers(1, 99, size=(h, w), dtype=np.uint8)
    textures = [np.random.default_rng([seed, o.texture_seed, i]).integers(151, 255, size=(o.h, o.w), dtype=np.uint8)
                for i, o in enumerate(spec.objects)]
    noise_rng = np.random.default_rng([seed, spec.background_seed, 1])
    wrap = np.array([255, 0, 1], dtype=np.uint8)   # -1, 0, +1 modulo 256
    frames = np.empty((spec.length, h, w), dtype=np.uint8)
    boxes = []
    covered = 0
    mask = np.empty((h, w), dtype=bool)
    for t in range(spec.length):
        frame = frames[t]
        frame[:] = background
        mask[:] = False
        for o, tex in zip(spec.objects, textures):
            x1, y1, x2, y2 = object_box(o, t, spec.dims)
            frame[y1:y2, x1:x2] = tex
            mask[y1:y2, x1:x2] = True
            boxes.append(BoundingBox(t, o.label, x1, y1, x2, y2))
        if spec.noise:
            np.add(frame, wrap[noise_rng.integers(0, 3, size=(h, w), dtype=np.uint8)], out=frame)
        covered += int(mask.sum())
    density = covered / (spec.length * spec.dims.area) if spec.length else 0.0
    if spec.density_class is not None and density_class(density) != spec.density_class:
        raise SceneError(f"realized density {density:.3f} is not {spec.density_class}")
    if spec.target_density is not None and abs(density - spec.target_density) > 0.02:
        raise SceneError(f"realized density {density:.3f} is more than 2 points from "
                         f"target {spec.target_density:.3f}")
    return Scene(spec, frames, boxes, density)


def sparse_scene(length=1800, dims=FrameDims(640, 320)) -> SceneSpec:
    """A few small objects: a car and a person moving, a static traffic light."""
    objs = (ObjectSpec("car", 64, 48, 40, 200, vx=3, vy=1, texture_seed=1),
            ObjectSpec("person", 32, 64, 500, 40, vx=-1, vy=1, texture_seed=2),
            ObjectSpec("light", 32, 64, 288, 0, texture_seed=3))
    return SceneSpec(dims, length, objs, "sparse")


def dense_scene(length=1800, dims=FrameDims(640, 320)) -> SceneSpec:
    """Six large fast objects that together cover most of the frame."""
    objs = tuple(ObjectSpec(lbl, 160, 160, x0, y0, vx, vy, texture_seed=10 + i)
                 for i, (lbl, x0, y0, vx, vy) in enumerate([
                     ("car", 0, 0, 7, 5), ("car", 400, 100, -6, 4),
                     ("person", 200, 150, 5, -6), ("person", 480, 0, -7, 6),
                     ("bus", 100, 120, 6, 7), ("bus", 320, 40, -5, -5)]))
    return SceneSpec(dims, length, objs, "dense")


def mixed_scene(length=1800, dims=FrameDims(640, 320)) -> SceneSpec:
    """One small car among large crowds: tiling around the car helps, around everything does not."""
    crowd = tuple(ObjectSpec("crowd", 160, 160, x0, y0, vx, vy, texture_seed=20 + i)
                  for i, (x0, y0, vx, vy) in enumerate([(0, 0, 6, 5), (300, 100, -5, 6),
                                                        (480, 20, -6, -4), (150, 160, 5, -5)]))
    car = ObjectSpec("car", 64, 48, 40, 200, vx=3, vy=1, texture_seed=1)
    return SceneSpec(dims, length, (car,) + crowd, "dense")


SCENES = {"sparse": sparse_scene, "dense": dense_scene, "mixed": mixed_scene}


@dataclass(frozen=True)
class WorkloadSpec:
    pattern: str
    n_queries: int = 100
    labels: tuple = (("car", 1.0),)          # (label, probability)
    temporal: str = "uniform"                # uniform | prefix | zipfian
    span: int = 60
    length: int = 1800
    gop_len: int = 30
    prefix_fraction: float = 0.25
    zipf_s: float = 1.0
    middle_label: Optional[str] = None       # overrides the label for the middle third of queries
    video: str = "video"

    def __post_init__(self):
        p = sum(pr for _, pr in self.labels)
        if not self.labels or abs(p - 1.0) > 1e-9:
            raise ValueError(f"label probabilities sum to {p}, not 1")
        if self.temporal not in ("uniform", "prefix", "zipfian"):
            raise ValueError(f"unknown temporal distribution {self.temporal!r}")
        if not 0 < self.span <= self.length:
            raise ValueError("span must be within the video length")


def zipf_weights(n: int, s: float) -> np.ndarray:
    w = 1.0 / np.arange(1, n + 1, dtype=float) ** s
    return w / w.sum()


def generate_workload(spec: WorkloadSpec, seed: int = 0) -> list:
    rng = np.random.default_rng(seed)
    names = [l for l, _ in spec.labels]
    probs = np.array([p for _, p in spec.labels], dtype=float)
    last_start = spec.length - spec.span
    out = []
    for i in range(spec.n_queries):
        label = names[rng.choice(len(names), p=probs)]
        if spec.middle_label and spec.n_queries / 3 <= i < 2 * spec.n_queries / 3:
            label = spec.middle_label
        if spec.temporal == "uniform":
            start = int(rng.integers(0, last_start + 1))
        elif spec.temporal == "prefix":
            hi = max(0, min(last_start, int(spec.length * spec.prefix_fraction) - spec.span))
            start = int(rng.integers(0, hi + 1))
        else:
            n_gops = last_start // spec.gop_len + 1
            k = int(rng.choice(n_gops, p=zipf_weights(n_gops, spec.zipf_s)))
            start = min(last_start, k * spec.gop_len + int(rng.integers(0, spec.gop_len)))
        out.append(QuerySpec(spec.video, LabelPredicate.any_of(label), (start, start + spec.span)))
    return out


def workload_preset(name: str, length: int = 1800, gop_len: int = 30) -> tuple:
    """``(scene preset name, WorkloadSpec)`` for the six standard workload shapes."""
    two = 2 * gop_len
    common = dict(length=length, gop_len=gop_len)
    presets = {
        "W1": ("sparse", WorkloadSpec("W1", 100, (("car", 1.0),), "uniform", two, **common)),
        "W2": ("sparse", WorkloadSpec("W2", 100, (("car", 0.5), ("person", 0.5)), "prefix", two, **common)),
        "W3": ("sparse", WorkloadSpec("W3", 100, (("car", 0.475), ("person", 0.475), ("light", 0.05)),
                                      "zipfian", two, **common)),
        "W4": ("sparse", WorkloadSpec("W4", 200, (("car", 1.0),), "zipfian", two,
                                      middle_label="person", **common)),
        "W5": ("dense", WorkloadSpec("W5", 200, (("car", 1 / 3), ("person", 1 / 3), ("bus", 1 / 3)),
                                     "uniform", gop_len, **common)),
        "W6": ("mixed", WorkloadSpec("W6", 200, (("car", 1.0),), "uniform", two, **common)),
    }
    try:
        return presets[name]
    except KeyError:
        raise ValueError(f"unknown workload preset {name!r}; choose from {sorted(presets)}") from None
