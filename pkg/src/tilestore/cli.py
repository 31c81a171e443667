"""``tilestore`` command line.

Parameters come from built-in defaults, then an optional ``key = value``
config file (``--config``), then command-line flags, later sources winning.
Failures print one line ``ERR <code>: <message>`` on stderr and exit with 2
(usage), 3 (bad data or store state) or 4 (internal error).
"""
from __future__ import annotations

import argparse
import csv
import re
import sys
from pathlib import Path

from . import codec, cost_model as cm
from .cost_model import CostParams, QuerySpec
from .engine import TileStore
from .errors import (CalibrationError, CorruptDataError, InvalidLayoutError, OutOfBoundsError,
                     SceneError, TileStoreError, UnknownVideoError)
from .geometry import FrameDims, LayoutConfig, uniform_layout
from .semantic_index import LabelPredicate
from .tuner import Strategy, TunerConfig, run_strategy, write_event_log

EXIT_USAGE, EXIT_DATA, EXIT_INTERNAL = 2, 3, 4

# key -> (type, default, help)
SETTINGS = {
    "root": (str, "store", "store directory"),
    "align": (int, 32, "tile boundary alignment in pixels"),
    "min_tile_w": (int, 64, "minimum tile width"),
    "min_tile_h": (int, 64, "minimum tile height"),
    "gop_len": (int, 30, "frames per GOP (one SOT each)"),
    "alpha": (float, 0.8, "tile only when decoded pixels drop to this fraction of untiled"),
    "eta": (float, 1.0, "retile once regret exceeds eta times the re-encode cost"),
    "beta": (float, CostParams.beta, "decode seconds per pixel"),
    "gamma": (float, CostParams.gamma, "decode seconds per tile"),
    "enc_beta": (float, CostParams.enc_beta, "re-encode seconds per pixel"),
    "enc_fixed": (float, CostParams.enc_fixed, "re-encode seconds per tile"),
    "max_candidate_labels": (int, 8, "labels considered when forming candidate layouts"),
    "max_subset_size": (int, 3, "largest label subset besides the full set"),
}

STRATEGY_ALIASES = {"regret": Strategy.INCREMENTAL_REGRET, "more": Strategy.INCREMENTAL_MORE,
                    "all": Strategy.ALL_OBJECTS, "none": Strategy.NOT_TILED}


class UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        raise UsageError(message)


def load_config(path) -> dict:
    out = {}
    for n, line in enumerate(Path(path).read_text().splitlines(), 1):
        line = line.split("#", 1)[0].strip()
        if not line:
            continue
        key, sep, value = line.partition("=")
        key = key.strip()
        if not sep or key not in SETTINGS:
            raise UsageError(f"{path}:{n}: expected 'key = value' with a known key")
        try:
            out[key] = SETTINGS[key][0](value.strip())
        except ValueError:
            raise UsageError(f"{path}:{n}: bad value for {key}") from None
    return out


def dump_config(settings: dict) -> str:
    return "".join(f"{k} = {settings[k]}\n" for k in sorted(settings))


def resolve_settings(args) -> dict:
    settings = {k: d for k, (_, d, _) in SETTINGS.items()}
    if getattr(args, "config", None):
        settings.update(load_config(args.config))
    for k in SETTINGS:
        v = getattr(args, k, None)
        if v is not None:
            settings[k] = v
    return settings


def layout_cfg(s) -> LayoutConfig:
    return LayoutConfig(s["align"], s["min_tile_w"], s["min_tile_h"])


def cost_params(s) -> CostParams:
    return CostParams(s["beta"], s["gamma"], s["enc_beta"], s["enc_fixed"])


def tuner_cfg(s) -> TunerConfig:
    return TunerConfig(s["alpha"], s["eta"], s["max_candidate_labels"], s["max_subset_size"], layout_cfg(s))


def parse_frames(text):
    if text is None:
        return None
    m = re.fullmatch(r"(\d+)\.\.(\d+)", text)
    if not m:
        raise UsageError(f"frame range {text!r} is not of the form a..b")
    return int(m.group(1)), int(m.group(2))


def open_store(s) -> TileStore:
    return TileStore(s["root"], layout_cfg(s))


# -- subcommands -----------------------------------------------------------------


def cmd_ingest(args, s):
    frames = codec.read_y8(args.video)
    name = args.name or Path(args.video).stem
    gop = args.ingest_gop_len or s["gop_len"]
    spec = args.layout
    with open_store(s) as st:
        if spec == ["none"]:
            vs = st.ingest(name, frames, gop)
        elif spec == ["roi"]:
            from .roi import roi_ingest
            vs = roi_ingest(st, name, frames, gop_len=gop, alpha=s["alpha"])
        elif len(spec) == 2 and spec[0] == "uniform" and re.fullmatch(r"\d+x\d+", spec[1]):
            rows, cols = map(int, spec[1].split("x"))
            dims = FrameDims(frames.shape[2], frames.shape[1])
            vs = st.ingest(name, frames, gop, uniform_layout(rows, cols, dims, st.layout_cfg))
        else:
            raise UsageError("--layout must be 'uniform RxC', 'roi' or 'none'")
        print(f"{vs.name}: {vs.length} frames, {len(vs.sots)} SOTs")


def cmd_add_metadata(args, s):
    with open_store(s) as st:
        added = st.add_metadata(args.video, args.frame, args.label, args.x1, args.y1, args.x2, args.y2)
    print("added" if added else "exists")


def region_filename(r) -> str:
    x1, y1, x2, y2 = r.rect
    label = re.sub(r"[^A-Za-z0-9_.-]", "_", r.label)
    return f"f{r.frame:06d}_{label}_{x1}_{y1}_{x2}_{y2}.y8"


def cmd_scan(args, s):
    pred = LabelPredicate.parse(args.pred)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    with open_store(s) as st:
        regions = st.scan(args.video, pred, parse_frames(args.frames))
    for r in regions:
        codec.write_y8(out / region_filename(r), r.array())
    print(f"{len(regions)} regions")


def load_workload(path, video) -> list:
    out = []
    with open(path, newline="") as f:
        reader = csv.DictReader(f)
        if set(reader.fieldnames or ()) != {"predicate", "start", "end"}:
            raise TileStoreError(f"{path}: expected columns predicate,start,end")
        for row in reader:
            out.append(QuerySpec(video, LabelPredicate.parse(row["predicate"]),
                                 (int(row["start"]), int(row["end"]))))
    return out


def cmd_tune(args, s):
    strategy = STRATEGY_ALIASES[args.strategy]
    with open_store(s) as st:
        workload = load_workload(args.workload, args.video)
        run = run_strategy(strategy, st, args.video, workload, tuner_cfg(s), cost_params(s))
    write_event_log(args.events, run.events)
    retiles = sum(1 for e in run.events if e[2] == "retile")
    print(f"{len(run.results)} queries, {retiles} retiles")


def cmd_calibrate(args, s):
    fit = cm.fit_linear(cm.load_samples(args.samples))
    print(f"beta={fit.slope_pixels:.6e}")
    print(f"gamma={fit.slope_tiles:.6e}")
    print(f"R²={fit.r2:.6f}")


def cmd_bench(args, s):
    from . import harness, synthgen
    scene_name, wspec = synthgen.workload_preset(args.workload, args.length, s["gop_len"])
    scene = synthgen.generate_scene(synthgen.SCENES[args.scene or scene_name](args.length), args.seed)
    workload = synthgen.generate_workload(wspec, args.seed)
    cfg = harness.BenchConfig(s["gop_len"], args.repeats, tuner_cfg(s), cost_params(s))
    report = harness.run_benchmark(scene, workload, [STRATEGY_ALIASES.get(x, x) for x in args.strategies], cfg)
    report.write_csv(args.out)
    for strat in report.strategies():
        print(f"{strat}: {report.cumulative(strat):.3f}")


def cmd_stitch(args, s):
    with open_store(s) as st:
        frames = st.stitch(args.video, parse_frames(args.frames))
    codec.write_y8(args.out, frames)


def cmd_annotate(args, s):
    with open_store(s) as st:
        stream = st.annotate_and_stitch(args.video, args.labels, parse_frames(args.frames), args.value)
    codec.write_y8(args.out, stream.decode())
    print(f"re-encoded {sum(len(x.reencoded) for x in stream.sots)} tiles")


def cmd_config(args, s):
    sys.stdout.write(dump_config(s))


def build_parser() -> argparse.ArgumentParser:
    p = _Parser(prog="tilestore", description="Tiled video storage with semantic indexing.")
    p.add_argument("--config", help="file of 'key = value' settings")
    for k, (typ, default, help_) in SETTINGS.items():
        p.add_argument("--" + k.replace("_", "-"), dest=k, type=typ, default=None,
                       help=f"{help_} (default {default})")
    sub = p.add_subparsers(dest="command", required=True, parser_class=_Parser)

    c = sub.add_parser("ingest", help="store a .y8 video")
    c.add_argument("video")
    c.add_argument("--name")
    c.add_argument("--gop-len", type=int, dest="ingest_gop_len")
    c.add_argument("--layout", nargs="+", default=["none"], metavar="SPEC",
                   help="'uniform RxC', 'roi' or 'none'")
    c.set_defaults(func=cmd_ingest)

    c = sub.add_parser("add-metadata", help="insert one bounding box")
    c.add_argument("video")
    c.add_argument("frame", type=int)
    c.add_argument("label")
    for a in ("x1", "y1", "x2", "y2"):
        c.add_argument(a, type=int)
    c.set_defaults(func=cmd_add_metadata)

    c = sub.add_parser("scan", help="write the pixels of matching boxes")
    c.add_argument("video")
    c.add_argument("--pred", required=True, help="CNF such as 'car|bicycle & red'")
    c.add_argument("--frames", help="a..b, end exclusive")
    c.add_argument("--out", required=True)
    c.set_defaults(func=cmd_scan)

    c = sub.add_parser("tune", help="run a workload under a tiling strategy")
    c.add_argument("video")
    c.add_argument("--strategy", choices=["regret", "more", "all", "none"], default="regret")
    c.add_argument("--workload", required=True, help="CSV with columns predicate,start,end")
    c.add_argument("--events", default="events.csv")
    c.set_defaults(func=cmd_tune)

    c = sub.add_parser("calibrate", help="fit decode cost coefficients")
    c.add_argument("--samples", required=True, help="CSV with columns pixels,tiles,seconds")
    c.set_defaults(func=cmd_calibrate)

    c = sub.add_parser("bench", help="compare strategies on a synthetic scene")
    c.add_argument("--scene", choices=["sparse", "dense", "mixed"])
    c.add_argument("--workload", required=True, choices=[f"W{i}" for i in range(1, 7)])
    c.add_argument("--strategies", nargs="+", default=["all", "more", "regret"],
                   choices=sorted(STRATEGY_ALIASES) + [s.value for s in Strategy])
    c.add_argument("--length", type=int, default=1800)
    c.add_argument("--seed", type=int, default=0)
    c.add_argument("--repeats", type=int, default=3)
    c.add_argument("--out", required=True)
    c.set_defaults(func=cmd_bench)

    c = sub.add_parser("stitch", help="reassemble full frames")
    c.add_argument("video")
    c.add_argument("--frames")
    c.add_argument("--out", required=True)
    c.set_defaults(func=cmd_stitch)

    c = sub.add_parser("annotate", help="draw boxes and re-stitch")
    c.add_argument("video")
    c.add_argument("--labels", nargs="+", required=True)
    c.add_argument("--frames")
    c.add_argument("--value", type=int, default=255)
    c.add_argument("--out", required=True)
    c.set_defaults(func=cmd_annotate)

    c = sub.add_parser("config", help="print the effective settings")
    c.set_defaults(func=cmd_config)
    return p


_CODES = [(UnknownVideoError, "unknown_video"), (InvalidLayoutError, "invalid_layout"),
          (OutOfBoundsError, "out_of_bounds"), (CorruptDataError, "corrupt_data"),
          (CalibrationError, "calibration"), (SceneError, "scene"), (TileStoreError, "data"),
          (OSError, "io")]


def _fail(code, message, status):
    print(f"ERR {code}: {message}", file=sys.stderr)
    return status


def main(argv=None) -> int:
    try:
        args = build_parser().parse_args(argv)
        settings = resolve_settings(args)
        args.func(args, settings)
        return 0
    except UsageError as e:
        return _fail("usage", e, EXIT_USAGE)
    except (TileStoreError, OSError) as e:
        code = next(c for cls, c in _CODES if isinstance(e, cls))
        return _fail(code, e, EXIT_DATA)
    except ValueError as e:
        return _fail("data", e, EXIT_DATA)
    except Exception as e:  # pragma: no cover - reported, not expected
        return _fail("internal", f"{type(e).__name__}: {e}", EXIT_INTERNAL)


if __name__ == "__main__":
    sys.exit(main())
