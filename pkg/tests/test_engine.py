import json
import threading

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from conftest import noise_video
from oracles import draw_boxes
from tilestore import codec
from tilestore.engine import MANIFEST, TileStore, decode_stats, reset_decode_stats
from tilestore.errors import (ConcurrentRetileError, InvalidLayoutError, OutOfBoundsError,
                              TileStoreError, UnknownVideoError)
from tilestore.geometry import BoundingBox, FrameDims, TileLayout, fine_grained_layout, uniform_layout
from tilestore.semantic_index import LabelPredicate

D = FrameDims(640, 320)
CAR = (130, 70, 250, 190)
CARS = LabelPredicate.any_of("car")


def car_layout():
    return fine_grained_layout([BoundingBox(0, "car", *CAR)], D)


def crop(frames, e):
    x1, y1, x2, y2 = e.rect
    return frames[e.frame, y1:y2, x1:x2]


def test_single_sot_single_chunk(store, rng):
    vs = store.ingest("v", noise_video(rng), 30)
    assert len(vs.sots) == 1 and vs.sots[0].chunks == ["frames_0-29/tile0.chk"]


def test_two_sot_directory_structure(store, rng):
    frames = noise_video(rng, 60)
    store.ingest("v", frames, 30, [uniform_layout(1, 2, D), uniform_layout(2, 2, D)])
    root = store.root / "v"
    assert sorted(p.name for p in (root / "frames_0-29").iterdir()) == ["tile0.chk", "tile1.chk"]
    assert len(list((root / "frames_30-59").iterdir())) == 4
    left = codec.decode_chunk((root / "frames_0-29" / "tile0.chk").read_bytes())
    assert np.array_equal(left, frames[:30, :, :320])


def test_round_trip_mixed_layouts(store, rng):
    frames = noise_video(rng, 75)
    store.ingest("v", frames, 30, [None, uniform_layout(2, 2, D), car_layout()])
    assert np.array_equal(store.stitch("v"), frames)
    assert np.array_equal(store.stitch("v", (25, 40)), frames[25:40])


def test_ingest_rejects_bad_input(store, rng):
    with pytest.raises(TileStoreError):
        store.ingest("v", rng.integers(0, 256, size=(5, 100, 640), dtype=np.uint8))
    with pytest.raises(InvalidLayoutError):
        store.ingest("v", noise_video(rng, 5), 30, TileLayout((320,), (600, 40)))
    store.ingest("v", noise_video(rng, 5), 30)
    with pytest.raises(TileStoreError):
        store.ingest("v", noise_video(rng, 5), 30)


def test_scan_no_matches(store, rng):
    store.ingest("v", noise_video(rng), 30)
    assert store.scan("v", CARS) == []
    with pytest.raises(UnknownVideoError):
        store.scan("w", CARS)
    with pytest.raises(OutOfBoundsError):
        store.scan("v", CARS, (10, 40))


def test_scan_decodes_only_needed_tiles(store, rng):
    frames = noise_video(rng)
    store.ingest("v", frames, 30, car_layout())
    for f in range(30):
        store.add_metadata("v", f, "car", *CAR)
    reset_decode_stats()
    assert decode_stats().pixels_decoded == 0
    regions = store.scan("v", CARS)
    stats = decode_stats()
    assert stats.tiles_decoded == 1
    assert (stats.pixels_decoded, stats.tiles_decoded) == store.predicted_counts("v", CARS)
    assert all(np.array_equal(r.array(), crop(frames, r)) for r in regions)


def test_uniform_grid_tile_counts(store, rng):
    store.ingest("v", noise_video(rng), 30, uniform_layout(2, 2, D))
    store.add_metadata("v", 29, "car", 10, 10, 50, 50)
    before = decode_stats()
    store.scan("v", CARS)
    assert decode_stats().minus(before).tiles_decoded == 1
    store.add_metadata("v", 29, "car", 300, 140, 340, 180)
    before = decode_stats()
    store.scan("v", CARS)
    assert decode_stats().minus(before).tiles_decoded == 4


def test_retile_preserves_content(store, rng):
    frames = noise_video(rng, 60)
    store.ingest("v", frames, 30)
    store.index.add_many([("v", f, "car", *CAR) for f in range(60)])
    before = store.scan("v", CARS)
    new = store.retile("v", 0, car_layout())
    assert new.version == 1 and new.dirname == "frames_0-29.v1"
    assert not (store.root / "v" / "frames_0-29").exists()
    assert store.scan("v", CARS) == before
    again = store.retile("v", 0, car_layout())
    assert again.version == 2
    assert np.array_equal(store.stitch("v"), frames)


def test_retile_errors(store, rng):
    store.ingest("v", noise_video(rng), 30)
    with pytest.raises(OutOfBoundsError):
        store.retile("v", 1, car_layout())
    with pytest.raises(InvalidLayoutError):
        store.retile("v", 0, TileLayout((320,), (600, 40)))


def test_reopen_restores_layouts_and_index(tmp_path, rng):
    frames = noise_video(rng, 60)
    with TileStore(tmp_path / "s") as st:
        st.ingest("v", frames, 30)
        st.add_metadata("v", 3, "car", *CAR)
        st.retile("v", 1, car_layout())
        layouts = st.video("v").layouts()
    with TileStore(tmp_path / "s") as st:
        assert st.videos() == ["v"]
        assert st.video("v").layouts() == layouts
        (r,) = st.scan("v", CARS)
        assert np.array_equal(r.array(), crop(frames, r))
        assert np.array_equal(st.stitch("v"), frames)


class CrashingStore(TileStore):
    def _write_manifest(self, vs):
        if getattr(self, "crash", False):
            raise OSError("simulated crash before manifest swap")
        super()._write_manifest(vs)


def test_crash_before_manifest_swap_keeps_old_version(tmp_path, rng):
    frames = noise_video(rng)
    st = CrashingStore(tmp_path / "s")
    st.ingest("v", frames, 30)
    st.add_metadata("v", 0, "car", *CAR)
    st.crash = True
    with pytest.raises(OSError):
        st.retile("v", 0, car_layout())
    assert st.video("v").sots[0].layout == TileLayout.omega(D)
    assert np.array_equal(st.stitch("v"), frames)
    st.close()
    manifest = json.loads((tmp_path / "s" / "v" / MANIFEST).read_text())
    assert manifest["sots"][0]["dir"] == "frames_0-29"
    with TileStore(tmp_path / "s") as st2:
        assert st2.video("v").sots[0].layout == TileLayout.omega(D)
        assert sorted(p.name for p in (tmp_path / "s" / "v").iterdir() if p.is_dir()) == ["frames_0-29"]
        assert np.array_equal(st2.stitch("v"), frames)


def test_concurrent_retile_rejected(tmp_path, rng):
    started, release = threading.Event(), threading.Event()

    class SlowStore(TileStore):
        def _write_sot(self, *a, **k):
            if k.get("final_dir"):
                started.set()
                release.wait(10)
            return super()._write_sot(*a, **k)

    st = SlowStore(tmp_path / "s")
    st.ingest("v", noise_video(rng), 30)
    t = threading.Thread(target=st.retile, args=("v", 0, car_layout()))
    t.start()
    assert started.wait(10)
    with pytest.raises(ConcurrentRetileError):
        st.retile("v", 0, uniform_layout(2, 2, D))
    release.set()
    t.join()
    assert st.video("v").sots[0].layout == car_layout()
    st.close()


def test_readers_see_one_version_during_retiles(store, rng):
    frames = noise_video(rng, 60)
    store.ingest("v", frames, 30)
    store.index.add_many([("v", f, "car", *CAR) for f in range(60)])
    expect = store.scan("v", CARS)
    errors = []

    def reader():
        try:
            for _ in range(15):
                assert store.scan("v", CARS) == expect
        except Exception as e:  # surfaced below
            errors.append(e)

    t = threading.Thread(target=reader)
    t.start()
    for lay in [car_layout(), uniform_layout(2, 2, D), TileLayout.omega(D), car_layout()]:
        store.retile("v", 0, lay)
        store.retile("v", 1, lay)
    t.join()
    assert errors == []
    assert not store._graveyard


def test_annotate_no_matches_passes_through(store, rng):
    frames = noise_video(rng)
    store.ingest("v", frames, 30, uniform_layout(2, 2, D))
    stream = store.annotate_and_stitch("v", ["car"])
    assert all(not s.reencoded for s in stream.sots)
    assert stream.sots[0].chunks == store.chunk_bytes("v", 0)
    assert np.array_equal(stream.decode(), frames)


def test_annotate_isolated_box(store, rng):
    frames = noise_video(rng, 60)
    store.ingest("v", frames, 30, car_layout())
    boxes = [(f, CAR) for f in range(0, 60, 7)]
    store.index.add_many([("v", f, "car", *r) for f, r in boxes])
    stream = store.annotate_and_stitch("v", ["car"])
    assert [len(s.reencoded) for s in stream.sots] == [1, 1]
    for j, s in enumerate(stream.sots):
        orig = store.chunk_bytes("v", j)
        changed = [k for k in range(len(orig)) if orig[k] != s.chunks[k]]
        assert changed == sorted(s.reencoded)
    assert np.array_equal(stream.decode(), draw_boxes(frames, boxes))


@settings(max_examples=15)
@given(st.integers(0, 2**32 - 1))
def test_scan_matches_untiled_crop(tmp_path_factory, seed):
    rng = np.random.default_rng(seed)
    frames = rng.integers(0, 256, size=(40, 128, 192), dtype=np.uint8)
    dims = FrameDims(192, 128)
    boxes = []
    for f in rng.integers(0, 40, 12):
        x1, y1 = int(rng.integers(0, 180)), int(rng.integers(0, 120))
        boxes.append(BoundingBox(int(f), str(rng.choice(["a", "b"])), x1, y1,
                                 int(rng.integers(x1 + 1, 193)), int(rng.integers(y1 + 1, 129))))
    with TileStore(tmp_path_factory.mktemp("s")) as st:
        st.ingest("v", frames, 16, lambda g, a, b, fr: fine_grained_layout(
            [x for x in boxes if a <= x.frame < b and rng.random() < 0.7], dims))
        st.index.add_boxes("v", boxes)
        for lo, hi in [(0, 40), (5, 21)]:
            regs = st.scan("v", LabelPredicate.any_of("a", "b"), (lo, hi))
            assert len(regs) == len({b for b in boxes if lo <= b.frame < hi})
            assert all(np.array_equal(r.array(), crop(frames, r)) for r in regs)


def test_storage_accounting(store, rng):
    store.ingest("v", noise_video(rng, 30), 30, uniform_layout(2, 2, D))
    total = sum(len(c) for c in store.chunk_bytes("v", 0))
    assert store.storage_bytes("v") == total + (store.root / "v" / MANIFEST).stat().st_size
