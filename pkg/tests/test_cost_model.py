import warnings

import numpy as np
import pytest
from hypothesis import given, strategies as st

from oracles import raster_counts
from tilestore import cost_model as cm
from tilestore.cost_model import CostParams, QuerySpec
from tilestore.errors import CalibrationError
from tilestore.geometry import BoundingBox, FrameDims, TileLayout, fine_grained_layout, uniform_layout
from tilestore.semantic_index import SemanticIndex

D = FrameDims(640, 320)
CAR = (130, 70, 250, 190)
P = CostParams(beta=2e-9, gamma=1e-4, enc_beta=5e-9, enc_fixed=0.0)
OMEGA = TileLayout.omega(D)


@pytest.fixture
def index(tmp_path):
    idx = SemanticIndex(tmp_path / "i.tidx")
    idx.register_video("v", 0, D, 60)
    yield idx
    idx.close()


@pytest.fixture
def car_index(index):
    index.add_many([("v", f, "car", *CAR) for f in range(30)])
    return index


def car_layout():
    return fine_grained_layout([BoundingBox(0, "car", *CAR)], D)


Q = QuerySpec.for_labels("v", "car")


def test_no_matches_costs_nothing(index):
    assert cm.estimate_cost((0, 30), Q, OMEGA, index, P) == cm.CostEstimate(0, 0, 0.0)


def test_pixels_and_tiles_worked_example(car_index):
    lay = car_layout()
    assert cm.pixels_decoded((0, 30), Q, lay, car_index) == 128 * 128 * 30 == 491520
    assert cm.pixels_decoded((0, 30), Q, OMEGA, car_index) == 640 * 320 * 30 == 6144000
    assert cm.tiles_decoded((0, 30), Q, lay, car_index) == 1


def test_straddling_box_needs_four_tiles(index):
    index.add_metadata("v", 0, "car", 300, 140, 340, 180)
    assert cm.tiles_decoded((0, 30), Q, uniform_layout(2, 2, D), index) == 4


def test_cost_arithmetic(car_index):
    assert cm.cost_of(0, 0, P) == 0
    assert cm.cost_of(491520, 1, P) == pytest.approx(1.08304e-3, rel=1e-12)
    assert cm.estimate_cost((0, 30), Q, OMEGA, car_index, P).cost == pytest.approx(1.2388e-2, rel=1e-12)


def test_delta_worked_example(car_index):
    lay = car_layout()
    assert cm.delta(Q, lay, lay, (0, 30), car_index, P) == 0.0
    d = cm.delta(Q, OMEGA, lay, (0, 30), car_index, P)
    assert d == pytest.approx(1.2388e-2 - 1.08304e-3, rel=1e-12)
    assert d == pytest.approx(1.1305e-2, rel=1e-4)
    assert cm.delta(Q, lay, OMEGA, (0, 30), car_index, P) == pytest.approx(-d, rel=1e-12)


def test_reencode_cost():
    assert cm.reencode_cost((0, 30), car_layout(), P) == pytest.approx(3.072e-2, rel=1e-12)
    assert cm.reencode_cost((0, 60), OMEGA, P) == pytest.approx(2 * cm.reencode_cost((0, 30), OMEGA, P))


def test_should_tile_examples(car_index, index):
    assert cm.should_tile((0, 30), [Q], car_layout(), car_index, alpha=0.8)
    # inclusive boundary: the untiled layout is exactly at ratio 1
    assert cm.should_tile((0, 30), [Q], OMEGA, car_index, alpha=1.0)


def test_should_tile_rejects_dense(index):
    big = (0, 0, 576, 320)  # 90% of the frame
    index.add_many([("v", f, "car", *big) for f in range(30)])
    lay = fine_grained_layout([BoundingBox(0, "car", *big)], D)
    assert not cm.should_tile((0, 30), [Q], lay, index, alpha=0.8)


def test_query_range_clips_demand(car_index):
    q = QuerySpec.for_labels("v", "car", frame_range=(0, 10))
    assert cm.pixels_decoded((0, 30), q, OMEGA, car_index) == 640 * 320 * 10
    assert not cm.touches(QuerySpec.for_labels("v", "car", frame_range=(30, 40)), (0, 30))


box_st = st.tuples(st.integers(0, 59), st.integers(0, 600), st.integers(0, 300),
                   st.integers(1, 200), st.integers(1, 100))


@given(st.lists(box_st, min_size=1, max_size=12), st.data())
def test_decode_counts_match_raster_oracle(tmp_path_factory, raw, data):
    boxes = [(f, (x, y, min(640, x + w), min(320, y + h))) for f, x, y, w, h in raw]
    sot = data.draw(st.sampled_from([(0, 30), (30, 60)]))
    with SemanticIndex(tmp_path_factory.mktemp("i") / "i.tidx") as idx:
        idx.register_video("v", 0, D, 60)
        idx.add_many([("v", f, "car", *r) for f, r in boxes])
        chosen = [BoundingBox(f, "car", *r) for f, r in boxes if data.draw(st.booleans())]
        lay = fine_grained_layout(chosen, D)
        assert cm.decode_counts(sot, Q, lay, idx) == raster_counts(lay, boxes, sot)


def test_calibration_exact_linear():
    rng = np.random.default_rng(0)
    samples = [(p, t, 2e-9 * p + 1e-4 * t) for p, t in zip(rng.integers(1e4, 1e7, 50), rng.integers(1, 30, 50))]
    params, r2 = cm.calibrate(samples)
    assert params.beta == pytest.approx(2e-9, rel=1e-12)
    assert params.gamma == pytest.approx(1e-4, rel=1e-12)
    assert r2 == pytest.approx(1.0, abs=1e-12)


def test_calibration_underdetermined():
    with pytest.raises(CalibrationError):
        cm.fit_linear([(100, 1, 0.1)] * 5)
    with pytest.raises(CalibrationError):
        cm.fit_linear([(100, 1, 0.1)])


def test_calibration_clamps_negative():
    samples = [(100, 1, 0.0), (200, 1, 0.0), (100, 5, 1.0), (300, 2, 0.1)]
    with warnings.catch_warnings(record=True) as caught:
        warnings.simplefilter("always")
        fit = cm.fit_linear([(p, t, -1e-6 * p + s) for p, t, s in samples])
    assert fit.slope_pixels == 0.0
    assert any("clamping" in str(w.message) for w in caught)


def test_clamped_fit_refits_the_other_coefficient():
    samples = [(p, t, 1e-3 * p - 2e-2 * t) for p, t in [(100, 1), (200, 2), (400, 1), (300, 3)]]
    with warnings.catch_warnings():
        warnings.simplefilter("ignore")
        fit = cm.fit_linear(samples)
    p = np.array([s[0] for s in samples], float)
    y = np.array([s[2] for s in samples])
    assert fit.slope_tiles == 0.0
    assert fit.slope_pixels == pytest.approx(p @ y / (p @ p), rel=1e-9)


def test_sample_csv_round_trip(tmp_path):
    samples = [(100, 1, 0.25), (2000, 3, 1.5e-3)]
    cm.save_samples(tmp_path / "s.csv", samples)
    assert cm.load_samples(tmp_path / "s.csv") == [(100.0, 1.0, 0.25), (2000.0, 3.0, 1.5e-3)]


def test_sample_csv_missing_column(tmp_path):
    (tmp_path / "s.csv").write_text("pixels,seconds\n1,2\n")
    with pytest.raises(CalibrationError):
        cm.load_samples(tmp_path / "s.csv")
