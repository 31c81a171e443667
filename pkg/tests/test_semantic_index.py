import pytest
from hypothesis import given, strategies as st

from tilestore.errors import CorruptDataError, OutOfBoundsError, UnknownVideoError
from tilestore.geometry import FrameDims
from tilestore.semantic_index import LabelPredicate, SemanticIndex

D = FrameDims(640, 320)


@pytest.fixture
def index(tmp_path):
    idx = SemanticIndex(tmp_path / "index.tidx")
    idx.register_video("v", 0, D, 100)
    yield idx
    idx.close()


def test_predicate_parse():
    p = LabelPredicate.parse("car|bicycle & red")
    assert p.clauses == (frozenset({"car", "bicycle"}), frozenset({"red"}))
    assert p.labels == {"car", "bicycle", "red"}
    assert str(p) == "bicycle|car & red"
    assert LabelPredicate.parse(str(p)) == p
    for bad in ["", "car|", "& car", "car &"]:
        with pytest.raises(ValueError):
            LabelPredicate.parse(bad)


def test_empty_index(index):
    assert index.lookup("v", LabelPredicate.any_of("car")) == ()
    assert index.distinct_labels("v") == set()


def test_write_then_read(index):
    assert index.add_metadata("v", 3, "car", 10, 20, 50, 60)
    (e,) = index.lookup("v", LabelPredicate.any_of("car"))
    assert (e.frame, e.label, e.rect) == (3, "car", (10, 20, 50, 60))


def test_duplicate_insert_is_idempotent(index):
    assert index.add_metadata("v", 3, "car", 10, 20, 50, 60)
    assert not index.add_metadata("v", 3, "car", 10, 20, 50, 60)
    assert len(index) == 1


@pytest.mark.parametrize("box", [(50, 20, 50, 60), (60, 20, 50, 60), (0, 0, 641, 10), (0, 10, 10, 5)])
def test_bad_boxes_rejected(index, box):
    with pytest.raises(OutOfBoundsError):
        index.add_metadata("v", 0, "car", *box)


def test_bad_frame_and_video(index):
    with pytest.raises(OutOfBoundsError):
        index.add_metadata("v", 100, "car", 0, 0, 10, 10)
    with pytest.raises(UnknownVideoError):
        index.add_metadata("w", 0, "car", 0, 0, 10, 10)


def test_conjunction_needs_every_clause(index):
    for f in range(5):
        index.add_metadata("v", f, "car", 0, 0, 10, 10)
    assert index.lookup("v", LabelPredicate.parse("car & person")) == ()
    index.add_metadata("v", 2, "person", 20, 20, 40, 40)
    got = index.lookup("v", LabelPredicate.parse("car & person"))
    assert {(e.frame, e.label) for e in got} == {(2, "car"), (2, "person")}


def test_distinct_labels_only_detected(index):
    index.add_metadata("v", 0, "car", 0, 0, 10, 10)
    index.add_metadata("v", 0, "person", 0, 0, 10, 10)
    index.lookup("v", LabelPredicate.any_of("truck"))
    assert index.distinct_labels("v") == {"car", "person"}


def test_persistence_round_trip(tmp_path):
    path = tmp_path / "i.tidx"
    with SemanticIndex(path) as idx:
        idx.register_video("v", 7, D, 100)
        idx.add_many([("v", f, lbl, f, 0, f + 10, 10) for f in range(20) for lbl in ("a", "b")])
        before = idx.entries("v")
    with SemanticIndex(path) as idx:
        idx.register_video("v", 7, D, 100)
        assert idx.entries("v") == before


def test_torn_tail_is_ignored(tmp_path):
    path = tmp_path / "i.tidx"
    with SemanticIndex(path) as idx:
        idx.register_video("v", 0, D, 10)
        idx.add_metadata("v", 1, "car", 0, 0, 10, 10)
        idx.add_metadata("v", 2, "car", 0, 0, 10, 10)
    data = path.read_bytes()
    path.write_bytes(data[:-5])
    with SemanticIndex(path) as idx:
        idx.register_video("v", 0, D, 10)
        assert [e.frame for e in idx.entries("v")] == [1]


def test_bad_magic(tmp_path):
    path = tmp_path / "i.tidx"
    path.write_bytes(b"NOTANIDX")
    with pytest.raises(CorruptDataError):
        SemanticIndex(path)


def test_compact_preserves_contents(tmp_path):
    path = tmp_path / "i.tidx"
    with SemanticIndex(path) as idx:
        idx.register_video("v", 0, D, 50)
        for f in reversed(range(50)):
            idx.add_metadata("v", f, "car", 0, 0, 10, 10)
            idx.add_metadata("v", f, "car", 0, 0, 10, 10)
        before = idx.entries("v")
        idx.compact()
        idx.add_metadata("v", 0, "bus", 0, 0, 5, 5)
    with SemanticIndex(path) as idx:
        idx.register_video("v", 0, D, 50)
        assert [e for e in idx.entries("v") if e.label == "car"] == before
        assert len(idx) == 51


def test_cache_invalidated_by_writes(index):
    pred = LabelPredicate.any_of("car")
    index.add_metadata("v", 0, "car", 0, 0, 10, 10)
    v0 = index.version
    assert len(index.lookup("v", pred)) == 1
    index.add_metadata("v", 1, "car", 0, 0, 10, 10)
    assert index.version == v0 + 1
    assert len(index.lookup("v", pred)) == 2


labels_st = st.sampled_from(["car", "person", "bus", "red"])
row_st = st.tuples(st.integers(0, 29), labels_st, st.integers(0, 600), st.integers(0, 300),
                   st.integers(1, 40), st.integers(1, 20))
clause_st = st.frozensets(labels_st, min_size=1, max_size=3)


@given(st.lists(row_st, max_size=40), st.lists(clause_st, min_size=1, max_size=3),
       st.integers(0, 29), st.integers(1, 30))
def test_lookup_matches_linear_scan(tmp_path_factory, rows, clauses, lo, width):
    path = tmp_path_factory.mktemp("idx") / "i.tidx"
    with SemanticIndex(path) as idx:
        idx.register_video("v", 0, D, 30)
        idx.add_many([("v", f, lbl, x, y, x + w, y + h) for f, lbl, x, y, w, h in rows])
        pred = LabelPredicate(tuple(clauses))
        hi = min(30, lo + width)
        got = idx.lookup("v", pred, (lo, hi))
        boxes = {(f, lbl, (x, y, x + w, y + h)) for f, lbl, x, y, w, h in rows}
        present = {}
        for f, lbl, _ in boxes:
            present.setdefault(f, set()).add(lbl)
        expect = sorted((lbl, f, r) for f, lbl, r in boxes
                        if lo <= f < hi and lbl in pred.labels and pred.satisfied_by(present[f]))
        assert [(e.label, e.frame, e.rect) for e in got] == expect
