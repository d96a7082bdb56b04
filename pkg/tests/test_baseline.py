"""Pooled-descriptor and detection-index baselines."""

import numpy as np
import pytest

from conftest import make_normalized_map
from oracles import oracle_di, oracle_gap, oracle_topk

from dtmatch import (
    DataError,
    DetectionRecord,
    FeatureMap,
    InMemoryStore,
    InvalidInputError,
    ShapeError,
    di_rank,
    gap_descriptor,
    gap_search,
    read_detections,
    l2_normalize_channels,
)


class TestGapDescriptor:
    def test_two_cell_example(self):
        # Cells (1,0,0,...) and (0,1,0,...): mean is (0.5,0.5,0,...),
        # normalized to (1/sqrt(2), 1/sqrt(2), 0, ...).
        values = np.zeros((1, 2, 4), dtype=np.float32)
        values[0, 0, 0] = 1.0
        values[0, 1, 1] = 1.0
        d = gap_descriptor(FeatureMap(values, normalized=True))
        assert d.vector[0] == pytest.approx(0.70711, abs=1e-5)
        assert d.vector[1] == pytest.approx(0.70711, abs=1e-5)
        assert d.vector[2] == 0.0

    def test_constant_map(self, rng):
        cell = rng.normal(size=4)
        cell /= np.linalg.norm(cell)
        values = np.tile(cell.astype(np.float32), (3, 5, 1))
        d = gap_descriptor(FeatureMap(values, normalized=True))
        np.testing.assert_allclose(d.vector, cell, atol=1e-6)

    def test_matches_oracle(self, rng):
        for _ in range(25):
            fm = make_normalized_map(rng, int(rng.integers(1, 6)),
                                     int(rng.integers(1, 6)), int(rng.integers(1, 9)))
            want = oracle_gap(fm.values)
            np.testing.assert_allclose(gap_descriptor(fm).vector, want, atol=1e-6)

    def test_spatial_permutation_invariance(self, rng):
        fm = make_normalized_map(rng, 4, 3, 8)
        flat = fm.values.reshape(12, 8)
        perm = flat[rng.permutation(12)].reshape(3, 4, 8)
        a = gap_descriptor(fm).vector
        b = gap_descriptor(FeatureMap(perm, normalized=True)).vector
        np.testing.assert_allclose(a, b, atol=1e-12)

    def test_zero_map_stays_zero(self):
        d = gap_descriptor(FeatureMap(np.zeros((2, 2, 4), dtype=np.float32),
                                      normalized=True))
        assert np.all(d.vector == 0.0)
        assert np.isfinite(d.vector).all()

    def test_unnormalized_input_pools_raw_values(self, rng):
        # Pooling happens before normalization, so scaling the input
        # leaves the descriptor unchanged.
        raw = rng.normal(size=(3, 3, 4)).astype(np.float32)
        a = gap_descriptor(FeatureMap(raw))
        b = gap_descriptor(FeatureMap(raw * 4.0))
        np.testing.assert_allclose(a.vector, b.vector, atol=1e-6)


class TestGapSearch:
    def test_self_match_rank_one(self, rng):
        values = np.stack([make_normalized_map(rng, 3, 3, 8).values for _ in range(20)])
        store = InMemoryStore(values)
        results = gap_search(store, store.get_record(13), k=5)
        assert results[0].index == 13
        assert results[0].rank == 1
        assert results[0].score == pytest.approx(1.0, abs=1e-6)

    def test_orthogonal_scores_zero(self):
        a = np.zeros((2, 2, 4), dtype=np.float32)
        a[..., 0] = 1.0
        b = np.zeros((2, 2, 4), dtype=np.float32)
        b[..., 1] = 1.0
        store = InMemoryStore(b[None])
        results = gap_search(store, FeatureMap(a, normalized=True), k=1)
        assert results[0].score == pytest.approx(0.0, abs=1e-12)

    def test_matches_full_sort_oracle(self, rng):
        values = np.stack([make_normalized_map(rng, 3, 3, 6).values for _ in range(300)])
        store = InMemoryStore(values)
        query = make_normalized_map(rng, 3, 3, 6)
        results = gap_search(store, query, k=20)
        q = oracle_gap(query.values)
        scores = [float(np.dot(oracle_gap(values[i]), q)) for i in range(300)]
        assert [r.index for r in results] == oracle_topk(scores, 20)

    def test_ties_break_by_ascending_index(self, rng):
        base = make_normalized_map(rng, 2, 2, 4).values
        store = InMemoryStore(np.stack([base, base, base]))
        results = gap_search(store, make_normalized_map(rng, 2, 2, 4), k=3)
        assert [r.index for r in results] == [0, 1, 2]

    def test_dim_mismatch(self, rng):
        store = InMemoryStore(np.zeros((2, 3, 3, 4), dtype=np.float32))
        with pytest.raises(ShapeError):
            gap_search(store, make_normalized_map(rng, 3, 3, 5), k=1)

    def test_empty_store(self, rng):
        store = InMemoryStore(np.empty((0, 2, 2, 4), dtype=np.float32))
        assert gap_search(store, make_normalized_map(rng, 2, 2, 4), k=5) == []

    def test_k_validation(self, rng):
        store = InMemoryStore(np.zeros((1, 2, 2, 4), dtype=np.float32))
        with pytest.raises(InvalidInputError):
            gap_search(store, make_normalized_map(rng, 2, 2, 4), k=0)


class TestDiRank:
    def test_max_confidence_wins(self):
        records = [
            DetectionRecord("a", (("cat", 0.3), ("cat", 0.9))),
            DetectionRecord("b", (("cat", 0.5),)),
        ]
        results = di_rank(records, "cat", k=2)
        assert [r.image_id for r in results] == ["a", "b"]
        assert results[0].score == pytest.approx(0.9)

    def test_absent_class_scores_zero(self):
        records = [
            DetectionRecord("a", (("dog", 0.99),)),
            DetectionRecord("b", (("cat", 0.1),)),
        ]
        results = di_rank(records, "cat", k=2)
        assert [r.image_id for r in results] == ["b", "a"]
        assert results[1].score == 0.0

    def test_matches_oracle(self, rng):
        classes = ["cat", "dog", "bird"]
        for _ in range(20):
            records = []
            for i in range(int(rng.integers(1, 30))):
                dets = tuple(
                    (classes[int(rng.integers(3))], float(rng.uniform()))
                    for _ in range(int(rng.integers(0, 4)))
                )
                records.append(DetectionRecord(f"img-{i:03d}", dets))
            k = int(rng.integers(1, len(records) + 1))
            got = di_rank(records, "dog", k=k)
            want = oracle_di([(r.image_id, list(r.detections)) for r in records],
                             "dog", k)
            assert [(r.image_id, r.score) for r in got] == want

    def test_ties_break_by_image_id(self):
        records = [
            DetectionRecord("zz", (("cat", 0.5),)),
            DetectionRecord("aa", (("cat", 0.5),)),
            DetectionRecord("mm", (("cat", 0.5),)),
        ]
        results = di_rank(records, "cat", k=3)
        assert [r.image_id for r in results] == ["aa", "mm", "zz"]

    def test_index_is_input_position(self):
        records = [
            DetectionRecord("b", (("cat", 0.2),)),
            DetectionRecord("a", (("cat", 0.8),)),
        ]
        results = di_rank(records, "cat", k=2)
        assert (results[0].image_id, results[0].index) == ("a", 1)
        assert (results[1].image_id, results[1].index) == ("b", 0)

    def test_validation(self):
        with pytest.raises(InvalidInputError):
            di_rank([DetectionRecord("a", ())], "", k=1)
        with pytest.raises(InvalidInputError):
            di_rank([DetectionRecord("a", ())], "cat", k=0)
        with pytest.raises(InvalidInputError):
            DetectionRecord("a", (("cat", 1.5),))
        with pytest.raises(InvalidInputError):
            DetectionRecord("a", (("cat", -0.1),))


class TestReadDetections:
    def test_groups_by_image_in_first_seen_order(self, tmp_path):
        path = tmp_path / "det.ndjson"
        path.write_text(
            '{"image_id": "b", "class": "cat", "confidence": 0.5}\n'
            '{"image_id": "a", "class": "dog", "confidence": 0.25}\n'
            '{"image_id": "b", "class": "dog", "confidence": 0.75}\n'
        )
        records = read_detections(path)
        assert [r.image_id for r in records] == ["b", "a"]
        assert records[0].detections == (("cat", 0.5), ("dog", 0.75))
        assert records[1].detections == (("dog", 0.25),)

    def test_bad_line_names_line_number(self, tmp_path):
        path = tmp_path / "det.ndjson"
        path.write_text('{"image_id": "a", "class": "cat", "confidence": 0.5}\nnot json\n')
        with pytest.raises(DataError, match="line 2"):
            read_detections(path)

    def test_missing_field_rejected(self, tmp_path):
        path = tmp_path / "det.ndjson"
        path.write_text('{"image_id": "a", "class": "cat"}\n')
        with pytest.raises(DataError):
            read_detections(path)

    def test_out_of_range_confidence_rejected(self, tmp_path):
        path = tmp_path / "det.ndjson"
        path.write_text('{"image_id": "a", "class": "cat", "confidence": 2.0}\n')
        with pytest.raises((DataError, InvalidInputError)):
            read_detections(path)

    def test_empty_file(self, tmp_path):
        path = tmp_path / "det.ndjson"
        path.write_text("")
        assert read_detections(path) == []
