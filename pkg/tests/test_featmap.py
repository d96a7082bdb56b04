"""Feature-map types, normalization, pooling, and ROI projection."""

import numpy as np
import pytest

from conftest import make_normalized_map
from oracles import oracle_maxpool, oracle_normalize, oracle_project, oracle_union_area

from dtmatch import (
    FeatureMap,
    InvalidInputError,
    QuerySpec,
    RoiBox,
    Template,
    l2_normalize_channels,
    maxpool_downsample,
    project_roi,
    validate_feature_map,
)
from dtmatch.errors import ContractError


def fm_of(values, normalized=False):
    return FeatureMap(np.asarray(values, dtype=np.float32), normalized=normalized)


class TestFeatureMap:
    def test_rejects_wrong_rank(self):
        with pytest.raises(InvalidInputError):
            fm_of(np.zeros((2, 2)))

    def test_rejects_empty_dim(self):
        with pytest.raises(InvalidInputError):
            fm_of(np.zeros((2, 0, 3)))

    def test_rejects_non_finite(self):
        bad = np.zeros((2, 2, 2))
        bad[0, 0, 0] = np.nan
        with pytest.raises(InvalidInputError):
            fm_of(bad)

    def test_dims_and_cell(self):
        values = np.arange(24, dtype=np.float32).reshape(2, 3, 4)
        fm = fm_of(values)
        assert fm.dims == (3, 2, 4)
        assert np.array_equal(fm.cell(1, 0), values[0, 1])

    def test_validate_flags_bad_norms(self):
        fm = fm_of([[[3.0, 4.0]]], normalized=True)
        with pytest.raises(InvalidInputError):
            validate_feature_map(fm)

    def test_validate_accepts_zero_cells(self):
        fm = fm_of([[[0.0, 0.0], [1.0, 0.0]]], normalized=True)
        validate_feature_map(fm)


class TestNormalize:
    def test_pythagorean_cell(self):
        out = l2_normalize_channels(fm_of([[[3.0, 4.0]]]))
        assert out.normalized
        np.testing.assert_allclose(out.values[0, 0], [0.6, 0.8], atol=1e-7)

    def test_zero_cell_stays_zero(self):
        out = l2_normalize_channels(fm_of([[[0.0, 0.0]]]))
        assert np.array_equal(out.values, np.zeros((1, 1, 2), dtype=np.float32))

    def test_random_matches_oracle(self):
        rng = np.random.default_rng(10)
        values = rng.standard_normal((5, 4, 8)).astype(np.float32)
        out = l2_normalize_channels(FeatureMap(values))
        np.testing.assert_allclose(out.values, oracle_normalize(values), atol=1e-6)
        norms = np.linalg.norm(out.values.astype(np.float64), axis=2)
        np.testing.assert_allclose(norms, 1.0, atol=1e-6)

    def test_idempotent(self):
        rng = np.random.default_rng(11)
        once = l2_normalize_channels(FeatureMap(rng.standard_normal((3, 3, 6)).astype(np.float32)))
        twice = l2_normalize_channels(once)
        np.testing.assert_allclose(once.values, twice.values, atol=1e-6)

    def test_rejects_non_finite(self):
        values = np.ones((1, 1, 2), dtype=np.float32)
        fm = FeatureMap(values)
        object.__setattr__(fm, "values", np.array([[[np.inf, 0.0]]], dtype=np.float32))
        with pytest.raises(InvalidInputError):
            l2_normalize_channels(fm)


class TestMaxPool:
    def test_2x2_single_window(self):
        out = maxpool_downsample(fm_of([[[1.0], [2.0]], [[3.0], [4.0]]]), kernel=2, stride=2)
        assert out.values.shape == (1, 1, 1)
        assert out.values[0, 0, 0] == 4.0
        assert not out.normalized

    def test_constant_map(self):
        out = maxpool_downsample(fm_of(np.full((4, 4, 3), 2.5)), kernel=2, stride=2)
        assert out.values.shape == (2, 2, 3)
        assert np.all(out.values == 2.5)

    def test_kernel_larger_than_map(self):
        with pytest.raises(InvalidInputError):
            maxpool_downsample(fm_of(np.zeros((2, 2, 1))), kernel=3, stride=1)

    def test_random_matches_oracle(self):
        rng = np.random.default_rng(12)
        values = rng.standard_normal((8, 8, 4)).astype(np.float32)
        out = maxpool_downsample(FeatureMap(values), kernel=2, stride=2)
        np.testing.assert_array_equal(out.values, oracle_maxpool(values, 2, 2))

    def test_odd_kernel_stride(self):
        rng = np.random.default_rng(13)
        values = rng.standard_normal((7, 9, 3)).astype(np.float32)
        out = maxpool_downsample(FeatureMap(values), kernel=3, stride=2)
        np.testing.assert_array_equal(out.values, oracle_maxpool(values, 3, 2))

    def test_bounded_by_input_max(self):
        rng = np.random.default_rng(14)
        values = rng.standard_normal((6, 6, 2)).astype(np.float32)
        out = maxpool_downsample(FeatureMap(values), kernel=2, stride=2)
        for ch in range(2):
            assert out.values[..., ch].max() <= values[..., ch].max()


class TestRoiTypes:
    def test_box_needs_positive_extent(self):
        with pytest.raises(InvalidInputError):
            RoiBox(5.0, 0.0, 5.0, 10.0)

    def test_box_rejects_negative(self):
        with pytest.raises(InvalidInputError):
            RoiBox(-1.0, 0.0, 5.0, 10.0)

    def test_query_requires_contiguous_ids(self):
        rois = (RoiBox(0, 0, 4, 4, roi_id=0), RoiBox(4, 4, 8, 8, roi_id=2))
        with pytest.raises(InvalidInputError):
            QuerySpec("q", 8, 8, rois)

    def test_query_rejects_out_of_bounds_roi(self):
        with pytest.raises(InvalidInputError):
            QuerySpec("q", 8, 8, (RoiBox(0, 0, 9, 4, roi_id=0),))

    def test_query_requires_rois(self):
        with pytest.raises(InvalidInputError):
            QuerySpec("q", 8, 8, ())

    def test_union_area_matches_inclusion_exclusion(self):
        rng = np.random.default_rng(15)
        for _ in range(50):
            n = int(rng.integers(1, 5))
            boxes = []
            for i in range(n):
                x0, x1 = np.sort(rng.uniform(0, 100, 2))
                y0, y1 = np.sort(rng.uniform(0, 100, 2))
                boxes.append(RoiBox(float(x0), float(y0), float(x1) + 1.0,
                                    float(y1) + 1.0, roi_id=i))
            spec = QuerySpec("q", 200, 200, tuple(boxes))
            want = oracle_union_area([(b.x0, b.y0, b.x1, b.y1) for b in boxes])
            assert spec.total_roi_area == pytest.approx(want, rel=1e-9)


class TestTemplateType:
    def test_rejects_duplicate_cells(self):
        xy = np.array([[0, 0], [0, 0]], dtype=np.int64)
        with pytest.raises(InvalidInputError):
            Template(w=2, h=2, c=2, cells_xy=xy, roi_ids=np.zeros(2, dtype=np.int64),
                     vectors=np.zeros((2, 2), dtype=np.float32), roi_count=1)

    def test_areas_are_owned_cell_counts(self):
        xy = np.array([[0, 0], [1, 0], [0, 1]], dtype=np.int64)
        ids = np.array([0, 0, 1], dtype=np.int64)
        t = Template(w=2, h=2, c=2, cells_xy=xy, roi_ids=ids,
                     vectors=np.zeros((3, 2), dtype=np.float32), roi_count=2)
        per_cell = {int(rid): float(a) for rid, a in zip(t.roi_ids, t.areas)}
        assert per_cell == {0: 2.0, 1: 1.0}

    def test_single_roi_subsets(self):
        xy = np.array([[0, 0], [1, 0], [0, 1]], dtype=np.int64)
        ids = np.array([0, 0, 1], dtype=np.int64)
        vecs = np.arange(6, dtype=np.float32).reshape(3, 2)
        t = Template(w=2, h=2, c=2, cells_xy=xy, roi_ids=ids, vectors=vecs, roi_count=2)
        sub = t.single_roi(1)
        assert sub.roi_count == 1
        assert sub.n_cells == 1
        assert np.all(sub.roi_ids == 0)


class TestProjectRoi:
    GRID = dict(w=4, h=4, c=3)

    def query_map(self, seed=0):
        return make_normalized_map(np.random.default_rng(seed), **self.GRID)

    def test_exact_alignment(self):
        spec = QuerySpec("q", 64, 64, (RoiBox(16, 16, 48, 48, roi_id=0),))
        t = project_roi(self.query_map(), spec)
        cells = {tuple(c) for c in t.cells_xy.tolist()}
        assert cells == {(1, 1), (1, 2), (2, 1), (2, 2)}
        assert np.all(t.areas == 4.0)

    def test_tiny_roi_fallback(self):
        spec = QuerySpec("q", 64, 64, (RoiBox(2, 2, 6, 6, roi_id=0),))
        t = project_roi(self.query_map(), spec)
        assert t.cells_xy.tolist() == [[0, 0]]
        assert np.all(t.areas == 1.0)

    def test_requires_normalized_map(self):
        fm = FeatureMap(np.ones((4, 4, 3), dtype=np.float32))
        spec = QuerySpec("q", 64, 64, (RoiBox(0, 0, 32, 32, roi_id=0),))
        with pytest.raises(ContractError):
            project_roi(fm, spec)

    def test_template_vectors_come_from_map(self):
        fm = self.query_map()
        spec = QuerySpec("q", 64, 64, (RoiBox(16, 16, 48, 48, roi_id=0),))
        t = project_roi(fm, spec)
        for (x, y), vec in zip(t.cells_xy, t.vectors):
            assert np.array_equal(vec, fm.values[y, x])

    def test_contention_goes_to_smaller_roi(self):
        # Both regions fully claim cell (1, 1); region 1 is smaller.
        fm = self.query_map()
        spec = QuerySpec("q", 64, 64, (
            RoiBox(0, 0, 32, 32, roi_id=0),
            RoiBox(16, 16, 32, 32, roi_id=1),
        ))
        t = project_roi(fm, spec)
        owners = {tuple(c): int(r) for c, r in zip(t.cells_xy.tolist(), t.roi_ids)}
        assert owners[(1, 1)] == 1
        assert owners[(0, 0)] == 0

    def test_every_roi_owns_a_cell(self):
        rng = np.random.default_rng(16)
        for _ in range(50):
            W = int(rng.integers(8, 65))
            H = int(rng.integers(8, 65))
            n = int(rng.integers(1, 4))
            rois = []
            for i in range(n):
                x0, x1 = np.sort(rng.uniform(0, W, 2))
                y0, y1 = np.sort(rng.uniform(0, H, 2))
                rois.append(RoiBox(float(x0), float(y0), float(min(x1 + 0.5, W)),
                                   float(min(y1 + 0.5, H)), roi_id=i))
            fm = make_normalized_map(rng, int(rng.integers(2, 9)), int(rng.integers(2, 9)), 2)
            t = project_roi(fm, QuerySpec("q", W, H, tuple(rois)))
            assert t.roi_count == n
            assert set(np.unique(t.roi_ids)) == set(range(n))

    def test_random_rois_match_pixel_oracle(self):
        rng = np.random.default_rng(17)
        for case in range(100):
            W = int(rng.integers(8, 49))
            H = int(rng.integers(8, 49))
            gw = int(rng.integers(2, 9))
            gh = int(rng.integers(2, 9))
            n = int(rng.integers(1, 4))
            rois = []
            for i in range(n):
                x0, x1 = np.sort(rng.uniform(0, W, 2))
                y0, y1 = np.sort(rng.uniform(0, H, 2))
                rois.append(RoiBox(float(x0), float(y0), float(min(x1 + 0.5, W)),
                                   float(min(y1 + 0.5, H)), roi_id=i))
            fm = make_normalized_map(rng, gw, gh, 2)
            t = project_roi(fm, QuerySpec("q", W, H, tuple(rois)))
            got = {rid: set() for rid in range(n)}
            for (x, y), rid in zip(t.cells_xy.tolist(), t.roi_ids):
                got[int(rid)].add((x, y))
            want = oracle_project(gw, gh, W, H,
                                  [(r.x0, r.y0, r.x1, r.y1, r.roi_id) for r in rois])
            assert got == want, f"case {case}: {got} != {want}"
