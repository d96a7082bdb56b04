"""Shared builders for randomized test instances."""

from __future__ import annotations

import numpy as np
import pytest

from dtmatch import FeatureMap, Template, l2_normalize_channels


def make_normalized_map(rng: np.random.Generator, w: int, h: int, c: int,
                        zero_prob: float = 0.0) -> FeatureMap:
    values = rng.standard_normal((h, w, c))
    if zero_prob > 0.0:
        mask = rng.random((h, w)) < zero_prob
        values[mask] = 0.0
    return l2_normalize_channels(FeatureMap(values.astype(np.float32)))


def make_template(rng: np.random.Generator, fm: FeatureMap,
                  n_cells: int, n_rois: int) -> Template:
    """Template with n_cells distinct cells of fm split into n_rois regions,
    every region non-empty."""
    assert 1 <= n_rois <= n_cells <= fm.w * fm.h
    flat = rng.choice(fm.w * fm.h, size=n_cells, replace=False)
    xy = np.stack([flat % fm.w, flat // fm.w], axis=1).astype(np.int64)
    ids = np.zeros(n_cells, dtype=np.int64)
    ids[:n_rois] = np.arange(n_rois)
    if n_cells > n_rois:
        ids[n_rois:] = rng.integers(0, n_rois, size=n_cells - n_rois)
    vectors = np.stack([fm.values[y, x] for x, y in xy])
    return Template(w=fm.w, h=fm.h, c=fm.c, cells_xy=xy, roi_ids=ids,
                    vectors=vectors, roi_count=n_rois)


def cells_by_roi(template: Template) -> dict[int, list[tuple[int, int, np.ndarray]]]:
    """Oracle-side view: roi_id -> [(x, y, vector)]."""
    out: dict[int, list[tuple[int, int, np.ndarray]]] = {}
    for (x, y), rid, vec in zip(template.cells_xy, template.roi_ids, template.vectors):
        out.setdefault(int(rid), []).append((int(x), int(y), vec))
    return out


def template_cells(template: Template) -> list[tuple[int, int, np.ndarray]]:
    return [(int(x), int(y), vec)
            for (x, y), vec in zip(template.cells_xy, template.vectors)]


@pytest.fixture
def rng() -> np.random.Generator:
    return np.random.default_rng(1234)


# One line per acceptance criterion, echoed after the run so the verdicts
# survive output capture.
ACCEPTANCE_LINES: list[str] = []


def pytest_terminal_summary(terminalreporter, exitstatus, config):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in ACCEPTANCE_LINES:
            terminalreporter.write_line(line)
