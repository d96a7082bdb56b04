"""Feature-map value types and the query-side geometry.

A feature map is a w*h grid of length-c channel vectors ("cells"), stored
row-major as a (h, w, c) float32 array so that flat index = (y*w + x)*c + ch.
Queries arrive as pixel-space boxes and are projected onto the cell grid to
form a sparse template: the set of cells owned by each region of interest,
each carrying its owning region's cell-count area.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from .errors import ContractError, InvalidInputError

# A channel vector counts as normalized when its L2 norm is within this of 1.
NORM_TOLERANCE = 1e-4

# Minimum fraction of a cell a region must cover to own it outright.
OVERLAP_THRESHOLD = 0.5


@dataclass(frozen=True)
class FeatureMap:
    """One image in feature space: a (h, w, c) float32 grid of channel vectors.

    ``normalized`` records whether every cell is unit-length (or all-zero)
    along the channel axis; downstream scoring requires it.
    """

    values: np.ndarray
    normalized: bool = False

    def __post_init__(self) -> None:
        values = np.asarray(self.values, dtype=np.float32)
        if values.ndim != 3:
            raise InvalidInputError(
                f"feature map must be (h, w, c), got shape {values.shape}"
            )
        if min(values.shape) < 1:
            raise InvalidInputError(f"feature map dims must be >= 1, got {values.shape}")
        if not np.isfinite(values).all():
            raise InvalidInputError("feature map contains non-finite values")
        object.__setattr__(self, "values", values)

    @property
    def h(self) -> int:
        return self.values.shape[0]

    @property
    def w(self) -> int:
        return self.values.shape[1]

    @property
    def c(self) -> int:
        return self.values.shape[2]

    @property
    def dims(self) -> tuple[int, int, int]:
        """(w, h, c)"""
        return (self.w, self.h, self.c)

    def cell(self, x: int, y: int) -> np.ndarray:
        return self.values[y, x]


def validate_feature_map(fmap: FeatureMap) -> None:
    """Check the full invariant, including unit norms when the flag is set.

    Raises InvalidInputError if violated. The norm check is O(w*h*c) and is
    therefore not part of the constructor.
    """
    if not np.isfinite(fmap.values).all():
        raise InvalidInputError("feature map contains non-finite values")
    if fmap.normalized:
        norms = np.linalg.norm(fmap.values.astype(np.float64), axis=2)
        off = np.abs(norms - 1.0) > NORM_TOLERANCE
        if np.any(off & (norms != 0.0)):
            raise InvalidInputError(
                "feature map is flagged normalized but has cells with "
                f"norm outside 1 +/- {NORM_TOLERANCE} (worst: {norms[off].max():.6f})"
            )


@dataclass(frozen=True)
class RoiBox:
    """Half-open pixel-space box [x0, x1) x [y0, y1) around one object."""

    x0: float
    y0: float
    x1: float
    y1: float
    roi_id: int = 0

    def __post_init__(self) -> None:
        if not all(math.isfinite(v) for v in (self.x0, self.y0, self.x1, self.y1)):
            raise InvalidInputError("ROI coordinates must be finite")
        if not (self.x0 < self.x1 and self.y0 < self.y1):
            raise InvalidInputError(
                f"ROI must have positive extent, got ({self.x0},{self.y0})-({self.x1},{self.y1})"
            )
        if self.x0 < 0 or self.y0 < 0:
            raise InvalidInputError("ROI coordinates must be non-negative")

    @property
    def pixel_area(self) -> float:
        return (self.x1 - self.x0) * (self.y1 - self.y0)

    @property
    def center(self) -> tuple[float, float]:
        return (0.5 * (self.x0 + self.x1), 0.5 * (self.y0 + self.y1))


@dataclass(frozen=True)
class QuerySpec:
    """A query image's identity, pixel dimensions, and its regions of interest."""

    image_id: str
    image_width: int
    image_height: int
    rois: tuple[RoiBox, ...]

    def __post_init__(self) -> None:
        if self.image_width <= 0 or self.image_height <= 0:
            raise InvalidInputError("query image dimensions must be positive")
        rois = tuple(self.rois)
        if not rois:
            raise InvalidInputError("query must carry at least one ROI")
        ids = [r.roi_id for r in rois]
        if sorted(ids) != list(range(len(rois))):
            raise InvalidInputError(f"roi_ids must be unique and contiguous from 0, got {ids}")
        for r in rois:
            if r.x1 > self.image_width or r.y1 > self.image_height:
                raise InvalidInputError(
                    f"ROI {r.roi_id} extends outside the {self.image_width}x{self.image_height} image"
                )
        object.__setattr__(self, "rois", rois)

    @property
    def total_roi_area(self) -> float:
        """Union pixel area of all ROIs (overlap counted once)."""
        return _union_area(self.rois)


def _union_area(rois: tuple[RoiBox, ...]) -> float:
    # Coordinate-compression sweep; exact for the handful of boxes per query.
    xs = sorted({r.x0 for r in rois} | {r.x1 for r in rois})
    ys = sorted({r.y0 for r in rois} | {r.y1 for r in rois})
    area = 0.0
    for yi in range(len(ys) - 1):
        for xi in range(len(xs) - 1):
            cx = 0.5 * (xs[xi] + xs[xi + 1])
            cy = 0.5 * (ys[yi] + ys[yi + 1])
            if any(r.x0 <= cx < r.x1 and r.y0 <= cy < r.y1 for r in rois):
                area += (xs[xi + 1] - xs[xi]) * (ys[yi + 1] - ys[yi])
    return area


@dataclass(frozen=True)
class Template:
    """Sparse projected query: the ROI-owned cells of a normalized feature map.

    ``vectors[k]`` is the channel vector at grid cell ``cells_xy[k]``; the cell
    belongs to region ``roi_ids[k]`` and ``areas[k]`` is that region's owned
    cell count. Rows are sorted by (roi_id, y, x), which fixes the reduction
    order used by the scoring kernels.
    """

    w: int
    h: int
    c: int
    cells_xy: np.ndarray  # (n, 2) int64, columns (x, y)
    roi_ids: np.ndarray  # (n,) int64
    vectors: np.ndarray  # (n, c) float32
    roi_count: int = 0
    # (n,) float64 cell counts of each row's owning region; derived, not passed.
    areas: np.ndarray = field(init=False)

    def __post_init__(self) -> None:
        cells = np.asarray(self.cells_xy, dtype=np.int64).reshape(-1, 2)
        ids = np.asarray(self.roi_ids, dtype=np.int64).reshape(-1)
        vecs = np.asarray(self.vectors, dtype=np.float32).reshape(-1, self.c)
        if len(cells) == 0:
            raise InvalidInputError("template must contain at least one cell")
        if not (len(cells) == len(ids) == len(vecs)):
            raise InvalidInputError("template arrays disagree in length")
        if min(self.w, self.h, self.c) < 1:
            raise InvalidInputError("template dims must be >= 1")
        if cells[:, 0].min() < 0 or cells[:, 0].max() >= self.w:
            raise InvalidInputError("template cell x outside [0, w)")
        if cells[:, 1].min() < 0 or cells[:, 1].max() >= self.h:
            raise InvalidInputError("template cell y outside [0, h)")

        order = np.lexsort((cells[:, 0], cells[:, 1], ids))
        cells, ids, vecs = cells[order], ids[order], vecs[order]
        flat = cells[:, 1] * self.w + cells[:, 0]
        if len(np.unique(flat)) != len(flat):
            raise InvalidInputError("template contains duplicate cells")

        present = np.unique(ids)
        roi_count = int(self.roi_count) or len(present)
        if not np.array_equal(present, np.arange(roi_count)):
            raise InvalidInputError(
                f"template roi ids must cover 0..{roi_count - 1}, got {present.tolist()}"
            )
        counts = np.bincount(ids, minlength=roi_count).astype(np.float64)
        areas = counts[ids]

        object.__setattr__(self, "cells_xy", cells)
        object.__setattr__(self, "roi_ids", ids)
        object.__setattr__(self, "vectors", vecs)
        object.__setattr__(self, "areas", areas)
        object.__setattr__(self, "roi_count", roi_count)

    @property
    def n_cells(self) -> int:
        return len(self.roi_ids)

    @property
    def dims(self) -> tuple[int, int, int]:
        return (self.w, self.h, self.c)

    def segment_starts(self) -> np.ndarray:
        """Start offsets of each roi's cell run in the sorted arrays."""
        changes = np.flatnonzero(np.diff(self.roi_ids)) + 1
        return np.concatenate(([0], changes))

    def single_roi(self, roi_id: int) -> "Template":
        """The template restricted to one region (areas unchanged)."""
        mask = self.roi_ids == roi_id
        if not mask.any():
            raise InvalidInputError(f"template has no roi {roi_id}")
        return Template(
            w=self.w,
            h=self.h,
            c=self.c,
            cells_xy=self.cells_xy[mask],
            roi_ids=np.zeros(int(mask.sum()), dtype=np.int64),
            vectors=self.vectors[mask],
            roi_count=1,
        )


def l2_normalize_channels(fmap: FeatureMap) -> FeatureMap:
    """Divide every cell by its channel L2 norm; all-zero cells stay zero.

    Norms are accumulated in float64 so that a normalized cell re-dotted with
    itself is 1 to within float32 rounding.
    """
    values = fmap.values
    if not np.isfinite(values).all():
        raise InvalidInputError("cannot normalize non-finite values")
    v64 = values.astype(np.float64)
    norms = np.sqrt(np.einsum("hwc,hwc->hw", v64, v64))[:, :, None]
    with np.errstate(invalid="ignore", divide="ignore"):
        out = np.where(norms > 0.0, v64 / norms, 0.0)
    return FeatureMap(out.astype(np.float32), normalized=True)


def maxpool_downsample(fmap: FeatureMap, kernel: int = 2, stride: int = 2) -> FeatureMap:
    """Per-channel max over kernel x kernel windows stepped by ``stride``.

    Output dims are floor((dim - kernel)/stride) + 1. Pooling mixes cells, so
    the normalized flag is cleared.
    """
    if kernel < 1 or stride < 1:
        raise InvalidInputError(f"kernel and stride must be >= 1, got {kernel}, {stride}")
    if kernel > fmap.w or kernel > fmap.h:
        raise InvalidInputError(
            f"kernel {kernel} exceeds map dims {fmap.w}x{fmap.h}"
        )
    windows = np.lib.stride_tricks.sliding_window_view(fmap.values, (kernel, kernel), axis=(0, 1))
    pooled = windows[::stride, ::stride].max(axis=(-2, -1))
    return FeatureMap(np.ascontiguousarray(pooled), normalized=False)


def project_roi(query_map: FeatureMap, query: QuerySpec) -> Template:
    """Map pixel-space ROIs onto the feature grid and build the sparse template.

    Cell (x, y) covers pixel rectangle [x*W/w, (x+1)*W/w) x [y*H/h, (y+1)*H/h).
    A cell belongs to the ROI covering at least half of it; an ROI that covers
    no cell that way falls back to the cell containing its center, so every
    region owns at least one cell. A cell claimed by several ROIs goes to the
    one with the smallest pixel area (ties to the lower roi_id); a region
    stripped of all its cells that way takes the nearest free cell instead.
    """
    if not query_map.normalized:
        raise ContractError("project_roi requires a channel-normalized query map")
    w, h = query_map.w, query_map.h
    cell_w = query.image_width / w
    cell_h = query.image_height / h
    cell_area = cell_w * cell_h

    claims: dict[tuple[int, int], list[int]] = {}
    for roi in query.rois:
        owned = []
        x_lo = max(0, int(math.floor(roi.x0 / cell_w)))
        x_hi = min(w, int(math.ceil(roi.x1 / cell_w)))
        y_lo = max(0, int(math.floor(roi.y0 / cell_h)))
        y_hi = min(h, int(math.ceil(roi.y1 / cell_h)))
        for cy in range(y_lo, y_hi):
            for cx in range(x_lo, x_hi):
                ox = min(roi.x1, (cx + 1) * cell_w) - max(roi.x0, cx * cell_w)
                oy = min(roi.y1, (cy + 1) * cell_h) - max(roi.y0, cy * cell_h)
                if ox > 0 and oy > 0 and (ox * oy) / cell_area >= OVERLAP_THRESHOLD:
                    owned.append((cx, cy))
        if not owned:
            px, py = roi.center
            owned = [(min(int(px / cell_w), w - 1), min(int(py / cell_h), h - 1))]
        for cell in owned:
            claims.setdefault(cell, []).append(roi.roi_id)

    # Contested cells go to the smallest region; lower roi_id breaks ties.
    rois_by_id = {r.roi_id: r for r in query.rois}
    owner: dict[tuple[int, int], int] = {}
    for cell, claimants in claims.items():
        owner[cell] = min(claimants, key=lambda rid: (rois_by_id[rid].pixel_area, rid))

    cells_per_roi: dict[int, list[tuple[int, int]]] = {r.roi_id: [] for r in query.rois}
    for cell, rid in owner.items():
        cells_per_roi[rid].append(cell)

    # A region can lose every claimed cell to smaller regions; give it the
    # free cell nearest its center so the template stays non-empty per ROI.
    starved = [rid for rid, cells in cells_per_roi.items() if not cells]
    if starved:
        taken = set(owner)
        for rid in sorted(starved, key=lambda rid: (rois_by_id[rid].pixel_area, rid)):
            px, py = rois_by_id[rid].center
            ccx, ccy = px / cell_w, py / cell_h
            free = [(x, y) for y in range(h) for x in range(w) if (x, y) not in taken]
            if not free:
                raise InvalidInputError("more ROIs than grid cells; cannot project")
            best = min(
                free,
                key=lambda c: ((c[0] + 0.5 - ccx) ** 2 + (c[1] + 0.5 - ccy) ** 2, c[1], c[0]),
            )
            cells_per_roi[rid].append(best)
            taken.add(best)

    xy, ids, vecs = [], [], []
    for rid in sorted(cells_per_roi):
        for (cx, cy) in sorted(cells_per_roi[rid], key=lambda c: (c[1], c[0])):
            xy.append((cx, cy))
            ids.append(rid)
            vecs.append(query_map.values[cy, cx])
    return Template(
        w=w,
        h=h,
        c=query_map.c,
        cells_xy=np.array(xy, dtype=np.int64),
        roi_ids=np.array(ids, dtype=np.int64),
        vectors=np.array(vecs, dtype=np.float32),
        roi_count=len(query.rois),
    )
