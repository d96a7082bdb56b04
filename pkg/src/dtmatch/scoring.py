"""Patchwise cosine scoring kernels.

All kernels share one convention: feature values are float32 at rest and the
arithmetic runs in float64 with a fixed reduction order (matmul per sample,
max over sample cells, left-to-right segment sums over template cells), so a
batch of any size reproduces single-sample results bit for bit and parallel
drivers are worker-count independent.

The sparse fast path never materializes the full 4-D similarity tensor; that
tensor exists only as the ``similarity_tensor`` debug/oracle surface.
"""

from __future__ import annotations

from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass
from typing import Iterable, Iterator, Sequence

import numpy as np

from .errors import ContractError, InvalidInputError, ShapeError
from .featmap import FeatureMap, Template

# Records per blocked kernel invocation; bounds temp memory, not results.
BLOCK_RECORDS = 1024

SCORE_SLACK = 1e-6  # cosine bound tolerance under float rounding

# A final score: mean over regions of each region's mean best-match cosine,
# so it lives in [-1 - SCORE_SLACK, 1 + SCORE_SLACK].
ScoreValue = float


@dataclass(frozen=True)
class SimilarityTensor:
    """Dense 4-D cosine tensor, indexed [x, y, i, j].

    (x, y) walks sample cells, (i, j) query cells; entries for query cells
    outside every ROI are zero. Debug and oracle use only.
    """

    values: np.ndarray  # (w, h, w, h) float64

    def __post_init__(self) -> None:
        v = np.asarray(self.values, dtype=np.float64)
        if v.ndim != 4 or v.shape[0] != v.shape[2] or v.shape[1] != v.shape[3]:
            raise InvalidInputError(f"similarity tensor must be (w, h, w, h), got {v.shape}")
        if np.abs(v).max(initial=0.0) > 1.0 + SCORE_SLACK:
            raise InvalidInputError("similarity entries must lie in [-1, 1]")
        object.__setattr__(self, "values", v)

    def __getitem__(self, idx):
        return self.values[idx]


@dataclass(frozen=True)
class ScoreMap:
    """w*h map of best-match scores; ``side`` marks the convention.

    side="query": per query cell, best match over the sample, divided by the
    owning region's area; zero outside the ROIs.
    side="sample": per sample cell, best match over the template cells, no
    area division (the heat map overlaid on retrieved images).
    """

    values: np.ndarray  # (h, w) float64
    side: str = "query"

    def __post_init__(self) -> None:
        v = np.asarray(self.values, dtype=np.float64)
        if v.ndim != 2:
            raise InvalidInputError(f"score map must be 2-D, got shape {v.shape}")
        if not np.isfinite(v).all():
            raise InvalidInputError("score map contains non-finite values")
        if self.side not in ("query", "sample"):
            raise InvalidInputError(f"unknown score map side {self.side!r}")
        object.__setattr__(self, "values", v)


def _check_template_dims(dims: tuple[int, int, int], template: Template, what: str = "sample") -> None:
    if dims != template.dims:
        raise ShapeError(
            f"{what} dims {dims} do not match template dims {template.dims}"
        )


def _check_sample(sample: FeatureMap, template: Template) -> None:
    if not isinstance(sample, FeatureMap):
        raise InvalidInputError(f"expected FeatureMap, got {type(sample).__name__}")
    _check_template_dims(sample.dims, template)
    if not sample.normalized:
        raise ContractError("sample feature map must be channel-normalized")


def _template_matrix(template: Template) -> np.ndarray:
    """(c, n_cells) float64 matrix of template cell vectors."""
    return template.vectors.astype(np.float64).T


def _best_per_query_cell(block: np.ndarray, tmat: np.ndarray) -> np.ndarray:
    """(B, n_cells) best dot product over sample cells, per record.

    ``block`` is (B, h, w, c) float32/float64; matmul runs one GEMM per
    record slice, which keeps per-record bits independent of block size.
    """
    b, h, w, _ = block.shape
    flat = block.reshape(b, h * w, -1).astype(np.float64)
    dots = np.matmul(flat, tmat)  # (B, w*h sample cells, n template cells)
    return dots.max(axis=1)


def _scores_from_best(best: np.ndarray, template: Template) -> np.ndarray:
    """Mean over regions of each region's mean best-match cosine."""
    contrib = best / template.areas  # each region's sum then equals its mean
    per_roi = np.add.reduceat(contrib, template.segment_starts(), axis=1)
    return per_roi.sum(axis=1) / template.roi_count


def score(sample: FeatureMap, template: Template) -> float:
    """Bounded final similarity in [-1, 1]: the mean over regions of the
    region's mean best-match cosine. A fixed positive rescaling of the raw
    score-map mean for any given template, hence ranking-identical to it."""
    _check_sample(sample, template)
    best = _best_per_query_cell(sample.values[None, ...], _template_matrix(template))
    return float(_scores_from_best(best, template)[0])


def _iter_sample_blocks(
    samples, dims: tuple[int, int, int], block_records: int
) -> Iterator[np.ndarray]:
    """Yield (B, h, w, c) value blocks from a sequence of FeatureMaps or a
    stacked (N, h, w, c) array, checking dims and the normalized contract."""
    w, h, c = dims
    if isinstance(samples, np.ndarray):
        if samples.ndim != 4 or samples.shape[1:] != (h, w, c):
            raise ShapeError(
                f"sample array must be (N, {h}, {w}, {c}), got {samples.shape}"
            )
        for lo in range(0, len(samples), block_records):
            yield samples[lo : lo + block_records]
        return
    buf: list[np.ndarray] = []
    for idx, fm in enumerate(samples):
        if not isinstance(fm, FeatureMap):
            raise InvalidInputError(f"sample {idx} is not a FeatureMap")
        if fm.dims != dims:
            raise ShapeError(f"sample {idx} dims {fm.dims} do not match template dims {dims}")
        if not fm.normalized:
            raise ContractError(f"sample {idx} is not channel-normalized")
        buf.append(fm.values)
        if len(buf) == block_records:
            yield np.stack(buf)
            buf = []
    if buf:
        yield np.stack(buf)


def score_batch(
    samples: Sequence[FeatureMap] | np.ndarray | Iterable[np.ndarray],
    template: Template,
    block_records: int = BLOCK_RECORDS,
    workers: int = 1,
) -> np.ndarray:
    """Scores for many samples; elementwise equal to ``score`` per sample.

    ``samples`` may be a sequence of FeatureMaps, a stacked (N, h, w, c)
    array of normalized values, or an iterable of such blocks (the streaming
    path used by store search). With ``workers`` > 1 the blocks fan out over
    a thread pool; block boundaries and worker count never change the bits.
    """
    tmat = _template_matrix(template)
    if hasattr(samples, "read_block"):  # a store; stream its payload
        samples = _store_blocks(samples, template, block_records)
    elif isinstance(samples, np.ndarray) or (
        isinstance(samples, Sequence) and (not samples or isinstance(samples[0], FeatureMap))
    ):
        samples = _iter_sample_blocks(samples, template.dims, block_records)

    def run(block: np.ndarray) -> np.ndarray:
        return _scores_from_best(_best_per_query_cell(block, tmat), template)

    if workers <= 1:
        parts = [run(b) for b in samples]
    else:
        with ThreadPoolExecutor(max_workers=workers) as pool:
            parts = list(pool.map(run, samples))
    if not parts:
        return np.empty(0, dtype=np.float64)
    return np.concatenate(parts)


def block_scores(block: np.ndarray, template: Template) -> np.ndarray:
    """Scores for one raw (B, h, w, c) block of normalized values.

    The single-read building block for callers that score several templates
    against the same payload pass; bitwise equal to ``score`` per record.
    """
    return _scores_from_best(_best_per_query_cell(block, _template_matrix(template)), template)


def _store_blocks(store, template: Template, block_records: int) -> Iterator[np.ndarray]:
    _check_template_dims((store.w, store.h, store.c), template, "store")
    if not store.normalized:
        raise ContractError("store records must be channel-normalized for scoring")
    n = len(store)
    for lo in range(0, n, block_records):
        yield store.read_block(lo, min(lo + block_records, n))


def score_map(sample: FeatureMap, template: Template) -> ScoreMap:
    """Query-side map: best match per ROI cell divided by its region's area,
    zero at cells outside every region."""
    _check_sample(sample, template)
    best = _best_per_query_cell(sample.values[None, ...], _template_matrix(template))[0]
    out = np.zeros((template.h, template.w), dtype=np.float64)
    xs, ys = template.cells_xy[:, 0], template.cells_xy[:, 1]
    out[ys, xs] = best / template.areas
    return ScoreMap(out, side="query")


def sample_match_map(sample: FeatureMap, template: Template) -> ScoreMap:
    """Sample-side map: per sample cell, the best cosine against any template
    cell (no area division); the overlay rendered on retrieved images."""
    _check_sample(sample, template)
    flat = sample.values.reshape(-1, sample.c).astype(np.float64)
    dots = flat @ _template_matrix(template)  # (w*h, n_cells)
    return ScoreMap(dots.max(axis=1).reshape(sample.h, sample.w), side="sample")


def similarity_tensor(sample: FeatureMap, template: Template) -> SimilarityTensor:
    """Materialized 4-D tensor S[x, y, i, j]; zero rows for query cells
    outside every region. Debug/oracle path only."""
    _check_sample(sample, template)
    w, h = template.w, template.h
    out = np.zeros((w, h, w, h), dtype=np.float64)
    flat = sample.values.reshape(h * w, sample.c).astype(np.float64)
    for k in range(template.n_cells):
        x, y = template.cells_xy[k]
        dots = flat @ template.vectors[k].astype(np.float64)  # per sample cell
        out[:, :, x, y] = dots.reshape(h, w).T
    return SimilarityTensor(out)
