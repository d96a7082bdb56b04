"""Comparison rankers: pooled whole-image descriptors and detector scores.

The pooled baseline collapses each feature map to one c-vector by averaging
over all cells, L2-normalizes it, and ranks by cosine against the query's
descriptor. The detection-inference ranker orders images by the maximum
detector confidence for a target class, taken from a detections file rather
than a live model.
"""

from __future__ import annotations

import json
from dataclasses import dataclass
from pathlib import Path
from typing import Iterable, Sequence

import numpy as np

from .errors import DataError, InvalidInputError, ShapeError
from .featmap import FeatureMap
from .scoring import BLOCK_RECORDS
from .search import RetrievalResult, _select_topk


@dataclass(frozen=True)
class GapDescriptor:
    """Whole-image descriptor: per-channel mean over cells."""

    vector: np.ndarray  # (c,) float64
    normalized: bool = True

    def __post_init__(self) -> None:
        v = np.asarray(self.vector, dtype=np.float64)
        if v.ndim != 1:
            raise InvalidInputError(f"descriptor must be a vector, got shape {v.shape}")
        if not np.isfinite(v).all():
            raise InvalidInputError("descriptor contains non-finite values")
        if self.normalized:
            norm = float(np.sqrt(v @ v))
            if norm != 0.0 and abs(norm - 1.0) > 1e-6:
                raise InvalidInputError(f"normalized descriptor has norm {norm!r}")
        object.__setattr__(self, "vector", v)


@dataclass(frozen=True)
class DetectionRecord:
    """All detections reported for one image."""

    image_id: str
    detections: tuple[tuple[str, float], ...]  # (class name, confidence)

    def __post_init__(self) -> None:
        for cls, conf in self.detections:
            if not 0.0 <= conf <= 1.0:
                raise InvalidInputError(
                    f"confidence {conf!r} for class {cls!r} on {self.image_id!r} "
                    "is outside [0, 1]"
                )


def _pooled(values: np.ndarray) -> np.ndarray:
    """(B, h, w, c) -> (B, c) float64 row-normalized means; zero rows stay zero."""
    means = np.asarray(values, dtype=np.float64).mean(axis=(1, 2))
    norms = np.sqrt(np.einsum("bc,bc->b", means, means))
    safe = np.where(norms == 0.0, 1.0, norms)
    return means / safe[:, None]


def gap_descriptor(fm: FeatureMap) -> GapDescriptor:
    """Mean over all w*h cells per channel, then L2-normalized.

    The input need not be channel-normalized; pooling happens first and only
    the pooled vector is normalized. An all-zero map stays all-zero.
    """
    if not isinstance(fm, FeatureMap):
        raise InvalidInputError("gap_descriptor expects a FeatureMap")
    return GapDescriptor(_pooled(fm.values[None])[0])


def gap_search(store, query_map: FeatureMap, k: int) -> list[RetrievalResult]:
    """Rank records by cosine between pooled descriptors.

    Same output shape and tie-break (score desc, index asc) as search();
    an empty store yields an empty list.
    """
    if k < 1:
        raise InvalidInputError(f"k must be >= 1, got {k}")
    dims = (store.w, store.h, store.c)
    if query_map.dims != dims:
        raise ShapeError(f"query dims {query_map.dims} do not match store dims {dims}")
    n = len(store)
    if n == 0:
        return []
    q = gap_descriptor(query_map).vector
    scores = np.empty(n, dtype=np.float64)
    for lo in range(0, n, BLOCK_RECORDS):
        hi = min(lo + BLOCK_RECORDS, n)
        scores[lo:hi] = _pooled(store.read_block(lo, hi)) @ q
    top_scores, top_indices = _select_topk(scores, np.arange(n, dtype=np.int64), k)
    return [
        RetrievalResult(rank=r + 1, index=int(i), image_id=store.image_id(int(i)),
                        score=float(s))
        for r, (i, s) in enumerate(zip(top_indices, top_scores))
    ]


def di_rank(detections: Sequence[DetectionRecord], target_class: str,
            k: int) -> list[RetrievalResult]:
    """Rank images by max confidence among target-class detections.

    An image with no target-class detection scores 0. Ties break by
    lexicographic image id; the result index is the record's position in
    the input sequence.
    """
    if not target_class:
        raise InvalidInputError("target class must be a non-empty string")
    if k < 1:
        raise InvalidInputError(f"k must be >= 1, got {k}")
    scored = []
    for pos, rec in enumerate(detections):
        confs = [conf for cls, conf in rec.detections if cls == target_class]
        scored.append((max(confs) if confs else 0.0, rec.image_id, pos))
    scored.sort(key=lambda t: (-t[0], t[1]))
    return [
        RetrievalResult(rank=r + 1, index=pos, image_id=image_id, score=score)
        for r, (score, image_id, pos) in enumerate(scored[:k])
    ]


def read_detections(path: str | Path) -> list[DetectionRecord]:
    """Parse a line-delimited detections file into per-image records.

    Each line is a JSON object with fields image_id, class, confidence; one
    detection per line. Lines group by image id in first-appearance order,
    so an image's record carries every detection reported for it.
    """
    per_image: dict[str, list[tuple[str, float]]] = {}
    with open(path, "r", encoding="utf-8") as fh:
        for lineno, line in enumerate(fh):
            line = line.strip()
            if not line:
                continue
            try:
                doc = json.loads(line)
                image_id = str(doc["image_id"])
                cls = str(doc["class"])
                conf = float(doc["confidence"])
            except (json.JSONDecodeError, KeyError, TypeError, ValueError) as exc:
                raise DataError(f"detections line {lineno + 1} is invalid: {exc}") from exc
            per_image.setdefault(image_id, []).append((cls, conf))
    return [DetectionRecord(image_id, tuple(dets)) for image_id, dets in per_image.items()]
