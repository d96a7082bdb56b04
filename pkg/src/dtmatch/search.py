"""Exhaustive top-k retrieval over a store.

The store is split into contiguous shards; each shard keeps its k best
candidates and a single deterministic reduction merges them. Per-record
scores do not depend on shard boundaries or worker count (see scoring), and
ties always break toward the lower record index, so the result list is
byte-identical across any parallel layout.
"""

from __future__ import annotations

from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass
from typing import Sequence

import numpy as np

from .errors import ConfigError, ShapeError
from .featmap import Template
from .scoring import BLOCK_RECORDS, block_scores


@dataclass(frozen=True)
class RetrievalResult:
    """One ranked hit: ranks are contiguous from 1, scores non-increasing."""

    rank: int
    index: int
    image_id: str
    score: float


@dataclass(frozen=True)
class SearchConfig:
    k: int = 10
    shard_size: int = 4096  # records per work unit
    workers: int = 1

    def __post_init__(self) -> None:
        if self.k < 1:
            raise ConfigError(f"k must be >= 1, got {self.k}")
        if self.shard_size < 1:
            raise ConfigError(f"shard_size must be >= 1, got {self.shard_size}")
        if self.workers < 1:
            raise ConfigError(f"workers must be >= 1, got {self.workers}")


def _select_topk(scores: np.ndarray, indices: np.ndarray, k: int):
    """k best by (score desc, index asc); exact under ties, unlike a
    partition-based select."""
    order = np.lexsort((indices, -scores))[:k]
    return scores[order], indices[order]


def _shard_topk(store, templates: Sequence[Template], lo: int, hi: int, k: int):
    """Per-template k best within [lo, hi); each payload block is read once
    and scored against every template."""
    parts: list[list[np.ndarray]] = [[] for _ in templates]
    for block_lo in range(lo, hi, BLOCK_RECORDS):
        block = store.read_block(block_lo, min(block_lo + BLOCK_RECORDS, hi))
        for ti, template in enumerate(templates):
            parts[ti].append(block_scores(block, template))
    indices = np.arange(lo, hi, dtype=np.int64)
    return [_select_topk(np.concatenate(p), indices, k) for p in parts]


def _run(store, templates: Sequence[Template], config: SearchConfig):
    dims = (store.w, store.h, store.c)
    for ti, template in enumerate(templates):
        if template.dims != dims:
            raise ShapeError(
                f"template {ti} dims {template.dims} do not match store dims {dims}"
            )
    n = len(store)
    if n == 0:
        return [[] for _ in templates]
    shards = [(lo, min(lo + config.shard_size, n)) for lo in range(0, n, config.shard_size)]

    def run_shard(bounds):
        return _shard_topk(store, templates, bounds[0], bounds[1], config.k)

    if config.workers <= 1 or len(shards) == 1:
        shard_results = [run_shard(b) for b in shards]
    else:
        with ThreadPoolExecutor(max_workers=config.workers) as pool:
            shard_results = list(pool.map(run_shard, shards))

    out = []
    for ti in range(len(templates)):
        scores = np.concatenate([sr[ti][0] for sr in shard_results])
        indices = np.concatenate([sr[ti][1] for sr in shard_results])
        top_scores, top_indices = _select_topk(scores, indices, config.k)
        out.append(
            [
                RetrievalResult(rank=r + 1, index=int(idx), image_id=store.image_id(int(idx)),
                                score=float(s))
                for r, (idx, s) in enumerate(zip(top_indices, top_scores))
            ]
        )
    return out


def search(store, template: Template, config: SearchConfig) -> list[RetrievalResult]:
    """Score every record against the template and return the k best.

    Equivalent to a full sort of all N scores by (score desc, index asc)
    truncated to min(k, N); an empty store yields an empty list.
    """
    return _run(store, [template], config)[0]


def search_multi(store, templates: Sequence[Template],
                 config: SearchConfig) -> list[list[RetrievalResult]]:
    """Per-template results equal to independent ``search`` calls, with each
    record read shared across all templates."""
    if not templates:
        return []
    return _run(store, templates, config)
