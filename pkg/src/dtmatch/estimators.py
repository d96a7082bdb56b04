"""Estimator-style wrappers over the functional retrieval kernels.

Both estimators follow the fit/transform/predict protocol: fit indexes a
gallery of feature maps, transform returns a (n_queries, n_records) score
matrix, and predict returns the top-k record indices per query. They are
thin adapters; all scoring semantics live in the scoring/search/baseline
modules.
"""

from __future__ import annotations

import numpy as np
from sklearn.base import BaseEstimator
from sklearn.exceptions import NotFittedError

from .baseline import _pooled
from .errors import InvalidInputError, ShapeError
from .featmap import FeatureMap, QuerySpec, Template, project_roi
from .scoring import score_batch
from .search import SearchConfig, search_multi
from .store import InMemoryStore


def _as_gallery(X, normalize: bool):
    """Accept a store-like object or a stacked (N, h, w, c) array."""
    if hasattr(X, "read_block") and hasattr(X, "normalized"):
        if normalize and not X.normalized:
            raise InvalidInputError(
                "store is not normalized; normalize at build time or pass normalize=False"
            )
        return X
    values = np.asarray(X, dtype=np.float32)
    if values.ndim != 4:
        raise ShapeError(f"gallery must be (N, h, w, c), got shape {values.shape}")
    if not np.isfinite(values).all():
        raise InvalidInputError("gallery contains non-finite values")
    if normalize:
        flat = values.astype(np.float64)
        norms = np.sqrt(np.einsum("nhwc,nhwc->nhw", flat, flat))
        values = (flat / np.where(norms == 0.0, 1.0, norms)[..., None]).astype(np.float32)
    return InMemoryStore(values, normalized=normalize)


def _as_templates(X, dims) -> list[Template]:
    """Queries may be Templates, FeatureMaps paired with QuerySpecs, or both
    kinds mixed; everything is projected to templates against ``dims``."""
    templates = []
    for qi, item in enumerate(X):
        if isinstance(item, Template):
            template = item
        elif isinstance(item, tuple) and len(item) == 2 and isinstance(item[0], FeatureMap):
            fm, spec = item
            if not isinstance(spec, QuerySpec):
                raise InvalidInputError(f"query {qi}: second element must be a QuerySpec")
            template = project_roi(fm, spec)
        else:
            raise InvalidInputError(
                f"query {qi} must be a Template or a (FeatureMap, QuerySpec) pair"
            )
        if template.dims != dims:
            raise ShapeError(
                f"query {qi} dims {template.dims} do not match gallery dims {dims}"
            )
        templates.append(template)
    return templates


class TemplateMatcher(BaseEstimator):
    """Top-k retrieval by region-template matching, estimator-style.

    Parameters
    ----------
    k : results per query from predict.
    shard_size, workers : search parallelism knobs; results are identical
        for any values.
    normalize : channel-normalize the gallery in fit. With False the caller
        guarantees unit channel norms already.
    """

    def __init__(self, k: int = 10, shard_size: int = 4096, workers: int = 1,
                 normalize: bool = True):
        self.k = k
        self.shard_size = shard_size
        self.workers = workers
        self.normalize = normalize

    def fit(self, X, y=None):
        self.store_ = _as_gallery(X, self.normalize)
        self.n_records_ = len(self.store_)
        return self

    def _check_fitted(self):
        if not hasattr(self, "store_"):
            raise NotFittedError(
                "this TemplateMatcher is not fitted yet; call fit first"
            )

    def transform(self, X) -> np.ndarray:
        """(n_queries, n_records) score matrix."""
        self._check_fitted()
        templates = _as_templates(X, self.store_.dims)
        return np.stack([score_batch(self.store_, t) for t in templates])

    def predict(self, X) -> np.ndarray:
        """(n_queries, min(k, n_records)) record indices, best first."""
        self._check_fitted()
        templates = _as_templates(X, self.store_.dims)
        if not templates:
            return np.empty((0, min(self.k, self.n_records_)), dtype=np.int64)
        config = SearchConfig(k=self.k, shard_size=self.shard_size, workers=self.workers)
        per_query = search_multi(self.store_, templates, config)
        return np.array([[r.index for r in results] for results in per_query],
                        dtype=np.int64)


class GapRetriever(BaseEstimator):
    """Whole-image retrieval by pooled-descriptor cosine, estimator-style."""

    def __init__(self, k: int = 10):
        self.k = k

    def fit(self, X, y=None):
        store = _as_gallery(X, normalize=False)
        blocks = [_pooled(store.read_block(lo, min(lo + 1024, len(store))))
                  for lo in range(0, len(store), 1024)]
        self.descriptors_ = (
            np.concatenate(blocks) if blocks else np.empty((0, store.c))
        )
        self.dims_ = store.dims
        self.n_records_ = len(store)
        return self

    def _check_fitted(self):
        if not hasattr(self, "descriptors_"):
            raise NotFittedError("this GapRetriever is not fitted yet; call fit first")

    def transform(self, X) -> np.ndarray:
        """(n_queries, n_records) cosine matrix between pooled descriptors."""
        self._check_fitted()
        queries = []
        for qi, fm in enumerate(X):
            if not isinstance(fm, FeatureMap):
                raise InvalidInputError(f"query {qi} must be a FeatureMap")
            if fm.dims != self.dims_:
                raise ShapeError(
                    f"query {qi} dims {fm.dims} do not match gallery dims {self.dims_}"
                )
            queries.append(fm.values)
        if not queries:
            return np.empty((0, self.n_records_))
        return _pooled(np.stack(queries)) @ self.descriptors_.T

    def predict(self, X) -> np.ndarray:
        """(n_queries, min(k, n_records)) record indices, best first, ties
        toward the lower index."""
        scores = self.transform(X)
        k = min(self.k, self.n_records_)
        out = np.empty((len(scores), k), dtype=np.int64)
        indices = np.arange(self.n_records_, dtype=np.int64)
        for qi, row in enumerate(scores):
            out[qi] = indices[np.lexsort((indices, -row))[:k]]
        return out
