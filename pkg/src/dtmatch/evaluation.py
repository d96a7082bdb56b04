"""Synthetic retrieval benchmarks: planted-signature data, hit rates, bins.

Synthetic records are Gaussian noise grids; a positive record additionally
carries a class signature (a fixed random unit direction plus small
per-instance jitter) added into one contiguous rectangle of cells. Records
are channel-normalized before writing, so the planted rectangle is only
recoverable through direction, not magnitude. All randomness derives from
(config seed, stream, record index) so stores are bit-reproducible and
independent of write blocking.

Hit-rate@N is the fraction of the top-N retrievals whose manifest labels
contain the target class; experiment runs report it per method overall and
per ROI-area bin.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterator, Mapping, Sequence

import numpy as np

from .baseline import gap_search
from .errors import ConfigError, DataError, InvalidInputError
from .featmap import FeatureMap, QuerySpec, RoiBox, Template, project_roi
from .search import RetrievalResult, SearchConfig, search
from .store import EmbeddingStore, ManifestEntry, open_store, write_store

# Planted-signature strength in units of the noise scale. Calibrated by the
# Monte-Carlo check in measure_plant_separability: at c=64 the measured
# probability that a planted cell out-coses every noise cell is 0.9995 here
# (0.298 at amplitude 3), against a 0.99 floor.
DEFAULT_AMPLITUDE = 10.0

# Per-instance direction jitter, relative to the unit class direction.
SIGNATURE_JITTER = 0.1

DEFAULT_BIN_EDGES = (0.0, 1.0, 2.0, 5.0, 10.0, 100.0)

METHODS = ("dtm", "gap", "random")

# Feature-grid cell size in pixels assumed when synthesizing query boxes.
CELL_PIXELS = 32


@dataclass(frozen=True)
class ClassSpec:
    """One plantable class: a direction seed plus block-size and strength."""

    name: str
    cells_min: int = 1
    cells_max: int = 2
    direction_seed: int = 7
    amplitude: float = DEFAULT_AMPLITUDE


@dataclass(frozen=True)
class SynthConfig:
    w: int = 16
    h: int = 16
    c: int = 64
    n_records: int = 20000
    classes: tuple[ClassSpec, ...] = (ClassSpec(name="target"),)
    positive_fraction: float = 0.10
    noise_sigma: float = 1.0
    seed: int = 0

    def __post_init__(self) -> None:
        if min(self.w, self.h, self.c) < 1:
            raise ConfigError(f"grid dims must be >= 1, got {(self.w, self.h, self.c)}")
        if self.n_records < 1:
            raise ConfigError(f"n_records must be >= 1, got {self.n_records}")
        if not 0.0 < self.positive_fraction < 1.0:
            raise ConfigError(
                f"positive_fraction must lie in (0, 1), got {self.positive_fraction}"
            )
        if self.noise_sigma <= 0.0:
            raise ConfigError(f"noise_sigma must be > 0, got {self.noise_sigma}")
        names = [spec.name for spec in self.classes]
        if len(set(names)) != len(names) or any(not n for n in names):
            raise ConfigError("class names must be unique and non-empty")
        for spec in self.classes:
            if not 1 <= spec.cells_min <= spec.cells_max:
                raise ConfigError(
                    f"class {spec.name!r}: cell count range "
                    f"[{spec.cells_min}, {spec.cells_max}] is invalid"
                )
            if spec.cells_max > self.w * self.h:
                raise ConfigError(
                    f"class {spec.name!r}: cells_max {spec.cells_max} exceeds "
                    f"grid size {self.w * self.h}"
                )
            for k in range(spec.cells_min, spec.cells_max + 1):
                if not _rect_shapes(k, self.w, self.h):
                    raise ConfigError(
                        f"class {spec.name!r}: no {k}-cell rectangle fits a "
                        f"{self.w}x{self.h} grid"
                    )


@dataclass(frozen=True)
class PlantedBlock:
    """Cell-grid rectangle a class signature was added into."""

    class_name: str
    x0: int
    y0: int
    w_cells: int
    h_cells: int


@dataclass(frozen=True)
class SynthResult:
    store_path: str
    record_count: int
    byte_count: int
    w: int
    h: int
    c: int
    positives: dict[str, tuple[int, ...]]  # class name -> sorted record indices
    plants: dict[int, tuple[PlantedBlock, ...]]

    def open(self) -> EmbeddingStore:
        return open_store(self.store_path)


@dataclass(frozen=True)
class EvalQuery:
    """A query spec plus where its feature map lives."""

    spec: QuerySpec
    record_index: int | None = None
    values: FeatureMap | None = None

    def __post_init__(self) -> None:
        if (self.record_index is None) == (self.values is None):
            raise InvalidInputError(
                "exactly one of record_index and values must be provided"
            )

    def feature_map(self, store) -> FeatureMap:
        if self.record_index is not None:
            return store.get_record(self.record_index)
        return self.values


def _rect_shapes(k: int, w: int, h: int) -> list[tuple[int, int]]:
    """All (w_cells, h_cells) rectangles of exactly k cells fitting the grid."""
    return [(d, k // d) for d in range(1, k + 1) if k % d == 0 and d <= w and k // d <= h]


def _class_direction(spec: ClassSpec, c: int) -> np.ndarray:
    rng = np.random.default_rng(spec.direction_seed)
    v = rng.standard_normal(c)
    return v / np.linalg.norm(v)


def _memberships(config: SynthConfig) -> dict[int, list[int]]:
    """Record index -> class indices planted there; exact counts per class."""
    rng = np.random.default_rng((config.seed, 1))
    out: dict[int, list[int]] = {}
    for ci, _spec in enumerate(config.classes):
        n_pos = int(round(config.positive_fraction * config.n_records))
        for idx in rng.choice(config.n_records, size=n_pos, replace=False):
            out.setdefault(int(idx), []).append(ci)
    return out


def _record_values(config: SynthConfig, index: int, class_indices: Sequence[int],
                   directions: Sequence[np.ndarray]) -> tuple[np.ndarray, list[PlantedBlock]]:
    rng = np.random.default_rng((config.seed, 2, index))
    values = rng.standard_normal((config.h, config.w, config.c)) * config.noise_sigma
    blocks = []
    for ci in class_indices:
        spec = config.classes[ci]
        k = int(rng.integers(spec.cells_min, spec.cells_max + 1))
        shapes = _rect_shapes(k, config.w, config.h)
        bw, bh = shapes[int(rng.integers(len(shapes)))]
        x0 = int(rng.integers(0, config.w - bw + 1))
        y0 = int(rng.integers(0, config.h - bh + 1))
        v = directions[ci] + SIGNATURE_JITTER * rng.standard_normal(config.c)
        v = v / np.linalg.norm(v)
        values[y0 : y0 + bh, x0 : x0 + bw, :] += spec.amplitude * config.noise_sigma * v
        blocks.append(PlantedBlock(spec.name, x0, y0, bw, bh))
    norms = np.sqrt(np.einsum("hwc,hwc->hw", values, values))
    values = values / np.where(norms == 0.0, 1.0, norms)[:, :, None]
    return values.astype(np.float32), blocks


def generate_synthetic(config: SynthConfig, path: str | Path) -> SynthResult:
    """Write a labeled synthetic store; bit-deterministic under config.seed."""
    directions = [_class_direction(spec, config.c) for spec in config.classes]
    members = _memberships(config)
    entries = []
    for i in range(config.n_records):
        labels = tuple(sorted(config.classes[ci].name for ci in members.get(i, ())))
        entries.append(ManifestEntry(index=i, image_id=f"synth-{i:06d}",
                                     labels=labels or None))
    plants: dict[int, tuple[PlantedBlock, ...]] = {}

    def records() -> Iterator[np.ndarray]:
        for i in range(config.n_records):
            values, blocks = _record_values(config, i, members.get(i, ()), directions)
            if blocks:
                plants[i] = tuple(blocks)
            yield values

    summary = write_store(records(), entries, path, normalized=True)
    positives = {
        spec.name: tuple(sorted(i for i, cis in members.items() if ci in cis))
        for ci, spec in enumerate(config.classes)
    }
    return SynthResult(
        store_path=summary.path, record_count=summary.record_count,
        byte_count=summary.byte_count, w=config.w, h=config.h, c=config.c,
        positives=positives, plants=plants,
    )


def queries_from_plants(result: SynthResult, class_name: str, count: int,
                        seed: int = 0, cell_pixels: int = CELL_PIXELS) -> list[EvalQuery]:
    """Build queries for planted positives: one ROI box per planted block,
    pixel coordinates on a cell_pixels grid (boxes align to cell edges, so
    projection recovers exactly the planted cells)."""
    if class_name not in result.positives:
        raise DataError(f"unknown class {class_name!r}")
    pool = result.positives[class_name]
    if not pool:
        raise DataError(f"class {class_name!r} has no positive records")
    rng = np.random.default_rng((seed, 3))
    count = min(count, len(pool))
    picked = sorted(int(pool[i]) for i in rng.choice(len(pool), size=count, replace=False))
    queries = []
    for idx in picked:
        blocks = [b for b in result.plants[idx] if b.class_name == class_name]
        rois = tuple(
            RoiBox(
                x0=float(b.x0 * cell_pixels), y0=float(b.y0 * cell_pixels),
                x1=float((b.x0 + b.w_cells) * cell_pixels),
                y1=float((b.y0 + b.h_cells) * cell_pixels),
                roi_id=ri,
            )
            for ri, b in enumerate(blocks)
        )
        spec = QuerySpec(
            image_id=f"synth-{idx:06d}",
            image_width=result.w * cell_pixels,
            image_height=result.h * cell_pixels,
            rois=rois,
        )
        queries.append(EvalQuery(spec=spec, record_index=idx))
    return queries


def measure_plant_separability(config: SynthConfig, class_index: int = 0,
                               draws: int = 10000, seed: int = 99) -> float:
    """Monte-Carlo estimate of P(planted cell's cosine to the class direction
    beats every noise cell's cosine) within one record. The calibration gauge
    behind DEFAULT_AMPLITUDE."""
    spec = config.classes[class_index]
    direction = _class_direction(spec, config.c)
    rng = np.random.default_rng((seed, 4))
    n_noise = config.w * config.h - 1
    wins = 0
    for _ in range(draws):
        noise = rng.standard_normal((n_noise, config.c)) * config.noise_sigma
        noise /= np.linalg.norm(noise, axis=1, keepdims=True)
        v = direction + SIGNATURE_JITTER * rng.standard_normal(config.c)
        v /= np.linalg.norm(v)
        planted = rng.standard_normal(config.c) * config.noise_sigma
        planted = planted + spec.amplitude * config.noise_sigma * v
        planted /= np.linalg.norm(planted)
        if planted @ direction > (noise @ direction).max():
            wins += 1
    return wins / draws


def hit_rate_at_n(results: Sequence[RetrievalResult],
                  manifest: Sequence[ManifestEntry] | Mapping[str, Sequence[str]],
                  target_class: str, n: int) -> float:
    """Fraction of the top-n results whose labels contain the target class.

    With fewer than n results the divisor is the result count; an empty
    result list rates 0. Results must reference known image ids.
    """
    if n < 1:
        raise InvalidInputError(f"n must be >= 1, got {n}")
    if isinstance(manifest, Mapping):
        lookup = {k: tuple(v) for k, v in manifest.items()}
    else:
        lookup = {e.image_id: (e.labels or ()) for e in manifest}
    top = results[:n]
    if not top:
        return 0.0
    hits = 0
    for r in top:
        if r.image_id not in lookup:
            raise DataError(f"result image id {r.image_id!r} is not in the manifest")
        if target_class in lookup[r.image_id]:
            hits += 1
    return hits / len(top)


def bin_queries_by_roi_area(queries: Sequence[QuerySpec],
                            bin_edges: Sequence[float] = DEFAULT_BIN_EDGES) -> list[int]:
    """Assign each query a bin index by total ROI area as a percent of image
    area; bins are half-open [lo, hi) with the final bin closed above."""
    edges = tuple(float(e) for e in bin_edges)
    if len(edges) < 2 or edges[0] != 0.0 or any(b <= a for a, b in zip(edges, edges[1:])):
        raise ConfigError(f"bin edges must strictly increase from 0, got {edges}")
    arr = np.asarray(edges)
    out = []
    for q in queries:
        ratio = 100.0 * q.total_roi_area / (q.image_width * q.image_height)
        bin_index = int(np.searchsorted(arr, ratio, side="right")) - 1
        out.append(min(bin_index, len(edges) - 2))
    return out


@dataclass(frozen=True)
class EvalReport:
    n: int
    target_class: str
    bin_edges: tuple[float, ...]
    bin_counts: tuple[int, ...]
    method_rates: dict[str, float]
    method_bin_rates: dict[str, tuple[float | None, ...]]
    metadata: dict = field(default_factory=dict)

    @property
    def random_rate(self) -> float | None:
        return self.method_rates.get("random")

    def __post_init__(self) -> None:
        for method, rate in self.method_rates.items():
            if not 0.0 <= rate <= 1.0:
                raise InvalidInputError(f"{method} hit rate {rate!r} outside [0, 1]")

    def to_json_lines(self) -> str:
        lines = [json.dumps({
            "kind": "meta", "n": self.n, "target_class": self.target_class,
            "bin_edges": list(self.bin_edges), "bin_counts": list(self.bin_counts),
            **self.metadata,
        })]
        for method in self.method_rates:
            lines.append(json.dumps({
                "kind": "overall", "method": method,
                "hit_rate": self.method_rates[method],
            }))
        for method, rates in self.method_bin_rates.items():
            for b, rate in enumerate(rates):
                lines.append(json.dumps({
                    "kind": "bin", "method": method, "bin": b,
                    "lo_pct": self.bin_edges[b], "hi_pct": self.bin_edges[b + 1],
                    "count": self.bin_counts[b], "hit_rate": rate,
                }))
        return "\n".join(lines) + "\n"

    def to_table(self) -> str:
        header = f"hit-rate@{self.n} (target class: {self.target_class})"
        rows = [header, "=" * len(header), ""]
        rows.append(f"{'method':<10} {'overall':>8}  " + "  ".join(
            f"[{lo:g},{hi:g})%".rjust(10)
            for lo, hi in zip(self.bin_edges, self.bin_edges[1:])
        ))
        counts = "  ".join(f"n={c}".rjust(10) for c in self.bin_counts)
        rows.append(f"{'queries':<10} {sum(self.bin_counts):>8}  {counts}")
        for method, rate in self.method_rates.items():
            cells = "  ".join(
                ("-" if r is None else f"{r:.4f}").rjust(10)
                for r in self.method_bin_rates[method]
            )
            rows.append(f"{method:<10} {rate:>8.4f}  {cells}")
        return "\n".join(rows) + "\n"


def _random_results(store, n: int, rng: np.random.Generator) -> list[RetrievalResult]:
    picks = rng.permutation(len(store))[:n]
    return [
        RetrievalResult(rank=r + 1, index=int(i), image_id=store.image_id(int(i)), score=0.0)
        for r, i in enumerate(picks)
    ]


def run_experiment(store, queries: Sequence[EvalQuery], methods: Sequence[str],
                   n: int, seed: int, target_class: str = "target",
                   bin_edges: Sequence[float] = DEFAULT_BIN_EDGES,
                   workers: int = 1, shard_size: int = 4096) -> EvalReport:
    """Per-method, per-ROI-area-bin mean hit-rate@n over the queries.

    dtm projects each query's ROIs to a template and runs search; gap ranks
    by pooled-descriptor cosine; random shuffles record order under
    (seed, query position). Labels come from the store manifest.
    """
    methods = list(methods)
    for m in methods:
        if m not in METHODS:
            raise ConfigError(f"unknown method {m!r}; expected one of {METHODS}")
    if not methods:
        raise ConfigError("at least one method is required")
    if n < 1:
        raise ConfigError(f"n must be >= 1, got {n}")
    if not queries:
        raise InvalidInputError("at least one query is required")
    manifest = getattr(store, "manifest", None)
    if manifest is None:
        raise DataError("store has no manifest; labels are required for hit rates")
    config = SearchConfig(k=min(n, max(1, len(store))), shard_size=shard_size,
                          workers=workers)
    bins = bin_queries_by_roi_area([q.spec for q in queries], bin_edges)
    n_bins = len(bin_edges) - 1
    rates: dict[str, list[float]] = {m: [] for m in methods}
    for qi, query in enumerate(queries):
        fm = query.feature_map(store)
        template: Template | None = None
        for method in methods:
            if method == "dtm":
                if template is None:
                    template = project_roi(fm, query.spec)
                results = search(store, template, config)
            elif method == "gap":
                results = gap_search(store, fm, config.k)
            else:
                results = _random_results(store, n, np.random.default_rng((seed, qi)))
            rates[method].append(hit_rate_at_n(results, manifest, target_class, n))
    bin_counts = tuple(sum(1 for b in bins if b == bi) for bi in range(n_bins))
    method_rates = {m: float(np.mean(rates[m])) for m in methods}
    method_bin_rates = {}
    for m in methods:
        per_bin: list[float | None] = []
        for bi in range(n_bins):
            vals = [rates[m][qi] for qi in range(len(queries)) if bins[qi] == bi]
            per_bin.append(float(np.mean(vals)) if vals else None)
        method_bin_rates[m] = tuple(per_bin)
    return EvalReport(
        n=n, target_class=target_class, bin_edges=tuple(float(e) for e in bin_edges),
        bin_counts=bin_counts, method_rates=method_rates,
        method_bin_rates=method_bin_rates,
        metadata={
            "seed": seed, "query_count": len(queries), "record_count": len(store),
            "store_path": getattr(store, "path", None), "methods": methods,
        },
    )
