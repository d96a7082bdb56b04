"""Command-line front end: build-store | search | heatmap | eval | gallery.

Every command is deterministic given identical inputs and flags, exits 0
only when its output artifact was fully written, and reports module errors
on stderr with a nonzero status. Worker counts default to the DTM_WORKERS
environment variable.
"""

from __future__ import annotations

import argparse
import html
import json
import os
import sys
from dataclasses import dataclass
from pathlib import Path
from typing import Iterator, Sequence

import numpy as np

from . import evaluation
from .errors import ConfigError, DataError, DtmError
from .featmap import FeatureMap, QuerySpec, RoiBox, project_roi
from .scoring import sample_match_map
from .search import SearchConfig, search
from .store import ManifestEntry, open_store, read_manifest, write_store


@dataclass(frozen=True)
class QueryFile:
    """Deserialized query: the ROI spec plus where its feature record lives
    (an index into the searched store, or a standalone single-record store)."""

    spec: QuerySpec
    record_index: int | None = None
    record_path: str | None = None


def load_query_file(path: str | Path) -> QueryFile:
    try:
        with open(path, "r", encoding="utf-8") as fh:
            doc = json.load(fh)
    except json.JSONDecodeError as exc:
        raise DataError(f"query file {path} is not valid JSON: {exc}") from exc
    try:
        rois = tuple(
            RoiBox(
                x0=float(r["x0"]), y0=float(r["y0"]),
                x1=float(r["x1"]), y1=float(r["y1"]),
                roi_id=int(r.get("roi_id", i)),
            )
            for i, r in enumerate(doc["rois"])
        )
        spec = QuerySpec(
            image_id=str(doc["image_id"]),
            image_width=int(doc["image_width"]),
            image_height=int(doc["image_height"]),
            rois=rois,
        )
    except (KeyError, TypeError, ValueError) as exc:
        if isinstance(exc, DtmError):
            raise
        raise DataError(f"query file {path} is malformed: {exc}") from exc
    record_index = doc.get("record_index")
    record_path = doc.get("record_path")
    if (record_index is None) == (record_path is None):
        raise DataError(
            f"query file {path} must set exactly one of record_index and record_path"
        )
    if record_path is not None:
        record_path = str(Path(path).parent / record_path)
    return QueryFile(
        spec=spec,
        record_index=int(record_index) if record_index is not None else None,
        record_path=record_path,
    )


def _query_feature_map(query: QueryFile, store) -> FeatureMap:
    if query.record_index is not None:
        return store.get_record(query.record_index)
    return open_store(query.record_path).get_record(0)


def _load_synth_config(path: str | Path) -> evaluation.SynthConfig:
    with open(path, "r", encoding="utf-8") as fh:
        try:
            doc = json.load(fh)
        except json.JSONDecodeError as exc:
            raise ConfigError(f"synthetic config {path} is not valid JSON: {exc}") from exc
    if not isinstance(doc, dict):
        raise ConfigError(f"synthetic config {path} must be a JSON object")
    class_fields = {"name", "cells_min", "cells_max", "direction_seed", "amplitude"}
    config_fields = {"w", "h", "c", "n_records", "classes", "positive_fraction",
                     "noise_sigma", "seed"}
    unknown = set(doc) - config_fields
    if unknown:
        raise ConfigError(f"unknown synthetic config keys: {sorted(unknown)}")
    kwargs = dict(doc)
    if "classes" in kwargs:
        specs = []
        for ci, cdoc in enumerate(kwargs["classes"]):
            bad = set(cdoc) - class_fields
            if bad:
                raise ConfigError(f"class {ci}: unknown keys {sorted(bad)}")
            specs.append(evaluation.ClassSpec(**cdoc))
        kwargs["classes"] = tuple(specs)
    try:
        return evaluation.SynthConfig(**kwargs)
    except TypeError as exc:
        raise ConfigError(f"synthetic config {path} is malformed: {exc}") from exc


def _concat_stores(paths: Sequence[str], out: str) -> tuple[int, tuple[int, int, int], int]:
    stores = [open_store(p) for p in paths]
    seen: set[str] = set()
    entries: list[ManifestEntry] = []
    index = 0
    for path, st in zip(paths, stores):
        stem = Path(path).stem
        for i in range(len(st)):
            if st.manifest is not None:
                src = st.manifest[i]
                image_id, labels, src_path = src.image_id, src.labels, src.path
            else:
                image_id, labels, src_path = f"{stem}-{i:06d}", None, None
            if image_id in seen:
                raise DataError(f"duplicate image id {image_id!r} across inputs")
            seen.add(image_id)
            entries.append(ManifestEntry(index=index, image_id=image_id,
                                         labels=labels, path=src_path))
            index += 1

    def records() -> Iterator[np.ndarray]:
        for st in stores:
            for i in range(len(st)):
                yield st.read_block(i, i + 1)[0]

    normalized = all(st.normalized for st in stores)
    summary = write_store(records(), entries, out, normalized=normalized)
    first = stores[0]
    return summary.record_count, (first.w, first.h, first.c), summary.byte_count


def cmd_build_store(args: argparse.Namespace) -> int:
    if bool(args.synth) == bool(args.inputs):
        raise ConfigError("provide either input record stores or --synth, not both")
    if args.synth:
        config = _load_synth_config(args.synth)
        result = evaluation.generate_synthetic(config, args.out)
        n, dims, nbytes = result.record_count, (result.w, result.h, result.c), result.byte_count
    else:
        n, dims, nbytes = _concat_stores(args.inputs, args.out)
    print(f"wrote {args.out}: {n} records, dims w={dims[0]} h={dims[1]} c={dims[2]}, "
          f"{nbytes} bytes")
    return 0


def cmd_search(args: argparse.Namespace) -> int:
    store = open_store(args.store)
    query = load_query_file(args.query)
    fm = _query_feature_map(query, store)
    template = project_roi(fm, query.spec)
    config = SearchConfig(k=args.k, shard_size=args.shard_size,
                          workers=_resolve_workers(args.workers))
    results = search(store, template, config)
    with open(args.out, "w", encoding="utf-8") as fh:
        for r in results:
            fh.write(json.dumps({"rank": r.rank, "index": r.index,
                                 "image_id": r.image_id, "score": r.score}))
            fh.write("\n")
    print(f"wrote {args.out}: {len(results)} results for query {query.spec.image_id}")
    return 0


def _write_pgm(path: str | Path, values: np.ndarray) -> None:
    """ASCII portable graymap; raw values go to a sidecar next to it."""
    vmin = float(values.min())
    vmax = float(values.max())
    if vmax > vmin:
        pixels = np.rint((values - vmin) / (vmax - vmin) * 255.0).astype(np.uint8)
    else:
        pixels = np.zeros(values.shape, dtype=np.uint8)
    h, w = values.shape
    lines = ["P2", f"{w} {h}", "255"]
    lines.extend(" ".join(str(int(p)) for p in row) for row in pixels)
    Path(path).write_text("\n".join(lines) + "\n", encoding="utf-8")
    sidecar = Path(str(path) + ".txt")
    sidecar.write_text(
        "\n".join(" ".join(repr(float(v)) for v in row) for row in values) + "\n",
        encoding="utf-8",
    )


def cmd_heatmap(args: argparse.Namespace) -> int:
    store = open_store(args.store)
    if not 0 <= args.index < len(store):
        raise DataError(f"record index {args.index} outside store of {len(store)} records")
    query = load_query_file(args.query)
    fm = _query_feature_map(query, store)
    template = project_roi(fm, query.spec)
    sample = store.get_record(args.index)
    heat = sample_match_map(sample, template)
    _write_pgm(args.out, heat.values)
    print(f"wrote {args.out}: match map of record {args.index} "
          f"({store.image_id(args.index)})")
    return 0


def cmd_eval(args: argparse.Namespace) -> int:
    store = open_store(args.store)
    qdir = Path(args.queries)
    if not qdir.is_dir():
        raise DataError(f"queries path {qdir} is not a directory")
    query_files = sorted(qdir.glob("*.json"))
    if not query_files:
        raise DataError(f"no *.json query files under {qdir}")
    queries = []
    for qf in query_files:
        q = load_query_file(qf)
        if q.record_index is not None:
            queries.append(evaluation.EvalQuery(spec=q.spec, record_index=q.record_index))
        else:
            fm = open_store(q.record_path).get_record(0)
            queries.append(evaluation.EvalQuery(spec=q.spec, values=fm))
    methods = [m.strip() for m in args.methods.split(",") if m.strip()]
    report = evaluation.run_experiment(
        store, queries, methods, n=args.n, seed=args.seed, target_class=args.target,
        workers=_resolve_workers(args.workers), shard_size=args.shard_size,
    )
    Path(args.out).write_text(report.to_json_lines(), encoding="utf-8")
    table_path = Path(str(args.out) + ".txt")
    table_path.write_text(report.to_table(), encoding="utf-8")
    for method, rate in report.method_rates.items():
        print(f"{method}: hit-rate@{report.n} = {rate:.4f}")
    return 0


def cmd_gallery(args: argparse.Namespace) -> int:
    rows = []
    with open(args.results, "r", encoding="utf-8") as fh:
        for line in fh:
            line = line.strip()
            if line:
                rows.append(json.loads(line))
    rows.sort(key=lambda r: r["rank"])
    sources: dict[str, str] = {}
    if args.manifest:
        for entry in read_manifest(args.manifest):
            if entry.path is not None:
                sources[entry.image_id] = entry.path
    panels = []
    for r in rows:
        image_id = html.escape(str(r["image_id"]))
        parts = [
            f'<div class="panel"><span class="rank">#{int(r["rank"])}</span> ',
            f'<span class="id">{image_id}</span> ',
            f'<span class="score">{float(r["score"]):.6f}</span>',
        ]
        if r.get("heatmap"):
            heat = html.escape(str(r["heatmap"]))
            parts.append(f' <a class="heatmap" href="{heat}">heat map</a>')
        src = sources.get(str(r["image_id"]))
        if src:
            parts.append(f' <a class="source" href="{html.escape(src)}">source</a>')
        parts.append("</div>")
        panels.append("".join(parts))
    title = html.escape(args.title)
    page = "\n".join(
        [
            "<!doctype html>",
            f'<html><head><meta charset="utf-8"><title>{title}</title>',
            "<style>body{font-family:sans-serif}.panel{margin:4px 0}"
            ".rank{font-weight:bold}.score{color:#555}</style></head><body>",
            f"<h1>{title}</h1>",
            f'<p>{len(panels)} results</p>',
            *panels,
            "</body></html>",
        ]
    )
    Path(args.out).write_text(page + "\n", encoding="utf-8")
    print(f"wrote {args.out}: {len(panels)} panels")
    return 0


def _resolve_workers(value: int | None) -> int:
    if value is not None:
        return value
    raw = os.environ.get("DTM_WORKERS", "1")
    try:
        return int(raw)
    except ValueError:
        raise ConfigError(f"DTM_WORKERS must be an integer, got {raw!r}") from None


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="dtm",
        description="Template-based retrieval over precomputed feature-map stores.",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("build-store", help="write a store from record stores or a synthetic config")
    p.add_argument("inputs", nargs="*", help="input record store files to concatenate")
    p.add_argument("--synth", help="synthetic dataset config (JSON file)")
    p.add_argument("--out", required=True, help="output store path")
    p.set_defaults(func=cmd_build_store)

    p = sub.add_parser("search", help="rank store records against a query template")
    p.add_argument("--store", required=True)
    p.add_argument("--query", required=True, help="query JSON file")
    p.add_argument("--k", type=int, default=10)
    p.add_argument("--shard-size", type=int, default=4096)
    p.add_argument("--workers", type=int, default=None)
    p.add_argument("--out", required=True, help="output results file (JSON lines)")
    p.set_defaults(func=cmd_search)

    p = sub.add_parser("heatmap", help="render one record's match map as a graymap")
    p.add_argument("--store", required=True)
    p.add_argument("--query", required=True)
    p.add_argument("--index", type=int, required=True, help="record index to render")
    p.add_argument("--out", required=True, help="output .pgm path")
    p.set_defaults(func=cmd_heatmap)

    p = sub.add_parser("eval", help="run retrieval methods over a query set and report hit rates")
    p.add_argument("--store", required=True)
    p.add_argument("--queries", required=True, help="directory of query JSON files")
    p.add_argument("--methods", default="dtm,gap,random", help="comma-separated subset of dtm,gap,random")
    p.add_argument("--n", type=int, default=100)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--target", default="target", help="target class name for hit rates")
    p.add_argument("--shard-size", type=int, default=4096)
    p.add_argument("--workers", type=int, default=None)
    p.add_argument("--out", required=True, help="output report file (JSON lines)")
    p.set_defaults(func=cmd_eval)

    p = sub.add_parser("gallery", help="render ranked results as a static page")
    p.add_argument("--results", required=True, help="results file from the search command")
    p.add_argument("--manifest", default=None, help="store manifest for source-image links")
    p.add_argument("--title", default="retrieval results")
    p.add_argument("--out", required=True, help="output .html path")
    p.set_defaults(func=cmd_gallery)
    return parser


def main(argv: Sequence[str] | None = None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return args.func(args)
    except (DtmError, OSError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
