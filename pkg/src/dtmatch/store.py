"""Bit-exact binary store of feature maps plus a line-delimited manifest.

Layout (little-endian, 32-byte header, then N contiguous records):

    offset  size  field
    0       4     magic "DTMS"
    4       2     version (u16) = 1
    6       2     flags (u16); bit0 = records are channel-L2-normalized
    8       1     dtype (u8); 0 = IEEE 754 binary32 little-endian
    9       3     reserved, zero
    12      4     w (u32)
    16      4     h (u32)
    20      4     c (u32)
    24      8     record count N (u64)

Each record is w*h*c float32 values, row-major with channels innermost
(the FeatureMap layout). The manifest is a sidecar at ``<path>.manifest``:
one JSON object per line with fields index, image_id, and optional labels
and path. Stores are immutable once written; readers memory-map the payload.
"""

from __future__ import annotations

import json
import struct
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterable, Sequence

import numpy as np

from .errors import DataError, ShapeError, StoreCorruptionError, StoreFormatError
from .featmap import FeatureMap

MAGIC = b"DTMS"
VERSION = 1
DTYPE_FLOAT32 = 0
FLAG_NORMALIZED = 0x0001

HEADER_STRUCT = struct.Struct("<4sHHB3sIIIQ")
HEADER_SIZE = HEADER_STRUCT.size  # 32

MANIFEST_SUFFIX = ".manifest"


@dataclass(frozen=True)
class StoreHeader:
    w: int
    h: int
    c: int
    record_count: int
    flags: int = FLAG_NORMALIZED
    version: int = VERSION
    dtype: int = DTYPE_FLOAT32

    @property
    def normalized(self) -> bool:
        return bool(self.flags & FLAG_NORMALIZED)

    @property
    def record_stride(self) -> int:
        """Bytes per record."""
        return self.w * self.h * self.c * 4

    def pack(self) -> bytes:
        return HEADER_STRUCT.pack(
            MAGIC, self.version, self.flags, self.dtype, b"\x00\x00\x00",
            self.w, self.h, self.c, self.record_count,
        )

    @classmethod
    def unpack(cls, raw: bytes) -> "StoreHeader":
        if len(raw) < HEADER_SIZE:
            raise StoreCorruptionError(f"file too short for a store header ({len(raw)} bytes)")
        magic, version, flags, dtype, reserved, w, h, c, n = HEADER_STRUCT.unpack(raw[:HEADER_SIZE])
        if magic != MAGIC:
            raise StoreFormatError(f"bad magic {magic!r} (field: magic)")
        if version != VERSION:
            raise StoreFormatError(f"unsupported version {version} (field: version)")
        if dtype != DTYPE_FLOAT32:
            raise StoreFormatError(f"unsupported dtype code {dtype} (field: dtype)")
        if reserved != b"\x00\x00\x00":
            raise StoreFormatError("reserved bytes must be zero (field: reserved)")
        if min(w, h, c) < 1:
            raise StoreFormatError(f"dims must be >= 1, got {(w, h, c)} (field: dims)")
        return cls(w=w, h=h, c=c, record_count=n, flags=flags, version=version, dtype=dtype)


@dataclass(frozen=True)
class ManifestEntry:
    index: int
    image_id: str
    labels: tuple[str, ...] | None = None
    path: str | None = None

    def to_json(self) -> str:
        doc: dict = {"index": self.index, "image_id": self.image_id}
        if self.labels is not None:
            doc["labels"] = list(self.labels)
        if self.path is not None:
            doc["path"] = self.path
        return json.dumps(doc, ensure_ascii=False)

    @classmethod
    def from_json(cls, line: str) -> "ManifestEntry":
        doc = json.loads(line)
        labels = doc.get("labels")
        return cls(
            index=int(doc["index"]),
            image_id=str(doc["image_id"]),
            labels=tuple(labels) if labels is not None else None,
            path=doc.get("path"),
        )


def read_manifest(path: str | Path, expected_count: int | None = None) -> list[ManifestEntry]:
    """Parse a manifest sidecar, rejecting duplicate indices and ids."""
    entries = []
    with open(path, "r", encoding="utf-8") as fh:
        for lineno, line in enumerate(fh):
            line = line.strip()
            if not line:
                continue
            try:
                entries.append(ManifestEntry.from_json(line))
            except (json.JSONDecodeError, KeyError, TypeError, ValueError) as exc:
                raise StoreFormatError(f"manifest line {lineno + 1} is invalid: {exc}") from exc
    indices = [e.index for e in entries]
    if len(set(indices)) != len(indices):
        raise DataError("manifest contains duplicate record indices")
    ids = [e.image_id for e in entries]
    if len(set(ids)) != len(ids):
        raise DataError("manifest contains duplicate image ids")
    if indices != list(range(len(entries))):
        raise DataError("manifest indices must be 0..N-1 in order")
    if expected_count is not None and len(entries) != expected_count:
        raise StoreCorruptionError(
            f"manifest has {len(entries)} entries but header says {expected_count}"
        )
    return entries


@dataclass(frozen=True)
class StoreWriteSummary:
    record_count: int
    byte_count: int  # store file size including header
    path: str


def write_store(
    records: Iterable[FeatureMap | np.ndarray],
    entries: Iterable[ManifestEntry],
    path: str | Path,
    normalized: bool = True,
) -> StoreWriteSummary:
    """Write records and their manifest; returns the count and byte size.

    ``records`` may be FeatureMaps or raw (h, w, c) float32 arrays and may be
    a generator; the header's record count is patched after the payload when
    the length is not known up front. All records must share dims.
    """
    path = Path(path)
    flags = FLAG_NORMALIZED if normalized else 0
    dims: tuple[int, int, int] | None = None
    count = 0
    entry_list: list[ManifestEntry] = []
    entry_iter = iter(entries)
    try:
        with open(path, "wb") as fh:
            fh.write(StoreHeader(w=1, h=1, c=1, record_count=0, flags=flags).pack())
            for rec in records:
                values = rec.values if isinstance(rec, FeatureMap) else np.asarray(rec)
                if values.ndim != 3:
                    raise ShapeError(f"record {count} must be (h, w, c), got {values.shape}")
                h, w, c = values.shape
                if dims is None:
                    dims = (w, h, c)
                elif (w, h, c) != dims:
                    raise ShapeError(
                        f"record {count} dims {(w, h, c)} do not match first record {dims}"
                    )
                fh.write(np.ascontiguousarray(values, dtype="<f4").tobytes())
                try:
                    entry = next(entry_iter)
                except StopIteration:
                    raise DataError(f"manifest entries exhausted at record {count}") from None
                if entry.index != count:
                    raise DataError(f"manifest entry {entry.index} out of order at record {count}")
                entry_list.append(entry)
                count += 1
            for leftover in entry_iter:
                raise DataError(f"manifest entry {leftover.index} has no record")
            if dims is None:
                raise ShapeError("cannot write an empty store without dims")
            fh.seek(0)
            fh.write(StoreHeader(dims[0], dims[1], dims[2], count, flags=flags).pack())
        manifest_path = path.with_name(path.name + MANIFEST_SUFFIX)
        with open(manifest_path, "w", encoding="utf-8") as fh:
            for entry in entry_list:
                fh.write(entry.to_json())
                fh.write("\n")
    except OSError as exc:
        raise OSError(f"failed writing store at {path}: {exc}") from exc
    byte_count = HEADER_SIZE + count * dims[0] * dims[1] * dims[2] * 4
    return StoreWriteSummary(record_count=count, byte_count=byte_count, path=str(path))


class EmbeddingStore:
    """Read-only, memory-mapped view of a store file plus its manifest.

    Safe for any number of concurrent readers; records are exposed as
    zero-copy (h, w, c) float32 views of the mapped payload.
    """

    def __init__(self, path: str | Path, header: StoreHeader,
                 payload: np.ndarray, manifest: list[ManifestEntry] | None):
        self.path = str(path)
        self.header = header
        self._payload = payload
        self.manifest = manifest
        self._ids = [e.image_id for e in manifest] if manifest is not None else None

    @property
    def w(self) -> int:
        return self.header.w

    @property
    def h(self) -> int:
        return self.header.h

    @property
    def c(self) -> int:
        return self.header.c

    @property
    def dims(self) -> tuple[int, int, int]:
        return (self.w, self.h, self.c)

    @property
    def normalized(self) -> bool:
        return self.header.normalized

    def __len__(self) -> int:
        return self.header.record_count

    def read_block(self, start: int, stop: int) -> np.ndarray:
        """(stop-start, h, w, c) float32 view of the payload."""
        return self._payload[start:stop]

    def get_record(self, index: int) -> FeatureMap:
        if not 0 <= index < len(self):
            raise IndexError(f"record index {index} out of range [0, {len(self)})")
        return FeatureMap(self._payload[index], normalized=self.normalized)

    def image_id(self, index: int) -> str:
        if self._ids is None:
            return str(index)
        return self._ids[index]

    def labels_for(self, index: int) -> tuple[str, ...]:
        if self.manifest is None:
            return ()
        return self.manifest[index].labels or ()

    def validate_records(self, sample_size: int = 16, seed: int = 0) -> None:
        """Spot-check the normalized flag on a random sample of records.

        Full validation of a large mapped store would defeat zero-copy
        opening, so the invariant is checked on demand over a sample.
        """
        if not self.normalized or len(self) == 0:
            return
        rng = np.random.default_rng(seed)
        count = min(sample_size, len(self))
        picks = rng.choice(len(self), size=count, replace=False)
        for index in sorted(int(i) for i in picks):
            rec = self._payload[index].astype(np.float64)
            norms = np.sqrt(np.einsum("hwc,hwc->hw", rec, rec))
            nonzero = norms > 0.0
            if nonzero.any() and np.abs(norms[nonzero] - 1.0).max() > 1e-4:
                raise StoreCorruptionError(
                    f"record {index} violates the normalized flag "
                    f"(worst channel norm deviation {np.abs(norms[nonzero] - 1.0).max():.3g})"
                )


class InMemoryStore:
    """Array-backed stand-in with the same read surface as EmbeddingStore."""

    def __init__(self, values: np.ndarray, image_ids: Sequence[str] | None = None,
                 normalized: bool = True):
        values = np.asarray(values, dtype=np.float32)
        if values.ndim != 4:
            raise ShapeError(f"expected (N, h, w, c) values, got shape {values.shape}")
        self._values = values
        self.normalized = normalized
        self._ids = list(image_ids) if image_ids is not None else None
        if self._ids is not None and len(self._ids) != len(values):
            raise DataError("image_ids length does not match record count")

    @property
    def h(self) -> int:
        return self._values.shape[1]

    @property
    def w(self) -> int:
        return self._values.shape[2]

    @property
    def c(self) -> int:
        return self._values.shape[3]

    @property
    def dims(self) -> tuple[int, int, int]:
        return (self.w, self.h, self.c)

    def __len__(self) -> int:
        return len(self._values)

    def read_block(self, start: int, stop: int) -> np.ndarray:
        return self._values[start:stop]

    def get_record(self, index: int) -> FeatureMap:
        if not 0 <= index < len(self):
            raise IndexError(f"record index {index} out of range [0, {len(self)})")
        return FeatureMap(self._values[index], normalized=self.normalized)

    def image_id(self, index: int) -> str:
        if self._ids is None:
            return str(index)
        return self._ids[index]

    def labels_for(self, index: int) -> tuple[str, ...]:
        return ()


def open_store(path: str | Path, load_manifest: bool = True) -> EmbeddingStore:
    """Validate the header and memory-map the payload without loading it.

    The manifest sidecar is read when present (and required to agree with the
    header count); pass ``load_manifest=False`` to skip it.
    """
    path = Path(path)
    try:
        with open(path, "rb") as fh:
            raw = fh.read(HEADER_SIZE)
        header = StoreHeader.unpack(raw)
        file_size = path.stat().st_size
    except OSError as exc:
        raise OSError(f"cannot open store at {path}: {exc}") from exc
    expected = HEADER_SIZE + header.record_count * header.record_stride
    if file_size != expected:
        raise StoreCorruptionError(
            f"store payload is {file_size - HEADER_SIZE} bytes but header implies "
            f"{expected - HEADER_SIZE} ({header.record_count} records of {header.record_stride})"
        )
    if header.record_count > 0:
        payload = np.memmap(
            path, dtype="<f4", mode="r", offset=HEADER_SIZE,
            shape=(header.record_count, header.h, header.w, header.c),
        )
    else:
        payload = np.empty((0, header.h, header.w, header.c), dtype=np.float32)
    manifest = None
    if load_manifest:
        manifest_path = path.with_name(path.name + MANIFEST_SUFFIX)
        if manifest_path.exists():
            manifest = read_manifest(manifest_path, expected_count=header.record_count)
    return EmbeddingStore(path, header, payload, manifest)


def get_record(store: EmbeddingStore | InMemoryStore, index: int) -> FeatureMap:
    """Module-level accessor mirroring ``store.get_record``."""
    return store.get_record(index)
