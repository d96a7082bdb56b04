/**
 * Writer for the retrieval engine's record store format.
 *
 * Layout (little-endian): 32-byte header, then N contiguous records of
 * w*h*c float32 values, row-major with channels innermost. A manifest
 * sidecar at `<path>.manifest` holds one JSON object per line with fields
 * index, image_id, and optional labels and path.
 */

import * as fs from 'fs';

export const MAGIC = 'DTMS';
export const VERSION = 1;
export const DTYPE_FLOAT32 = 0;
export const FLAG_NORMALIZED = 0x0001;
export const HEADER_SIZE = 32;
export const MANIFEST_SUFFIX = '.manifest';

export interface StoreHeader {
  w: number;
  h: number;
  c: number;
  recordCount: number;
  flags: number;
}

export interface ManifestEntry {
  index: number;
  imageId: string;
  labels?: string[];
  path?: string;
}

export function packHeader(header: StoreHeader): Buffer {
  const buf = Buffer.alloc(HEADER_SIZE);
  buf.write(MAGIC, 0, 'ascii');
  buf.writeUInt16LE(VERSION, 4);
  buf.writeUInt16LE(header.flags, 6);
  buf.writeUInt8(DTYPE_FLOAT32, 8);
  // bytes 9..11 reserved, zero from alloc
  buf.writeUInt32LE(header.w, 12);
  buf.writeUInt32LE(header.h, 16);
  buf.writeUInt32LE(header.c, 20);
  buf.writeBigUInt64LE(BigInt(header.recordCount), 24);
  return buf;
}

export function unpackHeader(buf: Buffer): StoreHeader {
  if (buf.length < HEADER_SIZE) {
    throw new Error(`file too short for a store header (${buf.length} bytes)`);
  }
  if (buf.toString('ascii', 0, 4) !== MAGIC) {
    throw new Error(`bad magic ${JSON.stringify(buf.toString('ascii', 0, 4))} (field: magic)`);
  }
  const version = buf.readUInt16LE(4);
  if (version !== VERSION) {
    throw new Error(`unsupported version ${version} (field: version)`);
  }
  const dtype = buf.readUInt8(8);
  if (dtype !== DTYPE_FLOAT32) {
    throw new Error(`unsupported dtype code ${dtype} (field: dtype)`);
  }
  const header = {
    w: buf.readUInt32LE(12),
    h: buf.readUInt32LE(16),
    c: buf.readUInt32LE(20),
    recordCount: Number(buf.readBigUInt64LE(24)),
    flags: buf.readUInt16LE(6),
  };
  if (Math.min(header.w, header.h, header.c) < 1) {
    throw new Error(`dims must be >= 1, got ${header.w}x${header.h}x${header.c} (field: dims)`);
  }
  return header;
}

function manifestLine(entry: ManifestEntry): string {
  const doc: Record<string, unknown> = { index: entry.index, image_id: entry.imageId };
  if (entry.labels !== undefined) doc.labels = entry.labels;
  if (entry.path !== undefined) doc.path = entry.path;
  return JSON.stringify(doc);
}

/**
 * Single-writer, append-ordered store builder. Records stream to disk as
 * they arrive; close() patches the final count into the header and writes
 * the manifest sidecar.
 */
export class StoreWriter {
  private fd: number;
  private entries: ManifestEntry[] = [];
  private readonly stride: number;
  private closed = false;

  constructor(
    readonly path: string,
    readonly w: number,
    readonly h: number,
    readonly c: number,
    readonly flags: number = FLAG_NORMALIZED,
  ) {
    if (Math.min(w, h, c) < 1) {
      throw new Error(`store dims must be >= 1, got ${w}x${h}x${c}`);
    }
    this.stride = w * h * c;
    this.fd = fs.openSync(path, 'w');
    fs.writeSync(this.fd, packHeader({ w, h, c, recordCount: 0, flags }));
  }

  get recordCount(): number {
    return this.entries.length;
  }

  /** values: h*w*c floats, row-major, channels innermost. */
  append(values: Float32Array, entry: { imageId: string; labels?: string[]; path?: string }): void {
    if (this.closed) throw new Error('store writer already closed');
    if (values.length !== this.stride) {
      throw new Error(
        `record ${this.entries.length} has ${values.length} values, expected ${this.stride}`,
      );
    }
    // Float32Array views are host-endian; every supported platform is
    // little-endian, matching the format.
    fs.writeSync(this.fd, Buffer.from(values.buffer, values.byteOffset, values.byteLength));
    this.entries.push({ index: this.entries.length, ...entry });
  }

  close(): { recordCount: number; byteCount: number } {
    if (this.closed) throw new Error('store writer already closed');
    this.closed = true;
    const header = packHeader({
      w: this.w, h: this.h, c: this.c,
      recordCount: this.entries.length, flags: this.flags,
    });
    fs.writeSync(this.fd, header, 0, header.length, 0);
    fs.closeSync(this.fd);
    const manifest = this.entries.map(manifestLine).join('\n');
    fs.writeFileSync(this.path + MANIFEST_SUFFIX, manifest + (manifest ? '\n' : ''));
    return {
      recordCount: this.entries.length,
      byteCount: HEADER_SIZE + this.entries.length * this.stride * 4,
    };
  }
}

export interface OpenedStore {
  header: StoreHeader;
  manifest: ManifestEntry[] | null;
  record(index: number): Float32Array;
}

/** Reader used by the tests; the retrieval engine is the primary consumer. */
export function openStore(path: string): OpenedStore {
  const raw = fs.readFileSync(path);
  const header = unpackHeader(raw);
  const stride = header.w * header.h * header.c * 4;
  const expected = HEADER_SIZE + header.recordCount * stride;
  if (raw.length !== expected) {
    throw new Error(`store is ${raw.length} bytes, expected ${expected}`);
  }
  let manifest: ManifestEntry[] | null = null;
  if (fs.existsSync(path + MANIFEST_SUFFIX)) {
    manifest = fs
      .readFileSync(path + MANIFEST_SUFFIX, 'utf-8')
      .split('\n')
      .filter((line) => line.trim())
      .map((line, i) => {
        const doc = JSON.parse(line);
        return {
          index: doc.index as number,
          imageId: doc.image_id as string,
          labels: doc.labels,
          path: doc.path,
        };
      });
  }
  return {
    header,
    manifest,
    record(index: number): Float32Array {
      if (index < 0 || index >= header.recordCount) {
        throw new Error(`record index ${index} out of range`);
      }
      const start = HEADER_SIZE + index * stride;
      const slice = raw.subarray(start, start + stride);
      return new Float32Array(slice.buffer, slice.byteOffset, header.w * header.h * header.c);
    },
  };
}
