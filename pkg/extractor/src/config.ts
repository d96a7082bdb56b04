/** Extraction config: the model, the feature layer, and the output contract. */

import * as fs from 'fs';
import * as path from 'path';

export interface ExtractConfig {
  /** Directory holding model.json + weights. */
  model: string;
  /** Name of the spatial layer to read features from. */
  layer: string;
  poolKernel: number;
  poolStride: number;
  /** 'exact' rejects mismatched image sizes; 'bilinear' resizes. */
  resize: 'exact' | 'bilinear';
  /** Expected store dims after pooling; extraction fails if the model disagrees. */
  dims: { w: number; h: number; c: number };
  batchSize: number;
}

const KNOWN_KEYS = new Set([
  'model', 'layer', 'pool_kernel', 'pool_stride', 'resize', 'dims', 'batch_size',
]);

export function loadConfig(configPath: string): ExtractConfig {
  let doc: any;
  try {
    doc = JSON.parse(fs.readFileSync(configPath, 'utf-8'));
  } catch (e) {
    throw new Error(`config ${configPath} is not valid JSON: ${(e as Error).message}`);
  }
  if (typeof doc !== 'object' || doc === null || Array.isArray(doc)) {
    throw new Error(`config ${configPath} must be a JSON object`);
  }
  const unknown = Object.keys(doc).filter((k) => !KNOWN_KEYS.has(k));
  if (unknown.length) {
    throw new Error(`unknown config keys: ${unknown.sort().join(', ')}`);
  }
  for (const key of ['model', 'layer', 'dims']) {
    if (!(key in doc)) throw new Error(`config is missing required key ${JSON.stringify(key)}`);
  }
  const poolKernel = doc.pool_kernel ?? 1;
  const poolStride = doc.pool_stride ?? poolKernel;
  const resize = doc.resize ?? 'exact';
  if (resize !== 'exact' && resize !== 'bilinear') {
    throw new Error(`resize must be "exact" or "bilinear", got ${JSON.stringify(resize)}`);
  }
  const dims = doc.dims;
  for (const key of ['w', 'h', 'c']) {
    if (!Number.isInteger(dims?.[key]) || dims[key] < 1) {
      throw new Error(`dims.${key} must be a positive integer`);
    }
  }
  if (!Number.isInteger(poolKernel) || poolKernel < 1 ||
      !Number.isInteger(poolStride) || poolStride < 1) {
    throw new Error('pool_kernel and pool_stride must be positive integers');
  }
  const batchSize = doc.batch_size ?? 8;
  if (!Number.isInteger(batchSize) || batchSize < 1) {
    throw new Error('batch_size must be a positive integer');
  }
  return {
    // Model paths resolve relative to the config file, like the engine's
    // query files do.
    model: path.resolve(path.dirname(configPath), String(doc.model)),
    layer: String(doc.layer),
    poolKernel,
    poolStride,
    resize,
    dims: { w: dims.w, h: dims.h, c: dims.c },
    batchSize,
  };
}

/** Image list: one path per line, blank lines and # comments skipped. */
export function loadImageList(listPath: string): string[] {
  const base = path.dirname(listPath);
  return fs
    .readFileSync(listPath, 'utf-8')
    .split('\n')
    .map((line) => line.trim())
    .filter((line) => line && !line.startsWith('#'))
    .map((line) => path.resolve(base, line));
}
