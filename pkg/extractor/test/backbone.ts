/**
 * Shared test fixtures: a small convolutional backbone with seeded weights
 * (so every run and every platform extracts bit-identical features) and
 * writers for throwaway Netpbm images.
 */

import * as fs from 'fs';
import * as os from 'os';
import * as path from 'path';
import * as tf from '@tensorflow/tfjs';

import { saveModel } from '../src/model';

export const INPUT_SIZE = 64;
export const FEATURE_LAYER = 'features';
// features is 16x16x32; pooling with kernel/stride 2 gives the store dims.
export const POOLED = { w: 8, h: 8, c: 32 };

/** Deterministic 32-bit PRNG; good enough for test weights and pixels. */
export function mulberry32(seed: number): () => number {
  let a = seed >>> 0;
  return () => {
    a = (a + 0x6d2b79f5) >>> 0;
    let t = a ^ (a >>> 15);
    t = Math.imul(t, 1 | a);
    t = (t + Math.imul(t ^ (t >>> 7), 61 | t)) ^ t;
    return ((t ^ (t >>> 14)) >>> 0) / 4294967296;
  };
}

function seedWeights(model: tf.LayersModel, seed: number): void {
  const rand = mulberry32(seed);
  const next = model.getWeights().map((w) => {
    const values = new Float32Array(w.size);
    for (let i = 0; i < values.length; i++) {
      values[i] = (rand() * 2 - 1) * 0.25;
    }
    return tf.tensor(values, w.shape);
  });
  model.setWeights(next);
  next.forEach((t) => t.dispose());
}

/**
 * A classification-shaped backbone: two strided relu conv blocks, a linear
 * feature layer (16x16x32 on 64x64 input), then pooling and a dense head.
 * The feature layer stays linear so no cell is driven to an all-zero vector.
 */
export function buildBackbone(): tf.LayersModel {
  const model = tf.sequential();
  model.add(tf.layers.conv2d({
    inputShape: [INPUT_SIZE, INPUT_SIZE, 3],
    filters: 16, kernelSize: 3, strides: 2, padding: 'same',
    activation: 'relu', name: 'block1',
  }));
  model.add(tf.layers.conv2d({
    filters: 24, kernelSize: 3, strides: 2, padding: 'same',
    activation: 'relu', name: 'block2',
  }));
  model.add(tf.layers.conv2d({
    filters: 32, kernelSize: 3, strides: 1, padding: 'same', name: FEATURE_LAYER,
  }));
  model.add(tf.layers.globalAveragePooling2d({ name: 'gap' }));
  model.add(tf.layers.dense({ units: 10, name: 'head' }));
  seedWeights(model, 42);
  return model;
}

export async function saveBackbone(dir: string): Promise<void> {
  const model = buildBackbone();
  await saveModel(model, dir);
}

export function freshDir(label: string): string {
  return fs.mkdtempSync(path.join(os.tmpdir(), `${label}-`));
}

/** Binary PPM filled with seeded noise. */
export function writePpm(file: string, width: number, height: number, seed: number): void {
  const rand = mulberry32(seed);
  const bytes = Buffer.alloc(width * height * 3);
  for (let i = 0; i < bytes.length; i++) {
    bytes[i] = Math.floor(rand() * 256);
  }
  fs.writeFileSync(file, Buffer.concat([Buffer.from(`P6\n${width} ${height}\n255\n`), bytes]));
}

/** Binary PPM with every pixel the same color. */
export function writeFlatPpm(
  file: string, width: number, height: number, rgb: [number, number, number],
): void {
  const bytes = Buffer.alloc(width * height * 3);
  for (let i = 0; i < width * height; i++) {
    bytes[3 * i] = rgb[0];
    bytes[3 * i + 1] = rgb[1];
    bytes[3 * i + 2] = rgb[2];
  }
  fs.writeFileSync(file, Buffer.concat([Buffer.from(`P6\n${width} ${height}\n255\n`), bytes]));
}
