/**
 * The extraction pipeline: image file -> backbone forward pass -> selected
 * feature layer -> maxpool -> channel L2 normalization -> store record.
 *
 * Unreadable or unusable images are skipped with a warning and leave no
 * manifest entry; a model whose pooled layer shape disagrees with the
 * configured dims is a fatal config error.
 */

import * as tf from '@tensorflow/tfjs';

import { ExtractConfig } from './config';
import { decodeNetpbm, matchChannels } from './image';
import { describeModel, featureSubmodel, loadModel } from './model';
import { FLAG_NORMALIZED, StoreWriter } from './store';
import * as fs from 'fs';

export interface ExtractSummary {
  storePath: string;
  recordCount: number;
  skipped: string[];
  byteCount: number;
  dims: { w: number; h: number; c: number };
}

interface PendingImage {
  imageId: string;
  source: string;
  pixels: Float32Array;
}

export async function extractToStore(
  images: string[],
  config: ExtractConfig,
  outPath: string,
): Promise<ExtractSummary> {
  const model = await loadModel(config.model);
  const report = describeModel(model, config.layer, config.poolKernel, config.poolStride);
  const pooled = report.selected!.pooled;
  const dims = config.dims;
  if (pooled.w !== dims.w || pooled.h !== dims.h || pooled.c !== dims.c) {
    throw new Error(
      `layer ${config.layer} yields w=${pooled.w} h=${pooled.h} c=${pooled.c} after ` +
      `pooling, but the config expects w=${dims.w} h=${dims.h} c=${dims.c}`,
    );
  }
  const submodel = featureSubmodel(model, config.layer);
  const { h: ih, w: iw, c: ic } = report.input;

  const writer = new StoreWriter(outPath, dims.w, dims.h, dims.c, FLAG_NORMALIZED);
  const skipped: string[] = [];
  const seen = new Map<string, number>();
  const pending: PendingImage[] = [];

  const flush = () => {
    if (!pending.length) return;
    const batch = pending.splice(0);
    const input = new Float32Array(batch.length * ih * iw * ic);
    batch.forEach((p, i) => input.set(p.pixels, i * ih * iw * ic));
    const out = tf.tidy(() => {
      const x = tf.tensor4d(input, [batch.length, ih, iw, ic]);
      let feat = submodel.predict(x) as tf.Tensor4D;
      if (config.poolKernel > 1 || config.poolStride > 1) {
        feat = tf.maxPool(feat, config.poolKernel, config.poolStride, 'valid');
      }
      const norms = feat.norm('euclidean', 3, true);
      const safe = tf.where(tf.greater(norms, 0), norms, tf.onesLike(norms));
      return feat.div(safe) as tf.Tensor4D;
    });
    const flat = out.dataSync() as Float32Array;
    out.dispose();
    const stride = dims.w * dims.h * dims.c;
    batch.forEach((p, i) => {
      writer.append(flat.slice(i * stride, (i + 1) * stride), {
        imageId: p.imageId,
        path: p.source,
      });
    });
  };

  for (const source of images) {
    let pixels: Float32Array;
    try {
      const decoded = decodeNetpbm(fs.readFileSync(source));
      let samples = matchChannels(decoded, ic);
      if (decoded.width !== iw || decoded.height !== ih) {
        if (config.resize === 'exact') {
          throw new Error(
            `image is ${decoded.width}x${decoded.height}, model wants ${iw}x${ih}`,
          );
        }
        const resized = tf.tidy(() =>
          tf.image.resizeBilinear(
            tf.tensor3d(samples, [decoded.height, decoded.width, ic]),
            [ih, iw],
          ),
        );
        samples = resized.dataSync() as Float32Array;
        resized.dispose();
      }
      pixels = samples;
    } catch (e) {
      console.warn(`warning: skipping ${source}: ${(e as Error).message}`);
      skipped.push(source);
      continue;
    }
    const count = seen.get(source) ?? 0;
    seen.set(source, count + 1);
    pending.push({
      imageId: count === 0 ? source : `${source}#${count + 1}`,
      source,
      pixels,
    });
    if (pending.length >= config.batchSize) flush();
  }
  flush();

  const { recordCount, byteCount } = writer.close();
  return { storePath: outPath, recordCount, skipped, byteCount, dims };
}
