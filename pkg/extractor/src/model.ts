/**
 * Model loading and layer inspection. Models are tfjs layers-model
 * directories (model.json + weights.bin) read through a local file
 * handler, so no fetch shim is needed in Node.
 */

import * as fs from 'fs';
import * as path from 'path';
import * as tf from '@tensorflow/tfjs';

const WEIGHTS_FILE = 'weights.bin';
const MODEL_FILE = 'model.json';

class DirHandler implements tf.io.IOHandler {
  constructor(private dir: string) {}

  async save(artifacts: tf.io.ModelArtifacts): Promise<tf.io.SaveResult> {
    fs.mkdirSync(this.dir, { recursive: true });
    const manifest = [
      { paths: [WEIGHTS_FILE], weights: artifacts.weightSpecs },
    ];
    const doc = {
      modelTopology: artifacts.modelTopology,
      format: 'layers-model',
      generatedBy: 'dtm-extract',
      convertedBy: null,
      weightsManifest: manifest,
    };
    fs.writeFileSync(path.join(this.dir, MODEL_FILE), JSON.stringify(doc));
    fs.writeFileSync(
      path.join(this.dir, WEIGHTS_FILE),
      Buffer.from(artifacts.weightData as ArrayBuffer),
    );
    return {
      modelArtifactsInfo: {
        dateSaved: new Date(),
        modelTopologyType: 'JSON',
      },
    };
  }

  async load(): Promise<tf.io.ModelArtifacts> {
    const docPath = path.join(this.dir, MODEL_FILE);
    if (!fs.existsSync(docPath)) {
      throw new Error(`no ${MODEL_FILE} under ${this.dir}`);
    }
    const doc = JSON.parse(fs.readFileSync(docPath, 'utf-8'));
    const weightSpecs: tf.io.WeightsManifestEntry[] = [];
    const buffers: Buffer[] = [];
    for (const group of doc.weightsManifest) {
      weightSpecs.push(...group.weights);
      for (const rel of group.paths) {
        buffers.push(fs.readFileSync(path.join(this.dir, rel)));
      }
    }
    const weights = Buffer.concat(buffers);
    return {
      modelTopology: doc.modelTopology,
      weightSpecs,
      weightData: weights.buffer.slice(
        weights.byteOffset,
        weights.byteOffset + weights.byteLength,
      ),
    };
  }
}

export function dirIO(dir: string): tf.io.IOHandler {
  return new DirHandler(dir);
}

export async function loadModel(dir: string): Promise<tf.LayersModel> {
  return tf.loadLayersModel(dirIO(dir));
}

export async function saveModel(model: tf.LayersModel, dir: string): Promise<void> {
  await model.save(dirIO(dir));
}

export interface LayerShape {
  name: string;
  h: number;
  w: number;
  c: number;
}

/** Layers with a spatial (batch, h, w, c) output: the feature-layer candidates. */
export function spatialLayers(model: tf.LayersModel): LayerShape[] {
  const out: LayerShape[] = [];
  for (const layer of model.layers) {
    const shape = layer.outputShape;
    if (Array.isArray(shape) && shape.length === 4 && !Array.isArray(shape[0])) {
      const [, h, w, c] = shape as number[];
      out.push({ name: layer.name, h, w, c });
    }
  }
  return out;
}

/** Truncate the model at the named layer, exemplar-style. */
export function featureSubmodel(model: tf.LayersModel, layerName: string): tf.LayersModel {
  const layer = model.getLayer(layerName);
  return tf.model({ inputs: model.inputs, outputs: layer.output });
}

export interface ModelReport {
  layers: LayerShape[];
  input: { h: number; w: number; c: number };
  /** Present when a feature layer was named: its raw and post-pool shapes. */
  selected?: { name: string; raw: LayerShape; pooled: LayerShape };
}

export function describeModel(
  model: tf.LayersModel,
  layerName?: string,
  poolKernel = 1,
  poolStride = poolKernel,
): ModelReport {
  const [, ih, iw, ic] = model.inputs[0].shape as number[];
  const report: ModelReport = {
    layers: spatialLayers(model),
    input: { h: ih, w: iw, c: ic },
  };
  if (layerName !== undefined) {
    const raw = report.layers.find((l) => l.name === layerName);
    if (!raw) {
      throw new Error(
        `layer ${JSON.stringify(layerName)} is not a spatial layer of this model`,
      );
    }
    report.selected = {
      name: layerName,
      raw,
      pooled: {
        name: layerName,
        h: Math.floor((raw.h - poolKernel) / poolStride) + 1,
        w: Math.floor((raw.w - poolKernel) / poolStride) + 1,
        c: raw.c,
      },
    };
  }
  return report;
}
