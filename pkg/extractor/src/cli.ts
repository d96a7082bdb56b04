#!/usr/bin/env node
/** Command-line front end: extract | describe-model. */

import yargs from 'yargs';
import { hideBin } from 'yargs/helpers';

import { loadConfig, loadImageList } from './config';
import { extractToStore } from './extract';
import { describeModel, loadModel } from './model';

async function runExtract(argv: { list: string; config: string; out: string }) {
  const config = loadConfig(argv.config);
  const images = loadImageList(argv.list);
  const summary = await extractToStore(images, config, argv.out);
  console.log(
    `wrote ${summary.storePath}: ${summary.recordCount} records, ` +
    `dims w=${summary.dims.w} h=${summary.dims.h} c=${summary.dims.c}, ` +
    `${summary.byteCount} bytes` +
    (summary.skipped.length ? `, skipped ${summary.skipped.length}` : ''),
  );
}

async function runDescribe(argv: {
  model?: string;
  config?: string;
  layer?: string;
  poolKernel?: number;
  poolStride?: number;
}) {
  let modelDir = argv.model;
  let layer = argv.layer;
  let kernel = argv.poolKernel ?? 1;
  let stride = argv.poolStride ?? kernel;
  if (argv.config) {
    const config = loadConfig(argv.config);
    modelDir = modelDir ?? config.model;
    layer = layer ?? config.layer;
    kernel = argv.poolKernel ?? config.poolKernel;
    stride = argv.poolStride ?? config.poolStride;
  }
  if (!modelDir) {
    throw new Error('provide --model or --config');
  }
  const model = await loadModel(modelDir);
  const report = describeModel(model, layer, kernel, stride);
  console.log(`input: w=${report.input.w} h=${report.input.h} c=${report.input.c}`);
  for (const l of report.layers) {
    console.log(`${l.name}: w=${l.w} h=${l.h} c=${l.c}`);
  }
  if (report.selected) {
    const { raw, pooled } = report.selected;
    console.log(
      `selected ${report.selected.name}: raw w=${raw.w} h=${raw.h} c=${raw.c}, ` +
      `pooled w=${pooled.w} h=${pooled.h} c=${pooled.c}`,
    );
  }
}

function fail(e: unknown): void {
  console.error(`error: ${(e as Error).message}`);
  process.exitCode = 1;
}

yargs(hideBin(process.argv))
  .command(
    'extract',
    'convert an image list into a record store',
    (y) =>
      y
        .option('list', { type: 'string', demandOption: true, describe: 'text file of image paths' })
        .option('config', { type: 'string', demandOption: true, describe: 'extraction config JSON' })
        .option('out', { type: 'string', demandOption: true, describe: 'output store path' }),
    (argv) => runExtract(argv as any).catch(fail),
  )
  .command(
    'describe-model',
    'report candidate feature layers and their shapes',
    (y) =>
      y
        .option('model', { type: 'string', describe: 'model directory' })
        .option('config', { type: 'string', describe: 'extraction config JSON' })
        .option('layer', { type: 'string', describe: 'feature layer to report pooled dims for' })
        .option('pool-kernel', { type: 'number' })
        .option('pool-stride', { type: 'number' }),
    (argv) => runDescribe(argv as any).catch(fail),
  )
  .demandCommand(1)
  .strict()
  .parse();
