import * as fs from 'fs';
import * as tf from '@tensorflow/tfjs';
import { cellMask, featuresToGrid, kfold, shuffledIndices } from './data';
import { majorityBaselineF1, microF1 } from './metrics';
import {
  applyNorm,
  buildModel,
  ChannelNorm,
  channelNorm,
  oneHotLabels,
  predictLevels,
  saveModelArtifact,
} from './model';
import { DEFAULT_HYPERPARAMS, Hyperparams, LoadedDataset } from './types';

export interface FoldScore {
  fold: number;
  f_score: number;
}

/**
 * Training targets: each record is labeled with the cheapest feasible
 * strategy observed for its trace and interval; the stored all-off label
 * survives only where no feasible strategy is known for that trace. Multiple
 * strategies associate with the same mobility input, and the trainer's
 * job is to emit the cost-minimizing feasible one.
 */
export function deriveTargets(ds: LoadedDataset): { a: Int32Array; b: Int32Array } {
  const L = ds.header.num_links;
  const best = new Map<string, { a: number[]; b: number[] }>();
  for (const rec of ds.records) {
    if (!rec.feasible) continue;
    const key = `${rec.trace_ref}#${rec.interval}`;
    if (!best.has(key)) {
      best.set(key, { a: rec.a_levels, b: rec.b_levels });
    }
  }
  const a = new Int32Array(ds.records.length * L);
  const b = new Int32Array(ds.records.length * L);
  ds.records.forEach((rec, n) => {
    const label = best.get(`${rec.trace_ref}#${rec.interval}`) ?? {
      a: rec.a_levels,
      b: rec.b_levels,
    };
    for (let l = 0; l < L; l++) {
      a[n * L + l] = label.a[l];
      b[n * L + l] = label.b[l];
    }
  });
  return { a, b };
}

export interface TrainReport {
  records: number;
  folds: FoldScore[];
  mean_f_score: number;
  majority_f_score: number;
  epochs: number;
  elapsed_s: number;
}

function gatherLabels(labels: Int32Array, slots: number, idx: number[]): Int32Array {
  const out = new Int32Array(idx.length * slots);
  idx.forEach((src, dst) => {
    out.set(labels.subarray(src * slots, (src + 1) * slots), dst * slots);
  });
  return out;
}

function gatherRaw(
  flat: Float32Array,
  shape: [number, number, number, number],
  idx: number[],
): { x: Float32Array; shape: [number, number, number, number] } {
  const [, h, w, c] = shape;
  const stride = h * w * c;
  const out = new Float32Array(idx.length * stride);
  idx.forEach((src, dst) => {
    out.set(flat.subarray(src * stride, (src + 1) * stride), dst * stride);
  });
  return { x: out, shape: [idx.length, h, w, c] };
}

async function fitOnce(
  ds: LoadedDataset,
  trainIdx: number[],
  hyper: Hyperparams,
): Promise<{ model: tf.LayersModel; norm: ChannelNorm }> {
  const { header } = ds;
  const L = header.num_links;
  const levels = header.quantization_levels;
  const grid = featuresToGrid(header, ds.records);
  const labels = deriveTargets(ds);
  // seeded pre-shuffle + shuffle:false keeps epochs reproducible
  const order = shuffledIndices(trainIdx.length, hyper.seed + 17).map((i) => trainIdx[i]);
  const raw = gatherRaw(grid.x, grid.shape, order);
  const norm = channelNorm(raw.x, raw.shape, cellMask(header.grid_layout));
  applyNorm(raw.x, raw.shape, norm);
  const x = tf.tensor4d(raw.x, raw.shape);
  const ya = oneHotLabels(gatherLabels(labels.a, L, order), order.length, L, levels);
  const yb = oneHotLabels(gatherLabels(labels.b, L, order), order.length, L, levels);
  const model = buildModel(header.grid_layout, header.pm_features.length, L, levels, hyper);
  await model.fit(x, [ya, yb], {
    epochs: hyper.epochs,
    batchSize: hyper.batchSize,
    shuffle: false,
    verbose: 0,
  });
  x.dispose();
  ya.dispose();
  yb.dispose();
  return { model, norm };
}

export async function evaluateFold(
  ds: LoadedDataset,
  model: tf.LayersModel,
  valIdx: number[],
  norm?: ChannelNorm,
): Promise<number> {
  const { header } = ds;
  const L = header.num_links;
  const grid = featuresToGrid(header, ds.records);
  const labels = deriveTargets(ds);
  const raw = gatherRaw(grid.x, grid.shape, valIdx);
  if (norm) applyNorm(raw.x, raw.shape, norm);
  const x = tf.tensor4d(raw.x, raw.shape);
  const { a, b } = await predictLevels(model, x);
  x.dispose();
  const truthA = gatherLabels(labels.a, L, valIdx);
  const truthB = gatherLabels(labels.b, L, valIdx);
  const preds = new Int32Array(a.length + b.length);
  preds.set(a);
  preds.set(b, a.length);
  const truth = new Int32Array(truthA.length + truthB.length);
  truth.set(truthA);
  truth.set(truthB, truthA.length);
  return microF1(preds, truth);
}

export interface TrainOptions {
  folds: number; // 1 = single holdout split
  holdout: number; // fraction for folds = 1
  hyper: Hyperparams;
  modelDir?: string;
  metricsOut?: string;
}

export async function trainAndEvaluate(
  ds: LoadedDataset,
  opts: Partial<TrainOptions> = {},
): Promise<TrainReport> {
  const folds = opts.folds ?? 1;
  const holdout = opts.holdout ?? 0.2;
  const hyper = { ...DEFAULT_HYPERPARAMS, ...(opts.hyper ?? {}) };
  const n = ds.records.length;
  const L = ds.header.num_links;
  const levels = ds.header.quantization_levels;
  const started = Date.now();

  let splits: [number[], number[]][];
  if (folds >= 2) {
    splits = kfold(n, folds, hyper.seed);
  } else {
    const idx = shuffledIndices(n, hyper.seed);
    const nVal = Math.max(1, Math.round(n * holdout));
    splits = [[idx.slice(nVal), idx.slice(0, nVal)]];
  }

  const labels = deriveTargets(ds);
  const scores: FoldScore[] = [];
  let majoritySum = 0;
  let lastModel: tf.LayersModel | null = null;
  let lastNorm: ChannelNorm | null = null;
  for (let f = 0; f < splits.length; f++) {
    const [trainIdx, valIdx] = splits[f];
    const { model, norm } = await fitOnce(ds, trainIdx, hyper);
    const f1 = await evaluateFold(ds, model, valIdx, norm);
    scores.push({ fold: f, f_score: f1 });
    const trainJoint = joinHeads(labels, L, trainIdx);
    const valJoint = joinHeads(labels, L, valIdx);
    majoritySum += majorityBaselineF1(trainJoint, valJoint, 2 * L, levels);
    if (lastModel !== null) lastModel.dispose();
    lastModel = model;
    lastNorm = norm;
  }
  const report: TrainReport = {
    records: n,
    folds: scores,
    mean_f_score: scores.reduce((s, v) => s + v.f_score, 0) / scores.length,
    majority_f_score: majoritySum / scores.length,
    epochs: hyper.epochs,
    elapsed_s: (Date.now() - started) / 1000,
  };
  if (opts.modelDir && lastModel) {
    await saveModelArtifact(lastModel, opts.modelDir);
    fs.writeFileSync(
      require('path').join(opts.modelDir, 'norm.json'),
      JSON.stringify(lastNorm) + '\n',
    );
  }
  if (opts.metricsOut) {
    fs.writeFileSync(opts.metricsOut, JSON.stringify(report, null, 2) + '\n');
  }
  if (lastModel) lastModel.dispose();
  return report;
}

function joinHeads(
  labels: { a: Int32Array; b: Int32Array },
  L: number,
  idx: number[],
): Int32Array {
  // per record: a levels then b levels, matching the 2L output slots
  const out = new Int32Array(idx.length * 2 * L);
  idx.forEach((src, dst) => {
    out.set(labels.a.subarray(src * L, (src + 1) * L), dst * 2 * L);
    out.set(labels.b.subarray(src * L, (src + 1) * L), dst * 2 * L + L);
  });
  return out;
}
