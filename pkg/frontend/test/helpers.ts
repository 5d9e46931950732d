import * as fs from 'fs';
import * as os from 'os';
import * as path from 'path';
import { DatasetHeader, DatasetRecord, LoadedDataset } from '../src/types';

export const FEATURE_ORDER = [
  'mean_speed',
  'mean_node_count',
  'contact_rate',
  'mean_contact_duration',
  'mean_content_holders',
  'mean_concurrent_transmissions',
];

/** 2x1-block lattice layout: 7 links on a 3x5 cell grid. */
export function smallHeader(): DatasetHeader {
  return {
    schema_version: 1,
    feature_order: [...FEATURE_ORDER],
    pm_features: FEATURE_ORDER.slice(0, 2),
    grid_layout: {
      height: 3,
      width: 5,
      cells: [
        [0, 1], [0, 3], [2, 1], [2, 3],
        [1, 0], [1, 2], [1, 4],
      ] as [number, number][],
    },
    alpha_target: 0.9,
    quantization_levels: 11,
    num_links: 7,
    num_intervals: 2,
  };
}

export function makeRecord(
  header: DatasetHeader,
  i: number,
  levels: { a: number; b: number },
  featureFill?: (link: number, feat: number) => number,
): DatasetRecord {
  const L = header.num_links;
  const F = header.feature_order.length;
  const features: number[] = [];
  for (let l = 0; l < L; l++) {
    for (let f = 0; f < F; f++) {
      features.push(featureFill ? featureFill(l, f) : (l + 1) * 0.1 + f);
    }
  }
  return {
    record_id: `e${String(i).padStart(6, '0')}t${i % header.num_intervals}`,
    episode_id: `e${String(i).padStart(6, '0')}`,
    trace_ref: 'trace00000',
    interval: i % header.num_intervals,
    features,
    a_levels: new Array(L).fill(levels.a),
    b_levels: new Array(L).fill(levels.b),
    feasible: levels.a > 0,
  };
}

export function constantDataset(n: number, a = 10, b = 10): LoadedDataset {
  const header = smallHeader();
  const rng = mulberry(7);
  const records = Array.from({ length: n }, (_, i) =>
    makeRecord(header, i, { a, b }, (l, f) => rng() * 3 + l * 0.05 + f * 0.01),
  );
  return { header, records };
}

export function writeDatasetFile(ds: LoadedDataset): string {
  const dir = fs.mkdtempSync(path.join(os.tmpdir(), 'cnn-test-'));
  const file = path.join(dir, 'data.ndjson');
  const lines = [JSON.stringify(ds.header)];
  for (const rec of ds.records) lines.push(JSON.stringify(rec));
  fs.writeFileSync(file, lines.join('\n') + '\n');
  return file;
}

function mulberry(seed: number): () => number {
  let s = seed >>> 0;
  return () => {
    s = (s + 0x6d2b79f5) >>> 0;
    let t = s;
    t = Math.imul(t ^ (t >>> 15), t | 1);
    t ^= t + Math.imul(t ^ (t >>> 7), t | 61);
    return ((t ^ (t >>> 14)) >>> 0) / 4294967296;
  };
}
