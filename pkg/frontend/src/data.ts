import * as fs from 'fs';
import * as zlib from 'zlib';
import {
  DataFormatError,
  DatasetHeader,
  DatasetRecord,
  GridLayout,
  LoadedDataset,
} from './types';

export function loadDataset(path: string): LoadedDataset {
  let raw = fs.readFileSync(path);
  if (raw.length >= 2 && raw[0] === 0x1f && raw[1] === 0x8b) {
    raw = zlib.gunzipSync(raw);
  }
  const lines = raw.toString('utf8').split('\n').filter((ln) => ln.trim().length > 0);
  if (lines.length === 0) {
    throw new DataFormatError('dataset file is empty');
  }
  const header = JSON.parse(lines[0]) as DatasetHeader;
  validateHeader(header);
  const records: DatasetRecord[] = [];
  const expected = header.num_links * header.feature_order.length;
  for (let i = 1; i < lines.length; i++) {
    const rec = JSON.parse(lines[i]) as DatasetRecord;
    if (rec.features.length !== expected) {
      throw new DataFormatError(
        `record ${rec.record_id}: ${rec.features.length} features, expected ${expected}`,
      );
    }
    records.push(rec);
  }
  return { header, records };
}

export function validateHeader(header: DatasetHeader): void {
  if (header.schema_version !== 1) {
    throw new DataFormatError(`unsupported dataset schema ${header.schema_version}`);
  }
  const layout = header.grid_layout;
  if (!layout || layout.cells.length !== header.num_links) {
    throw new DataFormatError('grid_layout must map every link to exactly one cell');
  }
  const seen = new Set<string>();
  for (const [r, c] of layout.cells) {
    if (r < 0 || r >= layout.height || c < 0 || c >= layout.width) {
      throw new DataFormatError(`cell (${r},${c}) outside ${layout.height}x${layout.width}`);
    }
    const key = `${r},${c}`;
    if (seen.has(key)) {
      throw new DataFormatError(`two links share cell (${r},${c})`);
    }
    seen.add(key);
  }
  // mobility features must be a prefix of the per-link feature block:
  // the model consumes them as input channels and nothing else
  header.pm_features.forEach((name, i) => {
    if (header.feature_order[i] !== name) {
      throw new DataFormatError(
        `pm_features must prefix feature_order (got ${name} at ${i})`,
      );
    }
  });
}

/** Dense [N, H, W, C] tensor data from the mobility columns of each record. */
export function featuresToGrid(
  header: DatasetHeader,
  records: DatasetRecord[],
): { x: Float32Array; shape: [number, number, number, number] } {
  const { height, width, cells } = header.grid_layout;
  const channels = header.pm_features.length;
  const perLink = header.feature_order.length;
  const x = new Float32Array(records.length * height * width * channels);
  records.forEach((rec, n) => {
    const base = n * height * width * channels;
    cells.forEach(([r, c], link) => {
      for (let ch = 0; ch < channels; ch++) {
        x[base + (r * width + c) * channels + ch] = rec.features[link * perLink + ch];
      }
    });
  });
  return { x, shape: [records.length, height, width, channels] };
}

export function labelArrays(
  header: DatasetHeader,
  records: DatasetRecord[],
): { a: Int32Array; b: Int32Array } {
  const L = header.num_links;
  const a = new Int32Array(records.length * L);
  const b = new Int32Array(records.length * L);
  records.forEach((rec, n) => {
    for (let l = 0; l < L; l++) {
      a[n * L + l] = rec.a_levels[l];
      b[n * L + l] = rec.b_levels[l];
    }
  });
  return { a, b };
}

export function cellMask(layout: GridLayout): Float32Array {
  const mask = new Float32Array(layout.height * layout.width);
  for (const [r, c] of layout.cells) {
    mask[r * layout.width + c] = 1.0;
  }
  return mask;
}

/** mulberry32: tiny deterministic PRNG for shuffles and folds. */
export function seededRng(seed: number): () => number {
  let s = seed >>> 0;
  return () => {
    s = (s + 0x6d2b79f5) >>> 0;
    let t = s;
    t = Math.imul(t ^ (t >>> 15), t | 1);
    t ^= t + Math.imul(t ^ (t >>> 7), t | 61);
    return ((t ^ (t >>> 14)) >>> 0) / 4294967296;
  };
}

export function shuffledIndices(n: number, seed: number): number[] {
  const rng = seededRng(seed);
  const idx = Array.from({ length: n }, (_, i) => i);
  for (let i = n - 1; i > 0; i--) {
    const j = Math.floor(rng() * (i + 1));
    [idx[i], idx[j]] = [idx[j], idx[i]];
  }
  return idx;
}

/** k near-equal shuffled folds; returns [train, validation] index pairs. */
export function kfold(n: number, k: number, seed: number): [number[], number[]][] {
  if (k < 2 || k > n) {
    throw new DataFormatError(`k must satisfy 2 <= k <= ${n}, got ${k}`);
  }
  const idx = shuffledIndices(n, seed);
  const base = Math.floor(n / k);
  const extra = n % k;
  const folds: number[][] = [];
  let pos = 0;
  for (let f = 0; f < k; f++) {
    const size = base + (f < extra ? 1 : 0);
    folds.push(idx.slice(pos, pos + size));
    pos += size;
  }
  return folds.map((val, f) => {
    const train = folds.filter((_, g) => g !== f).flat();
    return [train.sort((p, q) => p - q), [...val].sort((p, q) => p - q)];
  });
}

export interface PredictionRow {
  record_id: string;
  a_levels: number[];
  b_levels: number[];
}

export function writePredictions(
  path: string,
  rows: PredictionRow[],
  numLinks: number,
  quantizationLevels: number,
  source = 'cfcdim-cnn',
): void {
  const header = {
    type: 'header',
    schema_version: 1,
    num_links: numLinks,
    quantization_levels: quantizationLevels,
    source,
  };
  const lines = [JSON.stringify(header, Object.keys(header).sort())];
  for (const row of rows) {
    lines.push(
      JSON.stringify({
        record_id: row.record_id,
        a_levels: row.a_levels,
        b_levels: row.b_levels,
      }),
    );
  }
  fs.writeFileSync(path, lines.join('\n') + '\n');
}
