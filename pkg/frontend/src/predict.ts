import * as fs from 'fs';
import * as tf from '@tensorflow/tfjs';
import * as path from 'path';
import { featuresToGrid, PredictionRow, writePredictions } from './data';
import { applyNorm, ChannelNorm, loadModelArtifact, predictLevels } from './model';
import { LoadedDataset } from './types';

export interface PredictOptions {
  fallbackAllOn: boolean;
  verdictsPath?: string; // core-produced per-episode feasibility verdicts
}

/**
 * Emits one prediction row per record from the mobility features only.
 *
 * With fallbackAllOn, episodes the core already marked infeasible (a
 * verdicts file from `cfcdim cnn eval-predictions`) are replaced by the
 * all-on configuration; the default leaves rejections visible.
 */
export async function predictToFile(
  ds: LoadedDataset,
  modelDir: string,
  outPath: string,
  opts: Partial<PredictOptions> = {},
): Promise<number> {
  const { header } = ds;
  const L = header.num_links;
  const levels = header.quantization_levels;
  const model = await loadModelArtifact(modelDir);
  const grid = featuresToGrid(header, ds.records);
  const normPath = path.join(modelDir, 'norm.json');
  if (fs.existsSync(normPath)) {
    const norm = JSON.parse(fs.readFileSync(normPath, 'utf8')) as ChannelNorm;
    applyNorm(grid.x, grid.shape, norm);
  }
  const x = tf.tensor4d(grid.x, grid.shape);
  const { a, b } = await predictLevels(model, x);
  x.dispose();
  model.dispose();
  let rows: PredictionRow[] = ds.records.map((rec, i) => ({
    record_id: rec.record_id,
    a_levels: Array.from(a.subarray(i * L, (i + 1) * L)),
    b_levels: Array.from(b.subarray(i * L, (i + 1) * L)),
  }));
  if (opts.fallbackAllOn && opts.verdictsPath) {
    const rejected = loadRejectedEpisodes(opts.verdictsPath);
    const allOn = new Array(L).fill(levels - 1);
    rows = rows.map((row, i) =>
      rejected.has(ds.records[i].episode_id)
        ? { record_id: row.record_id, a_levels: [...allOn], b_levels: [...allOn] }
        : row,
    );
  }
  writePredictions(outPath, rows, L, levels);
  return rows.length;
}

function loadRejectedEpisodes(path: string): Set<string> {
  const doc = JSON.parse(fs.readFileSync(path, 'utf8'));
  const episodes = doc.details?.episodes ?? doc.episodes ?? [];
  const rejected = new Set<string>();
  for (const ep of episodes) {
    if (ep.feasible === false) rejected.add(ep.episode_id);
  }
  return rejected;
}
