export interface GridLayout {
  height: number;
  width: number;
  cells: [number, number][]; // link id -> (row, col)
}

export interface DatasetHeader {
  schema_version: number;
  feature_order: string[];
  pm_features: string[];
  grid_layout: GridLayout;
  alpha_target: number;
  quantization_levels: number;
  num_links: number;
  num_intervals: number;
}

export interface DatasetRecord {
  record_id: string;
  episode_id: string;
  trace_ref: string;
  interval: number;
  features: number[]; // per link, header.feature_order flattened
  a_levels: number[];
  b_levels: number[];
  feasible: boolean;
}

export interface LoadedDataset {
  header: DatasetHeader;
  records: DatasetRecord[];
}

export interface Hyperparams {
  convFilters: number[];
  kernelSize: number;
  poolSize: number;
  denseUnits: number;
  epochs: number;
  batchSize: number;
  learningRate: number;
  seed: number;
}

// sized for CPU-only backends: a 10^4-record training stays in minutes.
// Deeper stacks (e.g. 32/64/64 filters) are a --config away when a native
// backend is available.
export const DEFAULT_HYPERPARAMS: Hyperparams = {
  convFilters: [8, 16],
  kernelSize: 3,
  poolSize: 2,
  denseUnits: 64,
  epochs: 8,
  batchSize: 256,
  learningRate: 2e-3,
  seed: 0,
};

export class DataFormatError extends Error {}
