import * as tf from '@tensorflow/tfjs';
import { cellMask } from './data';
import { GridLayout, Hyperparams } from './types';

interface FixedMaskConfig {
  maskData: number[];
  height: number;
  width: number;
  name?: string;
}

/**
 * Multiplies activations by a constant [1,H,W,1] binary mask so lattice
 * cells that map to no road link can never influence the outputs.
 */
class FixedMask extends tf.layers.Layer {
  static className = 'FixedMask';
  private readonly maskData: number[];
  private readonly height: number;
  private readonly width: number;
  private mask: tf.Tensor4D | null = null;

  constructor(config: FixedMaskConfig) {
    super({ name: config.name, trainable: false });
    this.maskData = config.maskData;
    this.height = config.height;
    this.width = config.width;
  }

  private maskTensor(): tf.Tensor4D {
    if (this.mask === null) {
      this.mask = tf.keep(
        tf.tensor4d(this.maskData, [1, this.height, this.width, 1]),
      ) as tf.Tensor4D;
    }
    return this.mask;
  }

  call(inputs: tf.Tensor | tf.Tensor[]): tf.Tensor {
    const input = Array.isArray(inputs) ? inputs[0] : inputs;
    return tf.tidy(() => input.mul(this.maskTensor()));
  }

  computeOutputShape(inputShape: tf.Shape | tf.Shape[]): tf.Shape {
    return inputShape as tf.Shape;
  }

  getConfig(): tf.serialization.ConfigDict {
    return {
      ...super.getConfig(),
      maskData: this.maskData,
      height: this.height,
      width: this.width,
    };
  }
}
tf.serialization.registerClass(FixedMask);

/**
 * Convolution / nonlinearity / max-pooling stacks over the link lattice,
 * then two per-link classification heads (replication level, keep level),
 * each a softmax over the quantization levels.
 */
export function buildModel(
  layout: GridLayout,
  channels: number,
  numLinks: number,
  levels: number,
  hyper: Hyperparams,
): tf.LayersModel {
  const input = tf.input({ shape: [layout.height, layout.width, channels] });
  const mask = new FixedMask({
    maskData: Array.from(cellMask(layout)),
    height: layout.height,
    width: layout.width,
    name: 'cell_mask',
  });
  let x = mask.apply(input) as tf.SymbolicTensor;
  let h = layout.height;
  let w = layout.width;
  hyper.convFilters.forEach((filters, i) => {
    x = tf.layers
      .conv2d({
        filters,
        kernelSize: hyper.kernelSize,
        padding: 'same',
        activation: 'relu',
        kernelInitializer: tf.initializers.glorotUniform({ seed: hyper.seed + i }),
        name: `conv${i + 1}`,
      })
      .apply(x) as tf.SymbolicTensor;
    if (h >= hyper.poolSize && w >= hyper.poolSize) {
      x = tf.layers
        .maxPooling2d({ poolSize: hyper.poolSize, name: `pool${i + 1}` })
        .apply(x) as tf.SymbolicTensor;
      h = Math.floor(h / hyper.poolSize);
      w = Math.floor(w / hyper.poolSize);
    }
  });
  x = tf.layers.flatten().apply(x) as tf.SymbolicTensor;
  x = tf.layers
    .dense({
      units: hyper.denseUnits,
      activation: 'relu',
      kernelInitializer: tf.initializers.glorotUniform({ seed: hyper.seed + 100 }),
      name: 'shared_dense',
    })
    .apply(x) as tf.SymbolicTensor;
  const heads = ['a_levels', 'b_levels'].map((name, i) => {
    const logits = tf.layers
      .dense({
        units: numLinks * levels,
        kernelInitializer: tf.initializers.glorotUniform({ seed: hyper.seed + 200 + i }),
        name: `${name}_logits`,
      })
      .apply(x) as tf.SymbolicTensor;
    const shaped = tf.layers
      .reshape({ targetShape: [numLinks, levels], name: `${name}_grid` })
      .apply(logits) as tf.SymbolicTensor;
    return tf.layers.softmax({ axis: -1, name }).apply(shaped) as tf.SymbolicTensor;
  });
  const model = tf.model({ inputs: input, outputs: heads });
  // start from the all-on configuration: bias both heads toward the top
  // level so undecided inputs resolve to the maximal (always-feasible-by-
  // hypothesis) strategy instead of a rejected middle ground
  for (const name of ['a_levels', 'b_levels']) {
    const layer = model.getLayer(`${name}_logits`);
    const [kernel, bias] = layer.getWeights();
    const biasData = bias.dataSync().slice();
    for (let l = 0; l < numLinks; l++) {
      biasData[l * levels + (levels - 1)] = 2.0;
    }
    layer.setWeights([kernel, tf.tensor1d(Float32Array.from(biasData))]);
  }
  model.compile({
    optimizer: tf.train.adam(hyper.learningRate),
    loss: ['categoricalCrossentropy', 'categoricalCrossentropy'],
  });
  return model;
}

export interface ChannelNorm {
  mean: number[];
  std: number[];
}

/** Per-channel mean/std over mapped cells of the training tensors. */
export function channelNorm(
  x: Float32Array,
  shape: [number, number, number, number],
  mask: Float32Array,
): ChannelNorm {
  const [n, h, w, c] = shape;
  const mean = new Array(c).fill(0);
  const std = new Array(c).fill(0);
  let cells = 0;
  for (let i = 0; i < h * w; i++) if (mask[i] > 0) cells++;
  const count = n * cells;
  for (let s = 0; s < n; s++) {
    for (let i = 0; i < h * w; i++) {
      if (mask[i] === 0) continue;
      for (let ch = 0; ch < c; ch++) {
        mean[ch] += x[(s * h * w + i) * c + ch];
      }
    }
  }
  for (let ch = 0; ch < c; ch++) mean[ch] /= Math.max(count, 1);
  for (let s = 0; s < n; s++) {
    for (let i = 0; i < h * w; i++) {
      if (mask[i] === 0) continue;
      for (let ch = 0; ch < c; ch++) {
        const d = x[(s * h * w + i) * c + ch] - mean[ch];
        std[ch] += d * d;
      }
    }
  }
  for (let ch = 0; ch < c; ch++) {
    std[ch] = Math.sqrt(std[ch] / Math.max(count, 1)) || 1.0;
  }
  return { mean, std };
}

/** In-place standardization; the mask layer downstream re-zeroes pad cells. */
export function applyNorm(
  x: Float32Array,
  shape: [number, number, number, number],
  norm: ChannelNorm,
): void {
  const [n, h, w, c] = shape;
  for (let s = 0; s < n * h * w; s++) {
    for (let ch = 0; ch < c; ch++) {
      x[s * c + ch] = (x[s * c + ch] - norm.mean[ch]) / norm.std[ch];
    }
  }
}

/** argmax over the level axis -> [n * links] integer levels per head. */
export async function predictLevels(
  model: tf.LayersModel,
  x: tf.Tensor4D,
  batchSize = 256,
): Promise<{ a: Int32Array; b: Int32Array }> {
  const [aProbs, bProbs] = model.predict(x, { batchSize }) as tf.Tensor3D[];
  const a = (await aProbs.argMax(-1).data()) as Int32Array;
  const b = (await bProbs.argMax(-1).data()) as Int32Array;
  aProbs.dispose();
  bProbs.dispose();
  return { a: Int32Array.from(a), b: Int32Array.from(b) };
}

export function oneHotLabels(
  labels: Int32Array,
  n: number,
  numLinks: number,
  levels: number,
): tf.Tensor3D {
  return tf.tidy(() =>
    tf.oneHot(tf.tensor2d(labels, [n, numLinks], 'int32'), levels).asType('float32'),
  ) as tf.Tensor3D;
}

export async function saveModelArtifact(model: tf.LayersModel, dir: string): Promise<void> {
  const fs = await import('fs');
  const path = await import('path');
  fs.mkdirSync(dir, { recursive: true });
  await model.save(
    tf.io.withSaveHandler(async (artifacts) => {
      fs.writeFileSync(
        path.join(dir, 'model.json'),
        JSON.stringify({
          modelTopology: artifacts.modelTopology,
          weightSpecs: artifacts.weightSpecs,
          format: artifacts.format,
          generatedBy: artifacts.generatedBy,
        }),
      );
      fs.writeFileSync(
        path.join(dir, 'weights.bin'),
        Buffer.from(artifacts.weightData as ArrayBuffer),
      );
      return { modelArtifactsInfo: { dateSaved: new Date(), modelTopologyType: 'JSON' } };
    }),
  );
}

export async function loadModelArtifact(dir: string): Promise<tf.LayersModel> {
  const fs = await import('fs');
  const path = await import('path');
  const meta = JSON.parse(fs.readFileSync(path.join(dir, 'model.json'), 'utf8'));
  const weightData = fs.readFileSync(path.join(dir, 'weights.bin'));
  return tf.loadLayersModel(
    tf.io.fromMemory({
      modelTopology: meta.modelTopology,
      weightSpecs: meta.weightSpecs,
      weightData: weightData.buffer.slice(
        weightData.byteOffset,
        weightData.byteOffset + weightData.byteLength,
      ),
    }),
  );
}
