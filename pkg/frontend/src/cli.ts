import { loadDataset } from './data';
import { predictToFile } from './predict';
import { trainAndEvaluate } from './train';
import { DataFormatError, DEFAULT_HYPERPARAMS } from './types';

function parseFlags(argv: string[]): Map<string, string | boolean> {
  const flags = new Map<string, string | boolean>();
  for (let i = 0; i < argv.length; i++) {
    const arg = argv[i];
    if (!arg.startsWith('--')) {
      throw new DataFormatError(`unexpected argument ${arg}`);
    }
    const key = arg.slice(2);
    if (i + 1 < argv.length && !argv[i + 1].startsWith('--')) {
      flags.set(key, argv[++i]);
    } else {
      flags.set(key, true);
    }
  }
  return flags;
}

function req(flags: Map<string, string | boolean>, key: string): string {
  const v = flags.get(key);
  if (typeof v !== 'string') {
    throw new DataFormatError(`missing required --${key} VALUE`);
  }
  return v;
}

function num(flags: Map<string, string | boolean>, key: string, dflt: number): number {
  const v = flags.get(key);
  return typeof v === 'string' ? Number(v) : dflt;
}

const USAGE = `usage:
  cli.js train --dataset DATA.ndjson --model-dir DIR [--metrics-out M.json]
               [--folds N] [--holdout F] [--epochs N] [--batch-size N]
               [--learning-rate F] [--seed N]
  cli.js predict --dataset DATA.ndjson --model-dir DIR --out PREDS.ndjson
               [--fallback-all-on --verdicts VERDICTS.json]`;

async function main(): Promise<number> {
  const [cmd, ...rest] = process.argv.slice(2);
  try {
    const flags = parseFlags(rest);
    if (cmd === 'train') {
      const ds = loadDataset(req(flags, 'dataset'));
      const report = await trainAndEvaluate(ds, {
        folds: num(flags, 'folds', 1),
        holdout: num(flags, 'holdout', 0.2),
        modelDir: req(flags, 'model-dir'),
        metricsOut: flags.get('metrics-out') as string | undefined,
        hyper: {
          ...DEFAULT_HYPERPARAMS,
          epochs: num(flags, 'epochs', DEFAULT_HYPERPARAMS.epochs),
          batchSize: num(flags, 'batch-size', DEFAULT_HYPERPARAMS.batchSize),
          learningRate: num(flags, 'learning-rate', DEFAULT_HYPERPARAMS.learningRate),
          seed: num(flags, 'seed', DEFAULT_HYPERPARAMS.seed),
        },
      });
      console.log(
        `trained on ${report.records} records: mean F1 ${report.mean_f_score.toFixed(4)} ` +
          `(majority baseline ${report.majority_f_score.toFixed(4)}) in ${report.elapsed_s.toFixed(1)}s`,
      );
      return 0;
    }
    if (cmd === 'predict') {
      const ds = loadDataset(req(flags, 'dataset'));
      const n = await predictToFile(ds, req(flags, 'model-dir'), req(flags, 'out'), {
        fallbackAllOn: flags.get('fallback-all-on') === true,
        verdictsPath: flags.get('verdicts') as string | undefined,
      });
      console.log(`wrote ${n} prediction rows`);
      return 0;
    }
    console.error(USAGE);
    return 1;
  } catch (err) {
    console.error(`error: ${(err as Error).message}`);
    return 1;
  }
}

main().then((code) => {
  process.exitCode = code;
});
