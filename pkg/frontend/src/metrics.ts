/** Micro-averaged F1 over per-slot exact level matches.
 *
 * Every (record, slot) pair is one single-label decision, so pooled
 * TP equals the match count and FP = FN = the mismatch count; this is the
 * same definition the core evaluator uses.
 */
export function microF1(
  predicted: ArrayLike<number>,
  truth: ArrayLike<number>,
): number {
  if (predicted.length !== truth.length) {
    throw new Error(`length mismatch: ${predicted.length} vs ${truth.length}`);
  }
  if (predicted.length === 0) {
    throw new Error('empty prediction set');
  }
  let tp = 0;
  for (let i = 0; i < predicted.length; i++) {
    if (predicted[i] === truth[i]) tp++;
  }
  const wrong = predicted.length - tp;
  return (2 * tp) / (2 * tp + 2 * wrong);
}

/** F1 of always predicting each slot's most frequent training level. */
export function majorityBaselineF1(
  trainLabels: ArrayLike<number>,
  testLabels: ArrayLike<number>,
  slots: number,
  levels: number,
): number {
  const majority = new Int32Array(slots);
  for (let s = 0; s < slots; s++) {
    const counts = new Int32Array(levels);
    for (let i = s; i < trainLabels.length; i += slots) {
      counts[trainLabels[i]]++;
    }
    let best = 0;
    for (let c = 1; c < levels; c++) {
      if (counts[c] > counts[best]) best = c;
    }
    majority[s] = best;
  }
  const preds = new Int32Array(testLabels.length);
  for (let i = 0; i < testLabels.length; i++) {
    preds[i] = majority[i % slots];
  }
  return microF1(preds, testLabels);
}
