/** Readout formatting; values shown always come from the response summary. */

/** 0.233 → "23.3%" */
export function formatPercent(fraction: number): string {
  return `${(fraction * 100).toFixed(1)}%`;
}

/** 3-decimal readout used for max-thinning comparisons. */
export function formatThinning(fraction: number): string {
  return fraction.toFixed(3);
}

export function formatMillimetres(mm: number): string {
  return `${mm.toFixed(2)} mm`;
}
