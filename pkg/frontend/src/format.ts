/** Display formatting only. Values pass through `toFixed`; nothing here
 * derives new numbers from other numbers. */

export function fixed(value: number | null | undefined, digits: number): string {
  if (value == null || !Number.isFinite(value)) {
    return "—";
  }
  return value.toFixed(digits);
}

/** "2.18 (2.00, 2.38)" style point-and-interval text. */
export function ratioWithCi(
  point: number | null | undefined,
  low: number | null | undefined,
  high: number | null | undefined,
): string {
  return `${fixed(point, 2)} (${fixed(low, 2)}, ${fixed(high, 2)})`;
}
