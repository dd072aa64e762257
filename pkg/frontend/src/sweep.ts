/** Chart model for the threshold-sweep curve.
 *
 * Keeps every server point and maps thresholds onto a log-10 x axis; the
 * best threshold reported by the server is singled out as a marker.
 */

import { SweepPayload, SweepPoint } from "./types.js";

export interface SweepChart {
  points: SweepPoint[];
  best: SweepPoint | null;
  /** x position in [0, 1] for a threshold on the log axis. */
  x: (threshold: number) => number;
}

export function sweepChart(payload: SweepPayload): SweepChart {
  const points = payload.points;
  const best = payload.best_threshold === null ? null
    : points.find((p) => p.threshold === payload.best_threshold) ?? null;
  const logs = points.map((p) => Math.log10(p.threshold));
  const lo = Math.min(...logs);
  const hi = Math.max(...logs);
  const span = hi - lo;
  return {
    points,
    best,
    x: (threshold) => span > 0 ? (Math.log10(threshold) - lo) / span : 0.5,
  };
}
