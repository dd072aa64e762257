/** Render model for seed-based neighbor exploration.
 *
 * A neighbor card shows the investor's type signals straight off the
 * payload: hop distance, validated links (type, shared days, p-value),
 * directionality over the reference window and expected profit.
 */

import { NeighborEntry, NeighborsPayload } from "./types.js";

export interface LinkView {
  other: string;
  type: string;
  sharedDays: number;
  pvalue: number;
}

export interface NeighborCard {
  investor: string;
  hop: number;
  directionality: number | null;
  profit: number | null;
  links: LinkView[];
}

export function neighborCards(payload: NeighborsPayload): NeighborCard[] {
  return payload.neighbors.map((entry: NeighborEntry) => ({
    investor: entry.investor,
    hop: entry.hop,
    directionality: entry.directionality,
    profit: entry.profit,
    links: entry.links.map(([other, type, sharedDays, pvalue]) => ({
      other, type, sharedDays, pvalue,
    })),
  }));
}

export function investorsAtHop(payload: NeighborsPayload, hop: number): string[] {
  return payload.neighbors
    .filter((entry) => entry.hop === hop)
    .map((entry) => entry.investor);
}

export interface CorrectionSwitch {
  from: string;               // correction currently shown
  to: string;                 // the one-click alternative
  seedIsolated: boolean;      // isolated under the current correction?
  message: string;
}

/** Offer the Bonferroni/FDR switch exactly when their isolation disagrees.
 *
 * An isolated seed gets the explicit "isolated under this correction"
 * message; a connected seed gets a note that the stricter view would isolate
 * it.  When both corrections agree there is nothing to switch for.
 */
export function correctionSwitch(payload: NeighborsPayload): CorrectionSwitch | null {
  const bonferroni = payload.isolation["bonferroni"];
  const fdr = payload.isolation["fdr"];
  if (bonferroni === undefined || fdr === undefined || bonferroni === fdr) {
    return null;
  }
  const from = payload.correction;
  const to = from === "bonferroni" ? "fdr" : "bonferroni";
  const seedIsolated = payload.status === "isolated";
  const message = seedIsolated
    ? `${payload.seed} is isolated under ${from}; it is not under ${to}`
    : `${payload.seed} is connected under ${from} but isolated under ` +
      (bonferroni === "isolated" ? "bonferroni" : "fdr");
  return { from, to, seedIsolated, message };
}
