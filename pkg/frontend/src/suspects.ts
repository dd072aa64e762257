/** Render model for the suspect ranking table.
 *
 * Rows are the /suspects payload rows untouched; sorting and filtering are
 * pure client-side reorderings of that list.
 */

import { SuspectRow, SuspectsPayload } from "./types.js";

export type SortKey = keyof SuspectRow;
export type SortDirection = "asc" | "desc";

export interface SuspectFilters {
  scoreFloor: number;
  type: string | null;
}

export interface Column {
  key: SortKey;
  label: string;
  cell: (row: SuspectRow) => string;
}

export const COLUMNS: Column[] = [
  { key: "rank", label: "#", cell: (r) => String(r.rank) },
  { key: "investor", label: "Investor", cell: (r) => r.investor },
  { key: "type", label: "Type", cell: (r) => r.type },
  { key: "category", label: "Category", cell: (r) => r.category },
  { key: "directionality", label: "Directionality",
    cell: (r) => r.directionality.toFixed(3) },
  { key: "expected_profit", label: "Expected profit",
    cell: (r) => r.expected_profit.toFixed(2) },
  { key: "shares_bought", label: "Shares bought",
    cell: (r) => r.shares_bought.toFixed(0) },
  { key: "score", label: "Score", cell: (r) => r.score.toFixed(3) },
];

export function filterRows(rows: readonly SuspectRow[],
                           filters: SuspectFilters): SuspectRow[] {
  return rows.filter((row) =>
    row.score >= filters.scoreFloor &&
    (filters.type === null || row.type === filters.type));
}

export function sortRows(rows: readonly SuspectRow[], key: SortKey,
                         direction: SortDirection): SuspectRow[] {
  const sign = direction === "asc" ? 1 : -1;
  return [...rows].sort((a, b) => {
    const va = a[key];
    const vb = b[key];
    if (typeof va === "number" && typeof vb === "number") {
      return sign * (va - vb);
    }
    return sign * String(va).localeCompare(String(vb));
  });
}

export interface SuspectTable {
  header: string[];
  rows: SuspectRow[];
  cells: (row: SuspectRow) => string[];
}

export function suspectTable(payload: SuspectsPayload,
                             filters: SuspectFilters = { scoreFloor: 0, type: null },
                             sortKey: SortKey = "rank",
                             direction: SortDirection = "asc"): SuspectTable {
  return {
    header: COLUMNS.map((c) => c.label),
    rows: sortRows(filterRows(payload.rows, filters), sortKey, direction),
    cells: (row) => COLUMNS.map((c) => c.cell(row)),
  };
}
