/** Payload shapes served by the surveillance service HTTP API.
 *
 * The console renders these verbatim: every number shown on screen is one of
 * these fields, never a client-side recomputation.
 */

export interface RunSummary {
  run_id: string;
  pipeline: string;
  status: string;
  created: string;
  completed: string | null;
  error: string | null;
  config: Record<string, unknown>;
  inputs: Record<string, string>;
  artifacts: Record<string, string>;
}

export interface SuspectRow {
  rank: number;
  investor: string;
  type: string;
  category: string;
  directionality: number;
  expected_profit: number;
  shares_bought: number;
  score: number;
}

export interface SuspectsPayload {
  pipeline: string;
  stock: string;
  direction: string;
  k: number;
  rewarding_cluster: number;
  offer_price: number;
  ref_start: string;
  ref_end: string;
  rows: SuspectRow[];
}

export interface ClusterEnrichment {
  OI: string;
  UI: string;
  OC: string;
  UC: string;
}

export interface ClusterRow {
  cluster: number;
  members: string[];
  member_types: Record<string, number>;
  n_members: number;
  n_active: number;
  pi_c: number;
  pi_c_active: number;
  r_c: number;
  suspect: boolean;
  enrichment: ClusterEnrichment;
}

export interface ClustersPayload {
  pipeline: string;
  correction: string;
  n_clusters: number;
  codelength: number;
  clusters: ClusterRow[];
}

export interface DossierPayload {
  cluster: number;
  members: string[];
  member_types: Record<string, number>;
  n_members: number;
  n_active: number;
  pi_c: number;
  pi_c_active: number;
  r_c: number;
  offer_price: number;
  ref_start: string;
  ref_end: string;
}

/** Trader-day activity grid: one string per member, one character per day. */
export interface RasterPayload {
  cluster: number;
  members: string[];
  days: string[];
  grid: string[];
  chars: { none: string; b: string; s: string; bs: string };
  markers: { pse: string; ref_start: string };
}

export interface SweepPoint {
  threshold: number;
  n_edges: number;
  metric: number;
}

export interface SweepPayload {
  metric: string;
  best_threshold: number | null;
  points: SweepPoint[];
}

export interface ContainmentPayload {
  rows_from: string;
  cols_from: string;
  row_labels: string[];
  col_labels: string[];
  matrix: number[][];
}

/** [other investor, link type, shared days, p-value] */
export type NeighborLink = [string, string, number, number];

export interface NeighborEntry {
  investor: string;
  hop: number;
  links: NeighborLink[];
  directionality: number | null;
  profit: number | null;
}

export type IsolationStatus = "connected" | "isolated" | "unknown";

export interface NeighborsPayload {
  seed: string;
  depth: number;
  correction: string;
  status: IsolationStatus;
  isolation: Partial<Record<string, IsolationStatus>>;
  neighbors: NeighborEntry[];
}

export interface ApiErrorBody {
  code: string;
  message: string;
}
