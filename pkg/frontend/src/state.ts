/** Session-local view state: selected run, tab, filters and the seed trail.
 *
 * Nothing here touches the server; the trail lives only in the browser
 * session and leaves it solely through an explicit JSON export.
 */

export type Tab = "suspects" | "clusters" | "raster" | "sweep" | "neighbors";

export interface Filters {
  scoreFloor: number;
  rFloor: number;
  type: string | null;
}

export interface TrailEntry {
  investor: string;
  at: string;               // ISO timestamp of the inspection
}

export const DEFAULT_FILTERS: Filters = { scoreFloor: 0, rFloor: 0, type: null };

export class ViewState {
  run: string | null = null;
  tab: Tab = "suspects";
  filters: Filters = { ...DEFAULT_FILTERS };
  private trail: TrailEntry[] = [];
  private universe = new Set<string>();

  constructor(private clock: () => string = () => new Date().toISOString()) {}

  /** Register investor ids seen in server payloads as valid seed targets. */
  know(investors: Iterable<string>): void {
    for (const investor of investors) {
      this.universe.add(investor);
    }
  }

  selectRun(run: string): void {
    if (run !== this.run) {
      this.run = run;
      this.trail = [];
      this.universe.clear();
    }
  }

  /** Append an inspected seed; ids must come from this run's payloads. */
  pushSeed(investor: string): TrailEntry {
    if (this.universe.size > 0 && !this.universe.has(investor)) {
      throw new Error(`seed ${investor} is not part of the selected run`);
    }
    const entry = { investor, at: this.clock() };
    this.trail.push(entry);
    return entry;
  }

  get seedTrail(): readonly TrailEntry[] {
    return this.trail;
  }

  get currentSeed(): string | null {
    return this.trail.length ? this.trail[this.trail.length - 1].investor : null;
  }

  /** Case note: the visited ids with timestamps, as a JSON document. */
  exportTrail(): string {
    return JSON.stringify(
      { run: this.run, visited: this.trail }, null, 2);
  }
}
