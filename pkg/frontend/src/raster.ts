/** Render model for trader-day activity rasters.
 *
 * Days run down the page and members across it, so a trader is a column and
 * an always-buyer shows as a solid red stripe.  The model reads the server's
 * text grid directly -- states are never reconstructed from volumes.
 */

import { RasterPayload } from "./types.js";

export type StateName = "none" | "b" | "s" | "bs";

export const STATE_COLORS: Record<StateName, string> = {
  none: "black",
  b: "red",
  s: "green",
  bs: "white",
};

export interface RasterCell {
  investor: string;
  day: string;
  state: StateName;
}

export interface ColumnPage {
  start: number;              // first member index on the page
  end: number;                // exclusive
}

export class RasterModel {
  private stateOfChar: Record<string, StateName>;

  constructor(readonly payload: RasterPayload) {
    this.stateOfChar = {};
    for (const [name, ch] of Object.entries(payload.chars)) {
      this.stateOfChar[ch] = name as StateName;
    }
  }

  get members(): string[] {
    return this.payload.members;
  }

  get days(): string[] {
    return this.payload.days;
  }

  charAt(dayIndex: number, memberIndex: number): string {
    return this.payload.grid[memberIndex][dayIndex];
  }

  stateAt(dayIndex: number, memberIndex: number): StateName {
    return this.stateOfChar[this.charAt(dayIndex, memberIndex)];
  }

  colorAt(dayIndex: number, memberIndex: number): string {
    return STATE_COLORS[this.stateAt(dayIndex, memberIndex)];
  }

  /** Hover readout for one cell. */
  cellAt(dayIndex: number, memberIndex: number): RasterCell {
    return {
      investor: this.payload.members[memberIndex],
      day: this.payload.days[dayIndex],
      state: this.stateAt(dayIndex, memberIndex),
    };
  }

  /** Row indices of the horizontal marker lines. */
  markerRows(): { pse: number; refStart: number } {
    return {
      pse: this.payload.days.indexOf(this.payload.markers.pse),
      refStart: this.payload.days.indexOf(this.payload.markers.ref_start),
    };
  }
}

/** Split an oversized raster into member-column pages of fixed width. */
export function paginateColumns(nMembers: number,
                                pageSize: number): ColumnPage[] {
  if (pageSize < 1) {
    throw new Error(`page size must be positive, got ${pageSize}`);
  }
  const pages: ColumnPage[] = [];
  for (let start = 0; start < nMembers; start += pageSize) {
    pages.push({ start, end: Math.min(start + pageSize, nMembers) });
  }
  return pages;
}
