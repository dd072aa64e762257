/** Load captured API payloads (written by scripts/export_console_fixtures.py). */

import { readFileSync } from "node:fs";
import { fileURLToPath } from "node:url";

export function fixture<T>(name: string): T {
  const path = fileURLToPath(new URL(`../fixtures/${name}.json`, import.meta.url));
  return JSON.parse(readFileSync(path, "utf-8")) as T;
}

export interface FixtureMeta {
  run_id: string;
  ring: string[];
  pair: string[];
  flagged_cluster: number;
}

export const meta = fixture<FixtureMeta>("meta");
