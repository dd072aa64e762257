/** Thin fetch wrapper over the surveillance service API.
 *
 * One method per endpoint, no response massaging: views receive the payloads
 * exactly as served.
 */

import {
  ClustersPayload, ContainmentPayload, DossierPayload, NeighborsPayload,
  RasterPayload, RunSummary, SuspectsPayload, SweepPayload,
} from "./types.js";

export class ApiError extends Error {
  constructor(public status: number, public code: string, message: string) {
    super(message);
    this.name = "ApiError";
  }
}

export class ApiClient {
  private fetchFn: typeof fetch;

  constructor(private base: string, fetchFn?: typeof fetch) {
    this.fetchFn = fetchFn ?? globalThis.fetch.bind(globalThis);
  }

  private async get<T>(path: string): Promise<T> {
    const response = await this.fetchFn(`${this.base}${path}`);
    const body = await response.json();
    if (!response.ok) {
      throw new ApiError(response.status, body.code ?? "error",
                         body.message ?? response.statusText);
    }
    return body as T;
  }

  runs(): Promise<RunSummary[]> {
    return this.get("/runs");
  }

  manifest(run: string): Promise<RunSummary> {
    return this.get(`/runs/${run}/manifest`);
  }

  suspects(run: string): Promise<SuspectsPayload> {
    return this.get(`/runs/${run}/suspects`);
  }

  clusters(run: string): Promise<ClustersPayload> {
    return this.get(`/runs/${run}/clusters`);
  }

  dossier(run: string, cluster: number | string): Promise<DossierPayload> {
    return this.get(`/runs/${run}/clusters/${cluster}/dossier`);
  }

  raster(run: string, cluster: number | string): Promise<RasterPayload> {
    return this.get(`/runs/${run}/clusters/${cluster}/raster`);
  }

  sweep(run: string): Promise<SweepPayload> {
    return this.get(`/runs/${run}/sweep`);
  }

  containment(run: string): Promise<ContainmentPayload> {
    return this.get(`/runs/${run}/containment`);
  }

  neighbors(run: string, seed: string, depth = 1,
            correction?: string): Promise<NeighborsPayload> {
    const params = new URLSearchParams({ seed, depth: String(depth) });
    if (correction) {
      params.set("correction", correction);
    }
    return this.get(`/runs/${run}/neighbors?${params}`);
  }
}
