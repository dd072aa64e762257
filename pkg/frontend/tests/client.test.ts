import { describe, expect, it } from "vitest";

import { ApiClient, ApiError } from "../src/client.js";
import { NeighborsPayload, SuspectsPayload } from "../src/types.js";
import { fixture, meta } from "./fixtures.js";

interface ErrorFixture {
  status: number;
  body: { code: string; message: string };
}

function stubFetch(routes: Record<string, unknown>,
                   requested: string[] = []): typeof fetch {
  return (async (input: RequestInfo | URL) => {
    const url = String(input);
    requested.push(url);
    const path = url.replace(/^http:\/\/[^/]+/, "");
    if (path in routes) {
      return new Response(JSON.stringify(routes[path]), { status: 200 });
    }
    const err = fixture<ErrorFixture>("error_unknown_run");
    return new Response(JSON.stringify(err.body), { status: err.status });
  }) as typeof fetch;
}

describe("api client", () => {
  it("returns payloads exactly as served", async () => {
    const suspects = fixture<SuspectsPayload>("suspects");
    const client = new ApiClient("http://svc", stubFetch({
      [`/runs/${meta.run_id}/suspects`]: suspects,
    }));
    expect(await client.suspects(meta.run_id)).toEqual(suspects);
  });

  it("encodes seed, depth and correction into the neighbors query", async () => {
    const payload = fixture<NeighborsPayload>("neighbors_pair_fdr");
    const requested: string[] = [];
    const client = new ApiClient("http://svc", stubFetch({
      [`/runs/${meta.run_id}/neighbors?seed=${meta.pair[0]}&depth=1&correction=fdr`]:
        payload,
    }, requested));
    const got = await client.neighbors(meta.run_id, meta.pair[0], 1, "fdr");
    expect(got).toEqual(payload);
    expect(requested).toHaveLength(1);
    expect(requested[0]).toContain("correction=fdr");
  });

  it("omits the correction parameter when not requested", async () => {
    const requested: string[] = [];
    const payload = fixture<NeighborsPayload>("neighbors_ring_depth2");
    const client = new ApiClient("http://svc", stubFetch({
      [`/runs/${meta.run_id}/neighbors?seed=${meta.ring[0]}&depth=2`]: payload,
    }, requested));
    await client.neighbors(meta.run_id, meta.ring[0], 2);
    expect(requested[0]).not.toContain("correction");
  });

  it("surfaces HTTP errors with status and code", async () => {
    const err = fixture<ErrorFixture>("error_unknown_run");
    const client = new ApiClient("http://svc", stubFetch({}));
    const thrown = await client.manifest("ghost").catch((e) => e);
    expect(thrown).toBeInstanceOf(ApiError);
    expect(thrown.status).toBe(err.status);
    expect(thrown.code).toBe(err.body.code);
    expect(thrown.message).toBe(err.body.message);
  });
});
