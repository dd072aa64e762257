#!/usr/bin/env python3
"""Capture HTTP payloads from a demo run for the analyst-console test suite.

Runs the demo scenario through the full pipeline, serves it with the bundled
HTTP API, and snapshots one JSON payload per console view into
frontend/fixtures/.  The console's unit tests replay these payloads, so they
exercise rendering logic against real backend shapes without a live server.
"""

from __future__ import annotations

import argparse
import json
import tempfile
import urllib.request
from pathlib import Path

from tradewatch import runs, service
from tradewatch.synth import config_from_dict

DEMO_CONFIG = Path(__file__).resolve().parent / "demo_scenario.json"
DEFAULT_OUT = Path(__file__).resolve().parents[1] / "frontend" / "fixtures"


def fetch(base: str, path: str) -> dict | list:
    with urllib.request.urlopen(f"{base}{path}") as resp:
        return json.loads(resp.read().decode())


def fetch_error(base: str, path: str) -> dict:
    try:
        urllib.request.urlopen(f"{base}{path}")
    except urllib.error.HTTPError as err:
        return {"status": err.code, "body": json.loads(err.read().decode())}
    raise AssertionError(f"{path} unexpectedly succeeded")


def main() -> int:
    parser = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    parser.add_argument("--out", default=str(DEFAULT_OUT),
                        help="fixture directory (default: frontend/fixtures)")
    args = parser.parse_args()
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)

    home = Path(tempfile.mkdtemp(prefix="console_fixtures_"))
    cfg = config_from_dict(json.loads(DEMO_CONFIG.read_text()))
    data = runs.run_synth(cfg, home=home, run_id="demo-data").parent
    full = runs.run_full(data, min_days=4, home=home, run_id="demo-full").parent

    truth = json.loads((data / "truth.json").read_text())
    groups: dict[int, list[str]] = {}
    for row in truth["planted"]:
        if row["kind"] == "ring":
            groups.setdefault(row["ring"], []).append(row["investor"])
    ring = sorted(max(groups.values(), key=len))   # validated by both corrections
    pair = sorted(min(groups.values(), key=len))   # weak pair, FDR only
    report = json.loads((full / "ring_report.json").read_text())
    flagged_cluster = next(r["cluster"] for r in report["rows"] if r["suspect"])

    fixtures: dict[str, dict | list] = {}
    with service.ServerThread(home) as server:
        base = server.url
        rid = full.name
        fixtures["runs"] = fetch(base, "/runs")
        fixtures["manifest"] = fetch(base, f"/runs/{rid}/manifest")
        fixtures["suspects"] = fetch(base, f"/runs/{rid}/suspects")
        fixtures["clusters"] = fetch(base, f"/runs/{rid}/clusters")
        fixtures["dossier"] = fetch(
            base, f"/runs/{rid}/clusters/{flagged_cluster}/dossier")
        fixtures["raster"] = fetch(
            base, f"/runs/{rid}/clusters/{flagged_cluster}/raster")
        fixtures["sweep"] = fetch(base, f"/runs/{rid}/sweep")
        fixtures["containment"] = fetch(base, f"/runs/{rid}/containment")
        fixtures["neighbors_ring_depth1"] = fetch(
            base, f"/runs/{rid}/neighbors?seed={ring[0]}&depth=1")
        fixtures["neighbors_ring_depth2"] = fetch(
            base, f"/runs/{rid}/neighbors?seed={ring[0]}&depth=2")
        fixtures["neighbors_pair_bonferroni"] = fetch(
            base,
            f"/runs/{rid}/neighbors?seed={pair[0]}&depth=1&correction=bonferroni")
        fixtures["neighbors_pair_fdr"] = fetch(
            base, f"/runs/{rid}/neighbors?seed={pair[0]}&depth=1&correction=fdr")
        fixtures["error_unknown_run"] = fetch_error(base, "/runs/ghost/manifest")
        fixtures["error_unknown_seed"] = fetch_error(
            base, f"/runs/{rid}/neighbors?seed=NOBODY")

    meta = {"run_id": full.name, "ring": ring, "pair": pair,
            "flagged_cluster": flagged_cluster}
    (out / "meta.json").write_text(json.dumps(meta, indent=2, sort_keys=True))
    for name, payload in fixtures.items():
        (out / f"{name}.json").write_text(
            json.dumps(payload, indent=2, sort_keys=True))
    print(f"wrote {len(fixtures) + 1} fixtures to {out}")
    return 0


if __name__ == "__main__":
    raise SystemExit(main())
