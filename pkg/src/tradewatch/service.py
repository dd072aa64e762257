"""Read-only JSON API over completed runs, plus run launch via POST.

Every GET is a pure view of artifacts persisted under the run home; nothing
recomputes statistics and nothing mutates a completed run.  POST /runs
executes a new pipeline run synchronously and returns its manifest.
"""

from __future__ import annotations

import json
import re
import threading
from http.server import BaseHTTPRequestHandler, ThreadingHTTPServer
from pathlib import Path
from urllib.parse import parse_qs, urlparse

from . import rings, runs
from .errors import DataError
from .synth import config_from_dict

_RUN_ID = re.compile(r"^[A-Za-z0-9._-]+$")
# /neighbors selects a persisted network by name; the first available one is
# the default when the run's own correction was not persisted
_CORRECTIONS = ("bonferroni", "fdr", "fixed", "bicm", "svn_fdr")


class ApiError(Exception):
    """HTTP-mapped failure: (status, code, message)."""

    def __init__(self, status: int, code: str, message: str):
        super().__init__(message)
        self.status = status
        self.code = code


def _not_found(message: str) -> ApiError:
    return ApiError(404, "not_found", message)


def _bad_request(message: str) -> ApiError:
    return ApiError(400, "bad_request", message)


class RunStore:
    """Resolves run ids below one home directory and loads their artifacts."""

    def __init__(self, home):
        self.home = Path(home)

    def run_dir(self, run_id: str) -> Path:
        if not _RUN_ID.match(run_id) or run_id in {".", ".."}:
            raise _bad_request(f"malformed run id {run_id!r}")
        path = self.home / run_id
        if not (path / runs.MANIFEST_NAME).is_file():
            raise _not_found(f"no run {run_id!r}")
        return path

    def manifest(self, run_id: str) -> dict:
        return runs.read_manifest(self.run_dir(run_id))

    def completed(self, run_id: str) -> Path:
        path = self.run_dir(run_id)
        manifest = runs.read_manifest(path)
        if manifest["status"] != "complete":
            raise ApiError(409, "run_incomplete",
                           f"run {run_id!r} is {manifest['status']}")
        return path

    def artifact(self, run_id: str, *logicals: str):
        path = self.completed(run_id)
        arts = runs.read_manifest(path)["artifacts"]
        for logical in logicals:
            if logical in arts:
                return json.loads((path / arts[logical])
                                  .read_text(encoding="utf-8"))
        raise _not_found(f"run {run_id!r} has no {logicals[0]!r} artifact")


# -- view handlers -----------------------------------------------------------------


def view_runs(store: RunStore) -> list[dict]:
    return runs.list_runs(store.home)


def view_manifest(store: RunStore, run_id: str) -> dict:
    return store.manifest(run_id)


def view_suspects(store: RunStore, run_id: str) -> dict:
    return store.artifact(run_id, "suspects", "ring_report")


def view_clusters(store: RunStore, run_id: str) -> dict:
    return store.artifact(run_id, "clusters", "kmeans_clusters")


def view_dossier(store: RunStore, run_id: str, cluster: str) -> dict:
    dossiers = store.artifact(run_id, "dossiers")
    if cluster not in dossiers["clusters"]:
        raise _not_found(f"run {run_id!r} has no cluster {cluster!r}")
    return {
        "offer_price": dossiers["offer_price"],
        "ref_start": dossiers["ref_start"],
        "ref_end": dossiers["ref_end"],
        **dossiers["clusters"][cluster],
    }


def view_raster(store: RunStore, run_id: str, cluster: str) -> dict:
    if not cluster.isdigit():
        raise _bad_request(f"malformed cluster id {cluster!r}")
    return store.artifact(run_id, f"raster_c{cluster}")


def view_sweep(store: RunStore, run_id: str) -> dict:
    return store.artifact(run_id, "sweep")


def view_containment(store: RunStore, run_id: str) -> dict:
    return store.artifact(run_id, "containment")


def _seed_status(network, seed: str) -> str:
    if seed not in set(network.investors):
        return "unknown"
    return "connected" if any(True for _ in _incident(network, seed)) \
        else "isolated"


def _incident(network, seed):
    for a, b, *_rest in network.edges():
        if seed == a or seed == b:
            yield (a, b)


def view_neighbors(store: RunStore, run_id: str, query: dict) -> dict:
    seed = query.get("seed", [None])[0]
    if not seed:
        raise _bad_request("missing ?seed=")
    try:
        depth = int(query.get("depth", ["1"])[0])
    except ValueError:
        raise _bad_request("depth must be an integer") from None
    run_dir = store.completed(run_id)
    manifest = runs.read_manifest(run_dir)
    arts = manifest["artifacts"]
    available = [name for name in _CORRECTIONS if f"network_{name}" in arts]
    if not available:
        raise _not_found(f"run {run_id!r} persists no validated network")
    chosen = manifest["config"].get("correction")
    default = chosen if chosen in available else available[0]
    correction = query.get("correction", [default])[0]
    if correction not in _CORRECTIONS:
        raise _bad_request(f"unknown correction {correction!r}")
    if correction not in available:
        raise _not_found(f"run {run_id!r} has no {correction!r} network")

    network = runs.load_network(run_dir, f"network_{correction}")
    stats, offer_price = runs.load_delta_stats(run_dir)
    try:
        exploration = rings.seed_neighbors(network, seed, depth, stats,
                                           offer_price)
    except DataError as err:
        raise _not_found(str(err)) from None
    except ValueError as err:
        raise _bad_request(str(err)) from None
    isolation = {}
    for name in ("bonferroni", "fdr"):
        if f"network_{name}" in arts:
            other = (network if name == correction
                     else runs.load_network(run_dir, f"network_{name}"))
            isolation[name] = _seed_status(other, seed)
    return {
        "seed": exploration.seed,
        "depth": exploration.depth,
        "correction": correction,
        "status": exploration.status,
        "isolation": isolation,
        "neighbors": [{
            "investor": n.investor,
            "hop": n.hop,
            "links": [list(link) for link in n.links],
            "directionality": n.directionality,
            "profit": n.profit,
        } for n in exploration.neighbors],
    }


# -- run launch -----------------------------------------------------------------


_LAUNCHERS = {
    "kmeans": runs.run_kmeans,
    "svn": runs.run_svn,
    "bicm": runs.run_bicm,
    "sweep": runs.run_sweep,
    "full": runs.run_full,
}


def launch_run(store: RunStore, body) -> dict:
    if not isinstance(body, dict):
        raise _bad_request("body must be a JSON object")
    pipeline = body.get("pipeline")
    config = body.get("config")
    if not isinstance(config, dict):
        raise _bad_request("body must carry a config object")
    try:
        if pipeline == "synth":
            manifest_path = runs.run_synth(config_from_dict(config),
                                           home=store.home)
        elif pipeline == "compare":
            config = dict(config)
            run_a = store.completed(str(config.pop("run_a", "")))
            run_b = store.completed(str(config.pop("run_b", "")))
            manifest_path = runs.run_compare(run_a, run_b, home=store.home,
                                             **config)
        elif pipeline in _LAUNCHERS:
            config = dict(config)
            input_run = store.completed(str(config.pop("input_run", "")))
            manifest_path = _LAUNCHERS[pipeline](input_run, home=store.home,
                                                 **config)
        else:
            raise _bad_request(f"unknown pipeline {pipeline!r}")
    except DataError as err:
        raise ApiError(400, "data_error", str(err)) from None
    except (KeyError, TypeError, ValueError) as err:
        raise _bad_request(f"bad config: {err!r}") from None
    return json.loads(manifest_path.read_text(encoding="utf-8"))


# -- http plumbing -----------------------------------------------------------------


def _route(store: RunStore, path: str, query: dict):
    parts = [p for p in path.split("/") if p]
    if parts == ["runs"]:
        return view_runs(store)
    if len(parts) >= 2 and parts[0] == "runs":
        run_id = parts[1]
        rest = parts[2:]
        if rest == ["manifest"]:
            return view_manifest(store, run_id)
        if rest == ["suspects"]:
            return view_suspects(store, run_id)
        if rest == ["clusters"]:
            return view_clusters(store, run_id)
        if len(rest) == 3 and rest[0] == "clusters" and rest[2] == "dossier":
            return view_dossier(store, run_id, rest[1])
        if len(rest) == 3 and rest[0] == "clusters" and rest[2] == "raster":
            return view_raster(store, run_id, rest[1])
        if rest == ["neighbors"]:
            return view_neighbors(store, run_id, query)
        if rest == ["sweep"]:
            return view_sweep(store, run_id)
        if rest == ["containment"]:
            return view_containment(store, run_id)
    raise _not_found(f"no route for {path}")


class _Handler(BaseHTTPRequestHandler):
    store: RunStore  # set by make_server
    protocol_version = "HTTP/1.1"

    def log_message(self, fmt, *args):  # tests stay quiet
        pass

    def _send(self, status: int, payload) -> None:
        body = json.dumps(payload).encode("utf-8")
        self.send_response(status)
        self.send_header("Content-Type", "application/json")
        self.send_header("Content-Length", str(len(body)))
        self.send_header("Access-Control-Allow-Origin", "*")
        self.end_headers()
        self.wfile.write(body)

    def _send_error(self, err: ApiError) -> None:
        self._send(err.status, {"code": err.code, "message": str(err)})

    def do_GET(self) -> None:  # noqa: N802 (http.server API)
        url = urlparse(self.path)
        try:
            self._send(200, _route(self.store, url.path, parse_qs(url.query)))
        except ApiError as err:
            self._send_error(err)
        except DataError as err:
            self._send_error(_not_found(str(err)))

    def do_POST(self) -> None:  # noqa: N802
        url = urlparse(self.path)
        if url.path.rstrip("/") != "/runs":
            self._send_error(_not_found(f"no route for {url.path}"))
            return
        try:
            length = int(self.headers.get("Content-Length", 0))
            try:
                body = json.loads(self.rfile.read(length) or b"{}")
            except json.JSONDecodeError as err:
                raise _bad_request(f"body is not JSON: {err}") from None
            self._send(201, launch_run(self.store, body))
        except ApiError as err:
            self._send_error(err)


def make_server(home, host: str = "127.0.0.1",
                port: int = 0) -> ThreadingHTTPServer:
    """Bound but not yet serving; port 0 picks an ephemeral port."""
    handler = type("BoundHandler", (_Handler,), {"store": RunStore(home)})
    return ThreadingHTTPServer((host, port), handler)


def serve(home, host: str = "127.0.0.1", port: int = 8765) -> None:
    """Serve until interrupted."""
    with make_server(home, host, port) as server:
        print(f"serving {Path(home).resolve()} on http://{host}:{server.server_address[1]}")
        try:
            server.serve_forever()
        except KeyboardInterrupt:
            pass


class ServerThread:
    """Run the service on a daemon thread (tests and embedding)."""

    def __init__(self, home, host: str = "127.0.0.1", port: int = 0):
        self.server = make_server(home, host, port)
        self.thread = threading.Thread(target=self.server.serve_forever,
                                       daemon=True)

    @property
    def url(self) -> str:
        host, port = self.server.server_address[:2]
        return f"http://{host}:{port}"

    def __enter__(self) -> "ServerThread":
        self.thread.start()
        return self

    def __exit__(self, *exc) -> None:
        self.server.shutdown()
        self.server.server_close()
