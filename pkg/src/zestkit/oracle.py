"""Query-only access to classifiers, with exact per-row accounting.

The ledger is the adversary's cost meter: one unit per input row sent,
regardless of HTTP batching, because pay-per-query APIs bill per example.
There is deliberately no caching layer; repeated queries are counted again.

Wire protocol (shared by the serve mode and the remote client):

    POST /v1/predict   {"inputs": [[f64,...],...]} -> {"probs": [[f64,...],...]}
    GET  /v1/info      -> {"class_count": u, "input_dim": u}

Errors come back as status 400 with {"error": string}.
"""

import json
import logging
import threading
from abc import ABC, abstractmethod
from dataclasses import dataclass
from http.server import BaseHTTPRequestHandler, ThreadingHTTPServer

import numpy as np
import requests

from .errors import ConfigError, ProtocolError, ShapeError, TransportError
from .nn import MlpModel, as_matrix, forward

log = logging.getLogger(__name__)

PURPOSES = ("signature", "signature_baseline", "attack_eval", "other")


class QueryLedger:
    """Monotone per-purpose row counts; safe for concurrent accumulation."""

    def __init__(self):
        self._lock = threading.Lock()
        self._counts = {p: 0 for p in PURPOSES}

    def add(self, purpose: str, rows: int) -> None:
        if purpose not in PURPOSES:
            raise ConfigError(f"unknown query purpose {purpose!r}")
        if rows < 0:
            raise ConfigError("row count cannot be negative")
        with self._lock:
            self._counts[purpose] += int(rows)

    @property
    def total_queries(self) -> int:
        with self._lock:
            return sum(self._counts.values())

    def breakdown(self) -> dict:
        with self._lock:
            return dict(self._counts)

    def snapshot(self) -> dict:
        out = self.breakdown()
        out["total"] = sum(out.values())
        return out


class QueryOracle(ABC):
    """A classifier seen purely through its predictions."""

    ledger: QueryLedger

    @abstractmethod
    def predict_proba(self, batch, purpose: str = "other") -> np.ndarray:
        """Probability rows for each input row; bills one unit per row."""

    @property
    @abstractmethod
    def class_count(self) -> int: ...

    @property
    @abstractmethod
    def input_dim(self) -> int: ...

    @property
    @abstractmethod
    def oracle_id(self) -> str: ...


class LocalOracle(QueryOracle):
    """Wraps a local model behind the query interface (no network)."""

    def __init__(self, model: MlpModel, oracle_id: str = None):
        self._model = model
        self._id = oracle_id if oracle_id is not None else model.model_id
        self.ledger = QueryLedger()

    @property
    def class_count(self):
        return self._model.class_count

    @property
    def input_dim(self):
        return self._model.input_dim

    @property
    def oracle_id(self):
        return self._id

    def predict_proba(self, batch, purpose="other"):
        x = as_matrix(batch, cols=self.input_dim)
        if x.shape[0] == 0:
            return np.zeros((0, self.class_count))
        probs = forward(self._model, x)
        self.ledger.add(purpose, x.shape[0])
        return probs


def local_oracle(model: MlpModel, oracle_id: str = None) -> LocalOracle:
    return LocalOracle(model, oracle_id)


@dataclass(frozen=True)
class RemoteEndpoint:
    base_url: str
    timeout: float = 10.0
    max_batch_rows: int = 1000
    retries: int = 2
    max_inflight: int = 4

    def __post_init__(self):
        if self.max_batch_rows < 1:
            raise ConfigError("max_batch_rows must be >= 1")
        if self.retries < 0:
            raise ConfigError("retries cannot be negative")
        if self.max_inflight < 1:
            raise ConfigError("max_inflight must be >= 1")
        object.__setattr__(self, "base_url", self.base_url.rstrip("/"))


class RemoteOracle(QueryOracle):
    """HTTP client for the wire protocol above.

    Batches are split to ``max_batch_rows`` and reassembled in order. Rows
    are billed exactly once per successfully answered chunk, so a retried
    chunk is not double-counted.
    """

    def __init__(self, endpoint: RemoteEndpoint):
        self.endpoint = endpoint
        self.ledger = QueryLedger()
        self._info = None
        self._info_lock = threading.Lock()
        self._inflight = threading.Semaphore(endpoint.max_inflight)

    def _fetch_info(self):
        with self._info_lock:
            if self._info is None:
                url = f"{self.endpoint.base_url}/v1/info"
                try:
                    resp = requests.get(url, timeout=self.endpoint.timeout)
                except requests.RequestException as e:
                    raise TransportError(f"cannot reach oracle at {url}: {e}") from e
                if resp.status_code != 200:
                    raise ProtocolError(f"{url} returned status {resp.status_code}")
                try:
                    info = resp.json()
                    self._info = (int(info["class_count"]), int(info["input_dim"]))
                except (ValueError, KeyError, TypeError) as e:
                    raise ProtocolError(f"malformed /v1/info response: {e}") from e
        return self._info

    @property
    def class_count(self):
        return self._fetch_info()[0]

    @property
    def input_dim(self):
        return self._fetch_info()[1]

    @property
    def oracle_id(self):
        return self.endpoint.base_url

    def _post_chunk(self, chunk: np.ndarray) -> np.ndarray:
        url = f"{self.endpoint.base_url}/v1/predict"
        body = json.dumps({"inputs": chunk.tolist()})
        last_exc = None
        for _ in range(self.endpoint.retries + 1):
            try:
                resp = requests.post(
                    url, data=body, timeout=self.endpoint.timeout,
                    headers={"Content-Type": "application/json"})
            except requests.RequestException as e:
                last_exc = e
                continue
            if resp.status_code >= 500:
                last_exc = ProtocolError(f"server error {resp.status_code}")
                continue
            if resp.status_code != 200:
                try:
                    detail = resp.json().get("error", "")
                except ValueError:
                    detail = resp.text[:200]
                raise ProtocolError(f"oracle rejected request ({resp.status_code}): {detail}")
            try:
                probs = np.asarray(resp.json()["probs"], dtype=np.float64)
            except (ValueError, KeyError, TypeError) as e:
                raise ProtocolError(f"malformed /v1/predict response: {e}") from e
            if probs.ndim != 2 or probs.shape[0] != chunk.shape[0]:
                raise ProtocolError(
                    f"oracle returned {probs.shape[0] if probs.ndim == 2 else '?'} rows "
                    f"for {chunk.shape[0]} inputs")
            if probs.shape[1] != self.class_count:
                raise ProtocolError(
                    f"oracle returned {probs.shape[1]} classes, expected {self.class_count}")
            return probs
        raise TransportError(f"POST {url} failed after {self.endpoint.retries + 1} attempts: "
                             f"{last_exc}")

    def predict_proba(self, batch, purpose="other"):
        x = as_matrix(batch, cols=self.input_dim)
        if x.shape[0] == 0:
            return np.zeros((0, self.class_count))
        parts = []
        rows_done = 0
        step = self.endpoint.max_batch_rows
        for start in range(0, x.shape[0], step):
            chunk = x[start:start + step]
            try:
                with self._inflight:
                    probs = self._post_chunk(chunk)
            except TransportError as e:
                e.rows_counted = rows_done
                raise
            self.ledger.add(purpose, chunk.shape[0])
            rows_done += chunk.shape[0]
            parts.append(probs)
        return np.vstack(parts)


def remote_oracle(endpoint: RemoteEndpoint) -> RemoteOracle:
    return RemoteOracle(endpoint)


class _Handler(BaseHTTPRequestHandler):
    server_version = "zestkit-oracle/1"
    protocol_version = "HTTP/1.1"

    def _reply(self, status: int, payload: dict):
        body = json.dumps(payload).encode("utf-8")
        self.send_response(status)
        self.send_header("Content-Type", "application/json")
        self.send_header("Content-Length", str(len(body)))
        self.end_headers()
        self.wfile.write(body)

    def log_message(self, fmt, *args):
        log.debug("oracle server: " + fmt, *args)

    def do_GET(self):
        model = self.server.model
        if self.path == "/v1/info":
            self._reply(200, {"class_count": model.class_count, "input_dim": model.input_dim})
        else:
            self._reply(404, {"error": f"unknown path {self.path}"})

    def do_POST(self):
        if self.path != "/v1/predict":
            self._reply(404, {"error": f"unknown path {self.path}"})
            return
        model = self.server.model
        try:
            length = int(self.headers.get("Content-Length", "0"))
            payload = json.loads(self.rfile.read(length).decode("utf-8"))
            inputs = payload["inputs"]
            batch = np.asarray(inputs, dtype=np.float64)
            if batch.ndim != 2 or batch.shape[1] != model.input_dim:
                raise ShapeError(
                    f"inputs must be rows of {model.input_dim} numbers")
            if not np.all(np.isfinite(batch)):
                raise ShapeError("inputs contain non-finite values")
        except Exception as e:  # malformed request -> 400, never a crash
            self._reply(400, {"error": str(e)})
            return
        probs = forward(model, batch)
        self._reply(200, {"probs": probs.tolist()})


class ModelServer:
    """Serves a local model over the wire protocol; deterministic answers."""

    def __init__(self, model: MlpModel, port: int = 0, host: str = "127.0.0.1"):
        self._httpd = ThreadingHTTPServer((host, port), _Handler)
        self._httpd.model = model
        self._httpd.daemon_threads = True
        self._thread = None

    @property
    def port(self) -> int:
        return self._httpd.server_address[1]

    @property
    def base_url(self) -> str:
        host, port = self._httpd.server_address[:2]
        return f"http://{host}:{port}"

    def start(self) -> "ModelServer":
        self._thread = threading.Thread(target=self._httpd.serve_forever, daemon=True)
        self._thread.start()
        return self

    def stop(self) -> None:
        self._httpd.shutdown()
        self._httpd.server_close()
        if self._thread is not None:
            self._thread.join()
            self._thread = None

    def __enter__(self):
        return self.start()

    def __exit__(self, *exc):
        self.stop()


def serve(model: MlpModel, port: int, host: str = "127.0.0.1") -> None:
    """Run the prediction service until interrupted (CLI entry)."""
    server = ModelServer(model, port=port, host=host)
    log.info("serving %s on %s", model.model_id, server.base_url)
    try:
        server._httpd.serve_forever()
    finally:
        server._httpd.server_close()
