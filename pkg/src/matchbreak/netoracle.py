"""Remote access to a matching oracle over TCP.

Wire format: one JSON object per line (UTF-8, newline-delimited) in each
direction. Floats survive the round trip exactly because JSON renders them
with ``repr``. Requests carry an ``op``:

    {"op": "auth",   "claim": "0", "template": [...]}  -> {"score": s} | {"match": b}
    {"op": "enroll", "claim": "x", "template": [...]}  -> {"ok": true}
    {"op": "stats"}                                    -> {"queries": n}
    {"op": "reset"}                                    -> {"ok": true}

Errors come back as ``{"error": CODE, "message": ...}`` with codes
``BAD_REQUEST``, ``BAD_DIM``, ``UNKNOWN_IDENTITY``, ``LOCKED`` and
``ENROLL_DISABLED``; the connection stays open after an error. Whether
``auth`` answers with a score or a decision is the server's choice: the
enrolled templates and the raw scores of a decision-only oracle never cross
the wire.
"""

from __future__ import annotations

import json
import socket
import socketserver
import threading
from dataclasses import dataclass
from pathlib import Path

from .errors import (
    DimensionMismatchError,
    LockedOutError,
    MatchbreakError,
    OracleModeError,
    UnknownIdentityError,
    WireProtocolError,
)
from .evaluation import calibrate_for_model
from .matcher import MatchingOracle, Metric, OracleConfig, OracleMode, Threshold
from .rng import make_rng
from .synth import enrollment_template, load_model
from .validation import as_vector


@dataclass(frozen=True)
class WireMessage:
    """One line of the protocol: a single JSON object."""

    payload: dict

    def to_line(self) -> bytes:
        return json.dumps(self.payload, separators=(",", ":")).encode("utf-8") + b"\n"

    @classmethod
    def from_line(cls, line: bytes) -> "WireMessage":
        try:
            doc = json.loads(line.decode("utf-8"))
        except (UnicodeDecodeError, json.JSONDecodeError) as exc:
            raise ValueError(f"malformed wire line: {exc}") from exc
        if not isinstance(doc, dict):
            raise ValueError("wire line must be a JSON object")
        return cls(payload=doc)


def _error(code: str, message: str) -> WireMessage:
    return WireMessage({"error": code, "message": message})


class _Handler(socketserver.StreamRequestHandler):
    def handle(self):
        for line in self.rfile:
            if not line.strip():
                continue
            response = self.server.owner._dispatch(line)
            self.wfile.write(response.to_line())


class _ThreadingServer(socketserver.ThreadingTCPServer):
    allow_reuse_address = True
    daemon_threads = True


class OracleServer:
    """Serves one oracle to any number of concurrent TCP clients.

    The oracle's own lock serializes scoring, so the ledger total equals the
    number of authentications served across all connections.
    """

    def __init__(self, oracle: MatchingOracle, bind=("127.0.0.1", 0), *, open_enrollment: bool = False):
        self.oracle = oracle
        self.open_enrollment = bool(open_enrollment)
        self._tcp = _ThreadingServer(tuple(bind), _Handler)
        self._tcp.owner = self
        self._thread: threading.Thread | None = None

    @property
    def address(self) -> tuple[str, int]:
        host, port = self._tcp.server_address[:2]
        return host, port

    def start(self) -> "OracleServer":
        if self._thread is None:
            self._thread = threading.Thread(target=self._tcp.serve_forever, daemon=True)
            self._thread.start()
        return self

    def serve_forever(self) -> None:
        self._tcp.serve_forever()

    def shutdown(self) -> None:
        self._tcp.shutdown()
        self._tcp.server_close()
        if self._thread is not None:
            self._thread.join(timeout=5.0)
            self._thread = None

    def __enter__(self) -> "OracleServer":
        return self.start()

    def __exit__(self, *exc_info) -> None:
        self.shutdown()

    def _dispatch(self, raw: bytes) -> WireMessage:
        try:
            message = WireMessage.from_line(raw)
        except ValueError as exc:
            return _error("BAD_REQUEST", str(exc))
        payload = message.payload
        op = payload.get("op")
        try:
            if op == "auth":
                claim, template = self._auth_args(payload)
                if self.oracle.mode is OracleMode.SCORE:
                    return WireMessage({"score": self.oracle.authenticate_score(claim, template)})
                return WireMessage({"match": self.oracle.authenticate_binary(claim, template)})
            if op == "enroll":
                if not self.open_enrollment:
                    return _error("ENROLL_DISABLED", "server does not accept enrollments")
                claim, template = self._auth_args(payload)
                self.oracle.enroll(claim, template)
                return WireMessage({"ok": True})
            if op == "stats":
                return WireMessage({"queries": self.oracle.queries})
            if op == "reset":
                self.oracle.reset_ledger()
                return WireMessage({"ok": True})
            return _error("BAD_REQUEST", f"unknown op {op!r}")
        except LockedOutError as exc:
            return _error("LOCKED", str(exc))
        except UnknownIdentityError as exc:
            return _error("UNKNOWN_IDENTITY", str(exc.args[0]))
        except DimensionMismatchError as exc:
            return _error("BAD_DIM", str(exc))
        except (MatchbreakError, ValueError, TypeError) as exc:
            return _error("BAD_REQUEST", str(exc))

    @staticmethod
    def _auth_args(payload: dict) -> tuple[str, list]:
        claim = payload.get("claim")
        if not isinstance(claim, str) or not claim:
            raise ValueError("claim must be a nonempty string")
        template = payload.get("template")
        if not isinstance(template, list):
            raise ValueError("template must be a list of numbers")
        return claim, template


def serve(oracle: MatchingOracle, bind=("127.0.0.1", 0), *, open_enrollment: bool = False) -> OracleServer:
    """Start serving ``oracle`` in a background thread; returns the handle."""
    return OracleServer(oracle, bind, open_enrollment=open_enrollment).start()


def server_from_config(doc: dict, *, base_dir=None) -> OracleServer:
    """Build a server from a config document.

    Keys: ``model`` (directory, relative to ``base_dir``), ``metric``,
    ``mode``, and either ``threshold`` or ``fmr`` (+ optional
    ``calibration_pairs``, ``calibration_seed``); optional ``noise_sigma``,
    ``noise_seed``, ``query_limit``, ``unit_norm``, ``identities`` (default:
    enroll all), ``host``, ``port``, ``open_enrollment``.
    """
    if "model" not in doc:
        raise ValueError("server config needs a 'model' directory")
    base = Path(base_dir) if base_dir is not None else Path(".")
    model = load_model(base / doc["model"])
    metric = Metric(doc.get("metric", "sed"))
    mode = OracleMode(doc.get("mode", "binary"))
    unit_norm = bool(doc.get("unit_norm", True))

    threshold = None
    if doc.get("threshold") is not None:
        threshold = Threshold(float(doc["threshold"]), metric)
    elif doc.get("fmr") is not None:
        result = calibrate_for_model(
            model, metric, float(doc["fmr"]),
            pairs=int(doc.get("calibration_pairs", 100000)),
            unit_norm=unit_norm,
            seed=make_rng(int(doc.get("calibration_seed", 0)), "serve-calibration"),
        )
        threshold = result.threshold
    elif mode is OracleMode.BINARY:
        raise ValueError("binary mode needs 'threshold' or 'fmr' in the server config")

    oracle = MatchingOracle(
        OracleConfig(
            metric=metric, mode=mode, threshold=threshold,
            noise_sigma=float(doc.get("noise_sigma", 0.0)),
            query_limit=doc.get("query_limit"),
        ),
        noise_seed=int(doc.get("noise_seed", 0)),
    )
    identities = doc.get("identities")
    if identities is None:
        identities = range(model.num_identities)
    for i in identities:
        oracle.enroll(str(i), enrollment_template(model, i, unit_norm=unit_norm).values)
    bind = (doc.get("host", "127.0.0.1"), int(doc.get("port", 0)))
    return OracleServer(oracle, bind, open_enrollment=bool(doc.get("open_enrollment", False)))


def _parse_address(address) -> tuple[str, int]:
    if isinstance(address, (tuple, list)) and len(address) == 2:
        return str(address[0]), int(address[1])
    if isinstance(address, str):
        stripped = address.removeprefix("tcp://")
        host, sep, port = stripped.rpartition(":")
        if sep and host and port.isdigit():
            return host, int(port)
    raise ValueError(f"cannot parse address {address!r}; expected host:port")


_ERROR_CLASSES = {
    "LOCKED": LockedOutError,
    "UNKNOWN_IDENTITY": UnknownIdentityError,
    "BAD_DIM": DimensionMismatchError,
}


class RemoteOracle:
    """Client-side handle with the same call surface as the local oracle.

    ``metric`` and ``mode`` mirror the server's configuration; they let
    attacks pick directions and guard misuse without extra round trips.
    Connecting is eager, so an unreachable server fails at construction.
    ``queries`` asks the server's ledger; ``sent_queries`` counts the
    authentications this client got answered.
    """

    def __init__(self, address, *, metric: Metric, mode: OracleMode, timeout: float = 30.0):
        self.metric = Metric(metric)
        self.mode = OracleMode(mode)
        host, port = _parse_address(address)
        self._sock = socket.create_connection((host, port), timeout=timeout)
        self._file = self._sock.makefile("rwb")
        self._lock = threading.Lock()
        self.sent_queries = 0

    def _request(self, payload: dict) -> dict:
        with self._lock:
            self._file.write(WireMessage(payload).to_line())
            self._file.flush()
            line = self._file.readline()
        if not line:
            raise ConnectionError("server closed the connection")
        try:
            doc = WireMessage.from_line(line).payload
        except ValueError as exc:
            raise WireProtocolError(f"unparseable server response: {exc}") from exc
        if "error" in doc:
            code = doc["error"]
            message = doc.get("message", str(code))
            exc_class = _ERROR_CLASSES.get(code)
            if exc_class is not None:
                raise exc_class(message)
            raise WireProtocolError(message, code=code)
        return doc

    def _auth(self, identity: str, probe) -> dict:
        values = as_vector(probe, name="probe").tolist()
        doc = self._request({"op": "auth", "claim": identity, "template": values})
        self.sent_queries += 1
        return doc

    def authenticate_score(self, identity: str, probe) -> float:
        if self.mode is not OracleMode.SCORE:
            raise OracleModeError("oracle is in binary mode and does not release scores")
        doc = self._auth(identity, probe)
        value = doc.get("score")
        if not isinstance(value, (int, float)) or isinstance(value, bool):
            raise WireProtocolError(f"expected a numeric score, got {value!r}")
        return float(value)

    def authenticate_binary(self, identity: str, probe) -> bool:
        if self.mode is not OracleMode.BINARY:
            raise OracleModeError("oracle is in score mode; use authenticate_score")
        doc = self._auth(identity, probe)
        value = doc.get("match")
        if not isinstance(value, bool):
            raise WireProtocolError(f"expected a boolean match, got {value!r}")
        return value

    def enroll(self, identity: str, template) -> None:
        values = as_vector(template, name="template").tolist()
        self._request({"op": "enroll", "claim": identity, "template": values})

    @property
    def queries(self) -> int:
        doc = self._request({"op": "stats"})
        value = doc.get("queries")
        if not isinstance(value, int) or isinstance(value, bool):
            raise WireProtocolError(f"expected an integer query count, got {value!r}")
        return value

    def reset_ledger(self) -> None:
        self._request({"op": "reset"})

    def close(self) -> None:
        try:
            self._file.close()
        finally:
            self._sock.close()

    def __enter__(self) -> "RemoteOracle":
        return self

    def __exit__(self, *exc_info) -> None:
        self.close()


def remote_oracle(address, *, metric: Metric, mode: OracleMode, timeout: float = 30.0) -> RemoteOracle:
    """Connect to a served oracle; raises ``ConnectionError`` when unreachable."""
    return RemoteOracle(address, metric=metric, mode=mode, timeout=timeout)
