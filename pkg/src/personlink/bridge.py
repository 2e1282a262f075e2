"""Client for the external sentence-encoder bridge.

The bridge speaks newline-delimited JSON over a stream socket (TCP
``host:port`` or a unix socket path). Every request carries a client-chosen
``seq``; the matching response echoes it, so several batches may be in
flight at once. A hello round-trip reports the embedding dimension and
model name before any text is sent.
"""

from __future__ import annotations

import json
import os
import socket

from .errors import TransportError, WireProtocolError

ENDPOINT_ENV_VAR = "PERSONLINK_BRIDGE_ENDPOINT"

_CONNECT_RETRIES = 3
_RECV_SIZE = 65536


def endpoint_from_env(default: str | None = None) -> str | None:
    return os.environ.get(ENDPOINT_ENV_VAR, default)


def _parse_endpoint(endpoint: str) -> tuple[int, tuple]:
    """Split an endpoint string into (address family, connect address)."""
    if endpoint.startswith("unix:"):
        return socket.AF_UNIX, endpoint[len("unix:") :]
    if "/" in endpoint or endpoint.startswith("."):
        return socket.AF_UNIX, endpoint
    host, sep, port = endpoint.rpartition(":")
    if not sep or not port.isdigit():
        raise ValueError(f"endpoint {endpoint!r} is not host:port or a socket path")
    return socket.AF_INET, (host or "127.0.0.1", int(port))


class BridgeClient:
    """Connection to one bridge process.

    Usable as a context manager; ``embed`` may be called repeatedly on the
    same connection. Not thread-safe — callers that want concurrent batches
    should issue them through ``embed_many``, which pipelines requests on
    the single connection and reorders responses by seq.
    """

    def __init__(self, endpoint: str, timeout: float = 30.0, retries: int = _CONNECT_RETRIES):
        self.endpoint = endpoint
        self.timeout = timeout
        self.retries = retries
        self._sock: socket.socket | None = None
        self._buf = b""
        self._seq = 0
        self.dim: int | None = None
        self.model_name: str | None = None

    def __enter__(self) -> "BridgeClient":
        self.connect()
        return self

    def __exit__(self, *exc) -> None:
        self.close()

    def connect(self) -> None:
        if self._sock is not None:
            return
        family, addr = _parse_endpoint(self.endpoint)
        last_err = None
        for attempt in range(self.retries):
            sock = socket.socket(family, socket.SOCK_STREAM)
            sock.settimeout(self.timeout)
            try:
                sock.connect(addr)
            except OSError as e:
                sock.close()
                last_err = e
                continue
            self._sock = sock
            return
        raise TransportError(self.endpoint, self.retries, f"connect failed: {last_err}")

    def close(self) -> None:
        if self._sock is not None:
            self._sock.close()
            self._sock = None
        self._buf = b""

    def _next_seq(self) -> int:
        self._seq += 1
        return self._seq

    def _send(self, obj: dict) -> None:
        if self._sock is None:
            self.connect()
        payload = json.dumps(obj, separators=(",", ":")).encode() + b"\n"
        try:
            self._sock.sendall(payload)
        except OSError as e:
            self.close()
            raise TransportError(self.endpoint, 0, f"send failed: {e}")

    def _recv_line(self) -> dict:
        while b"\n" not in self._buf:
            try:
                chunk = self._sock.recv(_RECV_SIZE)
            except OSError as e:
                self.close()
                raise TransportError(self.endpoint, 0, f"recv failed: {e}")
            if not chunk:
                self.close()
                raise TransportError(self.endpoint, 0, "connection closed mid-response")
            self._buf += chunk
        line, self._buf = self._buf.split(b"\n", 1)
        try:
            obj = json.loads(line)
        except json.JSONDecodeError as e:
            raise WireProtocolError(f"response is not valid JSON: {e}")
        if not isinstance(obj, dict):
            raise WireProtocolError("response is not a JSON object")
        return obj

    def _round_trip(self, requests: list[dict]) -> list[dict]:
        """Send all requests, then collect one response per seq, any order."""
        for req in requests:
            self._send(req)
        pending = {req["seq"] for req in requests}
        by_seq: dict[int, dict] = {}
        while pending:
            resp = self._recv_line()
            seq = resp.get("seq")
            if seq not in pending:
                raise WireProtocolError(f"response for unknown seq {seq!r}")
            if "error" in resp:
                raise WireProtocolError(f"bridge error: {resp['error']}")
            pending.discard(seq)
            by_seq[seq] = resp
        return [by_seq[req["seq"]] for req in requests]

    def handshake(self) -> tuple[int, str]:
        """Hello round-trip; caches and returns (dim, model_name)."""
        seq = self._next_seq()
        (resp,) = self._round_trip([{"seq": seq, "hello": True}])
        dim = resp.get("dim")
        name = resp.get("model_name")
        if not isinstance(dim, int) or dim < 1 or not isinstance(name, str):
            raise WireProtocolError(f"malformed hello response: {resp}")
        self.dim = dim
        self.model_name = name
        return dim, name

    def embed(self, texts: list[str]) -> list[list[float]]:
        """Embed one batch of texts, preserving order."""
        return self.embed_many([texts])[0]

    def embed_many(self, batches: list[list[str]]) -> list[list[list[float]]]:
        """Embed several batches with all requests in flight at once."""
        if self.dim is None:
            self.handshake()
        requests = [{"seq": self._next_seq(), "texts": b} for b in batches]
        responses = self._round_trip(requests)
        out = []
        for req, resp in zip(requests, responses):
            vectors = resp.get("vectors")
            if not isinstance(vectors, list) or len(vectors) != len(req["texts"]):
                raise WireProtocolError(
                    f"expected {len(req['texts'])} vectors, got "
                    f"{len(vectors) if isinstance(vectors, list) else type(vectors).__name__}"
                )
            if resp.get("dim") != self.dim:
                raise WireProtocolError(
                    f"batch dim {resp.get('dim')} != handshake dim {self.dim}"
                )
            for v in vectors:
                if not isinstance(v, list) or len(v) != self.dim:
                    raise WireProtocolError("vector length does not match dim")
            out.append(vectors)
        return out
