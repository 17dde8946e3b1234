"""HTTP transports: a real one backed by requests, and a cassette replay
double for tests.

A cassette is a JSON file of recorded request/response pairs. Replay matches
each outgoing request against the unconsumed recordings by exact URL and
byte-for-byte body equality, so any drift in how requests are built fails
loudly instead of silently returning the wrong recording.
"""

from __future__ import annotations

import json
import threading
from dataclasses import dataclass, field
from typing import Protocol

from .errors import CassetteMismatch, TransportError

__all__ = [
    "TransportResponse",
    "Transport",
    "RequestsTransport",
    "CassetteTransport",
    "RecordingTransport",
    "load_cassette",
]


@dataclass(frozen=True)
class TransportResponse:
    status: int
    body: bytes
    headers: dict[str, str] = field(default_factory=dict)

    def json(self):
        return json.loads(self.body.decode("utf-8"))


class Transport(Protocol):
    def post(
        self, url: str, headers: dict[str, str], body: bytes, timeout: float
    ) -> TransportResponse: ...


class RequestsTransport:
    """Real HTTP POST via a shared requests session."""

    def __init__(self, session=None):
        if session is None:
            import requests

            session = requests.Session()
        self._session = session

    def post(self, url, headers, body, timeout):
        import requests

        try:
            resp = self._session.post(url, headers=headers, data=body, timeout=timeout)
        except requests.RequestException as exc:
            raise TransportError(f"POST {url} failed: {exc}") from exc
        return TransportResponse(
            status=resp.status_code,
            body=resp.content,
            headers={k.lower(): v for k, v in resp.headers.items()},
        )


class CassetteTransport:
    """Replays recorded interactions; never touches the network.

    `interactions` is a list of dicts with "request" ({"url", "body"}) and
    "response" ({"status", "body", optional "headers"}) entries. Bodies are
    stored as text. Each recording is consumed at most once; matching
    searches all unconsumed recordings so concurrent callers may arrive in
    any order.
    """

    def __init__(self, interactions: list[dict]):
        self._interactions = list(interactions)
        self._consumed = [False] * len(self._interactions)
        self._lock = threading.Lock()
        self.request_count = 0

    def post(self, url, headers, body, timeout):
        text = body.decode("utf-8") if isinstance(body, (bytes, bytearray)) else str(body)
        with self._lock:
            self.request_count += 1
            for idx, inter in enumerate(self._interactions):
                if self._consumed[idx]:
                    continue
                req = inter["request"]
                if req.get("url") == url and req.get("body") == text:
                    self._consumed[idx] = True
                    resp = inter["response"]
                    return TransportResponse(
                        status=int(resp.get("status", 200)),
                        body=str(resp.get("body", "")).encode("utf-8"),
                        headers=dict(resp.get("headers", {})),
                    )
        raise CassetteMismatch(
            f"no unconsumed recording matches POST {url} with body {text[:200]!r}"
        )

    @property
    def remaining(self) -> int:
        with self._lock:
            return self._consumed.count(False)

    def assert_exhausted(self):
        if self.remaining:
            raise CassetteMismatch(f"{self.remaining} recorded interaction(s) never replayed")


class RecordingTransport:
    """Wraps a real transport and records every interaction for later replay."""

    def __init__(self, inner: Transport):
        self._inner = inner
        self.interactions: list[dict] = []
        self._lock = threading.Lock()

    def post(self, url, headers, body, timeout):
        resp = self._inner.post(url, headers, body, timeout)
        text = body.decode("utf-8") if isinstance(body, (bytes, bytearray)) else str(body)
        with self._lock:
            self.interactions.append(
                {
                    "request": {"url": url, "body": text},
                    "response": {
                        "status": resp.status,
                        "body": resp.body.decode("utf-8", errors="replace"),
                        "headers": dict(resp.headers),
                    },
                }
            )
        return resp

    def dump(self, path: str):
        with open(path, "w", encoding="utf-8") as fh:
            json.dump({"interactions": self.interactions}, fh, indent=2)


def load_cassette(path: str) -> CassetteTransport:
    with open(path, encoding="utf-8") as fh:
        data = json.load(fh)
    return CassetteTransport(data.get("interactions", []))
