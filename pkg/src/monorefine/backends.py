"""Chat-completion backends shared by generators and judges.

A backend turns a :class:`ChatRequest` into response text. Realizations:

* :class:`HTTPChatBackend` speaks the OpenAI-style ``/chat/completions``
  wire format (``messages`` with system/user roles).
* :class:`ScriptedBackend` wraps a Python callable; used by tests.
* :class:`ReplayBackend` serves canned responses from a fixture table keyed
  by prompt digest, with substring rules as a fallback.

``ReplayHTTPServer`` exposes a replay table over HTTP so the real client
can be exercised end to end without network access.
"""

from __future__ import annotations

import hashlib
import json
import logging
import os
import threading
import time
from dataclasses import dataclass, field
from http.server import BaseHTTPRequestHandler, ThreadingHTTPServer
from pathlib import Path
from typing import Any, Callable, Mapping, Protocol, Sequence

import httpx

logger = logging.getLogger(__name__)


class BackendError(RuntimeError):
    """Transport-level failure after retries were exhausted."""


class ReplayMiss(BackendError):
    """A replay table holds no response for the request."""


@dataclass(frozen=True)
class ChatRequest:
    """A single chat-completion request.

    ``meta`` carries the call path (theorem, step, generator, sample, ...).
    It fixes the sampling seed, so repeated runs issue identical requests,
    and is only sent on the wire when a backend opts in.
    """

    system: str
    user: str
    temperature: float = 0.0
    max_tokens: int | None = None
    meta: Mapping[str, Any] = field(default_factory=dict)

    @property
    def digest(self) -> str:
        return prompt_digest(self.system, self.user)

    @property
    def seed(self) -> int:
        blob = json.dumps(dict(self.meta), sort_keys=True, default=str).encode()
        return int.from_bytes(hashlib.blake2b(blob, digest_size=4).digest(), "big")

    @property
    def sample(self) -> int:
        return int(self.meta.get("sample", 0))


class ChatBackend(Protocol):
    def complete(self, request: ChatRequest) -> str: ...


def prompt_digest(system: str, user: str) -> str:
    h = hashlib.sha256()
    h.update(system.encode("utf-8"))
    h.update(b"\x00")
    h.update(user.encode("utf-8"))
    return h.hexdigest()


def with_retries(
    fn: Callable[[], str],
    attempts: int = 3,
    base_delay: float = 0.5,
    sleep: Callable[[float], None] = time.sleep,
) -> str:
    """Call ``fn`` up to ``attempts`` times, backing off exponentially on BackendError."""
    last: BackendError | None = None
    for i in range(attempts):
        try:
            return fn()
        except ReplayMiss:
            raise
        except BackendError as exc:
            last = exc
            if i + 1 < attempts:
                delay = base_delay * (2**i)
                logger.warning("backend attempt %d/%d failed (%s); retrying in %.2fs",
                               i + 1, attempts, exc, delay)
                sleep(delay)
    assert last is not None
    raise BackendError(f"failed after {attempts} attempts: {last}") from last


class HTTPChatBackend:
    """OpenAI-compatible chat-completion client.

    The API key is read from the environment variable named by
    ``api_key_env`` at request time; it is never stored on the instance's
    serializable configuration.
    """

    def __init__(
        self,
        base_url: str,
        model: str,
        *,
        api_key_env: str | None = "OPENAI_API_KEY",
        timeout: float = 120.0,
        attempts: int = 3,
        base_delay: float = 0.5,
        send_seed: bool = True,
        send_metadata: bool = False,
        client: httpx.Client | None = None,
    ):
        self.url = base_url.rstrip("/") + "/chat/completions"
        self.model = model
        self.api_key_env = api_key_env
        self.attempts = attempts
        self.base_delay = base_delay
        self.send_seed = send_seed
        self.send_metadata = send_metadata
        self._client = client or httpx.Client(timeout=timeout)

    def _headers(self) -> dict[str, str]:
        headers = {"Content-Type": "application/json"}
        key = os.environ.get(self.api_key_env, "") if self.api_key_env else ""
        if key:
            headers["Authorization"] = f"Bearer {key}"
        return headers

    def payload(self, request: ChatRequest) -> dict[str, Any]:
        body: dict[str, Any] = {
            "model": self.model,
            "messages": [
                {"role": "system", "content": request.system},
                {"role": "user", "content": request.user},
            ],
            "temperature": request.temperature,
        }
        if request.max_tokens is not None:
            body["max_tokens"] = request.max_tokens
        if self.send_seed:
            body["seed"] = request.seed
        if self.send_metadata:
            body["metadata"] = {k: str(v) for k, v in request.meta.items()}
        return body

    def _once(self, request: ChatRequest) -> str:
        try:
            resp = self._client.post(self.url, json=self.payload(request), headers=self._headers())
        except httpx.HTTPError as exc:
            raise BackendError(f"transport error: {exc}") from exc
        if resp.status_code == 429 or resp.status_code >= 500:
            raise BackendError(f"HTTP {resp.status_code}: {resp.text[:200]}")
        if resp.status_code >= 400:
            # not retriable, but still a backend failure from the caller's view
            raise _Fatal(f"HTTP {resp.status_code}: {resp.text[:200]}")
        try:
            data = resp.json()
            content = data["choices"][0]["message"]["content"]
        except (ValueError, KeyError, IndexError, TypeError) as exc:
            raise BackendError(f"malformed completion payload: {exc}") from exc
        return content or ""

    def complete(self, request: ChatRequest) -> str:
        try:
            return with_retries(lambda: self._once(request), self.attempts, self.base_delay)
        except _Fatal as exc:
            raise BackendError(str(exc)) from exc

    def close(self) -> None:
        self._client.close()


class _Fatal(Exception):
    pass


class ScriptedBackend:
    """Backend driven by a callable ``fn(request) -> str``.

    Every request is appended to :attr:`calls` so tests can audit traffic.
    """

    def __init__(self, fn: Callable[[ChatRequest], str]):
        self.fn = fn
        self.calls: list[ChatRequest] = []
        self._lock = threading.Lock()

    def complete(self, request: ChatRequest) -> str:
        with self._lock:
            self.calls.append(request)
        return self.fn(request)


@dataclass
class ReplayRule:
    contains: tuple[str, ...]
    responses: tuple[str, ...]

    def matches(self, request: ChatRequest) -> bool:
        text = request.system + "\n" + request.user
        return all(s in text for s in self.contains)


class ReplayBackend:
    """Serve canned responses keyed by prompt digest, then by substring rules.

    Fixture file layout (JSON)::

        {"responses": {"<sha256 digest>": ["text", ...]},
         "rules": [{"contains": ["substr", ...], "responses": ["text", ...]}]}

    With several responses for one key, the request's ``sample`` ordinal
    selects ``responses[sample % len(responses)]``.
    """

    def __init__(
        self,
        responses: Mapping[str, Sequence[str]] | None = None,
        rules: Sequence[ReplayRule] = (),
    ):
        self.responses = {k: tuple(v) for k, v in (responses or {}).items()}
        self.rules = list(rules)
        self.calls: list[ChatRequest] = []
        self._lock = threading.Lock()

    @classmethod
    def from_dict(cls, data: Mapping[str, Any]) -> ReplayBackend:
        rules = [
            ReplayRule(tuple(r["contains"]), tuple(r["responses"]))
            for r in data.get("rules", [])
        ]
        return cls(data.get("responses", {}), rules)

    @classmethod
    def from_file(cls, path: str | Path) -> ReplayBackend:
        return cls.from_dict(json.loads(Path(path).read_text(encoding="utf-8")))

    def lookup(self, request: ChatRequest) -> str:
        options = self.responses.get(request.digest)
        if options is None:
            for rule in self.rules:
                if rule.matches(request):
                    options = rule.responses
                    break
        if not options:
            raise ReplayMiss(f"no replay entry for prompt digest {request.digest[:12]}")
        return options[request.sample % len(options)]

    def complete(self, request: ChatRequest) -> str:
        with self._lock:
            self.calls.append(request)
        return self.lookup(request)


class ReplayHTTPServer:
    """A local chat-completion endpoint answering from a :class:`ReplayBackend`.

    The request's ``metadata.sample`` (if present) selects among multiple
    canned responses; otherwise the first is used.
    """

    def __init__(self, replay: ReplayBackend, host: str = "127.0.0.1", port: int = 0):
        self.replay = replay
        self.requests: list[dict[str, Any]] = []
        self.headers: list[dict[str, str]] = []
        outer = self

        class Handler(BaseHTTPRequestHandler):
            def log_message(self, fmt, *args):  # silence default stderr logging
                pass

            def do_POST(self):
                if not self.path.rstrip("/").endswith("/chat/completions"):
                    self.send_error(404)
                    return
                length = int(self.headers.get("Content-Length", 0))
                body = json.loads(self.rfile.read(length) or b"{}")
                outer.requests.append(body)
                outer.headers.append(dict(self.headers))
                msgs = {m["role"]: m["content"] for m in body.get("messages", [])}
                meta = body.get("metadata") or {}
                req = ChatRequest(msgs.get("system", ""), msgs.get("user", ""), meta=meta)
                try:
                    text = outer.replay.lookup(req)
                except ReplayMiss as exc:
                    self._reply(404, {"error": {"message": str(exc)}})
                    return
                self._reply(200, {
                    "id": "replay-" + req.digest[:12],
                    "object": "chat.completion",
                    "model": body.get("model", "replay"),
                    "choices": [{
                        "index": 0,
                        "message": {"role": "assistant", "content": text},
                        "finish_reason": "stop",
                    }],
                })

            def _reply(self, status: int, payload: dict[str, Any]) -> None:
                data = json.dumps(payload).encode("utf-8")
                self.send_response(status)
                self.send_header("Content-Type", "application/json")
                self.send_header("Content-Length", str(len(data)))
                self.end_headers()
                self.wfile.write(data)

        self._server = ThreadingHTTPServer((host, port), Handler)
        self._thread = threading.Thread(target=self._server.serve_forever, daemon=True)

    @property
    def base_url(self) -> str:
        host, port = self._server.server_address[:2]
        return f"http://{host}:{port}/v1"

    def __enter__(self) -> ReplayHTTPServer:
        self._thread.start()
        return self

    def __exit__(self, *exc) -> None:
        self._server.shutdown()
        self._server.server_close()
