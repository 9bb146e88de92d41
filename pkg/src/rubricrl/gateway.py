"""Uniform completion interface over scripted fixtures and remote chat services.

This is the only module that performs network I/O.  Remote endpoints speak
the common chat-completions JSON shape: POST {base_url}/chat/completions with
a messages array; the bearer token comes from the environment variable named
on the endpoint.  Scripted endpoints answer from a fixture keyed by
"sample_id/purpose/draw" (or from a callable responder for rule-based test
environments) and never touch the network.
"""

from __future__ import annotations

import json
import os
import random
import threading
import time
import warnings
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field, replace

import requests

from .errors import ConfigError, FixtureError, ProtocolError, TransportError

RETRYABLE_STATUSES = frozenset({408, 429, 500, 502, 503, 504})


@dataclass(frozen=True)
class ModelEndpoint:
    name: str
    kind: str  # "scripted" | "remote"
    base_url: str | None = None
    model_id: str | None = None
    api_key_env: str | None = None
    fixture_path: str | None = None
    temperature: float = 0.0
    max_tokens: int = 1024
    timeout: float = 30.0
    max_retries: int = 3
    max_in_flight: int = 4
    backoff_base: float = 0.25
    backoff_cap: float = 8.0
    backoff_jitter: float = 0.1

    def validate(self, has_fixture: bool = False):
        if self.kind not in ("scripted", "remote"):
            raise ConfigError(f"endpoint {self.name!r}: unknown kind {self.kind!r}")
        if self.kind == "remote" and (not self.base_url or not self.model_id):
            raise ConfigError(
                f"endpoint {self.name!r}: remote endpoints need base_url and model_id"
            )
        if self.kind == "scripted" and not (self.fixture_path or has_fixture):
            raise ConfigError(
                f"endpoint {self.name!r}: scripted endpoints need a fixture"
            )
        if self.temperature < 0:
            raise ConfigError(f"endpoint {self.name!r}: temperature must be >= 0")
        if self.max_tokens <= 0 or self.max_in_flight <= 0:
            raise ConfigError(
                f"endpoint {self.name!r}: max_tokens and max_in_flight must be positive"
            )


@dataclass(frozen=True)
class FixtureKey:
    sample_id: str
    purpose: str
    draw: int = 0

    def as_string(self) -> str:
        return f"{self.sample_id}/{self.purpose}/{self.draw}"


@dataclass(frozen=True)
class Message:
    role: str  # "system" | "user"
    content: str


@dataclass(frozen=True)
class ChatRequest:
    messages: tuple[Message, ...]
    image_refs: tuple[str, ...] = ()
    fixture_key: FixtureKey | None = None

    @classmethod
    def user(
        cls,
        content: str,
        image_refs: tuple[str, ...] = (),
        fixture_key: FixtureKey | None = None,
        system: str | None = None,
    ) -> "ChatRequest":
        messages: list[Message] = []
        if system is not None:
            messages.append(Message("system", system))
        messages.append(Message("user", content))
        return cls(
            messages=tuple(messages), image_refs=image_refs, fixture_key=fixture_key
        )


@dataclass(frozen=True)
class ChatResponse:
    content: str
    finish_reason: str = "stop"


@dataclass(frozen=True)
class ChatExchange:
    request: ChatRequest
    response: ChatResponse


class ScriptedFixture:
    """Static map from "sample_id/purpose/draw" to canned completion text."""

    def __init__(self, entries: dict[str, str]):
        self.entries = dict(entries)

    @classmethod
    def load(cls, path) -> "ScriptedFixture":
        with open(path, encoding="utf-8") as handle:
            entries = json.load(handle)
        if not isinstance(entries, dict):
            raise ConfigError(f"fixture file {path} must hold a JSON object")
        return cls(entries)

    def lookup(self, key: FixtureKey) -> str:
        try:
            return self.entries[key.as_string()]
        except KeyError:
            raise FixtureError(f"no fixture entry for key {key.as_string()!r}") from None


class ResponderFixture:
    """Rule-based scripted backend: completions computed from the request.

    Used by desk-scale training environments whose canned answers must depend
    on prompt content (e.g. which rubric template appears in the prompt).
    """

    def __init__(self, responder):
        self._responder = responder

    def respond(self, request: ChatRequest) -> str:
        return self._responder(request)


def build_payload(endpoint: ModelEndpoint, request: ChatRequest) -> dict:
    """Chat-completions request body; image refs become URL content parts."""
    messages = []
    for i, message in enumerate(request.messages):
        is_last_user = message.role == "user" and i == len(request.messages) - 1
        if request.image_refs and is_last_user:
            content: object = [
                {"type": "text", "text": message.content},
                *(
                    {"type": "image_url", "image_url": {"url": ref}}
                    for ref in request.image_refs
                ),
            ]
        else:
            content = message.content
        messages.append({"role": message.role, "content": content})
    return {
        "model": endpoint.model_id,
        "messages": messages,
        "temperature": endpoint.temperature,
        "max_tokens": endpoint.max_tokens,
    }


class TransportFailure(Exception):
    """Raised by transports on timeouts or connection failures (retryable)."""


class RequestsTransport:
    """Default HTTP transport."""

    def post(self, url: str, headers: dict, payload: dict, timeout: float):
        try:
            response = requests.post(
                url, headers=headers, json=payload, timeout=timeout
            )
        except (requests.Timeout, requests.ConnectionError) as exc:
            raise TransportFailure(str(exc)) from exc
        body = None
        try:
            body = response.json()
        except ValueError:
            pass
        return response.status_code, body


@dataclass
class _EndpointState:
    endpoint: ModelEndpoint
    fixture: ScriptedFixture | ResponderFixture | None
    semaphore: threading.Semaphore = field(init=False)

    def __post_init__(self):
        self.semaphore = threading.Semaphore(self.endpoint.max_in_flight)


class Gateway:
    """Shared, thread-safe completion front end.

    Each endpoint gets its own in-flight semaphore; retries use exponential
    backoff with bounded jitter and delays that never decrease.
    """

    def __init__(self, transport=None, sleep=time.sleep, jitter_rng=None):
        self._transport = transport or RequestsTransport()
        self._sleep = sleep
        self._jitter = jitter_rng or random.Random(0)
        self._states: dict[str, _EndpointState] = {}

    def register(
        self,
        endpoint: ModelEndpoint,
        fixture: ScriptedFixture | ResponderFixture | None = None,
    ):
        if endpoint.kind == "scripted" and fixture is None:
            if endpoint.fixture_path is None:
                endpoint.validate(has_fixture=False)
            fixture = ScriptedFixture.load(endpoint.fixture_path)
        endpoint.validate(has_fixture=fixture is not None)
        self._states[endpoint.name] = _EndpointState(endpoint, fixture)

    def endpoint(self, name: str) -> ModelEndpoint:
        return self._state(name).endpoint

    def _state(self, name: str) -> _EndpointState:
        try:
            return self._states[name]
        except KeyError:
            raise ConfigError(f"endpoint {name!r} is not registered") from None

    def complete(self, endpoint_name: str, request: ChatRequest) -> str:
        state = self._state(endpoint_name)
        if state.endpoint.kind == "scripted":
            return self._complete_scripted(state, request)
        with state.semaphore:
            return self._complete_remote(state, request)

    def complete_group(
        self, endpoint_name: str, request: ChatRequest, group_size: int
    ) -> list[str]:
        """Draw ``group_size`` completions; draw i uses fixture draw index i.

        Remote draws are independent sampled requests; any member failing
        after retries fails the whole group.
        """
        if group_size < 1:
            raise ConfigError("group size must be >= 1")
        state = self._state(endpoint_name)
        if group_size > 1 and state.endpoint.kind == "remote":
            if state.endpoint.temperature == 0:
                warnings.warn(
                    f"endpoint {endpoint_name!r}: sampling {group_size} draws "
                    "at temperature 0 will repeat the same completion",
                    stacklevel=2,
                )
        requests_by_draw = [
            self._with_draw(request, draw) for draw in range(group_size)
        ]
        if state.endpoint.kind == "scripted":
            return [self._complete_scripted(state, r) for r in requests_by_draw]
        with ThreadPoolExecutor(max_workers=group_size) as pool:
            futures = [
                pool.submit(self.complete, endpoint_name, r) for r in requests_by_draw
            ]
            return [f.result() for f in futures]

    @staticmethod
    def _with_draw(request: ChatRequest, draw: int) -> ChatRequest:
        if request.fixture_key is None:
            return request
        return replace(request, fixture_key=replace(request.fixture_key, draw=draw))

    def _complete_scripted(self, state: _EndpointState, request: ChatRequest) -> str:
        fixture = state.fixture
        if isinstance(fixture, ResponderFixture):
            return fixture.respond(request)
        assert isinstance(fixture, ScriptedFixture)
        if request.fixture_key is None:
            raise FixtureError(
                f"endpoint {state.endpoint.name!r}: scripted requests need a "
                "fixture key"
            )
        return fixture.lookup(request.fixture_key)

    def _complete_remote(self, state: _EndpointState, request: ChatRequest) -> str:
        endpoint = state.endpoint
        url = f"{endpoint.base_url.rstrip('/')}/chat/completions"
        headers = {"Content-Type": "application/json"}
        if endpoint.api_key_env:
            token = os.environ.get(endpoint.api_key_env)
            if not token:
                raise ConfigError(
                    f"endpoint {endpoint.name!r}: environment variable "
                    f"{endpoint.api_key_env} is not set"
                )
            headers["Authorization"] = f"Bearer {token}"
        payload = build_payload(endpoint, request)
        max_attempts = endpoint.max_retries + 1
        last_failure = "transport failure"
        previous_delay = 0.0
        for attempt in range(1, max_attempts + 1):
            try:
                status, body = self._transport.post(
                    url, headers, payload, endpoint.timeout
                )
            except TransportFailure as exc:
                last_failure = str(exc)
                status, body = None, None
            if status is not None:
                if 200 <= status < 300:
                    return self._extract_content(endpoint, body)
                if status not in RETRYABLE_STATUSES:
                    raise ProtocolError(
                        f"endpoint {endpoint.name!r}: request rejected", status
                    )
                last_failure = f"status {status}"
            if attempt < max_attempts:
                delay = min(
                    endpoint.backoff_cap, endpoint.backoff_base * 2 ** (attempt - 1)
                )
                delay += endpoint.backoff_jitter * self._jitter.random()
                delay = max(delay, previous_delay)  # never back off downward
                previous_delay = delay
                self._sleep(delay)
        raise TransportError(
            f"endpoint {endpoint.name!r}: {last_failure}", attempts=max_attempts
        )

    @staticmethod
    def _extract_content(endpoint: ModelEndpoint, body) -> str:
        try:
            return body["choices"][0]["message"]["content"]
        except (TypeError, KeyError, IndexError):
            raise ProtocolError(
                f"endpoint {endpoint.name!r}: malformed completion body", 200
            ) from None
