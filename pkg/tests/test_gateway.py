import json
import threading

import pytest

from rubricrl.errors import ConfigError, FixtureError, ProtocolError, TransportError
from rubricrl.gateway import (
    ChatRequest,
    FixtureKey,
    Gateway,
    Message,
    ModelEndpoint,
    ResponderFixture,
    ScriptedFixture,
    TransportFailure,
    build_payload,
)

from conftest import scripted_gateway


class FakeTransport:
    """Scripted sequence of (status, body) results or TransportFailure markers."""

    def __init__(self, outcomes):
        self.outcomes = list(outcomes)
        self.calls = []

    def post(self, url, headers, payload, timeout):
        self.calls.append({"url": url, "headers": headers, "payload": payload})
        outcome = self.outcomes.pop(0)
        if outcome == "fail":
            raise TransportFailure("connection reset")
        return outcome


def ok_body(content="hello"):
    return (200, {"choices": [{"message": {"content": content}}]})


def remote_endpoint(**kwargs):
    defaults = dict(
        name="remote",
        kind="remote",
        base_url="https://api.example.test/v1",
        model_id="judge-7b",
        backoff_base=0.01,
        backoff_cap=0.05,
        backoff_jitter=0.0,
    )
    defaults.update(kwargs)
    return ModelEndpoint(**defaults)


def make_remote_gateway(outcomes, sleeps=None, **endpoint_kwargs):
    transport = FakeTransport(outcomes)
    recorded = sleeps if sleeps is not None else []
    gateway = Gateway(transport=transport, sleep=recorded.append)
    gateway.register(remote_endpoint(**endpoint_kwargs))
    return gateway, transport, recorded


class TestScripted:
    def test_lookup(self):
        gateway = scripted_gateway("judge", {"s1/policy/0": "canned"})
        request = ChatRequest.user("prompt", fixture_key=FixtureKey("s1", "policy"))
        assert gateway.complete("judge", request) == "canned"

    def test_missing_key(self):
        gateway = scripted_gateway("judge", {})
        request = ChatRequest.user("prompt", fixture_key=FixtureKey("s1", "policy"))
        with pytest.raises(FixtureError):
            gateway.complete("judge", request)

    def test_missing_fixture_key(self):
        gateway = scripted_gateway("judge", {"s1/policy/0": "x"})
        with pytest.raises(FixtureError):
            gateway.complete("judge", ChatRequest.user("prompt"))

    def test_fixture_file_round_trip(self, tmp_path):
        path = tmp_path / "fixture.json"
        path.write_text(json.dumps({"s1/proxy/0": "from disk"}))
        gateway = Gateway()
        gateway.register(
            ModelEndpoint(name="p", kind="scripted", fixture_path=str(path))
        )
        request = ChatRequest.user("q", fixture_key=FixtureKey("s1", "proxy"))
        assert gateway.complete("p", request) == "from disk"

    def test_fixture_file_must_be_object(self, tmp_path):
        path = tmp_path / "bad.json"
        path.write_text("[1, 2]")
        with pytest.raises(ConfigError):
            ScriptedFixture.load(path)

    def test_responder_fixture(self):
        gateway = Gateway()
        gateway.register(
            ModelEndpoint(name="rule", kind="scripted"),
            fixture=ResponderFixture(lambda req: req.messages[-1].content.upper()),
        )
        assert gateway.complete("rule", ChatRequest.user("shout")) == "SHOUT"

    def test_group_draw_indices(self):
        entries = {f"s1/policy/{i}": f"draw-{i}" for i in range(3)}
        gateway = scripted_gateway("judge", entries)
        request = ChatRequest.user("prompt", fixture_key=FixtureKey("s1", "policy"))
        assert gateway.complete_group("judge", request, 3) == [
            "draw-0",
            "draw-1",
            "draw-2",
        ]

    def test_unregistered_endpoint(self):
        with pytest.raises(ConfigError):
            Gateway().complete("ghost", ChatRequest.user("x"))


class TestEndpointValidation:
    def test_remote_requires_base_url(self):
        with pytest.raises(ConfigError):
            ModelEndpoint(name="r", kind="remote", model_id="m").validate()

    def test_scripted_requires_fixture(self):
        with pytest.raises(ConfigError):
            ModelEndpoint(name="s", kind="scripted").validate()

    def test_unknown_kind(self):
        with pytest.raises(ConfigError):
            ModelEndpoint(name="x", kind="local").validate()


class TestPayload:
    def test_text_only(self):
        endpoint = remote_endpoint(temperature=0.7, max_tokens=256)
        payload = build_payload(
            endpoint,
            ChatRequest(messages=(Message("system", "be fair"), Message("user", "q"))),
        )
        assert payload["model"] == "judge-7b"
        assert payload["temperature"] == 0.7
        assert payload["max_tokens"] == 256
        assert payload["messages"] == [
            {"role": "system", "content": "be fair"},
            {"role": "user", "content": "q"},
        ]

    def test_image_refs_attach_to_last_user_message(self):
        payload = build_payload(
            remote_endpoint(),
            ChatRequest.user("look", image_refs=("img://a", "img://b")),
        )
        content = payload["messages"][0]["content"]
        assert content[0] == {"type": "text", "text": "look"}
        assert content[1]["image_url"]["url"] == "img://a"
        assert content[2]["image_url"]["url"] == "img://b"


class TestRemoteRetry:
    def test_success_first_try(self):
        gateway, transport, sleeps = make_remote_gateway([ok_body("hi")])
        assert gateway.complete("remote", ChatRequest.user("q")) == "hi"
        assert len(transport.calls) == 1
        assert sleeps == []
        assert transport.calls[0]["url"] == (
            "https://api.example.test/v1/chat/completions"
        )

    def test_success_on_third_attempt(self):
        gateway, transport, sleeps = make_remote_gateway(
            ["fail", (503, None), ok_body("late")]
        )
        assert gateway.complete("remote", ChatRequest.user("q")) == "late"
        assert len(transport.calls) == 3
        assert len(sleeps) == 2

    def test_exhaustion_counts_attempts(self):
        gateway, transport, _ = make_remote_gateway(
            ["fail"] * 4, max_retries=3
        )
        with pytest.raises(TransportError) as exc:
            gateway.complete("remote", ChatRequest.user("q"))
        assert exc.value.attempts == 4
        assert len(transport.calls) == 4

    def test_non_retryable_status_raises_immediately(self):
        gateway, transport, _ = make_remote_gateway([(401, {"error": "no"})])
        with pytest.raises(ProtocolError) as exc:
            gateway.complete("remote", ChatRequest.user("q"))
        assert exc.value.status == 401
        assert len(transport.calls) == 1

    def test_retryable_statuses(self):
        for status in (408, 429, 500, 502, 503, 504):
            gateway, transport, _ = make_remote_gateway([(status, None), ok_body()])
            assert gateway.complete("remote", ChatRequest.user("q")) == "hello"
            assert len(transport.calls) == 2

    def test_backoff_non_decreasing(self):
        gateway, _, sleeps = make_remote_gateway(
            ["fail"] * 5, max_retries=4, backoff_jitter=0.3
        )
        with pytest.raises(TransportError):
            gateway.complete("remote", ChatRequest.user("q"))
        assert len(sleeps) == 4
        assert all(b >= a for a, b in zip(sleeps, sleeps[1:]))

    def test_backoff_grows_exponentially_without_jitter(self):
        gateway, _, sleeps = make_remote_gateway(
            ["fail"] * 4, max_retries=3, backoff_base=0.01, backoff_cap=100.0
        )
        with pytest.raises(TransportError):
            gateway.complete("remote", ChatRequest.user("q"))
        assert sleeps == pytest.approx([0.01, 0.02, 0.04])

    def test_malformed_success_body(self):
        gateway, _, _ = make_remote_gateway([(200, {"nope": 1})])
        with pytest.raises(ProtocolError):
            gateway.complete("remote", ChatRequest.user("q"))

    def test_bearer_token_from_env(self, monkeypatch):
        monkeypatch.setenv("TEST_API_KEY", "sekret")
        gateway, transport, _ = make_remote_gateway(
            [ok_body()], api_key_env="TEST_API_KEY"
        )
        gateway.complete("remote", ChatRequest.user("q"))
        assert transport.calls[0]["headers"]["Authorization"] == "Bearer sekret"

    def test_missing_token_env(self, monkeypatch):
        monkeypatch.delenv("MISSING_KEY", raising=False)
        gateway, _, _ = make_remote_gateway([ok_body()], api_key_env="MISSING_KEY")
        with pytest.raises(ConfigError):
            gateway.complete("remote", ChatRequest.user("q"))

    def test_temperature_zero_group_warns(self):
        gateway, _, _ = make_remote_gateway([ok_body()] * 2, temperature=0.0)
        with pytest.warns(UserWarning):
            gateway.complete_group("remote", ChatRequest.user("q"), 2)


class TestConcurrency:
    def test_in_flight_cap_respected(self):
        peak = {"now": 0, "max": 0}
        lock = threading.Lock()
        barrier = threading.Event()

        class SlowTransport:
            def post(self, url, headers, payload, timeout):
                with lock:
                    peak["now"] += 1
                    peak["max"] = max(peak["max"], peak["now"])
                barrier.wait(0.02)
                with lock:
                    peak["now"] -= 1
                return ok_body()

        gateway = Gateway(transport=SlowTransport(), sleep=lambda _: None)
        gateway.register(remote_endpoint(max_in_flight=2))
        threads = [
            threading.Thread(
                target=gateway.complete, args=("remote", ChatRequest.user("q"))
            )
            for _ in range(8)
        ]
        for t in threads:
            t.start()
        for t in threads:
            t.join()
        assert peak["max"] <= 2
