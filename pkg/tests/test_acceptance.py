"""Acceptance suite: one printed pass/fail line per criterion.

Each test checks a documented guarantee end to end, against independently
computed expected values, and enforces a wall-clock budget.
"""

import itertools
import math
import random
import threading
import time
from contextlib import contextmanager

import numpy as np
import pytest

from rubricrl import toyenv
from rubricrl.bench import (
    BenchmarkSample,
    evaluate,
    transfer_experiment,
    transfer_matrix_rows,
)
from rubricrl.data import allocate_splits
from rubricrl.errors import TransportError
from rubricrl.formats import (
    FormatError,
    FormatErrorKind,
    StructuredOutput,
    check_format,
    parse_grm_output,
)
from rubricrl.gateway import (
    ChatRequest,
    Gateway,
    ModelEndpoint,
    ResponderFixture,
    TransportFailure,
)
from rubricrl.proxy import PromptTemplates
from rubricrl.rewards import composite_reward, get_feedback_config
from rubricrl.trainer import TrainConfig, group_advantages, train_loop

TEMPLATES = PromptTemplates.defaults()


@contextmanager
def criterion(capsys, name, budget_seconds):
    start = time.monotonic()
    try:
        yield
        elapsed = time.monotonic() - start
        assert elapsed < budget_seconds, (
            f"{name}: took {elapsed:.1f}s, budget {budget_seconds}s"
        )
    except BaseException:
        with capsys.disabled():
            print(f"[acceptance] FAIL {name}")
        raise
    with capsys.disabled():
        print(f"[acceptance] PASS {name} ({elapsed:.2f}s)")


# Expected cell totals per scheme, written out by hand (format term excluded).
EXPECTED_CELLS = {
    "fb1": {(1, 1): 1.5, (1, -1): 0.5, (-1, 1): -1.0, (-1, -1): -1.0},
    "fb2": {(1, 1): 1.5, (1, -1): 0.5, (-1, 1): -1.5, (-1, -1): -1.0},
    "fb3": {(1, 1): 1.5, (1, -1): 0.5, (-1, 1): -1.5, (-1, -1): -2.0},
    "fb4": {(1, 1): 1.0, (1, -1): 0.5, (-1, 1): -1.0, (-1, -1): -1.0},
    "fb5": {(1, 1): 1.5, (1, -1): 0.5, (-1, 1): -1.0, (-1, -1): -1.0},
    "fb6": {(1, 1): 1.5, (1, -1): 0.5, (-1, 1): -1.5, (-1, -1): -1.0},
    "fb7": {(1, 1): 1.5, (1, -1): 0.5, (-1, 1): -1.5, (-1, -1): -2.0},
}


def test_reward_tables(capsys):
    with criterion(capsys, "reward tables (28 cells + additive cube)", 1.0):
        for name, cells in EXPECTED_CELLS.items():
            config = get_feedback_config(name)
            for (acc, proxy), expected in cells.items():
                assert composite_reward(float(acc), float(proxy), 0.0, config) == (
                    expected
                ), f"{name} cell {(acc, proxy)}"
        additive = get_feedback_config("additive")
        seen = set()
        for acc, proxy, fmt in itertools.product((-1.0, 1.0), (-1.0, 1.0), (0.0, 1.0)):
            value = composite_reward(acc, proxy, fmt, additive)
            # Independent oracle: plain sum with half-weight format term.
            assert value == acc + proxy + 0.5 * fmt
            seen.add(value)
        assert seen == {2.5, 2.0, 0.5, 0.0, -1.5, -2.0}
        assert composite_reward(-1.0, -1.0, 0.0, additive) == -2.0


def _macro_benchmark():
    """Three categories with exact rational per-category accuracies."""
    spec = [("perception", 5000, 3423), ("reasoning", 2500, 2327), ("judgement", 400, 241)]
    samples = []
    correct_ids = set()
    for category, total, n_correct in spec:
        for i in range(total):
            sid = f"{category}-{i}"
            samples.append(
                BenchmarkSample(
                    id=sid,
                    question=f"question {sid}?",
                    response_1="response one text",
                    response_2="response two text",
                    gold_verdict=1 + i % 2,
                    category=category,
                )
            )
            if i < n_correct:
                correct_ids.add(sid)
    return samples, correct_ids


def test_macro_accuracy_oracle(capsys):
    with criterion(capsys, "macro-accuracy oracle (0.7393)", 10.0):
        samples, correct_ids = _macro_benchmark()
        gold = {s.id: s.gold_verdict for s in samples}

        def responder(request):
            sid = request.fixture_key.sample_id
            verdict = gold[sid] if sid in correct_ids else 3 - gold[sid]
            return f"<rubric>1. A (1.0): x.</rubric><eval>e</eval><answer>{verdict}</answer>"

        gateway = Gateway()
        gateway.register(
            ModelEndpoint(name="model", kind="scripted", max_in_flight=8),
            fixture=ResponderFixture(responder),
        )
        result = evaluate("model", samples, gateway, TEMPLATES)
        assert result.per_category["perception"] == pytest.approx(0.6846)
        assert result.per_category["reasoning"] == pytest.approx(0.9308)
        assert result.per_category["judgement"] == pytest.approx(0.6025)
        assert result.macro_acc == pytest.approx(0.7393, abs=1e-4)


def test_advantage_properties(capsys):
    with criterion(capsys, "advantage properties (10k random groups)", 5.0):
        rng = np.random.default_rng(0)
        for _ in range(10_000):
            size = int(rng.integers(2, 17))
            rewards = list(rng.normal(scale=3.0, size=size))
            adv = np.asarray(group_advantages(rewards))
            assert abs(adv.mean()) < 1e-9
            shift = float(rng.uniform(-100, 100))
            shifted = np.asarray(group_advantages([r + shift for r in rewards]))
            assert np.allclose(adv, shifted, atol=1e-9)
            scale = float(rng.uniform(0.1, 10.0))
            scaled = np.asarray(group_advantages([r * scale for r in rewards]))
            assert np.allclose(adv, scaled, atol=1e-6)
        for size in range(2, 17):
            assert group_advantages([3.25] * size) == [0.0] * size
        hand = group_advantages([1.0, 1.0, -1.0])
        expected = [1 / math.sqrt(2), 1 / math.sqrt(2), -math.sqrt(2)]
        assert hand == pytest.approx(expected, abs=1e-4)


_WORDS = ("alpha", "beta", "gamma", "delta", "claim", "check", "tone", "facts")


def _random_sections(rng):
    def body():
        return " ".join(rng.choices(_WORDS, k=rng.randint(1, 8)))

    return [("rubric", body()), ("eval", body()), ("answer", str(rng.randint(1, 2)))]


def _render_sections(sections, rng, preamble=False):
    parts = []
    if preamble and rng.random() < 0.5:
        parts.append(" ".join(rng.choices(_WORDS, k=3)) + "\n")
    for tag, body in sections:
        parts.append(f"<{tag}>{body}</{tag}>")
        parts.append(rng.choice(["", " ", "\n"]))
    return "".join(parts)


def test_parser_round_trip_fuzz(capsys):
    with criterion(capsys, "parser round-trip + mutation fuzz (2x10k)", 10.0):
        rng = random.Random(1234)
        for _ in range(10_000):
            text = _render_sections(_random_sections(rng), rng, preamble=True)
            parsed = parse_grm_output(text)
            assert isinstance(parsed, StructuredOutput), text
            assert check_format(text)
            reparsed = parse_grm_output(parsed.render())
            assert reparsed == parsed
        expected_kind = {
            "drop": FormatErrorKind.MISSING_TAG,
            "reorder": FormatErrorKind.TAG_ORDER,
            "duplicate": FormatErrorKind.TRAILING_CONTENT,
        }
        for _ in range(10_000):
            sections = _random_sections(rng)
            mutation = rng.choice(("drop", "reorder", "duplicate"))
            if mutation == "drop":
                del sections[rng.randrange(3)]
            elif mutation == "reorder":
                i, j = rng.sample(range(3), 2)
                sections[i], sections[j] = sections[j], sections[i]
            else:
                sections.append(sections[rng.randrange(3)])
            text = _render_sections(sections, rng)
            result = parse_grm_output(text)
            assert isinstance(result, FormatError), text
            assert result.kind is expected_kind[mutation], (text, result)
            assert not check_format(text)


def _run_toy(steps, anti_pair, seed=0):
    samples, policy, gateway, templates, proxies = toyenv.make_setup(anti_pair)
    trajectory = []

    def on_step(step, current, metrics):
        trajectory.append(
            toyenv.template_probability(current, samples, toyenv.GROUNDED)
        )

    config = TrainConfig(steps=steps, seed=seed, proxy_endpoints=tuple(proxies))
    result = train_loop(
        samples,
        gateway,
        templates,
        config,
        get_feedback_config("additive"),
        policy=policy,
        action_renderer=toyenv.render_completion,
        on_step=on_step,
    )
    return result, trajectory, samples


def test_toy_grpo_end_to_end(capsys):
    with criterion(capsys, "toy GRPO: P(T1)>0.9, monotone reward, reproducible", 60.0):
        result, trajectory, samples = _run_toy(200, anti_pair=False)
        assert max(trajectory) > 0.9
        assert trajectory[-1] > 0.9
        composites = [m.mean_composite for m in result.history]
        window = 20
        moving = [
            sum(composites[i - window + 1 : i + 1]) / window
            for i in range(window - 1, len(composites))
        ]
        for earlier, later in zip(moving, moving[1:]):
            assert later >= earlier - 1e-9, "moving average decreased"
        # Bit-reproducibility: identical histories and identical final logits.
        again, again_trajectory, _ = _run_toy(200, anti_pair=False)
        assert trajectory == again_trajectory
        assert [m.as_row() for m in result.history] == [
            m.as_row() for m in again.history
        ]
        for sample in samples:
            assert np.array_equal(
                result.policy.logits[sample.id], again.policy.logits[sample.id]
            )


def test_ensemble_degradation(capsys):
    with criterion(capsys, "anti-correlated proxy pair washes out the signal", 120.0):
        result, trajectory, _ = _run_toy(200, anti_pair=True)
        assert all(m.mean_proxy == 0.0 for m in result.history)
        assert max(trajectory) <= 0.6
        # Control: the same run with a single aligned evaluator succeeds.
        _, single_trajectory, _ = _run_toy(200, anti_pair=False)
        assert max(single_trajectory) > 0.9


def test_data_allocation(capsys):
    with criterion(capsys, "split allocation 25000 -> 5000/10000/10000", 1.0):
        correct = [f"id-{i}" for i in range(25_000)]
        alloc = allocate_splits(correct, [], (0.2, 0.4, 0.4), seed=7)
        assert len(alloc.proxy_sft) == 5_000
        assert len(alloc.proxy_rl) == 10_000
        assert len(alloc.grm_sft) == 10_000
        assert alloc.rl_pool == []
        assert alloc == allocate_splits(correct, [], (0.2, 0.4, 0.4), seed=7)


def test_transfer_matrix(capsys):
    with criterion(capsys, "3x2 transfer matrix matches hand counts", 10.0):
        samples = [
            BenchmarkSample(
                id=f"m{i}",
                question=f"which description of scene {i} is better?",
                response_1="a grounded description",
                response_2="a flowery description",
                gold_verdict=1 + i % 2,
                category="general",
            )
            for i in range(20)
        ]
        gold = {s.id: s.gold_verdict for s in samples}
        marker = toyenv.MARKERS[toyenv.GROUNDED]

        def source(template_id):
            body = toyenv.RUBRIC_BODIES[template_id]
            return lambda req: (
                f"<rubric>{body}</rubric><eval>e</eval><answer>1</answer>"
            )

        def follower(invert):
            def respond(req):
                follows = marker in req.messages[-1].content
                if invert:
                    follows = not follows
                g = gold[req.fixture_key.sample_id]
                verdict = g if follows else 3 - g
                return f"<think>t</think><answer>{verdict}</answer>"

            return respond

        gateway = Gateway()
        endpoints = {
            "src-grounded": source(toyenv.GROUNDED),
            "src-stylistic": source(toyenv.STYLISTIC),
            "eval-follow": follower(invert=False),
            "eval-invert": follower(invert=True),
            "eval-control": lambda req: "<think>t</think><answer>1</answer>",
        }
        for name, responder in endpoints.items():
            gateway.register(
                ModelEndpoint(name=name, kind="scripted"),
                fixture=ResponderFixture(responder),
            )
        evaluators = ["eval-follow", "eval-invert", "eval-control"]
        records = []
        for src in ("src-grounded", "src-stylistic"):
            records.extend(
                transfer_experiment(src, evaluators, samples, gateway, TEMPLATES)
            )
        rows = transfer_matrix_rows(records)
        by_eval = {row["evaluator"]: row for row in rows}
        assert len(rows) == 3 and len(by_eval["eval-follow"]) == 3  # 3x2 + label
        # Hand counts over 20 samples (10 gold-1, 10 gold-2):
        assert by_eval["eval-follow"] == {
            "evaluator": "eval-follow",
            "src-grounded": 1.0,
            "src-stylistic": 0.0,
        }
        assert by_eval["eval-invert"] == {
            "evaluator": "eval-invert",
            "src-grounded": 0.0,
            "src-stylistic": 1.0,
        }
        control = by_eval["eval-control"]
        assert control["src-grounded"] == control["src-stylistic"] == 0.5


def test_gateway_contracts(capsys):
    with criterion(capsys, "gateway in-flight bound, retry cap, offline scripted", 5.0):
        # 1) in-flight bound under 16 concurrent callers, cap 3
        peak = {"now": 0, "max": 0}
        lock = threading.Lock()

        class SlowTransport:
            def post(self, url, headers, payload, timeout):
                with lock:
                    peak["now"] += 1
                    peak["max"] = max(peak["max"], peak["now"])
                time.sleep(0.01)
                with lock:
                    peak["now"] -= 1
                return 200, {"choices": [{"message": {"content": "ok"}}]}

        gateway = Gateway(transport=SlowTransport(), sleep=lambda _: None)
        gateway.register(
            ModelEndpoint(
                name="remote",
                kind="remote",
                base_url="https://example.test",
                model_id="m",
                max_in_flight=3,
            )
        )
        threads = [
            threading.Thread(
                target=gateway.complete, args=("remote", ChatRequest.user("q"))
            )
            for _ in range(16)
        ]
        for t in threads:
            t.start()
        for t in threads:
            t.join()
        assert peak["max"] <= 3

        # 2) retry count capped at max_retries + 1 attempts
        class FailingTransport:
            def __init__(self):
                self.calls = 0

            def post(self, url, headers, payload, timeout):
                self.calls += 1
                raise TransportFailure("down")

        failing = FailingTransport()
        gateway = Gateway(transport=failing, sleep=lambda _: None)
        gateway.register(
            ModelEndpoint(
                name="remote",
                kind="remote",
                base_url="https://example.test",
                model_id="m",
                max_retries=2,
            )
        )
        with pytest.raises(TransportError) as exc:
            gateway.complete("remote", ChatRequest.user("q"))
        assert failing.calls == 3
        assert exc.value.attempts == 3

        # 3) scripted mode performs zero network calls
        class ForbiddenTransport:
            def post(self, url, headers, payload, timeout):
                raise AssertionError("scripted endpoint touched the network")

        gateway = Gateway(transport=ForbiddenTransport())
        gateway.register(
            ModelEndpoint(name="scripted", kind="scripted"),
            fixture=ResponderFixture(lambda req: "canned"),
        )
        for _ in range(20):
            assert gateway.complete("scripted", ChatRequest.user("q")) == "canned"
        assert gateway.complete_group("scripted", ChatRequest.user("q"), 7) == (
            ["canned"] * 7
        )
