from __future__ import annotations

import pytest

from rubricrl.data import PreferenceSample
from rubricrl.gateway import Gateway, ModelEndpoint, ScriptedFixture
from rubricrl.proxy import PromptTemplates


def make_sample(
    sample_id="s1",
    question="What is shown?",
    response_1="A red bicycle leaning on a wall.",
    response_2="A blue car parked outside.",
    gold_verdict=1,
    **kwargs,
) -> PreferenceSample:
    return PreferenceSample(
        id=sample_id,
        question=question,
        response_1=response_1,
        response_2=response_2,
        gold_verdict=gold_verdict,
        **kwargs,
    )


def grm_text(rubric="1. Accuracy (1.0): check facts.", evaluation="r1 wins", answer=1):
    return f"<rubric>{rubric}</rubric><eval>{evaluation}</eval><answer>{answer}</answer>"


def proxy_text(answer=1, think="applying rubric"):
    return f"<think>{think}</think><answer>{answer}</answer>"


def scripted_gateway(name: str, entries: dict[str, str]) -> Gateway:
    gateway = Gateway()
    gateway.register(
        ModelEndpoint(name=name, kind="scripted"), fixture=ScriptedFixture(entries)
    )
    return gateway


@pytest.fixture
def templates() -> PromptTemplates:
    return PromptTemplates.defaults()
