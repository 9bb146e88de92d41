"""Scripted two-template environment for desk-scale training runs.

The policy chooses between two rubric templates and a verdict.  A rule-based
scripted evaluator follows the "grounded" template to the gold verdict and is
misled by the "stylistic" template, so the transferability reward separates
the templates while the accuracy reward separates the verdicts.
"""

from __future__ import annotations

from .data import PreferenceSample
from .gateway import ChatRequest, Gateway, ModelEndpoint, ResponderFixture
from .proxy import PromptTemplates
from .trainer import ToyPolicy

GROUNDED = "T1"
STYLISTIC = "T2"

RUBRIC_BODIES = {
    GROUNDED: (
        "1. Grounded accuracy (0.7): every claim must be verifiable against "
        "the image; penalize fabricated details.\n"
        "2. Completeness (0.3): the answer should address the whole question."
    ),
    STYLISTIC: (
        "1. Stylistic flair (0.7): prefer vivid, confident phrasing over "
        "hedged statements.\n"
        "2. Brevity (0.3): shorter responses read better."
    ),
}

# Marker strings the rule-based evaluator keys on inside the rendered prompt.
MARKERS = {GROUNDED: "Grounded accuracy", STYLISTIC: "Stylistic flair"}

ACTIONS = ((GROUNDED, 1), (GROUNDED, 2), (STYLISTIC, 1), (STYLISTIC, 2))


def make_samples(n: int = 2) -> list[PreferenceSample]:
    samples = []
    for i in range(n):
        samples.append(
            PreferenceSample(
                id=f"toy-{i}",
                question=f"What is happening in scene {i}?",
                response_1=f"A literal description of scene {i} grounded in the image.",
                response_2=f"A florid but partly invented take on scene {i}.",
                gold_verdict=1 if i % 2 == 0 else 2,
                source="toy",
            )
        )
    return samples


def render_completion(action: tuple[str, int], sample: PreferenceSample) -> str:
    template_id, verdict = action
    return (
        f"<rubric>{RUBRIC_BODIES[template_id]}</rubric>"
        f"<eval>Applied template {template_id} to sample {sample.id}.</eval>"
        f"<answer>{verdict}</answer>"
    )


def make_responder(
    samples: list[PreferenceSample],
    transferable_template: str = GROUNDED,
    invert: bool = False,
):
    """Rule-based evaluator: answers gold iff the transferable template's
    marker appears in the prompt (inverted for the anti-correlated twin)."""
    gold = {s.id: s.gold_verdict for s in samples}
    marker = MARKERS[transferable_template]

    def respond(request: ChatRequest) -> str:
        sample_gold = gold[request.fixture_key.sample_id]
        follows = marker in request.messages[-1].content
        if invert:
            follows = not follows
        verdict = sample_gold if follows else 3 - sample_gold
        return f"<think>applied the provided rubric</think><answer>{verdict}</answer>"

    return respond


def make_gateway(
    samples: list[PreferenceSample], proxy_specs: list[tuple[str, bool]]
) -> Gateway:
    """Build an offline gateway with one rule-based evaluator per spec entry
    (name, invert)."""
    gateway = Gateway()
    for name, invert in proxy_specs:
        gateway.register(
            ModelEndpoint(name=name, kind="scripted"),
            fixture=ResponderFixture(make_responder(samples, invert=invert)),
        )
    return gateway


def make_policy(temperature: float = 1.0) -> ToyPolicy:
    return ToyPolicy(ACTIONS, temperature=temperature)


def template_probability(
    policy: ToyPolicy, samples: list[PreferenceSample], template_id: str
) -> float:
    """Mean (over contexts) total probability of actions using the template."""
    total = 0.0
    for sample in samples:
        probs = policy.probs(sample.id)
        total += sum(
            p for p, action in zip(probs, policy.actions) if action[0] == template_id
        )
    return total / len(samples)


def make_setup(anti_pair: bool = False):
    """Convenience bundle: samples, fresh policy, gateway, templates, proxies.

    ``anti_pair=True`` registers two evaluators with perfectly anti-correlated
    verdicts, whose averaged reward is identically zero.
    """
    samples = make_samples()
    if anti_pair:
        proxy_specs = [("proxy-a", False), ("proxy-b", True)]
    else:
        proxy_specs = [("proxy-a", False)]
    gateway = make_gateway(samples, proxy_specs)
    return (
        samples,
        make_policy(),
        gateway,
        PromptTemplates.defaults(),
        [name for name, _ in proxy_specs],
    )
