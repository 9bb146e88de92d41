"""Transferability checks, evaluator ensembles, and verified inference.

The frozen evaluator ("proxy") consumes the question, both responses, and an
externally supplied rubric, and returns a verdict.  A rubric is transferable
when that verdict matches gold; unparseable evaluator output counts as a
failed transfer, while transport failures propagate as errors.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, asdict
from importlib import resources

from .data import PreferenceSample
from .errors import ValidationError
from .formats import (
    ProxyOutput,
    Rubric,
    StructuredOutput,
    parse_grm_output,
    parse_proxy_output,
    render_policy_prompt,
    render_proxy_prompt,
)
from .gateway import ChatRequest, FixtureKey, Gateway
from .rewards import ensemble_proxy_reward, proxy_reward, transferability

PURPOSE_POLICY = "policy"
PURPOSE_PROXY = "proxy"
PURPOSE_TEACHER = "teacher"
PURPOSE_TRANSFER = "transfer"


@dataclass(frozen=True)
class PromptTemplates:
    policy: str
    proxy: str

    @classmethod
    def defaults(cls) -> "PromptTemplates":
        package = resources.files("rubricrl.templates")
        return cls(
            policy=(package / "policy_prompt.txt").read_text(encoding="utf-8"),
            proxy=(package / "proxy_prompt.txt").read_text(encoding="utf-8"),
        )

    @classmethod
    def load(cls, policy_path=None, proxy_path=None) -> "PromptTemplates":
        defaults = cls.defaults()
        policy = defaults.policy
        proxy = defaults.proxy
        if policy_path:
            with open(policy_path, encoding="utf-8") as handle:
                policy = handle.read()
        if proxy_path:
            with open(proxy_path, encoding="utf-8") as handle:
                proxy = handle.read()
        return cls(policy=policy, proxy=proxy)


@dataclass(frozen=True)
class TransferOutcome:
    sample_id: str
    proxy_name: str
    proxy_verdict: int | None
    transferable: int
    raw: str

    @property
    def reward(self) -> float:
        return 2.0 * self.transferable - 1.0


@dataclass(frozen=True)
class VerifiedInference:
    sample_id: str
    policy_verdict: int | None
    proxy_verdict: int | None
    agreement: bool
    final_verdict: int | None
    valid: bool = True

    def to_json(self) -> str:
        return json.dumps(asdict(self), sort_keys=True)


def check_transfer(
    sample: PreferenceSample,
    rubric: Rubric,
    proxy_name: str,
    gateway: Gateway,
    templates: PromptTemplates,
    draw: int = 0,
) -> TransferOutcome:
    """Ask one frozen evaluator to judge the pair using only the given rubric."""
    if not rubric.raw.strip():
        raise ValidationError("check_transfer requires a non-empty rubric")
    prompt = render_proxy_prompt(sample, rubric, templates.proxy)
    request = ChatRequest.user(
        prompt,
        image_refs=(sample.image_ref,) if sample.image_ref else (),
        fixture_key=FixtureKey(sample.id, PURPOSE_PROXY, draw),
    )
    raw = gateway.complete(proxy_name, request)
    parsed = parse_proxy_output(raw)
    verdict = parsed.answer if isinstance(parsed, ProxyOutput) else None
    return TransferOutcome(
        sample_id=sample.id,
        proxy_name=proxy_name,
        proxy_verdict=verdict,
        transferable=transferability(verdict, sample.gold_verdict),
        raw=raw,
    )


def check_transfer_ensemble(
    sample: PreferenceSample,
    rubric: Rubric,
    proxy_names: list[str],
    gateway: Gateway,
    templates: PromptTemplates,
    draw: int = 0,
) -> tuple[list[TransferOutcome], float]:
    """Query each evaluator independently; the reward is their unweighted mean."""
    if not proxy_names:
        raise ValidationError("check_transfer_ensemble requires at least one proxy")
    outcomes = [
        check_transfer(sample, rubric, name, gateway, templates, draw=draw)
        for name in proxy_names
    ]
    mean = ensemble_proxy_reward(
        [proxy_reward(o.proxy_verdict, sample.gold_verdict) for o in outcomes]
    )
    return outcomes, mean


def proxy_verified_infer(
    sample: PreferenceSample,
    policy_name: str,
    proxy_name: str,
    gateway: Gateway,
    templates: PromptTemplates,
) -> VerifiedInference:
    """Verified inference: judge once, forward the rubric to the evaluator,
    log agreement.  The judge's verdict is always the final one; a malformed
    judge output yields an invalid record and skips the evaluator call."""
    prompt = render_policy_prompt(sample, templates.policy)
    request = ChatRequest.user(
        prompt,
        image_refs=(sample.image_ref,) if sample.image_ref else (),
        fixture_key=FixtureKey(sample.id, PURPOSE_POLICY, 0),
    )
    raw = gateway.complete(policy_name, request)
    parsed = parse_grm_output(raw)
    if not isinstance(parsed, StructuredOutput):
        return VerifiedInference(
            sample_id=sample.id,
            policy_verdict=None,
            proxy_verdict=None,
            agreement=False,
            final_verdict=None,
            valid=False,
        )
    outcome = check_transfer(
        sample, parsed.rubric, proxy_name, gateway, templates
    )
    return VerifiedInference(
        sample_id=sample.id,
        policy_verdict=parsed.answer,
        proxy_verdict=outcome.proxy_verdict,
        agreement=outcome.proxy_verdict == parsed.answer,
        final_verdict=parsed.answer,
    )


def append_verified_inference(path, record: VerifiedInference):
    """Append one record to the line-delimited disagreement log."""
    with open(path, "a", encoding="utf-8") as handle:
        handle.write(record.to_json() + "\n")
