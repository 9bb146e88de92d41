"""Group-relative rollout orchestration with a desk-scale categorical policy.

For each sample, G completions are drawn, scored with the composite reward,
and normalized into group-relative advantages.  A tabular softmax policy
validates the full reward -> advantage -> clipped-ratio update loop offline;
with a remote policy endpoint the loop instead exports per-completion
advantages for an external training system and never updates weights itself.
"""

from __future__ import annotations

import csv
import hashlib
import io
import json
from dataclasses import dataclass, field

import numpy as np

from .data import PreferenceSample
from .errors import TrainAborted, TransportError, ValidationError
from .fileio import atomic_write_text
from .formats import FormatError, StructuredOutput, parse_grm_output, render_policy_prompt
from .gateway import ChatRequest, FixtureKey, Gateway
from .proxy import PURPOSE_POLICY, PromptTemplates, check_transfer_ensemble
from .rewards import (
    FeedbackConfig,
    RewardBreakdown,
    accuracy_reward,
    breakdown,
    format_reward,
)

ADVANTAGE_EPS = 1e-8


@dataclass(frozen=True)
class RolloutGroup:
    sample_id: str
    completions: list[str]
    parsed: list[StructuredOutput | FormatError]
    rewards: list[RewardBreakdown]
    advantages: list[float]


def group_advantages(rewards: list[float]) -> list[float]:
    """Group-relative normalization: (r - mean) / (population std + eps).

    All-equal groups return exact zeros rather than relying on the epsilon.
    """
    if not rewards:
        raise ValidationError("group_advantages requires a non-empty group")
    values = np.asarray(rewards, dtype=float)
    if np.all(values == values[0]):
        return [0.0] * len(rewards)
    centered = values - values.mean()
    return list(centered / (values.std() + ADVANTAGE_EPS))


def score_completions(
    sample: PreferenceSample,
    completions: list[str],
    proxy_names: list[str],
    reward_config: FeedbackConfig,
    gateway: Gateway,
    templates: PromptTemplates,
) -> RolloutGroup:
    """Parse and reward a fixed set of completions for one sample.

    A malformed completion gets (acc=-1, format=0, proxy=-1) and triggers no
    evaluator call; well-formed ones forward their rubric to every evaluator.
    """
    parsed: list[StructuredOutput | FormatError] = []
    rewards: list[RewardBreakdown] = []
    for draw, text in enumerate(completions):
        result = parse_grm_output(text)
        parsed.append(result)
        if isinstance(result, FormatError):
            rewards.append(breakdown(-1.0, -1.0, 0.0, reward_config))
            continue
        acc = accuracy_reward(result.answer, sample.gold_verdict)
        fmt = format_reward(True)
        _, proxy = check_transfer_ensemble(
            sample, result.rubric, proxy_names, gateway, templates, draw=draw
        )
        rewards.append(breakdown(acc, proxy, fmt, reward_config))
    advantages = group_advantages([r.composite for r in rewards])
    return RolloutGroup(
        sample_id=sample.id,
        completions=list(completions),
        parsed=parsed,
        rewards=rewards,
        advantages=advantages,
    )


def collect_group(
    sample: PreferenceSample,
    policy_name: str,
    proxy_names: list[str],
    group_size: int,
    reward_config: FeedbackConfig,
    gateway: Gateway,
    templates: PromptTemplates,
) -> RolloutGroup:
    """Draw G completions from the policy endpoint and score them."""
    prompt = render_policy_prompt(sample, templates.policy)
    request = ChatRequest.user(
        prompt,
        image_refs=(sample.image_ref,) if sample.image_ref else (),
        fixture_key=FixtureKey(sample.id, PURPOSE_POLICY, 0),
    )
    completions = gateway.complete_group(policy_name, request, group_size)
    return score_completions(
        sample, completions, proxy_names, reward_config, gateway, templates
    )


class ToyPolicy:
    """Tabular softmax policy over (rubric_template_id, verdict) actions.

    Logits live in a per-context table; contexts default to sample ids.
    """

    def __init__(self, actions, temperature: float = 1.0):
        self.actions = tuple(actions)
        self.temperature = temperature
        self.logits: dict[str, np.ndarray] = {}

    def _logits(self, context: str) -> np.ndarray:
        return self.logits.setdefault(context, np.zeros(len(self.actions)))

    def probs(self, context: str) -> np.ndarray:
        scaled = self._logits(context) / self.temperature
        shifted = scaled - scaled.max()
        weights = np.exp(shifted)
        return weights / weights.sum()

    def sample_actions(self, context: str, n: int, rng: np.random.Generator):
        return rng.choice(len(self.actions), size=n, p=self.probs(context))

    def copy(self) -> "ToyPolicy":
        clone = ToyPolicy(self.actions, self.temperature)
        clone.logits = {k: v.copy() for k, v in self.logits.items()}
        return clone

    def state_dict(self) -> dict:
        return {
            "actions": [list(a) for a in self.actions],
            "temperature": self.temperature,
            "logits": {k: v.tolist() for k, v in self.logits.items()},
        }

    @classmethod
    def from_state_dict(cls, state: dict) -> "ToyPolicy":
        policy = cls(
            [tuple(a) for a in state["actions"]], temperature=state["temperature"]
        )
        policy.logits = {
            k: np.asarray(v, dtype=float) for k, v in state["logits"].items()
        }
        return policy


@dataclass(frozen=True)
class ToyRollout:
    context: str
    action_indices: list[int]
    advantages: list[float]


def toy_cold_start(
    policy: ToyPolicy,
    dataset: list[tuple[str, int]],
    learning_rate: float = 1.0,
    steps: int = 100,
) -> ToyPolicy:
    """Full-batch gradient descent on the NLL of gold (context, action) pairs."""
    if not dataset:
        raise ValidationError("toy_cold_start requires a non-empty dataset")
    trained = policy.copy()
    for _ in range(steps):
        grads: dict[str, np.ndarray] = {}
        for context, action in dataset:
            probs = trained.probs(context)
            grad = probs.copy()
            grad[action] -= 1.0  # d NLL / d logits
            grads[context] = grads.get(context, 0.0) + grad
        for context, grad in grads.items():
            trained._logits(context)
            trained.logits[context] = (
                trained.logits[context] - learning_rate * grad / len(dataset)
            )
    return trained


def toy_mean_nll(policy: ToyPolicy, dataset: list[tuple[str, int]]) -> float:
    total = 0.0
    for context, action in dataset:
        total -= float(np.log(policy.probs(context)[action]))
    return total / len(dataset)


def toy_grpo_step(
    policy: ToyPolicy,
    rollouts: list[ToyRollout],
    learning_rate: float,
    clip_ratio: float,
) -> ToyPolicy:
    """One clipped-ratio policy-gradient ascent step over collected groups.

    The old-policy snapshot is the input policy itself (single inner epoch),
    so ratios start at 1; the clipped objective is kept in general form.
    """
    updated = policy.copy()
    grads: dict[str, np.ndarray] = {}
    members = 0
    for rollout in rollouts:
        pi_old = policy.probs(rollout.context)
        pi_new = updated.probs(rollout.context)
        grad = grads.setdefault(
            rollout.context, np.zeros(len(policy.actions))
        )
        for action, advantage in zip(rollout.action_indices, rollout.advantages):
            members += 1
            if advantage == 0.0:
                continue
            ratio = pi_new[action] / pi_old[action]
            unclipped = ratio * advantage
            clipped = float(np.clip(ratio, 1 - clip_ratio, 1 + clip_ratio)) * advantage
            if unclipped > clipped + 1e-12:
                continue  # clip active: zero gradient for this member
            onehot = np.zeros(len(policy.actions))
            onehot[action] = 1.0
            grad += advantage * ratio * (onehot - pi_new)
    if members == 0:
        return updated
    for context, grad in grads.items():
        updated._logits(context)
        updated.logits[context] = (
            updated.logits[context] + learning_rate * grad / members
        )
    return updated


@dataclass(frozen=True)
class TrainConfig:
    steps: int
    group_size: int = 7
    # Tabular-logit scale; the per-step gradient is averaged over all group
    # members, so usable values are much larger than neural-net rates.
    learning_rate: float = 30.0
    clip_ratio: float = 0.2
    seed: int = 0
    reward_config_name: str = "additive"
    mode: str = "toy"  # "toy" | "export"
    policy_endpoint: str | None = None
    proxy_endpoints: tuple[str, ...] = ()
    export_path: str | None = None
    metrics_path: str | None = None
    checkpoint_path: str | None = None

    def validate(self):
        if self.steps < 0:
            raise ValidationError("steps must be >= 0")
        if self.group_size < 1:
            raise ValidationError("group size must be >= 1")
        if self.mode not in ("toy", "export"):
            raise ValidationError(f"unknown train mode {self.mode!r}")
        if self.mode == "export" and not self.policy_endpoint:
            raise ValidationError("export mode requires a policy endpoint")
        if self.mode == "export" and not self.export_path:
            raise ValidationError("export mode requires an export path")
        if not self.proxy_endpoints:
            raise ValidationError("at least one proxy endpoint is required")


@dataclass
class StepMetrics:
    step: int
    mean_acc: float
    mean_proxy: float
    mean_format: float
    mean_composite: float

    def as_row(self) -> dict:
        return {
            "step": self.step,
            "mean_acc": self.mean_acc,
            "mean_proxy": self.mean_proxy,
            "mean_format": self.mean_format,
            "mean_composite": self.mean_composite,
        }


@dataclass
class TrainResult:
    policy: ToyPolicy | None
    history: list[StepMetrics] = field(default_factory=list)


def _mean_metrics(step: int, rewards: list[RewardBreakdown]) -> StepMetrics:
    n = len(rewards)
    return StepMetrics(
        step=step,
        mean_acc=sum(r.acc for r in rewards) / n,
        mean_proxy=sum(r.proxy for r in rewards) / n,
        mean_format=sum(r.format for r in rewards) / n,
        mean_composite=sum(r.composite for r in rewards) / n,
    )


def metrics_csv_text(history: list[StepMetrics]) -> str:
    buffer = io.StringIO()
    writer = csv.DictWriter(
        buffer,
        fieldnames=["step", "mean_acc", "mean_proxy", "mean_format", "mean_composite"],
        lineterminator="\n",
    )
    writer.writeheader()
    for metrics in history:
        writer.writerow(metrics.as_row())
    return buffer.getvalue()


def write_metrics_csv(path, history: list[StepMetrics]):
    atomic_write_text(path, metrics_csv_text(history))


def _export_lines(step: int, group: RolloutGroup) -> list[str]:
    lines = []
    for draw, (text, reward, advantage) in enumerate(
        zip(group.completions, group.rewards, group.advantages)
    ):
        lines.append(
            json.dumps(
                {
                    "sample_id": group.sample_id,
                    "draw": draw,
                    "text_hash": hashlib.sha256(text.encode()).hexdigest()[:16],
                    "acc": reward.acc,
                    "proxy": reward.proxy,
                    "format": reward.format,
                    "composite": reward.composite,
                    "advantage": advantage,
                    "step": step,
                },
                sort_keys=True,
            )
        )
    return lines


def _write_checkpoint(config: TrainConfig, policy: ToyPolicy | None, step: int):
    if not config.checkpoint_path:
        return None
    state = {
        "step": step,
        "seed": config.seed,
        "policy": policy.state_dict() if policy is not None else None,
    }
    with open(config.checkpoint_path, "w", encoding="utf-8") as handle:
        json.dump(state, handle)
    return config.checkpoint_path


def train_loop(
    samples: list[PreferenceSample],
    gateway: Gateway,
    templates: PromptTemplates,
    config: TrainConfig,
    reward_config: FeedbackConfig,
    policy: ToyPolicy | None = None,
    action_renderer=None,
    on_step=None,
) -> TrainResult:
    """Run the training loop; deterministic for a fixed seed and scripted
    backends.  Toy mode updates the tabular policy; export mode writes one
    advantage record per completion and leaves all weights to an external
    trainer.  Endpoint failures abort with a resumable checkpoint.
    """
    config.validate()
    if config.mode == "toy" and (policy is None or action_renderer is None):
        raise ValidationError("toy mode requires a policy and an action renderer")
    rng = np.random.default_rng(config.seed)
    history: list[StepMetrics] = []
    proxy_names = list(config.proxy_endpoints)
    export_handle = None
    if config.mode == "export":
        export_handle = open(config.export_path, "w", encoding="utf-8")
    try:
        for step in range(config.steps):
            rollouts: list[ToyRollout] = []
            step_rewards: list[RewardBreakdown] = []
            try:
                for sample in samples:
                    if config.mode == "toy":
                        indices = policy.sample_actions(
                            sample.id, config.group_size, rng
                        )
                        completions = [
                            action_renderer(policy.actions[i], sample) for i in indices
                        ]
                        group = score_completions(
                            sample,
                            completions,
                            proxy_names,
                            reward_config,
                            gateway,
                            templates,
                        )
                        rollouts.append(
                            ToyRollout(
                                context=sample.id,
                                action_indices=[int(i) for i in indices],
                                advantages=group.advantages,
                            )
                        )
                    else:
                        group = collect_group(
                            sample,
                            config.policy_endpoint,
                            proxy_names,
                            config.group_size,
                            reward_config,
                            gateway,
                            templates,
                        )
                        for line in _export_lines(step, group):
                            export_handle.write(line + "\n")
                    step_rewards.extend(group.rewards)
            except TransportError as exc:
                checkpoint = _write_checkpoint(config, policy, step)
                raise TrainAborted(
                    f"endpoint failure at step {step}: {exc}",
                    step=step,
                    checkpoint_path=checkpoint,
                ) from exc
            history.append(_mean_metrics(step, step_rewards))
            if config.mode == "toy":
                policy = toy_grpo_step(
                    policy, rollouts, config.learning_rate, config.clip_ratio
                )
            if on_step is not None:
                on_step(step, policy, history[-1])
    finally:
        if export_handle is not None:
            export_handle.close()
    if config.metrics_path:
        write_metrics_csv(config.metrics_path, history)
    return TrainResult(policy=policy, history=history)
