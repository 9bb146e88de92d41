"""Reward components and aggregation schemes.

Components: verdict accuracy in {-1,+1}, structural format in {0,+1}, and a
rubric-transferability signal in [-1,+1] from one or more frozen evaluators.
The default aggregation is additive (acc + proxy + 0.5*format); seven named
alternatives replace the acc/proxy interaction with an explicit per-outcome
cell table, optionally zeroing the separate proxy term.
"""

from __future__ import annotations

from dataclasses import dataclass

from .errors import ValidationError

FORMAT_WEIGHT = 0.5

Verdict = int  # 1 or 2


@dataclass(frozen=True)
class RewardBreakdown:
    acc: float
    format: float
    proxy: float
    composite: float


@dataclass(frozen=True)
class FeedbackConfig:
    """One aggregation scheme.

    ``cell`` maps (acc_hit, proxy_hit) to the combined acc-and-proxy
    contribution; "hit" means the raw component equals +1.  The cell value is
    the total for that combination, so zero_out_proxy is metadata recording
    whether the scheme conceptually drops the separate proxy term (cell-wise
    identical schemes with different flags score identically).
    """

    name: str
    cell: dict[tuple[bool, bool], float] | None
    zero_out_proxy: bool

    @property
    def is_additive(self) -> bool:
        return self.cell is None


_FB_ROWS = {
    # name: ((hit,hit), (hit,miss), (miss,hit), (miss,miss)), zero_out_proxy
    "fb1": ((1.5, 0.5, -1.0, -1.0), False),
    "fb2": ((1.5, 0.5, -1.5, -1.0), False),
    "fb3": ((1.5, 0.5, -1.5, -2.0), False),
    "fb4": ((1.0, 0.5, -1.0, -1.0), False),
    "fb5": ((1.5, 0.5, -1.0, -1.0), True),
    "fb6": ((1.5, 0.5, -1.5, -1.0), True),
    "fb7": ((1.5, 0.5, -1.5, -2.0), True),
}


def _build_presets() -> dict[str, FeedbackConfig]:
    presets = {"additive": FeedbackConfig("additive", None, False)}
    for name, (row, zero_out) in _FB_ROWS.items():
        cell = {
            (True, True): row[0],
            (True, False): row[1],
            (False, True): row[2],
            (False, False): row[3],
        }
        presets[name] = FeedbackConfig(name, cell, zero_out)
    return presets


FEEDBACK_PRESETS = _build_presets()


def get_feedback_config(name: str) -> FeedbackConfig:
    try:
        return FEEDBACK_PRESETS[name]
    except KeyError:
        raise ValidationError(
            f"unknown feedback config {name!r}; expected one of "
            f"{sorted(FEEDBACK_PRESETS)}"
        ) from None


def custom_feedback_config(
    name: str,
    hit_hit: float,
    hit_miss: float,
    miss_hit: float,
    miss_miss: float,
    zero_out_proxy: bool = False,
) -> FeedbackConfig:
    cell = {
        (True, True): hit_hit,
        (True, False): hit_miss,
        (False, True): miss_hit,
        (False, False): miss_miss,
    }
    return FeedbackConfig(name, cell, zero_out_proxy)


def accuracy_reward(pred: Verdict | None, gold: Verdict) -> float:
    """+1 iff the parsed verdict matches gold; unparseable counts as wrong."""
    _check_gold(gold)
    return 1.0 if pred == gold else -1.0


def format_reward(well_formed: bool) -> float:
    return 1.0 if well_formed else 0.0


def proxy_reward(proxy_verdict: Verdict | None, gold: Verdict) -> float:
    """+1 iff the frozen evaluator reaches gold from the rubric alone."""
    _check_gold(gold)
    return 1.0 if proxy_verdict == gold else -1.0


def transferability(proxy_verdict: Verdict | None, gold: Verdict) -> int:
    """Indicator form of the proxy check: 1 on agreement with gold, else 0."""
    _check_gold(gold)
    return 1 if proxy_verdict == gold else 0


def ensemble_proxy_reward(rewards: list[float]) -> float:
    """Unweighted average of individual evaluator rewards."""
    if not rewards:
        raise ValidationError("ensemble_proxy_reward requires at least one reward")
    for r in rewards:
        if r not in (-1.0, 1.0):
            raise ValidationError(f"individual proxy reward must be ±1, got {r}")
    return sum(rewards) / len(rewards)


def composite_reward(
    acc: float, proxy: float, fmt: float, config: FeedbackConfig
) -> float:
    """Aggregate the three components under the given scheme.

    Additive: acc + proxy + 0.5*format.  Cell schemes: cell[(acc hit, proxy
    hit)] + 0.5*format.  The format term applies uniformly; only the
    acc/proxy interaction is redefined by the cell table.
    """
    if acc not in (-1.0, 1.0):
        raise ValidationError(f"acc reward must be ±1, got {acc}")
    if fmt not in (0.0, 1.0):
        raise ValidationError(f"format reward must be 0 or +1, got {fmt}")
    if not -1.0 <= proxy <= 1.0:
        raise ValidationError(f"proxy reward must be in [-1, 1], got {proxy}")
    if config.is_additive:
        return acc + proxy + FORMAT_WEIGHT * fmt
    assert config.cell is not None
    return config.cell[(acc == 1.0, proxy == 1.0)] + FORMAT_WEIGHT * fmt


def breakdown(
    acc: float, proxy: float, fmt: float, config: FeedbackConfig
) -> RewardBreakdown:
    return RewardBreakdown(
        acc=acc,
        format=fmt,
        proxy=proxy,
        composite=composite_reward(acc, proxy, fmt, config),
    )


def _check_gold(gold: Verdict):
    if gold not in (1, 2):
        raise ValidationError(f"gold verdict must be 1 or 2, got {gold!r}")
