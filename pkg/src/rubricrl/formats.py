"""Structured critique format: parsing, validation, rendering, and prompt templates.

The judge model emits ``<rubric>R</rubric><eval>E</eval><answer>A</answer>``
(A is 1 or 2); the rubric-following evaluator emits ``<think>T</think><answer>A</answer>``.
Tags are ASCII, case-sensitive, attribute-free, and non-nesting.
"""

from __future__ import annotations

import re
from dataclasses import dataclass, field
from enum import Enum

from .errors import ConfigError

GRM_TAGS = ("rubric", "eval", "answer")
PROXY_TAGS = ("think", "answer")

PLACEHOLDERS = ("{question}", "{response_1}", "{response_2}", "{image}", "{rubric}")


class FormatErrorKind(Enum):
    MISSING_TAG = "missing_tag"
    TAG_ORDER = "tag_order"
    BAD_VERDICT = "bad_verdict"
    EMPTY_SECTION = "empty_section"
    TRAILING_CONTENT = "trailing_content"


@dataclass(frozen=True)
class FormatError:
    kind: FormatErrorKind
    detail: str = ""


@dataclass(frozen=True)
class Criterion:
    name: str
    weight: float | None
    description: str


@dataclass(frozen=True)
class Rubric:
    criteria: tuple[Criterion, ...]
    raw: str


@dataclass(frozen=True)
class StructuredOutput:
    rubric: Rubric
    evaluation: str
    answer: int
    # Original text, preamble included; excluded from equality so that a
    # render/re-parse round trip compares equal field-wise.
    raw: str = field(compare=False)

    def render(self) -> str:
        return (
            f"<rubric>{self.rubric.raw}</rubric>"
            f"<eval>{self.evaluation}</eval>"
            f"<answer>{self.answer}</answer>"
        )


@dataclass(frozen=True)
class ProxyOutput:
    think: str
    answer: int
    raw: str = field(compare=False)


def _tag_positions(text: str, tag: str) -> tuple[list[int], list[int]]:
    opens = [m.start() for m in re.finditer(re.escape(f"<{tag}>"), text)]
    closes = [m.start() for m in re.finditer(re.escape(f"</{tag}>"), text)]
    return opens, closes


def _extract_sections(text: str, tags: tuple[str, ...], strict_preamble: bool):
    """Split ``text`` into per-tag section bodies, or return a FormatError.

    Enforces, in order: every tag present, no duplicated tags, tags in the
    declared order, and no stray content between or after sections.  Text
    before the first tag is tolerated (chain-of-thought preamble) unless
    strict_preamble is set.
    """
    positions = {}
    for tag in tags:
        opens, closes = _tag_positions(text, tag)
        if not opens or not closes:
            return FormatError(FormatErrorKind.MISSING_TAG, f"<{tag}>")
        positions[tag] = (opens, closes)
    # A duplicated tag pair is surplus content by construction: the extra
    # span can never belong to the single well-formed sequence.
    for tag in tags:
        opens, closes = positions[tag]
        if len(opens) > 1 or len(closes) > 1:
            return FormatError(FormatErrorKind.TRAILING_CONTENT, f"duplicate <{tag}>")
    boundaries: list[int] = []
    for tag in tags:
        boundaries.append(positions[tag][0][0])
        boundaries.append(positions[tag][1][0])
    if boundaries != sorted(boundaries) or len(set(boundaries)) != len(boundaries):
        return FormatError(FormatErrorKind.TAG_ORDER, "->".join(tags))
    if strict_preamble and text[: boundaries[0]].strip():
        return FormatError(FormatErrorKind.TRAILING_CONTENT, "text before first tag")
    sections = {}
    cursor = boundaries[0]
    for tag in tags:
        open_pos, close_pos = positions[tag][0][0], positions[tag][1][0]
        if text[cursor:open_pos].strip():
            return FormatError(
                FormatErrorKind.TRAILING_CONTENT, f"text before <{tag}>"
            )
        sections[tag] = text[open_pos + len(tag) + 2 : close_pos]
        cursor = close_pos + len(tag) + 3
    if text[cursor:].strip():
        return FormatError(FormatErrorKind.TRAILING_CONTENT, "text after last tag")
    return sections


def _parse_verdict(body: str) -> int | FormatError:
    verdict = body.strip()
    if verdict not in ("1", "2"):
        return FormatError(FormatErrorKind.BAD_VERDICT, repr(verdict))
    return int(verdict)


_CRITERION_ITEM = re.compile(r"(?:^|\n)\s*\d+\.\s*")
_CRITERION_HEAD = re.compile(
    r"^(?P<name>[^:(\n]+?)\s*(?:\((?P<weight>\d*\.?\d+)\))?\s*:\s*(?P<desc>.*)$",
    re.DOTALL,
)


def parse_rubric(text: str, strict: bool = False) -> Rubric | FormatError:
    """Parse a rubric body into criteria.

    Strict pass matches numbered items ``N. Name (weight): description``
    (weight optional).  If no item matches and strict is off, the whole body
    becomes one unnamed criterion.  Weights are kept only when every
    criterion carries one in (0, 1] and the total lands in [0.99, 1.01];
    otherwise all weights are dropped.
    """
    if not text.strip():
        return FormatError(FormatErrorKind.EMPTY_SECTION, "rubric")
    items = [chunk for chunk in _CRITERION_ITEM.split(text) if chunk.strip()]
    criteria: list[Criterion] = []
    matched = bool(items) and _CRITERION_ITEM.search(text) is not None
    if matched:
        for item in items:
            head = _CRITERION_HEAD.match(item.strip())
            if head is None:
                matched = False
                break
            weight = float(head.group("weight")) if head.group("weight") else None
            criteria.append(
                Criterion(
                    name=head.group("name").strip(),
                    weight=weight,
                    description=head.group("desc").strip(),
                )
            )
    if not matched:
        if strict:
            return FormatError(FormatErrorKind.EMPTY_SECTION, "no numbered criteria")
        criteria = [Criterion(name="", weight=None, description=text.strip())]
    weights = [c.weight for c in criteria]
    valid = all(w is not None and 0.0 < w <= 1.0 for w in weights) and (
        0.99 <= sum(w for w in weights if w is not None) <= 1.01
    )
    if not valid:
        criteria = [
            Criterion(name=c.name, weight=None, description=c.description)
            for c in criteria
        ]
    return Rubric(criteria=tuple(criteria), raw=text)


def parse_grm_output(
    text: str, strict_preamble: bool = False
) -> StructuredOutput | FormatError:
    """Parse a full rubric/eval/answer output; first violated condition wins."""
    sections = _extract_sections(text, GRM_TAGS, strict_preamble)
    if isinstance(sections, FormatError):
        return sections
    if not sections["rubric"].strip():
        return FormatError(FormatErrorKind.EMPTY_SECTION, "rubric")
    if not sections["eval"].strip():
        return FormatError(FormatErrorKind.EMPTY_SECTION, "eval")
    verdict = _parse_verdict(sections["answer"])
    if isinstance(verdict, FormatError):
        return verdict
    rubric = parse_rubric(sections["rubric"])
    assert isinstance(rubric, Rubric)  # non-empty body cannot fail leniently
    return StructuredOutput(
        rubric=rubric,
        evaluation=sections["eval"],
        answer=verdict,
        raw=text,
    )


def parse_proxy_output(text: str) -> ProxyOutput | FormatError:
    """Parse a think/answer output.  A rubric tag anywhere is a contract
    violation: the rubric-following evaluator must not emit rubrics."""
    if "<rubric>" in text or "</rubric>" in text:
        return FormatError(FormatErrorKind.TRAILING_CONTENT, "rubric tag in output")
    sections = _extract_sections(text, PROXY_TAGS, strict_preamble=False)
    if isinstance(sections, FormatError):
        return sections
    verdict = _parse_verdict(sections["answer"])
    if isinstance(verdict, FormatError):
        return verdict
    return ProxyOutput(think=sections["think"], answer=verdict, raw=text)


def check_format(text: str) -> bool:
    """True iff parse_grm_output succeeds; this is the format-reward gate."""
    return isinstance(parse_grm_output(text), StructuredOutput)


def _substitute(template: str, values: dict[str, str]) -> str:
    rendered = template
    for key, value in values.items():
        rendered = rendered.replace("{" + key + "}", value)
    return rendered


def _require_placeholders(template: str, required: tuple[str, ...], label: str):
    missing = [p for p in required if p not in template]
    if missing:
        raise ConfigError(f"{label} template missing placeholders: {missing}")


def render_policy_prompt(sample, template: str) -> str:
    """Fill the judge prompt template.  Requires question/response placeholders."""
    _require_placeholders(
        template, ("{question}", "{response_1}", "{response_2}"), "policy"
    )
    return _substitute(
        template,
        {
            "question": sample.question,
            "response_1": sample.response_1,
            "response_2": sample.response_2,
            "image": sample.image_ref or "",
        },
    )


def render_proxy_prompt(sample, rubric: Rubric | None, template: str) -> str:
    """Fill the evaluator prompt template; the rubric text goes in verbatim.

    ``rubric=None`` renders the rubric slot empty (control / fallback mode).
    """
    _require_placeholders(
        template,
        ("{question}", "{response_1}", "{response_2}", "{rubric}"),
        "proxy",
    )
    return _substitute(
        template,
        {
            "question": sample.question,
            "response_1": sample.response_1,
            "response_2": sample.response_2,
            "image": sample.image_ref or "",
            "rubric": rubric.raw if rubric is not None else "",
        },
    )
