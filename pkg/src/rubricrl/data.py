"""Preference-sample ingestion, curation filters, teacher split, and allocation.

Input files are line-delimited JSON, one sample per line (UTF-8, snake_case
fields, gold_verdict as integer 1 or 2).
"""

from __future__ import annotations

import json
import random
from dataclasses import dataclass, field

from .errors import ParseError, ValidationError
from .formats import StructuredOutput, parse_grm_output


@dataclass(frozen=True)
class PreferenceSample:
    id: str
    question: str
    response_1: str
    response_2: str
    gold_verdict: int
    image_ref: str | None = None
    source: str = ""
    category: str | None = None

    def validate(self):
        if self.gold_verdict not in (1, 2):
            raise ValidationError(
                f"sample {self.id!r}: gold_verdict must be 1 or 2, "
                f"got {self.gold_verdict!r}"
            )
        if not self.response_1.strip() or not self.response_2.strip():
            raise ValidationError(f"sample {self.id!r}: empty response")


@dataclass(frozen=True)
class DistilledRecord:
    sample_id: str
    teacher_raw: str
    parsed: StructuredOutput | None
    teacher_correct: bool


@dataclass(frozen=True)
class SplitAllocation:
    proxy_sft: list[str]
    proxy_rl: list[str]
    grm_sft: list[str]
    rl_pool: list[str]

    def to_dict(self) -> dict:
        return {
            "proxy_sft": self.proxy_sft,
            "proxy_rl": self.proxy_rl,
            "grm_sft": self.grm_sft,
            "rl_pool": self.rl_pool,
        }


@dataclass(frozen=True)
class CurationConfig:
    min_response_tokens: int = 3
    max_length_ratio: float = 20.0
    difficulty_floor: float = 0.05
    similarity_threshold: float = 0.9
    shingle_size: int = 3

    def validate(self):
        if not 0.0 < self.similarity_threshold <= 1.0:
            raise ValidationError(
                f"similarity_threshold must be in (0, 1], "
                f"got {self.similarity_threshold}"
            )
        if self.difficulty_floor < 0:
            raise ValidationError("difficulty_floor must be non-negative")


@dataclass
class CurationReport:
    input_count: int = 0
    kept_count: int = 0
    dropped_quality: int = 0
    dropped_difficulty: int = 0
    dropped_similarity: int = 0

    @property
    def dropped_total(self) -> int:
        return self.dropped_quality + self.dropped_difficulty + self.dropped_similarity

    def to_json(self) -> str:
        return json.dumps(
            {
                "input_count": self.input_count,
                "kept_count": self.kept_count,
                "dropped": {
                    "quality": self.dropped_quality,
                    "difficulty": self.dropped_difficulty,
                    "similarity": self.dropped_similarity,
                },
            },
            indent=2,
        )


_FIELDS = {"id", "question", "response_1", "response_2", "gold_verdict"}


def sample_from_dict(record: dict) -> PreferenceSample:
    missing = _FIELDS - record.keys()
    if missing:
        raise ValidationError(f"missing fields: {sorted(missing)}")
    sample = PreferenceSample(
        id=str(record["id"]),
        question=str(record["question"]),
        response_1=str(record["response_1"]),
        response_2=str(record["response_2"]),
        gold_verdict=record["gold_verdict"],
        image_ref=record.get("image_ref"),
        source=record.get("source", ""),
        category=record.get("category"),
    )
    sample.validate()
    return sample


def load_samples(path) -> list[PreferenceSample]:
    """Load a JSONL sample file, preserving order; ids must be unique."""
    samples: list[PreferenceSample] = []
    seen: set[str] = set()
    with open(path, encoding="utf-8") as handle:
        for line_number, line in enumerate(handle, start=1):
            if not line.strip():
                continue
            try:
                record = json.loads(line)
            except json.JSONDecodeError as exc:
                raise ParseError(f"invalid JSON: {exc.msg}", line_number) from exc
            try:
                sample = sample_from_dict(record)
            except ValidationError as exc:
                raise ParseError(str(exc), line_number) from exc
            if sample.id in seen:
                raise ParseError(f"duplicate id {sample.id!r}", line_number)
            seen.add(sample.id)
            samples.append(sample)
    return samples


def _tokens(text: str) -> list[str]:
    return text.split()


def _normalized(text: str) -> str:
    return " ".join(text.split()).casefold()


def word_edit_distance(a: list[str], b: list[str]) -> int:
    """Word-level Levenshtein distance (iterative DP)."""
    if not a:
        return len(b)
    if not b:
        return len(a)
    prev = list(range(len(b) + 1))
    for i, wa in enumerate(a, start=1):
        cur = [i]
        for j, wb in enumerate(b, start=1):
            cost = 0 if wa == wb else 1
            cur.append(min(prev[j] + 1, cur[j - 1] + 1, prev[j - 1] + cost))
        prev = cur
    return prev[-1]


def difficulty_score(sample: PreferenceSample) -> float:
    """Normalized word-level edit distance between the two responses.

    0 means identical responses (no preference signal), 1 means fully
    disjoint.  Stand-in scorer; swap via curate(difficulty_scorer=...).
    """
    a, b = _tokens(sample.response_1), _tokens(sample.response_2)
    denominator = max(len(a), len(b))
    if denominator == 0:
        return 0.0
    return word_edit_distance(a, b) / denominator


def _quality_drop(sample: PreferenceSample, config: CurationConfig) -> bool:
    t1, t2 = _tokens(sample.response_1), _tokens(sample.response_2)
    if _normalized(sample.response_1) == _normalized(sample.response_2):
        return True
    if len(t1) < config.min_response_tokens or len(t2) < config.min_response_tokens:
        return True
    longer, shorter = max(len(t1), len(t2)), min(len(t1), len(t2))
    if shorter == 0 or longer / shorter > config.max_length_ratio:
        return True
    return False


def question_shingles(question: str, size: int = 3) -> set[tuple[str, ...]]:
    words = _tokens(_normalized(question))
    if len(words) < size:
        return {tuple(words)} if words else set()
    return {tuple(words[i : i + size]) for i in range(len(words) - size + 1)}


def jaccard(a: set, b: set) -> float:
    if not a and not b:
        return 1.0
    union = a | b
    return len(a & b) / len(union)


def curate(
    samples: list[PreferenceSample],
    config: CurationConfig | None = None,
    difficulty_scorer=difficulty_score,
) -> tuple[list[PreferenceSample], CurationReport]:
    """Apply the quality, difficulty, and similarity filters, in that order.

    Filters only drop, never fail.  The similarity filter keeps the first
    occurrence in input order.
    """
    config = config or CurationConfig()
    config.validate()
    report = CurationReport(input_count=len(samples))
    survivors: list[PreferenceSample] = []
    for sample in samples:
        if _quality_drop(sample, config):
            report.dropped_quality += 1
        elif difficulty_scorer(sample) < config.difficulty_floor:
            report.dropped_difficulty += 1
        else:
            survivors.append(sample)
    kept: list[PreferenceSample] = []
    kept_shingles: list[set] = []
    for sample in survivors:
        shingles = question_shingles(sample.question, config.shingle_size)
        if any(
            jaccard(shingles, earlier) >= config.similarity_threshold
            for earlier in kept_shingles
        ):
            report.dropped_similarity += 1
            continue
        kept.append(sample)
        kept_shingles.append(shingles)
    report.kept_count = len(kept)
    return kept, report


def make_distilled_record(
    sample: PreferenceSample, teacher_raw: str
) -> DistilledRecord:
    parsed = parse_grm_output(teacher_raw)
    if isinstance(parsed, StructuredOutput):
        return DistilledRecord(
            sample_id=sample.id,
            teacher_raw=teacher_raw,
            parsed=parsed,
            teacher_correct=parsed.answer == sample.gold_verdict,
        )
    return DistilledRecord(
        sample_id=sample.id, teacher_raw=teacher_raw, parsed=None, teacher_correct=False
    )


def split_by_teacher_verdict(
    records: list[DistilledRecord], samples: list[PreferenceSample]
) -> tuple[list[str], list[str]]:
    """Partition sample ids into teacher-correct and hard (wrong or unparseable)."""
    known = {s.id for s in samples}
    correct: list[str] = []
    hard: list[str] = []
    for record in records:
        if record.sample_id not in known:
            raise ValidationError(f"unknown sample_id {record.sample_id!r}")
        (correct if record.teacher_correct else hard).append(record.sample_id)
    return correct, hard


def allocate_splits(
    correct: list[str],
    hard: list[str],
    ratios: tuple[float, float, float],
    seed: int,
) -> SplitAllocation:
    """Allocate teacher-correct ids into the three training splits.

    Sizes are floor(ratio * |correct|); the remainder joins the RL pool along
    with every hard id.  Deterministic for a fixed seed.
    """
    if any(r < 0 for r in ratios):
        raise ValidationError("ratios must be non-negative")
    if sum(ratios) > 1.0 + 1e-12:
        raise ValidationError(f"ratios sum to {sum(ratios)}, must be <= 1")
    shuffled = list(correct)
    random.Random(seed).shuffle(shuffled)
    # Epsilon guards float noise so e.g. 0.29 * 100 still floors to 29.
    sizes = [int(r * len(correct) + 1e-9) for r in ratios]
    cuts = [sum(sizes[:i]) for i in range(4)]
    proxy_sft = shuffled[cuts[0] : cuts[1]]
    proxy_rl = shuffled[cuts[1] : cuts[2]]
    grm_sft = shuffled[cuts[2] : cuts[3]]
    leftover = shuffled[cuts[3] :]
    return SplitAllocation(
        proxy_sft=proxy_sft,
        proxy_rl=proxy_rl,
        grm_sft=grm_sft,
        rl_pool=leftover + list(hard),
    )
