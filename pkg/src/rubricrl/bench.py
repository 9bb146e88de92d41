"""Benchmark evaluation metrics and the rubric-transfer experiment.

Benchmark files reuse the preference-sample schema plus a required category
tag and an optional group_id for the strict group-level metric.
"""

from __future__ import annotations

import csv
import io
import json
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass

from .data import PreferenceSample, sample_from_dict
from .errors import ParseError, TransportError, ValidationError
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
from .proxy import (
    PURPOSE_POLICY,
    PURPOSE_TRANSFER,
    PromptTemplates,
)

DEGRADED_FLAG_FRACTION = 0.1


@dataclass(frozen=True)
class BenchmarkSample(PreferenceSample):
    group_id: str | None = None


@dataclass(frozen=True)
class EvalResult:
    n: int
    per_sample: dict[str, bool]
    per_category: dict[str, float]
    overall_acc: float
    macro_acc: float
    flagged: list[str]
    degraded: bool
    acc_plus: float | None = None


@dataclass(frozen=True)
class TransferRecord:
    evaluator_name: str
    rubric_source_name: str
    benchmark_name: str
    accuracy: float


def benchmark_sample_from_dict(record: dict) -> BenchmarkSample:
    base = sample_from_dict(record)
    category = record.get("category")
    if not category:
        raise ValidationError(f"sample {base.id!r}: benchmark samples need a category")
    return BenchmarkSample(
        id=base.id,
        question=base.question,
        response_1=base.response_1,
        response_2=base.response_2,
        gold_verdict=base.gold_verdict,
        image_ref=base.image_ref,
        source=base.source,
        category=category,
        group_id=record.get("group_id"),
    )


def load_benchmark(path) -> list[BenchmarkSample]:
    samples: list[BenchmarkSample] = []
    seen: set[str] = set()
    with open(path, encoding="utf-8") as handle:
        for line_number, line in enumerate(handle, start=1):
            if not line.strip():
                continue
            try:
                record = json.loads(line)
                sample = benchmark_sample_from_dict(record)
            except (json.JSONDecodeError, ValidationError) as exc:
                raise ParseError(str(exc), line_number) from exc
            if sample.id in seen:
                raise ParseError(f"duplicate id {sample.id!r}", line_number)
            seen.add(sample.id)
            samples.append(sample)
    return samples


def _policy_request(sample: PreferenceSample, templates: PromptTemplates):
    prompt = render_policy_prompt(sample, templates.policy)
    return ChatRequest.user(
        prompt,
        image_refs=(sample.image_ref,) if sample.image_ref else (),
        fixture_key=FixtureKey(sample.id, PURPOSE_POLICY, 0),
    )


def _judge_one(sample, policy_name, gateway, templates) -> tuple[bool, bool]:
    """Returns (correct, flagged); transport errors flag without aborting."""
    try:
        raw = gateway.complete(policy_name, _policy_request(sample, templates))
    except TransportError:
        return False, True
    parsed = parse_grm_output(raw)
    if not isinstance(parsed, StructuredOutput):
        return False, False
    return parsed.answer == sample.gold_verdict, False


def evaluate(
    policy_name: str,
    benchmark: list[BenchmarkSample],
    gateway: Gateway,
    templates: PromptTemplates,
) -> EvalResult:
    """One greedy policy call per sample; malformed output counts incorrect.

    More than 10% transport-flagged samples marks the run degraded.
    """
    if not benchmark:
        raise ValidationError("evaluate requires a non-empty benchmark")
    workers = gateway.endpoint(policy_name).max_in_flight
    with ThreadPoolExecutor(max_workers=workers) as pool:
        results = list(
            pool.map(
                lambda s: _judge_one(s, policy_name, gateway, templates), benchmark
            )
        )
    per_sample = {s.id: correct for s, (correct, _) in zip(benchmark, results)}
    flagged = [s.id for s, (_, flag) in zip(benchmark, results) if flag]
    by_category: dict[str, list[bool]] = {}
    for sample in benchmark:
        by_category.setdefault(sample.category, []).append(per_sample[sample.id])
    per_category = {
        category: sum(outcomes) / len(outcomes)
        for category, outcomes in by_category.items()
    }
    overall = sum(per_sample.values()) / len(benchmark)
    macro = sum(per_category.values()) / len(per_category)
    return EvalResult(
        n=len(benchmark),
        per_sample=per_sample,
        per_category=per_category,
        overall_acc=overall,
        macro_acc=macro,
        flagged=flagged,
        degraded=len(flagged) / len(benchmark) > DEGRADED_FLAG_FRACTION,
    )


def acc_plus(result: EvalResult, benchmark: list[BenchmarkSample]) -> float:
    """Fraction of query groups whose members are all judged correctly.

    Samples without a group_id form singleton groups.
    """
    groups: dict[str, list[bool]] = {}
    for sample in benchmark:
        key = sample.group_id if sample.group_id else f"__singleton__{sample.id}"
        groups.setdefault(key, []).append(result.per_sample[sample.id])
    return sum(all(members) for members in groups.values()) / len(groups)


def transfer_experiment(
    rubric_source_name: str,
    evaluator_names: list[str],
    benchmark: list[BenchmarkSample],
    gateway: Gateway,
    templates: PromptTemplates,
    benchmark_name: str = "benchmark",
) -> list[TransferRecord]:
    """Extract rubrics from one source and score each evaluator on following
    them.  A malformed source output falls back to an empty-rubric prompt for
    that sample (flagged in the record's accuracy the same as any miss/hit)."""
    rubrics: dict[str, Rubric | None] = {}
    for sample in benchmark:
        raw = gateway.complete(rubric_source_name, _policy_request(sample, templates))
        parsed = parse_grm_output(raw)
        rubrics[sample.id] = (
            parsed.rubric if isinstance(parsed, StructuredOutput) else None
        )
    records = []
    for evaluator in evaluator_names:
        correct = 0
        for sample in benchmark:
            prompt = render_proxy_prompt(sample, rubrics[sample.id], templates.proxy)
            request = ChatRequest.user(
                prompt,
                image_refs=(sample.image_ref,) if sample.image_ref else (),
                fixture_key=FixtureKey(sample.id, PURPOSE_TRANSFER, 0),
            )
            raw = gateway.complete(evaluator, request)
            parsed = parse_proxy_output(raw)
            verdict = parsed.answer if isinstance(parsed, ProxyOutput) else None
            correct += int(verdict == sample.gold_verdict)
        records.append(
            TransferRecord(
                evaluator_name=evaluator,
                rubric_source_name=rubric_source_name,
                benchmark_name=benchmark_name,
                accuracy=correct / len(benchmark) if benchmark else 0.0,
            )
        )
    return records


def _format_cell(value, best, second) -> str:
    text = f"{value:.4f}" if isinstance(value, float) else str(value)
    if isinstance(value, float):
        if value == best:
            text += "*"
        elif second is not None and value == second:
            text += "^"
    return text


def render_table(rows: list[dict], columns: list[str] | None = None) -> str:
    """Aligned text table; per numeric column, best gets '*' and second-best
    gets '^' (ties share the best marker).  Deterministic for fixed input."""
    if not rows:
        return ""
    columns = columns or list(rows[0].keys())
    best: dict[str, float] = {}
    second: dict[str, float | None] = {}
    for column in columns:
        values = [r[column] for r in rows if isinstance(r.get(column), float)]
        if values:
            distinct = sorted(set(values), reverse=True)
            best[column] = distinct[0]
            second[column] = distinct[1] if len(distinct) > 1 else None
    cells = [columns]
    for row in rows:
        cells.append(
            [
                _format_cell(row.get(c, ""), best.get(c), second.get(c))
                for c in columns
            ]
        )
    widths = [max(len(line[i]) for line in cells) for i in range(len(columns))]
    lines = [
        "  ".join(cell.ljust(width) for cell, width in zip(line, widths)).rstrip()
        for line in cells
    ]
    return "\n".join(lines) + "\n"


def results_to_csv(rows: list[dict], columns: list[str] | None = None) -> str:
    if not rows:
        return ""
    columns = columns or list(rows[0].keys())
    buffer = io.StringIO()
    writer = csv.DictWriter(buffer, fieldnames=columns, lineterminator="\n")
    writer.writeheader()
    for row in rows:
        writer.writerow({c: row.get(c, "") for c in columns})
    return buffer.getvalue()


def eval_result_row(
    endpoint_name: str, benchmark_name: str, result: EvalResult
) -> dict:
    row = {
        "endpoint": endpoint_name,
        "benchmark": benchmark_name,
        "n": result.n,
        "overall_acc": result.overall_acc,
        "macro_acc": result.macro_acc,
    }
    if result.acc_plus is not None:
        row["acc_plus"] = result.acc_plus
    return row


def transfer_matrix_rows(records: list[TransferRecord]) -> list[dict]:
    """Pivot transfer records into evaluator x rubric-source accuracy rows."""
    sources = sorted({r.rubric_source_name for r in records})
    evaluators = sorted({r.evaluator_name for r in records})
    by_key = {(r.evaluator_name, r.rubric_source_name): r.accuracy for r in records}
    rows = []
    for evaluator in evaluators:
        row: dict = {"evaluator": evaluator}
        for source in sources:
            row[source] = by_key.get((evaluator, source), "")
        rows.append(row)
    return rows
