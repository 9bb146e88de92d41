"""Command-line entry point wiring the pipeline stages together.

Commands: curate, distill, train, eval, transfer.  A single JSON config file
describes endpoints, templates, reward scheme, and per-command paths, so an
ablation grid is one config file per cell.  Exit codes: 0 success, 2
usage/config, 3 transport, 4 data validation.
"""

from __future__ import annotations

import argparse
import json
import os
import sys
from dataclasses import asdict

from . import bench, toyenv
from .data import (
    CurationConfig,
    allocate_splits,
    curate,
    load_samples,
    make_distilled_record,
    split_by_teacher_verdict,
)
from .errors import (
    ConfigError,
    ParseError,
    ProtocolError,
    RubricRLError,
    TrainAborted,
    TransportError,
    ValidationError,
)
from .fileio import atomic_write_jsonl, atomic_write_text
from .formats import render_policy_prompt
from .gateway import ChatRequest, FixtureKey, Gateway, ModelEndpoint
from .proxy import PURPOSE_TEACHER, PromptTemplates
from .rewards import get_feedback_config
from .trainer import TrainConfig, train_loop, write_metrics_csv

EXIT_OK = 0
EXIT_CONFIG = 2
EXIT_TRANSPORT = 3
EXIT_DATA = 4

_ENDPOINT_FIELDS = {
    "kind",
    "base_url",
    "model_id",
    "api_key_env",
    "fixture_path",
    "temperature",
    "max_tokens",
    "timeout",
    "max_retries",
    "max_in_flight",
}


class RunConfig:
    """Parsed and validated run configuration."""

    def __init__(self, raw: dict, base_dir: str):
        self.raw = raw
        self.base_dir = base_dir
        self.endpoints: dict[str, ModelEndpoint] = {}
        for name, spec in raw.get("endpoints", {}).items():
            unknown = set(spec) - _ENDPOINT_FIELDS
            if unknown:
                raise ConfigError(f"endpoint {name!r}: unknown fields {sorted(unknown)}")
            spec = dict(spec)
            if spec.get("fixture_path"):
                spec["fixture_path"] = self.resolve(spec["fixture_path"])
            endpoint = ModelEndpoint(name=name, **spec)
            self.endpoints[name] = endpoint
        templates = raw.get("templates", {})
        self.templates = PromptTemplates.load(
            policy_path=self.resolve(templates["policy"]) if "policy" in templates else None,
            proxy_path=self.resolve(templates["proxy"]) if "proxy" in templates else None,
        )
        self.reward_config = get_feedback_config(raw.get("reward_config", "additive"))
        self.group_size = int(raw.get("group_size", 7))
        self.seed = int(raw.get("seed", 0))

    @classmethod
    def load(cls, path: str) -> "RunConfig":
        try:
            with open(path, encoding="utf-8") as handle:
                raw = json.load(handle)
        except FileNotFoundError:
            raise ConfigError(f"config file not found: {path}") from None
        except json.JSONDecodeError as exc:
            raise ConfigError(f"config file {path}: invalid JSON ({exc.msg})") from exc
        return cls(raw, base_dir=os.path.dirname(os.path.abspath(path)))

    def resolve(self, path: str) -> str:
        return path if os.path.isabs(path) else os.path.join(self.base_dir, path)

    def section(self, name: str) -> dict:
        section = self.raw.get(name)
        if not isinstance(section, dict):
            raise ConfigError(f"config section {name!r} is missing")
        return section

    def input_path(self, section: dict, key: str) -> str:
        if key not in section:
            raise ConfigError(f"missing required path {key!r}")
        path = self.resolve(section[key])
        if not os.path.exists(path):
            raise ConfigError(f"input path does not exist: {path}")
        return path

    def output_path(self, section: dict, key: str) -> str:
        if key not in section:
            raise ConfigError(f"missing required path {key!r}")
        return self.resolve(section[key])

    def endpoint_name(self, section: dict, key: str) -> str:
        name = section.get(key)
        if not name:
            raise ConfigError(f"missing endpoint reference {key!r}")
        if name not in self.endpoints:
            raise ConfigError(f"unknown endpoint {name!r}")
        return name

    def build_gateway(self) -> Gateway:
        gateway = Gateway()
        for endpoint in self.endpoints.values():
            endpoint.validate()
            gateway.register(endpoint)
        return gateway


def cmd_curate(config: RunConfig, dry_run: bool) -> int:
    section = config.section("curate")
    input_path = config.input_path(section, "input")
    output_path = config.output_path(section, "output")
    report_path = config.output_path(section, "report")
    curation = CurationConfig(
        difficulty_floor=section.get("difficulty_floor", 0.05),
        similarity_threshold=section.get("similarity_threshold", 0.9),
    )
    curation.validate()
    if dry_run:
        print(f"curate: would filter {input_path} -> {output_path}")
        return EXIT_OK
    samples = load_samples(input_path)
    kept, report = curate(samples, curation)
    atomic_write_jsonl(output_path, [asdict(s) for s in kept])
    atomic_write_text(report_path, report.to_json() + "\n")
    if not kept:
        print("warning: curation kept no samples", file=sys.stderr)
    print(f"curate: kept {report.kept_count}/{report.input_count}")
    return EXIT_OK


def cmd_distill(config: RunConfig, dry_run: bool) -> int:
    section = config.section("distill")
    input_path = config.input_path(section, "input")
    records_path = config.output_path(section, "records")
    allocation_path = config.output_path(section, "allocation")
    teacher = config.endpoint_name(section, "teacher")
    ratios = tuple(section.get("ratios", (0.2, 0.4, 0.4)))
    if len(ratios) != 3:
        raise ConfigError("distill.ratios must have exactly three entries")
    if dry_run:
        print(f"distill: would distill {input_path} via endpoint {teacher!r}")
        return EXIT_OK
    gateway = config.build_gateway()
    samples = load_samples(input_path)
    records = []
    try:
        for sample in samples:
            prompt = render_policy_prompt(sample, config.templates.policy)
            request = ChatRequest.user(
                prompt,
                image_refs=(sample.image_ref,) if sample.image_ref else (),
                fixture_key=FixtureKey(sample.id, PURPOSE_TEACHER, 0),
            )
            raw = gateway.complete(teacher, request)
            records.append(make_distilled_record(sample, raw))
    except (TransportError, ProtocolError):
        # Preserve what was distilled before the failure.
        _write_records(records_path, records)
        raise
    _write_records(records_path, records)
    correct, hard = split_by_teacher_verdict(records, samples)
    allocation = allocate_splits(correct, hard, ratios, seed=config.seed)
    atomic_write_text(
        allocation_path, json.dumps(allocation.to_dict(), indent=2) + "\n"
    )
    print(
        f"distill: {len(correct)} teacher-correct, {len(hard)} hard; "
        f"splits {len(allocation.proxy_sft)}/{len(allocation.proxy_rl)}/"
        f"{len(allocation.grm_sft)}, rl_pool {len(allocation.rl_pool)}"
    )
    return EXIT_OK


def _write_records(path, records):
    atomic_write_jsonl(
        path,
        [
            {
                "sample_id": r.sample_id,
                "teacher_raw": r.teacher_raw,
                "teacher_correct": r.teacher_correct,
                "parsed_answer": r.parsed.answer if r.parsed else None,
            }
            for r in records
        ],
    )


def cmd_train(config: RunConfig, dry_run: bool) -> int:
    section = config.section("train")
    mode = section.get("mode", "toy")
    metrics_path = config.output_path(section, "metrics")
    train_config = TrainConfig(
        steps=int(section.get("steps", 0)),
        group_size=config.group_size,
        learning_rate=float(section.get("learning_rate", 30.0)),
        clip_ratio=float(section.get("clip_ratio", 0.2)),
        seed=config.seed,
        reward_config_name=config.reward_config.name,
        mode=mode,
        policy_endpoint=section.get("policy"),
        proxy_endpoints=tuple(section.get("proxies", ())) or ("proxy-a",),
        export_path=config.resolve(section["export"]) if "export" in section else None,
        checkpoint_path=(
            config.resolve(section["checkpoint"]) if "checkpoint" in section else None
        ),
    )
    train_config.validate()
    if mode == "export":
        config.endpoint_name(section, "policy")
        for proxy in train_config.proxy_endpoints:
            if proxy not in config.endpoints:
                raise ConfigError(f"unknown endpoint {proxy!r}")
    if dry_run:
        print(f"train: would run {train_config.steps} steps in {mode!r} mode")
        return EXIT_OK
    if mode == "toy":
        samples, policy, gateway, templates, proxies = toyenv.make_setup(
            anti_pair=bool(section.get("anti_pair", False))
        )
        train_config = TrainConfig(
            **{
                **asdict(train_config),
                "proxy_endpoints": tuple(proxies),
            }
        )
        result = train_loop(
            samples,
            gateway,
            templates,
            train_config,
            config.reward_config,
            policy=policy,
            action_renderer=toyenv.render_completion,
        )
    else:
        gateway = config.build_gateway()
        samples = load_samples(config.input_path(section, "input"))
        result = train_loop(
            samples, gateway, config.templates, train_config, config.reward_config
        )
    write_metrics_csv(metrics_path, result.history)
    print(f"train: {len(result.history)} steps recorded -> {metrics_path}")
    return EXIT_OK


def cmd_eval(config: RunConfig, dry_run: bool) -> int:
    section = config.section("eval")
    benchmark_path = config.input_path(section, "benchmark")
    output_path = config.output_path(section, "output")
    policy = config.endpoint_name(section, "policy")
    if dry_run:
        print(f"eval: would evaluate {policy!r} on {benchmark_path}")
        return EXIT_OK
    gateway = config.build_gateway()
    benchmark = bench.load_benchmark(benchmark_path)
    result = bench.evaluate(policy, benchmark, gateway, config.templates)
    result = bench.EvalResult(
        **{**asdict_eval(result), "acc_plus": bench.acc_plus(result, benchmark)}
    )
    row = bench.eval_result_row(
        policy, section.get("benchmark_name", "benchmark"), result
    )
    atomic_write_text(output_path, bench.results_to_csv([row]))
    print(bench.render_table([row]), end="")
    if result.degraded:
        print("warning: run degraded (>10% transport-flagged)", file=sys.stderr)
    return EXIT_OK


def asdict_eval(result: bench.EvalResult) -> dict:
    return {
        "n": result.n,
        "per_sample": result.per_sample,
        "per_category": result.per_category,
        "overall_acc": result.overall_acc,
        "macro_acc": result.macro_acc,
        "flagged": result.flagged,
        "degraded": result.degraded,
        "acc_plus": result.acc_plus,
    }


def cmd_transfer(config: RunConfig, dry_run: bool) -> int:
    section = config.section("transfer")
    benchmark_path = config.input_path(section, "benchmark")
    output_path = config.output_path(section, "output")
    source = config.endpoint_name(section, "rubric_source")
    evaluators = section.get("evaluators", [])
    for evaluator in evaluators:
        if evaluator not in config.endpoints:
            raise ConfigError(f"unknown endpoint {evaluator!r}")
    if dry_run:
        print(f"transfer: would run {len(evaluators)} evaluators x 1 source")
        return EXIT_OK
    gateway = config.build_gateway()
    benchmark = bench.load_benchmark(benchmark_path)
    records = bench.transfer_experiment(
        source,
        evaluators,
        benchmark,
        gateway,
        config.templates,
        benchmark_name=section.get("benchmark_name", "benchmark"),
    )
    rows = bench.transfer_matrix_rows(records)
    atomic_write_text(output_path, bench.results_to_csv(rows))
    print(bench.render_table(rows), end="")
    return EXIT_OK


COMMANDS = {
    "curate": cmd_curate,
    "distill": cmd_distill,
    "train": cmd_train,
    "eval": cmd_eval,
    "transfer": cmd_transfer,
}


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="rubricrl",
        description="Rubric-transferability reward pipeline",
    )
    parser.add_argument("command", choices=sorted(COMMANDS))
    parser.add_argument("--config", required=True, help="path to JSON run config")
    parser.add_argument("--seed", type=int, default=None, help="override config seed")
    parser.add_argument("--dry-run", action="store_true")
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return EXIT_CONFIG if exc.code else EXIT_OK
    try:
        config = RunConfig.load(args.config)
        if args.seed is not None:
            config.seed = args.seed
        return COMMANDS[args.command](config, args.dry_run)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except TrainAborted as exc:
        print(f"train aborted: {exc}", file=sys.stderr)
        return EXIT_TRANSPORT
    except (TransportError, ProtocolError) as exc:
        print(f"transport error: {exc}", file=sys.stderr)
        return EXIT_TRANSPORT
    except (ParseError, ValidationError) as exc:
        print(f"data error: {exc}", file=sys.stderr)
        return EXIT_DATA
    except RubricRLError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_DATA


if __name__ == "__main__":
    sys.exit(main())
