"""Score a scripted judge on a small benchmark and run the rubric-transfer
experiment: whose rubrics can other evaluators follow?
"""

from rubricrl import toyenv
from rubricrl.bench import (
    BenchmarkSample,
    acc_plus,
    evaluate,
    render_table,
    eval_result_row,
    transfer_experiment,
    transfer_matrix_rows,
)
from rubricrl.gateway import Gateway, ModelEndpoint, ResponderFixture
from rubricrl.proxy import PromptTemplates


def build_benchmark():
    samples = []
    categories = ["perception", "reasoning", "hallucination"]
    for i in range(18):
        samples.append(
            BenchmarkSample(
                id=f"b{i}",
                question=f"which answer handles test case {i} better overall?",
                response_1=f"a careful literal answer to case {i}",
                response_2=f"an embellished answer to case {i}",
                gold_verdict=1 + i % 2,
                category=categories[i % 3],
                group_id=f"g{i // 3}",
            )
        )
    return samples


def judge_responder(samples, wrong_ids):
    gold = {s.id: s.gold_verdict for s in samples}

    def respond(request):
        sid = request.fixture_key.sample_id
        verdict = 3 - gold[sid] if sid in wrong_ids else gold[sid]
        body = toyenv.RUBRIC_BODIES[toyenv.GROUNDED]
        return f"<rubric>{body}</rubric><eval>compared both</eval><answer>{verdict}</answer>"

    return respond


def main():
    templates = PromptTemplates.defaults()
    benchmark = build_benchmark()
    gold = {s.id: s.gold_verdict for s in benchmark}

    gateway = Gateway()
    gateway.register(
        ModelEndpoint(name="judge", kind="scripted"),
        fixture=ResponderFixture(judge_responder(benchmark, wrong_ids={"b4", "b7"})),
    )

    result = evaluate("judge", benchmark, gateway, templates)
    print("per-category accuracy:", result.per_category)
    strict = acc_plus(result, benchmark)
    row = eval_result_row("judge", "demo-bench", result)
    row["acc_plus"] = strict
    print(render_table([row]))

    # Transfer: a rubric-following evaluator vs. one that ignores the rubric.
    marker = toyenv.MARKERS[toyenv.GROUNDED]

    def follower(request):
        g = gold[request.fixture_key.sample_id]
        verdict = g if marker in request.messages[-1].content else 3 - g
        return f"<think>followed the rubric</think><answer>{verdict}</answer>"

    gateway.register(
        ModelEndpoint(name="follower", kind="scripted"),
        fixture=ResponderFixture(follower),
    )
    gateway.register(
        ModelEndpoint(name="coin-flip", kind="scripted"),
        fixture=ResponderFixture(lambda req: "<think>guess</think><answer>1</answer>"),
    )
    records = transfer_experiment(
        "judge", ["follower", "coin-flip"], benchmark, gateway, templates
    )
    print("rubric transfer (accuracy when following the judge's rubrics):")
    print(render_table(transfer_matrix_rows(records)))
    print("the follower inherits the judge's grounded rubric and lands on gold;")
    print("the rubric-ignoring evaluator stays at chance regardless of source.")


if __name__ == "__main__":
    main()
