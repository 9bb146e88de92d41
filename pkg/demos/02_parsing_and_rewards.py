"""Show the structured output contract and how the reward schemes score it."""

import itertools

from rubricrl.formats import FormatError, parse_grm_output
from rubricrl.rewards import (
    FEEDBACK_PRESETS,
    composite_reward,
    ensemble_proxy_reward,
    get_feedback_config,
)

GOOD = (
    "Let me study both responses first.\n"
    "<rubric>1. Grounded accuracy (0.6): every claim must be verifiable.\n"
    "2. Relevance (0.4): stay on the question.</rubric>"
    "<eval>Response 1 invents a second person; response 2 is faithful.</eval>"
    "<answer>2</answer>"
)

BROKEN = [
    "<rubric>only a rubric, nothing else</rubric>",
    "<eval>out of order</eval><rubric>r</rubric><answer>1</answer>",
    "<rubric>r</rubric><eval>e</eval><answer>maybe</answer>",
    "<rubric>r</rubric>stray words<eval>e</eval><answer>1</answer>",
]


def main():
    parsed = parse_grm_output(GOOD)
    print("verdict:", parsed.answer)
    for criterion in parsed.rubric.criteria:
        print(f"  criterion {criterion.name!r} weight={criterion.weight}")
    print("canonical form:", parsed.render()[:60], "...")

    print("\nrejected outputs:")
    for text in BROKEN:
        result = parse_grm_output(text)
        assert isinstance(result, FormatError)
        print(f"  {result.kind.value:17s} <- {text[:45]!r}")

    print("\nadditive reward over the full outcome cube:")
    additive = get_feedback_config("additive")
    for acc, proxy, fmt in itertools.product((1.0, -1.0), (1.0, -1.0), (1.0, 0.0)):
        total = composite_reward(acc, proxy, fmt, additive)
        print(f"  acc={acc:+.0f} proxy={proxy:+.0f} fmt={fmt:.0f} -> {total:+.1f}")

    print("\ncell-table schemes (acc/proxy interaction, format term on top):")
    header = "scheme   hit/hit  hit/miss  miss/hit  miss/miss  zero-out"
    print(" ", header)
    for name in sorted(FEEDBACK_PRESETS):
        config = FEEDBACK_PRESETS[name]
        if config.is_additive:
            continue
        cells = [
            config.cell[(True, True)],
            config.cell[(True, False)],
            config.cell[(False, True)],
            config.cell[(False, False)],
        ]
        print(
            f"  {name:8s}" + "".join(f"{c:+9.1f}" for c in cells),
            "  yes" if config.zero_out_proxy else "  no",
        )

    print("\nensemble of three evaluators, one dissenting:")
    print("  mean proxy reward:", ensemble_proxy_reward([1.0, 1.0, -1.0]))


if __name__ == "__main__":
    main()
