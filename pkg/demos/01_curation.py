"""Walk through the preference-data pipeline: filter, distill, split, allocate.

Runs fully offline with a rule-based scripted teacher.
"""

from rubricrl.data import (
    CurationConfig,
    PreferenceSample,
    allocate_splits,
    curate,
    difficulty_score,
    make_distilled_record,
    split_by_teacher_verdict,
)


def build_raw_pool():
    samples = [
        PreferenceSample(
            id="good-1",
            question="What is the dog doing in the photo?",
            response_1="The dog is running across a grassy field chasing a ball.",
            response_2="The dog is asleep on a couch next to a cat.",
            gold_verdict=1,
        ),
        PreferenceSample(
            id="good-2",
            question="How many cups are on the table?",
            response_1="There are three cups arranged near the plate.",
            response_2="There are five cups stacked in a pyramid.",
            gold_verdict=1,
        ),
        # Rejected: both responses identical after normalization.
        PreferenceSample(
            id="dup-responses",
            question="What color is the car parked outside?",
            response_1="The car is  RED.",
            response_2="the car is red.",
            gold_verdict=1,
        ),
        # Rejected: responses nearly identical, so no preference signal.
        PreferenceSample(
            id="too-easy",
            question="Describe the weather in the scene.",
            response_1=" ".join(["cloudy"] * 40),
            response_2=" ".join(["cloudy"] * 39 + ["sunny"]),
            gold_verdict=2,
        ),
        # Rejected: near-duplicate question of good-2.
        PreferenceSample(
            id="near-dup",
            question="how  MANY cups are on the table?",
            response_1="I count three cups in total on the table.",
            response_2="Definitely seven cups are shown there.",
            gold_verdict=1,
        ),
    ]
    return samples


def scripted_teacher(sample):
    """Pretend teacher: correct on every sample except good-2."""
    verdict = sample.gold_verdict if sample.id != "good-2" else 3 - sample.gold_verdict
    return (
        "<rubric>1. Accuracy (0.7): claims must match the image.\n"
        "2. Completeness (0.3): cover the whole question.</rubric>"
        f"<eval>Compared both responses for sample {sample.id}.</eval>"
        f"<answer>{verdict}</answer>"
    )


def main():
    raw = build_raw_pool()
    print(f"raw pool: {len(raw)} samples")
    for sample in raw:
        print(f"  {sample.id}: difficulty {difficulty_score(sample):.3f}")

    kept, report = curate(raw, CurationConfig())
    print("\ncuration report:")
    print(report.to_json())
    print("kept:", [s.id for s in kept])

    records = [make_distilled_record(s, scripted_teacher(s)) for s in kept]
    correct, hard = split_by_teacher_verdict(records, kept)
    print(f"\nteacher-correct: {correct}, hard: {hard}")

    allocation = allocate_splits(correct, hard, (0.2, 0.4, 0.4), seed=0)
    print("allocation:", allocation.to_dict())

    # The headline allocation arithmetic at full scale:
    big = allocate_splits([f"id-{i}" for i in range(25_000)], [], (0.2, 0.4, 0.4), 0)
    print(
        "\n25000 teacher-correct ids at (0.2, 0.4, 0.4) ->",
        len(big.proxy_sft),
        len(big.proxy_rl),
        len(big.grm_sft),
    )


if __name__ == "__main__":
    main()
