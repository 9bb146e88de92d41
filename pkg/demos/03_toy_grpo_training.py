"""Train the tabular policy on the two-template environment, fully offline.

The policy picks a rubric template and a verdict.  The scripted evaluator can
follow the grounded template to the right answer but is misled by the
stylistic one, so the transferability reward pulls probability mass onto the
grounded template while the accuracy reward fixes the verdicts.  A second run
with two anti-correlated evaluators shows the signal washing out.
"""

from rubricrl import toyenv
from rubricrl.rewards import get_feedback_config
from rubricrl.trainer import TrainConfig, train_loop


def run(anti_pair, steps=120, label=""):
    samples, policy, gateway, templates, proxies = toyenv.make_setup(anti_pair)
    trace = []

    def on_step(step, current, metrics):
        p_grounded = toyenv.template_probability(current, samples, toyenv.GROUNDED)
        trace.append(p_grounded)
        if step % 20 == 0 or step == steps - 1:
            print(
                f"  step {step:3d}  P(grounded)={p_grounded:.3f}  "
                f"mean_acc={metrics.mean_acc:+.2f}  "
                f"mean_proxy={metrics.mean_proxy:+.2f}  "
                f"mean_composite={metrics.mean_composite:+.2f}"
            )

    config = TrainConfig(steps=steps, seed=0, proxy_endpoints=tuple(proxies))
    print(label)
    train_loop(
        samples,
        gateway,
        templates,
        config,
        get_feedback_config("additive"),
        policy=policy,
        action_renderer=toyenv.render_completion,
        on_step=on_step,
    )
    return trace


def main():
    aligned = run(anti_pair=False, label="single aligned evaluator:")
    degraded = run(anti_pair=True, label="\nanti-correlated evaluator pair:")
    print(f"\nfinal P(grounded), aligned evaluator: {aligned[-1]:.3f}")
    print(f"final P(grounded), conflicting pair:  {degraded[-1]:.3f}")
    print("conflicting evaluators average to zero reward, so the template")
    print("preference never forms; only the verdicts still get learned.")


if __name__ == "__main__":
    main()
