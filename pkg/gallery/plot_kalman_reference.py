"""
The reference filter and the evaluation harness
================================================

The native filter, the interpreted fixture program and the compiled harness
all produce the same estimates. Tasks that discover only part of the filter
run the remaining reference statements around the candidate.
"""

from evofilter import dynsys, kalman
from evofilter.dsl import parse

system = dynsys.make_system()
data = kalman.make_datasets(system, dynsys.Scenario("gaussian"), seed=0)

obs = dynsys.observation_mse(data.test.trajectories)
ref = kalman.kalman_report(data, "test")
print(f"observations {obs:.4f}  filter {ref.mean:.4f} +- {ref.stderr:.4f}")

# the fixture program through the compiled harness
full = kalman.make_task("full")
rep = kalman.evaluate_candidate(kalman.kalman_program(), full, data, "test")
print(f"fixture program {rep.mean:.4f} (difference {abs(rep.mean - ref.mean):.1e})")

# a candidate for the predict-only task; the update is supplied by the harness
predict = kalman.make_task("predict")
lazy = parse("fn f(i_1, i_2, i_3, i_4) -> (o_1, o_2) {\n  o_1 = i_2 @ i_1\n  o_2 = i_3 + i_4\n}")
print("predict candidate:", kalman.evaluate_candidate(lazy, predict, data, "validation"))

# failing programs get the sentinel and a reason
broken = parse(kalman.fixture_text("kalman").replace("inv(S)", "inv(S - S)"))
print("broken candidate:", kalman.evaluate_candidate(broken, full, data, "train").failure)

for tag in kalman.TASK_TAGS:
    t = kalman.make_task(tag)
    print(f"{tag:15s} discovered {len(t.discovered)} statements, fixed {len(t.fixed_remainder)}")
