"""
When the textbook filter is not optimal
=======================================

One-sided measurement noise, delayed observations and nonlinear dynamics
break the assumptions of the filter. Simple corrections show how much room
there is for a discovered program.
"""

import numpy as np

from evofilter import dynsys, kalman

system = dynsys.make_system()
full = kalman.make_task("full")

half = kalman.make_datasets(system, dynsys.Scenario("half-gaussian"), seed=0)
plain = kalman.kalman_report(half, "test").mean
est = np.stack([kalman.debiased_kalman_baseline(system, t) for t in half.test.trajectories])
debiased = kalman.report_from_estimates(est, half.arrays("test")[0]).mean
program = kalman.evaluate_candidate(kalman.load_fixture("half_gaussian"), full, half, "test").mean
print(f"one-sided noise: plain {plain:.3f}  mean removed {debiased:.3f}  shipped program {program:.3f}")

for lo, hi in ((0.0, 0.0), (0.0, 0.25), (0.0, 0.5), (0.0, 1.0)):
    d = kalman.make_datasets(system, dynsys.Scenario("delayed", (lo, hi)), seed=0)
    print(f"delay in [{lo}, {hi}]: filter mse {kalman.kalman_report(d, 'test').mean:.3f}")

sc = dynsys.Scenario("nonlinear")
nl = kalman.make_datasets(system, sc, seed=0)
naive = kalman.kalman_report(nl, "test").mean
aware = kalman.kalman_report(nl, "test", kalman.g_aware_step(sc.g)).mean
print(f"nonlinear dynamics: linear filter {naive:.3f}  with known map {aware:.3f}")
