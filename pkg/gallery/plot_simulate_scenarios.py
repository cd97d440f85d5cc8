"""
Simulating the tracking problem
===============================

A 2-D constant-velocity target is observed directly with additive noise.
Four noise scenarios share the same random streams, so their observation
errors can be compared step by step.
"""

import numpy as np

from evofilter import dynsys

system = dynsys.make_system(dt=1.0, sigma_a=1.0, sigma_z=1.0)
print("F =\n", system.F)
print("Q =\n", system.Q)

for tag in dynsys.SCENARIOS:
    sc = dynsys.Scenario(tag)
    trajs = [dynsys.simulate(system, sc, 500, seed=[0, i]) for i in range(20)]
    noise = np.concatenate([t.observations - t.states for t in trajs])
    print(f"{tag:14s} observation mse {dynsys.observation_mse(trajs):7.3f}  mean noise {noise.mean(axis=0)}")

# one gaussian trajectory, plotted if matplotlib is around
t = dynsys.simulate(system, dynsys.Scenario(), 200, seed=1)
try:
    import matplotlib

    matplotlib.use("Agg")
    import matplotlib.pyplot as plt
except ImportError:
    plt = None
if plt is not None:
    fig, ax = plt.subplots()
    ax.plot(t.states[:, 0], label="position")
    ax.plot(t.observations[:, 0], ".", ms=2, label="observed")
    ax.legend()
    fig.savefig("trajectory.png", dpi=100)
    print("wrote trajectory.png")
