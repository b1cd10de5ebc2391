"""
Tracking under measurement noise
================================

Run a noiselessly trained gamma = 10 observer on fresh episodes with low and
high output noise and plot true against estimated states.
"""
import matplotlib
matplotlib.use("Agg")
import matplotlib.pyplot as plt
import numpy as np

from lipkkl import (TrainConfig, build_dataset, default_observer, estimate_states, filter_outputs,
                    lorenz_system, make_rng, simulate, train)
from lipkkl.dynamics import noisy_outputs

obs = default_observer()
ds = build_dataset(lorenz_system(), obs, 0.0, 2000, 20.0, 500.0, seed=0)
net, _ = train(ds, TrainConfig(gamma=10.0, epochs=200))

# %%
# fresh episode from a different initial state, burn-in then 10 time units
traj = simulate(lorenz_system(), (-3.0, 2.0, 20.0), 0.01, 30.0)
fig, ax = plt.subplots(2, 1, figsize=(9, 6), sharex=True)
for a, sigma in zip(ax, (0.1, 3.0)):
    z = filter_outputs(obs, noisy_outputs(traj, sigma, make_rng(1)))
    xhat = estimate_states(net, z)[2000:]
    x = traj.states[2000:]
    t = traj.times[2000:] - 20.0
    print(f"sigma={sigma}: tracking mse {np.mean(np.sum((xhat - x) ** 2, axis=1)):.3f}")
    a.plot(t, x[:, 0], "k", lw=1, label="x1")
    a.plot(t, xhat[:, 0], "r--", lw=1, label="estimate")
    a.set_title(f"sigma = {sigma}")
    a.legend()
ax[1].set_xlabel("t after burn-in")
fig.savefig("noisy_tracking.png", dpi=120)
