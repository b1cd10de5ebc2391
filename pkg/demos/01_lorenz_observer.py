"""
Lorenz plant and the linear observer filter
===========================================

Simulate the Lorenz system, drive the stable filter with the measured
output x2, and look at how quickly two filter copies started apart forget
their initial conditions.
"""
import matplotlib
matplotlib.use("Agg")
import matplotlib.pyplot as plt
import numpy as np

from lipkkl import default_observer, filter_outputs, lorenz_system, simulate

# %%
# 60 time units at dt = 0.01 with plain RK4
traj = simulate(lorenz_system(), (1.0, 1.0, 1.0), 0.01, 60.0)
print(traj.states.shape, "max |x| =", np.abs(traj.states).max().round(2))

# %%
# z' = A z + B y with A = -diag(8, 4, 2, 1), B = ones
obs = default_observer()
za = filter_outputs(obs, traj.outputs)
zb = filter_outputs(obs, traj.outputs, z0=np.array([5.0, -5.0, 5.0, -5.0]))
gap = np.linalg.norm(za - zb, axis=1)
# slowest mode has rate 1, so the gap should shrink at least like e^-t
print("gap after 20 time units:", gap[2000], "vs e^-20 * gap0 =", np.exp(-20) * gap[0])

# %%
fig, ax = plt.subplots(1, 2, figsize=(10, 4))
ax[0].plot(traj.states[:, 0], traj.states[:, 2], lw=0.4)
ax[0].set_xlabel("x1")
ax[0].set_ylabel("x3")
ax[1].semilogy(traj.times, gap)
ax[1].semilogy(traj.times, gap[0] * np.exp(-traj.times), "--", label="e^-t")
ax[1].set_xlabel("t")
ax[1].legend()
fig.savefig("lorenz_observer.png", dpi=120)
