"""
Evaluating the generalization bound
===================================

Assemble every input of the bound from data: the H2 norm of the filter, a
state bound D, a transient proxy epsilon, and lower estimates of both
Lipschitz constants. The result is labelled as-estimated because L_S and L_T
are sampled, not certified.
"""
import json

from lipkkl import TrainConfig, build_dataset, default_observer, lorenz_system, simulate, train
from lipkkl.analysis import (BoundInputs, default_epsilon, estimate_immersion_lipschitz, generalization_bound,
                             h2_norm, network_lipschitz, state_bound)
from lipkkl.training import mse

obs = default_observer()
traj = simulate(lorenz_system(), (1.0, 1.0, 1.0), 0.01, 500.0)
clean = build_dataset(lorenz_system(), obs, 0.0, 2000, 20.0, 500.0, seed=0, traj=traj)
noisy = build_dataset(lorenz_system(), obs, 1.0, 2000, 20.0, 500.0, seed=0, traj=traj)
net, _ = train(noisy, TrainConfig(gamma=10.0, epochs=100))

# %%
# the raw pairwise max is dominated by near-coincident states; the floored
# variant is a steadier, smaller number
print("L_T raw:", estimate_immersion_lipschitz(clean), " L_T (pairs > 0.1 apart):",
      estimate_immersion_lipschitz(clean, min_separation=0.1))

inp = BoundInputs(h=h2_norm(obs.A, obs.B), sigma=1.0, alpha=0.05, epsilon=default_epsilon(20.0, clean.z),
                  D=state_bound(clean), m=len(noisy), L_S=network_lipschitz(net, noisy.z),
                  L_T=estimate_immersion_lipschitz(clean), R_hat=mse(net, noisy))
print(json.dumps(generalization_bound(inp).to_json(), indent=2))
