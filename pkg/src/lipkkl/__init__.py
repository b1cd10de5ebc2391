"""Model-free KKL observers with Lipschitz-bounded inverse immersions."""
from .analysis import (BoundInputs, BoundReport, delta_term, empirical_lipschitz,
                       estimate_immersion_lipschitz, generalization_bound, h2_norm, run_gamma_sweep)
from .dynamics import Trajectory, SystemModel, lorenz_system, noisy_outputs, rk4_step, simulate
from .lipnet import (LipNetParams, SandwichParams, backward, cayley, forward, init_params,
                     param_count, sandwich_forward)
from .numcore import make_rng
from .observer import ObserverLTI, PairedDataset, build_dataset, default_observer, estimate_states, filter_outputs
from .training import TrainConfig, TrainHistory, mse, split, train

__version__ = "0.1.0"
