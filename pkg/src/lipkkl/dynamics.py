"""Autonomous plants, fixed-step RK4 integration and noisy measurements."""
from __future__ import annotations

import csv
from dataclasses import dataclass
from typing import Callable

import numpy as np


class DivergenceError(ArithmeticError):
    """A simulated state became non-finite."""

    def __init__(self, message: str, time: float | None = None):
        super().__init__(message if time is None else f"{message} at t={time:g}")
        self.time = time


@dataclass(frozen=True)
class SystemModel:
    name: str
    state_dim: int
    rhs: Callable[[np.ndarray], np.ndarray]
    output: Callable[[np.ndarray], float]


@dataclass
class Trajectory:
    dt: float
    times: np.ndarray    # (K,)
    states: np.ndarray   # (K, n)
    outputs: np.ndarray  # (K,)

    def __len__(self):
        return len(self.times)

    def to_csv(self, path) -> None:
        n = self.states.shape[1]
        with open(path, "w", newline="", encoding="utf-8") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(["t", *(f"x{i + 1}" for i in range(n)), "y"])
            for t, x, y in zip(self.times, self.states, self.outputs):
                w.writerow([repr(float(t)), *(repr(float(v)) for v in x), repr(float(y))])


def _lorenz_rhs(x):
    x1, x2, x3 = x
    return np.array([10.0 * (x2 - x1), x1 * (28.0 - 10.0 * x3) - x2, 10.0 * x1 * x2 - (8.0 / 3.0) * x3])


def _lorenz_output(x):
    return float(x[1])


def lorenz_system() -> SystemModel:
    """Lorenz attractor in the rescaled form with output ``y = x2``."""
    return SystemModel("lorenz", 3, _lorenz_rhs, _lorenz_output)


SYSTEMS = {"lorenz": lorenz_system}


def rk4_step(sys: SystemModel, x, dt: float) -> np.ndarray:
    x = np.asarray(x, dtype=float)
    f = sys.rhs
    k1 = f(x)
    k2 = f(x + 0.5 * dt * k1)
    k3 = f(x + 0.5 * dt * k2)
    k4 = f(x + dt * k3)
    out = x + (dt / 6.0) * (k1 + 2.0 * k2 + 2.0 * k3 + k4)
    if not np.all(np.isfinite(out)):
        raise DivergenceError("RK4 step produced a non-finite state")
    return out


def simulate(sys: SystemModel, x0, dt: float, t_end: float) -> Trajectory:
    if dt <= 0 or t_end <= 0:
        raise ValueError("dt and t_end must be positive")
    steps = int(round(t_end / dt))
    x = np.asarray(x0, dtype=float).reshape(sys.state_dim)
    states = np.empty((steps + 1, sys.state_dim))
    states[0] = x
    for k in range(steps):
        try:
            x = rk4_step(sys, x, dt)
        except DivergenceError as exc:
            raise DivergenceError("simulation diverged", time=(k + 1) * dt) from exc
        states[k + 1] = x
    times = np.arange(steps + 1) * dt
    outputs = np.array([sys.output(s) for s in states])
    return Trajectory(dt, times, states, outputs)


def noisy_outputs(traj: Trajectory, sigma: float, rng: np.random.Generator) -> np.ndarray:
    """Add iid N(0, sigma^2) to every sample of ``traj.outputs``.

    Draws are consumed even for ``sigma == 0`` so that later draws from
    ``rng`` do not depend on the noise level.
    """
    if sigma < 0:
        raise ValueError("sigma must be >= 0")
    xi = rng.standard_normal(len(traj.outputs))
    if sigma == 0:
        return traj.outputs.copy()
    return traj.outputs + sigma * xi
