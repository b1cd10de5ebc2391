"""The linear half of the KKL observer and (x, z) training-pair construction."""
from __future__ import annotations

import csv
import json
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .dynamics import DivergenceError, SystemModel, Trajectory, noisy_outputs, simulate
from .numcore import as_matrix, make_rng

DEFAULT_X0 = (1.0, 1.0, 1.0)


class InsufficientGridError(ValueError):
    pass


@dataclass
class ObserverLTI:
    A: np.ndarray
    B: np.ndarray
    z0: np.ndarray | None = None
    dt: float = 0.01

    def __post_init__(self):
        self.A = as_matrix(self.A)
        n_z = self.A.shape[0]
        if self.A.shape != (n_z, n_z):
            raise ValueError(f"A must be square, got {self.A.shape}")
        self.B = as_matrix(np.asarray(self.B, dtype=float).reshape(-1, 1))
        if self.B.shape != (n_z, 1):
            raise ValueError(f"B must have {n_z} rows, got {self.B.shape}")
        self.z0 = np.zeros(n_z) if self.z0 is None else np.asarray(self.z0, dtype=float).reshape(n_z)
        if self.dt <= 0:
            raise ValueError("dt must be positive")
        worst = float(np.max(np.linalg.eigvals(self.A).real))
        if worst >= 0:
            raise ValueError(f"A is not Hurwitz (max real eigenvalue part {worst:g})")

    @property
    def n_z(self) -> int:
        return self.A.shape[0]

    def rk4_propagators(self, dt: float | None = None) -> tuple[np.ndarray, np.ndarray]:
        """``(Phi, Gam)`` with one RK4 step of ``z' = Az + Bu`` (u held) equal to ``Phi z + Gam u``."""
        h = self.dt if dt is None else dt
        ha = h * self.A
        eye = np.eye(self.n_z)
        ha2 = ha @ ha
        ha3 = ha2 @ ha
        phi = eye + ha + ha2 / 2 + ha3 / 6 + ha3 @ ha / 24
        gam = h * (eye + ha / 2 + ha2 / 6 + ha3 / 24) @ self.B
        return phi, gam[:, 0]


def default_observer() -> ObserverLTI:
    return ObserverLTI(A=-np.diag([8.0, 4.0, 2.0, 1.0]), B=np.ones(4), z0=np.zeros(4), dt=0.01)


def filter_outputs(obs: ObserverLTI, y_sequence, dt: float | None = None, z0=None) -> np.ndarray:
    """Run ``z' = Az + By`` over a sampled output sequence.

    ``y`` is held constant between grid points, so each classical RK4 step on
    the linear system collapses to a fixed affine map. Returns ``z`` at every
    grid point, starting with ``z0``.
    """
    y = np.asarray(y_sequence, dtype=float)
    phi, gam = obs.rk4_propagators(dt)
    z = np.empty((len(y), obs.n_z))
    z[0] = obs.z0 if z0 is None else z0
    for k in range(len(y) - 1):
        z[k + 1] = phi @ z[k] + gam * y[k]
    if not np.all(np.isfinite(z)):
        bad = int(np.argmax(~np.all(np.isfinite(z), axis=1)))
        raise DivergenceError("observer filter diverged", time=bad * (obs.dt if dt is None else dt))
    return z


@dataclass
class PairedDataset:
    t: np.ndarray  # (m,)
    x: np.ndarray  # (m, n)
    z: np.ndarray  # (m, n_z)
    meta: dict = field(default_factory=dict)

    def __len__(self):
        return len(self.t)

    @property
    def sigma(self) -> float:
        return float(self.meta.get("sigma", 0.0))

    def subset(self, idx) -> "PairedDataset":
        idx = np.asarray(idx)
        return PairedDataset(self.t[idx], self.x[idx], self.z[idx], dict(self.meta))

    def to_files(self, csv_path, meta_path=None) -> None:
        csv_path = Path(csv_path)
        meta_path = Path(meta_path) if meta_path else csv_path.with_suffix(".json")
        n, n_z = self.x.shape[1], self.z.shape[1]
        with open(csv_path, "w", newline="", encoding="utf-8") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(["t", *(f"x{i + 1}" for i in range(n)), *(f"z{i + 1}" for i in range(n_z))])
            for t, x, z in zip(self.t, self.x, self.z):
                w.writerow([repr(float(t)), *(repr(float(v)) for v in x), *(repr(float(v)) for v in z)])
        meta_path.write_text(json.dumps(self.meta, indent=2, sort_keys=True) + "\n", encoding="utf-8")

    @classmethod
    def from_files(cls, csv_path, meta_path=None) -> "PairedDataset":
        csv_path = Path(csv_path)
        meta_path = Path(meta_path) if meta_path else csv_path.with_suffix(".json")
        with open(csv_path, newline="", encoding="utf-8") as fh:
            rows = list(csv.reader(fh))
        header, body = rows[0], np.array(rows[1:], dtype=float).reshape(-1, len(rows[0]))
        xcols = [i for i, h in enumerate(header) if h.startswith("x")]
        zcols = [i for i, h in enumerate(header) if h.startswith("z")]
        meta = json.loads(meta_path.read_text(encoding="utf-8")) if meta_path.exists() else {}
        return cls(body[:, 0], body[:, xcols], body[:, zcols], meta)


def build_dataset(
    sys: SystemModel,
    obs: ObserverLTI,
    sigma: float,
    m: int,
    t_burn: float,
    t_end: float,
    seed: int,
    x0=DEFAULT_X0,
    traj: Trajectory | None = None,
) -> PairedDataset:
    """Simulate, add measurement noise, filter, then sample ``m`` distinct grid
    instants uniformly from ``(t_burn, t_end]``.

    ``traj`` may be passed to reuse a plant simulation across noise levels; it
    must have been produced by ``simulate(sys, x0, obs.dt, t_end)``.
    """
    if not t_burn < t_end:
        raise ValueError("t_burn must be smaller than t_end")
    dt = obs.dt
    first = int(np.floor(t_burn / dt + 1e-9)) + 1
    last = int(round(t_end / dt))
    available = last - first + 1
    if m > available:
        raise InsufficientGridError(
            f"m={m} exceeds the {available} grid points in ({t_burn:g}, {t_end:g}] at dt={dt:g}"
        )
    if traj is None:
        traj = simulate(sys, x0, dt, t_end)
    rng = make_rng(seed)
    y = noisy_outputs(traj, sigma, rng)
    z = filter_outputs(obs, y, dt)
    idx = np.sort(first + rng.choice(available, size=m, replace=False))
    meta = {
        "sigma": float(sigma),
        "seed": int(seed),
        "burn_in": float(t_burn),
        "t_end": float(t_end),
        "system": sys.name,
        "x0": [float(v) for v in np.asarray(x0, dtype=float)],
        "dt": float(dt),
        "A": obs.A.tolist(),
        "B": obs.B[:, 0].tolist(),
        "z0": obs.z0.tolist(),
    }
    return PairedDataset(traj.times[idx], traj.states[idx], z[idx], meta)


def estimate_states(net, z_sequence) -> np.ndarray:
    """Apply the learned inverse immersion pointwise to observer states."""
    from .lipnet import forward

    z = np.atleast_2d(np.asarray(z_sequence, dtype=float))
    if z.shape[1] != net.input_dim:
        raise ValueError(f"network expects {net.input_dim} inputs, got {z.shape[1]}")
    return forward(net, z)
