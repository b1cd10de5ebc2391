"""Generalization-bound bookkeeping and Lipschitz-bound sweeps.

The bound assembled here is

    R <= R_hat + (L_S L_T + 1)^2 * Delta

    Delta = D^2 sqrt(ln(4/alpha) / (2m))            (hoeffding)
          + h^2 sigma^2 / (1 - alpha/2)             (noise_quadratic)
          + (D + 2 eps) h sigma / sqrt(1 - alpha/2) (noise_linear)
          + (D + eps) eps                           (transient)

with h the H2 norm of the observer filter. The (1 - alpha/2) denominators are
kept as published even though a textbook Markov step gives alpha/2.
"""
from __future__ import annotations

import csv
import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import asdict, dataclass, field, replace

import numpy as np

from .dynamics import SystemModel, Trajectory, simulate
from .lipnet import LipNetParams, forward
from .numcore import as_matrix, make_rng, solve_lyapunov
from .observer import DEFAULT_X0, ObserverLTI, PairedDataset, build_dataset
from .training import TrainConfig, mse, train

SWEEP_COLUMNS = ["gamma", "sigma_train", "sigma_eval", "train_loss", "val_loss", "emp_lipschitz", "seed", "status"]


def h2_norm(A, B) -> float:
    """sqrt(trace P) with ``A P + P A^T + B B^T = 0``."""
    A = as_matrix(A)
    B = as_matrix(np.asarray(B, dtype=float).reshape(A.shape[0], -1))
    P = solve_lyapunov(A, B @ B.T)
    return float(np.sqrt(max(np.trace(P), 0.0)))


# Lipschitz estimates

def lipschitz_probes(points, rng: np.random.Generator, n_box: int = 10_000, n_local: int = 4,
                     step: float = 1e-4) -> tuple[np.ndarray, np.ndarray]:
    """Probe pairs for ``empirical_lipschitz``.

    ``n_box`` uniform pairs from the bounding box of ``points``, plus
    ``n_local`` pairs ``(p, p + step * u)`` per point with random unit ``u``.
    """
    pts = np.atleast_2d(np.asarray(points, dtype=float))
    lo, hi = pts.min(axis=0), pts.max(axis=0)
    dim = pts.shape[1]
    u = lo + (hi - lo) * rng.random((n_box, dim))
    v = lo + (hi - lo) * rng.random((n_box, dim))
    base = np.repeat(pts, n_local, axis=0)
    dirs = rng.standard_normal(base.shape)
    dirs /= np.linalg.norm(dirs, axis=1, keepdims=True)
    return np.vstack([u, base]), np.vstack([v, base + step * dirs])


def empirical_lipschitz(fn, probes) -> float:
    """Max difference quotient over probe pairs; a lower bound on the Lipschitz constant.

    ``fn`` maps a (k, d_in) array to a (k, d_out) array.
    """
    u, v = (np.atleast_2d(np.asarray(p, dtype=float)) for p in probes)
    if len(u) == 0 or u.shape != v.shape:
        raise ValueError("probes must be two nonempty arrays of equal shape")
    du = np.linalg.norm(u - v, axis=1)
    keep = du > 0
    if not np.any(keep):
        raise ValueError("all probe pairs are degenerate")
    df = np.linalg.norm(np.atleast_2d(fn(u[keep])) - np.atleast_2d(fn(v[keep])), axis=1)
    return float(np.max(df / du[keep]))


def network_lipschitz(net: LipNetParams, z_points, seed: int = 0) -> float:
    probes = lipschitz_probes(z_points, make_rng([int(seed), 7]))
    return empirical_lipschitz(lambda q: forward(net, q), probes)


def estimate_immersion_lipschitz(ds_noiseless: PairedDataset, max_pairs: int = 1_000_000,
                                 seed: int = 0, min_separation: float = 0.0) -> float:
    """max ||z_i - z_j|| / ||x_i - x_j|| over record pairs (subsampled if needed).

    On chaotic attractors the largest quotients come from the closest pairs
    and grow as sampling gets denser, so the plain maximum varies a lot
    between samples. ``min_separation`` ignores pairs with
    ``||x_i - x_j|| <= min_separation``, which gives a stable but smaller,
    scale-dependent figure.
    """
    if ds_noiseless.sigma != 0:
        raise ValueError(f"immersion Lipschitz needs a noiseless dataset, got sigma={ds_noiseless.sigma:g}")
    m = len(ds_noiseless)
    i, j = np.triu_indices(m, k=1)
    if len(i) > max_pairs:
        pick = make_rng([int(seed), 11]).choice(len(i), size=max_pairs, replace=False)
        i, j = i[pick], j[pick]
    best = 0.0
    for lo in range(0, len(i), 200_000):
        a, b = i[lo:lo + 200_000], j[lo:lo + 200_000]
        dx = np.linalg.norm(ds_noiseless.x[a] - ds_noiseless.x[b], axis=1)
        dz = np.linalg.norm(ds_noiseless.z[a] - ds_noiseless.z[b], axis=1)
        ok = dx > min_separation
        if np.any(ok):
            best = max(best, float(np.max(dz[ok] / dx[ok])))
    return best


# the bound

@dataclass
class BoundInputs:
    h: float
    sigma: float
    alpha: float
    epsilon: float
    D: float
    m: int
    L_S: float
    L_T: float
    R_hat: float

    def __post_init__(self):
        if not 0 < self.alpha < 1:
            raise ValueError(f"alpha must lie in (0, 1), got {self.alpha}")
        if self.m < 1:
            raise ValueError("m must be >= 1")
        for name in ("h", "sigma", "epsilon", "D", "L_S", "L_T", "R_hat"):
            if getattr(self, name) < 0:
                raise ValueError(f"{name} must be nonnegative")


@dataclass
class BoundReport:
    delta: float
    bound: float
    components: dict
    inputs: BoundInputs
    notes: list = field(default_factory=list)

    def to_json(self) -> dict:
        return {
            "bound": self.bound,
            "delta": self.delta,
            "components": dict(self.components),
            "inputs": asdict(self.inputs),
            "notes": list(self.notes),
        }


def delta_components(inp: BoundInputs) -> dict:
    a = 1.0 - inp.alpha / 2.0
    hs = inp.h * inp.sigma
    return {
        "hoeffding": inp.D ** 2 * math.sqrt(math.log(4.0 / inp.alpha) / (2.0 * inp.m)),
        "noise_quadratic": hs ** 2 / a,
        "noise_linear": (inp.D + 2.0 * inp.epsilon) * hs / math.sqrt(a),
        "transient": (inp.D + inp.epsilon) * inp.epsilon,
    }


def delta_term(inp: BoundInputs) -> float:
    return math.fsum(delta_components(inp).values())


def generalization_bound(inp: BoundInputs) -> BoundReport:
    comps = delta_components(inp)
    delta = math.fsum(comps.values())
    bound = inp.R_hat + (inp.L_S * inp.L_T + 1.0) ** 2 * delta
    notes = [
        "as-estimated: L_S and L_T are empirical lower estimates",
        "Markov step uses 1/(1 - alpha/2) as published; a standard Markov bound would use alpha/2",
    ]
    return BoundReport(delta, bound, comps, inp, notes)


def default_epsilon(t_burn: float, z) -> float:
    """exp(-t_burn) * max ||z||, a transient proxy for the slowest unit-rate mode."""
    return math.exp(-t_burn) * float(np.max(np.linalg.norm(np.atleast_2d(z), axis=1)))


def state_bound(ds: PairedDataset) -> float:
    return float(np.max(np.linalg.norm(ds.x, axis=1)))


# sweeps

@dataclass
class SweepRow:
    gamma: float
    sigma_train: float
    sigma_eval: float | None
    train_loss: float | None
    val_loss: float | None
    emp_lipschitz: float | None
    seed: int
    status: str = "ok"

    def as_list(self) -> list[str]:
        def fmt(v):
            return "" if v is None else repr(float(v))

        return [fmt(self.gamma), fmt(self.sigma_train), fmt(self.sigma_eval), fmt(self.train_loss),
                fmt(self.val_loss), fmt(self.emp_lipschitz), str(self.seed), self.status]


@dataclass
class SweepResult:
    rows: list[SweepRow]
    models: dict  # (gamma, sigma_train) -> LipNetParams

    def training_rows(self) -> list[SweepRow]:
        return [r for r in self.rows if r.sigma_eval is None]

    def eval_rows(self) -> list[SweepRow]:
        return [r for r in self.rows if r.sigma_eval is not None]

    def to_csv(self, path) -> None:
        with open(path, "w", newline="", encoding="utf-8") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(SWEEP_COLUMNS)
            for row in self.rows:
                w.writerow(row.as_list())


@dataclass
class SweepData:
    """Plant and observer settings shared by every sweep cell."""
    system: SystemModel
    observer: ObserverLTI
    m: int = 2000
    t_burn: float = 20.0
    t_end: float = 500.0
    data_seed: int = 0
    x0: tuple = DEFAULT_X0


def run_gamma_sweep(gammas, sigmas_train, sigmas_eval, base: TrainConfig, data: SweepData,
                    workers: int = 1, traj: Trajectory | None = None) -> SweepResult:
    """Train one network per (gamma, sigma_train) and re-evaluate the
    noiselessly trained ones on fresh noisy datasets at every sigma_eval.

    Training rows come first in grid order, then evaluation rows. A failing
    cell becomes an error row and the sweep continues.
    """
    gammas, sigmas_train, sigmas_eval = list(gammas), list(sigmas_train), list(sigmas_eval)
    if not gammas or not sigmas_train:
        raise ValueError("gamma and sigma_train grids must be nonempty")
    if traj is None:
        traj = simulate(data.system, data.x0, data.observer.dt, data.t_end)

    def dataset(sigma, seed):
        return build_dataset(data.system, data.observer, sigma, data.m, data.t_burn, data.t_end,
                             seed, x0=data.x0, traj=traj)

    train_sets = {s: dataset(s, data.data_seed) for s in sigmas_train}

    def cell(gamma, sigma):
        cfg = replace(base, gamma=float(gamma))
        try:
            net, hist = train(train_sets[sigma], cfg)
            lip = network_lipschitz(net, train_sets[sigma].z, seed=cfg.seed)
            return net, SweepRow(gamma, sigma, None, hist.train_loss[-1], hist.val_loss, lip, cfg.seed)
        except (ArithmeticError, ValueError) as exc:
            return None, SweepRow(gamma, sigma, None, None, None, None, cfg.seed, f"error: {exc}")

    grid = [(g, s) for g in gammas for s in sigmas_train]
    if workers > 1:
        with ThreadPoolExecutor(workers) as pool:
            results = list(pool.map(lambda gs: cell(*gs), grid))
    else:
        results = [cell(g, s) for g, s in grid]
    rows = [r for _, r in results]
    models = {gs: net for gs, (net, _) in zip(grid, results) if net is not None}

    # fresh noise: a data seed distinct from the training one
    for k, sigma_eval in enumerate(sigmas_eval):
        eval_seed = data.data_seed + 1000 + k
        fresh = dataset(sigma_eval, eval_seed)
        for g in gammas:
            net = models.get((g, 0.0)) or models.get((g, 0))
            if net is None:
                if 0 in sigmas_train or 0.0 in sigmas_train:
                    rows.append(SweepRow(g, 0.0, sigma_eval, None, None, None, eval_seed,
                                         "error: no trained model for this cell"))
                continue
            rows.append(SweepRow(g, 0.0, sigma_eval, None, mse(net, fresh),
                                 network_lipschitz(net, fresh.z, seed=base.seed), eval_seed))
    return SweepResult(rows, models)
