"""Lipschitz-bounded feedforward networks built from Cayley sandwich layers.

A network with bound ``gamma`` is

    h0 = sqrt(gamma) z
    h_{l+1} = sandwich_l(h_l)              (each 1-Lipschitz)
    xhat = sqrt(gamma) N_out h_nu + b_out

so ``||xhat(z1) - xhat(z2)|| <= gamma ||z1 - z2||`` for every parameter value,
and training can use unconstrained gradient steps. Gradients are written out
by hand; the only non-standard adjoints are the Cayley transform and the
diagonal exponential scaling.
"""
from __future__ import annotations

import json
from dataclasses import dataclass
from pathlib import Path
from typing import Callable, NamedTuple

import numpy as np

from .numcore import mat_inverse, spectral_norm

SQRT2 = np.sqrt(2.0)


def relu(v):
    return np.maximum(v, 0.0)


@dataclass
class SandwichParams:
    X: np.ndarray  # (d, d)
    Y: np.ndarray  # (c, d)
    s: np.ndarray  # (d,)
    b: np.ndarray  # (d,)

    @property
    def in_dim(self) -> int:
        return self.Y.shape[0]

    @property
    def out_dim(self) -> int:
        return self.X.shape[0]


@dataclass
class LipNetParams:
    gamma: float
    hidden: list[SandwichParams]
    out_X: np.ndarray  # (n, n)
    out_Y: np.ndarray  # (c_last, n)
    out_b: np.ndarray  # (n,)

    def __post_init__(self):
        if not self.gamma > 0:
            raise ValueError("gamma must be positive")
        widths = self.widths
        for layer, (c, d) in zip(self.hidden, zip(widths[:-2], widths[1:-1])):
            if layer.Y.shape != (c, d) or layer.X.shape != (d, d) or layer.s.shape != (d,) or layer.b.shape != (d,):
                raise ValueError("inconsistent sandwich layer shapes")
        n = self.out_X.shape[0]
        if self.out_X.shape != (n, n) or self.out_Y.shape != (widths[-2], n) or self.out_b.shape != (n,):
            raise ValueError("inconsistent output layer shapes")

    @property
    def widths(self) -> tuple[int, ...]:
        first = self.hidden[0].in_dim if self.hidden else self.out_Y.shape[0]
        return (first, *(layer.out_dim for layer in self.hidden), self.out_X.shape[0])

    @property
    def nu(self) -> int:
        return len(self.hidden)

    @property
    def input_dim(self) -> int:
        return self.widths[0]

    @property
    def output_dim(self) -> int:
        return self.widths[-1]

    def arrays(self) -> list[np.ndarray]:
        out = []
        for layer in self.hidden:
            out += [layer.X, layer.Y, layer.s, layer.b]
        return out + [self.out_X, self.out_Y, self.out_b]

    def to_vector(self) -> np.ndarray:
        return np.concatenate([a.ravel() for a in self.arrays()])

    def with_vector(self, vec) -> "LipNetParams":
        vec = np.asarray(vec, dtype=float)
        parts, pos = [], 0
        for a in self.arrays():
            parts.append(vec[pos:pos + a.size].reshape(a.shape).copy())
            pos += a.size
        if pos != vec.size:
            raise ValueError(f"expected {pos} values, got {vec.size}")
        hidden = [SandwichParams(*parts[4 * i:4 * i + 4]) for i in range(self.nu)]
        return LipNetParams(self.gamma, hidden, *parts[4 * self.nu:])

    def copy(self) -> "LipNetParams":
        return self.with_vector(self.to_vector())

    # serialization

    def to_json(self) -> dict:
        def flat(a):
            return [float(v) for v in a.ravel()]

        return {
            "gamma": float(self.gamma),
            "widths": list(self.widths),
            "nu": self.nu,
            "layers": [
                {"X": flat(p.X), "Y": flat(p.Y), "s": flat(p.s), "b": flat(p.b)} for p in self.hidden
            ],
            "output": {"X": flat(self.out_X), "Y": flat(self.out_Y), "b": flat(self.out_b)},
        }

    @classmethod
    def from_json(cls, doc: dict) -> "LipNetParams":
        widths = [int(w) for w in doc["widths"]]
        nu = int(doc["nu"])
        if len(widths) != nu + 2 or len(doc["layers"]) != nu:
            raise ValueError("widths/nu/layers are inconsistent")
        hidden = []
        for (c, d), layer in zip(zip(widths[:-2], widths[1:-1]), doc["layers"]):
            hidden.append(SandwichParams(
                np.array(layer["X"], dtype=float).reshape(d, d),
                np.array(layer["Y"], dtype=float).reshape(c, d),
                np.array(layer["s"], dtype=float).reshape(d),
                np.array(layer["b"], dtype=float).reshape(d),
            ))
        c, n = widths[-2], widths[-1]
        out = doc["output"]
        return cls(
            float(doc["gamma"]),
            hidden,
            np.array(out["X"], dtype=float).reshape(n, n),
            np.array(out["Y"], dtype=float).reshape(c, n),
            np.array(out["b"], dtype=float).reshape(n),
        )

    def save(self, path) -> None:
        Path(path).write_text(json.dumps(self.to_json(), indent=1, sort_keys=True) + "\n", encoding="utf-8")

    @classmethod
    def load(cls, path) -> "LipNetParams":
        return cls.from_json(json.loads(Path(path).read_text(encoding="utf-8")))


class CayleyPair(NamedTuple):
    M: np.ndarray  # (d, d)
    N: np.ndarray  # (d, c)


def _cayley_parts(X, Y):
    d = X.shape[0]
    Z = X - X.T + Y.T @ Y
    G = mat_inverse(np.eye(d) + Z)
    M = (G @ (np.eye(d) - Z)).T
    N = (-2.0 * Y @ G).T
    return M, N, G, Z


def cayley(X, Y) -> CayleyPair:
    X = np.asarray(X, dtype=float)
    Y = np.asarray(Y, dtype=float)
    d = X.shape[0]
    if X.shape != (d, d) or Y.ndim != 2 or Y.shape[1] != d:
        raise ValueError(f"need X (d, d) and Y (c, d); got {X.shape} and {Y.shape}")
    M, N, _, _ = _cayley_parts(X, Y)
    return CayleyPair(M, N)


def _cayley_backward(dM, dN, Y, G, Z):
    """Pull (dM, dN) back to (dX, dY)."""
    d = G.shape[0]
    dK = dM.T              # K = G (I - Z), M = K^T
    dJ = -2.0 * dN.T       # J = Y G,       N = -2 J^T
    dG = dK @ (np.eye(d) - Z).T + Y.T @ dJ
    dZ = -G.T @ dK
    dY = dJ @ G.T
    dZ += -G.T @ dG @ G.T  # G = (I + Z)^-1
    dX = dZ - dZ.T
    dY += Y @ (dZ + dZ.T)
    return dX, dY


def sandwich_forward(p: SandwichParams, h, activation: Callable = relu) -> np.ndarray:
    """One 1-Lipschitz sandwich layer; ``h`` is (c,) or a (batch, c) array."""
    h = np.asarray(h, dtype=float)
    if h.shape[-1] != p.in_dim:
        raise ValueError(f"layer expects width {p.in_dim}, got {h.shape[-1]}")
    M, N = cayley(p.X, p.Y)
    pre = SQRT2 * (h @ N.T) * np.exp(-p.s) + p.b
    return SQRT2 * (activation(pre) * np.exp(p.s)) @ M


def forward(params: LipNetParams, z, activation: Callable = relu) -> np.ndarray:
    """Evaluate the network on ``z`` of shape (n_z,) or (batch, n_z).

    ``activation`` exists so tests can swap ReLU for the identity.
    """
    z = np.asarray(z, dtype=float)
    if z.shape[-1] != params.input_dim:
        raise ValueError(f"network expects input width {params.input_dim}, got {z.shape[-1]}")
    root = np.sqrt(params.gamma)
    h = root * z
    for layer in params.hidden:
        h = sandwich_forward(layer, h, activation)
    _, N = cayley(params.out_X, params.out_Y)
    return root * (h @ N.T) + params.out_b


def param_count(widths, nu: int) -> int:
    widths = list(widths)
    if len(widths) != nu + 2:
        raise ValueError(f"need nu + 2 = {nu + 2} widths, got {len(widths)}")
    total = sum(d * d + c * d + 2 * d for c, d in zip(widths[:nu], widths[1:nu + 1]))
    c, d = widths[-2], widths[-1]
    return total + d * d + c * d + d


def init_params(widths, nu: int, gamma: float, rng: np.random.Generator) -> LipNetParams:
    """X, Y ~ N(0, 1/fan_in); s = 0 (so Psi = I); b = 0."""
    widths = [int(w) for w in widths]
    if len(widths) != nu + 2:
        raise ValueError(f"need nu + 2 = {nu + 2} widths, got {len(widths)}")
    if not gamma > 0:
        raise ValueError("gamma must be positive")
    hidden = []
    for c, d in zip(widths[:-2], widths[1:-1]):
        scale = 1.0 / np.sqrt(c)
        X = scale * rng.standard_normal((d, d))
        Y = scale * rng.standard_normal((c, d))
        hidden.append(SandwichParams(X, Y, np.zeros(d), np.zeros(d)))
    c, n = widths[-2], widths[-1]
    scale = 1.0 / np.sqrt(c)
    X = scale * rng.standard_normal((n, n))
    Y = scale * rng.standard_normal((c, n))
    return LipNetParams(float(gamma), hidden, X, Y, np.zeros(n))


def zero_params(widths, nu: int, gamma: float = 1.0) -> LipNetParams:
    widths = [int(w) for w in widths]
    net = init_params(widths, nu, gamma, np.random.default_rng(0))
    return net.with_vector(np.zeros(param_count(widths, nu)))


def loss_and_grad(params: LipNetParams, z, x) -> tuple[float, LipNetParams]:
    """Mean squared error ``mean_i ||S(z_i) - x_i||^2`` and its exact gradient.

    The gradient comes back as a ``LipNetParams`` with the same layout.
    """
    z = np.atleast_2d(np.asarray(z, dtype=float))
    x = np.atleast_2d(np.asarray(x, dtype=float))
    if len(z) == 0 or len(z) != len(x):
        raise ValueError("batch must be nonempty with matching z/x rows")
    batch = len(z)
    root = np.sqrt(params.gamma)

    tape = []
    h = root * z
    for layer in params.hidden:
        M, N, G, Z = _cayley_parts(layer.X, layer.Y)
        es = np.exp(layer.s)
        q = h @ N.T
        pre = SQRT2 * q / es + layer.b
        act = relu(pre)
        u = act * es
        tape.append((h, M, N, G, Z, es, q, pre, act, u))
        h = SQRT2 * u @ M
    Mo, No, Go, Zo = _cayley_parts(params.out_X, params.out_Y)
    xhat = root * (h @ No.T) + params.out_b
    err = xhat - x
    loss = float(np.sum(err * err) / batch)

    dout = 2.0 * err / batch
    g_out_b = dout.sum(axis=0)
    dNo = root * dout.T @ h
    dh = root * dout @ No
    g_out_X, g_out_Y = _cayley_backward(np.zeros_like(Mo), dNo, params.out_Y, Go, Zo)

    grads = []
    for layer, (h_in, M, N, G, Z, es, q, pre, act, u) in zip(reversed(params.hidden), reversed(tape)):
        dM = SQRT2 * u.T @ dh
        du = SQRT2 * dh @ M.T
        dact = du * es
        ds = np.sum(du * act * es, axis=0)
        dpre = dact * (pre > 0)
        db = dpre.sum(axis=0)
        dq = SQRT2 * dpre / es
        ds -= np.sum(dpre * SQRT2 * q / es, axis=0)
        dN = dq.T @ h_in
        dh = dq @ N
        dX, dY = _cayley_backward(dM, dN, layer.Y, G, Z)
        grads.append(SandwichParams(dX, dY, ds, db))
    grads.reverse()
    return loss, LipNetParams(params.gamma, grads, g_out_X, g_out_Y, g_out_b)


def backward(params: LipNetParams, z, x) -> LipNetParams:
    return loss_and_grad(params, z, x)[1]


def certified_lipschitz_bound(params: LipNetParams) -> float:
    """``gamma * ||N_out||``: each sandwich layer contributes at most 1."""
    _, N = cayley(params.out_X, params.out_Y)
    return params.gamma * spectral_norm(N)


def naive_lipschitz_bound(params: LipNetParams) -> float:
    """Product of spectral norms of every linear factor, ReLU treated as 1-Lipschitz."""
    bound = params.gamma
    for layer in params.hidden:
        M, N = cayley(layer.X, layer.Y)
        es = np.exp(layer.s)
        bound *= spectral_norm(SQRT2 * (N / es[:, None])) * spectral_norm(SQRT2 * (M.T * es[None, :]))
    _, N = cayley(params.out_X, params.out_Y)
    return bound * spectral_norm(N)
