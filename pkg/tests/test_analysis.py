import csv
import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st
from scipy.linalg import expm

from lipkkl.analysis import (BoundInputs, SweepData, delta_components, delta_term, empirical_lipschitz,
                             estimate_immersion_lipschitz, generalization_bound, h2_norm, lipschitz_probes,
                             network_lipschitz, run_gamma_sweep)
from lipkkl.dynamics import lorenz_system, simulate
from lipkkl.lipnet import forward, init_params, naive_lipschitz_bound
from lipkkl.numcore import make_rng
from lipkkl.observer import PairedDataset, build_dataset, default_observer
from lipkkl.training import TrainConfig

H_DEFAULT = math.sqrt(0.9375)
HOEFFDING_2000 = math.sqrt(math.log(80.0) / 4000.0)  # 0.0330984...


def inputs(**kw):
    base = dict(h=0.0, sigma=0.0, alpha=0.05, epsilon=0.0, D=1.0, m=2000, L_S=0.0, L_T=0.0, R_hat=0.0)
    base.update(kw)
    return BoundInputs(**base)


def monte_carlo_h2(A, B, n=100_000, horizon=20.0, step=0.5, seed=0):
    """sqrt(E||z||^2) for dz = Az dt + B dW, from independent chains started at 0.

    Exact discretization through Van Loan's block exponential, so no
    Lyapunov solve is involved.
    """
    nz = A.shape[0]
    BBt = B @ B.T
    block = np.block([[-A, BBt], [np.zeros((nz, nz)), A.T]]) * step
    F = expm(block)
    phi = F[nz:, nz:].T
    Q = phi @ F[:nz, nz:]
    L = np.linalg.cholesky(0.5 * (Q + Q.T))
    rng = np.random.default_rng(seed)
    z = np.zeros((n, nz))
    for _ in range(int(round(horizon / step))):
        z = z @ phi.T + rng.standard_normal((n, nz)) @ L.T
    sq = np.sum(z * z, axis=1)
    est = math.sqrt(sq.mean())
    se = sq.std(ddof=1) / math.sqrt(n) / (2 * est)
    return est, se


class TestH2:
    def test_scalar(self):
        assert h2_norm([[-1.0]], [1.0]) == pytest.approx(math.sqrt(0.5), abs=1e-12)

    def test_default_observer(self):
        obs = default_observer()
        assert h2_norm(obs.A, obs.B) == pytest.approx(H_DEFAULT, abs=1e-9)

    def test_zero_input(self):
        assert h2_norm(-np.eye(3), np.zeros(3)) == 0.0

    def test_monte_carlo(self):
        obs = default_observer()
        est, se = monte_carlo_h2(obs.A, obs.B)
        assert abs(est - h2_norm(obs.A, obs.B)) <= 3 * se

    def test_monte_carlo_dense(self):
        A = np.array([[-1.0, 2.0], [-0.5, -3.0]])
        B = np.array([[1.0], [-2.0]])
        est, se = monte_carlo_h2(A, B, seed=1)
        assert abs(est - h2_norm(A, B)) <= 3 * se


class TestEmpiricalLipschitz:
    def test_identity(self):
        probes = lipschitz_probes(np.random.default_rng(0).standard_normal((50, 3)), make_rng(0), n_box=100)
        assert empirical_lipschitz(lambda v: v, probes) == pytest.approx(1.0, rel=1e-9)

    def test_scaled(self):
        probes = lipschitz_probes(np.random.default_rng(0).standard_normal((50, 3)), make_rng(0), n_box=100)
        assert empirical_lipschitz(lambda v: 2 * v, probes) == pytest.approx(2.0, rel=1e-9)

    @pytest.mark.parametrize("gamma", [0.5, 10.0, 300.0])
    def test_network_below_gamma(self, gamma):
        net = init_params((4, 8, 8, 3), 2, gamma, make_rng(1))
        net = net.with_vector(net.to_vector() + np.random.default_rng(2).standard_normal(292))
        z = 5 * np.random.default_rng(3).standard_normal((500, 4))
        lip = network_lipschitz(net, z)
        assert lip <= gamma * (1 + 1e-6)
        assert lip <= naive_lipschitz_bound(net) * (1 + 1e-9)

    def test_degenerate_probes(self):
        with pytest.raises(ValueError):
            empirical_lipschitz(lambda v: v, (np.ones((2, 2)), np.ones((2, 2))))


@pytest.fixture(scope="module")
def lorenz_traj():
    return simulate(lorenz_system(), (1.0, 1.0, 1.0), 0.01, 500.0)


class TestImmersionLipschitz:
    def test_linear(self):
        x = np.random.default_rng(0).standard_normal((300, 3))
        assert estimate_immersion_lipschitz(PairedDataset(np.arange(300.0), x, 2 * x, {"sigma": 0.0})) == \
            pytest.approx(2.0, rel=1e-12)

    def test_constant(self):
        x = np.random.default_rng(0).standard_normal((300, 3))
        ds = PairedDataset(np.arange(300.0), x, np.ones((300, 4)), {"sigma": 0.0})
        assert estimate_immersion_lipschitz(ds) == 0.0

    def test_rejects_noisy(self):
        x = np.zeros((3, 1))
        with pytest.raises(ValueError, match="noiseless"):
            estimate_immersion_lipschitz(PairedDataset(np.arange(3.0), x, x, {"sigma": 0.5}))

    def test_subsampling(self):
        x = np.random.default_rng(1).standard_normal((200, 2))
        ds = PairedDataset(np.arange(200.0), x, 3 * x, {"sigma": 0.0})
        assert estimate_immersion_lipschitz(ds, max_pairs=500) == pytest.approx(3.0, rel=1e-12)

    def test_lorenz_finite_positive(self, lorenz_traj):
        ds = build_dataset(lorenz_system(), default_observer(), 0.0, 2000, 20.0, 500.0, seed=0, traj=lorenz_traj)
        assert 0 < estimate_immersion_lipschitz(ds) < np.inf

    @pytest.mark.xfail(strict=True, reason=(
        "the raw max quotient is set by the closest sampled pair and scales like 1/||dx|| on the "
        "Lorenz attractor, so it is not stable across samples (observed 85-383 over seeds 0-3)"))
    def test_lorenz_stable_across_seeds(self, lorenz_traj):
        vals = [estimate_immersion_lipschitz(build_dataset(lorenz_system(), default_observer(), 0.0, 2000, 20.0,
                                                           500.0, seed=s, traj=lorenz_traj)) for s in (0, 1)]
        assert abs(vals[0] - vals[1]) <= 0.1 * max(vals)

    def test_lorenz_separated_pairs_stable(self, lorenz_traj):
        vals = [estimate_immersion_lipschitz(build_dataset(lorenz_system(), default_observer(), 0.0, 2000, 20.0,
                                                           500.0, seed=s, traj=lorenz_traj), min_separation=0.1)
                for s in (0, 1, 2, 3)]
        assert max(vals) - min(vals) <= 0.1 * max(vals)


class TestDelta:
    def test_hoeffding_only(self):
        assert delta_term(inputs()) == pytest.approx(HOEFFDING_2000, abs=1e-12)
        assert delta_term(inputs()) == pytest.approx(0.0330984, abs=1e-6)

    def test_all_vanish(self):
        assert delta_term(inputs(D=0.0)) == 0.0

    def test_default_observer_unit_noise(self):
        expected = HOEFFDING_2000 + 0.9375 / 0.975 + H_DEFAULT / math.sqrt(0.975)
        value = delta_term(inputs(h=H_DEFAULT, sigma=1.0))
        assert value == pytest.approx(expected, abs=1e-12)
        assert value == pytest.approx(1.975, abs=1e-3)

    def test_components_by_hand(self):
        c = delta_components(inputs(h=0.5, sigma=2.0, epsilon=0.1, D=3.0, m=50, alpha=0.2))
        a = 0.9
        assert c["hoeffding"] == pytest.approx(9.0 * math.sqrt(math.log(20.0) / 100.0), rel=1e-14)
        assert c["noise_quadratic"] == pytest.approx(1.0 / a, rel=1e-14)
        assert c["noise_linear"] == pytest.approx(3.2 * 1.0 / math.sqrt(a), rel=1e-14)
        assert c["transient"] == pytest.approx(3.1 * 0.1, rel=1e-14)

    @pytest.mark.parametrize("alpha", [0.0, 1.0, -0.1, 1.5])
    def test_alpha_domain(self, alpha):
        with pytest.raises(ValueError):
            inputs(alpha=alpha)

    @settings(max_examples=200, deadline=None)
    @given(st.sampled_from(["sigma", "epsilon", "D", "h"]),
           st.floats(0, 10), st.floats(0, 10), st.floats(0, 1), st.floats(0, 10), st.floats(0, 5),
           st.floats(0.001, 0.999), st.integers(1, 10_000))
    def test_monotone(self, name, bump, sigma, eps, D, h, alpha, m):
        lo = inputs(sigma=sigma, epsilon=eps, D=D, h=h, alpha=alpha, m=m)
        hi = inputs(**{**lo.__dict__, name: getattr(lo, name) + bump})
        assert delta_term(hi) >= delta_term(lo)


class TestBound:
    def test_unit_factor(self):
        rep = generalization_bound(inputs(R_hat=0.3))
        assert rep.bound == pytest.approx(0.3 + rep.delta, rel=1e-15)

    def test_degenerate(self):
        assert generalization_bound(inputs(D=0.0)).bound == 0.0

    def test_arithmetic(self):
        # Delta = 0.1 through the transient term alone: (D + eps) eps with D = 0, eps = sqrt(0.1)
        inp = inputs(D=0.0, epsilon=math.sqrt(0.1), L_S=10.0, L_T=2.0, R_hat=0.5)
        rep = generalization_bound(inp)
        assert rep.delta == pytest.approx(0.1, rel=1e-14)
        assert rep.bound == pytest.approx(44.6, rel=1e-12)

    def test_report_bookkeeping(self):
        rep = generalization_bound(inputs(h=1.0, sigma=0.4, epsilon=0.01, D=5.0, L_S=3.0, L_T=1.5, R_hat=0.2))
        assert set(rep.components) == {"hoeffding", "noise_quadratic", "noise_linear", "transient"}
        assert rep.delta == math.fsum(rep.components.values())
        doc = rep.to_json()
        assert doc["inputs"]["L_T"] == 1.5 and any("Markov" in n for n in doc["notes"])

    @settings(max_examples=100, deadline=None)
    @given(st.floats(0, 100), st.floats(0, 10), st.floats(0, 10), st.floats(0, 10), st.floats(0, 100))
    def test_never_below_empirical(self, r_hat, sigma, D, L_S, L_T):
        rep = generalization_bound(inputs(R_hat=r_hat, sigma=sigma, D=D, L_S=L_S, L_T=L_T, h=1.0))
        assert rep.bound >= r_hat


@pytest.fixture(scope="module")
def small_data():
    return SweepData(lorenz_system(), default_observer(), m=300, t_burn=20.0, t_end=60.0)


class TestSweep:
    def test_singleton(self, small_data, tmp_path):
        res = run_gamma_sweep([10.0], [0.0], [0.0], TrainConfig(epochs=2), small_data)
        assert len(res.training_rows()) == 1 and len(res.eval_rows()) == 1
        res.to_csv(tmp_path / "s.csv")
        with open(tmp_path / "s.csv", newline="") as fh:
            rows = list(csv.reader(fh))
        assert rows[0][:7] == ["gamma", "sigma_train", "sigma_eval", "train_loss", "val_loss", "emp_lipschitz", "seed"]
        assert len(rows) == 3

    def test_grid_order_and_workers(self, small_data):
        args = ([1.0, 10.0], [0.0, 2.0], [1.0], TrainConfig(epochs=2))
        serial = run_gamma_sweep(*args, small_data)
        parallel = run_gamma_sweep(*args, small_data, workers=3)
        assert [r.as_list() for r in serial.rows] == [r.as_list() for r in parallel.rows]
        assert [(r.gamma, r.sigma_train) for r in serial.training_rows()] == [(1.0, 0.0), (1.0, 2.0),
                                                                               (10.0, 0.0), (10.0, 2.0)]
        assert all(r.emp_lipschitz <= r.gamma * (1 + 1e-6) for r in serial.rows)

    def test_failed_cell_is_recorded(self, small_data):
        res = run_gamma_sweep([1.0], [0.0], [1.0], TrainConfig(epochs=1, learning_rate=1e300), small_data)
        assert res.rows[0].status.startswith("error")
        assert res.eval_rows()[0].status.startswith("error")

    def test_eval_uses_fresh_noise(self, small_data):
        res = run_gamma_sweep([10.0], [0.0], [0.0, 3.0], TrainConfig(epochs=2), small_data)
        clean, noisy = res.eval_rows()
        assert clean.seed != small_data.data_seed and noisy.val_loss != clean.val_loss
