import csv
import json
import math
import subprocess
import sys

import numpy as np
import pytest

from lipkkl.analysis import SWEEP_COLUMNS
from lipkkl.cli import main
from lipkkl.config import ConfigError, load_config, parse_config
from lipkkl.lipnet import init_params, zero_params
from lipkkl.numcore import make_rng
from lipkkl.observer import PairedDataset
from lipkkl.training import mse, split_for

SMALL = ["--set", "data.t_end=60", "--m", "400", "--epochs", "5"]


def run(*args):
    return main([str(a) for a in args])


def read_csv(path):
    with open(path, newline="", encoding="utf-8") as fh:
        return list(csv.reader(fh))


@pytest.fixture(scope="module")
def trained(tmp_path_factory):
    out = tmp_path_factory.mktemp("trained")
    args = ["--out", out, "--set", "data.t_end=120", "--m", "1000", "--epochs", "40", "--gamma", "10"]
    assert run("simulate", *args) == 0
    assert run("train", *args) == 0
    return out, args


class TestConfig:
    def test_defaults(self):
        cfg = parse_config()
        assert cfg.data.m == 2000 and cfg.data.t_burn == 20.0 and cfg.data.t_end == 500.0
        assert cfg.train.hidden == [8, 8] and cfg.train.learning_rate == 1e-3 and cfg.observer.dt == 0.01
        assert np.array_equal(cfg.build_observer().A, -np.diag([8.0, 4.0, 2.0, 1.0]))

    def test_unknown_key(self):
        with pytest.raises(ConfigError, match=r"train\.lr"):
            parse_config({"train": {"lr": 0.1}})

    def test_wrong_type_names_path(self):
        with pytest.raises(ConfigError, match=r"data\.m"):
            parse_config({"data": {"m": "many"}})

    def test_n_z_mismatch(self):
        with pytest.raises(ConfigError, match=r"observer\.n_z"):
            parse_config({"observer": {"n_z": 3}})

    def test_non_hurwitz(self):
        with pytest.raises(ConfigError, match="observer"):
            parse_config({"observer": {"A": [-1.0, 0.5], "B": [1.0, 1.0]}})

    def test_file_and_overrides(self, tmp_path):
        path = tmp_path / "c.json"
        path.write_text(json.dumps({"seed": 3, "train": {"gamma": 30}}))
        cfg = load_config(path, {"train.gamma": 100.0, "data.sigma": 1.0})
        assert (cfg.seed, cfg.train.gamma, cfg.data.sigma) == (3, 100.0, 1.0)

    def test_round_trip(self):
        cfg = parse_config({"seed": 5, "analysis": {"gammas": [1.0, 2.0]}})
        assert parse_config(cfg.to_json()) == cfg


class TestSimulate:
    def test_default_window(self, tmp_path):
        assert run("simulate", "--out", tmp_path) == 0
        ds = PairedDataset.from_files(tmp_path / "dataset.csv")
        assert len(ds) == 2000 and ds.t.min() > 20.0 and ds.t.max() <= 500.0
        traj = read_csv(tmp_path / "trajectory.csv")
        assert traj[0] == ["t", "x1", "x2", "x3", "y"] and len(traj) == 50_002

    def test_byte_identical(self, tmp_path):
        for d in ("a", "b"):
            assert run("simulate", "--sigma", 0, "--seed", 7, "--out", tmp_path / d, *SMALL) == 0
        for name in ("dataset.csv", "dataset.json", "trajectory.csv"):
            assert (tmp_path / "a" / name).read_bytes() == (tmp_path / "b" / name).read_bytes()

    def test_metadata_embeds_config(self, tmp_path):
        run("simulate", "--seed", 4, "--out", tmp_path, *SMALL)
        meta = json.loads((tmp_path / "dataset.json").read_text())
        assert meta["config"]["seed"] == 4 and meta["seed"] == 4 and meta["config"]["data"]["m"] == 400

    def test_grid_guard(self, tmp_path, capsys):
        assert run("simulate", "--m", 10_000_000, "--out", tmp_path) == 2
        assert "48000" in capsys.readouterr().err

    def test_bad_override(self, tmp_path, capsys):
        assert run("simulate", "--set", "data.nope=1", "--out", tmp_path) == 2
        assert "data.nope" in capsys.readouterr().err


class TestTrain:
    def test_report(self, trained):
        out, _ = trained
        rep = json.loads((out / "report.json").read_text())
        assert rep["param_count"] == 292
        assert rep["emp_lipschitz"] <= 10 * (1 + 1e-6)
        assert rep["config"]["train"]["gamma"] == 10.0
        assert read_csv(out / "history.csv")[0] == ["epoch", "train_loss"]
        assert len(read_csv(out / "history.csv")) == 41

    def test_train_loss_self_consistent(self, trained):
        out, args = trained
        rep = json.loads((out / "report.json").read_text())
        from lipkkl.lipnet import LipNetParams
        net = LipNetParams.load(out / "model.json")
        cfg = load_config(None, {"train.epochs": 40, "train.gamma": 10.0})
        train_ds, _ = split_for(PairedDataset.from_files(out / "dataset.csv"), cfg.train_config())
        assert rep["train_loss"] == mse(net, train_ds)

    def test_byte_identical(self, tmp_path):
        run("simulate", "--out", tmp_path, *SMALL)
        for d in ("a", "b"):
            assert run("train", "--dataset", tmp_path / "dataset.csv", "--out", tmp_path / d, *SMALL) == 0
        for name in ("model.json", "history.csv", "report.json"):
            assert (tmp_path / "a" / name).read_bytes() == (tmp_path / "b" / name).read_bytes()

    def test_dimension_mismatch(self, tmp_path, capsys):
        run("simulate", "--out", tmp_path, *SMALL)
        rc = run("train", "--out", tmp_path, *SMALL, "--set", "observer.A=[-1,-2,-3]", "--set", "observer.B=[1,1,1]")
        assert rc == 2 and "n_z" in capsys.readouterr().err

    def test_divergence_exit(self, tmp_path):
        run("simulate", "--out", tmp_path, *SMALL)
        with np.errstate(all="ignore"):
            assert run("train", "--out", tmp_path, *SMALL, "--set", "train.learning_rate=1e300") == 3

    def test_missing_dataset(self, tmp_path):
        assert run("train", "--out", tmp_path / "empty", *SMALL) == 4


class TestSweep:
    def test_singleton(self, tmp_path):
        rc = run("sweep", "--out", tmp_path, *SMALL, "--set", "analysis.gammas=[10]",
                 "--set", "analysis.sigmas_train=[0]", "--set", "analysis.sigmas_eval=[]")
        assert rc == 0
        rows = read_csv(tmp_path / "sweep.csv")
        assert rows[0] == SWEEP_COLUMNS and len(rows) == 2
        trend = read_csv(tmp_path / "gamma_trend.csv")
        assert len(trend) == 2 and float(trend[1][0]) == pytest.approx(1.0)
        assert json.loads((tmp_path / "sweep.json").read_text())["config"]["analysis"]["gammas"] == [10.0]

    def test_grid_rows_and_determinism(self, tmp_path):
        grid = ["--set", "analysis.gammas=[1,10]", "--set", "analysis.sigmas_train=[0,5]",
                "--set", "analysis.sigmas_eval=[3]", "--set", "analysis.workers=2"]
        for d in ("a", "b"):
            assert run("sweep", "--out", tmp_path / d, *SMALL, *grid) == 0
        for name in ("sweep.csv", "gamma_trend.csv", "noisy_eval.csv", "sweep.json"):
            assert (tmp_path / "a" / name).read_bytes() == (tmp_path / "b" / name).read_bytes()
        rows = read_csv(tmp_path / "a" / "sweep.csv")[1:]
        assert [(r[0], r[1]) for r in rows if r[2] == ""] == [("1.0", "0.0"), ("1.0", "5.0"),
                                                              ("10.0", "0.0"), ("10.0", "5.0")]
        assert len(rows) == 6 and len(read_csv(tmp_path / "a" / "noisy_eval.csv")) == 3

    def test_error_rows(self, tmp_path):
        with np.errstate(all="ignore"):
            rc = run("sweep", "--out", tmp_path, *SMALL, "--set", "analysis.gammas=[10]",
                     "--set", "analysis.sigmas_train=[0]", "--set", "analysis.sigmas_eval=[]",
                     "--set", "train.learning_rate=1e300")
        assert rc == 0
        assert read_csv(tmp_path / "sweep.csv")[1][7].startswith("error")


class TestObserve:
    def test_rows_and_tracking(self, trained):
        out, args = trained
        for s in (0.1, 3.0):
            assert run("observe", *args, "--sigma-eval", s) == 0
        rows = read_csv(out / "observe_sigma0.1.csv")
        assert rows[0] == ["t", "x1", "x2", "x3", "xhat1", "xhat2", "xhat3"] and len(rows) - 1 == 1001
        lo = json.loads((out / "observe_sigma0.1.json").read_text())["tracking_mse"]
        hi = json.loads((out / "observe_sigma3.json").read_text())["tracking_mse"]
        assert lo < hi

    def test_zero_model(self, tmp_path):
        zero_params((4, 8, 8, 3), 2, 10.0).save(tmp_path / "zero.json")
        assert run("observe", "--out", tmp_path, "--model", tmp_path / "zero.json", "--sigma-eval", 1.0) == 0
        xhat = np.array([[float(v) for v in r[4:]] for r in read_csv(tmp_path / "observe_sigma1.csv")[1:]])
        assert np.all(xhat == 0)

    def test_n_z_mismatch(self, tmp_path, capsys):
        init_params((3, 8, 8, 3), 2, 10.0, make_rng(0)).save(tmp_path / "m.json")
        assert run("observe", "--out", tmp_path, "--model", tmp_path / "m.json", "--sigma-eval", 1.0) == 2
        assert "n_z" in capsys.readouterr().err


class TestBound:
    def test_component_isolation(self, trained):
        out, args = trained
        assert run("bound", *args, "--set", "analysis.epsilon=0", "--set", "analysis.L_S=0",
                   "--set", "analysis.L_T=0") == 0
        rep = json.loads((out / "bound.json").read_text())
        c = rep["components"]
        assert c["hoeffding"] > 0 and c["noise_quadratic"] == c["noise_linear"] == c["transient"] == 0
        assert rep["bound"] == pytest.approx(rep["inputs"]["R_hat"] + rep["delta"], rel=1e-15)
        assert list(rep) == sorted(rep)

    def test_default_bookkeeping(self, trained):
        out, args = trained
        assert run("bound", *args) == 0
        rep = json.loads((out / "bound.json").read_text())
        assert rep["delta"] == math.fsum(rep["components"].values())
        assert rep["bound"] >= rep["inputs"]["R_hat"]
        assert rep["inputs"]["L_S"] <= 10 * (1 + 1e-6) and rep["inputs"]["L_T"] > 0
        assert rep["inputs"]["h"] == pytest.approx(math.sqrt(0.9375), abs=1e-9)

    def test_alpha_monotone(self, trained):
        out, args = trained
        bounds = {}
        for alpha in (0.05, 0.01):
            assert run("bound", *args, "--set", f"analysis.alpha={alpha}") == 0
            bounds[alpha] = json.loads((out / "bound.json").read_text())["bound"]
        assert bounds[0.01] > bounds[0.05]

    def test_sigma_mismatch_refused(self, trained, capsys):
        _, args = trained
        assert run("bound", *args, "--sigma", 1.0) == 2
        assert "sigma" in capsys.readouterr().err


def test_module_entry_point(tmp_path):
    proc = subprocess.run([sys.executable, "-m", "lipkkl", "simulate", "--out", str(tmp_path), *map(str, SMALL)],
                          capture_output=True, text=True)
    assert proc.returncode == 0 and "m=400" in proc.stdout
