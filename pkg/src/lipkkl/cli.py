"""``lipkkl simulate | train | sweep | observe | bound``.

Exit codes: 0 success, 2 config error, 3 numeric divergence, 4 I/O error.
"""
from __future__ import annotations

import argparse
import json
import math
import sys
from pathlib import Path

import numpy as np

from .analysis import (BoundInputs, SweepData, default_epsilon, estimate_immersion_lipschitz,
                       generalization_bound, h2_norm, network_lipschitz, run_gamma_sweep, state_bound)
from .config import ConfigError, RunConfig, load_config
from .dynamics import DivergenceError, noisy_outputs, simulate
from .lipnet import LipNetParams, certified_lipschitz_bound, forward, param_count
from .observer import InsufficientGridError, PairedDataset, build_dataset, filter_outputs
from .numcore import make_rng
from .training import mse, split_for, train

EXIT_CONFIG, EXIT_DIVERGENCE, EXIT_IO = 2, 3, 4


def _write_json(path: Path, doc) -> None:
    path.write_text(json.dumps(doc, indent=2, sort_keys=True) + "\n", encoding="utf-8")


def _fmt(v: float) -> str:
    return repr(float(v))


def _outdir(cfg: RunConfig) -> Path:
    out = Path(cfg.output_dir)
    out.mkdir(parents=True, exist_ok=True)
    return out


def _dataset(cfg: RunConfig, sigma: float | None = None, traj=None) -> PairedDataset:
    d = cfg.data
    try:
        ds = build_dataset(cfg.build_system(), cfg.build_observer(), d.sigma if sigma is None else sigma,
                           d.m, d.t_burn, d.t_end, cfg.seed, x0=d.x0, traj=traj)
    except InsufficientGridError as exc:
        raise ConfigError(f"data.m: {exc}") from exc
    ds.meta["config"] = cfg.provenance()
    return ds


def _load_dataset(path, cfg: RunConfig) -> PairedDataset:
    ds = PairedDataset.from_files(path)
    n_z, n = cfg.build_observer().n_z, cfg.build_system().state_dim
    if ds.z.shape[1] != n_z or ds.x.shape[1] != n:
        raise ConfigError(f"dataset has n={ds.x.shape[1]}, n_z={ds.z.shape[1]}; config expects n={n}, n_z={n_z}")
    return ds


def _load_model(path, cfg: RunConfig) -> LipNetParams:
    net = LipNetParams.load(path)
    n_z, n = cfg.build_observer().n_z, cfg.build_system().state_dim
    if net.input_dim != n_z:
        raise ConfigError(f"observer.n_z: model input width {net.input_dim} does not match n_z={n_z}")
    if net.output_dim != n:
        raise ConfigError(f"system: model output width {net.output_dim} does not match state dimension {n}")
    return net


def cmd_simulate(cfg: RunConfig) -> dict:
    out = _outdir(cfg)
    d = cfg.data
    system, obs = cfg.build_system(), cfg.build_observer()
    traj = simulate(system, d.x0, obs.dt, d.t_end)
    ds = _dataset(cfg, traj=traj)
    traj.to_csv(out / "trajectory.csv")
    ds.to_files(out / "dataset.csv", out / "dataset.json")
    summary = {"m": len(ds), "t_min": float(ds.t.min()), "t_max": float(ds.t.max()), "sigma": d.sigma}
    print(f"dataset: m={summary['m']} t in [{summary['t_min']:g}, {summary['t_max']:g}] "
          f"(window ({d.t_burn:g}, {d.t_end:g}]) sigma={d.sigma:g}")
    return summary


def cmd_train(cfg: RunConfig, dataset_path) -> dict:
    out = _outdir(cfg)
    ds = _load_dataset(dataset_path, cfg)
    tcfg = cfg.train_config()
    net, hist = train(ds, tcfg)
    train_ds, _ = split_for(ds, tcfg)
    report = {
        "config": cfg.provenance(),
        "dataset_sigma": ds.sigma,
        "param_count": param_count(net.widths, net.nu),
        "widths": list(net.widths),
        "gamma": net.gamma,
        "train_loss": mse(net, train_ds),
        "val_loss": hist.val_loss,
        "emp_lipschitz": network_lipschitz(net, ds.z, seed=cfg.seed),
        "certified_lipschitz": certified_lipschitz_bound(net),
        "epochs": tcfg.epochs,
    }
    net.save(out / "model.json")
    hist.to_csv(out / "history.csv")
    _write_json(out / "report.json", report)
    print(f"trained {report['param_count']} parameters: train_loss={report['train_loss']:.6g} "
          f"val_loss={report['val_loss']:.6g} L_S>={report['emp_lipschitz']:.6g} (gamma={net.gamma:g}) "
          f"in {hist.wall_time:.1f}s")
    return report


def cmd_sweep(cfg: RunConfig) -> list:
    out = _outdir(cfg)
    a, d = cfg.analysis, cfg.data
    data = SweepData(cfg.build_system(), cfg.build_observer(), d.m, d.t_burn, d.t_end, cfg.seed, tuple(d.x0))
    try:
        res = run_gamma_sweep(a.gammas, a.sigmas_train, a.sigmas_eval, cfg.train_config(), data,
                              workers=a.workers)
    except InsufficientGridError as exc:
        raise ConfigError(f"data.m: {exc}") from exc
    res.to_csv(out / "sweep.csv")

    with open(out / "gamma_trend.csv", "w", encoding="utf-8", newline="") as fh:
        fh.write("log10_gamma,gamma,sigma_train,train_loss,val_loss,emp_lipschitz\n")
        for r in res.training_rows():
            if r.status == "ok":
                fh.write(",".join([_fmt(math.log10(r.gamma)), _fmt(r.gamma), _fmt(r.sigma_train),
                                   _fmt(r.train_loss), _fmt(r.val_loss), _fmt(r.emp_lipschitz)]) + "\n")
    with open(out / "noisy_eval.csv", "w", encoding="utf-8", newline="") as fh:
        fh.write("log10_gamma,gamma,sigma_eval,loss\n")
        for r in res.eval_rows():
            if r.status == "ok":
                fh.write(",".join([_fmt(math.log10(r.gamma)), _fmt(r.gamma), _fmt(r.sigma_eval),
                                   _fmt(r.val_loss)]) + "\n")
    models = out / "sweep_models"
    models.mkdir(exist_ok=True)
    for (g, s), net in res.models.items():
        net.save(models / f"model_gamma{g:g}_sigma{s:g}.json")
    _write_json(out / "sweep.json", {"config": cfg.provenance(), "columns": "see sweep.csv header"})
    failed = sum(r.status != "ok" for r in res.rows)
    print(f"sweep: {len(res.rows)} rows ({failed} failed) -> {out / 'sweep.csv'}")
    return res.rows


def cmd_observe(cfg: RunConfig, model_path, sigma_eval: float) -> Path:
    """Run the full observer over a fresh episode after the burn-in window."""
    out = _outdir(cfg)
    net = _load_model(model_path, cfg)
    system, obs = cfg.build_system(), cfg.build_observer()
    d, a = cfg.data, cfg.analysis
    traj = simulate(system, d.x0, obs.dt, d.t_burn + a.episode_length)
    y = noisy_outputs(traj, sigma_eval, make_rng([cfg.seed, 2000]))
    z = filter_outputs(obs, y)
    start = int(round(d.t_burn / obs.dt))
    xhat = forward(net, z[start:])
    t = traj.times[start:] - traj.times[start]
    path = out / f"observe_sigma{sigma_eval:g}.csv"
    n = system.state_dim
    with open(path, "w", encoding="utf-8", newline="") as fh:
        fh.write(",".join(["t", *(f"x{i + 1}" for i in range(n)), *(f"xhat{i + 1}" for i in range(n))]) + "\n")
        for k in range(len(t)):
            fh.write(",".join(_fmt(v) for v in (t[k], *traj.states[start + k], *xhat[k])) + "\n")
    err = xhat - traj.states[start:]
    mse_ep = float(np.mean(np.sum(err * err, axis=1)))
    _write_json(path.with_suffix(".json"), {"config": cfg.provenance(), "sigma_eval": sigma_eval,
                                            "model": str(model_path), "tracking_mse": mse_ep})
    print(f"observe: sigma_eval={sigma_eval:g} tracking_mse={mse_ep:.6g} -> {path}")
    return path


def cmd_bound(cfg: RunConfig, model_path, dataset_path) -> dict:
    out = _outdir(cfg)
    net = _load_model(model_path, cfg)
    ds = _load_dataset(dataset_path, cfg)
    if ds.sigma != cfg.data.sigma:
        raise ConfigError(f"data.sigma: requested {cfg.data.sigma:g} but dataset was built with {ds.sigma:g}")
    obs = cfg.build_observer()
    a = cfg.analysis
    clean = ds if ds.sigma == 0 else _dataset(cfg, sigma=0.0)
    t_burn = float(ds.meta.get("burn_in", cfg.data.t_burn))
    inputs = BoundInputs(
        h=h2_norm(obs.A, obs.B),
        sigma=ds.sigma,
        alpha=a.alpha,
        epsilon=default_epsilon(t_burn, clean.z) if a.epsilon is None else a.epsilon,
        D=state_bound(clean),
        m=len(ds),
        L_S=network_lipschitz(net, ds.z, seed=cfg.seed) if a.L_S is None else a.L_S,
        L_T=estimate_immersion_lipschitz(clean, seed=cfg.seed) if a.L_T is None else a.L_T,
        R_hat=mse(net, ds),
    )
    report = generalization_bound(inputs).to_json()
    report["config"] = cfg.provenance()
    _write_json(out / "bound.json", report)
    print(f"bound (as-estimated, confidence {1 - a.alpha:g}): R <= {report['bound']:.6g} "
          f"(R_hat={inputs.R_hat:.6g}, delta={report['delta']:.6g})")
    return report


def _parse_value(text: str):
    try:
        return json.loads(text)
    except json.JSONDecodeError:
        return text


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="lipkkl", description=__doc__.splitlines()[0])
    sub = parser.add_subparsers(dest="command", required=True)

    def common(p):
        p.add_argument("--config", help="JSON run configuration")
        p.add_argument("--set", action="append", default=[], metavar="PATH=VALUE",
                       help="override a config field by dotted path, e.g. train.epochs=50")
        p.add_argument("--seed", type=int)
        p.add_argument("--sigma", type=float, help="data.sigma")
        p.add_argument("--m", type=int, help="data.m")
        p.add_argument("--gamma", type=float, help="train.gamma")
        p.add_argument("--epochs", type=int, help="train.epochs")
        p.add_argument("--out", help="output_dir")
        return p

    common(sub.add_parser("simulate", help="simulate plant + observer and sample a dataset"))
    p = common(sub.add_parser("train", help="train a Lipschitz-bounded inverse immersion"))
    p.add_argument("--dataset", help="dataset CSV (default: <out>/dataset.csv)")
    common(sub.add_parser("sweep", help="gamma x sigma sweep"))
    p = common(sub.add_parser("observe", help="run a trained observer on a fresh noisy episode"))
    p.add_argument("--model", help="model JSON (default: <out>/model.json)")
    p.add_argument("--sigma-eval", type=float, required=True)
    p = common(sub.add_parser("bound", help="evaluate the generalization bound"))
    p.add_argument("--model", help="model JSON (default: <out>/model.json)")
    p.add_argument("--dataset", help="dataset CSV (default: <out>/dataset.csv)")
    return parser


_FLAG_PATHS = {"seed": "seed", "sigma": "data.sigma", "m": "data.m", "gamma": "train.gamma",
               "epochs": "train.epochs", "out": "output_dir"}


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        overrides = {}
        for item in args.set:
            if "=" not in item:
                raise ConfigError(f"--set {item}: expected PATH=VALUE")
            key, value = item.split("=", 1)
            overrides[key] = _parse_value(value)
        for flag, path in _FLAG_PATHS.items():
            if getattr(args, flag) is not None:
                overrides[path] = getattr(args, flag)
        cfg = load_config(args.config, overrides)
        out = Path(cfg.output_dir)
        if args.command == "simulate":
            cmd_simulate(cfg)
        elif args.command == "train":
            cmd_train(cfg, args.dataset or out / "dataset.csv")
        elif args.command == "sweep":
            cmd_sweep(cfg)
        elif args.command == "observe":
            cmd_observe(cfg, args.model or out / "model.json", args.sigma_eval)
        elif args.command == "bound":
            cmd_bound(cfg, args.model or out / "model.json", args.dataset or out / "dataset.csv")
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except DivergenceError as exc:
        print(f"numeric divergence: {exc}", file=sys.stderr)
        return EXIT_DIVERGENCE
    except OSError as exc:
        print(f"I/O error: {exc}", file=sys.stderr)
        return EXIT_IO
    return 0


if __name__ == "__main__":
    sys.exit(main())
