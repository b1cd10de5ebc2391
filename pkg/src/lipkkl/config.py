"""Run configuration: one JSON document, every field defaulted to the Lorenz case study."""
from __future__ import annotations

import json
from dataclasses import asdict, dataclass, field, fields
from pathlib import Path

import numpy as np

from .dynamics import SYSTEMS
from .observer import ObserverLTI
from .training import TrainConfig


class ConfigError(ValueError):
    pass


@dataclass
class ObserverSpec:
    A: list = field(default_factory=lambda: [-8.0, -4.0, -2.0, -1.0])  # diagonal, or a dense matrix
    B: list = field(default_factory=lambda: [1.0, 1.0, 1.0, 1.0])
    n_z: int | None = None
    dt: float = 0.01
    z0: list | None = None


@dataclass
class DataSpec:
    m: int = 2000
    t_burn: float = 20.0
    t_end: float = 500.0
    sigma: float = 0.0
    x0: list = field(default_factory=lambda: [1.0, 1.0, 1.0])


@dataclass
class TrainSpec:
    learning_rate: float = 1e-3
    epochs: int = 300
    batch_size: int = 64
    split_fraction: float = 0.8
    gamma: float = 10.0
    hidden: list = field(default_factory=lambda: [8, 8])
    momentum: float = 0.0


@dataclass
class AnalysisSpec:
    alpha: float = 0.05
    gammas: list = field(default_factory=lambda: [1.0, 3.0, 10.0, 30.0, 100.0, 300.0, 1000.0])
    sigmas_train: list = field(default_factory=lambda: [0.0, 1.0, 5.0, 10.0])
    sigmas_eval: list = field(default_factory=lambda: [0.1, 0.3, 1.0, 3.0])
    epsilon: float | None = None
    L_S: float | None = None
    L_T: float | None = None
    episode_length: float = 10.0
    workers: int = 1


@dataclass
class RunConfig:
    system: str = "lorenz"
    observer: ObserverSpec = field(default_factory=ObserverSpec)
    data: DataSpec = field(default_factory=DataSpec)
    train: TrainSpec = field(default_factory=TrainSpec)
    analysis: AnalysisSpec = field(default_factory=AnalysisSpec)
    seed: int = 0
    output_dir: str = "out"

    def to_json(self) -> dict:
        return asdict(self)

    def provenance(self) -> dict:
        """Config as embedded in outputs; output_dir is left out so reruns elsewhere match byte for byte."""
        doc = asdict(self)
        del doc["output_dir"]
        return doc

    def build_system(self):
        return SYSTEMS[self.system]()

    def build_observer(self) -> ObserverLTI:
        spec = self.observer
        A = np.asarray(spec.A, dtype=float)
        if A.ndim == 1:
            A = np.diag(A)
        try:
            obs = ObserverLTI(A=A, B=np.asarray(spec.B, dtype=float), z0=spec.z0, dt=spec.dt)
        except ValueError as exc:
            raise ConfigError(f"observer: {exc}") from exc
        if spec.n_z is not None and spec.n_z != obs.n_z:
            raise ConfigError(f"observer.n_z: {spec.n_z} does not match A of size {obs.n_z}")
        return obs

    def train_config(self) -> TrainConfig:
        t = self.train
        try:
            return TrainConfig(learning_rate=t.learning_rate, epochs=t.epochs, batch_size=t.batch_size,
                               split_fraction=t.split_fraction, seed=self.seed, gamma=t.gamma,
                               hidden=tuple(t.hidden), momentum=t.momentum)
        except ValueError as exc:
            raise ConfigError(f"train: {exc}") from exc


_SECTIONS = {"observer": ObserverSpec, "data": DataSpec, "train": TrainSpec, "analysis": AnalysisSpec}
_NUMERIC = {"int": int, "float": float}


def _coerce(value, annotation: str, path: str):
    kinds = [k.strip() for k in annotation.split("|")]
    if value is None:
        if "None" in kinds:
            return None
        raise ConfigError(f"{path}: may not be null")
    for kind in kinds:
        if kind == "int" and isinstance(value, int) and not isinstance(value, bool):
            return value
        if kind == "float" and isinstance(value, (int, float)) and not isinstance(value, bool):
            return float(value)
        if kind == "str" and isinstance(value, str):
            return value
        if kind == "list" and isinstance(value, list):
            return value
    raise ConfigError(f"{path}: expected {annotation}, got {type(value).__name__}")


def _fill(cls, doc, prefix: str):
    if not isinstance(doc, dict):
        raise ConfigError(f"{prefix or 'config'}: expected an object")
    known = {f.name: f for f in fields(cls)}
    unknown = sorted(set(doc) - set(known))
    if unknown:
        raise ConfigError(f"{prefix + '.' if prefix else ''}{unknown[0]}: unknown key")
    kwargs = {}
    for name, value in doc.items():
        path = f"{prefix}.{name}" if prefix else name
        if not prefix and name in _SECTIONS:
            kwargs[name] = _fill(_SECTIONS[name], value, path)
        else:
            kwargs[name] = _coerce(value, known[name].type, path)
    return cls(**kwargs)


def _validate(cfg: RunConfig) -> None:
    if cfg.system not in SYSTEMS:
        raise ConfigError(f"system: unknown system {cfg.system!r} (known: {', '.join(SYSTEMS)})")
    d = cfg.data
    if d.m < 1:
        raise ConfigError("data.m: must be >= 1")
    if d.sigma < 0:
        raise ConfigError("data.sigma: must be >= 0")
    if not 0 <= d.t_burn < d.t_end:
        raise ConfigError("data.t_burn: need 0 <= t_burn < t_end")
    if len(d.x0) != cfg.build_system().state_dim:
        raise ConfigError("data.x0: length does not match the system state dimension")
    a = cfg.analysis
    if not 0 < a.alpha < 1:
        raise ConfigError("analysis.alpha: must lie in (0, 1)")
    if a.episode_length <= 0:
        raise ConfigError("analysis.episode_length: must be positive")
    cfg.build_observer()
    cfg.train_config()


def parse_config(doc: dict | None = None) -> RunConfig:
    cfg = _fill(RunConfig, doc or {}, "")
    _validate(cfg)
    return cfg


def load_config(path=None, overrides: dict | None = None) -> RunConfig:
    """Read a JSON config (or defaults) and apply dotted-path overrides."""
    doc = {}
    if path is not None:
        try:
            doc = json.loads(Path(path).read_text(encoding="utf-8"))
        except json.JSONDecodeError as exc:
            raise ConfigError(f"{path}: invalid JSON ({exc})") from exc
    for dotted, value in (overrides or {}).items():
        node = doc
        parts = dotted.split(".")
        for part in parts[:-1]:
            node = node.setdefault(part, {})
            if not isinstance(node, dict):
                raise ConfigError(f"{dotted}: {part} is not a section")
        node[parts[-1]] = value
    return parse_config(doc)
