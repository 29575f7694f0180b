"""Experiment configuration: TOML parsing, validation, and serialization.

A configuration file has four sections -- ``[objective]``, ``[algorithm]``,
``[noise]``, and ``[run]`` -- and resolves to a :class:`SimulationConfig`.
Serialization is canonical (fixed section and key order, floats at full
precision), so ``serialize(parse(text))`` is semantically idempotent and
the SHA-256 of the canonical form identifies the experiment.
"""

from __future__ import annotations

import hashlib
import math
from dataclasses import dataclass, field, fields
from pathlib import Path

import numpy as np

try:
    import tomllib
except ModuleNotFoundError:  # Python < 3.11
    import tomli as tomllib

from .dynamics import AlgorithmKind, MOMENTUM_KINDS
from .objectives import DoubleWell, NdLoss, Objective, Quadratic
from .stochastic import (
    AdditiveGaussian,
    AdditiveUniform,
    ConstantMatrix,
    NoiseModel,
    NoNoise,
    scale_amplitude,
)

SCHEMA_VERSION = 1


class ConfigError(ValueError):
    """Invalid or inconsistent experiment configuration."""


@dataclass
class SimulationConfig:
    """Fully resolved experiment description."""

    # objective
    objective_kind: str = "double_well"
    f_const: float = 150.0
    dimension: int = 1
    h_diag: list[float] | None = None
    h_file: str | None = None

    # algorithm
    algorithm: AlgorithmKind = AlgorithmKind.QSGD
    k: float = 0.0
    delta: float = 0.9
    schedule: str = "constant"  # constant | time_ramp | wta
    k0: float = 0.0
    k1: float = 0.0
    ramp_steps: int = 0
    wta_m: float = 10.0
    wta_t_f: float = 0.0
    wta_tau: float = 0.0
    epoch_len: int = 0
    sd_momentum: bool = False
    filter: str = "linear"
    filter_gain: float = 1.0
    eta_quorum: float | None = None
    integrator: str = "discrete"  # discrete | euler_maruyama
    dt: float = 0.01

    # noise
    noise_kind: str = "none"  # none | uniform | gaussian | matrix
    half_width: float = 1.5
    sigma: float = 1.0
    matrix_file: str | None = None
    batch_size: float = 1.0

    # run
    agents: int = 1
    iterations: int = 1
    eta: float | list[float] = 0.1
    init: str = "uniform"  # uniform | point
    init_low: float = -3.0
    init_high: float = 3.0
    init_point: list[float] = field(default_factory=list)
    lr_schedule: bool = False
    lr_check_stride: int = 100
    record_stride: int = 100
    record_full: bool = False
    master_seed: int = 0
    runs: int = 1
    ema_quorum: bool = True

    base_dir: Path | None = None  # directory for resolving referenced files

    def validate(self):
        try:
            self.algorithm = AlgorithmKind(self.algorithm)
        except ValueError as exc:
            raise ConfigError(str(exc)) from None
        if self.objective_kind not in ("double_well", "nd_loss", "quadratic"):
            raise ConfigError(f"unknown objective kind {self.objective_kind!r}")
        if self.f_const <= 0:
            raise ConfigError("stability constant must be positive")
        if self.dimension < 1:
            raise ConfigError("dimension must be at least 1")
        if self.objective_kind == "quadratic" and not self.h_diag and not self.h_file:
            raise ConfigError("quadratic objective needs h_diag or h_file")
        if self.h_file is not None:
            path = self._resolve(self.h_file)
            if not path.is_file():
                raise ConfigError(f"matrix file not found: {path}")
        if self.noise_kind not in ("none", "uniform", "gaussian", "matrix"):
            raise ConfigError(f"unknown noise kind {self.noise_kind!r}")
        if self.noise_kind == "matrix":
            if not self.matrix_file:
                raise ConfigError("matrix noise needs matrix_file")
            path = self._resolve(self.matrix_file)
            if not path.is_file():
                raise ConfigError(f"matrix file not found: {path}")
        if self.batch_size < 1:
            raise ConfigError("batch size must be at least 1")
        if self.agents < 1:
            raise ConfigError("need at least one agent")
        if self.iterations < 1:
            raise ConfigError("need at least one iteration")
        if self.runs < 1:
            raise ConfigError("need at least one run")
        if self.record_stride < 1 or self.lr_check_stride < 1:
            raise ConfigError("strides must be positive")
        etas = self.eta_vector()
        if np.any(etas <= 0):
            raise ConfigError("learning rates must be positive")
        if self.init == "uniform":
            if not self.init_high > self.init_low:
                raise ConfigError("initialization box is empty")
        elif self.init == "point":
            if len(self.init_point) != self.dimension:
                raise ConfigError("init_point must match the objective dimension")
        else:
            raise ConfigError(f"unknown init {self.init!r}")
        if self.algorithm in MOMENTUM_KINDS and not 0.0 <= self.delta < 1.0:
            raise ConfigError("momentum coefficient must lie in [0, 1)")
        if self.schedule not in ("constant", "time_ramp", "wta"):
            raise ConfigError(f"unknown schedule {self.schedule!r}")
        if self.algorithm is AlgorithmKind.SD_QSGD and self.schedule == "wta":
            if self.epoch_len < 1:
                raise ConfigError("winner-take-all schedule needs epoch_len >= 1")
            if self.wta_t_f <= 0 or self.wta_tau <= 0:
                raise ConfigError("winner-take-all schedule needs positive t_f and tau")
            if self.wta_t_f > self.epoch_len:
                raise ConfigError("spike duration cannot exceed the epoch")
        if self.integrator not in ("discrete", "euler_maruyama"):
            raise ConfigError(f"unknown integrator {self.integrator!r}")
        if self.integrator == "euler_maruyama":
            if self.dt <= 0:
                raise ConfigError("dt must be positive")
            if not np.allclose(etas, etas[0]):
                raise ConfigError("the continuous integrator uses a single learning rate")
            supported = (AlgorithmKind.SGD, AlgorithmKind.QSGD, AlgorithmKind.EASGD)
            if self.algorithm not in supported:
                raise ConfigError(
                    "the continuous integrator supports only the sgd, qsgd, "
                    "and easgd drift kinds"
                )
        if self.k < 0:
            raise ConfigError("coupling gain must be nonnegative")
        return self

    def _resolve(self, name) -> Path:
        path = Path(name)
        if not path.is_absolute() and self.base_dir is not None:
            path = self.base_dir / path
        return path

    def eta_vector(self) -> np.ndarray:
        if isinstance(self.eta, (int, float)):
            return np.full(self.agents, float(self.eta))
        etas = np.asarray([float(e) for e in self.eta], dtype=float)
        if etas.shape != (self.agents,):
            raise ConfigError("eta list must have one entry per agent")
        return etas

    # -- factories ---------------------------------------------------------

    def build_objective(self) -> Objective:
        if self.objective_kind == "double_well":
            return DoubleWell(self.f_const)
        if self.objective_kind == "nd_loss":
            return NdLoss(self.dimension, self.f_const)
        H = self._load_matrix()
        return Quadratic(H)

    def _load_matrix(self):
        if self.h_diag:
            return np.diag([float(v) for v in self.h_diag])
        return np.loadtxt(self._resolve(self.h_file), delimiter=",", ndmin=2)

    def build_noise(self) -> NoiseModel:
        if self.noise_kind == "none":
            model: NoiseModel = NoNoise()
        elif self.noise_kind == "uniform":
            model = AdditiveUniform(self.half_width)
        elif self.noise_kind == "gaussian":
            model = AdditiveGaussian(self.sigma)
        else:
            B = np.loadtxt(self._resolve(self.matrix_file), delimiter=",", ndmin=2)
            model = ConstantMatrix(B)
        # Minibatch attenuation folds into the amplitude.
        return scale_amplitude(model, 1.0 / math.sqrt(self.batch_size))

    def noise_trace_bound(self):
        """Trace of the configured noise covariance (before batch folding)."""
        n = self.objective_dimension()
        if self.noise_kind == "none":
            return 0.0
        if self.noise_kind == "uniform":
            return n * self.half_width**2 / 3.0
        if self.noise_kind == "gaussian":
            return n * self.sigma**2
        B = np.loadtxt(self._resolve(self.matrix_file), delimiter=",", ndmin=2)
        return float(np.trace(B @ B.T))

    def objective_dimension(self) -> int:
        if self.objective_kind == "double_well":
            return 1
        if self.objective_kind == "nd_loss":
            return self.dimension
        return self._load_matrix().shape[0]


_SECTIONS = {
    "objective": ("objective_kind", "f_const", "dimension", "h_diag", "h_file"),
    "algorithm": (
        "algorithm", "k", "delta", "schedule", "k0", "k1", "ramp_steps",
        "wta_m", "wta_t_f", "wta_tau", "epoch_len", "sd_momentum", "filter",
        "filter_gain", "eta_quorum", "integrator", "dt",
    ),
    "noise": ("noise_kind", "half_width", "sigma", "matrix_file", "batch_size"),
    "run": (
        "agents", "iterations", "eta", "init", "init_low", "init_high",
        "init_point", "lr_schedule", "lr_check_stride", "record_stride",
        "record_full", "master_seed", "runs", "ema_quorum",
    ),
}

# TOML keys whose field names differ from the file spelling.
_ALIASES = {"objective_kind": "kind", "noise_kind": "kind", "algorithm": "kind"}


def config_from_dict(data: dict, base_dir=None) -> SimulationConfig:
    """Build and validate a configuration from nested section dicts."""
    kwargs = {}
    known = {f.name for f in fields(SimulationConfig)}
    for section, keys in _SECTIONS.items():
        payload = dict(data.get(section, {}))
        for field_name in keys:
            toml_key = _ALIASES.get(field_name, field_name)
            if toml_key in payload:
                kwargs[field_name] = payload.pop(toml_key)
        if payload:
            raise ConfigError(f"unknown keys in [{section}]: {sorted(payload)}")
    extra = set(data) - set(_SECTIONS) - {"schema_version"}
    if extra:
        raise ConfigError(f"unknown sections: {sorted(extra)}")
    if not set(kwargs) <= known:
        raise ConfigError(f"unexpected fields {sorted(set(kwargs) - known)}")
    if "algorithm" in kwargs:
        try:
            kwargs["algorithm"] = AlgorithmKind(kwargs["algorithm"])
        except ValueError as exc:
            raise ConfigError(str(exc)) from None
    if "h_diag" in kwargs and kwargs["h_diag"] is not None:
        kwargs["h_diag"] = [float(v) for v in kwargs["h_diag"]]
    if "init_point" in kwargs:
        kwargs["init_point"] = [float(v) for v in kwargs["init_point"]]
    cfg = SimulationConfig(**kwargs)
    cfg.base_dir = Path(base_dir) if base_dir is not None else None
    return cfg.validate()


def parse_config(text: str, base_dir=None) -> SimulationConfig:
    try:
        data = tomllib.loads(text)
    except tomllib.TOMLDecodeError as exc:
        raise ConfigError(f"malformed TOML: {exc}") from None
    return config_from_dict(data, base_dir=base_dir)


def load_config(path) -> SimulationConfig:
    path = Path(path)
    return parse_config(path.read_text(), base_dir=path.parent)


def _format_value(value):
    if isinstance(value, bool):
        return "true" if value else "false"
    if isinstance(value, (int, np.integer)):
        return str(int(value))
    if isinstance(value, (float, np.floating)):
        return format_float(float(value))
    if isinstance(value, AlgorithmKind):
        return f'"{value.value}"'
    if isinstance(value, str):
        return '"' + value.replace("\\", "\\\\").replace('"', '\\"') + '"'
    if isinstance(value, (list, tuple)):
        return "[" + ", ".join(_format_value(v) for v in value) + "]"
    raise TypeError(f"cannot serialize {type(value).__name__}")


def format_float(x: float) -> str:
    """Full-precision float form used in every emitted file (17 significant digits)."""
    if math.isfinite(x) and x == int(x) and abs(x) < 1e16:
        return f"{x:.1f}"
    return f"{x:.17g}"


def serialize_config(cfg: SimulationConfig) -> str:
    """Canonical TOML form of a configuration."""
    lines = [f"schema_version = {SCHEMA_VERSION}", ""]
    for section, keys in _SECTIONS.items():
        lines.append(f"[{section}]")
        for field_name in keys:
            value = getattr(cfg, field_name)
            if value is None:
                continue
            toml_key = _ALIASES.get(field_name, field_name)
            lines.append(f"{toml_key} = {_format_value(value)}")
        lines.append("")
    return "\n".join(lines)


def config_hash(cfg: SimulationConfig) -> str:
    return hashlib.sha256(serialize_config(cfg).encode()).hexdigest()
