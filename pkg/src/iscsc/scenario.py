"""Experiment configuration and channel synthesis.

A scenario is described by one YAML file whose keys match the fields of
:class:`ScenarioConfig`. Angles are given in degrees in the file and converted
to radians when channels are built.
"""

from __future__ import annotations

import dataclasses
import hashlib
import json
import math
from dataclasses import dataclass
from pathlib import Path
from typing import Any

import numpy as np
import yaml

from iscsc.sensing import steering_vector


class ConfigError(ValueError):
    """Raised when a scenario violates one of its invariants."""

    def __init__(self, field_name: str, message: str):
        self.field = field_name
        super().__init__(f"{field_name}: {message}")


def dbm_to_watts(p_dbm: float) -> float:
    return 10.0 ** ((p_dbm - 30.0) / 10.0)


def watts_to_dbm(p_w: float) -> float:
    return 10.0 * math.log10(p_w) + 30.0


@dataclass(frozen=True)
class BleuParams:
    """Per-CU BLEU configuration.

    ``rho_lower`` overrides the bound derived from ``global_bound``,
    ``weights`` and ``precisions`` when given.
    """

    global_bound: float | None = None
    weights: tuple[float, ...] = ()
    precisions: tuple[float, ...] = ()
    rho_lower: float | None = None

    def lower_bound(self) -> float:
        if self.rho_lower is not None:
            return self.rho_lower
        from iscsc.semantics import rho_lower_bound

        return rho_lower_bound(self.global_bound, self.weights, self.precisions)


@dataclass(frozen=True)
class ScenarioConfig:
    n_antennas: int
    cu_angles: tuple[float, ...]
    target_angles: tuple[float, ...]
    bleu_params: tuple[BleuParams, ...]
    spacing_ratio: float = 0.5
    noise_comm_dbm: float = -30.0
    noise_sense_dbm: float = -30.0
    # matched-filter echo noise; None means "same as noise_sense_dbm"
    noise_echo_dbm: float | None = None
    power_budget_dbm: float = 20.0
    iota: float = 1.1
    kappa: float = 0.5
    qos_threshold: float = 1.0
    error_radius: tuple[float, ...] | None = None
    f_coeff: float = 0.01
    snapshots: int = 1
    pathloss_oneway: tuple[complex, ...] | None = None
    pathloss_roundtrip: tuple[complex, ...] | None = None
    cu_channel_model: str = "los"
    rician_k_factor: float = 10.0
    normalize_objective: bool = False
    seed: int = 0
    solver_tol: float = 1e-8
    outer_tol: float = 1e-4
    max_outer_iters: int = 50
    max_inner_iters: int = 30
    randomization_count: int = 100

    def __post_init__(self):
        L = len(self.target_angles)
        # fill per-target defaults; frozen dataclass needs object.__setattr__
        if self.error_radius is None:
            object.__setattr__(self, "error_radius", (0.01,) * L)
        if self.pathloss_oneway is None:
            object.__setattr__(self, "pathloss_oneway", (0.1 + 0j,) * L)
        if self.pathloss_roundtrip is None:
            object.__setattr__(self, "pathloss_roundtrip", (0.1 + 0j,) * L)
        validate(self)

    @property
    def n_cu(self) -> int:
        return len(self.cu_angles)

    @property
    def n_targets(self) -> int:
        return len(self.target_angles)

    @property
    def power_budget_w(self) -> float:
        return dbm_to_watts(self.power_budget_dbm)

    @property
    def noise_comm_w(self) -> float:
        return dbm_to_watts(self.noise_comm_dbm)

    @property
    def noise_sense_w(self) -> float:
        return dbm_to_watts(self.noise_sense_dbm)

    @property
    def noise_echo_w(self) -> float:
        if self.noise_echo_dbm is None:
            return self.noise_sense_w
        return dbm_to_watts(self.noise_echo_dbm)

    def rho_lower(self) -> np.ndarray:
        return np.array([b.lower_bound() for b in self.bleu_params])

    def replace(self, **changes) -> "ScenarioConfig":
        return dataclasses.replace(self, **changes)

    def to_dict(self) -> dict[str, Any]:
        out = {}
        for f in dataclasses.fields(self):
            value = getattr(self, f.name)
            if f.name in ("pathloss_oneway", "pathloss_roundtrip"):
                value = [[float(c.real), float(c.imag)] for c in value]
            elif f.name == "bleu_params":
                value = [_bleu_to_dict(b) for b in value]
            elif isinstance(value, tuple):
                value = list(value)
            out[f.name] = value
        return out

    def digest(self, seed: int | None = None) -> str:
        payload = self.to_dict()
        payload["_run_seed"] = self.seed if seed is None else seed
        blob = json.dumps(payload, sort_keys=True).encode()
        return hashlib.sha256(blob).hexdigest()[:16]


def _bleu_to_dict(b: BleuParams) -> dict[str, Any]:
    d: dict[str, Any] = {}
    if b.global_bound is not None:
        d["global_bound"] = b.global_bound
        d["weights"] = list(b.weights)
        d["precisions"] = list(b.precisions)
    if b.rho_lower is not None:
        d["rho_lower"] = b.rho_lower
    return d


def validate(cfg: ScenarioConfig) -> None:
    K, L = cfg.n_cu, cfg.n_targets
    if K < 1:
        raise ConfigError("cu_angles", "at least one CU is required")
    if cfg.n_antennas < 1:
        raise ConfigError("n_antennas", "must be positive")
    if cfg.n_antennas < K + L:
        raise ConfigError("n_antennas", f"N={cfg.n_antennas} < K+L={K + L}")
    for name in ("cu_angles", "target_angles"):
        for a in getattr(cfg, name):
            if not -90.0 <= a <= 90.0:
                raise ConfigError(name, f"angle {a} outside [-90, 90] degrees")
    if cfg.spacing_ratio <= 0:
        raise ConfigError("spacing_ratio", "must be positive")
    for name in ("noise_comm_dbm", "noise_sense_dbm", "power_budget_dbm"):
        v = getattr(cfg, name)
        if not math.isfinite(v) or dbm_to_watts(v) <= 0.0:
            raise ConfigError(name, "must convert to a positive power")
    if cfg.iota <= 0:
        raise ConfigError("iota", "must be positive")
    if not 0.0 <= cfg.kappa <= 1.0:
        raise ConfigError("kappa", "must lie in [0, 1]")
    if cfg.qos_threshold < 0:
        raise ConfigError("qos_threshold", "must be non-negative")
    if cfg.f_coeff <= 0:
        raise ConfigError("f_coeff", "must be positive")
    if cfg.snapshots < 1:
        raise ConfigError("snapshots", "must be a positive integer")
    for name in ("error_radius", "pathloss_oneway", "pathloss_roundtrip"):
        if len(getattr(cfg, name)) != L:
            raise ConfigError(name, f"expected {L} entries, one per target")
    if any(e < 0 for e in cfg.error_radius):
        raise ConfigError("error_radius", "radii must be non-negative")
    if len(cfg.bleu_params) != K:
        raise ConfigError("bleu_params", f"expected {K} entries, one per CU")
    for k, b in enumerate(cfg.bleu_params):
        _validate_bleu(k, b)
    if cfg.cu_channel_model not in ("los", "rician"):
        raise ConfigError("cu_channel_model", "must be 'los' or 'rician'")
    if cfg.max_outer_iters < 1 or cfg.randomization_count < 0:
        raise ConfigError("max_outer_iters", "iteration counts must be positive")


def _validate_bleu(k: int, b: BleuParams) -> None:
    where = f"bleu_params[{k}]"
    if b.global_bound is None and b.rho_lower is None:
        raise ConfigError("bleu_params", f"{where} needs BLEU terms or rho_lower")
    if b.global_bound is not None:
        if not 0.0 < b.global_bound <= 1.0:
            raise ConfigError("bleu_params", f"{where} global_bound must lie in (0, 1]")
        if len(b.weights) == 0 or len(b.weights) != len(b.precisions):
            raise ConfigError("bleu_params", f"{where} weights/precisions length mismatch")
        if abs(sum(b.weights) - 1.0) > 1e-9:
            raise ConfigError("bleu_params", f"{where} weights sum to {sum(b.weights)}, not 1")
        if any(not 0.0 < p <= 1.0 for p in b.precisions):
            raise ConfigError("bleu_params", f"{where} precisions must lie in (0, 1]")
    if b.rho_lower is not None and not 0.0 < b.rho_lower <= 1.0:
        raise ConfigError("bleu_params", f"{where} rho_lower must lie in (0, 1]")
    if b.rho_lower is None:
        try:
            b.lower_bound()
        except ValueError as exc:
            raise ConfigError("bleu_params", f"{where}: {exc}") from exc


def _complex(v) -> complex:
    if isinstance(v, (list, tuple)):
        if len(v) != 2:
            raise ValueError("complex values are written as [re, im]")
        return complex(float(v[0]), float(v[1]))
    return complex(v)


def config_from_dict(raw: dict[str, Any]) -> ScenarioConfig:
    known = {f.name for f in dataclasses.fields(ScenarioConfig)}
    unknown = set(raw) - known
    if unknown:
        raise ConfigError(sorted(unknown)[0], "unknown configuration key")
    data = dict(raw)
    try:
        for name in ("cu_angles", "target_angles", "error_radius"):
            if data.get(name) is not None:
                data[name] = tuple(float(a) for a in data[name])
        for name in ("pathloss_oneway", "pathloss_roundtrip"):
            if data.get(name) is not None:
                data[name] = tuple(_complex(v) for v in data[name])
        bleu = []
        for entry in data.get("bleu_params") or []:
            bleu.append(
                BleuParams(
                    global_bound=entry.get("global_bound"),
                    weights=tuple(entry.get("weights", ())),
                    precisions=tuple(entry.get("precisions", ())),
                    rho_lower=entry.get("rho_lower"),
                )
            )
        data["bleu_params"] = tuple(bleu)
    except (TypeError, ValueError, AttributeError) as exc:
        raise ConfigError("config", f"malformed value ({exc})") from exc
    for required in ("n_antennas", "cu_angles", "target_angles"):
        if required not in data:
            raise ConfigError(required, "missing required key")
    return ScenarioConfig(**data)


def load_scenario(path: str | Path) -> ScenarioConfig:
    text = Path(path).read_text()
    try:
        raw = yaml.safe_load(text)
    except yaml.YAMLError as exc:
        raise ConfigError("config", f"cannot parse {path}: {exc}") from exc
    if not isinstance(raw, dict):
        raise ConfigError("config", f"{path} does not contain a mapping")
    return config_from_dict(raw)


def dump_scenario(cfg: ScenarioConfig) -> str:
    return yaml.safe_dump(cfg.to_dict(), sort_keys=False)


@dataclass(frozen=True)
class ChannelSet:
    cu_channels: np.ndarray  # (K, N)
    target_channels_est: np.ndarray  # (L, N)
    target_angles_rad: np.ndarray
    alpha: np.ndarray
    beta: np.ndarray
    error_radius: np.ndarray
    noise_comm_w: float
    noise_sense_w: float
    spacing_ratio: float = 0.5
    noise_echo_w: float | None = None

    @property
    def n_antennas(self) -> int:
        return self.cu_channels.shape[1]


def synthesize_channels(cfg: ScenarioConfig, seed: int | None = None) -> ChannelSet:
    """Build CU and target channels for ``cfg``.

    Target channels are ``alpha_l * a(theta_l)``. CU channels are unit-gain
    line-of-sight steering vectors, or Rician draws around them when
    ``cfg.cu_channel_model == "rician"``; only the Rician mode consumes
    randomness, drawn from a generator local to this call.
    """
    seed = cfg.seed if seed is None else seed
    N = cfg.n_antennas
    d = cfg.spacing_ratio
    cu_los = np.array([steering_vector(np.deg2rad(a), N, d) for a in cfg.cu_angles])
    if cfg.cu_channel_model == "rician":
        rng = np.random.default_rng(seed)
        kf = cfg.rician_k_factor
        scatter = (rng.standard_normal(cu_los.shape) + 1j * rng.standard_normal(cu_los.shape)) / np.sqrt(2)
        cu = np.sqrt(kf / (kf + 1)) * cu_los + np.sqrt(1 / (kf + 1)) * scatter
    else:
        cu = cu_los
    thetas = np.deg2rad(np.asarray(cfg.target_angles, dtype=float))
    alpha = np.asarray(cfg.pathloss_oneway, dtype=complex)
    tgt = np.array([alpha[l] * steering_vector(thetas[l], N, d) for l in range(len(thetas))])
    return ChannelSet(
        cu_channels=cu,
        target_channels_est=tgt.reshape(len(thetas), N),
        target_angles_rad=thetas,
        alpha=alpha,
        beta=np.asarray(cfg.pathloss_roundtrip, dtype=complex),
        error_radius=np.asarray(cfg.error_radius, dtype=float),
        noise_comm_w=cfg.noise_comm_w,
        noise_sense_w=cfg.noise_sense_w,
        spacing_ratio=d,
        noise_echo_w=cfg.noise_echo_w,
    )


def reference_scenario(**overrides) -> ScenarioConfig:
    """The 20-antenna, 2-CU, 3-target setting used for the reported figures."""
    base = dict(
        n_antennas=20,
        cu_angles=(-30.0, 20.0),
        target_angles=(-35.0, 5.0, 40.0),
        bleu_params=(BleuParams(rho_lower=0.4), BleuParams(rho_lower=0.33)),
        noise_comm_dbm=-30.0,
        noise_sense_dbm=-30.0,
        power_budget_dbm=20.0,
        iota=1.1,
        kappa=0.5,
        qos_threshold=1.0,
        error_radius=(0.01, 0.01, 0.01),
    )
    base.update(overrides)
    return ScenarioConfig(**base)


def fast_scenario(**overrides) -> ScenarioConfig:
    """N=8, K=2, L=2 instance small enough for quick checks."""
    base = dict(
        n_antennas=8,
        cu_angles=(-30.0, 20.0),
        target_angles=(-35.0, 40.0),
        bleu_params=(BleuParams(rho_lower=0.4), BleuParams(rho_lower=0.33)),
        error_radius=(0.01, 0.01),
    )
    base.update(overrides)
    return ScenarioConfig(**base)
