"""Experiment configuration: one TOML file describes one reproducible run.

Keys carry their units (``dt_damping_units``, ``tau_final_rescaled``) so a
config is readable without the code. Parsing is strict: unknown model kinds,
inconsistent channel lists or out-of-range numerics fail with a
:class:`ConfigError` naming every offending field, before any trajectory is
started.
"""

from __future__ import annotations

import hashlib
import math
import os
from dataclasses import dataclass, replace
from pathlib import Path

try:
    import tomllib
except ModuleNotFoundError:  # python < 3.11
    import tomli as tomllib

import numpy as np

from .analytics import default_estimator_labels, parse_estimator_label
from .densmat import (
    cat_state,
    coherent_state,
    excited_state,
    ground_state,
    maximally_mixed,
)
from .engine import ModelSpec
from .errors import AnalyticsError, ConfigError
from .models import build_atom_homodyne, build_atom_photodetection, build_qbm_homodyne

ATOM_PHOTO = "atom-photo"
ATOM_HOMODYNE = "atom-homodyne"
ATOM_HOMODYNE_DIFFUSIVE = "atom-homodyne-diffusive"
QBM_FOCK = "qbm-fock"
QBM_CAT = "qbm-cat"
MODEL_KINDS = (ATOM_PHOTO, ATOM_HOMODYNE, ATOM_HOMODYNE_DIFFUSIVE, QBM_FOCK, QBM_CAT)

INITIAL_STATES = ("maximally-mixed", "ground", "excited", "coherent", "cat")

OUTPUT_DIR_ENV = "MULTIOBS_OUTPUT_DIR"
DEFAULT_OUTPUT_DIR = "multiobs-out"


@dataclass(frozen=True)
class ExperimentConfig:
    kind: str
    efficiencies: tuple[float, ...]
    lo_phases_rad: tuple[float, ...] = ()
    lo_amplitude: float = 0.0
    omega_rabi: float | None = None
    n_trunc: int | None = None
    coherent_amplitude_re: float = 0.0
    coherent_amplitude_im: float = 0.0
    initial_state: str = "maximally-mixed"
    dt_damping_units: float | None = None
    t_final_damping_units: float | None = None
    dtau_rescaled: float | None = None
    tau_final_rescaled: float | None = None
    sample_stride: int = 25
    n_traj: int = 256
    seed: int = 0
    threads: int = 0
    estimators: tuple[str, ...] = ()
    oracle_overlays: bool = True
    output_directory: str = ""

    @property
    def coherent_amplitude(self) -> complex:
        return complex(self.coherent_amplitude_re, self.coherent_amplitude_im)

    def with_overrides(self, **kwargs) -> "ExperimentConfig":
        return replace(self, **{k: v for k, v in kwargs.items() if v is not None})

    def resolved_output_dir(self) -> Path:
        if self.output_directory:
            return Path(self.output_directory)
        return Path(os.environ.get(OUTPUT_DIR_ENV, DEFAULT_OUTPUT_DIR))

    def resolved_threads(self) -> int:
        return self.threads if self.threads > 0 else (os.cpu_count() or 1)

    def estimator_labels(self) -> tuple[str, ...]:
        if self.estimators:
            return self.estimators
        return default_estimator_labels(len(self.efficiencies))

    # -- model construction -------------------------------------------------

    def to_model_spec(self) -> ModelSpec:
        if self.kind == ATOM_PHOTO:
            return build_atom_photodetection(self.omega_rabi, self.efficiencies)
        if self.kind == ATOM_HOMODYNE:
            return build_atom_homodyne(
                self.omega_rabi,
                list(zip(self.efficiencies, self.lo_phases_rad)),
                diffusive=False,
                lo_amplitude=self.lo_amplitude,
            )
        if self.kind == ATOM_HOMODYNE_DIFFUSIVE:
            return build_atom_homodyne(
                self.omega_rabi,
                list(zip(self.efficiencies, self.lo_phases_rad)),
                diffusive=True,
            )
        if self.kind == QBM_FOCK:
            return build_qbm_homodyne(
                self.n_trunc,
                self.efficiencies,
                lo_amplitude=self.lo_amplitude,
                lo_phase=self.lo_phases_rad[0] if self.lo_phases_rad else 0.0,
            )
        raise ConfigError(f"model kind {self.kind!r} has no engine ModelSpec")

    def initial_density(self) -> np.ndarray:
        name = self.initial_state
        if self.kind in (ATOM_PHOTO, ATOM_HOMODYNE, ATOM_HOMODYNE_DIFFUSIVE):
            return {
                "maximally-mixed": lambda: maximally_mixed(2),
                "ground": ground_state,
                "excited": excited_state,
            }[name]()
        if self.kind == QBM_FOCK:
            if name == "coherent":
                return coherent_state(self.coherent_amplitude, self.n_trunc)
            if name == "cat":
                return cat_state(self.coherent_amplitude, self.n_trunc)
            if name == "ground":
                return coherent_state(0.0, self.n_trunc)
            return maximally_mixed(self.n_trunc)
        raise ConfigError(f"model kind {self.kind!r} has no density-matrix initial state")

    def config_hash(self) -> str:
        return hashlib.sha256(serialize_config(self).encode()).hexdigest()


def _require(table: dict, key: str, types, errors: list[str], where: str):
    if key not in table:
        errors.append(f"{where}.{key}: missing")
        return None
    val = table[key]
    if not isinstance(val, types):
        errors.append(f"{where}.{key}: expected {types}, got {type(val).__name__}")
        return None
    return val


def validate_config(cfg: ExperimentConfig) -> None:
    """Raise :class:`ConfigError` listing every invalid field."""
    errors: list[str] = []
    if cfg.kind not in MODEL_KINDS:
        errors.append(f"model.kind: unknown kind {cfg.kind!r}; known: {', '.join(MODEL_KINDS)}")
    if not cfg.efficiencies:
        errors.append("channels.efficiencies: at least one channel is required")
    for i, e in enumerate(cfg.efficiencies):
        if not 0.0 <= e <= 1.0:
            errors.append(f"channels.efficiencies[{i}]: {e} outside [0, 1]")
    if sum(cfg.efficiencies) > 1.0 + 1e-12:
        errors.append(f"channels.efficiencies: total {sum(cfg.efficiencies)} exceeds 1")
    needs_phases = cfg.kind in (ATOM_HOMODYNE, ATOM_HOMODYNE_DIFFUSIVE)
    if needs_phases and len(cfg.lo_phases_rad) != len(cfg.efficiencies):
        errors.append(
            "channels.lo_phases_rad: need one phase per channel "
            f"({len(cfg.lo_phases_rad)} phases, {len(cfg.efficiencies)} channels)"
        )
    if cfg.lo_amplitude < 0:
        errors.append(f"channels.lo_amplitude: {cfg.lo_amplitude} must be >= 0")
    if cfg.kind in (ATOM_PHOTO, ATOM_HOMODYNE, ATOM_HOMODYNE_DIFFUSIVE):
        if cfg.omega_rabi is None or cfg.omega_rabi < 0:
            errors.append("model.omega_rabi: required and must be >= 0 for atom models")
        if cfg.initial_state not in ("maximally-mixed", "ground", "excited"):
            errors.append(
                f"initial.state: {cfg.initial_state!r} is not an atom state "
                "(maximally-mixed | ground | excited)"
            )
    if cfg.kind == QBM_FOCK:
        if cfg.n_trunc is None or cfg.n_trunc < 2:
            errors.append("model.n_trunc: required and must be >= 2 for qbm-fock")
        if cfg.initial_state not in ("maximally-mixed", "ground", "coherent", "cat"):
            errors.append(f"initial.state: {cfg.initial_state!r} is not an oscillator state")
        if (
            cfg.initial_state in ("coherent", "cat")
            and cfg.n_trunc is not None
            and abs(cfg.coherent_amplitude) ** 2 > 0.5 * cfg.n_trunc
        ):
            errors.append(
                "model.coherent_amplitude: |z|^2 must stay well below n_trunc "
                f"(got |z|^2 = {abs(cfg.coherent_amplitude) ** 2:.3g}, n_trunc = {cfg.n_trunc})"
            )
    if cfg.kind == QBM_CAT:
        if cfg.dtau_rescaled is None or cfg.dtau_rescaled <= 0:
            errors.append("numerics.dtau_rescaled: required and must be > 0 for qbm-cat")
        if cfg.tau_final_rescaled is None or cfg.tau_final_rescaled <= 0:
            errors.append("numerics.tau_final_rescaled: required and must be > 0 for qbm-cat")
    else:
        if cfg.dt_damping_units is None or cfg.dt_damping_units <= 0:
            errors.append("numerics.dt_damping_units: required and must be > 0")
        if cfg.t_final_damping_units is None or cfg.t_final_damping_units < 0:
            errors.append("numerics.t_final_damping_units: required and must be >= 0")
    if cfg.sample_stride < 1:
        errors.append(f"numerics.sample_stride: {cfg.sample_stride} must be >= 1")
    if cfg.n_traj < 1:
        errors.append(f"ensemble.n_traj: {cfg.n_traj} must be >= 1")
    if cfg.seed < 0:
        errors.append(f"ensemble.seed: {cfg.seed} must be >= 0")
    if cfg.threads < 0:
        errors.append(f"ensemble.threads: {cfg.threads} must be >= 0")
    if cfg.kind != QBM_CAT:
        for label in cfg.estimators:
            try:
                kind, i, j = parse_estimator_label(label)
                top = max(i, j if j is not None else 0)
                if top >= len(cfg.efficiencies):
                    errors.append(
                        f"output.estimators: {label!r} refers to channel {top + 1}, "
                        f"config has {len(cfg.efficiencies)}"
                    )
            except AnalyticsError as exc:
                errors.append(f"output.estimators: {exc}")
    if errors:
        raise ConfigError("invalid configuration:\n  " + "\n  ".join(errors))


def parse_config(text: str) -> ExperimentConfig:
    """Parse and validate a TOML experiment description."""
    try:
        doc = tomllib.loads(text)
    except tomllib.TOMLDecodeError as exc:
        raise ConfigError(f"not valid TOML: {exc}") from exc
    errors: list[str] = []
    model = doc.get("model", {})
    channels = doc.get("channels", {})
    initial = doc.get("initial", {})
    numerics = doc.get("numerics", {})
    ensemble = doc.get("ensemble", {})
    output = doc.get("output", {})

    kind = _require(model, "kind", str, errors, "model")
    effs = _require(channels, "efficiencies", list, errors, "channels") or []
    cfg = ExperimentConfig(
        kind=kind or "",
        efficiencies=tuple(float(e) for e in effs),
        lo_phases_rad=tuple(float(p) for p in channels.get("lo_phases_rad", [])),
        lo_amplitude=float(channels.get("lo_amplitude", 0.0)),
        omega_rabi=float(model["omega_rabi"]) if "omega_rabi" in model else None,
        n_trunc=int(model["n_trunc"]) if "n_trunc" in model else None,
        coherent_amplitude_re=float(model.get("coherent_amplitude_re", 0.0)),
        coherent_amplitude_im=float(model.get("coherent_amplitude_im", 0.0)),
        initial_state=str(initial.get("state", "maximally-mixed")),
        dt_damping_units=(
            float(numerics["dt_damping_units"]) if "dt_damping_units" in numerics else None
        ),
        t_final_damping_units=(
            float(numerics["t_final_damping_units"])
            if "t_final_damping_units" in numerics
            else None
        ),
        dtau_rescaled=float(numerics["dtau_rescaled"]) if "dtau_rescaled" in numerics else None,
        tau_final_rescaled=(
            float(numerics["tau_final_rescaled"]) if "tau_final_rescaled" in numerics else None
        ),
        sample_stride=int(numerics.get("sample_stride", 25)),
        n_traj=int(ensemble.get("n_traj", 256)),
        seed=int(ensemble.get("seed", 0)),
        threads=int(ensemble.get("threads", 0)),
        estimators=tuple(str(s) for s in output.get("estimators", [])),
        oracle_overlays=bool(output.get("oracle_overlays", True)),
        output_directory=str(output.get("directory", "")),
    )
    if errors:
        raise ConfigError("invalid configuration:\n  " + "\n  ".join(errors))
    validate_config(cfg)
    return cfg


def load_config(path: str | Path) -> ExperimentConfig:
    return parse_config(Path(path).read_text())


def _fmt(value) -> str:
    if isinstance(value, bool):
        return "true" if value else "false"
    if isinstance(value, float):
        if math.isinf(value) or math.isnan(value):
            raise ConfigError(f"cannot serialize non-finite float {value}")
        return repr(value)
    if isinstance(value, int):
        return str(value)
    if isinstance(value, str):
        return '"' + value.replace("\\", "\\\\").replace('"', '\\"') + '"'
    if isinstance(value, (tuple, list)):
        return "[" + ", ".join(_fmt(v) for v in value) + "]"
    raise ConfigError(f"cannot serialize {type(value).__name__}")


def serialize_config(cfg: ExperimentConfig) -> str:
    """Deterministic TOML rendering; parse(serialize(cfg)) == cfg."""
    lines = ["[model]", f"kind = {_fmt(cfg.kind)}"]
    if cfg.omega_rabi is not None:
        lines.append(f"omega_rabi = {_fmt(float(cfg.omega_rabi))}")
    if cfg.n_trunc is not None:
        lines.append(f"n_trunc = {_fmt(cfg.n_trunc)}")
    if cfg.coherent_amplitude_re or cfg.coherent_amplitude_im:
        lines.append(f"coherent_amplitude_re = {_fmt(cfg.coherent_amplitude_re)}")
        lines.append(f"coherent_amplitude_im = {_fmt(cfg.coherent_amplitude_im)}")
    lines += ["", "[channels]", f"efficiencies = {_fmt(cfg.efficiencies)}"]
    if cfg.lo_phases_rad:
        lines.append(f"lo_phases_rad = {_fmt(cfg.lo_phases_rad)}")
    if cfg.lo_amplitude:
        lines.append(f"lo_amplitude = {_fmt(cfg.lo_amplitude)}")
    lines += ["", "[initial]", f"state = {_fmt(cfg.initial_state)}"]
    lines += ["", "[numerics]"]
    if cfg.dt_damping_units is not None:
        lines.append(f"dt_damping_units = {_fmt(cfg.dt_damping_units)}")
    if cfg.t_final_damping_units is not None:
        lines.append(f"t_final_damping_units = {_fmt(cfg.t_final_damping_units)}")
    if cfg.dtau_rescaled is not None:
        lines.append(f"dtau_rescaled = {_fmt(cfg.dtau_rescaled)}")
    if cfg.tau_final_rescaled is not None:
        lines.append(f"tau_final_rescaled = {_fmt(cfg.tau_final_rescaled)}")
    lines.append(f"sample_stride = {_fmt(cfg.sample_stride)}")
    lines += [
        "",
        "[ensemble]",
        f"n_traj = {_fmt(cfg.n_traj)}",
        f"seed = {_fmt(cfg.seed)}",
        f"threads = {_fmt(cfg.threads)}",
    ]
    lines += ["", "[output]"]
    if cfg.estimators:
        lines.append(f"estimators = {_fmt(cfg.estimators)}")
    lines.append(f"oracle_overlays = {_fmt(cfg.oracle_overlays)}")
    if cfg.output_directory:
        lines.append(f"directory = {_fmt(cfg.output_directory)}")
    return "\n".join(lines) + "\n"
