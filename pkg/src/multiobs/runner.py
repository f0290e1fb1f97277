"""Execute one configured experiment and emit plot-ready CSV files.

Every estimator gets its own CSV with columns
``time,estimate,standard_error,oracle_value`` (floats printed with 17
significant digits, so re-reading them is lossless); jump models
additionally emit a waiting-time histogram per channel, and the reduced
cat model emits its agreement trace plus final imbalance samples. A
``manifest.json`` records the config hash, seed and library versions.
Outputs are deterministic for a fixed config and seed; on failure,
partially written files are removed.
"""

from __future__ import annotations

import json
import sys
from dataclasses import dataclass
from datetime import datetime, timezone
from pathlib import Path

import numpy as np
import scipy

from . import __version__
from .analytics import (
    oracle_O1_photo,
    oracle_O11_photo,
    oracle_O12_homodyne,
    oracle_O12_photo,
    oracle_O_homodyne,
    parse_estimator_label,
    waiting_time_density,
    waiting_time_histogram,
)
from .config import (
    ATOM_HOMODYNE_DIFFUSIVE,
    ATOM_PHOTO,
    QBM_CAT,
    ExperimentConfig,
    serialize_config,
    validate_config,
)
from .ensemble import EnsemblePlan, run_ensemble
from .errors import AnalyticsError
from .models import run_cat_ensemble


def _f(x: float) -> str:
    return f"{x:.17g}"


def oracle_asymptote(cfg: ExperimentConfig, label: str) -> float:
    """Closed-form stationary value for an estimator, NaN when none applies."""
    try:
        kind, i, j = parse_estimator_label(label)
    except AnalyticsError:
        return float("nan")
    etas = cfg.efficiencies
    phis = cfg.lo_phases_rad
    if cfg.kind == ATOM_PHOTO:
        if kind == "super":
            return oracle_O1_photo(etas[i])
        if kind == "self":
            return oracle_O11_photo(etas[i])
        return oracle_O12_photo(etas[i], etas[j])
    if cfg.kind == ATOM_HOMODYNE_DIFFUSIVE:
        if kind in ("super", "self"):
            return oracle_O_homodyne(etas[i], phis[i])
        return oracle_O12_homodyne(etas[i], phis[i], etas[j], phis[j])
    return float("nan")


@dataclass
class RunOutputs:
    out_dir: Path
    csv_paths: list[Path]
    manifest_path: Path
    summary: dict


def _write_estimator_csv(path: Path, times, means, ses, oracle: float) -> None:
    rows = ["time,estimate,standard_error,oracle_value"]
    for t, m, s in zip(times, means, ses):
        rows.append(f"{_f(t)},{_f(m)},{_f(s)},{_f(oracle)}")
    path.write_text("\n".join(rows) + "\n")


def _write_waits_csv(path: Path, waits: np.ndarray, eta_i: float) -> None:
    edges, density = waiting_time_histogram(waits)
    centers = 0.5 * (edges[:-1] + edges[1:])
    oracle = waiting_time_density(centers, eta_i)
    rows = ["bin_center,density,oracle_density"]
    for c, d, o in zip(centers, density, oracle):
        rows.append(f"{_f(c)},{_f(d)},{_f(o)}")
    path.write_text("\n".join(rows) + "\n")


def _run_cat(cfg: ExperimentConfig, out_dir: Path) -> tuple[list[Path], dict]:
    result = run_cat_ensemble(
        cfg.efficiencies,
        cfg.tau_final_rescaled,
        cfg.dtau_rescaled,
        cfg.n_traj,
        cfg.seed,
        sample_stride=cfg.sample_stride,
    )
    paths = []
    trace = out_dir / "cat_overlap.csv"
    rows = ["tau,mean_pair_overlap"]
    for t, o in zip(result.taus, result.mean_pair_overlap):
        rows.append(f"{_f(t)},{_f(o)}")
    trace.write_text("\n".join(rows) + "\n")
    paths.append(trace)

    finals = out_dir / "cat_final_imbalance.csv"
    header = "A_super," + ",".join(f"A_{i + 1}" for i in range(len(cfg.efficiencies)))
    lines = [header]
    a_super, a_single = result.a_super, result.a_single
    for k in range(a_super.size):
        lines.append(",".join(_f(v) for v in (a_super[k], *a_single[:, k])))
    finals.write_text("\n".join(lines) + "\n")
    paths.append(finals)

    single = out_dir / "cat_trajectory.csv"
    lines = ["tau," + header]
    for t, row in zip(result.taus, result.trace_a):
        lines.append(",".join(_f(v) for v in (t, *row)))
    single.write_text("\n".join(lines) + "\n")
    paths.append(single)

    summary = {
        "final_mean_pair_overlap": float(result.mean_pair_overlap[-1])
        if result.mean_pair_overlap.size
        else None,
    }
    return paths, summary


def run_experiment(cfg: ExperimentConfig, out_dir: str | Path | None = None) -> RunOutputs:
    """Validate, run, and write outputs; returns the written paths."""
    validate_config(cfg)
    out = Path(out_dir) if out_dir is not None else cfg.resolved_output_dir()
    out.mkdir(parents=True, exist_ok=True)
    written: list[Path] = []
    try:
        summary: dict = {}
        if cfg.kind == QBM_CAT:
            written, summary = _run_cat(cfg, out)
        else:
            spec = cfg.to_model_spec()
            plan = EnsemblePlan(
                spec=spec,
                rho0=cfg.initial_density(),
                t_final=cfg.t_final_damping_units,
                dt=cfg.dt_damping_units,
                n_traj=cfg.n_traj,
                seed=cfg.seed,
                sample_stride=cfg.sample_stride,
                estimators=cfg.estimator_labels(),
            )
            acc = run_ensemble(plan, threads=cfg.resolved_threads())
            for label in acc.labels:
                means, ses = acc.estimate_series(label)
                oracle = oracle_asymptote(cfg, label) if cfg.oracle_overlays else float("nan")
                path = out / f"{label}.csv"
                _write_estimator_csv(path, acc.times, means, ses, oracle)
                written.append(path)
                asym, asym_se = acc.estimate_asymptote(label)
                summary[label] = {
                    "asymptote": asym,
                    "standard_error": asym_se,
                    "oracle": oracle,
                }
            for i, ch in enumerate(spec.channels):
                waits = acc.waiting_times(i)
                if waits.size:
                    path = out / f"waiting_times_channel_{i + 1}.csv"
                    _write_waits_csv(path, waits, ch.efficiency)
                    written.append(path)
                    summary[f"waits_channel_{i + 1}"] = {
                        "count": int(waits.size),
                        "mean": float(waits.mean()),
                    }
        manifest_path = out / "manifest.json"
        manifest = {
            "config_hash": cfg.config_hash(),
            "config": serialize_config(cfg),
            "seed": cfg.seed,
            "n_traj": cfg.n_traj,
            "versions": {
                "multiobs": __version__,
                "numpy": np.__version__,
                "scipy": scipy.__version__,
                "python": sys.version.split()[0],
            },
            "created_utc": datetime.now(timezone.utc).isoformat(),
            "outputs": [p.name for p in written],
            "summary": summary,
        }
        manifest_path.write_text(json.dumps(manifest, indent=2, sort_keys=True) + "\n")
        return RunOutputs(out_dir=out, csv_paths=written, manifest_path=manifest_path, summary=summary)
    except BaseException:
        for p in written:
            p.unlink(missing_ok=True)
        raise
