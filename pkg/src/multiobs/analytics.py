"""Monte Carlo estimators and the closed forms they are validated against.

Estimator labels follow the observer-index notation used throughout the
package: ``O_1`` is the mean overlap ``Tr[rho_1 rho]`` of observer 1's state
with the all-records state, ``O_11`` the mean purity ``Tr[rho_1^2]``, and
``O_12`` the mean overlap ``Tr[rho_1 rho_2]`` between two observers (indices
are 1-based, at most 9 channels).
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np
from scipy import stats

from .errors import AnalyticsError

WAITING_HISTOGRAM_BINS = 100


def parse_estimator_label(label: str) -> tuple[str, int, int | None]:
    """Map ``O_1``/``O_11``/``O_12`` to (kind, i, j) with 0-based channels."""
    if not label.startswith("O_") or not label[2:].isdigit():
        raise AnalyticsError(f"unknown estimator label {label!r}")
    digits = label[2:]
    if "0" in digits:
        raise AnalyticsError(f"estimator indices are 1-based: {label!r}")
    if len(digits) == 1:
        return "super", int(digits) - 1, None
    if len(digits) == 2:
        i, j = int(digits[0]) - 1, int(digits[1]) - 1
        return ("self", i, i) if i == j else ("pair", i, j)
    raise AnalyticsError(f"unknown estimator label {label!r}")


def default_estimator_labels(n_channels: int) -> tuple[str, ...]:
    """O_i and O_ii for every channel plus O_ij for every ordered pair i<j."""
    labels = []
    for i in range(1, n_channels + 1):
        labels.append(f"O_{i}")
        labels.append(f"O_{i}{i}")
    for i in range(1, n_channels + 1):
        for j in range(i + 1, n_channels + 1):
            labels.append(f"O_{i}{j}")
    return tuple(labels)


@dataclass
class EnsembleAccumulator:
    """Running cross-trajectory sums of the configured purity functionals.

    ``merge`` is associative and commutative up to floating-point
    reassociation, so chunked/parallel reductions reproduce single-pass
    results to well below the statistical tolerances. Standard errors need
    at least two trajectories.
    """

    times: np.ndarray
    labels: tuple[str, ...]
    n_traj: int = 0
    sums: np.ndarray = field(default=None)          # (P, T)
    sumsq: np.ndarray = field(default=None)         # (P, T)
    tail_values: np.ndarray = field(default=None)   # (P, n_traj) per-trajectory tail means
    waits: dict[int, list[np.ndarray]] = field(default_factory=dict)
    final_states: np.ndarray | None = None          # (n_traj, d, d) when requested

    def __post_init__(self) -> None:
        p, t = len(self.labels), len(self.times)
        if self.sums is None:
            self.sums = np.zeros((p, t))
        if self.sumsq is None:
            self.sumsq = np.zeros((p, t))
        if self.tail_values is None:
            self.tail_values = np.zeros((p, 0))

    @classmethod
    def for_plan(cls, plan) -> "EnsembleAccumulator":
        labels = tuple(plan.estimators) or default_estimator_labels(plan.spec.n_channels)
        for label in labels:
            kind, i, j = parse_estimator_label(label)
            top = max(i, j if j is not None else 0)
            if top >= plan.spec.n_channels:
                raise AnalyticsError(
                    f"estimator {label!r} refers to channel {top + 1}, "
                    f"model has {plan.spec.n_channels}"
                )
        return cls(times=plan.sample_times(), labels=labels)

    # -- filling (used by the runners) ------------------------------------

    def add_time_sample(self, t_index: int, values: np.ndarray) -> None:
        self.sums[:, t_index] += values.sum(axis=1)
        self.sumsq[:, t_index] += np.square(values).sum(axis=1)

    def add_tail_values(self, values: np.ndarray) -> None:
        self.tail_values = np.concatenate((self.tail_values, values), axis=1)

    def add_waits(self, channel: int, arr: np.ndarray) -> None:
        self.waits.setdefault(channel, []).append(np.asarray(arr, dtype=float))

    def add_final_states(self, states: np.ndarray) -> None:
        self.final_states = (
            states.copy()
            if self.final_states is None
            else np.concatenate((self.final_states, states))
        )

    # -- reduction ---------------------------------------------------------

    def merge(self, other: "EnsembleAccumulator") -> "EnsembleAccumulator":
        if self.labels != other.labels or len(self.times) != len(other.times):
            raise AnalyticsError("cannot merge accumulators with different layouts")
        merged = EnsembleAccumulator(
            times=self.times,
            labels=self.labels,
            n_traj=self.n_traj + other.n_traj,
            sums=self.sums + other.sums,
            sumsq=self.sumsq + other.sumsq,
            tail_values=np.concatenate((self.tail_values, other.tail_values), axis=1),
        )
        for src in (self.waits, other.waits):
            for ch, parts in src.items():
                merged.waits.setdefault(ch, []).extend(parts)
        finals = [f for f in (self.final_states, other.final_states) if f is not None]
        if finals:
            merged.final_states = np.concatenate(finals)
        return merged

    # -- estimates ----------------------------------------------------------

    def _row(self, label: str) -> int:
        try:
            return self.labels.index(label)
        except ValueError:
            raise AnalyticsError(f"estimator {label!r} was not accumulated") from None

    def estimate(self, label: str, t_index: int) -> tuple[float, float]:
        """Sample mean and standard error at one sampled time."""
        if self.n_traj < 2:
            raise AnalyticsError("standard errors need at least 2 trajectories")
        p = self._row(label)
        n = self.n_traj
        mean = self.sums[p, t_index] / n
        var = max(self.sumsq[p, t_index] / n - mean * mean, 0.0)
        return float(mean), float(math.sqrt(var / (n - 1)))

    def estimate_series(self, label: str) -> tuple[np.ndarray, np.ndarray]:
        """Mean and standard error over the whole sampled time grid."""
        if self.n_traj < 2:
            raise AnalyticsError("standard errors need at least 2 trajectories")
        p = self._row(label)
        n = self.n_traj
        mean = self.sums[p] / n
        var = np.maximum(self.sumsq[p] / n - mean**2, 0.0)
        return mean, np.sqrt(var / (n - 1))

    def estimate_asymptote(self, label: str) -> tuple[float, float]:
        """Late-time value: per-trajectory tail averages, mean +/- SE."""
        if self.tail_values.shape[1] < 2:
            raise AnalyticsError("asymptote needs tail averages from >= 2 trajectories")
        vals = self.tail_values[self._row(label)]
        return float(vals.mean()), float(vals.std(ddof=1) / math.sqrt(vals.size))

    def waiting_times(self, channel: int) -> np.ndarray:
        parts = self.waits.get(channel, [])
        if not parts:
            return np.zeros(0)
        return np.concatenate(parts)


def estimate_O(acc: EnsembleAccumulator, kind: str, t_index: int) -> tuple[float, float]:
    """Mean and standard error of functional ``kind`` (e.g. ``"O_12"``)."""
    return acc.estimate(kind, t_index)


# ---------------------------------------------------------------------------
# waiting-time statistics


def waiting_time_histogram(
    waits: np.ndarray, n_bins: int = WAITING_HISTOGRAM_BINS
) -> tuple[np.ndarray, np.ndarray]:
    """Normalized histogram of inter-detection times on [0, 10*mean].

    For reporting only; the KS comparisons below operate on the raw waits.
    """
    waits = np.asarray(waits, dtype=float)
    if waits.size == 0:
        raise AnalyticsError("no recorded waits")
    density, edges = np.histogram(waits, bins=n_bins, range=(0.0, 10.0 * waits.mean()), density=True)
    return edges, density


def waiting_time_density(tau: np.ndarray, eta_1: float) -> np.ndarray:
    """Asymptotic waiting-time law for a fast-driven atom: (eta/2) e^{-eta tau/2}."""
    _check_efficiency(eta_1, "eta_1")
    return 0.5 * eta_1 * np.exp(-0.5 * eta_1 * np.asarray(tau, dtype=float))


def compare_exponential(waits: np.ndarray, rate: float):
    """KS test of raw waits against an exponential of the given rate."""
    waits = np.asarray(waits, dtype=float)
    if waits.size == 0:
        raise AnalyticsError("no recorded waits")
    return stats.kstest(waits, stats.expon(scale=1.0 / rate).cdf)


def two_sample_ks(a: np.ndarray, b: np.ndarray):
    """Two-sample KS test (observer-independence checks)."""
    a, b = np.asarray(a, dtype=float), np.asarray(b, dtype=float)
    if a.size == 0 or b.size == 0:
        raise AnalyticsError("empty sample")
    return stats.ks_2samp(a, b)


# ---------------------------------------------------------------------------
# closed-form oracles (fast-drive limit, units of the damping rate)


def _check_efficiency(eta: float, name: str) -> None:
    if not 0.0 <= eta <= 1.0:
        raise AnalyticsError(f"{name} must lie in [0, 1], got {eta}")


def oracle_O1_photo(eta_1: float) -> float:
    """Stationary Tr[rho_1 rho] under photodetection: 1/2 + eta/(2(3-2 eta))."""
    _check_efficiency(eta_1, "eta_1")
    return 0.5 + eta_1 / (2.0 * (3.0 - 2.0 * eta_1))


def oracle_O11_photo(eta_1: float) -> float:
    """Stationary Tr[rho_1^2] under photodetection.

    Written as the detection-rate / purity-decay average it comes from;
    algebraically identical to :func:`oracle_O1_photo` (the overlap with the
    all-records state carries no extra information).
    """
    _check_efficiency(eta_1, "eta_1")
    rate = 0.5 * eta_1
    decay = 1.5 * (1.0 - eta_1)
    return 0.5 + 0.5 * rate / (rate + decay)


def oracle_O12_photo(eta_1: float, eta_2: float) -> float:
    """Stationary Tr[rho_1 rho_2] for two photodetecting observers (< 1/2)."""
    _check_efficiency(eta_1, "eta_1")
    _check_efficiency(eta_2, "eta_2")
    if eta_1 + eta_2 > 1.0 + 1e-12:
        raise AnalyticsError("eta_1 + eta_2 exceeds 1")
    s = eta_1 + eta_2
    return 0.5 - eta_1 * eta_2 * (6.0 - 2.0 * s) / (
        2.0 * (6.0 - s) * (3.0 - 2.0 * eta_1) * (3.0 - 2.0 * eta_2)
    )


def oracle_O_homodyne(eta_i: float, phi_i: float) -> float:
    """Stationary Tr[rho_i rho] for one diffusive homodyne observer.

    Leading order in the efficiency: 1/2 + eta (cos^2(phi)/2 + sin^2(phi)/3).
    """
    _check_efficiency(eta_i, "eta_i")
    return 0.5 + eta_i * (0.5 * math.cos(phi_i) ** 2 + math.sin(phi_i) ** 2 / 3.0)


def oracle_O12_homodyne(eta_1: float, phi_1: float, eta_2: float, phi_2: float) -> float:
    """Stationary Tr[rho_1 rho_2] for two diffusive homodyne observers.

    First non-vanishing order:
    1/2 + eta_1 eta_2 [cos^2 phi_1 cos^2 phi_2 + (4/9) sin^2 phi_1 sin^2 phi_2].
    """
    _check_efficiency(eta_1, "eta_1")
    _check_efficiency(eta_2, "eta_2")
    return 0.5 + eta_1 * eta_2 * (
        math.cos(phi_1) ** 2 * math.cos(phi_2) ** 2
        + (4.0 / 9.0) * math.sin(phi_1) ** 2 * math.sin(phi_2) ** 2
    )


def oracle_nojump_bloch(t: float, eta_total: float, omega: float) -> tuple[float, float, float]:
    """Bloch vector a time ``t`` after the last detection by anyone (fast drive).

    X = 0, Y = e^{-3(1-eta)t/4} sin(2 w t), Z = -e^{-3(1-eta)t/4} cos(2 w t).
    """
    _check_efficiency(eta_total, "eta_total")
    env = math.exp(-0.75 * (1.0 - eta_total) * t)
    return 0.0, env * math.sin(2.0 * omega * t), -env * math.cos(2.0 * omega * t)


def oracle_nojump_bloch_single(t: float, eta_i: float, omega: float) -> tuple[float, float, float]:
    """Single observer's Bloch vector a time ``t`` after *their* last detection."""
    return oracle_nojump_bloch(t, eta_i, omega)
