"""Concrete models: driven atom, damped oscillator, and the reduced cat SDE.

The atom is driven through ``H = omega sigma_x`` and damped through the
lowering operator at unit rate; the oscillator (zero-temperature damped
harmonic oscillator on a truncated Fock space) evolves in the frame of its
own rotation, so its engine Hamiltonian is zero and only damping plus the
homodyne record remain.

For a superposition of two large-amplitude coherent states ``|+z>, |-z>``
monitored by homodyne observers, the full dynamics reduces to scalar SDEs
for the population-imbalance variables ``B`` (all records) and ``B_i`` (one
record each), with ``A = tanh B`` the imbalance: in the rescaled time
``tau = 4 t r^2 cos^2(phi - psi)``,

    dB/dtau   = eta tanh(B)   + sum_i sqrt(eta_i) xi_i,
    dB_i/dtau = eta_i tanh(B) + sqrt(eta_i) xi_i,

with shared unit white noises xi_i (Stratonovich convention; the noise is
additive so the Ito reading coincides). Note the *all-records* B in each
observer's drift: the shared record is what eventually drags every observer
to the branch the environment selected.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .densmat import make_atom_operators, make_fock_operators
from .engine import ChannelConfig, ModelSpec
from .errors import ModelError, StepSizeError
from .stochastics import batch_normals

CAT_B_CLAMP = 30.0  # |tanh(30)| saturates to 1 at machine precision
CAT_STEP_GUARD = 0.01  # dtau * eta must stay below this


def build_atom_photodetection(omega: float, efficiencies) -> ModelSpec:
    """Driven two-level atom, every channel a photon counter."""
    if omega < 0:
        raise ModelError(f"drive frequency must be >= 0, got {omega}")
    sx, _, _, c = make_atom_operators()
    channels = tuple(ChannelConfig.photodetection(e) for e in efficiencies)
    return ModelSpec(hamiltonian=omega * sx, lindblad_op=c, channels=channels)


def build_atom_homodyne(
    omega: float,
    channels,
    *,
    diffusive: bool = True,
    lo_amplitude: float | None = None,
) -> ModelSpec:
    """Driven two-level atom watched through homodyne channels.

    ``channels`` is a sequence of ``(efficiency, phase)`` pairs. With
    ``diffusive=True`` (the default, and the limit the closed forms are for)
    the local-oscillator amplitude is infinite; otherwise ``lo_amplitude``
    gives the finite amplitude ``R`` shared by all channels (``R=0``
    degenerates to photodetection).
    """
    if omega < 0:
        raise ModelError(f"drive frequency must be >= 0, got {omega}")
    sx, _, _, c = make_atom_operators()
    if diffusive:
        chs = tuple(ChannelConfig.homodyne_diffusive(e, phi) for e, phi in channels)
    else:
        if lo_amplitude is None:
            raise ModelError("finite-amplitude homodyne needs lo_amplitude")
        chs = tuple(ChannelConfig.homodyne(e, lo_amplitude, phi) for e, phi in channels)
    return ModelSpec(hamiltonian=omega * sx, lindblad_op=c, channels=chs)


def build_qbm_homodyne(
    n_trunc: int,
    efficiencies,
    *,
    lo_amplitude: float,
    lo_phase: float = 0.0,
    diffusive: bool = False,
) -> ModelSpec:
    """Damped oscillator on a truncated Fock space with homodyne observers.

    The model lives in the oscillator's rotating frame (engine Hamiltonian
    zero); keep coherent amplitudes well below ``sqrt(n_trunc)``.
    """
    a, _ = make_fock_operators(n_trunc)
    h = np.zeros((n_trunc, n_trunc), dtype=complex)
    if diffusive:
        chs = tuple(ChannelConfig.homodyne_diffusive(e, lo_phase) for e in efficiencies)
    else:
        chs = tuple(ChannelConfig.homodyne(e, lo_amplitude, lo_phase) for e in efficiencies)
    return ModelSpec(hamiltonian=h, lindblad_op=a, channels=chs)


# ---------------------------------------------------------------------------
# reduced cat-state SDE


@dataclass(frozen=True)
class CatState:
    """Rescaled time plus the imbalance variables of every observer."""

    tau: float
    b_super: float
    b_single: tuple[float, ...]

    @property
    def a_super(self) -> float:
        return math.tanh(self.b_super)

    @property
    def a_single(self) -> tuple[float, ...]:
        return tuple(math.tanh(b) for b in self.b_single)


def rescaled_time(t: float, r: float, phi: float, psi: float) -> float:
    """tau = 4 t r^2 cos^2(phi - psi) for amplitude r e^{i psi}, LO phase phi."""
    return 4.0 * t * r * r * math.cos(phi - psi) ** 2


def _check_cat_step(efficiencies: np.ndarray, dtau: float) -> None:
    eta = float(efficiencies.sum())
    if dtau <= 0:
        raise StepSizeError(f"dtau must be positive, got {dtau}")
    if dtau * max(eta, 1e-12) > CAT_STEP_GUARD:
        raise StepSizeError(
            f"dtau = {dtau} too large for total efficiency {eta}: "
            f"dtau*eta must stay below {CAT_STEP_GUARD}"
        )


def cat_sde_step(
    state: CatState,
    efficiencies,
    dtau: float,
    wieners: np.ndarray,
) -> CatState:
    """One Heun (midpoint) step of the coupled imbalance SDEs.

    ``wieners`` are the shared increments of variance ``dtau``, one per
    channel. The drift of ``B_i`` uses the all-records ``B`` (before and
    after the predictor), not ``B_i``. Values are clamped to |B| <= 30,
    where tanh is saturated to machine precision.
    """
    etas = np.asarray(efficiencies, dtype=float)
    _check_cat_step(etas, dtau)
    dw = np.asarray(wieners, dtype=float)
    if dw.shape != etas.shape:
        raise ModelError(f"need one increment per channel, got {dw.shape}")
    eta = float(etas.sum())
    sqrt_etas = np.sqrt(etas)

    tanh_b = math.tanh(state.b_super)
    shared_noise = float(sqrt_etas @ dw)
    b_pred = state.b_super + dtau * eta * tanh_b + shared_noise
    drift_avg = 0.5 * (tanh_b + math.tanh(b_pred))
    b_new = state.b_super + dtau * eta * drift_avg + shared_noise
    b_new = min(max(b_new, -CAT_B_CLAMP), CAT_B_CLAMP)

    singles = []
    for b_i, eta_i, s_i, dw_i in zip(state.b_single, etas, sqrt_etas, dw):
        b_i_new = b_i + dtau * eta_i * drift_avg + s_i * dw_i
        singles.append(min(max(b_i_new, -CAT_B_CLAMP), CAT_B_CLAMP))
    return CatState(state.tau + dtau, b_new, tuple(singles))


@dataclass
class CatEnsembleResult:
    """Final imbalance variables plus the sampled agreement trace."""

    taus: np.ndarray
    mean_pair_overlap: np.ndarray   # mean (1 + A_1 A_2)/2 when >= 2 channels, else NaN
    b_super: np.ndarray             # (n_runs,)
    b_single: np.ndarray            # (n_channels, n_runs)
    trace_a: np.ndarray = None      # (n_samples, 1 + n_channels): run 0's A, A_i

    @property
    def a_super(self) -> np.ndarray:
        return np.tanh(self.b_super)

    @property
    def a_single(self) -> np.ndarray:
        return np.tanh(self.b_single)


def run_cat_ensemble(
    efficiencies,
    tau_final: float,
    dtau: float,
    n_runs: int,
    seed: int,
    *,
    sample_stride: int = 100,
    heun: bool = True,
    stream_offset: int = 0,
) -> CatEnsembleResult:
    """Vectorized ensemble of the reduced SDE with per-run seeded streams.

    ``heun=False`` switches to plain Euler-Maruyama; for this additive-noise
    equation the two agree pathwise to O(dtau) and the test suite uses the
    switch as a convention cross-check.
    """
    etas = np.asarray(efficiencies, dtype=float)
    _check_cat_step(etas, dtau)
    eta = float(etas.sum())
    sqrt_etas = np.sqrt(etas)
    n_ch = etas.size
    n_steps = int(round(tau_final / dtau))
    sqrt_dtau = math.sqrt(dtau)

    b = np.zeros(n_runs)
    b_i = np.zeros((n_ch, n_runs))
    ids = np.arange(stream_offset, stream_offset + n_runs)
    taus = []
    overlap = []
    trace = []
    for s in range(n_steps):
        dw = sqrt_dtau * batch_normals(seed, ids, s, n_ch).T  # (n_ch, n_runs)
        tanh_b = np.tanh(b)
        shared = sqrt_etas @ dw
        if heun:
            b_pred = b + dtau * eta * tanh_b + shared
            drift_avg = 0.5 * (tanh_b + np.tanh(b_pred))
        else:
            drift_avg = tanh_b
        b = np.clip(b + dtau * eta * drift_avg + shared, -CAT_B_CLAMP, CAT_B_CLAMP)
        b_i = np.clip(
            b_i + dtau * etas[:, None] * drift_avg + sqrt_etas[:, None] * dw,
            -CAT_B_CLAMP,
            CAT_B_CLAMP,
        )
        if (s + 1) % sample_stride == 0 or s == n_steps - 1:
            taus.append((s + 1) * dtau)
            if n_ch >= 2:
                overlap.append(float(np.mean(0.5 * (1.0 + np.tanh(b_i[0]) * np.tanh(b_i[1])))))
            else:
                overlap.append(float("nan"))
            trace.append([math.tanh(b[0]), *(math.tanh(x) for x in b_i[:, 0])])
    return CatEnsembleResult(
        taus=np.asarray(taus),
        mean_pair_overlap=np.asarray(overlap),
        b_super=b,
        b_single=b_i,
        trace_a=np.asarray(trace),
    )


def fokker_planck_solution(tau: float, b_1, eta_1: float) -> np.ndarray:
    """Single-observer imbalance density: equal-weight Gaussians at +/- eta*tau.

    ``P(tau, B) = [N(B; eta tau, eta tau) + N(B; -eta tau, eta tau)] / 2``,
    normalized to integrate to 1 (each settled branch carries weight 1/2).
    """
    if tau <= 0:
        raise ModelError(f"tau must be positive, got {tau}")
    if not 0.0 < eta_1 <= 1.0:
        raise ModelError(f"eta_1 must lie in (0, 1], got {eta_1}")
    b_1 = np.asarray(b_1, dtype=float)
    mu = eta_1 * tau
    norm = 1.0 / math.sqrt(2.0 * math.pi * mu)
    return 0.5 * norm * (
        np.exp(-((b_1 - mu) ** 2) / (2.0 * mu)) + np.exp(-((b_1 + mu) ** 2) / (2.0 * mu))
    )


def fokker_planck_cdf(tau: float, b_1, eta_1: float) -> np.ndarray:
    """CDF of :func:`fokker_planck_solution` (for KS comparisons)."""
    from scipy.stats import norm

    if tau <= 0:
        raise ModelError(f"tau must be positive, got {tau}")
    b_1 = np.asarray(b_1, dtype=float)
    mu = eta_1 * tau
    sd = math.sqrt(mu)
    return 0.5 * (norm.cdf(b_1, loc=mu, scale=sd) + norm.cdf(b_1, loc=-mu, scale=sd))
