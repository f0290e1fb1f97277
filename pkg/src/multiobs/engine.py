"""Coupled super-observer / single-observer trajectory stepping.

One system (Hamiltonian ``H``, damping operator ``L``, unit damping rate) is
monitored through several channels. Each step draws the measurement outcome
once, from statistics evaluated on the *super-observer* state ``rho`` (the
state conditioned on every record), and feeds the identical outcome to every
single-observer state ``rho_i``; that shared-record coupling is what
correlates the observers' state assignments.

Jump channels (photodetection, finite-amplitude homodyne): per step at most
one channel fires, with probability ``rate_i(rho) dt``. A firing channel
applies its jump operation to ``rho`` and to its own ``rho_i``; every other
matrix receives the null-result evolution, implemented as the normalized
completely positive pair

    rho' = (K rho K^dag + (1 - eta) dt L rho L^dag) / trace,
    K = expm(dt (-iH - L^dag L / 2 - g L)),

with ``g = sum_i eta_i gamma_i^*`` for local-oscillator amplitudes
``gamma_i`` (``g = 0`` for photodetection). This equals the master equation's
Euler update to O(dt^2) but is unconditionally stable for fast Hamiltonian
rotation, exactly trace-one and positive, and exactly purity-preserving at
total efficiency 1.

Diffusive channels (the large-amplitude homodyne limit): Euler-Maruyama in
Ito form on the noise and damping terms, with the Hamiltonian rotation
applied per step as an exact 2x2..dxd matrix exponential (plain Euler is
unstable at the fast drive frequencies these models use). Wiener increments
are drawn once per step; a single observer's innovation is
``sqrt(eta_i) dW_i + eta_i dt (T_i(rho) - T_i(rho_i))`` with the
super-observer state inside, where ``T_i(s) = Tr[L s e^{-i phi_i} + s L^dag
e^{+i phi_i}]``.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np
from scipy.linalg import expm

from .densmat import validate_density_matrix
from .errors import (
    DimensionError,
    ImpossibleJumpError,
    InvalidStateError,
    ModelError,
    StepSizeError,
)
from .stochastics import RngStream, StepRecord, sample_jump_event, sample_wiener

HAMILTONIAN_STEP_GUARD = 0.05  # dt * ||H|| must stay below this
DAMPING_STEP_GUARD = 0.1       # dt in units of the (unit) damping rate

PHOTODETECTION = "photodetection"
HOMODYNE = "homodyne"
HOMODYNE_DIFFUSIVE = "homodyne-diffusive"

_JUMP_SCHEMES = (PHOTODETECTION, HOMODYNE)


@dataclass(frozen=True)
class ChannelConfig:
    """One measurement channel: efficiency plus detection scheme.

    ``lo_amplitude``/``lo_phase`` are the local-oscillator amplitude ``R``
    and phase ``phi`` (the complex amplitude is ``gamma = R e^{i phi}``);
    they are meaningful for the homodyne schemes only. The diffusive scheme
    is the R -> infinity limit and keeps only the phase.
    """

    efficiency: float
    scheme: str = PHOTODETECTION
    lo_amplitude: float = 0.0
    lo_phase: float = 0.0

    def __post_init__(self) -> None:
        if not 0.0 <= self.efficiency <= 1.0:
            raise ModelError(f"efficiency must lie in [0, 1], got {self.efficiency}")
        if self.scheme not in (PHOTODETECTION, HOMODYNE, HOMODYNE_DIFFUSIVE):
            raise ModelError(f"unknown scheme {self.scheme!r}")
        if self.lo_amplitude < 0.0:
            raise ModelError(f"local-oscillator amplitude must be >= 0, got {self.lo_amplitude}")
        if self.scheme == PHOTODETECTION and self.lo_amplitude != 0.0:
            raise ModelError("photodetection has no local oscillator")

    @classmethod
    def photodetection(cls, efficiency: float) -> "ChannelConfig":
        return cls(efficiency, PHOTODETECTION)

    @classmethod
    def homodyne(cls, efficiency: float, amplitude: float, phase: float) -> "ChannelConfig":
        return cls(efficiency, HOMODYNE, amplitude, phase)

    @classmethod
    def homodyne_diffusive(cls, efficiency: float, phase: float) -> "ChannelConfig":
        return cls(efficiency, HOMODYNE_DIFFUSIVE, 0.0, phase)

    @property
    def lo_complex_amplitude(self) -> complex:
        return self.lo_amplitude * np.exp(1j * self.lo_phase)


@dataclass(frozen=True)
class ModelSpec:
    """Hamiltonian, damping operator and measurement channels of one model.

    Everything is expressed in units of the damping rate. The total
    efficiency ``sum_i eta_i`` may not exceed 1 (the channels split one
    environment).
    """

    hamiltonian: np.ndarray
    lindblad_op: np.ndarray
    channels: tuple[ChannelConfig, ...]

    def __post_init__(self) -> None:
        h = np.asarray(self.hamiltonian, dtype=complex)
        lop = np.asarray(self.lindblad_op, dtype=complex)
        if h.ndim != 2 or h.shape[0] != h.shape[1]:
            raise DimensionError(f"Hamiltonian must be square, got {h.shape}")
        if lop.shape != h.shape:
            raise DimensionError(
                f"operator shapes differ: H {h.shape} vs L {lop.shape}"
            )
        if np.max(np.abs(h - h.conj().T)) > 1e-10:
            raise InvalidStateError("Hamiltonian must be Hermitian")
        object.__setattr__(self, "hamiltonian", h)
        object.__setattr__(self, "lindblad_op", lop)
        object.__setattr__(self, "channels", tuple(self.channels))
        eta = sum(ch.efficiency for ch in self.channels)
        if eta > 1.0 + 1e-12:
            raise ModelError(f"total efficiency {eta} exceeds 1")
        schemes = {ch.scheme for ch in self.channels}
        if HOMODYNE_DIFFUSIVE in schemes and len(schemes) > 1:
            raise NotImplementedError(
                "mixing diffusive and jump channels in one model is not supported"
            )

    @property
    def dim(self) -> int:
        return self.hamiltonian.shape[0]

    @property
    def n_channels(self) -> int:
        return len(self.channels)

    @property
    def total_efficiency(self) -> float:
        return sum(ch.efficiency for ch in self.channels)

    @property
    def is_diffusive(self) -> bool:
        return bool(self.channels) and all(
            ch.scheme == HOMODYNE_DIFFUSIVE for ch in self.channels
        )


@dataclass(frozen=True)
class TrajectoryState:
    """Super-observer state plus the single-observer states sharing its record."""

    t: float
    rho_super: np.ndarray
    rho_single: tuple[np.ndarray, ...]

    def __post_init__(self) -> None:
        object.__setattr__(self, "rho_super", np.asarray(self.rho_super, dtype=complex))
        object.__setattr__(
            self, "rho_single", tuple(np.asarray(r, dtype=complex) for r in self.rho_single)
        )
        for r in (self.rho_super, *self.rho_single):
            if r.shape != self.rho_super.shape:
                raise DimensionError("all matrices in a TrajectoryState must share one dimension")

    def validate(self) -> "TrajectoryState":
        validate_density_matrix(self.rho_super)
        for r in self.rho_single:
            validate_density_matrix(r)
        return self


def initial_trajectory_state(rho0: np.ndarray, n_channels: int) -> TrajectoryState:
    """All observers start from the same (validated) state at t = 0."""
    rho0 = validate_density_matrix(rho0)
    return TrajectoryState(0.0, rho0.copy(), tuple(rho0.copy() for _ in range(n_channels)))


def hermitize(rho: np.ndarray) -> np.ndarray:
    return 0.5 * (rho + np.swapaxes(rho, -1, -2).conj())


def _spectral_norm(h: np.ndarray) -> float:
    if h.size == 0 or not np.any(h):
        return 0.0
    return float(np.max(np.abs(np.linalg.eigvalsh(h))))


def check_step_guards(spec: ModelSpec, dt: float) -> None:
    """Validate dt against the Hamiltonian-rotation and damping-rate guards."""
    if dt <= 0:
        raise StepSizeError(f"dt must be positive, got {dt}")
    hnorm = _spectral_norm(spec.hamiltonian)
    if dt * hnorm > HAMILTONIAN_STEP_GUARD:
        raise StepSizeError(
            f"dt*||H|| = {dt * hnorm:.3g} exceeds {HAMILTONIAN_STEP_GUARD}; reduce dt"
        )
    if dt > DAMPING_STEP_GUARD:
        raise StepSizeError(f"dt = {dt} does not resolve the unit damping rate")


# ---------------------------------------------------------------------------
# elementary operations


def detection_rate(rho: np.ndarray, channel: ChannelConfig, lindblad_op: np.ndarray) -> float:
    """Average detections per unit time in one channel, given state ``rho``.

    Photodetection: ``eta Tr[rho L^dag L]``. Homodyne with local oscillator
    ``gamma``: ``eta Tr[(L+gamma) rho (L+gamma)^dag]``, i.e.
    ``eta (R^2 + R e^{-i phi} Tr[rho L] + R e^{+i phi} Tr[rho L^dag] +
    Tr[rho L^dag L])``. A value below -1e-10 signals an invalid state and
    raises :class:`ModelError`.
    """
    lop = np.asarray(lindblad_op)
    if channel.scheme == PHOTODETECTION:
        val = np.einsum("ab,ba->", rho, lop.conj().T @ lop)
    elif channel.scheme in (HOMODYNE,):
        jump_op = lop + channel.lo_complex_amplitude * np.eye(lop.shape[0])
        val = np.einsum("ab,ba->", rho, jump_op.conj().T @ jump_op)
    else:
        raise ModelError("diffusive channels have a current, not a detection rate")
    rate = float(val.real) * channel.efficiency
    if rate < -1e-10:
        raise ModelError(f"negative detection rate {rate:.3e}: state is invalid")
    return max(rate, 0.0)


def apply_jump(rho: np.ndarray, channel: ChannelConfig, lindblad_op: np.ndarray) -> np.ndarray:
    """State after a detection in ``channel``: ``J rho J^dag / Tr``, ``J = L + gamma``.

    Raises :class:`ImpossibleJumpError` if the transformed trace vanishes
    (a detection from a dark state).
    """
    lop = np.asarray(lindblad_op)
    jump_op = lop + channel.lo_complex_amplitude * np.eye(lop.shape[0])
    out = jump_op @ rho @ jump_op.conj().T
    tr = float(np.trace(out).real)
    if tr <= 1e-14:
        raise ImpossibleJumpError("jump applied to a state that cannot emit")
    return hermitize(out / tr)


def unconditional_step(rho: np.ndarray, spec: ModelSpec, dt: float) -> np.ndarray:
    """One forward-Euler step of the unconditional master equation.

    ``rho' = rho + dt(-i[H, rho] + L rho L^dag - {L^dag L, rho}/2)``, then
    Hermitian part enforced and trace renormalized. Subject to the
    ``dt*||H|| <= 0.05`` guard; for long stiff integrations prefer
    :func:`ume_solution`.
    """
    check_step_guards(spec, dt)
    h, lop = spec.hamiltonian, spec.lindblad_op
    ldl = lop.conj().T @ lop
    drho = -1j * (h @ rho - rho @ h) + lop @ rho @ lop.conj().T - 0.5 * (ldl @ rho + rho @ ldl)
    out = hermitize(rho + dt * drho)
    return out / np.trace(out).real


def ume_liouvillian(spec: ModelSpec) -> np.ndarray:
    """Matrix of the unconditional generator on row-major vectorized states."""
    h, lop = spec.hamiltonian, spec.lindblad_op
    d = spec.dim
    eye = np.eye(d)
    ldl = lop.conj().T @ lop
    return (
        -1j * (np.kron(h, eye) - np.kron(eye, h.T))
        + np.kron(lop, lop.conj())
        - 0.5 * (np.kron(ldl, eye) + np.kron(eye, ldl.T))
    )


def ume_solution(spec: ModelSpec, rho0: np.ndarray, t: float) -> np.ndarray:
    """Exact unconditional solution ``rho(t)`` via the Liouvillian exponential."""
    v = expm(ume_liouvillian(spec) * t) @ np.asarray(rho0, dtype=complex).reshape(-1)
    return hermitize(v.reshape(spec.dim, spec.dim))


# ---------------------------------------------------------------------------
# per-(spec, dt) precomputed step operators


@dataclass(frozen=True)
class StepContext:
    """Operators reused on every step of one (spec, dt) integration."""

    spec: ModelSpec
    dt: float
    lop: np.ndarray
    ldl: np.ndarray
    # jump schemes
    k_super: np.ndarray | None = None
    k_single: tuple[np.ndarray, ...] = ()
    jump_ops: tuple[np.ndarray, ...] = ()
    feed_super: float = 0.0
    feed_single: tuple[float, ...] = ()
    # diffusive scheme
    rotation: np.ndarray | None = None
    phases: tuple[complex, ...] = ()
    sqrt_eta: tuple[float, ...] = ()

    @property
    def efficiencies(self) -> tuple[float, ...]:
        return tuple(ch.efficiency for ch in self.spec.channels)


def make_step_context(spec: ModelSpec, dt: float) -> StepContext:
    """Precompute the per-step operators; validates the step guards once."""
    check_step_guards(spec, dt)
    h, lop = spec.hamiltonian, spec.lindblad_op
    ldl = lop.conj().T @ lop
    eye = np.eye(spec.dim)
    if spec.is_diffusive:
        return StepContext(
            spec=spec,
            dt=dt,
            lop=lop,
            ldl=ldl,
            rotation=expm(-1j * dt * h),
            phases=tuple(np.exp(-1j * ch.lo_phase) for ch in spec.channels),
            sqrt_eta=tuple(math.sqrt(ch.efficiency) for ch in spec.channels),
        )
    gammas = [ch.lo_complex_amplitude for ch in spec.channels]
    g_super = sum(ch.efficiency * np.conj(g) for ch, g in zip(spec.channels, gammas))
    base = -1j * h - 0.5 * ldl
    k_super = expm(dt * (base - g_super * lop))
    k_single = tuple(
        expm(dt * (base - ch.efficiency * np.conj(g) * lop))
        for ch, g in zip(spec.channels, gammas)
    )
    jump_ops = tuple(lop + g * eye for g in gammas)
    eta = spec.total_efficiency
    return StepContext(
        spec=spec,
        dt=dt,
        lop=lop,
        ldl=ldl,
        k_super=k_super,
        k_single=k_single,
        jump_ops=jump_ops,
        feed_super=1.0 - eta,
        feed_single=tuple(1.0 - ch.efficiency for ch in spec.channels),
    )


def nojump_transform(rho: np.ndarray, k_op: np.ndarray, feed: float, ctx: StepContext) -> np.ndarray:
    """Null-result evolution over one dt: ``K rho K^dag + feed dt L rho L^dag``, normalized.

    The normalization implements the record-conditioning term (the
    subtraction of that matrix's own expected detection rate).
    """
    lop = ctx.lop
    out = k_op @ rho @ k_op.conj().T
    if feed != 0.0:
        out = out + (feed * ctx.dt) * (lop @ rho @ lop.conj().T)
    out = hermitize(out)
    tr = np.trace(out).real
    if tr <= 0.0:
        raise InvalidStateError("null-result evolution annihilated the state")
    return out / tr


def mcsme_step_jump(
    state: TrajectoryState,
    spec: ModelSpec,
    dt: float,
    rng: RngStream,
    ctx: StepContext | None = None,
) -> tuple[TrajectoryState, StepRecord]:
    """Advance all observers one step of the jump-unraveled dynamics.

    The jump event is sampled once from rates evaluated on the
    super-observer state (the record statistics are the super-observer's);
    the same outcome conditions every matrix. If channel ``i`` fires, the
    jump operation is applied to ``rho_super`` and to ``rho_single[i]``
    only; all other single-observer states receive their null-result
    evolution with their own normalization.
    """
    if ctx is None:
        ctx = make_step_context(spec, dt)
    rates = np.array(
        [detection_rate(state.rho_super, ch, ctx.lop) for ch in spec.channels]
    )
    fired = sample_jump_event(rates, dt, rng.uniform())
    jumps = [0] * spec.n_channels
    if fired is None:
        new_super = nojump_transform(state.rho_super, ctx.k_super, ctx.feed_super, ctx)
        new_single = [
            nojump_transform(r, ctx.k_single[i], ctx.feed_single[i], ctx)
            for i, r in enumerate(state.rho_single)
        ]
    else:
        jumps[fired] = 1
        new_super = apply_jump(state.rho_super, spec.channels[fired], ctx.lop)
        new_single = []
        for i, r in enumerate(state.rho_single):
            if i == fired:
                new_single.append(apply_jump(r, spec.channels[i], ctx.lop))
            else:
                new_single.append(nojump_transform(r, ctx.k_single[i], ctx.feed_single[i], ctx))
    record = StepRecord(dt=dt, jumps=tuple(jumps))
    return TrajectoryState(state.t + dt, new_super, tuple(new_single)), record


def mcsme_step_diffusive(
    state: TrajectoryState,
    spec: ModelSpec,
    dt: float,
    rng: RngStream,
    ctx: StepContext | None = None,
) -> tuple[TrajectoryState, StepRecord]:
    """Advance all observers one diffusive (large-R homodyne) step.

    Shared Wiener increments drive the super-observer state; each single
    observer sees the same increment through its innovation
    ``sqrt(eta_i) dW_i + eta_i dt (T_i(rho) - T_i(rho_i))``, which carries
    the super-observer state and couples the records.
    """
    if ctx is None:
        ctx = make_step_context(spec, dt)
    if ctx.rotation is None:
        raise ModelError("mcsme_step_diffusive requires homodyne-diffusive channels")
    lop, ldl = ctx.lop, ctx.ldl
    rot = ctx.rotation
    dw = sample_wiener(spec.n_channels, dt, rng.normals(spec.n_channels))

    def lindblad(r: np.ndarray) -> np.ndarray:
        return lop @ r @ lop.conj().T - 0.5 * (ldl @ r + r @ ldl)

    def finish(r: np.ndarray) -> np.ndarray:
        r = rot @ r @ rot.conj().T
        r = hermitize(r)
        return r / np.trace(r).real

    rho = state.rho_super
    lr, rl = lop @ rho, rho @ lop.conj().T
    t_super = []
    delta = dt * lindblad(rho)
    for i, ph in enumerate(ctx.phases):
        t_i = float((ph * np.trace(lr) + np.conj(ph) * np.trace(rl)).real)
        t_super.append(t_i)
        delta = delta + (ctx.sqrt_eta[i] * dw[i]) * (ph * lr + np.conj(ph) * rl - t_i * rho)
    new_super = finish(rho + delta)

    new_single = []
    for i, (r_i, ph) in enumerate(zip(state.rho_single, ctx.phases)):
        lri, ril = lop @ r_i, r_i @ lop.conj().T
        t_i = float((ph * np.trace(lri) + np.conj(ph) * np.trace(ril)).real)
        eta_i = ctx.efficiencies[i]
        innovation = ctx.sqrt_eta[i] * dw[i] + eta_i * dt * (t_super[i] - t_i)
        delta_i = dt * lindblad(r_i) + innovation * (ph * lri + np.conj(ph) * ril - t_i * r_i)
        new_single.append(finish(r_i + delta_i))

    record = StepRecord(dt=dt, wieners=tuple(float(x) for x in dw))
    return TrajectoryState(state.t + dt, new_super, tuple(new_single)), record


@dataclass
class TrajectoryResult:
    """Sampled states plus the full per-step record of one trajectory."""

    times: np.ndarray
    rho_super: np.ndarray                 # (n_samples, d, d)
    rho_single: np.ndarray                # (n_samples, n_channels, d, d)
    records: list[StepRecord] = field(default_factory=list)

    def jump_times(self, channel: int) -> np.ndarray:
        """Times at which the given channel recorded a detection."""
        times = [
            (k + 1) * rec.dt
            for k, rec in enumerate(self.records)
            if rec.jumps and rec.jumps[channel]
        ]
        return np.asarray(times)


def run_trajectory(
    spec: ModelSpec,
    initial: TrajectoryState,
    t_final: float,
    dt: float,
    rng: RngStream,
    sample_stride: int = 1,
) -> TrajectoryResult:
    """Integrate one trajectory, sampling every ``sample_stride`` steps.

    Deterministic given the stream's ``(seed, stream_id)``: replaying with a
    fresh stream reproduces every record bit-exactly. ``t_final = 0`` echoes
    the initial state.
    """
    if t_final < 0:
        raise ValueError("t_final must be >= 0")
    if sample_stride < 1:
        raise ValueError("sample_stride must be >= 1")
    initial.validate()
    n_steps = int(round(t_final / dt)) if t_final > 0 else 0
    step = mcsme_step_diffusive if spec.is_diffusive else mcsme_step_jump
    ctx = make_step_context(spec, dt) if n_steps else None

    times = [initial.t]
    supers = [initial.rho_super.copy()]
    singles = [np.stack(initial.rho_single) if initial.rho_single else
               np.zeros((0, spec.dim, spec.dim), dtype=complex)]
    records: list[StepRecord] = []
    state = initial
    for k in range(n_steps):
        state, rec = step(state, spec, dt, rng, ctx)
        records.append(rec)
        if (k + 1) % sample_stride == 0 or k == n_steps - 1:
            times.append(state.t)
            supers.append(state.rho_super)
            singles.append(np.stack(state.rho_single) if state.rho_single else singles[0])
    return TrajectoryResult(
        times=np.asarray(times),
        rho_super=np.stack(supers),
        rho_single=np.stack(singles),
        records=records,
    )
