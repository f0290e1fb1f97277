"""Lock-step vectorized trajectory ensembles.

The per-trajectory engine in :mod:`multiobs.engine` is the reference path;
this module advances many trajectories at once as ``(n, d, d)`` arrays with
identical mathematics, which is what makes 10^4..10^5-trajectory ensembles
tractable. Trajectory ``j`` of a run draws from the counter-addressed stream
``(seed, stream_offset + j)``, so results are independent of chunking,
thread count and execution order; chunk accumulators are merged in index
order for bit-stable output.
"""

from __future__ import annotations

import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass

import numpy as np

from .analytics import EnsembleAccumulator, parse_estimator_label
from .densmat import validate_density_matrix
from .engine import ModelSpec, StepContext, check_step_guards, make_step_context
from .errors import StepSizeError
from .stochastics import (
    MAX_JUMP_PROBABILITY_PER_STEP,
    batch_normals_block,
    batch_uniforms_block,
)

DEFAULT_CHUNK = 4096
_RNG_BLOCK_WORDS = 1 << 21  # per-chunk buffer of pre-drawn steps (~16 MB of uint64)


def _rng_block_steps(n_streams: int) -> int:
    return max(1, min(256, _RNG_BLOCK_WORDS // max(n_streams, 1)))


@dataclass(frozen=True)
class EnsemblePlan:
    """Everything needed to advance and score one ensemble."""

    spec: ModelSpec
    rho0: np.ndarray
    t_final: float
    dt: float
    n_traj: int
    seed: int
    sample_stride: int = 25
    estimators: tuple[str, ...] = ()
    tail_start: float | None = None
    collect_waits: bool = True
    keep_final_states: bool = False
    stream_offset: int = 0

    def sample_times(self) -> np.ndarray:
        n_steps = int(round(self.t_final / self.dt))
        idx = _sample_step_indices(n_steps, self.sample_stride)
        return np.concatenate(([0.0], (idx + 1) * self.dt))

    def resolved_tail_start(self) -> float:
        # final 20% of the window, but never before 5 damping times when the
        # window allows a burn-in of that length
        if self.tail_start is not None:
            return self.tail_start
        start = 0.8 * self.t_final
        if self.t_final > 6.25:
            start = max(start, 5.0)
        return start


def _sample_step_indices(n_steps: int, stride: int) -> np.ndarray:
    idx = np.arange(stride - 1, n_steps, stride)
    if n_steps and (n_steps - 1) not in idx:
        idx = np.concatenate((idx, [n_steps - 1]))
    return idx


def _functional_values(
    labels: tuple[str, ...],
    rho: np.ndarray,
    singles: list[np.ndarray],
) -> np.ndarray:
    """Evaluate each configured purity functional across the batch: (P, n)."""
    out = np.empty((len(labels), rho.shape[0]))
    for p, label in enumerate(labels):
        kind, i, j = parse_estimator_label(label)
        if kind == "super":
            a, b = singles[i], rho
        elif kind == "self":
            a, b = singles[i], singles[i]
        else:
            a, b = singles[i], singles[j]
        out[p] = np.einsum("nab,nba->n", a, b).real
    return out


def _advance_jump_chunk(plan: EnsemblePlan, ctx: StepContext, ids: np.ndarray) -> EnsembleAccumulator:
    spec, dt = plan.spec, plan.dt
    n = ids.size
    n_ch = spec.n_channels
    etas = np.asarray(ctx.efficiencies)
    lop = ctx.lop
    lh = lop.conj().T
    n_steps = int(round(plan.t_final / dt))
    sample_at = set(_sample_step_indices(n_steps, plan.sample_stride).tolist())

    rho = np.broadcast_to(plan.rho0, (n, spec.dim, spec.dim)).copy()
    singles = [rho.copy() for _ in range(n_ch)]
    jump_traces = [  # eta_i * Tr[J_i rho J_i^dag] reads as Tr[rho J^dag J]
        ctx.jump_ops[i].conj().T @ ctx.jump_ops[i] for i in range(n_ch)
    ]

    acc = EnsembleAccumulator.for_plan(plan)
    times_idx = 0
    values0 = _functional_values(acc.labels, rho, singles)
    acc.add_time_sample(times_idx, values0)
    times_idx += 1

    last_jump_t = np.full((n, n_ch), np.nan)
    waits: list[list[np.ndarray]] = [[] for _ in range(n_ch)]
    tail_start = plan.resolved_tail_start()
    tail_sums = np.zeros((len(acc.labels), n))
    tail_count = 0

    def nojump(mat: np.ndarray, k_op: np.ndarray, feed: float) -> np.ndarray:
        out = k_op @ mat @ k_op.conj().T
        if feed:
            out += (feed * dt) * (lop @ mat @ lh)
        out = 0.5 * (out + out.conj().transpose(0, 2, 1))
        tr = np.einsum("nii->n", out).real
        return out / tr[:, None, None]

    block = _rng_block_steps(n)
    u_block = np.empty((0, n))
    for s in range(n_steps):
        if s % block == 0:
            u_block = batch_uniforms_block(plan.seed, ids, s, min(block, n_steps - s))
        rates = np.empty((n, n_ch))
        for i in range(n_ch):
            rates[:, i] = etas[i] * np.einsum("nab,ba->n", rho, jump_traces[i]).real
        probs = rates * dt
        total = probs.sum(axis=1)
        worst = float(total.max()) if n else 0.0
        if worst > MAX_JUMP_PROBABILITY_PER_STEP:
            raise StepSizeError(
                f"total jump probability {worst:.3g} per step exceeds "
                f"{MAX_JUMP_PROBABILITY_PER_STEP}; reduce dt"
            )
        u = u_block[s % block]
        edges = np.cumsum(probs, axis=1)
        fired = np.full(n, -1, dtype=int)
        below = u < edges[:, -1]
        if np.any(below):
            fired[below] = np.argmax(u[below, None] < edges[below], axis=1)

        new_rho = nojump(rho, ctx.k_super, ctx.feed_super)
        new_singles = [
            nojump(singles[i], ctx.k_single[i], ctx.feed_single[i]) for i in range(n_ch)
        ]
        t_now = (s + 1) * dt
        for i in range(n_ch):
            hit = np.nonzero(fired == i)[0]
            if not hit.size:
                continue
            jop = ctx.jump_ops[i]
            for mats, target in ((rho, new_rho), (singles[i], new_singles[i])):
                j = jop @ mats[hit] @ jop.conj().T
                tr = np.einsum("nii->n", j).real
                target[hit] = j / tr[:, None, None]
            if plan.collect_waits:
                prev = last_jump_t[hit, i]
                seen = ~np.isnan(prev)
                if np.any(seen):
                    waits[i].append(t_now - prev[seen])
                last_jump_t[hit, i] = t_now
        rho, singles = new_rho, new_singles

        if s in sample_at:
            values = _functional_values(acc.labels, rho, singles)
            acc.add_time_sample(times_idx, values)
            times_idx += 1
            if t_now >= tail_start:
                tail_sums += values
                tail_count += 1

    acc.n_traj = n
    if tail_count:
        acc.add_tail_values(tail_sums / tail_count)
    for i in range(n_ch):
        if waits[i]:
            acc.add_waits(i, np.concatenate(waits[i]))
    if plan.keep_final_states:
        acc.add_final_states(rho)
    return acc


def _bloch_split(mats: np.ndarray) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    x = 2.0 * mats[:, 0, 1].real
    y = -2.0 * mats[:, 0, 1].imag
    z = (mats[:, 0, 0] - mats[:, 1, 1]).real
    return x.copy(), y.copy(), z.copy()


def _bloch_join(x: np.ndarray, y: np.ndarray, z: np.ndarray) -> np.ndarray:
    n = x.size
    out = np.empty((n, 2, 2), dtype=complex)
    out[:, 0, 0] = 0.5 * (1.0 + z)
    out[:, 1, 1] = 0.5 * (1.0 - z)
    out[:, 0, 1] = 0.5 * (x - 1j * y)
    out[:, 1, 0] = 0.5 * (x + 1j * y)
    return out


def _bloch_rotation(u: np.ndarray) -> np.ndarray:
    """3x3 rotation of (x, y, z) equivalent to rho -> U rho U^dag."""
    sx = np.array([[0, 1], [1, 0]], dtype=complex)
    sy = np.array([[0, -1j], [1j, 0]], dtype=complex)
    sz = np.array([[1, 0], [0, -1]], dtype=complex)
    paulis = (sx, sy, sz)
    uh = u.conj().T
    return np.array(
        [[0.5 * np.trace(si @ u @ sj @ uh).real for sj in paulis] for si in paulis]
    )


def _rotate3(rot3: np.ndarray, x: np.ndarray, y: np.ndarray, z: np.ndarray) -> list[np.ndarray]:
    return [
        rot3[0, 0] * x + rot3[0, 1] * y + rot3[0, 2] * z,
        rot3[1, 0] * x + rot3[1, 1] * y + rot3[1, 2] * z,
        rot3[2, 0] * x + rot3[2, 1] * y + rot3[2, 2] * z,
    ]


def _advance_diffusive_bloch_chunk(
    plan: EnsemblePlan, ctx: StepContext, ids: np.ndarray
) -> EnsembleAccumulator:
    """Two-level diffusive stepping on Bloch components (x, y, z).

    Identical mathematics to the matrix path, specialised to d = 2 where the
    states are (I + r.sigma)/2: the damping drift is (-x/2, -y/2, -(1+z)),
    the record term for phase phi adds ``innovation * (2m - T r)`` with
    ``T = x cos(phi) - y sin(phi)`` and ``2m = ((1+z)cos(phi), -(1+z)sin(phi),
    -T)``, and the exact drive rotation turns (y, z) by 2*omega*dt. Division
    by the trace never arises: the record term is traceless by construction.
    """
    spec, dt = plan.spec, plan.dt
    n = ids.size
    n_ch = spec.n_channels
    rot3 = _bloch_rotation(ctx.rotation)
    cos_phi = [math.cos(ch.lo_phase) for ch in spec.channels]
    sin_phi = [math.sin(ch.lo_phase) for ch in spec.channels]
    sqrt_dt = np.sqrt(dt)
    n_steps = int(round(plan.t_final / dt))
    sample_at = set(_sample_step_indices(n_steps, plan.sample_stride).tolist())

    x0, y0, z0 = _bloch_split(np.broadcast_to(plan.rho0, (n, 2, 2)))
    frames = [[x0.copy(), y0.copy(), z0.copy()]]          # super + one per channel
    frames += [[x0.copy(), y0.copy(), z0.copy()] for _ in range(n_ch)]

    acc = EnsembleAccumulator.for_plan(plan)
    rows = [parse_estimator_label(label) for label in acc.labels]

    def functionals() -> np.ndarray:
        out = np.empty((len(rows), n))
        for p, (kind, i, j) in enumerate(rows):
            a = frames[1 + i]
            b = frames[0] if kind == "super" else (frames[1 + i] if kind == "self" else frames[1 + j])
            out[p] = 0.5 * (1.0 + a[0] * b[0] + a[1] * b[1] + a[2] * b[2])
        return out

    times_idx = 0
    acc.add_time_sample(times_idx, functionals())
    times_idx += 1
    tail_start = plan.resolved_tail_start()
    tail_sums = np.zeros((len(acc.labels), n))
    tail_count = 0

    block = _rng_block_steps(n * max(n_ch, 1))
    dw_block = np.empty((0, n, n_ch))
    for s in range(n_steps):
        if s % block == 0:
            dw_block = sqrt_dt * batch_normals_block(
                plan.seed, ids, s, min(block, n_steps - s), n_ch
            )
        dw = dw_block[s % block]
        x, y, z = frames[0]
        t_super = [cos_phi[i] * x - sin_phi[i] * y for i in range(n_ch)]
        one_z = 1.0 + z
        nx = x - 0.5 * dt * x
        ny = y - 0.5 * dt * y
        nz = z - dt * one_z
        for i in range(n_ch):
            coef = ctx.sqrt_eta[i] * dw[:, i]
            nx += coef * (cos_phi[i] * one_z - t_super[i] * x)
            ny += coef * (-sin_phi[i] * one_z - t_super[i] * y)
            nz += coef * (-t_super[i] * one_z)
        frames[0] = _rotate3(rot3, nx, ny, nz)

        for i in range(n_ch):
            xi, yi, zi = frames[1 + i]
            t_i = cos_phi[i] * xi - sin_phi[i] * yi
            innovation = ctx.sqrt_eta[i] * dw[:, i] + (
                ctx.efficiencies[i] * dt
            ) * (t_super[i] - t_i)
            one_zi = 1.0 + zi
            nxi = xi - 0.5 * dt * xi + innovation * (cos_phi[i] * one_zi - t_i * xi)
            nyi = yi - 0.5 * dt * yi + innovation * (-sin_phi[i] * one_zi - t_i * yi)
            nzi = zi - dt * (1.0 + zi) + innovation * (-t_i * one_zi)
            frames[1 + i] = _rotate3(rot3, nxi, nyi, nzi)

        if s in sample_at:
            values = functionals()
            acc.add_time_sample(times_idx, values)
            times_idx += 1
            if (s + 1) * dt >= tail_start:
                tail_sums += values
                tail_count += 1

    acc.n_traj = n
    if tail_count:
        acc.add_tail_values(tail_sums / tail_count)
    if plan.keep_final_states:
        acc.add_final_states(_bloch_join(*frames[0]))
    return acc


def _advance_diffusive_chunk(
    plan: EnsemblePlan, ctx: StepContext, ids: np.ndarray
) -> EnsembleAccumulator:
    spec, dt = plan.spec, plan.dt
    n = ids.size
    n_ch = spec.n_channels
    lop, ldl = ctx.lop, ctx.ldl
    lh = lop.conj().T
    rot, rot_h = ctx.rotation, ctx.rotation.conj().T
    sqrt_dt = np.sqrt(dt)
    n_steps = int(round(plan.t_final / dt))
    sample_at = set(_sample_step_indices(n_steps, plan.sample_stride).tolist())

    rho = np.broadcast_to(plan.rho0, (n, spec.dim, spec.dim)).copy()
    singles = [rho.copy() for _ in range(n_ch)]

    acc = EnsembleAccumulator.for_plan(plan)
    times_idx = 0
    acc.add_time_sample(times_idx, _functional_values(acc.labels, rho, singles))
    times_idx += 1
    tail_start = plan.resolved_tail_start()
    tail_sums = np.zeros((len(acc.labels), n))
    tail_count = 0

    def lindblad(mat: np.ndarray) -> np.ndarray:
        return lop @ mat @ lh - 0.5 * (ldl @ mat + mat @ ldl)

    def finish(mat: np.ndarray) -> np.ndarray:
        mat = rot @ mat @ rot_h
        mat = 0.5 * (mat + mat.conj().transpose(0, 2, 1))
        tr = np.einsum("nii->n", mat).real
        return mat / tr[:, None, None]

    block = _rng_block_steps(n * max(n_ch, 1))
    dw_block = np.empty((0, n, n_ch))
    for s in range(n_steps):
        if s % block == 0:
            dw_block = sqrt_dt * batch_normals_block(
                plan.seed, ids, s, min(block, n_steps - s), n_ch
            )
        dw = dw_block[s % block]
        lr, rl = lop @ rho, rho @ lh
        delta = dt * lindblad(rho)
        t_super = np.empty((n_ch, n))
        for i in range(n_ch):
            ph = ctx.phases[i]
            t_i = (ph * np.einsum("nii->n", lr) + np.conj(ph) * np.einsum("nii->n", rl)).real
            t_super[i] = t_i
            coef = ctx.sqrt_eta[i] * dw[:, i]
            delta += coef[:, None, None] * (ph * lr + np.conj(ph) * rl) - (
                coef * t_i
            )[:, None, None] * rho
        new_rho = finish(rho + delta)

        new_singles = []
        for i in range(n_ch):
            r_i = singles[i]
            ph = ctx.phases[i]
            lri, ril = lop @ r_i, r_i @ lh
            t_i = (ph * np.einsum("nii->n", lri) + np.conj(ph) * np.einsum("nii->n", ril)).real
            innovation = ctx.sqrt_eta[i] * dw[:, i] + ctx.efficiencies[i] * dt * (
                t_super[i] - t_i
            )
            delta_i = dt * lindblad(r_i)
            delta_i += innovation[:, None, None] * (ph * lri + np.conj(ph) * ril)
            delta_i -= (innovation * t_i)[:, None, None] * r_i
            new_singles.append(finish(r_i + delta_i))
        rho, singles = new_rho, new_singles

        if s in sample_at:
            values = _functional_values(acc.labels, rho, singles)
            acc.add_time_sample(times_idx, values)
            times_idx += 1
            if (s + 1) * dt >= tail_start:
                tail_sums += values
                tail_count += 1

    acc.n_traj = n
    if tail_count:
        acc.add_tail_values(tail_sums / tail_count)
    if plan.keep_final_states:
        acc.add_final_states(rho)
    return acc


def run_ensemble(plan: EnsemblePlan, *, threads: int = 1, chunk: int = DEFAULT_CHUNK) -> EnsembleAccumulator:
    """Advance ``plan.n_traj`` trajectories and accumulate the estimators.

    The result is identical for any ``threads``/``chunk`` choice (streams are
    addressed per trajectory; accumulators merge in chunk order).
    """
    validate_density_matrix(plan.rho0)
    check_step_guards(plan.spec, plan.dt)
    ctx = make_step_context(plan.spec, plan.dt)
    if plan.spec.is_diffusive:
        advance = (
            _advance_diffusive_bloch_chunk if plan.spec.dim == 2 else _advance_diffusive_chunk
        )
    else:
        advance = _advance_jump_chunk
    chunks = [
        np.arange(lo + plan.stream_offset, min(lo + chunk, plan.n_traj) + plan.stream_offset)
        for lo in range(0, plan.n_traj, chunk)
    ]
    if threads > 1 and len(chunks) > 1:
        with ThreadPoolExecutor(max_workers=threads) as pool:
            parts = list(pool.map(lambda ids: advance(plan, ctx, ids), chunks))
    else:
        parts = [advance(plan, ctx, ids) for ids in chunks]
    acc = parts[0]
    for part in parts[1:]:
        acc = acc.merge(part)
    return acc
