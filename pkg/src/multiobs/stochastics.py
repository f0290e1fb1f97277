"""Deterministic, seedable random streams for trajectory ensembles.

Randomness is addressed, not consumed: trajectory ``stream_id`` and step
index map to a Philox4x64-10 counter block, so

* the same ``(seed, stream_id)`` always reproduces the same increments,
  bit-exactly, whether a trajectory is replayed alone or advanced inside a
  vectorized lock-step ensemble, and
* results never depend on scheduling or parallelism degree.

The Philox core is implemented here (vectorized over streams with uint64
numpy arithmetic) because numpy's ``Generator`` API cannot evaluate many
keyed streams in one call; the test suite pins the core bit-exactly against
``numpy.random.Philox``.

Per step a trajectory owns one or more counter *ticks* (4 uint64 words
each): jump schemes draw one uniform (word 0), diffusive schemes draw
standard normals via Box-Muller on consecutive word pairs.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .errors import StepSizeError

_M0 = np.uint64(0xD2E7470EE14C6C93)
_M1 = np.uint64(0xCA5A826395121157)
_W0 = np.uint64(0x9E3779B97F4A7C15)
_W1 = np.uint64(0xBB67AE8584CAA73B)
_MASK32 = np.uint64(0xFFFFFFFF)
_ROUNDS = 10

# Guard on the total per-step jump probability; violations indicate a
# misconfigured dt and raise instead of silently sub-stepping.
MAX_JUMP_PROBABILITY_PER_STEP = 0.1


def _mulhilo(a: np.uint64, b: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """Full 64x64 -> 128 bit product of scalar ``a`` with array ``b``."""
    lo = a * b
    a_hi, a_lo = a >> np.uint64(32), a & _MASK32
    b_hi, b_lo = b >> np.uint64(32), b & _MASK32
    t = a_hi * b_lo + ((a_lo * b_lo) >> np.uint64(32))
    w = a_lo * b_hi + (t & _MASK32)
    hi = a_hi * b_hi + (t >> np.uint64(32)) + (w >> np.uint64(32))
    return hi, lo


def philox_block(tick: np.ndarray, key0: np.ndarray, key1: np.ndarray) -> np.ndarray:
    """Philox4x64-10 output block for counter ``(tick, 0, 0, 0)``.

    ``tick``, ``key0`` and ``key1`` broadcast together; the result has shape
    ``broadcast_shape + (4,)`` of uint64 words.
    """
    tick, key0, key1 = np.broadcast_arrays(
        np.asarray(tick, dtype=np.uint64),
        np.asarray(key0, dtype=np.uint64),
        np.asarray(key1, dtype=np.uint64),
    )
    c0 = tick.copy()
    c1 = np.zeros_like(c0)
    c2 = np.zeros_like(c0)
    c3 = np.zeros_like(c0)
    k0 = key0.copy()
    k1 = key1.copy()
    with np.errstate(over="ignore"):
        for _ in range(_ROUNDS):
            hi0, lo0 = _mulhilo(_M0, c0)
            hi1, lo1 = _mulhilo(_M1, c2)
            c0, c1, c2, c3 = hi1 ^ c1 ^ k0, lo1, hi0 ^ c3 ^ k1, lo0
            k0 = k0 + _W0
            k1 = k1 + _W1
    return np.stack([c0, c1, c2, c3], axis=-1)


def _bits_to_uniform(bits: np.ndarray) -> np.ndarray:
    """Map uint64 words to doubles strictly inside (0, 1)."""
    return ((bits >> np.uint64(11)).astype(np.float64) + 0.5) * 2.0**-53


def _bits_to_normals(bits: np.ndarray) -> np.ndarray:
    """Box-Muller on consecutive word pairs along the last axis."""
    u = _bits_to_uniform(bits)
    if u.shape[-1] % 2:
        raise ValueError("Box-Muller needs an even number of words")
    u1 = u[..., 0::2]
    u2 = u[..., 1::2]
    r = np.sqrt(-2.0 * np.log(u1))
    ang = 2.0 * np.pi * u2
    out = np.empty_like(u)
    out[..., 0::2] = r * np.cos(ang)
    out[..., 1::2] = r * np.sin(ang)
    return out


def _ticks_per_step(n_normals: int) -> int:
    words = 2 * ((n_normals + 1) // 2)
    return max(1, (words + 3) // 4)


def batch_uniforms_block(
    seed: int, stream_ids: np.ndarray, step: int, n_steps: int
) -> np.ndarray:
    """``(n_steps, len(ids))`` uniforms in (0,1) for steps ``step..step+n_steps-1``.

    Addressing is per (stream, step), so drawing a block is bit-identical to
    drawing the same steps one at a time.
    """
    ids = np.asarray(stream_ids, dtype=np.uint64)
    ticks = (np.uint64(step) + np.arange(n_steps, dtype=np.uint64))[:, None]
    block = philox_block(ticks, np.uint64(seed), ids[None, :])
    return _bits_to_uniform(block[..., 0])


def batch_uniforms(seed: int, stream_ids: np.ndarray, step: int) -> np.ndarray:
    """One uniform in (0,1) per stream for the given step (jump schemes)."""
    return batch_uniforms_block(seed, stream_ids, step, 1)[0]


def batch_normals_block(
    seed: int, stream_ids: np.ndarray, step: int, n_steps: int, n_normals: int
) -> np.ndarray:
    """``(n_steps, len(ids), n_normals)`` standard normals for a step block."""
    ids = np.asarray(stream_ids, dtype=np.uint64)
    tps = _ticks_per_step(n_normals)
    base = (np.uint64(tps) * (np.uint64(step) + np.arange(n_steps, dtype=np.uint64)))[:, None]
    words = [
        philox_block(base + np.uint64(k), np.uint64(seed), ids[None, :]) for k in range(tps)
    ]
    return _bits_to_normals(np.concatenate(words, axis=-1))[..., :n_normals]


def batch_normals(seed: int, stream_ids: np.ndarray, step: int, n_normals: int) -> np.ndarray:
    """``(len(stream_ids), n_normals)`` standard normals for the given step."""
    return batch_normals_block(seed, stream_ids, step, 1, n_normals)[0]


@dataclass
class RngStream:
    """Counter-addressed random stream owned by one trajectory.

    Identical ``(seed, stream_id)`` give a bit-identical draw sequence;
    distinct ``stream_id`` values give statistically independent streams.
    The cursor ``step`` advances by one per engine step and can be reset for
    replay.
    """

    seed: int
    stream_id: int
    step: int = field(default=0)

    def uniform(self) -> float:
        u = batch_uniforms(self.seed, np.array([self.stream_id]), self.step)[0]
        self.step += 1
        return float(u)

    def normals(self, n: int) -> np.ndarray:
        z = batch_normals(self.seed, np.array([self.stream_id]), self.step, n)[0]
        self.step += 1
        return z

    def reset(self) -> None:
        self.step = 0


@dataclass(frozen=True)
class StepRecord:
    """Measurement outcomes of one engine step.

    ``jumps`` holds the 0/1 detection indicators per channel (at most one is
    set: the jump sampler draws a single categorical event per step, which
    realizes the delta_ij jump correlator exactly). ``wieners`` holds the
    per-channel Wiener increments of variance ``dt`` for diffusive channels,
    and is empty for jump channels.
    """

    dt: float
    jumps: tuple[int, ...] = ()
    wieners: tuple[float, ...] = ()

    def __post_init__(self) -> None:
        if self.dt <= 0:
            raise ValueError(f"dt must be positive, got {self.dt}")
        if sum(self.jumps) > 1:
            raise ValueError("at most one detection per step")


def sample_jump_event(rates: np.ndarray, dt: float, u: float) -> int | None:
    """Draw which channel (if any) detects during ``dt``.

    Channel ``i`` fires with probability ``rates[i]*dt``; ``None`` is
    returned with the remaining probability. A single categorical draw is
    used, so two channels can never fire in the same step. Raises
    :class:`StepSizeError` when the total probability exceeds the 0.1 step
    guard.
    """
    rates = np.asarray(rates, dtype=float)
    if rates.size and not np.all(np.isfinite(rates)):
        raise ValueError("rates must be finite")
    probs = rates * dt
    total = float(probs.sum())
    if total > MAX_JUMP_PROBABILITY_PER_STEP:
        raise StepSizeError(
            f"total jump probability {total:.3g} per step exceeds "
            f"{MAX_JUMP_PROBABILITY_PER_STEP}; reduce dt"
        )
    if u >= total:
        return None
    edges = np.cumsum(probs)
    return int(np.searchsorted(edges, u, side="right"))


def sample_wiener(n_channels: int, dt: float, z: np.ndarray) -> np.ndarray:
    """Scale standard normals ``z`` to Wiener increments of variance ``dt``."""
    if dt <= 0:
        raise ValueError(f"dt must be positive, got {dt}")
    z = np.asarray(z, dtype=float)
    if z.shape[-1] != n_channels:
        raise ValueError(f"expected {n_channels} normals, got shape {z.shape}")
    return np.sqrt(dt) * z
