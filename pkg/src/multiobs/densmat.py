"""Dense complex linear algebra specialized to density matrices.

All states are plain ``numpy.ndarray`` objects of shape ``(d, d)`` and dtype
``complex128``; this module provides the constructors, validators and the
handful of functionals (purity, relative purity, two-dimensional fidelity)
the simulation engine and its estimators are built on.

Conventions: the two-level basis is ``(|e>, |g>)`` with ``sigma_z|e> = +|e>``,
so the lowering operator ``c = (sigma_x - i sigma_y)/2`` maps the excited
state to the ground state and ``c^dag c`` is the excited-state projector.
The Bloch parametrization is ``rho = (I + x sx + y sy + z sz)/2``; the ground
state is ``(0, 0, -1)``.
"""

from __future__ import annotations

from typing import NamedTuple

import numpy as np

from .errors import DimensionError, InvalidStateError

# Algebraic tolerances. Statistical checks downstream live at O(1e-2), so
# these leave plenty of headroom while still catching real defects.
HERMITICITY_TOL = 1e-10
TRACE_TOL = 1e-9
POSITIVITY_TOL = 1e-8
BLOCH_NORM_TOL = 1e-8
ROUNDTRIP_TOL = 1e-12


class BlochVector(NamedTuple):
    """Real three-vector ``(x, y, z)`` parametrizing a qubit state."""

    x: float
    y: float
    z: float


def make_atom_operators() -> tuple[np.ndarray, np.ndarray, np.ndarray, np.ndarray]:
    """Return ``(sigma_x, sigma_y, sigma_z, c)`` for the two-level atom.

    ``c = (sigma_x - i sigma_y)/2`` is the lowering operator: ``c|e> = |g>``,
    ``c|g> = 0``.
    """
    sx = np.array([[0.0, 1.0], [1.0, 0.0]], dtype=complex)
    sy = np.array([[0.0, -1.0j], [1.0j, 0.0]], dtype=complex)
    sz = np.array([[1.0, 0.0], [0.0, -1.0]], dtype=complex)
    c = 0.5 * (sx - 1.0j * sy)
    return sx, sy, sz, c


def make_fock_operators(n_trunc: int) -> tuple[np.ndarray, np.ndarray]:
    """Return truncated ladder operators ``(a, a_dag)`` on ``n_trunc`` levels.

    ``a|n> = sqrt(n)|n-1>``. The commutator ``[a, a_dag]`` equals the identity
    except in the top truncated level, where its diagonal entry is
    ``1 - n_trunc``; callers must keep the occupation well below ``n_trunc``.
    """
    if n_trunc < 2:
        raise DimensionError(f"Fock truncation must be at least 2, got {n_trunc}")
    a = np.zeros((n_trunc, n_trunc), dtype=complex)
    ns = np.arange(1, n_trunc)
    a[ns - 1, ns] = np.sqrt(ns)
    return a, a.conj().T


def validate_density_matrix(rho: np.ndarray, *, check_positivity: bool = True) -> np.ndarray:
    """Check the density-matrix invariants and return ``rho`` unchanged.

    Raises :class:`InvalidStateError` when Hermiticity (1e-10), unit trace
    (1e-9) or positivity (eigenvalues >= -1e-8) fail. Degenerate inputs are
    rejected, never sanitized. The eigenvalue check is O(d^3) and is meant for
    constructors and test/debug paths, not per-step use.
    """
    rho = np.asarray(rho, dtype=complex)
    if rho.ndim != 2 or rho.shape[0] != rho.shape[1]:
        raise DimensionError(f"density matrix must be square, got shape {rho.shape}")
    if not np.all(np.isfinite(rho.view(float))):
        raise InvalidStateError("density matrix has non-finite entries")
    herm_defect = np.max(np.abs(rho - rho.conj().T))
    if herm_defect > HERMITICITY_TOL:
        raise InvalidStateError(f"Hermiticity defect {herm_defect:.3e} exceeds {HERMITICITY_TOL}")
    trace_defect = abs(np.trace(rho) - 1.0)
    if trace_defect > TRACE_TOL:
        raise InvalidStateError(f"trace defect {trace_defect:.3e} exceeds {TRACE_TOL}")
    if check_positivity:
        min_eig = float(np.linalg.eigvalsh(rho)[0])
        if min_eig < -POSITIVITY_TOL:
            raise InvalidStateError(f"negative eigenvalue {min_eig:.3e} below -{POSITIVITY_TOL}")
    return rho


def bloch_to_density(b: BlochVector) -> np.ndarray:
    """Map ``(x, y, z)`` to ``(I + x sx + y sy + z sz)/2``."""
    x, y, z = float(b[0]), float(b[1]), float(b[2])
    norm2 = x * x + y * y + z * z
    if norm2 > 1.0 + BLOCH_NORM_TOL:
        raise InvalidStateError(f"Bloch vector norm {np.sqrt(norm2):.6f} exceeds 1")
    return 0.5 * np.array([[1.0 + z, x - 1.0j * y], [x + 1.0j * y, 1.0 - z]], dtype=complex)


def density_to_bloch(rho: np.ndarray) -> BlochVector:
    """Inverse of :func:`bloch_to_density`; requires a 2x2 matrix."""
    rho = np.asarray(rho, dtype=complex)
    if rho.shape != (2, 2):
        raise DimensionError(f"Bloch decomposition needs a 2x2 matrix, got {rho.shape}")
    x = float((rho[0, 1] + rho[1, 0]).real)
    y = float((rho[1, 0] - rho[0, 1]).imag)
    z = float((rho[0, 0] - rho[1, 1]).real)
    return BlochVector(x, y, z)


def _real_trace_product(a: np.ndarray, b: np.ndarray) -> float:
    prod = np.einsum("ab,ba->", a, b)
    if abs(prod.imag) > 1e-10:
        raise InvalidStateError(f"trace product has imaginary residue {prod.imag:.3e}")
    return float(prod.real)


def purity(rho: np.ndarray) -> float:
    """``Tr[rho^2]``. For Bloch vector r this is ``(1 + |r|^2)/2``."""
    return _real_trace_product(rho, rho)


def relative_purity(rho_1: np.ndarray, rho_2: np.ndarray) -> float:
    """``Tr[rho_1 rho_2]``: the overlap of two observers' state assignments.

    Symmetric in its arguments; equal to :func:`purity` when the states
    coincide.
    """
    rho_1 = np.asarray(rho_1)
    rho_2 = np.asarray(rho_2)
    if rho_1.shape != rho_2.shape:
        raise DimensionError(f"dimension mismatch: {rho_1.shape} vs {rho_2.shape}")
    return _real_trace_product(rho_1, rho_2)


def fidelity_2d(rho_1: np.ndarray, rho_2: np.ndarray) -> float:
    """Fidelity between two qubit states: ``Tr[r1 r2] + 2 sqrt(det r1 det r2)``.

    Only the two-dimensional closed form is supported; higher dimensions
    raise :class:`DimensionError`.
    """
    rho_1 = np.asarray(rho_1)
    rho_2 = np.asarray(rho_2)
    if rho_1.shape != (2, 2) or rho_2.shape != (2, 2):
        raise DimensionError("fidelity closed form is only available in dimension 2")
    # determinants of valid states are >= 0 up to the positivity tolerance
    det_prod = max(float((np.linalg.det(rho_1) * np.linalg.det(rho_2)).real), 0.0)
    return relative_purity(rho_1, rho_2) + 2.0 * np.sqrt(det_prod)


def maximally_mixed(dim: int = 2) -> np.ndarray:
    """``I/dim``."""
    if dim < 1:
        raise DimensionError(f"dimension must be positive, got {dim}")
    return np.eye(dim, dtype=complex) / dim


def ground_state() -> np.ndarray:
    """Qubit ground-state projector ``|g><g|`` (Bloch ``(0,0,-1)``)."""
    return bloch_to_density(BlochVector(0.0, 0.0, -1.0))


def excited_state() -> np.ndarray:
    """Qubit excited-state projector ``|e><e|`` (Bloch ``(0,0,+1)``)."""
    return bloch_to_density(BlochVector(0.0, 0.0, 1.0))


def coherent_vector(z: complex, n_trunc: int) -> np.ndarray:
    """Truncated coherent-state amplitude vector ``<n|z>``."""
    if n_trunc < 2:
        raise DimensionError(f"Fock truncation must be at least 2, got {n_trunc}")
    if z == 0:
        amps = np.zeros(n_trunc, dtype=complex)
        amps[0] = 1.0
        return amps
    ns = np.arange(n_trunc)
    log_fact = np.cumsum(np.concatenate(([0.0], np.log(np.arange(1, n_trunc)))))
    return np.exp(-0.5 * abs(z) ** 2 + ns * np.log(complex(z)) - 0.5 * log_fact)


def coherent_state(z: complex, n_trunc: int) -> np.ndarray:
    """Density matrix of a truncated coherent state ``|z><z|``, renormalized."""
    v = coherent_vector(z, n_trunc)
    rho = np.outer(v, v.conj())
    return rho / np.trace(rho).real


def cat_state(z: complex, n_trunc: int) -> np.ndarray:
    """Density matrix of the even superposition ``(|z> + |-z>)/sqrt(2)``, truncated."""
    v = coherent_vector(z, n_trunc) + coherent_vector(-z, n_trunc)
    rho = np.outer(v, v.conj())
    tr = np.trace(rho).real
    if tr <= 0:
        raise InvalidStateError("cat state has vanishing norm")
    return rho / tr
