"""Complex 2x2 algebra and closed-form SU(2) exponentials.

Matrices are plain ``numpy`` arrays of shape ``(..., 2, 2)`` and states are
arrays of shape ``(2,)``.  The helpers here validate them (unitarity,
normalization, hermiticity) at construction so that downstream code can rely
on those contracts.
"""
from __future__ import annotations

import numpy as np

UNITARY_TOL = 1e-10
STATE_TOL = 1e-12

IDENTITY = np.eye(2, dtype=complex)
SIGMA_X = np.array([[0, 1], [1, 0]], dtype=complex)
SIGMA_Y = np.array([[0, -1j], [1j, 0]], dtype=complex)
SIGMA_Z = np.array([[1, 0], [0, -1]], dtype=complex)

_PAULI = {"x": SIGMA_X, "y": SIGMA_Y, "z": SIGMA_Z}

for _m in (IDENTITY, SIGMA_X, SIGMA_Y, SIGMA_Z):
    _m.setflags(write=False)


def pauli(axis: str) -> np.ndarray:
    """Return a fresh copy of the Pauli matrix for ``axis`` in {x, y, z}."""
    try:
        return _PAULI[axis.lower()].copy()
    except (KeyError, AttributeError):
        raise ValueError(f"unknown Pauli axis {axis!r}") from None


def dagger(a: np.ndarray) -> np.ndarray:
    return np.conj(np.swapaxes(a, -1, -2))


def allclose(a, b, atol: float) -> bool:
    """Entrywise equality with an explicit absolute tolerance."""
    return bool(np.max(np.abs(np.asarray(a) - np.asarray(b)), initial=0.0) <= atol)


def hermitian(m) -> np.ndarray:
    """Build an exactly Hermitian 2x2 matrix from the upper triangle of ``m``.

    The diagonal is made real and the lower entry mirrored, so the result
    satisfies ``H == H^dagger`` bit for bit.
    """
    m = np.asarray(m, dtype=complex)
    if m.shape != (2, 2):
        raise ValueError(f"expected a 2x2 matrix, got shape {m.shape}")
    h = np.empty((2, 2), dtype=complex)
    h[0, 0] = m[0, 0].real
    h[1, 1] = m[1, 1].real
    h[0, 1] = m[0, 1]
    h[1, 0] = np.conj(m[0, 1])
    return h


def is_hermitian(m, atol: float = STATE_TOL) -> bool:
    m = np.asarray(m)
    return allclose(m, dagger(m), atol)


def as_unitary(m, atol: float = UNITARY_TOL) -> np.ndarray:
    """Validate ``m`` as a 2x2 unitary and return it as a complex array."""
    u = np.asarray(m, dtype=complex)
    if u.shape != (2, 2):
        raise ValueError(f"expected a 2x2 matrix, got shape {u.shape}")
    if not np.all(np.isfinite(u)):
        raise ValueError("matrix has non-finite entries")
    if not allclose(dagger(u) @ u, IDENTITY, atol):
        raise ValueError("matrix is not unitary within tolerance")
    if abs(abs(np.linalg.det(u)) - 1.0) > atol:
        raise ValueError("determinant modulus differs from 1")
    return u


def state(amplitudes, normalize: bool = False) -> np.ndarray:
    """Return a normalized two-component state vector.

    With ``normalize=False`` the input must already have unit norm (within
    1e-12); otherwise it is rescaled.
    """
    v = np.asarray(amplitudes, dtype=complex).reshape(-1)
    if v.shape != (2,):
        raise ValueError(f"a state needs two amplitudes, got {v.size}")
    if not np.all(np.isfinite(v)):
        raise ValueError("state has non-finite amplitudes")
    n = np.linalg.norm(v)
    if normalize:
        if n == 0.0:
            raise ValueError("cannot normalize the zero vector")
        return v / n
    if abs(n - 1.0) > STATE_TOL:
        raise ValueError(f"state is not normalized (norm {n:.15g})")
    return v


def basis(k: int) -> np.ndarray:
    if k not in (0, 1):
        raise ValueError("basis index must be 0 or 1")
    v = np.zeros(2, dtype=complex)
    v[k] = 1.0
    return v


def orthogonal_complement(psi) -> np.ndarray:
    """Unit state orthogonal to ``psi``: (a, b) -> (-conj(b), conj(a))."""
    a, b = np.asarray(psi, dtype=complex)
    return np.array([-np.conj(b), np.conj(a)])


def expm_su2(delta, eps, tau) -> np.ndarray:
    """Exact propagator ``exp(-i tau (delta sx + eps sz))``.

    Uses ``cos(r tau) I - i sin(r tau) (delta sx + eps sz) / r`` with
    ``r = sqrt(delta**2 + eps**2)``.  ``eps`` and ``tau`` broadcast against
    each other; the result has shape ``broadcast_shape + (2, 2)``.
    """
    eps = np.asarray(eps, dtype=float)
    tau = np.asarray(tau, dtype=float)
    if not (np.isfinite(delta) and np.all(np.isfinite(eps)) and np.all(np.isfinite(tau))):
        raise ValueError("expm_su2 requires finite inputs")
    if delta <= 0:
        raise ValueError("delta must be positive")
    eps, tau = np.broadcast_arrays(eps, tau)
    r = np.hypot(delta, eps)
    c = np.cos(r * tau)
    s = np.sin(r * tau) / r
    out = np.empty(eps.shape + (2, 2), dtype=complex)
    out[..., 0, 0] = c - 1j * s * eps
    out[..., 1, 1] = c + 1j * s * eps
    out[..., 0, 1] = -1j * s * delta
    out[..., 1, 0] = -1j * s * delta
    return out


def conjugate_by(u, a) -> np.ndarray:
    """Return ``U^dagger A U`` (broadcasts over leading axes)."""
    u = np.asarray(u)
    return dagger(u) @ np.asarray(a) @ u


def bloch_vector(a) -> np.ndarray:
    """Components ``(x, y, z)`` of ``a = x sx + y sy + z sz + c I``."""
    a = np.asarray(a)
    x = 0.5 * (a[..., 0, 1] + a[..., 1, 0])
    y = 0.5j * (a[..., 0, 1] - a[..., 1, 0])
    z = 0.5 * (a[..., 0, 0] - a[..., 1, 1])
    return np.stack([x, y, z], axis=-1)


def from_bloch(v) -> np.ndarray:
    """Inverse of :func:`bloch_vector` for traceless matrices."""
    v = np.asarray(v)
    out = np.empty(v.shape[:-1] + (2, 2), dtype=complex)
    x, y, z = v[..., 0], v[..., 1], v[..., 2]
    out[..., 0, 0] = z
    out[..., 1, 1] = -z
    out[..., 0, 1] = x - 1j * y
    out[..., 1, 0] = x + 1j * y
    return out
