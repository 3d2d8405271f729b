"""Piecewise-constant controls and their exact propagation.

Each segment Hamiltonian ``delta sx + a_k sz`` is constant, so every factor of
the time-ordered product is a closed-form SU(2) exponential.  A
:class:`PropagationTrace` caches the cumulative propagators ``U_t`` at the
segment boundaries and at Gauss-Legendre nodes inside every segment; the
gradient and Hessian code reuses this cache instead of re-propagating.
"""
from __future__ import annotations

from dataclasses import dataclass, field
from functools import lru_cache

import numpy as np

from .linalg2 import IDENTITY, SIGMA_Z, conjugate_by, dagger, expm_su2, from_bloch

DEFAULT_NODES = 16


@dataclass(frozen=True)
class ControlPulse:
    """Control ``eps(t) = a_k`` on ``[t_{k-1}, t_k)``, with ``t_0 = 0`` and ``t_N = T``."""

    boundaries: np.ndarray
    amplitudes: np.ndarray

    def __post_init__(self):
        b = np.array(self.boundaries, dtype=float).reshape(-1)
        a = np.array(self.amplitudes, dtype=float).reshape(-1)
        if b.size < 2:
            raise ValueError("a pulse needs at least one segment")
        if b[0] != 0.0:
            raise ValueError("first boundary must be 0")
        if not np.all(np.isfinite(b)) or not np.all(np.diff(b) > 0):
            raise ValueError("boundaries must be finite and strictly increasing")
        if a.size != b.size - 1:
            raise ValueError(
                f"{a.size} amplitudes given for {b.size - 1} segments"
            )
        if not np.all(np.isfinite(a)):
            raise ValueError("amplitudes must be finite")
        b.setflags(write=False)
        a.setflags(write=False)
        object.__setattr__(self, "boundaries", b)
        object.__setattr__(self, "amplitudes", a)

    @classmethod
    def uniform(cls, n: int, total_time: float, amplitudes=0.0) -> "ControlPulse":
        if n < 1:
            raise ValueError("segment count must be >= 1")
        if not total_time > 0:
            raise ValueError("total time must be positive")
        b = total_time * np.arange(n + 1) / n
        b[-1] = total_time
        return cls(b, np.broadcast_to(np.asarray(amplitudes, dtype=float), (n,)))

    @property
    def T(self) -> float:
        return float(self.boundaries[-1])

    @property
    def n_segments(self) -> int:
        return self.amplitudes.size

    @property
    def durations(self) -> np.ndarray:
        return np.diff(self.boundaries)

    def with_amplitudes(self, amplitudes) -> "ControlPulse":
        return ControlPulse(self.boundaries, amplitudes)

    def energy(self) -> float:
        """Integral of ``eps(t)**2`` over ``[0, T]``."""
        return float(np.sum(self.amplitudes**2 * self.durations))

    def sup_norm(self) -> float:
        return float(np.max(np.abs(self.amplitudes)))

    def __call__(self, t):
        """Evaluate the control at time(s) ``t`` (right-continuous, last segment closed)."""
        t = np.asarray(t, dtype=float)
        k = np.searchsorted(self.boundaries, t, side="right") - 1
        k = np.clip(k, 0, self.n_segments - 1)
        return self.amplitudes[k]


@lru_cache(maxsize=32)
def gauss_legendre(n: int) -> tuple[np.ndarray, np.ndarray]:
    """Nodes and weights on ``[0, 1]``."""
    x, w = np.polynomial.legendre.leggauss(n)
    return 0.5 * (x + 1.0), 0.5 * w


def cumulative_propagators(amplitudes, durations, delta: float) -> np.ndarray:
    """``U_{t_k}`` for k = 0..N as an array of shape ``(N + 1, 2, 2)``."""
    steps = expm_su2(delta, amplitudes, durations)
    out = np.empty((len(steps) + 1, 2, 2), dtype=complex)
    out[0] = IDENTITY
    u = out[0]
    for k, step in enumerate(steps):
        u = step @ u
        out[k + 1] = u
    return out


@dataclass(frozen=True)
class PropagationTrace:
    pulse: ControlPulse
    delta: float
    boundary_propagators: np.ndarray
    node_times: np.ndarray
    node_weights: np.ndarray
    node_propagators: np.ndarray
    nodes_per_segment: int = field(default=DEFAULT_NODES)

    @property
    def U_T(self) -> np.ndarray:
        return self.boundary_propagators[-1]

    @property
    def node_segments(self) -> np.ndarray:
        """Segment index of each node."""
        return np.repeat(np.arange(self.pulse.n_segments), self.nodes_per_segment)


def propagate(
    pulse: ControlPulse, delta: float = 1.0, nodes_per_segment: int = DEFAULT_NODES
) -> PropagationTrace:
    if nodes_per_segment < 1:
        raise ValueError("nodes_per_segment must be >= 1")
    if not delta > 0:
        raise ValueError("delta must be positive")
    tau = pulse.durations
    bounds = cumulative_propagators(pulse.amplitudes, tau, delta)

    x, w = gauss_legendre(nodes_per_segment)
    offsets = tau[:, None] * x[None, :]
    sub = expm_su2(delta, pulse.amplitudes[:, None], offsets)
    nodes = sub @ bounds[:-1, None]
    times = pulse.boundaries[:-1, None] + offsets
    weights = tau[:, None] * w[None, :]

    for arr in (bounds, nodes, times, weights):
        arr.setflags(write=False)
    return PropagationTrace(
        pulse=pulse,
        delta=float(delta),
        boundary_propagators=bounds,
        node_times=times.reshape(-1),
        node_weights=weights.reshape(-1),
        node_propagators=nodes.reshape(-1, 2, 2),
        nodes_per_segment=nodes_per_segment,
    )


def evolve_state(trace: PropagationTrace, psi0) -> np.ndarray:
    """Final state ``U_T |psi0>``."""
    return trace.U_T @ np.asarray(psi0, dtype=complex)


def sample_V(trace: PropagationTrace) -> tuple[np.ndarray, np.ndarray]:
    """Node times and ``V_t = U_t^dagger sz U_t`` at every quadrature node.

    Returns ``(times, V)`` with ``V`` of shape ``(n_nodes, 2, 2)``, ordered by
    time.
    """
    return trace.node_times, conjugate_by(trace.node_propagators, SIGMA_Z)


def local_segment_integrals(amplitudes, durations, delta: float) -> np.ndarray:
    """``int_0^tau exp(iHs) sz exp(-iHs) ds`` for each segment Hamiltonian ``H``.

    With ``H = r n.sigma`` the z axis splits into a part along ``n`` (constant)
    and a part ``p`` perpendicular to it, which precesses at angular rate
    ``2r`` towards ``-n x p``.
    """
    a = np.asarray(amplitudes, dtype=float)
    tau = np.asarray(durations, dtype=float)
    r = np.hypot(delta, a)
    n = np.stack([delta / r, np.zeros_like(r), a / r], axis=-1)
    nz = n[..., 2]
    p = np.stack([-nz * n[..., 0], np.zeros_like(r), 1.0 - nz * n[..., 2]], axis=-1)
    q = -np.cross(n, p)
    phase = 2.0 * r * tau
    vec = (
        (tau * nz)[..., None] * n
        + (np.sin(phase) / (2.0 * r))[..., None] * p
        + ((1.0 - np.cos(phase)) / (2.0 * r))[..., None] * q
    )
    return from_bloch(vec)


def segment_V_integrals(trace: PropagationTrace) -> np.ndarray:
    """Exact ``int V_t dt`` over every segment, shape ``(N, 2, 2)``."""
    p = trace.pulse
    local = local_segment_integrals(p.amplitudes, p.durations, trace.delta)
    u = trace.boundary_propagators[:-1]
    return dagger(u) @ local @ u
