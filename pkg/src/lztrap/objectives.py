"""Objectives on the final propagator, their gradients and critical-point tests.

All three objectives depend on ``U_T`` only.  A first-order variation of the
control changes the final propagator by ``dU_T = -i U_T int V_t deps(t) dt``
with ``V_t = U_t^dagger sz U_t``.  For each objective there is a matrix ``K``
(built from ``U_T`` and the objective data) such that the functional gradient
is ``l(t) = Im Tr(K V_t)``; this single form covers all three cases.
"""
from __future__ import annotations

import enum
import logging
from dataclasses import dataclass
from typing import Callable, Union

import numpy as np

from . import linalg2 as la
from .dynamics import (
    ControlPulse,
    PropagationTrace,
    cumulative_propagators,
    gauss_legendre,
    local_segment_integrals,
    sample_V,
    segment_V_integrals,
)

log = logging.getLogger(__name__)


@dataclass(frozen=True)
class Transition:
    """Probability ``|<f|U_T|i>|^2``."""

    i: np.ndarray
    f: np.ndarray

    def __post_init__(self):
        object.__setattr__(self, "i", la.state(self.i))
        object.__setattr__(self, "f", la.state(self.f))


@dataclass(frozen=True)
class Observable:
    """Expectation ``Tr[U_T rho0 U_T^dagger O]``."""

    rho0: np.ndarray
    O: np.ndarray

    def __post_init__(self):
        rho = np.asarray(self.rho0, dtype=complex)
        obs = np.asarray(self.O, dtype=complex)
        if rho.shape != (2, 2) or obs.shape != (2, 2):
            raise ValueError("rho0 and O must be 2x2")
        if not la.is_hermitian(rho, 1e-10):
            raise ValueError("rho0 must be Hermitian")
        if abs(np.trace(rho) - 1.0) > 1e-10:
            raise ValueError("rho0 must have unit trace")
        if np.min(np.linalg.eigvalsh(rho)) < -1e-10:
            raise ValueError("rho0 must be positive semidefinite")
        if not la.is_hermitian(obs, 1e-12):
            raise ValueError("O must be Hermitian")
        object.__setattr__(self, "rho0", la.hermitian(rho))
        object.__setattr__(self, "O", la.hermitian(obs))

    def bounds(self) -> tuple[float, float]:
        """Min and max of the objective over all of U(2)."""
        p = np.sort(np.linalg.eigvalsh(self.rho0))[::-1]
        o = np.sort(np.linalg.eigvalsh(self.O))[::-1]
        return float(p @ o[::-1]), float(p @ o)


@dataclass(frozen=True)
class Gate:
    """Phase-insensitive gate fidelity ``|Tr(W^dagger U_T)|^2 / 4``."""

    W: np.ndarray

    def __post_init__(self):
        object.__setattr__(self, "W", la.as_unitary(self.W))


ObjectiveSpec = Union[Transition, Observable, Gate]


def objective_bounds(spec: ObjectiveSpec) -> tuple[float, float]:
    if isinstance(spec, Observable):
        return spec.bounds()
    return 0.0, 1.0


def _value_and_kernel(spec: ObjectiveSpec, u: np.ndarray) -> tuple[float, np.ndarray]:
    """Objective value and the matrix ``K`` with ``l(t) = Im Tr(K V_t)``."""
    value, _, k = _evaluate(spec, u)
    return value, k


def _evaluate(spec: ObjectiveSpec, u: np.ndarray) -> tuple[float, float, np.ndarray]:
    """Value, distance to the global maximum, and gradient kernel ``K``.

    The distance is computed directly (not as ``max - J``) so that it keeps
    full relative precision next to the optimum, where the gradient scales
    like its square root.
    """
    if isinstance(spec, Transition):
        fu = spec.f.conj() @ u
        z = fu @ spec.i
        miss = la.orthogonal_complement(spec.f).conj() @ u @ spec.i
        return float(abs(z) ** 2), float(abs(miss) ** 2), 2.0 * np.conj(z) * np.outer(spec.i, fu)
    if isinstance(spec, Observable):
        m = la.dagger(u) @ spec.O @ u
        value = float(np.real(np.trace(spec.rho0 @ m)))
        return value, spec.bounds()[1] - value, 2.0 * spec.rho0 @ m
    if isinstance(spec, Gate):
        wu = la.dagger(spec.W) @ u
        tr = np.trace(wu)
        # Pauli completeness: |Tr M|^2 + sum_k |Tr(M s_k)|^2 = 4 for unitary M
        off = sum(abs(np.trace(wu @ s)) ** 2 for s in (la.SIGMA_X, la.SIGMA_Y, la.SIGMA_Z))
        return float(abs(tr) ** 2 / 4.0), float(off / 4.0), 0.5 * np.conj(tr) * wu
    raise TypeError(f"unsupported objective spec {type(spec).__name__}")


def value_from_unitary(spec: ObjectiveSpec, u) -> float:
    return _value_and_kernel(spec, np.asarray(u))[0]


def batch_values(spec: ObjectiveSpec, u) -> np.ndarray:
    """Objective for a stack of final propagators of shape ``(..., 2, 2)``."""
    u = np.asarray(u)
    if isinstance(spec, Transition):
        return np.abs(np.einsum("i,...ij,j->...", spec.f.conj(), u, spec.i)) ** 2
    if isinstance(spec, Observable):
        m = u @ spec.rho0 @ la.dagger(u)
        return np.real(np.einsum("...ij,ji->...", m, spec.O))
    if isinstance(spec, Gate):
        return np.abs(np.einsum("ji,...ji->...", spec.W.conj(), u)) ** 2 / 4.0
    raise TypeError(f"unsupported objective spec {type(spec).__name__}")


def evaluate(spec: ObjectiveSpec, trace: PropagationTrace) -> float:
    return _value_and_kernel(spec, trace.U_T)[0]


def value_and_gradient(
    spec: ObjectiveSpec, amplitudes, durations, delta: float
) -> tuple[float, np.ndarray]:
    """Objective and exact ``dJ/da_k`` without building quadrature nodes."""
    value, _, grad = value_deficit_gradient(spec, amplitudes, durations, delta)
    return value, grad


def value_deficit_gradient(
    spec: ObjectiveSpec, amplitudes, durations, delta: float
) -> tuple[float, float, np.ndarray]:
    """Objective, its distance to the maximum, and exact ``dJ/da_k``.

    This is the optimizer's inner loop.  The per-segment derivative uses the
    closed-form segment integral of ``V_t``, so it is exact for any segment
    length and amplitude.
    """
    amplitudes = np.asarray(amplitudes, dtype=float)
    durations = np.asarray(durations, dtype=float)
    bounds = cumulative_propagators(amplitudes, durations, delta)
    value, deficit, k = _evaluate(spec, bounds[-1])
    local = local_segment_integrals(amplitudes, durations, delta)
    u = bounds[:-1]
    # Im Tr(K U^dagger S U) = Im Tr(U K U^dagger S)
    rotated = u @ k @ la.dagger(u)
    grad = np.imag(np.einsum("kij,kji->k", rotated, local))
    return value, deficit, grad


@dataclass(frozen=True)
class GradientSample:
    """Functional gradient at quadrature nodes plus per-segment derivatives.

    ``segment_components`` are the exact segment integrals of ``l(t)``; the
    Gauss-Legendre sum of ``node_values`` reproduces them whenever the nodes
    resolve the in-segment oscillation (see :meth:`quadrature_components`).
    """

    node_times: np.ndarray
    node_values: np.ndarray
    node_weights: np.ndarray
    node_segments: np.ndarray
    segment_components: np.ndarray

    @property
    def sup_norm(self) -> float:
        return float(np.max(np.abs(self.node_values)))

    def quadrature_components(self) -> np.ndarray:
        return np.bincount(
            self.node_segments,
            weights=self.node_values * self.node_weights,
            minlength=self.segment_components.size,
        )


def gradient(spec: ObjectiveSpec, trace: PropagationTrace) -> GradientSample:
    _, k = _value_and_kernel(spec, trace.U_T)
    times, v = sample_V(trace)
    node_values = np.imag(np.einsum("ij,nji->n", k, v))
    seg = np.imag(np.einsum("ij,nji->n", k, segment_V_integrals(trace)))
    return GradientSample(
        node_times=times,
        node_values=node_values,
        node_weights=trace.node_weights,
        node_segments=trace.node_segments,
        segment_components=seg,
    )


def functional_gradient_at(spec: ObjectiveSpec, u_final, V) -> np.ndarray:
    """``l`` evaluated for arbitrary ``V_t`` matrices (shape ``(..., 2, 2)``)."""
    _, k = _value_and_kernel(spec, np.asarray(u_final))
    return np.imag(np.einsum("ij,...ji->...", k, V))


def hessian_diagonal(spec: ObjectiveSpec, trace: PropagationTrace) -> tuple[np.ndarray, np.ndarray]:
    """Equal-time Hessian ``H(t, t)`` at the quadrature nodes.

    The closed forms hold at an optimal control; evaluating them elsewhere
    gives a number without that meaning, so off-optimum use is logged.
    """
    times, v = sample_V(trace)
    if isinstance(spec, Gate):
        return times, np.full(times.shape, -2.0)
    if isinstance(spec, Transition):
        if evaluate(spec, trace) < 1.0 - 1e-6:
            log.warning("hessian_diagonal called away from an optimum (J < 1 - 1e-6)")
        i_perp = la.orthogonal_complement(spec.i)
        amp = np.einsum("i,nij,j->n", spec.i.conj(), v, i_perp)
        return times, -2.0 * np.abs(amp) ** 2
    raise NotImplementedError(
        f"no equal-time Hessian formula for {type(spec).__name__} objectives"
    )


class Criticality(enum.Enum):
    GLOBAL_MAX = "GlobalMax"
    GLOBAL_MIN = "GlobalMin"
    ZERO_CONTROL = "ZeroControl"
    NOT_CRITICAL = "NotCritical"
    UNRESOLVED = "Unresolved"


@dataclass(frozen=True)
class Tolerances:
    grad: float = 1e-8
    value: float = 1e-6
    zero_control: float = 1e-6


@dataclass(frozen=True)
class CriticalityVerdict:
    kind: Criticality
    value: float
    overlap: float
    grad_sup: float
    pulse_sup: float


def classify_critical(
    spec: ObjectiveSpec,
    trace: PropagationTrace,
    tol: Tolerances = Tolerances(),
    gradient_source: str = "nodes",
) -> CriticalityVerdict:
    """Sort a control into the only critical classes the LZ landscape allows.

    ``gradient_source="nodes"`` tests the functional gradient at every
    quadrature node; ``"segments"`` tests ``dJ/da_k``, the criticality notion
    of the finite-dimensional piecewise-constant problem.  A critical control
    that is neither optimal nor zero is returned as ``UNRESOLVED`` and logged.
    """
    g = gradient(spec, trace)
    if gradient_source == "nodes":
        grad_sup = g.sup_norm
    elif gradient_source == "segments":
        grad_sup = float(np.max(np.abs(g.segment_components)))
    else:
        raise ValueError(f"unknown gradient source {gradient_source!r}")
    value = evaluate(spec, trace)
    if isinstance(spec, Transition):
        overlap = float(abs(spec.i.conj() @ la.dagger(trace.U_T) @ spec.f))
    else:
        overlap = float(np.sqrt(max(value, 0.0)))
    pulse_sup = trace.pulse.sup_norm()
    lo, hi = objective_bounds(spec)

    if grad_sup >= tol.grad:
        kind = Criticality.NOT_CRITICAL
    elif abs(value - hi) <= tol.value:
        kind = Criticality.GLOBAL_MAX
    elif abs(value - lo) <= tol.value:
        kind = Criticality.GLOBAL_MIN
    elif pulse_sup < tol.zero_control:
        kind = Criticality.ZERO_CONTROL
    else:
        kind = Criticality.UNRESOLVED
        log.error(
            "critical control is neither optimal nor zero: J=%.17g grad=%.3e sup=%.3e",
            value, grad_sup, pulse_sup,
        )
    return CriticalityVerdict(kind, value, overlap, grad_sup, pulse_sup)


# -- second-order expansion around the zero control ---------------------------


@dataclass(frozen=True)
class SecondOrder:
    first: float
    second: float
    alpha: float
    initial_value: float


def zero_control_alpha(spec: Transition, T: float, delta: float = 1.0) -> float:
    """``L(sx)`` for the free evolution ``U_T = exp(-i T delta sx)``."""
    u = la.expm_su2(delta, 0.0, T)
    return float(functional_gradient_at(spec, u, la.SIGMA_X))


def _free_V(t, delta):
    # U_t = exp(-i delta t sx)  =>  V_t = cos(2 delta t) sz + sin(2 delta t) sy
    t = np.asarray(t, dtype=float)[..., None, None]
    return np.cos(2 * delta * t) * la.SIGMA_Z + np.sin(2 * delta * t) * la.SIGMA_Y


def second_order_expansion(
    spec: Transition,
    variation: Callable[[np.ndarray], np.ndarray],
    T: float,
    support: tuple[float, float] | None = None,
    delta: float = 1.0,
    nodes: int = 64,
) -> SecondOrder:
    """First and second variations of ``J`` around ``eps = 0``.

    Writes ``U_T = exp(-i T delta sx) W_T`` and expands
    ``W_T = I + A1 + A2 + ...`` with ``A1 = -i int deps V`` and
    ``A2 = -int_{t2 < t1} deps(t1) deps(t2) V_t1 V_t2``.  ``variation`` must be
    smooth on ``support`` (default ``[0, T]``) and vanish outside it; the
    integrals use Gauss-Legendre on the interval and on the ordered simplex.
    """
    if not isinstance(spec, Transition):
        raise TypeError("the expansion is implemented for transition objectives")
    lo, hi = support if support is not None else (0.0, T)
    if not 0.0 <= lo < hi:
        raise ValueError("support must be a non-empty interval in [0, T]")
    if T < hi:
        raise ValueError(f"T={T} is shorter than the variation support end {hi}")

    x, w = gauss_legendre(nodes)
    t1 = lo + (hi - lo) * x
    w1 = (hi - lo) * w
    g1 = np.asarray(variation(t1), dtype=float)
    v1 = _free_V(t1, delta)

    a1 = -1j * np.einsum("n,n,nij->ij", w1, g1, v1)

    # inner integral over [lo, t1] for every outer node
    t2 = lo + (t1[:, None] - lo) * x[None, :]
    w2 = (t1[:, None] - lo) * w[None, :]
    g2 = np.asarray(variation(t2), dtype=float)
    v2 = _free_V(t2, delta)
    inner = np.einsum("nm,nm,nmij->nij", w2, g2, v2)
    a2 = -np.einsum("n,n,nij,njk->ik", w1, g1, v1, inner)

    # <f'| = <f| exp(-i T delta sx)
    f_row = spec.f.conj() @ la.expm_su2(delta, 0.0, T)
    c = f_row @ spec.i
    m1 = f_row @ a1 @ spec.i
    m2 = f_row @ a2 @ spec.i
    first = 2.0 * np.real(np.conj(c) * m1)
    second = abs(m1) ** 2 + 2.0 * np.real(np.conj(c) * m2)
    return SecondOrder(
        first=float(first),
        second=float(second),
        alpha=zero_control_alpha(spec, T, delta),
        initial_value=float(abs(c) ** 2),
    )


def box_variation(lo: float = 0.0, hi: float = np.pi):
    """Indicator of ``[lo, hi]``."""
    def f(t):
        t = np.asarray(t, dtype=float)
        return ((t >= lo) & (t <= hi)).astype(float)
    return f


def cosine_variation(freq: float = 4.0, lo: float = 0.0, hi: float = np.pi):
    """``cos(freq t)`` on ``[lo, hi]``, zero elsewhere."""
    def f(t):
        t = np.asarray(t, dtype=float)
        return np.where((t >= lo) & (t <= hi), np.cos(freq * t), 0.0)
    return f


def nonlinear_second_variation(
    spec: Transition,
    variation: Callable[[np.ndarray], np.ndarray],
    T: float,
    support: tuple[float, float],
    scales=(1e-2, 1e-3),
    segments: int = 4000,
    delta: float = 1.0,
) -> tuple[float, list[float]]:
    """Second variation around ``eps = 0`` from full propagation.

    Samples ``variation`` at the midpoints of ``segments`` equal cells on
    ``support`` (zero control elsewhere), evaluates
    ``R(s) = (J(s deps) - J(0)) / s**2`` for the two ``scales`` and removes the
    leading ``O(s)`` term by Richardson extrapolation.  Returns the
    extrapolated value and the raw ``R(s)``.
    """
    from .dynamics import propagate

    lo, hi = support
    cells = lo + (hi - lo) * np.arange(segments + 1) / segments
    mids = 0.5 * (cells[:-1] + cells[1:])
    shape = np.asarray(variation(mids), dtype=float)
    bounds = list(cells)
    amps = list(shape)
    if lo > 0:
        bounds = [0.0] + bounds
        amps = [0.0] + amps
    if hi < T:
        bounds = bounds + [T]
        amps = amps + [0.0]
    base = ControlPulse(bounds, np.zeros(len(amps)))
    j0 = evaluate(spec, propagate(base, delta, 1))
    ratios = []
    for s in scales:
        js = evaluate(spec, propagate(base.with_amplitudes(s * np.asarray(amps)), delta, 1))
        ratios.append((js - j0) / s**2)
    s1, s2 = scales
    r1, r2 = ratios
    extrapolated = (s1 * r2 - s2 * r1) / (s1 - s2)
    return float(extrapolated), [float(r) for r in ratios]
