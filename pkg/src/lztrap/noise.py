"""Weak white-noise sensitivity of optimal pulses and the speed-limit estimate.

For a control ``eps0 + rho(t) xi(t)`` with white noise of strength ``sigma**2``
(``E[xi(t) xi(t')] = sigma**2 delta(t - t')``) the averaged objective drops
by ``D = -(sigma**2 / 2) int H(t, t) rho(t)**2 dt`` to second order, where
``H(t, t)`` is the equal-time Hessian at the optimum.  ``rho = 1`` for additive
noise and ``rho = eps0`` for multiplicative noise.
"""
from __future__ import annotations

import enum
import logging
import math
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass

import numpy as np

from . import linalg2 as la
from .dynamics import ControlPulse, PropagationTrace, propagate
from .objectives import ObjectiveSpec, batch_values, evaluate, gradient, hessian_diagonal

log = logging.getLogger(__name__)

OPTIMUM_GRAD_WARN = 1e-6
# samples per RNG stream; fixed so results do not depend on the worker count
MC_CHUNK = 1000


class NoiseKind(enum.Enum):
    ADDITIVE = "additive"
    MULTIPLICATIVE = "multiplicative"


@dataclass(frozen=True)
class NoiseSpec:
    kind: NoiseKind
    sigma: float

    def __post_init__(self):
        object.__setattr__(self, "kind", NoiseKind(self.kind))
        if not (self.sigma >= 0 and math.isfinite(self.sigma)):
            raise ValueError("sigma must be finite and non-negative")

    def envelope(self, amplitudes) -> np.ndarray:
        a = np.asarray(amplitudes, dtype=float)
        return np.ones_like(a) if self.kind is NoiseKind.ADDITIVE else a


def decrease_bound(pulse: ControlPulse, noise: NoiseSpec) -> float:
    """``sigma**2 T`` for additive noise, ``sigma**2 E`` for multiplicative."""
    if noise.kind is NoiseKind.ADDITIVE:
        return noise.sigma**2 * pulse.T
    return noise.sigma**2 * pulse.energy()


def _resolving_nodes(pulse: ControlPulse, delta: float) -> int:
    # H(t, t) oscillates at up to 4 r inside a segment
    r = np.hypot(delta, pulse.amplitudes)
    phase = float(np.max(4.0 * r * pulse.durations))
    return int(math.ceil(phase / 2.0)) + 16


def predicted_decrease(
    spec: ObjectiveSpec, trace: PropagationTrace, noise: NoiseSpec
) -> float:
    """Second-order white-noise decrease ``D >= 0`` at an optimal control.

    Integrates the equal-time Hessian on the trace's Gauss-Legendre nodes,
    re-propagating on a finer node set if the segments are too long for the
    given one.  Logs a warning when the trace is not at a critical point.
    """
    g = gradient(spec, trace)
    if np.max(np.abs(g.segment_components)) > OPTIMUM_GRAD_WARN:
        log.warning(
            "predicted_decrease evaluated away from an optimum (|dJ/da|_inf = %.2e)",
            np.max(np.abs(g.segment_components)),
        )
    needed = _resolving_nodes(trace.pulse, trace.delta)
    if needed > trace.nodes_per_segment:
        trace = propagate(trace.pulse, trace.delta, needed)
    _, h = hessian_diagonal(spec, trace)
    env = noise.envelope(trace.pulse.amplitudes)
    env = np.repeat(env, trace.nodes_per_segment)
    d = -0.5 * noise.sigma**2 * float(np.sum(trace.node_weights * h * env**2))
    return max(d, 0.0)


@dataclass(frozen=True)
class NoiseReport:
    sigma: float
    kind: NoiseKind
    predicted: float
    bound: float
    energy: float
    noiseless: float
    mc_mean: float
    mc_stderr: float
    samples: int

    @property
    def mc_decrease(self) -> float:
        return self.noiseless - self.mc_mean


def _noise_grid(pulse: ControlPulse, dt: float) -> np.ndarray:
    """Number of noise steps in each segment; ``dt`` must divide every segment."""
    ratio = pulse.durations / dt
    steps = np.rint(ratio)
    if np.any(steps < 1) or np.any(np.abs(ratio - steps) > 1e-9 * np.maximum(ratio, 1.0)):
        raise ValueError(f"dt_noise={dt} does not divide every segment")
    return steps.astype(int)


def _mc_chunk(args):
    spec, pulse, noise, dt, delta, seed, chunk, n = args
    steps = _noise_grid(pulse, dt)
    base = np.repeat(pulse.amplitudes, steps)
    env = np.repeat(noise.envelope(pulse.amplitudes), steps)
    rng = np.random.default_rng(np.random.SeedSequence(entropy=seed, spawn_key=(chunk,)))
    xi = rng.standard_normal((n, base.size)) * (noise.sigma / math.sqrt(dt))
    amps = base[None, :] + env[None, :] * xi
    u = np.broadcast_to(la.IDENTITY, (n, 2, 2)).copy()
    for k in range(base.size):
        u = la.expm_su2(delta, amps[:, k], dt) @ u
    return batch_values(spec, u)


def monte_carlo_noisy_objective(
    spec: ObjectiveSpec,
    pulse: ControlPulse,
    noise: NoiseSpec,
    samples: int = 10_000,
    dt_noise: float = 0.0125,
    seed: int = 0,
    delta: float = 1.0,
    workers: int = 1,
) -> tuple[float, float]:
    """Sample mean and standard error of J under piecewise-constant white noise.

    Each noise step of length ``dt_noise`` holds an independent normal value
    of variance ``sigma**2 / dt_noise``, the discrete form of a delta-correlated
    process with strength ``sigma**2``.  Samples are drawn in fixed chunks of
    :data:`MC_CHUNK`, each with its own seed stream.
    """
    if samples < 2:
        raise ValueError("need at least two samples")
    if noise.sigma == 0.0:
        return evaluate(spec, propagate(pulse, delta, 1)), 0.0
    _noise_grid(pulse, dt_noise)
    sizes = [min(MC_CHUNK, samples - s) for s in range(0, samples, MC_CHUNK)]
    jobs = [(spec, pulse, noise, dt_noise, delta, seed, c, n) for c, n in enumerate(sizes)]
    if workers > 1:
        with ProcessPoolExecutor(max_workers=workers) as pool:
            parts = list(pool.map(_mc_chunk, jobs))
    else:
        parts = [_mc_chunk(j) for j in jobs]
    values = np.concatenate(parts)
    return float(values.mean()), float(values.std(ddof=1) / math.sqrt(values.size))


def noise_report(
    spec: ObjectiveSpec,
    trace: PropagationTrace,
    noise: NoiseSpec,
    samples: int = 10_000,
    dt_noise: float = 0.0125,
    seed: int = 0,
    workers: int = 1,
) -> NoiseReport:
    mean, err = monte_carlo_noisy_objective(
        spec, trace.pulse, noise, samples, dt_noise, seed, trace.delta, workers
    )
    return NoiseReport(
        sigma=noise.sigma,
        kind=noise.kind,
        predicted=predicted_decrease(spec, trace, noise),
        bound=decrease_bound(trace.pulse, noise),
        energy=trace.pulse.energy(),
        noiseless=evaluate(spec, trace),
        mc_mean=mean,
        mc_stderr=err,
        samples=samples,
    )


class UndefinedSpeedLimit(ValueError):
    pass


def qsl_time(i, f, delta: float = 1.0) -> float:
    """``arccos(|<i|f>|) / dE`` with ``dE`` the spread of ``delta sx`` in ``|i>``."""
    i = la.state(i)
    f = la.state(f)
    # <sx^2> - <sx>^2 = <sy>^2 + <sz>^2 for a pure state; this form does not cancel
    my = float(np.real(i.conj() @ la.SIGMA_Y @ i))
    mz = float(np.real(i.conj() @ la.SIGMA_Z @ i))
    spread = delta * math.hypot(my, mz)
    if spread < 1e-12:
        raise UndefinedSpeedLimit("initial state is an eigenstate of the free Hamiltonian")
    overlap = min(abs(complex(i.conj() @ f)), 1.0)
    return math.acos(overlap) / spread
