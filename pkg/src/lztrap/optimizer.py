"""BFGS ascent over piecewise-constant amplitudes and trap statistics.

The BFGS loop is a dense inverse-Hessian update with a backtracking Armijo
line search, applied to ``-J``.  Amplitudes are unconstrained: random starts
are drawn from ``[-A, A]`` but the search may leave that box.
"""
from __future__ import annotations

import math
import os
from concurrent.futures import ProcessPoolExecutor
from dataclasses import asdict, dataclass, field

import numpy as np

from .dynamics import ControlPulse
from .objectives import ObjectiveSpec, Transition, batch_values, value_deficit_gradient
from . import linalg2 as la

TRAP_THRESHOLD = 0.99


@dataclass(frozen=True)
class OptimizerConfig:
    max_iterations: int = 10_000
    grad_tolerance: float = 1e-8
    armijo: float = 1e-4
    shrink: float = 0.5
    max_backtracks: int = 40
    initial_scale: float | None = None  # None: 1 / max(1, |g0|)

    def __post_init__(self):
        if self.max_iterations < 1:
            raise ValueError("max_iterations must be >= 1")
        if not 0.0 < self.armijo < 0.5:
            raise ValueError("Armijo constant must lie in (0, 0.5)")
        if not 0.0 < self.shrink < 1.0:
            raise ValueError("shrink factor must lie in (0, 1)")
        if self.max_backtracks < 1:
            raise ValueError("max_backtracks must be >= 1")
        if self.grad_tolerance <= 0:
            raise ValueError("grad_tolerance must be positive")


CONVERGED = "converged"
ITERATION_CAP = "iteration_cap"
LINE_SEARCH_FAILED = "line_search_failed"
NUMERICAL_ABORT = "numerical_abort"


class NumericalAbort(RuntimeError):
    pass


@dataclass
class MaximizeResult:
    pulse: ControlPulse
    value: float
    gradient: np.ndarray
    trajectory: list[float]
    iterations: int
    reason: str
    evaluations: int = 0

    @property
    def grad_sup(self) -> float:
        return float(np.max(np.abs(self.gradient)))


def maximize(
    spec: ObjectiveSpec,
    initial: ControlPulse,
    delta: float = 1.0,
    config: OptimizerConfig = OptimizerConfig(),
) -> MaximizeResult:
    """Maximize the objective over the amplitudes of ``initial``.

    Returns the last accepted point; ``trajectory`` holds J after every
    accepted step (starting with the initial value) and is non-decreasing.
    Near the global maximum the Armijo test runs on the distance to the
    maximum rather than on J, which would round to 1 long before the gradient
    tolerance is reached.
    Raises :class:`NumericalAbort` on a non-finite value or gradient.
    """
    durations = initial.durations
    n_eval = 0

    def fg(x):
        nonlocal n_eval
        n_eval += 1
        v, d, g = value_deficit_gradient(spec, x, durations, delta)
        if not (np.isfinite(v) and np.isfinite(d) and np.all(np.isfinite(g))):
            raise NumericalAbort(f"non-finite objective or gradient at evaluation {n_eval}")
        return v, d, g

    x = np.array(initial.amplitudes, dtype=float)
    n = x.size
    value, deficit, grad = fg(x)
    trajectory = [value]
    scale = config.initial_scale
    if scale is None:
        scale = 1.0 / max(1.0, float(np.linalg.norm(grad)))
    H = scale * np.eye(n)

    reason = ITERATION_CAP
    it = 0
    while True:
        if np.max(np.abs(grad)) < config.grad_tolerance:
            reason = CONVERGED
            break
        if it >= config.max_iterations:
            break
        # ascent direction; H approximates the inverse of -Hessian
        p = H @ grad
        slope = grad @ p
        if slope <= 0:
            H = scale * np.eye(n)
            p = scale * grad
            slope = grad @ p

        step = 1.0
        for _ in range(config.max_backtracks):
            x_new = x + step * p
            v_new, d_new, g_new = fg(x_new)
            if _sufficient_increase(value, deficit, v_new, d_new, g_new @ p, step, slope, config.armijo):
                break
            step *= config.shrink
        else:
            reason = LINE_SEARCH_FAILED
            break

        s = x_new - x
        y = grad - g_new  # gradient change of -J
        sy = s @ y
        if sy > 1e-12 * np.linalg.norm(s) * np.linalg.norm(y):
            rho = 1.0 / sy
            Hy = H @ y
            H = (
                H
                - rho * (np.outer(s, Hy) + np.outer(Hy, s))
                + (rho * rho * (y @ Hy) + rho) * np.outer(s, s)
            )
        x, value, deficit, grad = x_new, v_new, d_new, g_new
        trajectory.append(value)
        it += 1

    return MaximizeResult(
        pulse=initial.with_amplitudes(x),
        value=value,
        gradient=grad,
        trajectory=trajectory,
        iterations=it,
        reason=reason,
        evaluations=n_eval,
    )


# absolute resolution of a J evaluation (product of N rounded 2x2 factors)
VALUE_NOISE = 1e-14


def _sufficient_increase(value, deficit, v_new, d_new, dslope_new, step, slope, c):
    """Armijo test, with the derivative form once the gain drops below round-off.

    The plain test compares whichever of J and (max - J) is smaller, as that
    one carries more significant digits.  When the predicted gain
    ``c * step * slope`` is below :data:`VALUE_NOISE` the value comparison is
    meaningless; then the step is accepted if J did not drop beyond the noise
    and the directional derivative satisfies ``phi'(step) >= -(1 - 2c) phi'(0)``,
    which is the Armijo condition on the local quadratic model.
    """
    gain = c * step * slope
    if deficit < abs(value):
        if d_new <= deficit - gain:
            return True
        not_worse = d_new <= deficit + VALUE_NOISE
    else:
        if v_new >= value + gain:
            return True
        not_worse = v_new >= value - VALUE_NOISE
    return step * slope < VALUE_NOISE and not_worse and dslope_new >= -(1.0 - 2.0 * c) * slope


# -- trap statistics -----------------------------------------------------------


def run_rng(base_seed: int, run_index: int) -> np.random.Generator:
    """Independent stream for one run; depends only on (seed, index)."""
    ss = np.random.SeedSequence(entropy=base_seed, spawn_key=(run_index,))
    return np.random.default_rng(ss)


@dataclass
class TrapRunRecord:
    seed: int
    run_index: int
    N: int
    T: float
    delta: float
    A: float
    initial_amplitudes: list[float]
    final_amplitudes: list[float]
    final_J: float
    iterations: int
    grad_sup: float
    reason: str
    trapped: bool | None
    threshold: float = TRAP_THRESHOLD
    trajectory: list[float] | None = field(default=None, repr=False)

    def to_dict(self) -> dict:
        d = asdict(self)
        if d["trajectory"] is None:
            del d["trajectory"]
        return d


@dataclass(frozen=True)
class TrapStats:
    N: int
    runs: int
    trapped: int
    aborted: int

    @property
    def completed(self) -> int:
        return self.runs - self.aborted

    @property
    def probability(self) -> float:
        return self.trapped / self.completed if self.completed else math.nan

    @property
    def stderr(self) -> float:
        p = self.probability
        return math.sqrt(p * (1.0 - p) / self.completed) if self.completed else math.nan


def single_run(
    spec: ObjectiveSpec,
    N: int,
    T: float,
    delta: float,
    A: float,
    base_seed: int,
    run_index: int,
    config: OptimizerConfig = OptimizerConfig(),
    threshold: float = TRAP_THRESHOLD,
    keep_trajectory: bool = False,
) -> TrapRunRecord:
    rng = run_rng(base_seed, run_index)
    a0 = rng.uniform(-A, A, size=N)
    pulse = ControlPulse.uniform(N, T, a0)
    try:
        res = maximize(spec, pulse, delta, config)
    except NumericalAbort:
        return TrapRunRecord(
            seed=base_seed, run_index=run_index, N=N, T=T, delta=delta, A=A,
            initial_amplitudes=a0.tolist(), final_amplitudes=[], final_J=math.nan,
            iterations=0, grad_sup=math.nan, reason=NUMERICAL_ABORT, trapped=None,
            threshold=threshold,
        )
    return TrapRunRecord(
        seed=base_seed, run_index=run_index, N=N, T=T, delta=delta, A=A,
        initial_amplitudes=a0.tolist(),
        final_amplitudes=res.pulse.amplitudes.tolist(),
        final_J=res.value,
        iterations=res.iterations,
        grad_sup=res.grad_sup,
        reason=res.reason,
        trapped=bool(res.value < threshold),
        threshold=threshold,
        trajectory=res.trajectory if keep_trajectory else None,
    )


def _run_chunk(args):
    spec, N, T, delta, A, base_seed, indices, config, threshold = args
    return [single_run(spec, N, T, delta, A, base_seed, i, config, threshold) for i in indices]


def default_workers() -> int:
    env = os.environ.get("LZTRAP_WORKERS")
    if env:
        return max(1, int(env))
    return 1


def trap_probability(
    spec: ObjectiveSpec | None = None,
    N: int = 15,
    T: float = 10.0,
    delta: float = 1.0,
    A: float = 10.0,
    runs: int = 1000,
    base_seed: int = 0,
    workers: int | None = None,
    config: OptimizerConfig = OptimizerConfig(),
    threshold: float = TRAP_THRESHOLD,
) -> tuple[TrapStats, list[TrapRunRecord]]:
    """Fraction of random-start BFGS runs that end below ``threshold``.

    Every run draws its start from its own seed stream, so the records do not
    depend on ``workers``.  Aborted runs are counted separately and excluded
    from the probability.
    """
    if runs < 1:
        raise ValueError("runs must be >= 1")
    if spec is None:
        spec = Transition(la.basis(0), la.basis(1))
    workers = workers or default_workers()
    indices = list(range(runs))
    if workers == 1:
        records = _run_chunk((spec, N, T, delta, A, base_seed, indices, config, threshold))
    else:
        chunks = [indices[k::workers] for k in range(workers)]
        jobs = [(spec, N, T, delta, A, base_seed, c, config, threshold) for c in chunks if c]
        with ProcessPoolExecutor(max_workers=workers) as pool:
            records = [r for chunk in pool.map(_run_chunk, jobs) for r in chunk]
    records.sort(key=lambda r: r.run_index)
    aborted = sum(r.reason == NUMERICAL_ABORT for r in records)
    trapped = sum(bool(r.trapped) for r in records)
    return TrapStats(N=N, runs=runs, trapped=trapped, aborted=aborted), records


# -- landscape scans -----------------------------------------------------------


def closed_form_single_segment(a, T: float, delta: float = 1.0):
    """``|<1|U_T|0>|^2`` for a constant control ``a`` (any ``delta``)."""
    a = np.asarray(a, dtype=float)
    r = np.hypot(delta, a)
    return (delta / r) ** 2 * np.sin(T * r) ** 2


@dataclass
class Scan:
    axes: list[np.ndarray]
    values: np.ndarray
    closed_form: np.ndarray | None = None

    @property
    def max_discrepancy(self) -> float | None:
        if self.closed_form is None:
            return None
        return float(np.max(np.abs(self.values - self.closed_form)))


def landscape_scan(
    spec: ObjectiveSpec,
    T: float,
    delta: float,
    axes,
) -> Scan:
    """Objective on a tensor grid of amplitudes for N = len(axes) in {1, 2}.

    The N=1 scan of the 0 -> 1 transition also carries the closed-form
    values.
    """
    axes = [np.asarray(ax, dtype=float).reshape(-1) for ax in axes]
    n = len(axes)
    if n not in (1, 2):
        raise ValueError("landscape scans support N = 1 or N = 2")
    grids = np.meshgrid(*axes, indexing="ij")
    amps = np.stack([g.reshape(-1) for g in grids], axis=-1)
    tau = np.full(n, T / n)
    tau[-1] = T - tau[:-1].sum()
    steps = [la.expm_su2(delta, amps[:, k], tau[k]) for k in range(n)]
    u = steps[0]
    for s in steps[1:]:
        u = s @ u
    values = batch_values(spec, u).reshape(grids[0].shape)
    closed = None
    if (
        n == 1
        and isinstance(spec, Transition)
        and abs(abs(spec.i[0]) - 1.0) < 1e-15
        and abs(abs(spec.f[1]) - 1.0) < 1e-15
    ):
        closed = closed_form_single_segment(axes[0], T, delta)
    return Scan(axes=axes, values=values, closed_form=closed)


def interior_local_maxima(values: np.ndarray) -> list[tuple[int, ...]]:
    """Grid indices strictly greater than all 3**d - 1 neighbours (edges excluded)."""
    v = np.asarray(values)
    d = v.ndim
    core = tuple(slice(1, -1) for _ in range(d))
    mask = np.ones(tuple(s - 2 for s in v.shape), dtype=bool)
    for offset in np.ndindex(*(3,) * d):
        if all(o == 1 for o in offset):
            continue
        sl = tuple(slice(o, o + s - 2) for o, s in zip(offset, v.shape))
        mask &= v[core] > v[sl]
    return [tuple(int(i) + 1 for i in idx) for idx in np.argwhere(mask)]
