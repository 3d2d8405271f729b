"""Independent reference computations used only by the tests."""
import math

import numpy as np
import scipy.linalg

SX = np.array([[0, 1], [1, 0]], dtype=complex)
SZ = np.array([[1, 0], [0, -1]], dtype=complex)


def expm_taylor(a, terms=30):
    """Matrix exponential by scaling, truncated Taylor series and squaring."""
    a = np.asarray(a, dtype=complex)
    norm = np.max(np.sum(np.abs(a), axis=1))
    k = max(0, int(math.ceil(math.log2(norm))) + 1) if norm > 0 else 0
    b = a / 2**k
    out = np.eye(a.shape[0], dtype=complex)
    term = np.eye(a.shape[0], dtype=complex)
    for n in range(1, terms):
        term = term @ b / n
        out = out + term
    for _ in range(k):
        out = out @ out
    return out


def product_propagator(amplitudes, durations, delta=1.0):
    """Time-ordered product of scipy ``expm`` segment factors."""
    u = np.eye(2, dtype=complex)
    for a, tau in zip(amplitudes, durations):
        u = scipy.linalg.expm(-1j * tau * (delta * SX + a * SZ)) @ u
    return u


def central_differences(f, x, h=1e-5):
    x = np.asarray(x, dtype=float)
    g = np.empty_like(x)
    for k in range(x.size):
        e = np.zeros_like(x)
        e[k] = h
        g[k] = (f(x + e) - f(x - e)) / (2 * h)
    return g


def single_segment_J(a, T, delta=1.0):
    r2 = delta**2 + np.asarray(a, dtype=float) ** 2
    return delta**2 * np.sin(T * np.sqrt(r2)) ** 2 / r2


def bisect(f, lo, hi, tol=1e-15, maxit=200):
    flo = f(lo)
    for _ in range(maxit):
        mid = 0.5 * (lo + hi)
        fm = f(mid)
        if (fm > 0) == (flo > 0):
            lo, flo = mid, fm
        else:
            hi = mid
        if hi - lo < tol:
            break
    return 0.5 * (lo + hi)


def single_segment_trap(T, bracket):
    """Local maximum of the N=1 closed form inside ``bracket`` (a > 0).

    Bisection on the analytic derivative of sin^2(T r) / r^2 with respect to
    ``r = sqrt(1 + a^2)``, i.e. on ``T r cos(T r) - sin(T r)`` (zero where
    tan x = x).
    """
    def deriv(a):
        x = T * math.sqrt(1 + a * a)
        return x * math.cos(x) - math.sin(x)

    return bisect(deriv, *bracket)


def single_segment_basin_mass(T, A, threshold=0.99, delta=1.0, points=200_001, pad=3.0):
    """Fraction of [-A, A] whose steepest-ascent basin ends below ``threshold``.

    Brute force: the closed-form landscape is sampled on a grid over
    ``[-pad A, pad A]``; every grid point climbs to a neighbouring larger value
    until it reaches a discrete local maximum.
    """
    a = np.linspace(-pad * A, pad * A, points)
    j = single_segment_J(a, T, delta)
    n = a.size
    nxt = np.arange(n)
    left = np.r_[-np.inf, j[:-1]]
    right = np.r_[j[1:], -np.inf]
    up_left = (left > j) & (left >= right)
    up_right = (right > j) & ~up_left
    nxt[up_left] -= 1
    nxt[up_right] += 1
    top = nxt.copy()
    for _ in range(points):
        new = nxt[top]
        if np.array_equal(new, top):
            break
        top = new
    inside = np.abs(a) <= A
    return float(np.mean(j[top][inside] < threshold))


def reference_value(spec, u):
    """Objective straight from its defining formula (no shared code paths)."""
    name = type(spec).__name__
    if name == "Transition":
        return abs(np.vdot(spec.f, u @ spec.i)) ** 2
    if name == "Observable":
        return float(np.trace(u @ spec.rho0 @ u.conj().T @ spec.O).real)
    return abs(np.trace(spec.W.conj().T @ u)) ** 2 / 4


def fd_gradient(spec, pulse, delta=1.0, h=1e-5):
    """Central differences of the objective in the amplitudes, scipy propagation."""
    tau = pulse.durations
    return central_differences(
        lambda a: reference_value(spec, product_propagator(a, tau, delta)), pulse.amplitudes, h
    )
