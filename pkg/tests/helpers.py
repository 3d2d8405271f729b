"""Shared test fixtures that are not oracles."""
import numpy as np

from lztrap.dynamics import ControlPulse


def random_pulse(rng, n=None, total=None, spread=3.0, uniform=False):
    n = n if n is not None else int(rng.integers(1, 21))
    total = total if total is not None else float(rng.uniform(0.5, 5.0))
    amps = rng.uniform(-spread, spread, n)
    if uniform:
        return ControlPulse.uniform(n, total, amps)
    cuts = np.sort(rng.uniform(0.05, 1.0, n))
    b = np.concatenate([[0.0], total * np.cumsum(cuts) / np.sum(cuts)])
    b[-1] = total
    return ControlPulse(b, amps)


def random_state(rng):
    v = rng.normal(size=2) + 1j * rng.normal(size=2)
    return v / np.linalg.norm(v)


def random_unitary(rng):
    z = rng.normal(size=(2, 2)) + 1j * rng.normal(size=(2, 2))
    q, r = np.linalg.qr(z)
    return q * (np.diag(r) / abs(np.diag(r)))


def random_spec(rng, kind):
    from lztrap.objectives import Gate, Observable, Transition

    if kind == "transition":
        return Transition(random_state(rng), random_state(rng))
    if kind == "observable":
        p = rng.uniform()
        psi, phi = random_state(rng), random_state(rng)
        rho = p * np.outer(psi, psi.conj()) + (1 - p) * np.outer(phi, phi.conj())
        rho /= np.trace(rho).real
        h = rng.normal(size=(2, 2)) + 1j * rng.normal(size=(2, 2))
        return Observable(rho, 0.5 * (h + h.conj().T))
    return Gate(random_unitary(rng))
