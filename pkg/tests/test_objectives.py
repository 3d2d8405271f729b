import logging
import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from helpers import random_pulse, random_spec, random_state, random_unitary
from lztrap import linalg2 as la
from lztrap.dynamics import ControlPulse, propagate
from lztrap.objectives import (
    Criticality,
    Gate,
    Observable,
    Tolerances,
    Transition,
    box_variation,
    classify_critical,
    cosine_variation,
    evaluate,
    gradient,
    hessian_diagonal,
    nonlinear_second_variation,
    objective_bounds,
    second_order_expansion,
    value_deficit_gradient,
    zero_control_alpha,
)
from lztrap.optimizer import maximize, run_rng
from oracles import fd_gradient, product_propagator, reference_value

KINDS = ["transition", "observable", "gate"]
WITNESS_F = np.array([1, np.exp(1j * np.pi / 4)]) / math.sqrt(2)


def L(spec, u, a):
    """2 Im[<i|U^dag|f><f|U A|i>], written out directly."""
    z = np.vdot(spec.f, u @ spec.i)
    return 2 * np.imag(np.conj(z) * np.vdot(spec.f, u @ a @ spec.i))


class TestSpecs:
    def test_transition_requires_normalized_states(self):
        with pytest.raises(ValueError):
            Transition([1, 1], [0, 1])

    @pytest.mark.parametrize(
        "rho, O",
        [
            (np.diag([0.6, 0.6]), la.SIGMA_Z),
            (np.array([[1, 1], [0, 0]]), la.SIGMA_Z),
            (np.diag([1.5, -0.5]), la.SIGMA_Z),
            (np.diag([1.0, 0.0]), np.array([[0, 1], [0, 0]])),
        ],
    )
    def test_observable_validation(self, rho, O):
        with pytest.raises(ValueError):
            Observable(rho, O)

    def test_gate_requires_unitary(self):
        with pytest.raises(ValueError):
            Gate(np.diag([1.0, 0.9]))

    def test_observable_bounds_pair_eigenvalues(self):
        spec = Observable(np.diag([0.75, 0.25]), np.diag([2.0, -1.0]))
        assert spec.bounds() == pytest.approx((0.75 * -1 + 0.25 * 2, 0.75 * 2 - 0.25))
        assert objective_bounds(Gate(la.IDENTITY)) == (0.0, 1.0)


class TestEvaluate:
    def test_zero_pulse_transition(self):
        tr = propagate(ControlPulse.uniform(1, 10.0, 0.0))
        assert abs(evaluate(Transition(la.basis(0), la.basis(1)), tr) - math.sin(10) ** 2) < 1e-14

    def test_perfect_gate(self, rng):
        tr = propagate(random_pulse(rng))
        assert abs(evaluate(Gate(tr.U_T), tr) - 1) < 1e-14

    def test_observable_rabi(self):
        T = 2.3
        tr = propagate(ControlPulse.uniform(4, T, 0.0))
        spec = Observable(np.diag([1.0, 0.0]), la.SIGMA_Z)
        assert abs(evaluate(spec, tr) - math.cos(2 * T)) < 1e-14

    @settings(max_examples=60, deadline=None)
    @given(st.integers(0, 2**32 - 1), st.sampled_from(["transition", "gate"]))
    def test_range(self, seed, kind):
        rng = np.random.default_rng(seed)
        j = evaluate(random_spec(rng, kind), propagate(random_pulse(rng, spread=8.0)))
        assert -1e-12 <= j <= 1 + 1e-12

    @settings(max_examples=50, deadline=None)
    @given(st.integers(0, 2**32 - 1), st.floats(0, 2 * math.pi))
    def test_gate_gauge_invariance(self, seed, phi):
        rng = np.random.default_rng(seed)
        tr = propagate(random_pulse(rng))
        w = random_unitary(rng)
        assert abs(evaluate(Gate(w), tr) - evaluate(Gate(np.exp(1j * phi) * w), tr)) < 1e-12

    @pytest.mark.parametrize("kind", KINDS)
    def test_deficit_is_distance_to_maximum(self, rng, kind):
        spec = random_spec(rng, kind)
        p = random_pulse(rng)
        value, deficit, _ = value_deficit_gradient(spec, p.amplitudes, p.durations, 1.0)
        assert abs(value + deficit - objective_bounds(spec)[1]) < 1e-13


class TestGradient:
    def test_zero_pulse_matches_L_expansion(self):
        T = 4.0
        spec = Transition(la.basis(0), WITNESS_F)
        tr = propagate(ControlPulse.uniform(2, T, 0.0))
        g = gradient(spec, tr)
        u = tr.U_T
        t = g.node_times
        expected = np.cos(2 * t) * L(spec, u, la.SIGMA_Z) + np.sin(2 * t) * L(spec, u, la.SIGMA_Y)
        assert np.max(np.abs(g.node_values - expected)) < 1e-13

    @pytest.mark.parametrize("kind", KINDS)
    def test_matches_finite_differences(self, rng, kind):
        for _ in range(10):
            spec = random_spec(rng, kind)
            p = random_pulse(rng)
            delta = float(rng.uniform(0.5, 2.0))
            g = gradient(spec, propagate(p, delta)).segment_components
            fd = fd_gradient(spec, p, delta)
            assert np.all(np.abs(g - fd) <= 1e-6 * np.maximum(np.abs(g), np.abs(fd)) + 1e-9)

    @pytest.mark.parametrize("kind", KINDS)
    def test_fast_path_agrees_with_trace_path(self, rng, kind):
        spec = random_spec(rng, kind)
        p = random_pulse(rng, n=15)
        v, _, g = value_deficit_gradient(spec, p.amplitudes, p.durations, 1.3)
        tr = propagate(p, 1.3)
        assert abs(v - evaluate(spec, tr)) < 1e-14
        assert np.max(np.abs(g - gradient(spec, tr).segment_components)) < 1e-13

    def test_quadrature_sum_reproduces_segment_components(self, rng):
        spec = random_spec(rng, "transition")
        p = random_pulse(rng, n=10, total=3.0)
        g = gradient(spec, propagate(p))
        assert np.max(np.abs(g.quadrature_components() - g.segment_components)) < 1e-14

    def test_vanishes_at_constructed_maximum(self, rng):
        p = random_pulse(rng, n=20, total=10.0)
        tr = propagate(p)
        i = random_state(rng)
        spec = Transition(i, tr.U_T @ i)
        assert gradient(spec, tr).sup_norm < 1e-10

    def test_reference_value_oracle_agrees(self, rng):
        for kind in KINDS:
            spec = random_spec(rng, kind)
            p = random_pulse(rng)
            u = product_propagator(p.amplitudes, p.durations)
            assert abs(reference_value(spec, u) - evaluate(spec, propagate(p))) < 1e-12


@pytest.fixture(scope="module")
def optimized_transition():
    spec = Transition(la.basis(0), la.basis(1))
    start = ControlPulse.uniform(40, 10.0, run_rng(3, 0).uniform(-2, 2, 40))
    res = maximize(spec, start)
    assert res.value > 1 - 1e-12
    return spec, res.pulse


class TestHessianDiagonal:
    def test_gate_is_minus_two(self, rng):
        t, h = hessian_diagonal(Gate(random_unitary(rng)), propagate(random_pulse(rng)))
        assert t.shape == h.shape
        assert np.all(h == -2.0)

    def test_observable_unsupported(self, rng):
        with pytest.raises(NotImplementedError):
            hessian_diagonal(random_spec(rng, "observable"), propagate(random_pulse(rng)))

    def test_zero_where_initial_state_is_eigenstate(self):
        # zero pulse on [0, 2 pi], one node at t = pi: V = sz, U_T = I
        tr = propagate(ControlPulse.uniform(1, 2 * math.pi, 0.0), nodes_per_segment=1)
        _, h = hessian_diagonal(Transition(la.basis(0), la.basis(0)), tr)
        assert abs(h[0]) < 1e-28

    def test_range_at_optimum(self, optimized_transition):
        spec, pulse = optimized_transition
        _, h = hessian_diagonal(spec, propagate(pulse))
        assert np.all((h >= -2.0) & (h <= 0.0))

    def test_matches_finite_difference_bump(self, optimized_transition):
        spec, pulse = optimized_transition
        tr = propagate(pulse)
        times, h = hessian_diagonal(spec, tr)
        width, height = 1e-3, 1.0
        for k in (5, 170, 333, 600):
            t = times[k]
            seg = np.searchsorted(pulse.boundaries, t) - 1
            b = list(pulse.boundaries)
            a = list(pulse.amplitudes)
            b[seg + 1:seg + 1] = [t - width / 2, t + width / 2]
            a[seg:seg + 1] = [a[seg]] * 3

            def J(s):
                amps = np.array(a)
                amps[seg + 1] += s
                u = product_propagator(amps, np.diff(b))
                return reference_value(spec, u)

            fd = (J(height) + J(-height) - 2 * J(0.0)) / (height * width) ** 2
            assert abs(fd - h[k]) < 5e-4

    def test_warns_off_optimum(self, rng, caplog):
        spec = Transition(la.basis(0), la.basis(1))
        with caplog.at_level(logging.WARNING, logger="lztrap.objectives"):
            hessian_diagonal(spec, propagate(ControlPulse.uniform(1, 10.0, 0.0)))
        assert "away from an optimum" in caplog.text


class TestClassifyCritical:
    def test_global_max(self, rng):
        tr = propagate(random_pulse(rng, n=30))
        i = random_state(rng)
        v = classify_critical(Transition(i, tr.U_T @ i), tr)
        assert v.kind is Criticality.GLOBAL_MAX
        assert abs(v.overlap - 1) < 1e-12

    def test_global_min(self, rng):
        tr = propagate(random_pulse(rng, n=30))
        i = random_state(rng)
        f = la.orthogonal_complement(tr.U_T @ i)
        v = classify_critical(Transition(i, f), tr)
        assert v.kind is Criticality.GLOBAL_MIN
        assert v.value < 1e-12

    def test_perfect_gate_is_global_max(self, rng):
        tr = propagate(random_pulse(rng))
        assert classify_critical(Gate(tr.U_T), tr).kind is Criticality.GLOBAL_MAX

    def test_zero_control(self):
        # |i> = |0>: L(sz) = L(sy) = 0 at eps = 0 for any |f>, so eps = 0 is critical
        spec = Transition(la.basis(0), la.basis(1))
        tr = propagate(ControlPulse.uniform(10, 10.0, 0.0))
        v = classify_critical(spec, tr)
        assert v.kind is Criticality.ZERO_CONTROL
        assert v.grad_sup < 1e-12
        assert 1e-3 < v.value < 1 - 1e-3

    def test_zero_control_with_nonzero_alpha(self):
        T = 4.0
        f_prime = np.array([1, 1j]) / math.sqrt(2)
        f = la.expm_su2(1.0, 0.0, T) @ f_prime
        spec = Transition(la.basis(0), f)
        assert abs(zero_control_alpha(spec, T) + 1) < 1e-12
        v = classify_critical(spec, propagate(ControlPulse.uniform(4, T, 0.0)))
        assert v.kind is Criticality.ZERO_CONTROL

    def test_not_critical(self, rng):
        spec = Transition(la.basis(0), la.basis(1))
        v = classify_critical(spec, propagate(random_pulse(rng, n=10)))
        assert v.kind is Criticality.NOT_CRITICAL

    def test_unresolved_is_logged(self, rng, caplog):
        spec = Transition(la.basis(0), la.basis(1))
        tr = propagate(ControlPulse.uniform(3, 2.0, [0.7, -0.2, 1.1]))
        with caplog.at_level(logging.ERROR, logger="lztrap.objectives"):
            v = classify_critical(spec, tr, Tolerances(grad=1e3))
        assert v.kind is Criticality.UNRESOLVED
        assert "neither optimal nor zero" in caplog.text

    def test_segment_gradient_source(self, optimized_transition):
        spec, pulse = optimized_transition
        v = classify_critical(spec, propagate(pulse), gradient_source="segments")
        assert v.kind is Criticality.GLOBAL_MAX
        with pytest.raises(ValueError):
            classify_critical(spec, propagate(pulse), gradient_source="bogus")


class TestSecondOrder:
    T = 4.0

    @pytest.fixture
    def spec(self):
        return Transition(la.basis(0), WITNESS_F)

    def test_alpha_matches_direct_L(self, spec):
        alpha = zero_control_alpha(spec, self.T)
        assert abs(alpha) > 1e-3
        u = la.expm_su2(1.0, 0.0, self.T)
        assert abs(alpha - L(spec, u, la.SIGMA_X)) < 1e-14

    def test_box_second_variation(self, spec):
        # exact value of the expansion: alpha * int int_{t2<t1} sin 2(t1 - t2) = pi alpha / 2
        so = second_order_expansion(spec, box_variation(), self.T, (0.0, math.pi))
        assert abs(so.first) < 1e-12
        assert so.second == pytest.approx(math.pi * so.alpha / 2, rel=1e-6)

    def test_cosine_second_variation(self, spec):
        so = second_order_expansion(spec, cosine_variation(4.0), self.T, (0.0, math.pi))
        assert abs(so.first) < 1e-12
        assert so.second == pytest.approx(-math.pi * so.alpha / 12, rel=1e-6)

    def test_variations_have_opposite_signs(self, spec):
        a = second_order_expansion(spec, box_variation(), self.T, (0.0, math.pi)).second
        b = second_order_expansion(spec, cosine_variation(4.0), self.T, (0.0, math.pi)).second
        assert a * b < 0

    def test_box_against_exact_two_segment_propagation(self, spec):
        # box variation is piecewise constant, so two exact segments suffice
        def R(s):
            u = product_propagator([s, 0.0], [math.pi, self.T - math.pi])
            u0 = product_propagator([0.0], [self.T])
            return (reference_value(spec, u) - reference_value(spec, u0)) / s**2

        s1, s2 = 1e-3, 5e-4
        rich = (s1 * R(s2) - s2 * R(s1)) / (s1 - s2)
        so = second_order_expansion(spec, box_variation(), self.T, (0.0, math.pi))
        assert rich == pytest.approx(so.second, rel=1e-4)

    @pytest.mark.parametrize("variation, multiple", [(box_variation(), 0.5), (cosine_variation(4.0), -1 / 12)])
    def test_full_propagation_richardson(self, spec, variation, multiple):
        rich, raw = nonlinear_second_variation(spec, variation, self.T, (0.0, math.pi))
        alpha = zero_control_alpha(spec, self.T)
        assert rich == pytest.approx(multiple * math.pi * alpha, rel=1e-3)
        assert len(raw) == 2

    @pytest.mark.parametrize("s", [0.5, 2.0, -3.0])
    def test_homogeneity(self, s):
        # generic |i> so that the first variation does not vanish
        spec = Transition(np.array([0.6, 0.8j]), WITNESS_F)
        base = second_order_expansion(spec, cosine_variation(3.0, 0.5, 2.5), self.T, (0.5, 2.5))
        assert abs(base.first) > 1e-3

        def scaled(t):
            return s * cosine_variation(3.0, 0.5, 2.5)(t)

        out = second_order_expansion(spec, scaled, self.T, (0.5, 2.5))
        assert out.first == pytest.approx(s * base.first, rel=1e-12)
        assert out.second == pytest.approx(s * s * base.second, rel=1e-12)

    def test_rejects_short_horizon(self, spec):
        with pytest.raises(ValueError):
            second_order_expansion(spec, box_variation(), 3.0, (0.0, math.pi))

    def test_rejects_other_objectives(self):
        with pytest.raises(TypeError):
            second_order_expansion(Gate(la.IDENTITY), box_variation(), 4.0)
