import math

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from idepde.errors import CertificateError, DomainError
from idepde.functionals import IdeSystem, PointMap, PointPlusKernel, linear_distributed_system
from idepde.hyperbolic import HyperbolicSystem, InputPassthrough, mean_recirculation, to_ide
from idepde.ide import SolveConfig, solve
from idepde.sampled import Grid, SampledFn, make_rng
from idepde.stability import (IssCertificate, check_razumikhin, decay_audit, decay_window,
                              iss_estimate, lyapunov_V, robust_equilibrium_audit, robust_equilibrium_delta)


def ex27_cert(**kw):
    return IssCertificate((1.0,), 0.5, gamma=lambda s: s, **kw)


class TestCertificate:
    def test_defaults(self):
        cert = ex27_cert()
        assert cert.sigma_rate == pytest.approx(0.5 * math.log(2))
        assert cert.h_star == pytest.approx(1.0)
        assert cert.gain_factor == pytest.approx((2 - 1 / math.sqrt(2)) / (0.5 * (1 - 1 / math.sqrt(2))))
        assert cert.gain_factor == pytest.approx(8.828, abs=1e-3)

    @pytest.mark.parametrize("kw", [dict(weights=(0.0,), lam=0.5), dict(weights=(), lam=0.5),
                                    dict(weights=(1.0,), lam=1.0), dict(weights=(1.0,), lam=0.0),
                                    dict(weights=(1.0,), lam=0.5, sigma_rate=math.log(2))])
    def test_invalid(self, kw):
        with pytest.raises(CertificateError):
            IssCertificate(**kw)

    def test_weight_count_mismatch(self):
        with pytest.raises(CertificateError):
            check_razumikhin(linear_distributed_system(), IssCertificate((1.0, 1.0), 0.5), samples=10)

    def test_window_rounding(self):
        cert = IssCertificate((1.0,), 0.5, sigma_rate=0.6 * math.log(2))
        assert decay_window(cert, 0.125) == pytest.approx(math.floor(cert.h_star / 0.125) * 0.125)
        with pytest.raises(CertificateError):
            decay_window(IssCertificate((1.0,), 0.5, sigma_rate=0.99 * math.log(2)), 0.125)


class TestLyapunovV:
    def test_constant_history(self):
        cert = IssCertificate((2.0,), 0.5)
        hist = SampledFn.constant(-3.0, Grid(-1.0, 0.25, 4))
        # largest weight at the newest cell, midpoint 1/8 before the end
        assert lyapunov_V(cert, hist) == pytest.approx(6.0 * math.exp(-cert.sigma_rate / 8))

    def test_spike_oldest_cell(self):
        cert = IssCertificate((1.0, 3.0), 0.25)
        vals = np.zeros((4, 2))
        vals[0] = [1.0, -2.0]
        hist = SampledFn(Grid(-1.0, 0.25, 4), vals)
        assert lyapunov_V(cert, hist) == pytest.approx(7.0 * math.exp(-cert.sigma_rate * 0.875))

    def test_empty(self):
        assert lyapunov_V(ex27_cert(), SampledFn(Grid(0.0, 1.0, 0), np.zeros((0, 1)))) == 0.0

    @given(st.integers(0, 10_000))
    def test_sandwich(self, seed):
        rng = make_rng(seed)
        cert = IssCertificate(tuple(rng.uniform(0.1, 2.0, 2)), rng.uniform(0.05, 0.95))
        hist = SampledFn(Grid(-1.0, 1 / 16, 16), rng.uniform(-1, 1, (16, 2)))
        V = lyapunov_V(cert, hist)
        supW = float(np.max(cert.W(hist.values)))
        assert math.exp(-cert.sigma_rate) * supW <= V <= supW


class TestRazumikhin:
    def test_example_passes(self):
        rep = check_razumikhin(linear_distributed_system(0.5), ex27_cert(), samples=4000)
        assert rep.passed and rep.analytic
        assert rep.effective_lambda == pytest.approx(0.5, abs=1e-9)
        assert rep.worst_margin >= -1e-12

    def test_example_gain_too_small(self):
        cert = IssCertificate((1.0,), 0.5, gamma=lambda s: 0.5 * s)
        rep = check_razumikhin(linear_distributed_system(0.5), cert, samples=4000)
        assert not rep.passed and rep.analytic is False
        assert rep.witness["lhs"] > rep.witness["rhs"]

    def test_lambda_too_small(self):
        cert = IssCertificate((1.0,), 0.3, gamma=lambda s: s)
        rep = check_razumikhin(linear_distributed_system(0.5), cert, samples=2000)
        assert not rep.passed

    def test_zero_functional(self):
        sys = IdeSystem(PointPlusKernel([1.0], [PointMap.linear(0.0)]))
        rep = check_razumikhin(sys, IssCertificate((1.0,), 0.1), samples=500)
        assert rep.passed and rep.effective_lambda == 0.0
        assert rep.worst_margin >= 0 and rep.analytic is None

    def test_critical_gain_falsified(self):
        sys = to_ide(mean_recirculation(2.0))
        for k in (1.0, 3.0, 10.0):
            rep = check_razumikhin(sys, IssCertificate((1.0, k), 0.99), samples=2000, K=16)
            assert not rep.passed
            assert rep.effective_lambda >= 0.99

    def test_subcritical_gain_passes(self):
        rep = check_razumikhin(to_ide(mean_recirculation(1.0)), IssCertificate((1.0, 3.0), 0.9),
                               samples=2000, K=16)
        assert rep.passed

    def test_deterministic(self):
        sys = linear_distributed_system(0.5)
        a = check_razumikhin(sys, ex27_cert(), samples=500, seed=3)
        b = check_razumikhin(sys, ex27_cert(), samples=500, seed=3)
        assert a == b


class TestDecay:
    def test_unforced_decay(self):
        rep = decay_audit(linear_distributed_system(0.5), ex27_cert(), trials=5, horizon=10.0, K=32)
        assert rep.passed and rep.window == pytest.approx(1.0)
        assert max(rep.final_norms) < 0.05

    def test_zero_data(self):
        K = 32
        zero = [SampledFn.constant(0.0, Grid(-1.0, 1 / K, K))]
        rep = decay_audit(linear_distributed_system(0.5), ex27_cert(), trials=1, horizon=5.0, K=K,
                          initial_histories=zero)
        assert rep.final_norms == [0.0]
        assert rep.passed

    def test_forced_bound(self):
        rep = decay_audit(linear_distributed_system(0.5), ex27_cert(), trials=5, horizon=20.0, K=32,
                          u_amplitude=0.1, seed=7)
        assert rep.passed
        # the state ends inside the ISS ball of radius gain_factor * gamma(0.1)
        assert max(rep.final_norms) <= ex27_cert().gain_factor * 0.1

    def test_wrong_certificate_detected(self):
        # x(t) = 0.9 x(t - 1): a rate faster than the true one is violated
        sys = IdeSystem(PointPlusKernel([1.0], [PointMap.linear(0.9)]))
        cert = IssCertificate((1.0,), 0.5)
        K = 16
        x0 = [SampledFn.constant(1.0, Grid(-1.0, 1 / K, K))]
        rep = decay_audit(sys, cert, trials=1, horizon=5.0, K=K, initial_histories=x0)
        assert not rep.passed


class TestIssEstimate:
    def test_forms(self):
        cert = ex27_cert()
        t = np.linspace(0, 10, 11)
        plain = iss_estimate(cert, 2.0, 0.1, t)
        assert plain[0] == pytest.approx(2.0 + cert.gain_factor * 0.1)
        for eps in (0.1, 1.0, 10.0):
            assert np.all(iss_estimate(cert, 2.0, 0.1, t, eps) >= plain - 1e-15)
        with pytest.raises(DomainError):
            iss_estimate(cert, 1.0, 0.0, 0.0, eps=0.0)

    def test_trajectory_shape(self):
        # once the transient term is negligible the state is bounded by the input term alone
        sys = linear_distributed_system(0.5)
        cert = ex27_cert()
        K, T, amp = 32, 40.0, 0.1
        rng = make_rng(11)
        n = K + int(T * K)
        d = np.repeat(rng.uniform(-1, 1, n // 8 + 1), 8)[:n]
        u = np.repeat(rng.uniform(-amp, amp, n // 8 + 1), 8)[:n]
        x0 = SampledFn(Grid(-1.0, 1 / K, K), np.repeat(rng.uniform(-1, 1, 8), K // 8))
        traj = solve(sys, x0, SampledFn(Grid(-1.0, 1 / K, n), np.column_stack([d, u])), SolveConfig(T))
        sandwich = math.exp(cert.sigma_rate * cert.r)
        V0 = lyapunov_V(cert, x0)
        t_free = math.log(sandwich * V0 / 1e-9) / cert.sigma_rate
        forced = sandwich * cert.gain_factor * cert.gamma(float(np.max(np.abs(u))))
        for t in np.arange(math.ceil(t_free), T + 1e-9, 1.0):
            assert np.max(np.abs(traj.history(float(t)).values)) <= forced + 1e-9


class TestRobustDelta:
    def test_example_value(self):
        delta = robust_equilibrium_delta(linear_distributed_system(0.5), 0.1, 2.0)
        assert delta == pytest.approx(0.1 / (2 * 7.5 ** 5), rel=1e-10)

    def test_short_horizon(self):
        assert robust_equilibrium_delta(linear_distributed_system(0.5), 0.1, 0.0) == pytest.approx(
            0.1 / 15, rel=1e-10)

    def test_monotone_in_T(self):
        sys = linear_distributed_system(0.5)
        deltas = [robust_equilibrium_delta(sys, 0.1, T) for T in (0.0, 1.0, 2.0, 4.0)]
        assert all(a >= b for a, b in zip(deltas, deltas[1:]))

    def test_domain(self):
        with pytest.raises(DomainError):
            robust_equilibrium_delta(linear_distributed_system(), 0.0, 1.0)

    def test_needs_b(self):
        # boundary driven by a disturbance channel: no bound vanishing at zero
        sys = HyperbolicSystem(g=[], K=[], G=InputPassthrough(0), m=1, m1=1)
        with pytest.raises(CertificateError):
            robust_equilibrium_delta(to_ide(sys), 0.1, 1.0)

    def test_audit(self):
        audit = robust_equilibrium_audit(linear_distributed_system(0.5), 0.1, 2.0, trials=30)
        assert audit.violations == 0 and audit.worst_norm < audit.eps
        assert audit.delta == pytest.approx(0.1 / (2 * 7.5 ** 5), rel=1e-10)
