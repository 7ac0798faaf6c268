import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from idepde.errors import DomainError
from idepde.feedback import (DeadbeatKernel, closed_loop, constant_error_profile, control_ide,
                             control_kernel, control_kernel_nodal, control_two_point,
                             controller_outputs, iss_gain_measurement, kernel, kernel_weights,
                             recirculation_plant)
from idepde.hyperbolic import solve_pde
from idepde.sampled import Grid, SampledFn, make_rng, sup_norm


def levels(seed, K, pieces=16, amp=1.0):
    rng = make_rng(seed)
    return SampledFn(Grid(0.0, 1 / K, K), np.repeat(rng.uniform(-amp, amp, pieces), K // pieces))


def hist(vals, K):
    return SampledFn(Grid(-1.0, 1 / K, K), np.broadcast_to(np.asarray(vals, float), (K,)).copy())


class TestKernel:
    def test_values(self):
        assert kernel(1.0, 0.0) == -1.0
        assert kernel(1.0, 1.0) == pytest.approx(-math.e)
        assert np.all(kernel(0.0, np.linspace(0, 1, 5)) == 0.0)

    def test_constant_profile(self):
        for K in (64, 128):
            prof = SampledFn.constant(1.0, Grid(0.0, 1 / K, K))
            err = abs(control_kernel(1.0, prof) + (math.e - 1))
            assert err <= 0.1 / K ** 2

    @pytest.mark.parametrize("g", [-1.5, 0.5, 1.0, 1.5])
    def test_weights_approach_kernel(self, g):
        K = 512
        c = kernel_weights(g, K)
        z = np.arange(K + 1) / K
        exact = kernel(g, z) / K
        exact[[0, -1]] *= 0.5
        np.testing.assert_allclose(c, exact, atol=3 / K ** 2, rtol=1e-4)
        assert control_kernel_nodal(g, np.ones(K + 1)) == pytest.approx(-math.expm1(g), rel=1e-5)

    def test_step_too_large(self):
        with pytest.raises(DomainError):
            kernel_weights(3.0, 1)

    def test_deadbeat_cells(self):
        K = 256
        x = np.ones(K)
        assert DeadbeatKernel(1.0).on_cells(x, np.zeros(1), 1 / K) == pytest.approx(1 - math.e, rel=1e-5)


class TestDelayLaw:
    def test_unit_p(self):
        K = 32
        assert control_ide(1.0, hist(1.0, K), hist(0.0, K)) == pytest.approx(-1.0, abs=1e-12)

    def test_zero(self):
        K = 32
        assert control_ide(1.3, hist(0.0, K), hist(0.0, K)) == 0.0
        assert control_ide(0.0, hist(2.0, K), hist(3.0, K)) == 0.0

    def test_unit_v(self):
        K = 64
        g = 0.7
        assert control_ide(g, hist(0.0, K), hist(1.0, K)) == pytest.approx(-math.expm1(g), abs=1e-12)

    def test_window_form_converges(self):
        g = 0.8
        K = 256
        rng = make_rng(1)
        P = np.repeat(rng.uniform(-1, 1, 9), 32)[:K + 1]
        V = np.repeat(rng.uniform(-1, 1, 9), 32)[:K + 1]
        grid = Grid(-1.0, 1 / K, K + 1)
        a = control_ide(g, SampledFn(grid, P), SampledFn(grid, V))
        b = control_ide(g, hist(P[1:], K), hist(V[1:], K))
        assert a == pytest.approx(b, abs=0.05)

    def test_length_checks(self):
        with pytest.raises(DomainError):
            control_ide(1.0, hist(1.0, 8), hist(1.0, 16))
        with pytest.raises(DomainError):
            control_two_point(1.0, SampledFn.constant(1.0, Grid(-1.0, 0.125, 5)),
                              SampledFn.constant(1.0, Grid(-1.0, 0.125, 5)))


class TestClosedLoop:
    @pytest.mark.parametrize("controller", ["kernel", "ide", "two-point"])
    def test_zero_by_two(self, controller):
        K = 64
        res = closed_loop(1.0, levels(0, K), controller, T=3.0, snapshot_times=(2.0, 3.0))
        assert sup_norm(res.snapshots[2.0]) <= 1e-10
        assert sup_norm(res.snapshots[3.0]) <= 1e-10

    def test_forms_agree(self):
        K = 64
        res = closed_loop(1.2, levels(1, K), "kernel", T=2.5)
        out = controller_outputs(res)
        np.testing.assert_allclose(out["ide"], out["kernel"], atol=1e-11)
        np.testing.assert_allclose(out["two-point"], out["kernel"], atol=1e-11)
        np.testing.assert_allclose(res.u.values[:, 0], out["kernel"], atol=1e-11)

    def test_zero_trajectory(self):
        K = 64
        res = closed_loop(1.0, SampledFn.constant(0.0, Grid(0.0, 1 / K, K)), T=2.0, snapshot_times=(1.0,))
        assert np.all(res.trajectory.solution.values == 0.0)
        assert np.all(res.u.values == 0.0)

    @pytest.mark.parametrize("g", [1.0, 0.5])
    def test_constant_error_identities(self, g):
        K = 64
        wbar = 0.3
        n = 4 * K
        w = SampledFn(Grid(0.0, 1 / K, n), np.full(n, wbar))
        res = closed_loop(g, levels(2, K), "kernel", w, T=4.0, snapshot_times=(3.0, 4.0))
        X = res.boundary_traces().values[2 * K:]
        np.testing.assert_allclose(X[:, 0], wbar, atol=1e-10)
        np.testing.assert_allclose(X[:, 1], wbar - g * wbar, atol=1e-10)
        for t in (3.0, 4.0):
            np.testing.assert_allclose(res.snapshots[t].values[:, 0], constant_error_profile(g, wbar, K),
                                       atol=1e-10)

    def test_open_loop_grows(self):
        K = 32
        x0 = SampledFn.constant(1.0, Grid(0.0, 1 / K, K))
        sol = solve_pde(recirculation_plant(3.0), x0, SampledFn(Grid(0.0, 1 / K, 5 * K), np.zeros(5 * K)),
                        5.0, (5.0,))
        assert sup_norm(sol.profile(5.0)) > 2.0

    def test_unknown_controller(self):
        with pytest.raises(DomainError):
            closed_loop(1.0, levels(0, 16), "pid")


@settings(max_examples=10)
@given(st.sampled_from([-1.5, -0.5, 0.5, 1.0, 1.5]), st.integers(0, 10_000))
def test_finite_time_any_gain(g, seed):
    K = 128
    res = closed_loop(g, levels(seed, K), "kernel", T=2.5, snapshot_times=(2.0, 2.5))
    scale = max(1.0, sup_norm(levels(seed, K)))
    assert sup_norm(res.snapshots[2.0]) <= 1e-10 * scale
    assert sup_norm(res.snapshots[2.5]) <= 1e-10 * scale


def test_gain_measurement():
    rep = iss_gain_measurement(1.0, trials=3, T=3.5, K=64)
    assert rep.transient_residual <= 1e-10
    assert rep.linearity_error <= 1e-10
    assert len(rep.ratios) == 3
    # pinned from this seeded run; the steady response to a constant error has ratio 1 - h/2
    assert rep.gamma == pytest.approx(1.0849344369056555, rel=1e-9)


def test_constant_error_sup_pinned():
    K = 128
    n = 4 * K
    for g, wbar in ((1.0, 0.1), (1.5, -0.2), (-1.5, 0.1)):
        w = SampledFn(Grid(0.0, 1 / K, n), np.full(n, wbar))
        res = closed_loop(g, levels(5, K), "kernel", w, T=4.0, snapshot_times=(4.0,))
        z = (np.arange(K) + 0.5) / K
        expect = abs(wbar) * np.max(np.abs(1 - g + g * z))
        assert sup_norm(res.snapshots[4.0]) == pytest.approx(expect, abs=1e-10)
