import math

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from idepde.errors import ContractionError, DomainError, GridTooCoarseError
from idepde.feedback import recirculation_plant
from idepde.functionals import (External, IdeSystem, KernelMap, Moduli, PointMap, PointPlusKernel,
                                eval_rhs, linear_distributed_system)
from idepde.hyperbolic import mean_recirculation, to_ide
from idepde.ide import (SolveConfig, contraction_window, escape_time_bound, lipschitz_constants,
                        picard_step, resume, solve)
from idepde.kernels import Constant
from idepde.sampled import Grid, SampledFn, make_rng, sup_norm, window


def ex27_inputs(K, T, d=1.0, u=0.0):
    n = K + round(T * K)
    return SampledFn(Grid(-1.0, 1 / K, n), np.column_stack([np.full(n, d), np.full(n, u)]))


def random_instance(seed, K=16, T=3.0):
    rng = make_rng(seed)
    sys = linear_distributed_system(rng.uniform(-0.9, 0.9))
    n = K + round(T * K)
    x0 = SampledFn(Grid(-1.0, 1 / K, K), np.repeat(rng.uniform(-1, 1, 4), K // 4))
    w = np.column_stack([np.repeat(rng.uniform(-1, 1, n // 4 + 1), 4)[:n],
                         np.repeat(rng.uniform(-1, 1, n // 4 + 1), 4)[:n]])
    return sys, x0, SampledFn(Grid(-1.0, 1 / K, n), w)


class TestContractionWindow:
    def test_example_half_kernel(self):
        sys = linear_distributed_system(0.5)
        K = 64
        assert contraction_window(sys, 1.0, 1 / K) == pytest.approx(1 - 1 / K)
        assert contraction_window(sys, 1.0) == pytest.approx(1 / (1 + 1e-9))

    def test_zero_functional(self):
        sys = IdeSystem(PointPlusKernel([1.0], [PointMap.linear(0.0)]))
        assert contraction_window(sys, 3.0, 0.125) == 1.0

    def test_recirculation_closure(self):
        # closure moduli for g = 1: N = L (c B1 + 2 B2) = 1 * (1 + 2) = 3
        sys = to_ide(recirculation_plant(1.0))
        assert contraction_window(sys, 1.0) == pytest.approx(1 / (6 + 1e-9))
        assert contraction_window(sys, 1.0, 1 / 256) == 42 / 256

    def test_too_coarse(self):
        sys = to_ide(recirculation_plant(1.0))
        with pytest.raises(GridTooCoarseError) as exc:
            contraction_window(sys, 1.0, 0.5)
        assert exc.value.required_step == pytest.approx(1 / 6)


class TestPicardStep:
    def test_zero_fixed_point(self):
        sys = linear_distributed_system(0.5)
        K = 8
        hist = SampledFn.constant(0.0, Grid(-1.0, 1 / K, K))
        ext = picard_step(sys, hist, ex27_inputs(K, 1.0, d=0.3), 0.5)
        assert len(ext) == 4 and np.all(ext.values == 0.0)

    def test_example_analytic_value(self):
        sys = linear_distributed_system(0.5)
        K = 1024
        hist = SampledFn.constant(1.0, Grid(-1.0, 1 / K, K))
        ext = picard_step(sys, hist, ex27_inputs(K, 1.0), contraction_window(sys, 1.0, 1 / K))
        # midpoint of the cell [0.5, 0.5 + h)
        t = 0.5 + 0.5 / K
        assert ext(0.5)[0] == pytest.approx(1 - 0.5 * math.exp(t / 2), abs=1e-6)
        assert 1 - 0.5 * math.exp(0.25) == pytest.approx(0.35798, abs=1e-5)


class TestSolve:
    def test_example_oracle(self):
        sys = linear_distributed_system(0.5)
        K = 1024
        traj = solve(sys, SampledFn.constant(1.0, Grid(-1.0, 1 / K, K)), ex27_inputs(K, 1.0), SolveConfig(1.0))
        mid = traj.solution.grid.midpoints[K:]
        err = np.max(np.abs(traj.solution.values[K:, 0] - (1 - 0.5 * np.exp(mid / 2))))
        assert err <= 1e-6
        assert traj.max_factor <= 0.5

    def test_initial_segment_exact(self):
        sys, x0, w = random_instance(1)
        traj = solve(sys, x0, w, SolveConfig(2.0))
        assert window(traj.solution, -1.0, 0.0) == x0

    def test_fixed_point_identity(self):
        sys, x0, w = random_instance(2)
        cfg = SolveConfig(2.0, tol=1e-13)
        traj = solve(sys, x0, w, cfg)
        K = len(x0)
        for k in range(K, K + 2 * K, 5):
            t = (k - K) / K
            hist = window(traj.solution, t - 1, t)
            val = eval_rhs(sys, hist, window(w, t - 1, t + 1 / K), current=traj.solution.values[k])
            assert val[0] == pytest.approx(traj.solution.values[k, 0], abs=10 * cfg.tol)

    def test_example_decays(self):
        sys = linear_distributed_system(0.5)
        K = 32
        w = ex27_inputs(K, 20.0)
        rng = make_rng(4)
        vals = np.column_stack([rng.uniform(-1, 1, len(w)), np.zeros(len(w))])
        traj = solve(sys, SampledFn.constant(1.0, Grid(-1.0, 1 / K, K)), SampledFn(w.grid, vals),
                     SolveConfig(20.0))
        assert sup_norm(traj.history(20.0)) < 1e-5 * sup_norm(traj.history(1.0))

    def test_zero_stays_zero(self):
        sys = linear_distributed_system(0.5)
        K = 16
        traj = solve(sys, SampledFn.constant(0.0, Grid(-1.0, 1 / K, K)), ex27_inputs(K, 5.0, d=-0.7),
                     SolveConfig(5.0))
        assert np.all(traj.solution.values == 0.0)

    def test_critical_recirculation_keeps_p(self):
        sys = to_ide(mean_recirculation(2.0))
        K = 64
        h = 1 / K
        x0 = SampledFn(Grid(-1.0, h, K), np.column_stack([np.full(K, 0.5), np.zeros(K)]))
        w = SampledFn(Grid(-1.0, h, K + 5 * K), np.ones(6 * K))
        traj = solve(sys, x0, w, SolveConfig(5.0))
        np.testing.assert_allclose(traj.solution.values[:, 0], 0.5, atol=1e-12)
        np.testing.assert_allclose(traj.solution.values[:, 1], 0.0, atol=1e-12)

    def test_bad_history_length(self):
        sys = linear_distributed_system()
        with pytest.raises(DomainError):
            solve(sys, SampledFn.constant(1.0, Grid(-1.0, 0.125, 4)), ex27_inputs(8, 1.0))

    def test_missing_inputs(self):
        with pytest.raises(DomainError):
            solve(linear_distributed_system(), SampledFn.constant(1.0, Grid(-1.0, 0.125, 8)), None)

    def test_window_log(self, caplog):
        sys, x0, w = random_instance(3)
        with caplog.at_level("DEBUG", logger="idepde.ide"):
            traj = solve(sys, x0, w, SolveConfig(3.0))
        assert traj.windows and "window 0: R=" in caplog.text
        assert sum(wl.t_end - wl.t_start for wl in traj.windows) == pytest.approx(3.0)


class TestEscape:
    def _blowup_system(self):
        # x(t) = 2 x(t - 1/8) + x(t - 1/4): unbounded growth
        rhs = PointPlusKernel([0.125, 0.25], [PointMap.linear(2.0), PointMap.linear(1.0)], r=0.25)
        return IdeSystem(rhs)

    def test_escape_reported(self):
        sys = self._blowup_system()
        K = 16
        x0 = SampledFn.constant(1.0, Grid(-0.25, 0.25 / K, K))
        traj = solve(sys, x0, None, SolveConfig(40.0, blowup_threshold=1e6))
        assert traj.escaped
        assert traj.t_max_reached >= escape_time_bound(sys, 1.0)
        assert math.isfinite(traj.last_finite_norm)

    def test_iterates_bounded(self):
        sys, x0, w = random_instance(5)
        traj = solve(sys, x0, w, SolveConfig(3.0))
        for wl in traj.windows:
            assert wl.max_iterate_norm <= wl.iterate_bound * (1 + 1e-12)

    def test_strict_contraction(self):
        mod = Moduli(lambda R: 0.0, lambda R: 0.0, lambda R: R)
        ext = External(lambda x, w, h: 3.0 * x[-1] + 1.0, mod)
        sys = IdeSystem(ext)
        with pytest.raises(ContractionError):
            solve(sys, SampledFn.constant(0.0, Grid(-1.0, 0.25, 4)), None, SolveConfig(1.0))


class TestLipschitzConstants:
    def test_example_values(self):
        G, P = lipschitz_constants(linear_distributed_system(0.5).moduli, 1.0, 1.0)
        assert G == pytest.approx(8.0)
        assert P == pytest.approx(2 * math.log(2))

    def test_insensitive(self):
        mod = Moduli(lambda R: 3.0, lambda R: 0.0, lambda R: R)
        assert lipschitz_constants(mod, 1.0, 1.0) == (1.0, 0.0)

    def test_envelope(self):
        sys = linear_distributed_system(0.5)
        G, P = lipschitz_constants(sys.moduli, 1.0, 1.0)
        K = 32
        rng = make_rng(9)
        _, x0, w = random_instance(9, K=K, T=5.0)
        y0 = SampledFn(x0.grid, x0.values + 0.1 * rng.uniform(-1, 1, (K, 1)))
        a = solve(sys, x0, w, SolveConfig(5.0)).solution.values[:, 0]
        b = solve(sys, y0, w, SolveConfig(5.0)).solution.values[:, 0]
        d0 = np.max(np.abs(a[:K] - b[:K]))
        for k in range(K, len(a), K // 4):
            t = (k - K) / K
            assert np.max(np.abs(a[k - K:k] - b[k - K:k])) <= G * math.exp(P * t) * d0


@given(st.integers(0, 10_000))
def test_semigroup(seed):
    sys, x0, w = random_instance(seed)
    K = len(x0)
    full = solve(sys, x0, w, SolveConfig(3.0))
    t0 = (seed % (2 * K - 1) + 1) / K
    part = resume(full, sys, t0, SolveConfig(3.0 - t0))
    tail = window(full.solution, t0, 3.0).values
    assert np.max(np.abs(part.solution.values[K:] - tail)) <= 10 * 1e-12


@given(st.integers(0, 10_000), st.integers(1, 47))
def test_causality_bit_exact(seed, cell):
    sys, x0, w = random_instance(seed)
    K = len(x0)
    full = solve(sys, x0, w, SolveConfig(3.0))
    vals = np.array(w.values)
    vals[K + cell:] = make_rng(seed + 1).uniform(-1, 1, vals[K + cell:].shape)
    pert = solve(sys, x0, SampledFn(w.grid, vals), SolveConfig(3.0))
    np.testing.assert_array_equal(pert.solution.values[:K + cell], full.solution.values[:K + cell])


@given(st.integers(0, 10_000))
def test_uniqueness_seed(seed):
    sys, x0, w = random_instance(seed)
    s = max(sup_norm(x0), 1.0)
    a = solve(sys, x0, w, SolveConfig(3.0, picard_seed=0.0))
    b = solve(sys, x0, w, SolveConfig(3.0, picard_seed=s))
    assert np.max(np.abs(a.solution.values - b.solution.values)) <= 10 * 1e-12


def test_point_plus_kernel_solves():
    rhs = PointPlusKernel([0.25, 0.5], [PointMap.linear(0.3), PointMap.linear(-0.2)],
                          KernelMap.linear(Constant(0.2)), r=0.5)
    sys = IdeSystem(rhs)
    K = 16
    traj = solve(sys, SampledFn.constant(1.0, Grid(-0.5, 0.5 / K, K)), None, SolveConfig(5.0))
    assert not traj.escaped
    assert sup_norm(traj.history(5.0)) < 1e-3
