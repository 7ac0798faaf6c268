import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from idepde.errors import AlignmentError, DataError, DomainError, EvaluationError
from idepde.feedback import recirculation_plant
from idepde.functionals import (External, IdeSystem, KernelMap, LinearScalarDistributed, Moduli,
                                PointMap, PointPlusKernel, audit_moduli, cells_per_delay, compute_moduli,
                                eval_rhs, linear_distributed_system, piece_layout)
from idepde.hyperbolic import InputPassthrough, PointEvaluation, mean_recirculation, to_ide
from idepde.kernels import Constant, ExpAffine, Polynomial
from idepde.sampled import Grid, SampledFn, make_rng


def _inputs(K, h, d=1.0, u=0.0):
    return SampledFn(Grid(-1.0, h, K + 1), np.column_stack([np.full(K + 1, d), np.full(K + 1, u)]))


class TestLayout:
    def test_cells_per_delay(self):
        assert cells_per_delay(1.0, 0.125) == 8
        with pytest.raises(AlignmentError):
            cells_per_delay(1.0, 0.3)

    @pytest.mark.parametrize("K", [1, 4, 33])
    def test_pieces_cover_horizon(self, K):
        lo, hi = piece_layout(K, 1.0 / K)
        assert np.sum(hi - lo) == pytest.approx(1.0, abs=1e-15)
        assert hi[-1] - lo[-1] == pytest.approx(0.5 / K)
        assert hi[0] - lo[0] == pytest.approx(0.5 / K)


class TestEvalRhs:
    def test_distributed_constant_history(self):
        sys = linear_distributed_system(0.5)
        K = 16
        hist = SampledFn.constant(1.0, Grid(-1.0, 1 / K, K))
        assert eval_rhs(sys, hist, _inputs(K, 1 / K))[0] == pytest.approx(0.5, abs=1e-15)

    @pytest.mark.parametrize("sys", [linear_distributed_system(0.5),
                                     IdeSystem(PointPlusKernel([0.5, 1.0], [PointMap.linear(0.3)] * 2))])
    def test_zero_history_zero_input(self, sys):
        K = 8
        hist = SampledFn.constant(0.0, Grid(-1.0, 1 / K, K))
        w = _inputs(K, 1 / K, d=0.7) if sys.m else None
        assert eval_rhs(sys, hist, w)[0] == 0.0

    def test_fixed_profile_of_critical_recirculation(self):
        sys = to_ide(mean_recirculation(2.0))
        K = 32
        h = 1.0 / K
        hist = SampledFn(Grid(-1.0, h, K), np.column_stack([np.full(K, 0.5), np.zeros(K)]))
        w = SampledFn(Grid(-1.0, h, K + 1), np.ones(K + 1))
        np.testing.assert_allclose(eval_rhs(sys, hist, w), [0.5, 0.0], atol=1e-15)

    def test_point_delay_reads_cell(self):
        rhs = PointPlusKernel([0.25, 1.0], [PointMap.linear(1.0), PointMap.linear(0.0)])
        sys = IdeSystem(rhs)
        K = 8
        vals = np.arange(K, dtype=float)
        hist = SampledFn(Grid(-1.0, 1 / K, K), vals)
        # window row K - 2 is the cell [-0.25, -0.125)
        assert eval_rhs(sys, hist)[0] == vals[K - 2]

    def test_misaligned_step(self):
        rhs = PointPlusKernel([0.3, 1.0], [PointMap.linear(1.0)] * 2)
        with pytest.raises(AlignmentError):
            rhs.check_step(0.25)

    def test_short_history(self):
        with pytest.raises(DomainError):
            eval_rhs(linear_distributed_system(), SampledFn.constant(1.0, Grid(-0.5, 0.125, 4)),
                     _inputs(8, 0.125))

    def test_non_finite_output(self):
        ext = External(lambda x, w, h: np.array([np.inf]), Moduli(lambda R: 0, lambda R: 0, lambda R: R))
        with pytest.raises(EvaluationError):
            eval_rhs(IdeSystem(ext), SampledFn.constant(1.0, Grid(-1.0, 0.5, 2)))


class TestModuli:
    def test_distributed_half(self):
        mod = compute_moduli(LinearScalarDistributed(0.5))
        assert mod.N(3.0) == 0.5 and mod.M(3.0) == 0.5
        assert mod.a(2.0) == pytest.approx(3.0)
        assert mod.is_monotone()

    def test_zero_point_maps(self):
        rhs = PointPlusKernel([0.5, 1.0], [PointMap.linear(0.0)] * 2,
                              KernelMap.linear(Constant(0.0)))
        mod = rhs.moduli()
        assert mod.N(1.0) == 0 and mod.M(1.0) == 0
        assert mod.a_norm(2.0) == 2.0

    def test_recirculation_closure(self):
        g = 1.0
        mod = to_ide(recirculation_plant(g)).moduli
        R = 0.7
        expect = PointEvaluation(1.0).bound((1 + g) * R) + InputPassthrough(0).bound((1 + g) * R)
        assert mod.a(R) == pytest.approx(expect)
        assert mod.is_monotone()

    def test_external_flagged(self):
        ext = External(lambda x, w, h: x[-1], Moduli(lambda R: 1, lambda R: 1, lambda R: R))
        assert compute_moduli(ext).audited is False
        assert compute_moduli(LinearScalarDistributed()).audited is True

    def test_bad_delays(self):
        with pytest.raises(DataError):
            PointPlusKernel([1.0, 0.5], [PointMap.linear(1.0)] * 2)
        with pytest.raises(DataError):
            PointPlusKernel([0.5, 2.0], [PointMap.linear(1.0)] * 2, r=1.0)


AUDITED = {
    "distributed_const": lambda: linear_distributed_system(0.5),
    "distributed_exp": lambda: linear_distributed_system(ExpAffine(0.8, 1.5)),
    "distributed_poly": lambda: linear_distributed_system(Polynomial([0.2, -0.6])),
    "point_plus_kernel": lambda: IdeSystem(PointPlusKernel(
        [0.25, 1.0], [PointMap.linear(0.4), PointMap.linear(-0.3)], KernelMap.linear(ExpAffine(0.5, 1.0)))),
    "mean_recirculation": lambda: to_ide(mean_recirculation(1.0)),
    "open_loop_plant": lambda: to_ide(recirculation_plant(1.5)),
}


@pytest.mark.parametrize("name", sorted(AUDITED))
@pytest.mark.parametrize("R", [0.5, 2.0])
def test_moduli_audit(name, R):
    rep = audit_moduli(AUDITED[name](), R, K=16, samples=400, seed=3)
    assert rep.passed, rep.violations[:3]
    assert rep.worst_lipschitz_ratio <= 1.0


@given(st.floats(0.01, 2.0), st.floats(-0.99, 0.99))
def test_h3_bound_linear_class(s, q):
    sys = linear_distributed_system(q)
    K = 8
    rng = make_rng(0)
    x = rng.uniform(-s, s, (K + 1, 1))
    w = np.column_stack([rng.uniform(-1, 1, K + 1), rng.uniform(-s, s, K + 1)])
    assert abs(sys.rhs.evaluate(x, w, 1 / K)[0]) <= sys.moduli.b(s) + 1e-15
