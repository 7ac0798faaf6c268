"""Acceptance suite: ten end-to-end checks with pinned tolerances.

Each ``criterion_N`` returns a :class:`CriterionResult`; :func:`run_all`
runs them in order.  They are also reachable from the command line as
scenarios of kind ``acceptance`` (``scenarios/acceptance/cNN.json``).
"""

from __future__ import annotations

import math
import time
from dataclasses import dataclass, field

import numpy as np

from .feedback import closed_loop, constant_error_profile, controller_outputs, recirculation_plant
from .functionals import linear_distributed_system
from .hyperbolic import (closure_residual, l_mu_distance, mean_recirculation, solve_pde,
                         to_ide, upwind_reference)
from .ide import SolveConfig, lipschitz_constants, resume, solve
from .sampled import Grid, SampledFn, make_rng, sup_norm, window
from .stability import IssCertificate, check_razumikhin, decay_window, trajectory_decay


@dataclass
class CriterionResult:
    number: int
    title: str
    passed: bool
    runtime: float
    details: dict = field(default_factory=dict)

    def line(self) -> str:
        status = "PASS" if self.passed else "FAIL"
        info = ", ".join(f"{k}={_fmt(v)}" for k, v in self.details.items())
        return f"C{self.number:<2d} {status}  {self.title} ({self.runtime:.2f} s) {info}"

    def to_json(self) -> dict:
        return {"criterion": self.number, "title": self.title, "passed": bool(self.passed),
                "runtime": self.runtime, "details": {k: _plain(v) for k, v in self.details.items()}}


def _fmt(v):
    return f"{v:.3g}" if isinstance(v, float) else str(v)


def _plain(v):
    if isinstance(v, (np.floating, np.integer, np.bool_)):
        return v.item()
    return v


def _levels(rng, K, pieces=16, amp=1.0):
    return np.repeat(rng.uniform(-amp, amp, pieces), K // pieces)


def _timed(number, title):
    def deco(fn):
        def run(seed: int = 0) -> CriterionResult:
            t0 = time.perf_counter()
            passed, details = fn(seed)
            return CriterionResult(number, title, bool(passed), time.perf_counter() - t0, details)
        run.__name__ = fn.__name__
        run.__doc__ = fn.__doc__
        return run
    return deco


def _equivalence_errors(sysh, x0_levels, w_levels, K_list=(256, 512), T=5.0, per=16):
    times = [i / per for i in range(int(T * per) + 1)]
    errs, runtimes = [], []
    for K in K_list:
        t0 = time.perf_counter()
        x0 = SampledFn(Grid(0.0, 1.0 / K, K), np.repeat(x0_levels, K // len(x0_levels)))
        n = int(round(T * K))
        w = None
        if sysh.m:
            w = SampledFn(Grid(0.0, 1.0 / K, n), np.repeat(w_levels, K // per)[:n])
        sol = solve_pde(sysh, x0, w, T, times)
        ref = upwind_reference(sysh, x0, w, T, times)
        errs.append(max(float(np.max(np.abs(sol.snapshots[t].values - ref[t].values))) for t in times))
        runtimes.append(time.perf_counter() - t0)
    return errs, runtimes


@_timed(1, "equivalence with the upwind oracle")
def criterion_1(seed=0):
    """Closure reconstruction vs upwind: error <= 0.02 at K=256, ratio in [1.7, 2.3] at K=512."""
    rng = make_rng(seed)
    out, ok = {}, True
    cases = [("open_loop", recirculation_plant(1.0), np.zeros(80)),
             ("mean_recirculation", mean_recirculation(1.0), rng.uniform(-1, 1, 80))]
    for name, sysh, wl in cases:
        errs, rts = _equivalence_errors(sysh, rng.uniform(-1, 1, 16), wl)
        ratio = errs[0] / errs[1]
        out[f"{name}_err256"] = errs[0]
        out[f"{name}_ratio"] = ratio
        out[f"{name}_runtime"] = sum(rts)
        ok &= errs[0] <= 0.02 and 1.7 <= ratio <= 2.3 and sum(rts) < 10.0
    return ok, out


@_timed(2, "stationary profile at the critical gain")
def criterion_2(seed=0):
    """g = 2, d = 1, x0(z) = z: the profile stays at z to 1e-8 over [0, 10]."""
    K, T = 256, 10.0
    sysh = mean_recirculation(2.0)
    x0 = SampledFn.from_function(lambda z: z, 0.0, 1.0, K)
    n = int(T * K)
    w = SampledFn(Grid(0.0, 1.0 / K, n), np.ones(n))
    times = [i / 16 for i in range(int(T * 16) + 1)]
    sol = solve_pde(sysh, x0, w, T, times)
    err = max(float(np.max(np.abs(sol.snapshots[t].values - x0.values))) for t in times)
    return err <= 1e-8, {"max_error": err, "closure_residual": closure_residual(sysh, sol.trajectory)}


@_timed(3, "stability below the critical gain")
def criterion_3(seed=0):
    """g = 1.5: 20 runs decay below 1e-3 by t = 40 and V decays over each h* window."""
    K, T, trials = 64, 40.0, 20
    rng = make_rng(seed)
    sysh = mean_recirculation(1.5)
    cert = IssCertificate((1.0, 5.0), 0.95, sysh.r)
    h = 1.0 / K
    H = decay_window(cert, h)
    n = int(T * K)
    worst_sup, worst_margin, worst_env = 0.0, math.inf, math.inf
    for _ in range(trials):
        lev = _levels(rng, K)
        lev /= np.max(np.abs(lev))
        x0 = SampledFn(Grid(0.0, h, K), lev)
        w = SampledFn(Grid(0.0, h, n), np.repeat(rng.uniform(-1, 1, n // 16 + 1), 16)[:n])
        sol = solve_pde(sysh, x0, w, T, [T])
        worst_sup = max(worst_sup, sup_norm(sol.snapshots[T]))
        sm, em, _ = trajectory_decay(cert, sol.trajectory, K, H, 0.0, 1e-8)
        worst_margin = min(worst_margin, sm)
        worst_env = min(worst_env, em)
    ok = worst_sup <= 1e-3 and worst_margin >= 0 and worst_env >= 0
    return ok, {"sup_at_T": worst_sup, "window": H, "step_margin": worst_margin,
                "envelope_margin": worst_env}


@_timed(4, "Razumikhin certificate")
def criterion_4(seed=0):
    """g = 1, W = |p| + 3|v|: 1e4 samples, no violation, effective lambda <= 5/6."""
    sys = to_ide(mean_recirculation(1.0))
    cert = IssCertificate((1.0, 3.0), 5.0 / 6.0, sys.r)
    t0 = time.perf_counter()
    rep = check_razumikhin(sys, cert, samples=10_000, seed=seed)
    rt = time.perf_counter() - t0
    ok = rep.violations == 0 and rep.effective_lambda <= 5.0 / 6.0 + 1e-9 and rt < 5.0
    return ok, {"violations": rep.violations, "worst_margin": rep.worst_margin,
                "effective_lambda": rep.effective_lambda, "check_runtime": rt}


def _feedback_runs(seed, K=256, runs=20, gains=(-1.5, 0.5, 1.0, 1.5)):
    rng = make_rng(seed)
    h = 1.0 / K
    times = [2.0 + 2 * h + j * h for j in range(0, int(0.5 * K) - 1)]
    T = times[-1] + h
    for g in gains:
        for i in range(runs):
            if i == 0:
                vals = np.where(np.arange(K) < K // 2, 1.0, -0.5)
            else:
                vals = _levels(rng, K)
            yield g, SampledFn(Grid(0.0, h, K), vals), T, times


@_timed(5, "finite-time stabilization")
def criterion_5(seed=0):
    """Kernel law, four gains x 20 initial profiles: |x(t)| <= 1e-6 |x0| for t >= 2 + 2/K."""
    worst = 0.0
    for g, x0, T, times in _feedback_runs(seed):
        res = closed_loop(g, x0, "kernel", None, T, times)
        worst = max(worst, max(sup_norm(res.snapshots[t]) for t in times) / sup_norm(x0))
    return worst <= 1e-6, {"worst_ratio": worst}


@_timed(6, "controller equivalence")
def criterion_6(seed=0):
    """Along every run of criterion 5 the three controller forms agree to 1e-9."""
    worst = 0.0
    for g, x0, T, _ in _feedback_runs(seed):
        res = closed_loop(g, x0, "kernel", None, T)
        o = controller_outputs(res)
        worst = max(worst, float(np.max(np.abs(o["kernel"] - o["ide"]))),
                    float(np.max(np.abs(o["kernel"] - o["two-point"]))),
                    float(np.max(np.abs(o["ide"] - o["two-point"]))))
    return worst <= 1e-9, {"max_mismatch": worst}


@_timed(7, "actuator error")
def criterion_7(seed=0):
    """Constant error 0.1: boundary value settles to 0.1 after 1 + 2/K; response is linear."""
    K = 256
    h = 1.0 / K
    rng = make_rng(seed)
    x0 = SampledFn(Grid(0.0, h, K), _levels(rng, K))
    T = 3.0
    n = int(T * K)
    times = [2.5, 2.75, 3.0]
    res = {}
    for wbar in (0.1, 0.2):
        w = SampledFn(Grid(0.0, h, n), np.full(n, wbar))
        res[wbar] = closed_loop(1.0, x0, "kernel", w, T, times)
    p = res[0.1].trajectory.solution.values[K:, 0]
    t = np.arange(len(p)) * h
    trace_err = float(np.max(np.abs(p[t >= 1 + 2 * h - 1e-12] - 0.1)))
    lin = max(float(np.max(np.abs(res[0.2].snapshots[s].values - 2 * res[0.1].snapshots[s].values)))
              for s in times)
    prof = float(np.max(np.abs(res[0.1].snapshots[3.0].values[:, 0] - constant_error_profile(1.0, 0.1, K))))
    return trace_err <= 1e-9 and lin <= 1e-9, {"trace_error": trace_err, "linearity_error": lin,
                                                "steady_profile_error": prof}


def _ex27_instance(rng, K, T, q=None):
    q = rng.uniform(-0.9, 0.9) if q is None else q
    sys = linear_distributed_system(q)
    h = 1.0 / K
    n = int(round(T * K))
    x0 = SampledFn(Grid(-1.0, h, K), _levels(rng, K, pieces=min(K, 16)))
    d = np.repeat(rng.uniform(-1, 1, (K + n) // 4 + 1), 4)[:K + n]
    u = np.repeat(rng.uniform(-1, 1, (K + n) // 4 + 1), 4)[:K + n]
    inp = SampledFn(Grid(-1.0, h, K + n), np.column_stack([d, u]))
    return sys, x0, inp


@_timed(8, "solver oracle, semigroup and causality")
def criterion_8(seed=0):
    """Example with q = 1/2, d = 1: error <= 1e-6 at K = 1024; property suites on 100 instances."""
    K, T = 1024, 1.0
    h = 1.0 / K
    sys = linear_distributed_system(0.5)
    x0 = SampledFn.constant(1.0, Grid(-1.0, h, K))
    inp = SampledFn(Grid(-1.0, h, 2 * K), np.column_stack([np.ones(2 * K), np.zeros(2 * K)]))
    traj = solve(sys, x0, inp, SolveConfig(T))
    mid = traj.solution.grid.midpoints[K:]
    err = float(np.max(np.abs(traj.solution.values[K:, 0] - (1 - 0.5 * np.exp(mid / 2)))))
    factor = traj.max_factor
    rng = make_rng(seed)
    semigroup = causality = 0.0
    for _ in range(100):
        Ki = int(rng.choice([8, 16, 32]))
        sysi, x0i, inpi = _ex27_instance(rng, Ki, 3.0)
        cfg = SolveConfig(3.0)
        full = solve(sysi, x0i, inpi, cfg)
        factor = max(factor, full.max_factor)
        t0 = int(rng.integers(1, 2 * Ki)) / Ki
        part = resume(full, sysi, t0, SolveConfig(3.0 - t0))
        tail = window(full.solution, t0, 3.0).values
        semigroup = max(semigroup, float(np.max(np.abs(part.solution.values[Ki:] - tail))))
        t1 = int(rng.integers(1, 3 * Ki))
        vals = np.array(inpi.values)
        vals[Ki + t1:] += rng.uniform(-1, 1, vals[Ki + t1:].shape)
        pert = solve(sysi, x0i, SampledFn(inpi.grid, vals), cfg)
        causality = max(causality, float(np.max(np.abs(pert.solution.values[:Ki + t1]
                                                           - full.solution.values[:Ki + t1]))))
    ok = err <= 1e-6 and factor <= 0.5 and semigroup <= 1e-9 and causality == 0.0
    return ok, {"oracle_error": err, "max_factor": factor, "semigroup_error": semigroup,
                "causality_error": causality}


@_timed(9, "Lipschitz dependence envelope")
def criterion_9(seed=0):
    """50 pairs: |x_t - y_t| <= 8 exp(2 ln2 t) |x0 - y0| on [0, 5]."""
    K, T = 64, 5.0
    h = 1.0 / K
    rng = make_rng(seed)
    sys = linear_distributed_system(0.5)
    G, P = lipschitz_constants(sys.moduli, 1.0, 1.0)
    violations, worst = 0, 0.0
    for _ in range(50):
        _, x0, inp = _ex27_instance(rng, K, T, q=0.5)
        y0 = SampledFn(x0.grid, x0.values + rng.uniform(-1, 1, x0.values.shape) * rng.uniform(0, 1))
        a = solve(sys, x0, inp, SolveConfig(T)).solution.values[:, 0]
        b = solve(sys, y0, inp, SolveConfig(T)).solution.values[:, 0]
        diff = np.abs(a - b)
        hist = np.lib.stride_tricks.sliding_window_view(diff, K).max(axis=1)   # |x_t - y_t| at t = k h
        t = np.arange(len(hist)) * h
        bound = G * np.exp(P * t) * hist[0]
        ratio = float(np.max(hist / np.maximum(bound, 1e-300)))
        worst = max(worst, ratio)
        violations += int(np.any(hist > bound * (1 + 1e-12)))
    ok = violations == 0 and abs(G - 8.0) < 1e-12 and abs(P - 2 * math.log(2)) < 1e-12
    return ok, {"G": G, "P": P, "violations": violations, "worst_ratio": worst}


@_timed(10, "L1 continuity with a discontinuous profile")
def criterion_10(seed=0):
    """Step profile on the open-loop plant: L1 distance shrinks at least 0.6x per halving of delta."""
    K = 320
    h = 1.0 / K
    sysh = recirculation_plant(1.0)
    x0 = SampledFn(Grid(0.0, h, K), np.where(np.arange(K) < K // 2, 1.0, 0.0))
    deltas = (0.1, 0.05, 0.025, 0.0125)
    bases = (0.5, 1.5, 3.0)
    times = sorted({round((t + d) * K) / K for t in bases for d in (0.0,) + deltas})
    sol = solve_pde(sysh, x0, None, max(times), times)
    ok, out = True, {}
    for t in bases:
        dist = [l_mu_distance(sol.snapshots[round((t + d) * K) / K], sol.snapshots[t], 1.0) for d in deltas]
        ok &= all(b <= 0.6 * a + 1e-9 for a, b in zip(dist, dist[1:]))
        out[f"t={t}"] = "/".join(f"{x:.3g}" for x in dist)
    return ok, out


CRITERIA = [criterion_1, criterion_2, criterion_3, criterion_4, criterion_5,
            criterion_6, criterion_7, criterion_8, criterion_9, criterion_10]


def run_criterion(number: int, seed: int = 0) -> CriterionResult:
    return CRITERIA[number - 1](seed)


def run_all(seed: int = 0, echo=print) -> list[CriterionResult]:
    results = []
    for fn in CRITERIA:
        res = fn(seed)
        if echo is not None:
            echo(res.line())
        results.append(res)
    return results
