"""Finite-time boundary stabilization of transport with recirculation.

Plant::

    x_t + x_z = g x(t, 1),     x(t, 0) = u(t).

The boundary law ``u(t) = int_0^1 k(z) x(t, z) dz`` with
``k(z) = -g exp(g z)`` drives every solution to zero by ``t = 2``.  In
closure coordinates (``p = x(., 1)``, ``v = x(., 0)``) the same law is a
distributed delay law in ``p`` and ``v`` over the last unit of time, and
since ``p`` and ``v`` are the boundary traces, it only needs measurements
at ``z = 0`` and ``z = 1``.

The discrete controller uses trapezoid-consistent weights: with
``alpha = (1 + g h/2)/(1 - g h/2)`` playing the role of ``exp(g h)``, the
kernel, delay and two-point forms are the same linear functional of the
closure state, so they agree to rounding error and the closed loop is
exactly dead-beat on the grid.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view

from .errors import DomainError
from .functionals import cells_per_delay
from .hyperbolic import (ConvertedHyperbolic, FunctionalSum, HyperbolicSystem, InputPassthrough,
                         PdeSolution, PointEvaluation, ProfileFunctional, solve_pde)
from .ide import SolveConfig
from .kernels import Constant
from .sampled import Grid, SampledFn, make_rng, sup_norm

CONTROLLERS = ("kernel", "ide", "two-point")


def kernel(g: float, z):
    """Feedback kernel ``-g exp(g z)``."""
    return -g * np.exp(g * np.asarray(z, dtype=float))


def _alpha_beta(g: float, h: float) -> tuple[float, float]:
    den = 1.0 - 0.5 * g * h
    if den <= 0:
        raise DomainError(f"step {h} too large for gain {g} (need g h < 2)")
    return (1.0 + 0.5 * g * h) / den, 0.5 * h / den


def kernel_weights(g: float, K: int) -> np.ndarray:
    """Nodal weights ``c_j`` of the discrete kernel law ``u = sum_j c_j x(j/K)``.

    They approach ``k(z_j) dz`` (with trapezoid end weights) as ``K`` grows.
    """
    h = 1.0 / K
    a, b = _alpha_beta(g, h)
    c = np.empty(K + 1)
    j = np.arange(1, K)
    c[0] = -g * b
    c[1:K] = -g * b * a ** (j - 1) * (a + 1.0)
    c[K] = -g * b * a ** (K - 1)
    return c


class DeadbeatKernel(ProfileFunctional):
    """Boundary functional ``int_0^1 k(z) x(z) dz`` of the finite-time law.

    Nodal profiles use :func:`kernel_weights`; cell profiles use the
    midpoint rule with the exact kernel.
    """

    def __init__(self, g: float):
        self.g = float(g)
        self._cache: dict = {}

    def on_nodes(self, X, w, dz):
        K = X.shape[1] - 1
        if K not in self._cache:
            self._cache[K] = kernel_weights(self.g, K)
        return X @ self._cache[K]

    def on_cells(self, x, w, dz):
        zmid = (np.arange(len(x)) + 0.5) * dz
        return float(np.sum(kernel(self.g, zmid) * x) * dz)

    def lipschitz(self, R):
        # factor 2 covers the discrete near-boundary weights
        return 2.0 * abs(self.g) * math.exp(max(self.g, 0.0))

    def bound(self, R):
        return abs(math.expm1(self.g)) * R

    def to_json(self):
        return {"form": "deadbeat_kernel", "g": self.g}


def recirculation_plant(g: float, boundary: ProfileFunctional | None = None) -> HyperbolicSystem:
    """``x_t + x_z = g x(t, 1)`` with ``x(t, 0) = G``; by default ``G = u``."""
    return HyperbolicSystem(
        g=[Constant(g)],
        K=[PointEvaluation(1.0)],
        G=boundary if boundary is not None else InputPassthrough(0),
        c=1.0,
        m=1,
        m1=0,
    )


@dataclass(frozen=True)
class RecirculationPlant:
    """Plant with gain ``g`` on ``K`` cells."""

    g: float
    K: int = 256

    @property
    def step(self) -> float:
        return 1.0 / self.K

    def system(self) -> HyperbolicSystem:
        return recirculation_plant(self.g)

    def closed_loop_system(self) -> HyperbolicSystem:
        return recirculation_plant(self.g, FunctionalSum([DeadbeatKernel(self.g), InputPassthrough(0)]))


def control_kernel(g: float, profile: SampledFn) -> float:
    """``int k(z) x(z) dz`` with the kernel sampled at cell midpoints."""
    dz = profile.grid.step
    zmid = profile.grid.midpoints
    return float(np.sum(kernel(g, zmid) * profile.values[:, 0]) * dz)


def control_kernel_nodal(g: float, nodes: np.ndarray) -> np.ndarray:
    """Discrete kernel law on nodal profiles (last axis holds ``K + 1`` nodes)."""
    nodes = np.asarray(nodes, dtype=float)
    return nodes @ kernel_weights(g, nodes.shape[-1] - 1)


def _delay_law_windows(g: float, P: np.ndarray, V: np.ndarray, h: float) -> np.ndarray:
    """Discrete delay law on windows of ``K + 1`` cells (last axis, oldest first)."""
    K = P.shape[-1] - 1
    a, b = _alpha_beta(g, h)
    S = h * (0.5 * P[..., K] + P[..., 1:K].sum(axis=-1) + 0.5 * P[..., 0])
    phi = V - P
    wts = b * a ** (K - 1 - np.arange(K))
    tot = (phi[..., 1:] + phi[..., :-1]) @ wts
    return -g * (a ** K * S + tot)


def _delay_law_exact(g: float, P: np.ndarray, V: np.ndarray, h: float) -> float:
    """Delay law at the end of a ``K``-cell window, integrating the weights exactly."""
    K = len(P)
    lag_hi = h * (K - np.arange(K))          # t - s at the older edge of each cell
    lag_lo = lag_hi - h
    if g == 0.0:
        return 0.0
    e_int = (np.exp(g * lag_hi) - np.exp(g * lag_lo)) / g     # int exp(g (t - s)) ds
    wp = math.exp(g) * h - e_int
    return float(-g * (wp @ P) - g * (e_int @ V))


def control_ide(g: float, p_hist: SampledFn, v_hist: SampledFn) -> float:
    """Boundary law written in closure coordinates.

    ``u = -g int_{t-1}^t (e^g - e^{g(t-s)}) p(s) ds - g int_{t-1}^t e^{g(t-s)} v(s) ds``.

    With ``K`` cells the integrals are exact for the cell-constant histories
    and ``t`` is the end of the window.  With ``K + 1`` cells (history plus
    current cell) the trapezoid-consistent form used inside the closed loop
    is returned, evaluated at the midpoint of the current cell.
    """
    h = p_hist.grid.step
    K = cells_per_delay(1.0, h)
    P = p_hist.values[:, 0]
    V = v_hist.values[:, 0]
    if len(P) != len(V):
        raise DomainError("p and v histories must have the same length")
    if len(P) == K + 1:
        return float(_delay_law_windows(g, P, V, h))
    if len(P) == K:
        return _delay_law_exact(g, P, V, h)
    raise DomainError(f"histories must hold {K} or {K + 1} cells, got {len(P)}")


def control_two_point(g: float, x1_hist: SampledFn, x0_hist: SampledFn) -> float:
    """Same law fed with the boundary traces ``x(s, 1)`` and ``x(s, 0)``."""
    return control_ide(g, x1_hist, x0_hist)


class DelayLawLoop(ConvertedHyperbolic):
    """Closed-loop closure where the boundary value comes from the delay law.

    ``p`` follows the plant; ``v = u + w`` with ``u`` computed from the
    ``(p, v)`` window (equivalently from the two boundary traces).
    """

    def __init__(self, g: float):
        super().__init__(recirculation_plant(g))
        self.g = float(g)

    def evaluate_block(self, X, W, k0, k1, h):
        K = cells_per_delay(self.r, h)
        win = sliding_window_view(X[k0 - K:k1], K + 1, axis=0)    # (B, 2, K+1)
        nodes = self.nodes(win.transpose(0, 2, 1), h)
        p = nodes[:, K]
        u = _delay_law_windows(self.g, win[:, 0, :], win[:, 1, :], h)
        return np.column_stack([p, u + W[k0:k1, 0]])

    def evaluate(self, x, w, h):
        return self.evaluate_block(np.asarray(x), np.asarray(w), x.shape[0] - 1, x.shape[0], h)[0]

    def evaluate_batch(self, X, W, h):
        nodes = self.nodes(X, h)
        u = _delay_law_windows(self.g, X[:, :, 0], X[:, :, 1], h)
        return np.column_stack([nodes[:, -1], u + W[:, -1, 0]])

    def moduli(self):
        # same functional as the kernel law, so the same moduli apply
        from .hyperbolic import closure_moduli
        return closure_moduli(RecirculationPlant(self.g).closed_loop_system())


@dataclass
class ClosedLoopResult:
    g: float
    controller: str
    solution: PdeSolution
    u: SampledFn
    w: SampledFn

    @property
    def trajectory(self):
        return self.solution.trajectory

    @property
    def snapshots(self) -> dict:
        return self.solution.snapshots

    def boundary_traces(self) -> SampledFn:
        return self.solution.boundary_traces()


def closed_loop(g: float, x0: SampledFn, controller: str = "kernel", w: SampledFn | None = None,
                T: float = 3.0, snapshot_times=(), cfg: SolveConfig | None = None) -> ClosedLoopResult:
    """Simulate the plant under the finite-time law plus actuator error ``w``.

    Parameters
    ----------
    controller : {"kernel", "ide", "two-point"}
        Implementation used inside the loop.
    w : SampledFn, optional
        Additive actuator error on ``[0, T)``; zero by default.
    """
    if controller not in CONTROLLERS:
        raise DomainError(f"unknown controller {controller!r}; choose from {CONTROLLERS}")
    K = len(x0)
    h = 1.0 / K
    n = Grid(0.0, h, 1).edge_index(T)
    if w is None:
        w = SampledFn(Grid(0.0, h, n), np.zeros(n))
    plant = RecirculationPlant(g, K)
    if controller == "kernel":
        sol = solve_pde(plant.closed_loop_system(), x0, w, T, snapshot_times, cfg)
    else:
        sol = _solve_delay_law(g, x0, w, T, snapshot_times, cfg)
    traj = sol.trajectory
    v = traj.solution.values[K:, 1]
    u = SampledFn(Grid(0.0, h, len(v)), v - w.values[:len(v), 0])
    return ClosedLoopResult(g, controller, sol, u, w)


def _solve_delay_law(g, x0, w, T, snapshot_times, cfg):
    from .functionals import IdeSystem
    from .hyperbolic import _pad_inputs, initial_v
    from .ide import solve

    cfg = cfg or SolveConfig()
    cfg = SolveConfig(T, cfg.tol, cfg.max_picard_iters, cfg.blowup_threshold,
                      cfg.picard_seed, cfg.strict_contraction)
    sysh = recirculation_plant(g)
    K = len(x0)
    hist = initial_v(sysh, x0)
    inputs = _pad_inputs(sysh, w, K, 1.0 / K, T)
    traj = solve(IdeSystem(DelayLawLoop(g)), hist.stacked(), inputs, cfg)
    sol = PdeSolution(sysh, traj, x0)
    for t in snapshot_times:
        if t <= traj.t_end + 1e-9 / K:
            sol.profile(t)
    return sol


def controller_outputs(result: ClosedLoopResult) -> dict:
    """The three controller forms evaluated along a closed-loop run.

    Returns arrays over the cells of ``[0, T)``: ``kernel`` applies the
    nodal kernel law to the reconstructed profile at each cell midpoint,
    ``ide`` the delay law on the ``(p, v)`` window, and ``two-point`` the
    delay law on traces read off the reconstructed profiles at ``z = 1``
    and ``z = 0`` (closure values before time 0).
    """
    g = result.g
    traj = result.trajectory
    X = traj.solution.values
    h = traj.step
    K = cells_per_delay(1.0, h)
    n = len(X) - K
    plant = recirculation_plant(g)
    desc = ConvertedHyperbolic(plant)
    win = sliding_window_view(X, K + 1, axis=0)                  # (n+1, 2, K+1)
    nodes = desc.nodes(win[:n].transpose(0, 2, 1), h)             # profile at cell k midpoint
    u_kernel = control_kernel_nodal(g, nodes)
    u_ide = _delay_law_windows(g, win[:n, 0, :], win[:n, 1, :], h)
    x1 = np.concatenate([X[:K, 0], nodes[:, K]])
    x0 = np.concatenate([X[:K, 1], nodes[:, 0]])
    t1 = sliding_window_view(x1, K + 1)[:n]
    t0 = sliding_window_view(x0, K + 1)[:n]
    u_two = _delay_law_windows(g, t1, t0, h)
    return {"kernel": u_kernel, "ide": u_ide, "two-point": u_two}


@dataclass
class GainReport:
    gamma: float
    ratios: list
    transient_residual: float
    linearity_error: float


def _random_levels(rng, pieces, n, amp=1.0):
    lev = rng.uniform(-amp, amp, pieces)
    return np.repeat(lev, n // pieces)


def iss_gain_measurement(g: float, trials: int = 10, T: float = 4.0, K: int = 128,
                         seed: int = 0, amplitude: float = 1.0, pieces: int = 8) -> GainReport:
    """Measure the steady-state gain from actuator error to profile size.

    For each trial a random piecewise-constant ``x0`` and ``w`` (levels in
    ``[-amplitude, amplitude]``) are simulated; the ratio of
    ``sup_z |x(t, z)|`` over snapshot times in ``[2.5, T]`` to ``sup |w|``
    is recorded.  Each trial also reruns with ``w = 0`` (the residual after
    ``t = 2`` must vanish) and with ``2 w`` (the residual must double).
    """
    rng = make_rng(seed)
    h = 1.0 / K
    n = Grid(0.0, h, 1).edge_index(T)
    times = [t for t in np.arange(2.5, T + 1e-12, 0.25)]
    zero_times = [t for t in np.arange(2.0 + 2 * h, T + 1e-12, 0.25)]
    ratios, transient, lin = [], 0.0, 0.0
    for _ in range(trials):
        x0 = SampledFn(Grid(0.0, h, K), _random_levels(rng, 16, K))
        wv = rng.uniform(-amplitude, amplitude, int(math.ceil(n / (K // pieces))))
        wv = np.repeat(wv, K // pieces)[:n]
        w = SampledFn(Grid(0.0, h, n), wv)
        res = closed_loop(g, x0, "kernel", w, T, times)
        peak = max(sup_norm(res.snapshots[t]) for t in times)
        ratios.append(peak / np.max(np.abs(wv)))
        free = closed_loop(g, x0, "kernel", None, T, zero_times)
        transient = max(transient, max(sup_norm(free.snapshots[t]) for t in zero_times))
        dbl = closed_loop(g, 0.0 * x0, "kernel", 2.0 * w, T, times)
        single = closed_loop(g, 0.0 * x0, "kernel", w, T, times)
        for t in times:
            lin = max(lin, float(np.max(np.abs(dbl.snapshots[t].values - 2.0 * single.snapshots[t].values))))
    return GainReport(float(max(ratios)), ratios, transient, lin)


def constant_error_profile(g: float, w_bar: float, K: int) -> np.ndarray:
    """Steady profile ``w_bar (1 - g + g z)`` on cell midpoints under constant actuator error."""
    z = (np.arange(K) + 0.5) / K
    return w_bar * (1.0 - g + g * z)
