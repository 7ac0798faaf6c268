"""Successive-approximation solver for integral delay equations.

The solution is built window by window.  On each window of length
``delta`` (at most the delay horizon) the equation is a contraction as long
as ``2 N(5 a(s)) delta < 1``, where ``s`` bounds the current history and the
nearby input.  Picard sweeps then converge geometrically with factor below
one half.  ``delta`` is recomputed at the start of every window from the
running norm, so windows stay long while the solution stays small.
"""

from __future__ import annotations

import logging
import math
from dataclasses import dataclass, field

import numpy as np

from .errors import AlignmentError, ContractionError, DomainError, GridTooCoarseError
from .functionals import IdeSystem, Moduli, cells_per_delay
from .sampled import ALIGN_RTOL, Grid, SampledFn, to_csv, window

log = logging.getLogger(__name__)

#: strictness margin in the window rule ``delta = 1 / (2 N + EPS0)``
EPS0 = 1e-9


@dataclass
class SolveConfig:
    """Solver settings.

    Attributes
    ----------
    horizon : float
        Final time ``T`` (must be a multiple of the step).
    tol : float
        Stop when successive iterates differ by at most ``tol`` in sup norm.
    max_picard_iters : int
        Sweeps allowed per window before giving up.
    blowup_threshold : float
        Norm above which the solution is declared to escape.
    picard_seed : float
        Constant value of the first iterate on every window.
    strict_contraction : bool
        Raise if a measured sweep factor exceeds one half.
    """

    horizon: float = 1.0
    tol: float = 1e-12
    max_picard_iters: int = 200
    blowup_threshold: float = 1e12
    picard_seed: float = 0.0
    strict_contraction: bool = True

    def __post_init__(self):
        if not self.tol > 0:
            raise DomainError("tol must be positive")
        if self.horizon < 0:
            raise DomainError("horizon must be non-negative")


@dataclass
class WindowLog:
    index: int
    t_start: float
    t_end: float
    R: float
    delta: float
    sweeps: int
    factor: float
    max_iterate_norm: float
    iterate_bound: float


@dataclass
class Trajectory:
    """Solution on ``[-r, t_max_reached)`` plus diagnostics.

    ``t_max_reached`` is ``math.inf`` when the requested horizon was reached.
    """

    step: float
    r: float
    solution: SampledFn
    input: SampledFn | None
    horizon: float
    t_max_reached: float = math.inf
    escaped: bool = False
    last_finite_norm: float = 0.0
    windows: list[WindowLog] = field(default_factory=list)

    @property
    def t_end(self) -> float:
        return self.solution.t_end

    @property
    def max_factor(self) -> float:
        return max((w.factor for w in self.windows), default=0.0)

    def history(self, t: float) -> SampledFn:
        """History ``x_t`` on ``[t - r, t)`` (absolute times)."""
        return window(self.solution, t - self.r, t)

    def to_csv(self, dest=None) -> str:
        return to_csv(self.solution, dest)


def contraction_window(sys: IdeSystem, R: float, step: float | None = None) -> float:
    """Window length ``min(r, 1/(2 N(5 a(R)) + EPS0))``, rounded down to the grid.

    Raises
    ------
    GridTooCoarseError
        If the window is shorter than one step.
    """
    if R < 0:
        raise DomainError("R must be non-negative")
    mod = sys.moduli
    N = float(mod.N(5.0 * mod.a_norm(R)))
    delta = min(sys.r, 1.0 / (2.0 * N + EPS0))
    if step is None:
        return delta
    m = math.floor(delta / step + 1e-9)
    if m < 1:
        raise GridTooCoarseError(
            f"grid too coarse for contraction window: delta={delta:.6g} < step={step:.6g}",
            required_step=delta,
        )
    return m * step


def lipschitz_constants(moduli: Moduli, r: float, s: float) -> tuple[float, float]:
    """Constants ``G, P`` of the estimate ``|x_t - y_t| <= G exp(P t) |x_0 - y_0|``."""
    N, M = float(moduli.N(s)), float(moduli.M(s))
    G = (1.0 + 2.0 * M) ** (2.0 + 2.0 * r * N)
    P = (2.0 * N + 1.0 / r) * math.log1p(2.0 * M)
    return G, P


def escape_time_bound(sys: IdeSystem, s: float) -> float:
    """Lower bound ``r / (1 + 2 r N(5 a(s)))`` on the existence time."""
    mod = sys.moduli
    return sys.r / (1.0 + 2.0 * sys.r * float(mod.N(5.0 * mod.a_norm(s))))


def _input_rows(sys: IdeSystem, inputs: SampledFn | None, h: float, K: int, n_cells: int) -> np.ndarray:
    """Input values for cells ``-K .. n_cells-1`` (one row per cell)."""
    if sys.m == 0:
        return np.zeros((K + n_cells, 0))
    if inputs is None:
        raise DomainError("system has inputs but none were supplied")
    if not inputs.grid.same_step(Grid(0.0, h, 1)):
        raise AlignmentError(f"input step {inputs.grid.step} differs from state step {h}")
    if inputs.n != sys.m:
        raise DomainError(f"input has {inputs.n} channels, system expects {sys.m}")
    i0 = inputs.grid.edge_index(-K * h)
    i1 = i0 + K + n_cells
    if i0 < 0 or i1 > len(inputs):
        raise DomainError(
            f"input covers [{inputs.t_start:g}, {inputs.t_end:g}), need [{-K * h:g}, {n_cells * h:g})"
        )
    return np.array(inputs.values[i0:i1])


def _picard_block(sys, X, W, k0, k1, h, cfg, seed_value):
    """Iterate on rows ``k0 .. k1-1`` in place; return (sweeps, factor, max_norm).

    Row ``k`` depends only on rows up to ``k``, so the leading rows that
    have converged are frozen and later sweeps only touch the rest.  A
    row's final value then depends on earlier rows only, which keeps the
    solver exactly causal.
    """
    rhs = sys.rhs
    X[k0:k1] = seed_value
    max_norm = float(np.max(np.linalg.norm(X[k0:k1], axis=1))) if k1 > k0 else 0.0
    scale = max(1.0, float(np.max(np.abs(X[max(k0 - 1, 0):k0]))) if k0 > 0 else 1.0)
    prev = None
    factor = 0.0
    start = k0
    diff = math.inf
    for sweep in range(1, cfg.max_picard_iters + 1):
        new = rhs.evaluate_block(X, W, start, k1, h)
        if not np.all(np.isfinite(new)):
            return sweep, factor, math.inf
        row_diff = np.max(np.abs(new - X[start:k1]), axis=1)
        diff = float(np.max(row_diff))
        X[start:k1] = new
        max_norm = max(max_norm, float(np.max(np.linalg.norm(new, axis=1))))
        if max_norm > cfg.blowup_threshold:
            return sweep, factor, max_norm
        if prev is not None and prev > 1e-11 * scale:
            f = diff / prev
            factor = max(factor, f)
            if cfg.strict_contraction and f > 0.5 + 1e-9:
                raise ContractionError(f"sweep factor {f:.3g} exceeds 1/2", factor=f)
        open_rows = np.nonzero(row_diff > cfg.tol)[0]
        if open_rows.size == 0:
            return sweep, factor, max_norm
        start += int(open_rows[0])
        prev = diff
    raise ContractionError(
        f"no convergence in {cfg.max_picard_iters} sweeps (last difference {diff:.3g})",
        factor=factor,
    )


def _running_bound(X, W, k0, K, n_total):
    s = float(np.max(np.linalg.norm(X[k0 - K:k0], axis=1)))
    if W.shape[1]:
        lo, hi = k0 - K, min(k0 + K, n_total)
        s = max(s, float(np.max(np.linalg.norm(W[lo:hi], axis=1))))
    return s


def solve(sys: IdeSystem, x0: SampledFn, inputs: SampledFn | None = None,
          cfg: SolveConfig | None = None) -> Trajectory:
    """Solve ``x(t) = f(x_t, w_t)`` on ``[0, cfg.horizon)``.

    Parameters
    ----------
    sys : IdeSystem
    x0 : SampledFn
        Initial history; exactly ``K = r/h`` cells, treated as ``[-r, 0)``.
    inputs : SampledFn, optional
        Input on (at least) ``[-r, T)``; required when ``sys.m > 0``.
    cfg : SolveConfig

    Returns
    -------
    Trajectory
    """
    cfg = cfg or SolveConfig()
    h = x0.grid.step
    K = cells_per_delay(sys.r, h)
    sys.rhs.check_step(h)
    if len(x0) != K:
        raise DomainError(f"initial history has {len(x0)} cells, expected {K}")
    if x0.n != sys.n:
        raise DomainError(f"initial history has dimension {x0.n}, system has {sys.n}")
    n_cells = Grid(0.0, h, 1).edge_index(cfg.horizon)
    W = _input_rows(sys, inputs, h, K, n_cells)
    X = np.zeros((K + n_cells, sys.n))
    X[:K] = x0.values
    mod = sys.moduli

    k = K
    end = K + n_cells
    windows: list[WindowLog] = []
    escaped = False
    t_reached = math.inf
    while k < end:
        s = _running_bound(X, W, k, K, end)
        delta = contraction_window(sys, s, h)
        m = min(int(round(delta / h)), end - k)
        sweeps, factor, max_norm = _picard_block(sys, X, W, k, k + m, h, cfg, cfg.picard_seed)
        entry = WindowLog(len(windows), (k - K) * h, (k - K + m) * h, s, delta, sweeps,
                          factor, max_norm, 5.0 * mod.a_norm(s))
        windows.append(entry)
        log.debug("window %d: R=%.6g, delta=%.6g, sweeps=%d, factor=%.4g",
                  entry.index, s, delta, sweeps, factor)
        norms = np.linalg.norm(X[k:k + m], axis=1)
        bad = np.nonzero(~np.isfinite(norms) | (norms > cfg.blowup_threshold))[0]
        if bad.size:
            stop = k + int(bad[0])
            if not np.isfinite(max_norm):
                stop = k
            escaped = True
            t_reached = (stop - K) * h
            k = stop
            break
        k += m
    sol_grid = Grid(-K * h, h, k)
    solution = SampledFn(sol_grid, X[:k])
    last = float(np.max(np.linalg.norm(X[max(k - K, 0):k], axis=1))) if k else 0.0
    inp = None if sys.m == 0 else SampledFn(Grid(-K * h, h, W.shape[0]), W)
    if escaped:
        log.warning("escape at t=%.6g (last finite norm %.6g)", t_reached, last)
    return Trajectory(h, sys.r, solution, inp, cfg.horizon, t_reached, escaped, last, windows)


def picard_step(sys: IdeSystem, base_history: SampledFn, inputs: SampledFn | None,
                delta: float, cfg: SolveConfig | None = None) -> SampledFn:
    """Extend ``base_history`` by one window of length ``delta``.

    ``inputs`` must cover ``[t0 - r, t0 + delta)`` where ``t0`` is the end of
    ``base_history``.
    """
    cfg = cfg or SolveConfig()
    h = base_history.grid.step
    K = cells_per_delay(sys.r, h)
    m = Grid(0.0, h, 1).edge_index(delta)
    if len(base_history) < K:
        raise DomainError(f"history has {len(base_history)} cells, horizon needs {K}")
    t0 = base_history.t_end
    X = np.zeros((K + m, sys.n))
    X[:K] = base_history.values[-K:]
    if sys.m:
        W = np.array(window(inputs, t0 - K * h, t0 + m * h).values)
    else:
        W = np.zeros((K + m, 0))
    sweeps, factor, max_norm = _picard_block(sys, X, W, K, K + m, h, cfg, cfg.picard_seed)
    if not math.isfinite(max_norm) or max_norm > cfg.blowup_threshold:
        raise ContractionError("iterates escaped the blow-up threshold", factor=factor)
    return SampledFn(Grid(t0, h, m), X[K:])


def resume(traj: Trajectory, sys: IdeSystem, t0: float, cfg: SolveConfig) -> Trajectory:
    """Re-solve from the history of ``traj`` at ``t0``; times stay relative to ``t0``."""
    hist = traj.history(t0).as_history()
    inp = None
    if traj.input is not None:
        inp = window(traj.input, t0 - sys.r, traj.input.t_end).shifted(-t0)
    return solve(sys, hist, inp, cfg)


def is_aligned(t: float, h: float) -> bool:
    x = t / h
    return abs(x - round(x)) <= ALIGN_RTOL * max(1.0, abs(x))
