"""Right-hand sides ``f(x_t, w_t)`` of integral delay equations.

A descriptor evaluates ``f`` on a window of ``K + 1`` cells: the ``K``
cells of the history ``[t_k - r, t_k)`` followed by the current cell
``[t_k, t_k + h)``.  The functional is evaluated exactly at the midpoint
``t_k + h/2`` of the current cell, i.e. on the cell-constant function whose
own delay window ``[t_k + h/2 - r, t_k + h/2)`` straddles half of the oldest
and half of the current cell.  This makes the resulting scheme second
order for smooth solutions while keeping every delay an exact cell read.

Each descriptor also reports split-Lipschitz and boundedness moduli
(:class:`Moduli`), which drive the step rule of the solver.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Callable

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view

from .errors import AlignmentError, DataError, DomainError, EvaluationError
from .kernels import Constant, Kernel
from .sampled import ALIGN_RTOL, SampledFn, make_rng

Modulus = Callable[[float], float]

LADDER = (0.0, 1e-3, 0.1, 0.5, 1.0, 2.0, 10.0, 100.0)


def _zero(_R: float) -> float:
    return 0.0


@dataclass(frozen=True)
class Moduli:
    """Moduli ``N``, ``M``, ``a`` and optionally ``b`` of a right-hand side.

    ``a`` is normalised so that ``a(R) >= R``.
    """

    N: Modulus
    M: Modulus
    a: Modulus
    b: Modulus | None = None
    audited: bool = True

    def a_norm(self, R: float) -> float:
        return max(float(self.a(R)), float(R))

    def is_monotone(self, ladder=LADDER) -> bool:
        """Spot check that every modulus is finite and nondecreasing on ``ladder``."""
        fns = [self.N, self.M, self.a_norm] + ([self.b] if self.b is not None else [])
        for fn in fns:
            vals = [float(fn(R)) for R in ladder]
            if not all(math.isfinite(v) for v in vals):
                return False
            if any(v1 < v0 - 1e-12 * max(1.0, abs(v0)) for v0, v1 in zip(vals, vals[1:])):
                return False
        return True


def cells_per_delay(r: float, h: float) -> int:
    """Number ``K`` of cells in a delay horizon ``r``; ``r/h`` must be an integer."""
    x = r / h
    K = round(x)
    if K < 1 or abs(x - K) > ALIGN_RTOL * max(1.0, x):
        raise AlignmentError(f"delay {r} is not an integer multiple of the step {h}")
    return int(K)


def piece_layout(K: int, h: float):
    """Lags of the pieces of the delay window seen from the current midpoint.

    Returns ``(lo, hi)`` arrays of length ``K + 1``: window cell ``i`` (0 is
    the oldest, ``K`` the current cell) covers lags ``s`` in ``[lo[i], hi[i]]``
    where ``s`` runs from 0 (now) to ``r = K*h``.
    """
    j = K - np.arange(K + 1)
    lo = np.clip((j - 0.5) * h, 0.0, K * h)
    hi = np.clip((j + 0.5) * h, 0.0, K * h)
    return lo, hi


class RhsDescriptor:
    """Interface of an IDE right-hand side.

    Attributes
    ----------
    n : int
        State dimension.
    m : int
        Input dimension (disturbance channels first, then controls).
    r : float
        Delay horizon.
    """

    n: int = 1
    m: int = 0
    r: float = 1.0

    def evaluate(self, x: np.ndarray, w: np.ndarray, h: float) -> np.ndarray:
        """Value at the midpoint of the last cell of the ``(K+1)``-cell window."""
        raise NotImplementedError

    def evaluate_block(self, X: np.ndarray, W: np.ndarray, k0: int, k1: int, h: float) -> np.ndarray:
        """Values for rows ``k0 .. k1-1`` of the stacked arrays ``X`` and ``W``.

        Row ``k`` reads its window ``X[k-K : k+1]``.
        """
        K = cells_per_delay(self.r, h)
        return np.array([self.evaluate(X[k - K:k + 1], W[k - K:k + 1], h) for k in range(k0, k1)])

    def evaluate_batch(self, X: np.ndarray, W: np.ndarray, h: float) -> np.ndarray:
        """Values for a batch of independent windows ``X`` (B, K+1, n) and ``W`` (B, K+1, m)."""
        return np.array([self.evaluate(x, w, h) for x, w in zip(X, W)])

    def moduli(self) -> Moduli:
        raise NotImplementedError

    def check_step(self, h: float) -> None:
        """Raise :class:`AlignmentError` if ``h`` does not divide every delay."""
        cells_per_delay(self.r, h)

    def to_json(self) -> dict:
        raise DataError(f"{type(self).__name__} has no JSON form")


class LinearScalarDistributed(RhsDescriptor):
    """``x(t) = d(t) * int_{-r}^0 q(s) x(t+s) ds + u(t)`` with ``|d| <= Q``.

    Inputs are ``w = (d, u)``.
    """

    def __init__(self, q: Kernel | float = 0.5, r: float = 1.0, Q: float = 1.0):
        self.q = q if isinstance(q, Kernel) else Constant(q)
        self.r = float(r)
        self.Q = float(Q)
        self.n = 1
        self.m = 2
        self._cache: dict = {}

    def weights(self, K: int, h: float) -> np.ndarray:
        """Exact integrals of ``q`` over the window pieces, oldest first."""
        key = (K, h)
        if key not in self._cache:
            lo, hi = piece_layout(K, h)
            # kernel argument is s = -lag
            self._cache[key] = np.asarray(self.q.integral(-hi, -lo), dtype=float)
        return self._cache[key]

    def evaluate(self, x, w, h):
        K = x.shape[0] - 1
        val = w[-1, 0] * (self.weights(K, h) @ x[:, 0]) + w[-1, 1]
        return np.array([val])

    def evaluate_block(self, X, W, k0, k1, h):
        K = cells_per_delay(self.r, h)
        win = sliding_window_view(X[k0 - K:k1, 0], K + 1)
        conv = win @ self.weights(K, h)
        return (W[k0:k1, 0] * conv + W[k0:k1, 1])[:, None]

    def moduli(self):
        sup_q = self.q.sup_abs(-self.r, 0.0)
        int_q = self.q.abs_integral(-self.r, 0.0)
        Q = self.Q
        return Moduli(
            N=lambda R: Q * sup_q,
            M=lambda R: Q * int_q,
            a=lambda R: (Q * int_q + 1.0) * R,
            b=lambda s: (Q * int_q + 1.0) * s,
        )

    def to_json(self):
        return {"type": "linear_scalar_distributed", "q": self.q.to_json(), "r": self.r, "Q": self.Q}


@dataclass(frozen=True)
class PointMap:
    """Locally Lipschitz map ``p(x, w)`` with its Lipschitz constant and bound.

    ``fn`` receives arrays of shape ``(..., n)`` and ``(..., m)``.
    """

    fn: Callable
    lipschitz: Modulus
    bound: Modulus

    @classmethod
    def linear(cls, A, B=None) -> "PointMap":
        A = np.atleast_2d(np.asarray(A, dtype=float))
        B = None if B is None else np.atleast_2d(np.asarray(B, dtype=float))
        nA = float(np.linalg.norm(A, 2))
        nB = 0.0 if B is None else float(np.linalg.norm(B, 2))

        def fn(x, w):
            out = x @ A.T
            if B is not None:
                out = out + w @ B.T
            return out

        return cls(fn, lambda R: nA, lambda R: (nA + nB) * R)


@dataclass(frozen=True)
class KernelMap:
    """Distributed map ``q(s, x, w)``; ``fn(s, x, w)`` is vectorized over lags."""

    fn: Callable
    lipschitz: Modulus
    bound: Modulus

    @classmethod
    def linear(cls, q: Kernel, A=1.0, r: float = 1.0) -> "KernelMap":
        A = np.atleast_2d(np.asarray(A, dtype=float))
        nA = float(np.linalg.norm(A, 2))
        sup_q = q.sup_abs(0.0, r)

        def fn(s, x, w):
            return np.asarray(q(s))[..., None] * (x @ A.T)

        return cls(fn, lambda R: sup_q * nA, lambda R: sup_q * nA * R)


class PointPlusKernel(RhsDescriptor):
    """``sum_i p_i(x(t - tau_i), w(t - tau_i)) + int_0^r q(s, x(t-s), w(t-s)) ds``.

    The integral is evaluated with the midpoint rule on each piece of the
    window (exact for lag-independent kernels); point delays read whole cells
    and must be integer multiples of the step.
    """

    def __init__(self, delays, point_maps, kernel_map: KernelMap | None = None,
                 r: float | None = None, n: int = 1, m: int = 0, b: Modulus | None = None):
        self.delays = [float(tau) for tau in delays]
        if len(self.delays) != len(point_maps):
            raise DataError("need one point map per delay")
        if any(tau <= 0 for tau in self.delays) or self.delays != sorted(self.delays):
            raise DataError("delays must be positive and nondecreasing")
        self.r = float(r if r is not None else (self.delays[-1] if self.delays else 1.0))
        if self.delays and self.delays[-1] > self.r * (1 + ALIGN_RTOL):
            raise DataError("delays must not exceed the horizon r")
        self.point_maps = list(point_maps)
        self.kernel_map = kernel_map
        self.n = n
        self.m = m
        self._b = b

    def check_step(self, h):
        cells_per_delay(self.r, h)
        for tau in self.delays:
            cells_per_delay(tau, h)

    def evaluate(self, x, w, h):
        K = x.shape[0] - 1
        out = np.zeros(self.n)
        for tau, pm in zip(self.delays, self.point_maps):
            i = K - cells_per_delay(tau, h)
            out += np.asarray(pm.fn(x[i], w[i]), dtype=float).reshape(self.n)
        if self.kernel_map is not None:
            lo, hi = piece_layout(K, h)
            vals = self.kernel_map.fn(0.5 * (lo + hi), x, w)
            out += (hi - lo) @ np.asarray(vals, dtype=float).reshape(K + 1, self.n)
        return out

    def moduli(self):
        pms, km, r = self.point_maps, self.kernel_map, self.r
        delays = self.delays

        def N(R):
            val = sum(pm.lipschitz(R) / tau for tau, pm in zip(delays, pms))
            return val + (km.lipschitz(R) if km is not None else 0.0)

        def M(R):
            return sum(pm.lipschitz(R) for pm in pms) + (r * km.lipschitz(R) if km is not None else 0.0)

        def a(R):
            val = sum(pm.bound(R) for pm in pms) + (r * km.bound(R) if km is not None else 0.0)
            return max(val, R)

        return Moduli(N=N, M=M, a=a, b=self._b)


class External(RhsDescriptor):
    """Caller-supplied evaluator with caller-asserted moduli (flagged unaudited)."""

    def __init__(self, evaluator: Callable, moduli: Moduli, n: int = 1, m: int = 0, r: float = 1.0):
        self.evaluator = evaluator
        self._moduli = moduli
        self.n, self.m, self.r = n, m, float(r)

    def evaluate(self, x, w, h):
        return np.asarray(self.evaluator(x, w, h), dtype=float).reshape(self.n)

    def moduli(self):
        m = self._moduli
        return Moduli(m.N, m.M, m.a, m.b, audited=False)


def compute_moduli(desc: RhsDescriptor, r: float | None = None) -> Moduli:
    """Moduli of ``desc``; external descriptors come back flagged unaudited."""
    if r is not None and abs(r - desc.r) > ALIGN_RTOL * desc.r:
        raise DomainError(f"descriptor horizon {desc.r} differs from r={r}")
    return desc.moduli()


@dataclass
class IdeSystem:
    """An IDE ``x(t) = f(x_t, w_t)``.

    Parameters
    ----------
    rhs : RhsDescriptor
        The functional ``f``.
    m1 : int
        Number of disturbance channels (leading input components), valued
        in the ball of radius ``Q``.
    Q : float
        Bound of the disturbance set.
    """

    rhs: RhsDescriptor
    m1: int = 0
    Q: float = 1.0
    _moduli: Moduli | None = field(default=None, repr=False)

    @property
    def n(self) -> int:
        return self.rhs.n

    @property
    def r(self) -> float:
        return self.rhs.r

    @property
    def m(self) -> int:
        return self.rhs.m

    @property
    def m2(self) -> int:
        return self.rhs.m - self.m1

    @property
    def moduli(self) -> Moduli:
        if self._moduli is None:
            self._moduli = compute_moduli(self.rhs)
        return self._moduli


def linear_distributed_system(q: Kernel | float = 0.5, r: float = 1.0, Q: float = 1.0) -> IdeSystem:
    """IDE with one distributed delay term, uncertain gain and additive input."""
    return IdeSystem(LinearScalarDistributed(q, r, Q), m1=1, Q=Q)


def _window_arrays(sys: IdeSystem, history: SampledFn, input_history: SampledFn | None, current):
    h = history.grid.step
    K = cells_per_delay(sys.r, h)
    if len(history) < K:
        raise DomainError(f"history has {len(history)} cells, horizon needs {K}")
    x = history.values[-K:]
    cur = x[-1] if current is None else np.atleast_1d(np.asarray(current, dtype=float))
    x = np.vstack([x, cur])
    if sys.m == 0:
        w = np.zeros((K + 1, 0))
    else:
        if input_history is None:
            raise DomainError("system has inputs but no input history was given")
        if not input_history.grid.same_step(history.grid):
            raise AlignmentError("input and state histories use different steps")
        wv = input_history.values
        if len(wv) == K:
            wv = np.vstack([wv, wv[-1]])
        if len(wv) < K + 1:
            raise DomainError(f"input history has {len(wv)} cells, need {K + 1}")
        w = wv[-(K + 1):]
    return x, w, h


def eval_rhs(sys: IdeSystem, history: SampledFn, input_history: SampledFn | None = None,
             current=None) -> np.ndarray:
    """Evaluate ``f`` at the midpoint of the cell following ``history``.

    Parameters
    ----------
    history : SampledFn
        At least ``K = r/h`` cells; the last ``K`` are used.
    input_history : SampledFn
        Input on the same window plus the current cell (``K + 1`` cells).
        With only ``K`` cells the last value is held over the current cell.
    current : array_like, optional
        State on the current cell.  Defaults to the last history value.
    """
    x, w, h = _window_arrays(sys, history, input_history, current)
    val = np.asarray(sys.rhs.evaluate(x, w, h), dtype=float)
    if not np.all(np.isfinite(val)):
        raise EvaluationError("right-hand side returned a non-finite value")
    return val


# randomized audits -------------------------------------------------------

@dataclass
class AuditReport:
    samples: int
    worst_lipschitz_ratio: float
    worst_bound_ratio: float
    worst_h3_ratio: float | None
    violations: list = field(default_factory=list)

    @property
    def passed(self) -> bool:
        return not self.violations


def _random_window(rng, K, n, R, kind):
    if kind == 0:
        x = rng.uniform(-1, 1, (K + 1, n))
    elif kind == 1:
        x = np.zeros((K + 1, n))
        x[rng.integers(K + 1)] = rng.uniform(-1, 1, n)
    else:
        x = np.tile(rng.uniform(-1, 1, n), (K + 1, 1))
    nrm = np.max(np.linalg.norm(x, axis=1))
    return x * (R * rng.uniform(0, 1) / nrm) if nrm > 0 else x


def _random_input(rng, sys, K, R):
    w = np.empty((K + 1, sys.m))
    w[:, :sys.m1] = rng.uniform(-sys.Q, sys.Q, (K + 1, sys.m1))
    u = rng.uniform(-1, 1, (K + 1, sys.m2))
    nrm = np.max(np.abs(u)) if u.size else 0.0
    w[:, sys.m1:] = u * (R * rng.uniform(0, 1) / nrm) if nrm > 0 else u
    return w


def audit_moduli(sys: IdeSystem, R: float, K: int = 16, samples: int = 1000,
                 seed: int = 0, n_lags: int = 10) -> AuditReport:
    """Check split-Lipschitz and bound inequalities on random windows.

    For every sample a pair of histories ``x, y`` with norm at most ``R``
    and a split lag ``eta`` are drawn; the check is

    ``|f(x,w) - f(y,w)| <= N(R) eta sup_near |x-y| + M(R) sup_far |x-y|``

    where the window cell straddling ``-eta`` counts in both regions.
    The bound ``|f| <= a(R)`` and, when ``b`` is known, the input-to-state
    bound ``|f(x,d,u)| <= b(max(|x|, |u|))`` are audited on the same draws.
    """
    rng = make_rng(seed)
    rhs, mod = sys.rhs, sys.moduli
    h = sys.r / K
    lags = np.unique(np.linspace(1, K - 1, n_lags).round().astype(int)) if K > 1 else np.array([1])
    worst_l = worst_a = 0.0
    worst_b = 0.0 if mod.b is not None else None
    bad = []
    NR, MR, aR = mod.N(R), mod.M(R), mod.a_norm(R)
    for i in range(samples):
        x = _random_window(rng, K, sys.n, R, i % 3)
        y = _random_window(rng, K, sys.n, R, (i // 3) % 3)
        if i % 2:
            # perturb only recent cells to load the near term
            y = x.copy()
            j0 = K - int(rng.integers(0, K))
            y[j0:] += rng.uniform(-1, 1, (K + 1 - j0, sys.n)) * 0.1 * R
            y *= min(1.0, R / max(np.max(np.linalg.norm(y, axis=1)), 1e-300))
        w = _random_input(rng, sys, K, R)
        fx = rhs.evaluate(x, w, h)
        fy = rhs.evaluate(y, w, h)
        lhs = float(np.linalg.norm(fx - fy))
        diff = np.linalg.norm(x - y, axis=1)
        j = int(lags[i % len(lags)])
        near = float(np.max(diff[K - j:]))
        far = float(np.max(diff[:K - j + 1]))
        rhs_val = NR * j * h * near + MR * far
        tol = 1e-12 * max(1.0, R)
        if lhs > 0:
            worst_l = max(worst_l, lhs / max(rhs_val, 1e-300))
        if lhs > rhs_val + tol:
            bad.append(("lipschitz", i, lhs, rhs_val))
        fnorm = float(np.linalg.norm(fx))
        worst_a = max(worst_a, fnorm / aR if aR > 0 else (math.inf if fnorm > 0 else 0.0))
        if fnorm > aR + tol:
            bad.append(("bound", i, fnorm, aR))
        if mod.b is not None:
            s = max(float(np.max(np.linalg.norm(x, axis=1))),
                    float(np.max(np.abs(w[:, sys.m1:]))) if sys.m2 else 0.0)
            bs = mod.b(s)
            if fnorm > 0:
                worst_b = max(worst_b, fnorm / bs if bs > 0 else math.inf)
            if fnorm > bs + tol:
                bad.append(("h3", i, fnorm, bs))
    return AuditReport(samples, worst_l, worst_a, worst_b, bad)
