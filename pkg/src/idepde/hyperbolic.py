"""Transport equations with nonlocal terms and their delay-equation closure.

The PDE on ``z in (0, 1]``

    x_t + c x_z = a(p, z) x + g(z) . p(t),
    p_i(t) = K_i(w(t), x_t),     x(t, 0) = G(w(t), x_t),

is integrated along characteristics.  With ``v(t) = x(t, 0)`` the profile
at time ``t`` is a functional of the recent history of ``(p, v)``:

    x(t, z) = exp(int a) v(t - z/c) + int exp(int a) g . p,

so ``(p, v)`` solves an integral delay equation with horizon ``1/c``.
Solving that equation with :mod:`idepde.ide` and reconstructing profiles
is the main route; :func:`upwind_reference` is an independent
finite-difference oracle.

Grids use unit CFL: the space step is ``c`` times the time step, so the
characteristic through a node at one time lands on a node one step later.
Inside the closure, profiles are reconstructed on the ``K + 1`` nodes
``z_j = j dz`` at cell-midpoint times, where every characteristic read is
exact; integral functionals then use the trapezoid rule.  Snapshots are
reconstructed at cell edges on the ``K`` cell midpoints ``(j + 1/2) dz``.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Callable

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view

from .errors import AlignmentError, DataError, DomainError
from .functionals import IdeSystem, Moduli, RhsDescriptor, cells_per_delay
from .ide import SolveConfig, Trajectory, solve
from .kernels import Constant, Kernel
from .sampled import Grid, SampledFn, sup_norm, to_csv


# coefficients and profile functionals ------------------------------------

@dataclass(frozen=True)
class Coefficient:
    """Reaction coefficient ``a(p, z)``.

    ``fn(p, z)`` must accept ``p`` of shape ``(..., N)`` and ``z`` of shape
    ``(...)``.  ``bound(R)`` bounds ``|a|`` for ``|p| <= R`` and
    ``lipschitz(R)`` is its Lipschitz constant in ``p`` on that ball.
    """

    fn: Callable
    bound: Callable[[float], float]
    lipschitz: Callable[[float], float]
    constant_value: float | None = None

    @classmethod
    def constant(cls, alpha: float) -> "Coefficient":
        alpha = float(alpha)
        return cls(lambda p, z: np.full(np.shape(z), alpha), lambda R: abs(alpha),
                   lambda R: 0.0, constant_value=alpha)

    @classmethod
    def of_z(cls, k: Kernel) -> "Coefficient":
        """Coefficient depending on position only."""
        sup = k.sup_abs(0.0, 1.0)
        const = k(0.0) if k.is_constant() else None
        return cls(lambda p, z: np.asarray(k(z), dtype=float), lambda R: sup,
                   lambda R: 0.0, constant_value=None if const is None else float(const))

    def is_zero(self) -> bool:
        return self.constant_value == 0.0


class ProfileFunctional:
    """Functional ``(w, x) -> real`` of an input value and a profile.

    ``on_nodes`` acts on nodal profiles (``K + 1`` values at ``j dz``) in
    batches; ``on_cells`` acts on a cell-constant profile.
    """

    def on_nodes(self, X: np.ndarray, w: np.ndarray, dz: float) -> np.ndarray:
        raise NotImplementedError

    def on_cells(self, x: np.ndarray, w: np.ndarray, dz: float) -> float:
        raise NotImplementedError

    def lipschitz(self, R: float) -> float:
        return 0.0

    def bound(self, R: float) -> float:
        return 0.0

    def b(self, s: float, disturbance_channels: int) -> float | None:
        """Input-to-state bound in terms of ``max(|u|, |x|)``, or None if none exists."""
        return self.bound(s)

    def __add__(self, other: "ProfileFunctional") -> "ProfileFunctional":
        return FunctionalSum([self, other])

    def to_json(self) -> dict:
        raise DataError(f"{type(self).__name__} has no JSON form")


def _gain(w, channel):
    if channel is None:
        return 1.0
    return w[..., channel]


def _gain_factor(channel, gain_bound, R):
    if channel is None:
        return 1.0
    return gain_bound if gain_bound is not None else R


def trapezoid_weights(K: int, dz: float) -> np.ndarray:
    wts = np.full(K + 1, dz)
    wts[0] = wts[-1] = 0.5 * dz
    return wts


class Zero(ProfileFunctional):
    def on_nodes(self, X, w, dz):
        return np.zeros(X.shape[0])

    def on_cells(self, x, w, dz):
        return 0.0

    def to_json(self):
        return {"form": "zero"}


class PointEvaluation(ProfileFunctional):
    """``gain * x(z0)``, optionally multiplied by an input channel.

    On cell profiles ``x(z0)`` is the cell ``(z_lo, z_hi]`` containing ``z0``.
    """

    def __init__(self, z: float = 1.0, gain_channel: int | None = None,
                 gain_bound: float | None = None):
        if not 0.0 < z <= 1.0:
            raise DomainError("evaluation point must lie in (0, 1]")
        self.z = float(z)
        self.gain_channel = gain_channel
        self.gain_bound = gain_bound

    def _node(self, K, dz):
        x = self.z / dz
        j = round(x)
        if abs(x - j) > 1e-9 * max(1.0, x):
            raise AlignmentError(f"evaluation point {self.z} is not a grid node")
        return j

    def on_nodes(self, X, w, dz):
        return X[:, self._node(X.shape[1] - 1, dz)] * _gain(w, self.gain_channel)

    def on_cells(self, x, w, dz):
        j = min(max(math.ceil(self.z / dz - 1e-9) - 1, 0), len(x) - 1)
        return float(x[j] * _gain(w, self.gain_channel))

    def lipschitz(self, R):
        return _gain_factor(self.gain_channel, self.gain_bound, R) / self.z

    def bound(self, R):
        return _gain_factor(self.gain_channel, self.gain_bound, R) * R

    def to_json(self):
        return {"form": "point", "z": self.z, "gain_channel": self.gain_channel,
                "gain_bound": self.gain_bound}


class WeightedIntegral(ProfileFunctional):
    """``gain * int_0^1 k(z) x(z) dz``.

    Nodal profiles use the trapezoid rule; cell profiles integrate the
    kernel exactly over each cell.
    """

    def __init__(self, kernel: Kernel | float = 1.0, gain_channel: int | None = None,
                 gain_bound: float | None = None):
        self.kernel = kernel if isinstance(kernel, Kernel) else Constant(kernel)
        self.gain_channel = gain_channel
        self.gain_bound = gain_bound
        self._cache: dict = {}

    def nodal_weights(self, K, dz):
        key = ("n", K, dz)
        if key not in self._cache:
            z = dz * np.arange(K + 1)
            self._cache[key] = trapezoid_weights(K, dz) * np.asarray(self.kernel(z), dtype=float)
        return self._cache[key]

    def cell_weights(self, K, dz):
        key = ("c", K, dz)
        if key not in self._cache:
            e = dz * np.arange(K + 1)
            self._cache[key] = np.asarray(self.kernel.integral(e[:-1], e[1:]), dtype=float)
        return self._cache[key]

    def on_nodes(self, X, w, dz):
        return (X @ self.nodal_weights(X.shape[1] - 1, dz)) * _gain(w, self.gain_channel)

    def on_cells(self, x, w, dz):
        return float(self.cell_weights(len(x), dz) @ x * _gain(w, self.gain_channel))

    def lipschitz(self, R):
        return _gain_factor(self.gain_channel, self.gain_bound, R) * self.kernel.sup_abs(0.0, 1.0)

    def bound(self, R):
        return _gain_factor(self.gain_channel, self.gain_bound, R) * self.kernel.abs_integral(0.0, 1.0) * R

    def to_json(self):
        return {"form": "integral", "kernel": self.kernel.to_json(),
                "gain_channel": self.gain_channel, "gain_bound": self.gain_bound}


class InputPassthrough(ProfileFunctional):
    """``gain * w[channel]``."""

    def __init__(self, channel: int = 0, gain: float = 1.0):
        self.channel = int(channel)
        self.gain = float(gain)

    def on_nodes(self, X, w, dz):
        return self.gain * w[:, self.channel]

    def on_cells(self, x, w, dz):
        return float(self.gain * w[self.channel])

    def bound(self, R):
        return abs(self.gain) * R

    def b(self, s, disturbance_channels):
        if self.channel < disturbance_channels:
            return None
        return abs(self.gain) * s

    def to_json(self):
        return {"form": "input", "channel": self.channel, "gain": self.gain}


class FunctionalSum(ProfileFunctional):
    def __init__(self, terms):
        self.terms = list(terms)

    def on_nodes(self, X, w, dz):
        return sum(t.on_nodes(X, w, dz) for t in self.terms)

    def on_cells(self, x, w, dz):
        return float(sum(t.on_cells(x, w, dz) for t in self.terms))

    def lipschitz(self, R):
        return sum(t.lipschitz(R) for t in self.terms)

    def bound(self, R):
        return sum(t.bound(R) for t in self.terms)

    def b(self, s, disturbance_channels):
        parts = [t.b(s, disturbance_channels) for t in self.terms]
        return None if any(p is None for p in parts) else sum(parts)

    def to_json(self):
        return {"form": "sum", "terms": [t.to_json() for t in self.terms]}


# the system ------------------------------------------------------------------

@dataclass
class HyperbolicSystem:
    """Transport PDE with nonlocal source and boundary functionals.

    Parameters
    ----------
    c : float
        Transport speed.
    g : list of Kernel
        Source gains ``g_i(z)``, one per nonlocal channel ``p_i``.
    K : list of ProfileFunctional
        Functionals defining ``p_i(t) = K_i(w(t), x_t)``.
    G : ProfileFunctional
        Boundary law ``x(t, 0) = G(w(t), x_t)``.
    a : Coefficient, optional
        Reaction coefficient; ``None`` means ``a = 0``.
    m : int
        Input dimension.
    m1 : int
        Number of leading input channels that are disturbances bounded by ``Q``.
    """

    g: list
    K: list
    G: ProfileFunctional
    c: float = 1.0
    a: Coefficient | None = None
    m: int = 0
    m1: int = 0
    Q: float = 1.0

    def __post_init__(self):
        self.g = [k if isinstance(k, Kernel) else Constant(k) for k in self.g]
        if len(self.g) != len(self.K):
            raise DataError("need one source gain per nonlocal functional")
        if not self.c > 0:
            raise DomainError("transport speed must be positive")

    @property
    def N(self) -> int:
        return len(self.K)

    @property
    def r(self) -> float:
        return 1.0 / self.c

    def is_simple(self) -> bool:
        """True when ``a = 0`` and every ``g_i`` is constant (closed-form characteristics)."""
        a_zero = self.a is None or self.a.is_zero()
        return a_zero and all(k.is_constant() for k in self.g)

    def gain_vector(self) -> np.ndarray:
        return np.array([float(k(0.0)) for k in self.g])

    def a_value(self, p, z):
        if self.a is None:
            return np.zeros(np.shape(z))
        return np.asarray(self.a.fn(p, z), dtype=float)

    def g_value(self, z):
        if not self.g:
            return np.zeros(np.shape(z) + (0,))
        return np.stack([np.asarray(k(z), dtype=float) * np.ones(np.shape(z)) for k in self.g], axis=-1)

    def steps(self, K: int) -> tuple[float, float]:
        """Space and time steps ``(dz, h)`` for ``K`` cells in ``(0, 1]``."""
        dz = 1.0 / K
        return dz, dz / self.c


@dataclass
class PVHistory:
    """Closure-state history: ``p`` (N channels) and ``v`` on ``[-1/c, 0)``."""

    p: SampledFn
    v: SampledFn

    def stacked(self) -> SampledFn:
        return SampledFn(self.p.grid, np.column_stack([self.p.values, self.v.values]))


# characteristic integration ----------------------------------------------------

def _characteristic(sys: HyperbolicSystem, P: SampledFn, V: SampledFn | None, tau: float,
                    z: float, x0: SampledFn | None = None, t_init: float = 0.0):
    """Return ``(homogeneous, source)`` parts of the profile at ``(tau, z)``.

    Integrates backwards along the characteristic from ``(tau, z)`` to the
    boundary (reading ``V``, or zero when ``V`` is None) or, when ``x0`` is given and the
    characteristic reaches time ``t_init`` first, to the initial profile.
    ``a`` and ``g`` are evaluated at the midpoint of every piece on which
    ``p`` is constant, which is exact when both are constant.
    """
    c, h = sys.c, P.grid.step
    start = tau - z / c
    from_initial = x0 is not None and start < t_init - 1e-12 * h
    if from_initial:
        start = t_init
    # breakpoints at cell edges strictly inside (start, tau)
    e0 = P.grid.t_start
    k_lo = math.floor((start - e0) / h + 1e-9) + 1
    k_hi = math.ceil((tau - e0) / h - 1e-9) - 1
    inner = e0 + h * np.arange(k_lo, k_hi + 1)
    pts = np.concatenate([[start], inner, [tau]])
    dur = np.diff(pts)
    keep = dur > 1e-12 * h
    lo, dur = pts[:-1][keep], dur[keep]
    mid = lo + 0.5 * dur
    rows = np.floor((mid - e0) / h).astype(int)
    if rows.size and (rows[0] < 0 or rows[-1] >= len(P)):
        raise DomainError(f"characteristic from ({tau}, {z}) leaves the stored history")
    pv = P.values[rows]
    pos = z + c * (mid - tau)
    A = dur * sys.a_value(pv, pos) if rows.size else np.zeros(0)
    src = dur * np.einsum("ij,ij->i", sys.g_value(pos), pv) if rows.size else np.zeros(0)
    # exp(int_sigma^tau a) at each piece midpoint
    after = np.concatenate([np.cumsum(A[::-1])[::-1][1:], [0.0]]) if A.size else A
    source = float(np.sum(src * np.exp(after + 0.5 * A)))
    total = float(np.sum(A))
    if from_initial:
        zi = z - c * (tau - t_init)
        init = float(x0(zi - 1e-12)[0]) if zi > 0 else float(x0.values[0, 0])
    elif V is None:
        init = 0.0
    else:
        init = float(V(start)[0])
    return math.exp(total) * init, source


def _time_of(f: SampledFn, t):
    return f.t_end if t is None else t


def op_A(sys: HyperbolicSystem, p: SampledFn, v: SampledFn, z, t: float | None = None):
    """``exp(int a) v(t - z/c)``, evaluated at time ``t`` (default: end of ``p``)."""
    tau = _time_of(p, t)
    zs = np.atleast_1d(np.asarray(z, dtype=float))
    out = np.array([_characteristic(sys, p, v, tau, zz)[0] for zz in zs])
    return out if np.ndim(z) else float(out[0])


def op_B(sys: HyperbolicSystem, p: SampledFn, z, t: float | None = None):
    """Source part ``int exp(int a) g(.) . p`` of the profile at ``(t, z)``."""
    tau = _time_of(p, t)
    zs = np.atleast_1d(np.asarray(z, dtype=float))
    out = np.array([_characteristic(sys, p, None, tau, zz)[1] for zz in zs])
    return out if np.ndim(z) else float(out[0])


# the closure as an IDE right-hand side -----------------------------------------

class ConvertedHyperbolic(RhsDescriptor):
    """Closure functional ``F(w, p, v) = (K_i(w, x), G(w, x))`` with ``x = A(p)v + B(p)``.

    State is ``(p_1 .. p_N, v)``.  The profile is reconstructed on nodes at
    the midpoint of the current cell.
    """

    def __init__(self, system: HyperbolicSystem):
        self.system = system
        self.n = system.N + 1
        self.m = system.m
        self.r = system.r
        self._simple = system.is_simple()
        self._gvec = system.gain_vector() if self._simple else None

    # nodal reconstruction for a batch of windows (B, K+1, N+1)
    def nodes(self, win: np.ndarray, h: float) -> np.ndarray:
        if self._simple:
            q = win[:, ::-1, :-1] @ self._gvec          # q[:, j] = g . p at row K-j
            S = np.cumsum(q, axis=1)
            T = S - 0.5 * q[:, :1] - 0.5 * q
            return win[:, ::-1, -1] + h * T
        return np.array([self._nodes_generic(wi, h) for wi in win])

    def _nodes_generic(self, win, h):
        K = win.shape[0] - 1
        grid = Grid(-K * h, h, K + 1)
        P = SampledFn(grid, win[:, :-1])
        V = SampledFn(grid, win[:, -1])
        tau = 0.5 * h
        dz = self.system.c * h
        out = np.empty(K + 1)
        for j in range(K + 1):
            hom, src = _characteristic(self.system, P, V, tau, j * dz)
            out[j] = hom + src
        return out

    def apply(self, nodes: np.ndarray, w: np.ndarray, dz: float) -> np.ndarray:
        sys = self.system
        cols = [k.on_nodes(nodes, w, dz) for k in sys.K] + [sys.G.on_nodes(nodes, w, dz)]
        return np.column_stack(cols)

    def evaluate(self, x, w, h):
        nodes = self.nodes(x[None], h)
        return self.apply(nodes, w[-1:], self.system.c * h)[0]

    def evaluate_block(self, X, W, k0, k1, h):
        K = cells_per_delay(self.r, h)
        win = sliding_window_view(X[k0 - K:k1], K + 1, axis=0).transpose(0, 2, 1)
        nodes = self.nodes(win, h)
        return self.apply(nodes, W[k0:k1], self.system.c * h)

    def evaluate_batch(self, X, W, h):
        return self.apply(self.nodes(X, h), W[:, -1], self.system.c * h)

    def moduli(self):
        return closure_moduli(self.system)


def _sup_g(sys: HyperbolicSystem) -> float:
    sups = np.array([k.sup_abs(0.0, 1.0) for k in sys.g])
    return float(np.sqrt(np.sum(sups ** 2)))


def closure_moduli(sys: HyperbolicSystem) -> Moduli:
    """Moduli of the closure IDE built from those of ``a``, ``g`` and the functionals."""
    c = sys.c
    C = _sup_g(sys)
    funcs = list(sys.K) + [sys.G]

    def Mt(R):
        return sys.a.bound(R) if sys.a is not None else 0.0

    def La(R):
        return sys.a.lipschitz(R) if sys.a is not None else 0.0

    def Kr(R):
        return (1.0 + C / c) * math.exp(Mt(R) / c) * R

    def L(R):
        return sum(f.lipschitz(R) for f in funcs)

    def B1(R):
        return math.exp(Mt(R) / c)

    def B2(R):
        return (R * La(R) + C + C * R * La(R) / c) * math.exp(3.0 * Mt(R) / c)

    def N(R):
        return L(Kr(R)) * (c * B1(R) + 2.0 * B2(R))

    def M(R):
        return L(Kr(R)) * (B1(R) + B2(R) / c)

    def a(R):
        return sum(f.bound(Kr(R)) for f in funcs)

    def b(s):
        return sum(f.b(Kr(s), sys.m1) for f in funcs)

    has_b = all(f.b(1.0, sys.m1) is not None for f in funcs)
    return Moduli(N=N, M=M, a=a, b=b if has_b else None)


def to_ide(sys: HyperbolicSystem) -> IdeSystem:
    """Integral delay equation satisfied by ``(p, v)``."""
    return IdeSystem(ConvertedHyperbolic(sys), m1=sys.m1, Q=sys.Q)


def profile_lipschitz_constants(sys: HyperbolicSystem, s: float) -> tuple[float, float]:
    """Constants ``(Q, P)`` with ``|x_t - y_t| <= Q exp(P t) |x_0 - y_0|``.

    Combines the delay-equation estimate for ``(p, v)`` with the
    reconstruction bound ``|x - y| <= B1 |v - v~| + (B2/c) |p - p~|`` and the
    initial map ``|v_0 - v~_0| <= exp(M~/c) |x_0 - y_0|``.
    """
    from .ide import lipschitz_constants

    ide = to_ide(sys)
    mod = ide.moduli
    G, P = lipschitz_constants(mod, sys.r, s)
    c = sys.c
    C = _sup_g(sys)
    Mt = sys.a.bound(s) if sys.a is not None else 0.0
    La = sys.a.lipschitz(s) if sys.a is not None else 0.0
    B1 = math.exp(Mt / c)
    B2 = (s * La + C + C * s * La / c) * math.exp(3.0 * Mt / c)
    Qc = (B1 + B2 / c) * G * math.exp(Mt / c) + B1
    return Qc, P


# initial data and reconstruction ---------------------------------------------

def _a_integral_from_boundary(sys: HyperbolicSystem, z: np.ndarray) -> np.ndarray:
    """``int_0^z a(0, zeta) dzeta`` for each entry of ``z``."""
    if sys.a is None or sys.a.is_zero():
        return np.zeros_like(z)
    if sys.a.constant_value is not None:
        return sys.a.constant_value * z
    nodes, weights = np.polynomial.legendre.leggauss(20)
    zeta = 0.5 * z[:, None] * (nodes[None, :] + 1.0)
    p0 = np.zeros(zeta.shape + (sys.N,))
    return 0.5 * z * np.sum(weights * sys.a_value(p0, zeta), axis=1)


def initial_v(sys: HyperbolicSystem, x0: SampledFn) -> PVHistory:
    """History ``p = 0`` and ``v(t) = exp(-int a) x0(-c t)`` on ``[-1/c, 0)``."""
    K = len(x0)
    dz, h = sys.steps(K)
    if abs(x0.grid.step - dz) > 1e-12 * dz or abs(x0.t_start) > 1e-12:
        raise AlignmentError("initial profile must use K cells on (0, 1]")
    grid = Grid(-K * h, h, K)
    zmid = (np.arange(K)[::-1] + 0.5) * dz    # history cell i <-> z-cell K-1-i
    decay = np.exp(-_a_integral_from_boundary(sys, zmid) / sys.c)
    v = decay * x0.values[::-1, 0]
    return PVHistory(SampledFn(grid, np.zeros((K, sys.N))), SampledFn(grid, v))


def _split(sys, traj):
    sol = traj.solution
    P = SampledFn(sol.grid, sol.values[:, :sys.N])
    V = SampledFn(sol.grid, sol.values[:, sys.N])
    return P, V


def reconstruct(sys: HyperbolicSystem, traj: Trajectory, x0: SampledFn | None, t: float,
                t0: float = 0.0) -> SampledFn:
    """Profile at the grid time ``t`` on the ``K`` cell midpoints of ``(0, 1]``.

    Characteristics that reach time ``t0`` before the boundary start from
    ``x0``, the profile at ``t0``; the others start from ``v``.  Pass
    ``x0=None`` to read every characteristic from the closure history.
    """
    h = traj.step
    K = cells_per_delay(sys.r, h)
    dz = sys.c * h
    n = Grid(0.0, h, 1).edge_index(t)
    n0 = Grid(0.0, h, 1).edge_index(t0)
    if t > traj.t_end + 1e-9 * h or t0 > t + 1e-9 * h:
        raise DomainError(f"t={t} outside the solved range [0, {traj.t_end}]")
    P, V = _split(sys, traj)
    if sys.is_simple():
        vals = _profile_simple(sys, P.values, V.values[:, 0], K, n, h,
                               None if x0 is None else x0.values[:, 0], n0)
    else:
        zmid = (np.arange(K) + 0.5) * dz
        vals = np.array([sum(_characteristic(sys, P, V, t, z, x0, t0)) for z in zmid])
    return SampledFn(Grid(0.0, dz, K), vals)


def _profile_simple(sys, Pv, Vv, K, n, h, x0v=None, n0=0):
    """Closed-form profile at edge ``n`` (rows of ``Pv``/``Vv`` start at cell ``-K``)."""
    q = Pv @ sys.gain_vector()
    cs = np.concatenate([[0.0], np.cumsum(q)])     # cs[i] = sum of q rows < i
    j = np.arange(K)
    row_end = n + K                                # first row after time t_n
    out = np.empty(K)
    from_v = np.ones(K, bool) if x0v is None else j < n - n0
    jv = j[from_v]
    rb = row_end - jv - 1                          # row holding v(t_n - z/c)
    out[from_v] = Vv[rb] + h * (cs[row_end] - cs[rb + 1] + 0.5 * q[rb])
    if x0v is not None:
        ji = j[~from_v]
        out[~from_v] = x0v[ji - (n - n0)] + h * (cs[row_end] - cs[n0 + K])
    return out


def reconstruct_nodes(sys: HyperbolicSystem, traj: Trajectory, k: int) -> np.ndarray:
    """Nodal profile at the midpoint of cell ``k`` (the profile the closure sees)."""
    h = traj.step
    K = cells_per_delay(sys.r, h)
    win = traj.solution.values[k:k + K + 1]
    return ConvertedHyperbolic(sys).nodes(win[None], h)[0]


def closure_residual(sys: HyperbolicSystem, traj: Trajectory) -> float:
    """Largest ``|F(w, p_t, v_t) - (p, v)(t)|`` over the solved cells."""
    h = traj.step
    K = cells_per_delay(sys.r, h)
    X = traj.solution.values
    W = traj.input.values if traj.input is not None else np.zeros((len(X), 0))
    desc = ConvertedHyperbolic(sys)
    F = desc.evaluate_block(X, W, K, len(X), h)
    return float(np.max(np.abs(F - X[K:]))) if len(X) > K else 0.0


# simulation drivers ------------------------------------------------------------

@dataclass
class PdeSolution:
    system: HyperbolicSystem
    trajectory: Trajectory
    x0: SampledFn
    snapshots: dict = field(default_factory=dict)

    @property
    def escaped(self) -> bool:
        return self.trajectory.escaped

    def profile(self, t: float) -> SampledFn:
        if t not in self.snapshots:
            self.snapshots[t] = reconstruct(self.system, self.trajectory, self.x0, t)
        return self.snapshots[t]

    def boundary_traces(self) -> SampledFn:
        """Cells of ``[0, T)`` with columns ``p_1 .. p_N, v``."""
        sol = self.trajectory.solution
        K = cells_per_delay(self.system.r, sol.grid.step)
        return SampledFn(Grid(0.0, sol.grid.step, len(sol) - K), sol.values[K:])

    def write_snapshots(self, directory, prefix="profile") -> list:
        from pathlib import Path

        paths = []
        for t, prof in sorted(self.snapshots.items()):
            path = Path(directory) / f"{prefix}_t{t:.6g}.csv"
            to_csv(prof, path, header=("z_lo", "z_hi", "x"))
            paths.append(path)
        return paths


def _pad_inputs(sys: HyperbolicSystem, w: SampledFn | None, K: int, h: float, T: float):
    n = Grid(0.0, h, 1).edge_index(T)
    if sys.m == 0:
        return None
    vals = np.zeros((K + n, sys.m))
    if w is not None:
        if not w.grid.same_step(Grid(0.0, h, 1)):
            raise AlignmentError(f"input step {w.grid.step} differs from time step {h}")
        i0 = w.grid.edge_index(0.0)
        if i0 < 0 or i0 + n > len(w):
            raise DomainError(f"input must cover [0, {T})")
        vals[K:] = w.values[i0:i0 + n]
    return SampledFn(Grid(-K * h, h, K + n), vals)


def solve_pde(sys: HyperbolicSystem, x0: SampledFn, w: SampledFn | None = None, T: float = 1.0,
              snapshot_times=(), cfg: SolveConfig | None = None) -> PdeSolution:
    """Solve the PDE through its closure and reconstruct the requested snapshots.

    ``w`` is the input on ``[0, T)`` sampled with the time step ``dz / c``;
    ``x0`` uses ``K`` cells on ``(0, 1]``.
    """
    cfg = cfg or SolveConfig()
    cfg = SolveConfig(T, cfg.tol, cfg.max_picard_iters, cfg.blowup_threshold,
                      cfg.picard_seed, cfg.strict_contraction)
    K = len(x0)
    _, h = sys.steps(K)
    hist = initial_v(sys, x0)
    inputs = _pad_inputs(sys, w, K, h, T)
    traj = solve(to_ide(sys), hist.stacked(), inputs, cfg)
    sol = PdeSolution(sys, traj, x0)
    for t in snapshot_times:
        if t <= traj.t_end + 1e-9 * h:
            sol.profile(t)
    return sol


def upwind_reference(sys: HyperbolicSystem, x0: SampledFn, w: SampledFn | None = None,
                     T: float = 1.0, snapshot_times=(), blowup_threshold: float = 1e12) -> dict:
    """First-order upwind march at unit CFL.

    Each step shifts the profile by one cell (exact transport), adds the
    source ``a(p, z) x + g(z) . p`` evaluated explicitly at the departure
    cell, and sets the first cell from the boundary law.  ``p`` is computed
    from the cell profile by the functionals' cell rules.
    """
    K = len(x0)
    dz, h = sys.steps(K)
    n_steps = Grid(0.0, h, 1).edge_index(T)
    wanted = {Grid(0.0, h, 1).edge_index(t): t for t in snapshot_times}
    zmid = (np.arange(K) + 0.5) * dz
    gz = sys.g_value(zmid)
    x = np.array(x0.values[:, 0])
    wv = np.zeros((n_steps, sys.m)) if w is None else np.asarray(w.values)
    out = {}
    for n in range(n_steps + 1):
        if n in wanted:
            out[wanted[n]] = SampledFn(Grid(0.0, dz, K), x.copy())
        if n == n_steps:
            break
        wn = wv[n] if sys.m else np.zeros(0)
        p = np.array([k.on_cells(x, wn, dz) for k in sys.K])
        src = sys.a_value(np.broadcast_to(p, (K, sys.N)), zmid) * x + gz @ p
        new = np.empty(K)
        new[1:] = x[:-1] + h * src[:-1]
        new[0] = sys.G.on_cells(x, wn, dz)
        x = new
        if not np.all(np.isfinite(x)) or np.max(np.abs(x)) > blowup_threshold:
            break
    return out


def l_mu_distance(f: SampledFn, g: SampledFn, mu: float = 1.0) -> float:
    """``(int |f - g|^mu dz)^(1/mu)`` for cell-constant profiles."""
    if mu < 1:
        raise DomainError("mu must be at least 1")
    d = f - g
    return float((np.sum(np.abs(d.values[:, 0]) ** mu) * f.grid.step) ** (1.0 / mu))


def mean_recirculation(g: float, Q: float = 1.0) -> HyperbolicSystem:
    """``x_t + x_z = g d(t) int_0^1 x dz`` with ``x(t, 0) = 0`` and ``|d| <= Q``."""
    return HyperbolicSystem(
        g=[Constant(g)],
        K=[WeightedIntegral(Constant(1.0), gain_channel=0, gain_bound=Q)],
        G=Zero(),
        c=1.0,
        m=1,
        m1=1,
        Q=Q,
    )


def profile_sup(sol: PdeSolution, t: float) -> float:
    return sup_norm(sol.profile(t))
