"""Razumikhin-type stability certificates and their numerical audit.

A certificate is a weighted norm ``W(x) = sum_j k_j |x_j|`` together with
``lambda < 1`` and a gain ``gamma`` such that

    W(f(x, d, u)) <= lambda sup_s W(x(s)) + gamma(|u|).

It implies input-to-state stability through the functional

    V(x) = sup_s exp(sigma s) W(x(s)),   0 < sigma < ln(1/lambda)/r,

which contracts by ``exp(-sigma h)`` over any window
``h <= ln(1/lambda)/sigma - r``.  :func:`check_razumikhin` searches for
violations of the pointwise inequality by sampling, and
:func:`decay_audit` checks the decay of ``V`` along simulated solutions.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Callable

import numpy as np

from .errors import CertificateError, DomainError
from .functionals import IdeSystem, LinearScalarDistributed
from .ide import SolveConfig, solve
from .sampled import Grid, SampledFn, make_rng, sup_norm


def _zero_gain(s: float) -> float:
    return 0.0


@dataclass
class IssCertificate:
    """Weighted-norm certificate.

    Parameters
    ----------
    weights : sequence of float
        Positive weights ``k_j``, one per state component.
    lam : float
        Contraction constant in ``(0, 1)``.
    r : float
        Delay horizon of the system the certificate is for.
    gamma : callable, optional
        Input gain, zero by default.
    sigma_rate : float, optional
        Decay rate; defaults to the midpoint ``ln(1/lam) / (2 r)``.
    """

    weights: tuple
    lam: float
    r: float = 1.0
    gamma: Callable[[float], float] = _zero_gain
    sigma_rate: float | None = None

    def __post_init__(self):
        self.weights = tuple(float(k) for k in self.weights)
        if not self.weights or min(self.weights) <= 0:
            raise CertificateError("weights must be positive")
        if not 0.0 < self.lam < 1.0:
            raise CertificateError(f"lambda must lie in (0, 1), got {self.lam}")
        upper = math.log(1.0 / self.lam) / self.r
        if self.sigma_rate is None:
            self.sigma_rate = 0.5 * upper
        if not 0.0 < self.sigma_rate < upper:
            raise CertificateError(f"sigma must lie in (0, {upper:.6g}), got {self.sigma_rate}")

    def W(self, x) -> np.ndarray:
        return np.abs(np.asarray(x, dtype=float)) @ np.asarray(self.weights)

    @property
    def h_star(self) -> float:
        """Longest window over which ``V`` is guaranteed to contract."""
        return math.log(1.0 / self.lam) / self.sigma_rate - self.r

    @property
    def gain_factor(self) -> float:
        """Factor multiplying ``gamma(|u|)`` in the global bound on ``V``."""
        q = self.lam * math.exp(self.sigma_rate * self.r)
        return (2.0 - q) / ((1.0 - self.lam) * (1.0 - q))


def iss_estimate(cert: IssCertificate, V0: float, u_sup: float, t, eps: float | None = None):
    """Upper bound on ``V(x_t)`` from the certificate.

    Without ``eps`` this is ``exp(-sigma t) V0 + gain_factor * gamma(u_sup)``.
    With ``eps > 0`` it is the split form
    ``max((1 + eps) exp(-sigma t) V0, (1 + 1/eps) gain_factor * gamma(u_sup))``,
    which is never smaller.
    """
    decay = np.exp(-cert.sigma_rate * np.asarray(t, dtype=float)) * V0
    forced = cert.gain_factor * cert.gamma(u_sup)
    if eps is None:
        return decay + forced
    if eps <= 0:
        raise DomainError("eps must be positive")
    return np.maximum((1.0 + eps) * decay, (1.0 + 1.0 / eps) * forced)


def lyapunov_V(cert: IssCertificate, history: SampledFn) -> float:
    """``max_cells exp(sigma s) W(x)`` with ``s`` the cell midpoint relative to the history end."""
    if len(history) == 0:
        return 0.0
    s = history.grid.midpoints - history.t_end
    return float(np.max(np.exp(cert.sigma_rate * s) * cert.W(history.values)))


def _V_rows(cert: IssCertificate, X: np.ndarray, h: float) -> float:
    K = X.shape[0]
    s = -(K - np.arange(K) - 0.5) * h
    return float(np.max(np.exp(cert.sigma_rate * s) * cert.W(X)))


@dataclass
class RazumikhinReport:
    samples: int
    violations: int
    worst_margin: float
    effective_lambda: float
    witness: dict | None = None
    analytic: bool | None = None

    @property
    def passed(self) -> bool:
        return self.violations == 0


def _sample_histories(rng, count, K, n, R):
    """Random windows: uniform, single spike, last-cell spike, constant, constant in one channel."""
    X = np.zeros((count, K + 1, n))
    kinds = np.arange(count) % 5
    scale = R * rng.uniform(0.0, 1.0, count)
    for i in range(count):
        kind = kinds[i]
        if kind == 0:
            X[i] = rng.uniform(-1, 1, (K + 1, n))
        elif kind == 1:
            X[i, rng.integers(K + 1)] = rng.uniform(-1, 1, n)
        elif kind == 2:
            X[i, -1] = rng.uniform(-1, 1, n)
            X[i, :-1] = rng.uniform(-1, 1, (K, n)) * rng.uniform(0, 0.2)
        elif kind == 3:
            X[i] = rng.uniform(-1, 1, n)
        else:
            X[i, :, rng.integers(n)] = rng.choice([-1.0, 1.0])
        nrm = np.max(np.abs(X[i]))
        if nrm > 0:
            X[i] *= scale[i] / nrm
    return X


def _sample_inputs(rng, sys, count, K, u_ladder):
    d_grid = np.array([-sys.Q, 0.0, sys.Q])
    Wv = np.zeros((count, K + 1, sys.m))
    for i in range(count):
        if sys.m1:
            d = rng.choice(d_grid, sys.m1) if i % 2 else rng.uniform(-sys.Q, sys.Q, sys.m1)
            Wv[i, :, :sys.m1] = d
        if sys.m2:
            u = rng.choice(u_ladder) * rng.choice([-1.0, 1.0], sys.m2)
            Wv[i, :, sys.m1:] = u
    return Wv


def analytic_lambda(sys: IdeSystem) -> float | None:
    """Closed-form contraction constant for the scalar distributed class, else None."""
    rhs = sys.rhs
    if isinstance(rhs, LinearScalarDistributed):
        return rhs.Q * rhs.q.abs_integral(-rhs.r, 0.0)
    return None


def check_razumikhin(sys: IdeSystem, cert: IssCertificate, samples: int = 10000, seed: int = 0,
                     K: int = 32, R: float = 1.0,
                     u_ladder=(0.0, 0.0, 1e-3, 0.1, 1.0, 10.0)) -> RazumikhinReport:
    """Search for violations of the Razumikhin inequality by sampling.

    Histories are windows of ``K + 1`` cells (the right-hand side is
    evaluated at the midpoint of the last one), so the supremum on the
    right runs over the whole window.  ``effective_lambda`` is the largest
    observed ``W(f) / sup W`` over samples with ``u = 0``.
    """
    if len(cert.weights) != sys.n:
        raise CertificateError(f"certificate has {len(cert.weights)} weights, system has {sys.n} states")
    rng = make_rng(seed)
    h = sys.r / K
    X = _sample_histories(rng, samples, K, sys.n, R)
    Wv = _sample_inputs(rng, sys, samples, K, u_ladder)
    F = sys.rhs.evaluate_batch(X, Wv, h)
    lhs = cert.W(F)
    supW = np.max(cert.W(X), axis=1)
    unorm = np.linalg.norm(Wv[:, -1, sys.m1:], axis=1) if sys.m2 else np.zeros(samples)
    gam = np.array([cert.gamma(s) for s in unorm])
    rhs = cert.lam * supW + gam
    margin = rhs - lhs
    tol = 1e-12 * np.maximum(1.0, rhs)
    bad = margin < -tol
    free = (unorm == 0) & (supW > 0)
    eff = float(np.max(lhs[free] / supW[free])) if np.any(free) else 0.0
    i = int(np.argmin(margin))
    witness = None
    if bad.any():
        witness = {"history": X[i].tolist(), "input": Wv[i, -1].tolist(),
                   "lhs": float(lhs[i]), "rhs": float(rhs[i])}
    lam_a = analytic_lambda(sys)
    analytic = None
    if lam_a is not None:
        analytic = lam_a <= cert.lam and all(cert.gamma(s) >= cert.weights[0] * s - 1e-15
                                              for s in (0.0, 1e-3, 0.1, 1.0, 10.0))
    return RazumikhinReport(samples, int(bad.sum()), float(margin[i]), eff, witness, analytic)


@dataclass
class DecayReport:
    trials: int
    window: float
    violations: list = field(default_factory=list)
    worst_step_margin: float = math.inf
    worst_envelope_margin: float = math.inf
    final_norms: list = field(default_factory=list)

    @property
    def passed(self) -> bool:
        return not self.violations


def _random_signal(rng, n_cells, cells_per_piece, low, high, width):
    pieces = -(-n_cells // cells_per_piece)
    vals = rng.uniform(low, high, (pieces, width))
    return np.repeat(vals, cells_per_piece, axis=0)[:n_cells]


def decay_window(cert: IssCertificate, h: float) -> float:
    """Certificate window ``h*`` rounded down to the grid."""
    if cert.h_star < h:
        raise CertificateError(f"certificate window {cert.h_star:.3g} is shorter than the step {h:.3g}")
    return math.floor(cert.h_star / h + 1e-9) * h


def trajectory_decay(cert: IssCertificate, traj, K: int, H: float, u_sup: float = 0.0,
                     tol: float = 1e-8) -> tuple[float, float, tuple[float, float]]:
    """Margins of the window decay and global envelope along one trajectory.

    Returns ``(step_margin, envelope_margin, (t_step, t_envelope))``; a
    negative margin is a violation and the times locate the worst case.
    """
    h = traj.step
    X = traj.solution.values
    n = X.shape[0] - K
    V = np.array([_V_rows(cert, X[k:k + K], h) for k in range(n + 1)])
    gterm = cert.gamma(u_sup)
    stride = round(H / h)
    i = np.arange(0, n + 1 - stride, stride)
    step = math.exp(-cert.sigma_rate * H) * V[i] + gterm / (1.0 - cert.lam) + tol - V[i + stride]
    t = np.arange(n + 1) * h
    env = iss_estimate(cert, V[0], u_sup, t) + tol - V
    ke = int(np.argmin(env))
    if not step.size:
        return math.inf, float(env[ke]), (0.0, float(t[ke]))
    ks = int(np.argmin(step))
    return float(step[ks]), float(env[ke]), (float(i[ks] * h), float(t[ke]))


def decay_audit(sys: IdeSystem, cert: IssCertificate, trials: int = 20, horizon: float = 20.0,
                seed: int = 0, K: int = 64, x0_norm: float = 1.0, u_amplitude: float = 0.0,
                slack: float = 1e-8, cfg: SolveConfig | None = None,
                initial_histories=None, disturbances=None) -> DecayReport:
    """Check decay of ``V`` along simulated solutions.

    For each trial ``V(x_{t+H}) <= exp(-sigma H) V(x_t) + gamma(|u|)/(1-lambda)``
    is checked at ``t = 0, H, 2H, ...`` with ``H`` the certificate window
    rounded down to the grid, and the global bound
    ``V(x_t) <= exp(-sigma t) V(x_0) + gain_factor * gamma(|u|)`` at every
    grid time.  Disturbance channels receive random piecewise-constant
    signals in ``[-Q, Q]``; control channels random signals of amplitude
    ``u_amplitude``.
    """
    rng = make_rng(seed)
    h = sys.r / K
    H = decay_window(cert, h)
    cfg = cfg or SolveConfig()
    cfg = SolveConfig(horizon, cfg.tol, cfg.max_picard_iters, cfg.blowup_threshold)
    n = Grid(0.0, h, 1).edge_index(horizon)
    report = DecayReport(trials, H)
    for trial in range(trials):
        if initial_histories is not None:
            x0 = initial_histories[trial]
        else:
            vals = _random_signal(rng, K, max(K // 8, 1), -1.0, 1.0, sys.n)
            vals *= x0_norm / max(np.max(np.linalg.norm(vals, axis=1)), 1e-300)
            x0 = SampledFn(Grid(-sys.r, h, K), vals)
        W = np.zeros((K + n, sys.m))
        if sys.m1:
            W[:, :sys.m1] = (disturbances[trial] if disturbances is not None
                             else _random_signal(rng, K + n, max(K // 8, 1), -sys.Q, sys.Q, sys.m1))
        if sys.m2 and u_amplitude:
            W[:, sys.m1:] = _random_signal(rng, K + n, max(K // 8, 1), -u_amplitude, u_amplitude, sys.m2)
        traj = solve(sys, x0, SampledFn(Grid(-sys.r, h, K + n), W) if sys.m else None, cfg)
        usup = float(np.max(np.linalg.norm(W[:, sys.m1:], axis=1))) if sys.m2 else 0.0
        step_m, env_m, where = trajectory_decay(cert, traj, K, H, usup, slack + 2 * cfg.tol)
        report.worst_step_margin = min(report.worst_step_margin, step_m)
        report.worst_envelope_margin = min(report.worst_envelope_margin, env_m)
        if step_m < 0:
            report.violations.append(("step", trial, where[0], step_m))
        if env_m < 0:
            report.violations.append(("envelope", trial, where[1], env_m))
        X = traj.solution.values
        report.final_norms.append(float(np.max(np.linalg.norm(X[-K:], axis=1))))
    return report


def robust_equilibrium_delta(sys: IdeSystem, eps: float, T: float) -> float:
    """Radius ``delta`` such that ``|x_0| + sup|u| < delta`` keeps ``|x_t| < eps`` on ``[0, T]``.

    ``delta = kappa^{-1}(eps/2)`` where ``kappa`` is the ``l``-fold
    composition of ``s -> 5 b(s)``, ``l = floor(T/rho) + 1`` and
    ``rho = r / (1 + 2 r N(5 b(Q + eps)))``.
    """
    mod = sys.moduli
    if mod.b is None:
        raise CertificateError("system has no input-to-state bound b")
    if eps <= 0 or T < 0:
        raise DomainError("need eps > 0 and T >= 0")
    b = mod.b
    probe = np.geomspace(1e-12 * eps, sys.Q + eps, 64)
    vals = np.array([b(s) for s in probe])
    if np.any(np.diff(vals) <= 0):
        raise CertificateError("b is not strictly increasing on the needed range")
    rho = sys.r / (1.0 + 2.0 * sys.r * mod.N(5.0 * b(sys.Q + eps)))
    l = math.floor(T / rho) + 1

    def kappa(s):
        for _ in range(l):
            s = 5.0 * b(s)
            if not math.isfinite(s):
                return math.inf
        return s

    target = 0.5 * eps
    lo, hi = math.log(1e-300), math.log(target)
    if kappa(math.exp(lo)) > target:
        raise CertificateError("delta underflows double precision")
    if kappa(target) <= target:
        return target
    while hi - lo > 1e-13:
        mid = 0.5 * (lo + hi)
        if kappa(math.exp(mid)) <= target:
            lo = mid
        else:
            hi = mid
    return math.exp(lo)


@dataclass
class EquilibriumAudit:
    delta: float
    eps: float
    worst_norm: float
    violations: int


def robust_equilibrium_audit(sys: IdeSystem, eps: float, T: float, trials: int = 100,
                             K: int = 32, seed: int = 0) -> EquilibriumAudit:
    """Simulate small initial data and inputs and record the largest state norm."""
    rng = make_rng(seed)
    delta = robust_equilibrium_delta(sys, eps, T)
    h = sys.r / K
    n = max(Grid(0.0, h, 1).edge_index(math.ceil(T / h) * h), 1)
    worst, bad = 0.0, 0
    for _ in range(trials):
        split = rng.uniform(0.0, 1.0)
        x0v = _random_signal(rng, K, max(K // 8, 1), -1.0, 1.0, sys.n)
        x0v *= 0.999 * delta * split / max(np.max(np.abs(x0v)), 1e-300)
        W = np.zeros((K + n, sys.m))
        if sys.m1:
            W[:, :sys.m1] = _random_signal(rng, K + n, max(K // 8, 1), -sys.Q, sys.Q, sys.m1)
        if sys.m2:
            u = _random_signal(rng, K + n, max(K // 8, 1), -1.0, 1.0, sys.m2)
            W[:, sys.m1:] = u * 0.999 * delta * (1.0 - split) / max(np.max(np.abs(u)), 1e-300)
        traj = solve(sys, SampledFn(Grid(-sys.r, h, K), x0v),
                     SampledFn(Grid(-sys.r, h, K + n), W) if sys.m else None, SolveConfig(n * h))
        peak = sup_norm(traj.solution)
        worst = max(worst, peak)
        bad += peak >= eps
    return EquilibriumAudit(delta, eps, worst, bad)
