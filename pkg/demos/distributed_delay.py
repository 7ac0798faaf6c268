"""Scalar equation with one distributed delay.

    x(t) = d(t) * int_{t-1}^t q x(s) ds + u(t),   |d| <= 1,

with ``q = 1/2``.  For ``d = 1`` and ``x0 = 1`` the solution on ``[0, 1]``
is ``1 - exp(t/2)/2``.  With random ``d`` the state decays, and the
Razumikhin certificate ``W = |x|``, ``lambda = 1/2`` holds.
"""

import numpy as np

from idepde import (Grid, IssCertificate, SampledFn, SolveConfig, check_razumikhin,
                    linear_distributed_system, lyapunov_V, make_rng, solve)
from idepde.sampled import sup_norm

K = 256
h = 1.0 / K
sys = linear_distributed_system(0.5)
x0 = SampledFn.constant(1.0, Grid(-1.0, h, K))

# closed-form check on [0, 1]
inp = SampledFn(Grid(-1.0, h, 2 * K), np.column_stack([np.ones(2 * K), np.zeros(2 * K)]))
traj = solve(sys, x0, inp, SolveConfig(1.0))
t = traj.solution.grid.midpoints[K:]
err = np.max(np.abs(traj.solution.values[K:, 0] - (1 - 0.5 * np.exp(t / 2))))
print(f"error against 1 - exp(t/2)/2 on [0, 1]: {err:.2e}")

# random disturbance, decay of the Lyapunov functional
rng = make_rng(1)
T = 15.0
n = K + int(T * K)
d = np.repeat(rng.uniform(-1, 1, n // 32 + 1), 32)[:n]
traj = solve(sys, x0, SampledFn(Grid(-1.0, h, n), np.column_stack([d, np.zeros(n)])), SolveConfig(T))
cert = IssCertificate((1.0,), 0.5, gamma=lambda s: s)
for tt in range(0, int(T) + 1, 3):
    hist = traj.history(float(tt))
    print(f"t = {tt:2d}   sup|x_t| = {sup_norm(hist):.3e}   V = {lyapunov_V(cert, hist):.3e}")

rep = check_razumikhin(sys, cert, samples=5000)
print(f"Razumikhin check: {rep.violations} violations, effective lambda {rep.effective_lambda:.4f}")
