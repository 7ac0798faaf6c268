"""Transport with mean recirculation at and below the critical gain.

    x_t + x_z = g d(t) int_0^1 x dz,   x(t, 0) = 0.

At ``g = 2`` with ``d = 1`` every profile ``c z`` is stationary, so no
certificate can prove decay.  At ``g = 1.5`` random disturbances in
``[-1, 1]`` cannot prevent convergence to zero.
"""

import numpy as np

from idepde import (Grid, IssCertificate, SampledFn, check_razumikhin, make_rng, mean_recirculation,
                    solve_pde, to_ide)
from idepde.sampled import sup_norm

K = 128
h = 1.0 / K
grid = Grid(0.0, h, K)

# critical gain: the ramp does not move
T = 6.0
n = int(T * K)
x0 = SampledFn(grid, grid.midpoints)
sol = solve_pde(mean_recirculation(2.0), x0, SampledFn(Grid(0.0, h, n), np.ones(n)), T, (2.0, 4.0, 6.0))
for t in (2.0, 4.0, 6.0):
    print(f"g = 2, t = {t:.0f}: max |x(t) - z| = {sup_norm(sol.profile(t) - x0):.2e}")
rep = check_razumikhin(to_ide(mean_recirculation(2.0)), IssCertificate((1.0, 5.0), 0.95), samples=2000)
print(f"g = 2 certificate: {rep.violations} violations, effective lambda {rep.effective_lambda:.3f}")

# subcritical gain with a random disturbance
rng = make_rng(3)
T = 30.0
n = int(T * K)
d = np.repeat(rng.uniform(-1, 1, n // 16 + 1), 16)[:n]
x0 = SampledFn(grid, np.repeat(rng.uniform(-1, 1, 8), K // 8))
times = tuple(float(t) for t in range(0, 31, 5))
sol = solve_pde(mean_recirculation(1.5), x0, SampledFn(Grid(0.0, h, n), d), T, times)
for t in times:
    print(f"g = 1.5, t = {t:4.0f}: sup|x| = {sup_norm(sol.profile(t)):.3e}")
