"""Delay-equation closure against a finite-difference reference.

The transport equation with a nonlocal source is solved twice: once by
solving the integral delay equation for the boundary traces ``(p, v)``
and rebuilding profiles along characteristics, and once by a first-order
upwind march.  The gap halves with the step.
"""

import numpy as np

from idepde import Grid, SampledFn, make_rng, mean_recirculation, solve_pde, upwind_reference

rng = make_rng(7)
levels = rng.uniform(-1, 1, 16)
d_levels = rng.uniform(-1, 1, 80)
T = 5.0
times = [0.5 * k for k in range(11)]
sys = mean_recirculation(1.0)

prev = None
for K in (64, 128, 256, 512):
    h = 1.0 / K
    x0 = SampledFn(Grid(0.0, h, K), np.repeat(levels, K // 16))
    n = int(T * K)
    d = SampledFn(Grid(0.0, h, n), np.repeat(d_levels, K // 16)[:n])
    sol = solve_pde(sys, x0, d, T, times)
    ref = upwind_reference(sys, x0, d, T, times)
    gap = max(np.max(np.abs(sol.profile(t).values - ref[t].values)) for t in times)
    ratio = "" if prev is None else f"   ratio {prev / gap:.2f}"
    print(f"K = {K:4d}: max gap {gap:.3e}{ratio}")
    prev = gap
