"""JSON scenario files: systems, signals, certificates and validation.

A scenario is a JSON object::

    {
      "kind": "simulate-pde",
      "system": {"type": "mean_recirculation", "g": 1.5},
      "initial": {"type": "random", "amplitude": 1.0, "pieces": 16},
      "input": [{"type": "random", "amplitude": 1.0, "piece": 0.0625}],
      "numerics": {"K": 64, "T": 20, "tol": 1e-12, "seed": 0},
      "outputs": {"dir": "out", "snapshot_times": [0, 10, 20]}
    }

``system`` may also be ``"system_file": "path.json"`` (relative to the
scenario).  :func:`load_scenario` collects every violation before raising
:class:`~idepde.errors.ConfigError`.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field
from fractions import Fraction
from functools import reduce
from pathlib import Path

import numpy as np

from .errors import ConfigError, DataError
from .feedback import DeadbeatKernel, RecirculationPlant
from .functionals import IdeSystem, KernelMap, LinearScalarDistributed, PointMap, PointPlusKernel
from .hyperbolic import (Coefficient, FunctionalSum, HyperbolicSystem, InputPassthrough,
                         PointEvaluation, WeightedIntegral, Zero, mean_recirculation)
from .kernels import kernel_from_json
from .sampled import Grid, SampledFn, make_rng
from .stability import IssCertificate

KINDS = ("simulate-ide", "simulate-pde", "convert", "check-razumikhin", "feedback-demo",
         "equivalence-audit", "acceptance")

#: final time used when a scenario does not set one
DEFAULT_T = {"feedback-demo": 3.0}


# systems -----------------------------------------------------------------

def functional_from_json(spec) -> object:
    """Profile functional from ``{"form": ...}``."""
    form = spec.get("form")
    if form == "zero":
        return Zero()
    if form == "point":
        return PointEvaluation(spec.get("z", 1.0), spec.get("gain_channel"), spec.get("gain_bound"))
    if form == "integral":
        return WeightedIntegral(kernel_from_json(spec.get("kernel", 1.0)), spec.get("gain_channel"),
                                spec.get("gain_bound"))
    if form == "input":
        return InputPassthrough(spec.get("channel", 0), spec.get("gain", 1.0))
    if form == "sum":
        return FunctionalSum([functional_from_json(t) for t in spec["terms"]])
    if form == "deadbeat_kernel":
        return DeadbeatKernel(spec["g"])
    raise DataError(f"unknown functional form {form!r}")


def coefficient_from_json(spec) -> Coefficient | None:
    if spec is None:
        return None
    if isinstance(spec, (int, float)):
        return Coefficient.constant(spec)
    return Coefficient.of_z(kernel_from_json(spec))


def system_from_json(spec: dict):
    """Build an :class:`IdeSystem` or a :class:`HyperbolicSystem`."""
    kind = spec.get("type")
    if kind == "linear_scalar_distributed":
        return IdeSystem(LinearScalarDistributed(kernel_from_json(spec.get("q", 0.5)),
                                                 spec.get("r", 1.0), spec.get("Q", 1.0)),
                         m1=1, Q=spec.get("Q", 1.0))
    if kind == "point_plus_kernel":
        n, m = spec.get("n", 1), spec.get("m", 0)
        maps = [PointMap.linear(A, spec.get("B")) for A in spec.get("A", [])]
        km = None
        if "kernel" in spec:
            k = spec["kernel"]
            km = KernelMap.linear(kernel_from_json(k.get("q", 1.0)), k.get("A", 1.0),
                                  spec.get("r", 1.0))
        rhs = PointPlusKernel(spec.get("delays", []), maps, km, spec.get("r"), n, m)
        return IdeSystem(rhs, m1=spec.get("m1", 0), Q=spec.get("Q", 1.0))
    if kind == "mean_recirculation":
        return mean_recirculation(spec.get("g", 1.0), spec.get("Q", 1.0))
    if kind == "recirculation":
        plant = RecirculationPlant(spec.get("g", 1.0))
        return plant.closed_loop_system() if spec.get("closed_loop") else plant.system()
    if kind == "hyperbolic":
        return HyperbolicSystem(
            g=[kernel_from_json(k) for k in spec.get("g", [])],
            K=[functional_from_json(f) for f in spec.get("K", [])],
            G=functional_from_json(spec.get("G", {"form": "zero"})),
            c=spec.get("c", 1.0),
            a=coefficient_from_json(spec.get("a")),
            m=spec.get("m", 0),
            m1=spec.get("m1", 0),
            Q=spec.get("Q", 1.0),
        )
    raise DataError(f"unknown system type {kind!r}")


def certificate_from_json(spec: dict, r: float = 1.0) -> IssCertificate:
    gamma = spec.get("gamma")
    if gamma is None:
        fn = None
    elif gamma.get("type") == "linear":
        slope = float(gamma["slope"])
        fn = lambda s: slope * s  # noqa: E731
    else:
        raise DataError(f"unknown gain type {gamma.get('type')!r}")
    kw = {} if fn is None else {"gamma": fn}
    return IssCertificate(spec["weights"], spec["lambda"], r, sigma_rate=spec.get("sigma"), **kw)


# signals -----------------------------------------------------------------

def signal_values(spec, t: np.ndarray, rng: np.random.Generator, span=(0.0, 1.0)) -> np.ndarray:
    """Sample a scalar signal spec at the times ``t`` (cell midpoints).

    Types: ``zero``, ``constant`` (value), ``step`` (before, after, at),
    ``ramp`` (offset + slope t), ``levels`` (equal pieces over ``span``),
    ``random`` (piecewise-constant uniform levels in ``[-amplitude,
    amplitude]`` on pieces of length ``piece``, or ``pieces`` equal pieces
    of ``span``; optional own ``seed``).
    """
    if isinstance(spec, (int, float)):
        return np.full(t.shape, float(spec))
    kind = spec.get("type", "constant")
    if kind == "zero":
        return np.zeros(t.shape)
    if kind == "constant":
        return np.full(t.shape, float(spec.get("value", 0.0)))
    if kind == "step":
        return np.where(t < spec.get("at", 0.0), spec.get("before", 0.0), spec.get("after", 1.0)).astype(float)
    if kind == "ramp":
        return spec.get("offset", 0.0) + spec.get("slope", 1.0) * t
    lo, hi = span
    if kind == "levels":
        vals = np.asarray(spec["values"], dtype=float)
        idx = np.floor((t - lo) / (hi - lo) * len(vals)).astype(int)
        return vals[np.clip(idx, 0, len(vals) - 1)]
    if kind == "random":
        gen = make_rng(spec["seed"]) if "seed" in spec else rng
        amp = float(spec.get("amplitude", 1.0))
        piece = spec.get("piece")
        piece = float(piece) if piece is not None else (hi - lo) / spec.get("pieces", 16)
        count = int(math.ceil((hi - lo) / piece - 1e-9))
        vals = gen.uniform(-amp, amp, count)
        idx = np.floor((t - lo) / piece + 1e-9).astype(int)
        return vals[np.clip(idx, 0, count - 1)]
    raise DataError(f"unknown signal type {kind!r}")


def signal_fn(specs, grid: Grid, rng, channels: int, span=None) -> SampledFn:
    """Multi-channel signal on ``grid``; ``specs`` is one spec or a list per channel."""
    if not isinstance(specs, list):
        specs = [specs] * channels
    if len(specs) != channels:
        raise DataError(f"need {channels} signal channels, got {len(specs)}")
    span = span or (grid.t_start, grid.t_end)
    t = grid.midpoints
    cols = [signal_values(s, t, rng, span) for s in specs]
    return SampledFn(grid, np.column_stack(cols) if cols else np.zeros((grid.count, 0)))


# validation --------------------------------------------------------------

def smallest_valid_K(delays, r: float) -> int:
    """Smallest cell count per horizon making every delay a whole number of cells."""
    dens = [Fraction(tau / r).limit_denominator(10**6).denominator for tau in delays]
    return reduce(math.lcm, dens, 1)


@dataclass
class Scenario:
    kind: str
    raw: dict
    system: object = None
    K: int = 64
    T: float = 1.0
    tol: float = 1e-12
    seed: int = 0
    out: Path | None = None
    snapshot_times: list = field(default_factory=list)
    base: Path = Path(".")

    @property
    def is_pde(self) -> bool:
        return isinstance(self.system, HyperbolicSystem)

    def rng(self) -> np.random.Generator:
        return make_rng(self.seed)


def _check_grid(sc: Scenario, errors: list):
    sys = sc.system
    if isinstance(sys, IdeSystem):
        delays = list(getattr(sys.rhs, "delays", [])) + [sys.r]
        h = sys.r / sc.K
        bad = [tau for tau in delays if abs(tau / h - round(tau / h)) > 1e-9 * max(1.0, tau / h)]
        if bad:
            k0 = smallest_valid_K(delays, sys.r)
            k_up = k0 * math.ceil(sc.K / k0)
            errors.append(f"K={sc.K}: delays {bad} are not multiples of the step {h:g}; "
                          f"smallest valid K is {k0} (next valid K >= {sc.K} is {k_up})")
    if sc.is_pde:
        pts = []
        for f in list(sys.K) + [sys.G]:
            pts += [t.z for t in getattr(f, "terms", [f]) if isinstance(t, PointEvaluation)]
        bad = [z for z in pts if abs(z * sc.K - round(z * sc.K)) > 1e-9 * max(1.0, z * sc.K)]
        if bad:
            k0 = smallest_valid_K(pts, 1.0)
            errors.append(f"K={sc.K}: evaluation points {bad} are not grid nodes; smallest valid K is {k0}")
    h = (sys.r if isinstance(sys, IdeSystem) else 1.0 / sys.c) / sc.K
    for t in [sc.T] + list(sc.snapshot_times):
        if abs(t / h - round(t / h)) > 1e-9 * max(1.0, t / h):
            errors.append(f"time {t} is not a multiple of the step {h:g}")
    for t in sc.snapshot_times:
        if t < 0 or t > sc.T * (1 + 1e-12):
            errors.append(f"snapshot time {t} outside [0, T={sc.T}]")


def load_scenario(source, overrides: dict | None = None) -> Scenario:
    """Parse and validate a scenario (path or dict); CLI flags in ``overrides`` win."""
    errors: list[str] = []
    base = Path(".")
    if isinstance(source, (str, Path)):
        path = Path(source)
        if not path.exists():
            raise ConfigError([f"scenario file {path} does not exist"])
        try:
            raw = json.loads(path.read_text())
        except json.JSONDecodeError as exc:
            raise ConfigError([f"{path}: invalid JSON ({exc})"]) from exc
        base = path.parent
    else:
        raw = dict(source)
    overrides = {k: v for k, v in (overrides or {}).items() if v is not None}
    kind = overrides.pop("kind", None) or raw.get("kind")
    if kind not in KINDS:
        errors.append(f"kind must be one of {KINDS}, got {kind!r}")
    num = dict(raw.get("numerics", {}))
    num.update(overrides)
    outputs = raw.get("outputs", {})
    sc = Scenario(kind or "", raw, base=base)
    try:
        sc.K = int(num.get("K", 64))
        sc.T = float(num.get("T", DEFAULT_T.get(kind, 1.0)))
        sc.tol = float(num.get("tol", 1e-12))
        sc.seed = int(num.get("seed", 0))
    except (TypeError, ValueError) as exc:
        errors.append(f"numerics: {exc}")
    if sc.K < 1:
        errors.append(f"K must be a positive integer, got {sc.K}")
    if not sc.T >= 0:
        errors.append(f"T must be non-negative, got {sc.T}")
    if not sc.tol > 0:
        errors.append(f"tol must be positive, got {sc.tol}")
    out = overrides.get("out", outputs.get("dir"))
    sc.out = None if out is None else Path(out)
    sc.snapshot_times = [float(t) for t in outputs.get("snapshot_times", [])]

    sys_spec = raw.get("system")
    if "system_file" in raw:
        p = base / raw["system_file"]
        if not p.exists():
            errors.append(f"system file {p} does not exist")
            sys_spec = None
        else:
            sys_spec = json.loads(p.read_text())
    if kind not in ("acceptance", "feedback-demo") and sys_spec is None:
        errors.append("scenario needs a 'system' or an existing 'system_file'")
    if sys_spec is not None:
        try:
            sc.system = system_from_json(sys_spec)
        except (DataError, KeyError, TypeError, ValueError) as exc:
            errors.append(f"system: {exc}")
    if "certificate_file" in raw:
        p = base / raw["certificate_file"]
        if not p.exists():
            errors.append(f"certificate file {p} does not exist")
        else:
            raw["certificate"] = json.loads(p.read_text())
    if kind == "check-razumikhin" and "certificate" not in raw:
        errors.append("check-razumikhin needs a 'certificate' or 'certificate_file'")
    if kind == "acceptance" and raw.get("criterion") not in range(1, 11):
        errors.append("acceptance scenario needs 'criterion' in 1..10")
    if sc.system is not None and sc.K >= 1 and sc.T >= 0:
        _check_grid(sc, errors)
    if errors:
        raise ConfigError(errors)
    return sc
