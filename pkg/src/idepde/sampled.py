"""Piecewise-constant functions on uniform grids.

Every history, input signal and spatial profile in the package is a
:class:`SampledFn`: one vector per half-open cell of a :class:`Grid`.
Delays and window bounds are required to be cell aligned, so shifting a
function never interpolates.
"""

from __future__ import annotations

import csv
import io
import math
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .errors import AlignmentError, DataError, DomainError

#: relative tolerance used when snapping times onto grid edges
ALIGN_RTOL = 1e-9


@dataclass(frozen=True)
class Grid:
    """Uniform partition of ``[t_start, t_start + count*step)`` into cells."""

    t_start: float
    step: float
    count: int

    def __post_init__(self):
        if not (self.step > 0 and math.isfinite(self.step)):
            raise DomainError(f"grid step must be positive, got {self.step}")
        if self.count < 0:
            raise DomainError(f"grid count must be non-negative, got {self.count}")

    @property
    def t_end(self) -> float:
        return self.t_start + self.count * self.step

    @property
    def edges(self) -> np.ndarray:
        return self.t_start + self.step * np.arange(self.count + 1)

    @property
    def midpoints(self) -> np.ndarray:
        return self.t_start + self.step * (np.arange(self.count) + 0.5)

    def edge_index(self, t: float) -> int:
        """Index ``k`` with ``t == t_start + k*step``; raise if ``t`` is off-grid."""
        x = (t - self.t_start) / self.step
        k = round(x)
        if abs(x - k) > ALIGN_RTOL * max(1.0, abs(x)):
            raise AlignmentError(
                f"time {t!r} is not on the grid (t_start={self.t_start}, step={self.step})"
            )
        return int(k)

    def cell_index(self, t: float) -> int:
        """Index of the half-open cell containing ``t``."""
        x = (t - self.t_start) / self.step
        k = math.floor(x + ALIGN_RTOL)
        return int(k)

    def same_step(self, other: "Grid") -> bool:
        return abs(self.step - other.step) <= ALIGN_RTOL * self.step


class SampledFn:
    """Cell-constant vector-valued function.

    Parameters
    ----------
    grid : Grid
        Cell layout.
    values : array_like
        Shape ``(grid.count, n)`` or ``(grid.count,)`` for scalar functions.
    n : int, optional
        Value dimension, only needed when ``grid.count == 0``.
    """

    __slots__ = ("grid", "_values")

    def __init__(self, grid: Grid, values, n: int | None = None):
        arr = np.array(values, dtype=float)
        if arr.ndim == 1 and not (arr.size == 0 and n is not None):
            arr = arr.reshape(-1, 1)
        if arr.size == 0 and not (arr.ndim == 2 and arr.shape[0] == grid.count > 0):
            arr = np.zeros((0, n if n is not None else (arr.shape[1] if arr.ndim == 2 else 1)))
        if arr.ndim != 2 or arr.shape[0] != grid.count:
            raise DataError(
                f"values of shape {arr.shape} do not match grid with {grid.count} cells"
            )
        if not np.all(np.isfinite(arr)):
            raise DataError("sampled values must be finite")
        arr.setflags(write=False)
        self.grid = grid
        self._values = arr

    # construction helpers
    @classmethod
    def from_function(cls, fn, t_start: float, t_end: float, count: int) -> "SampledFn":
        """Sample ``fn`` at the midpoints of ``count`` cells covering ``[t_start, t_end)``."""
        grid = Grid(t_start, (t_end - t_start) / count, count)
        mids = grid.midpoints
        try:
            vals = np.asarray(fn(mids), dtype=float)
            if vals.shape[:1] != (count,):
                raise ValueError
        except (TypeError, ValueError):
            vals = np.array([np.atleast_1d(fn(t)) for t in mids], dtype=float)
        return cls(grid, vals)

    @classmethod
    def constant(cls, value, grid: Grid) -> "SampledFn":
        v = np.atleast_1d(np.asarray(value, dtype=float))
        return cls(grid, np.tile(v, (grid.count, 1)), n=v.size)

    @classmethod
    def empty(cls, t_start: float, step: float, n: int = 1) -> "SampledFn":
        return cls(Grid(t_start, step, 0), np.zeros((0, n)), n=n)

    # accessors
    @property
    def values(self) -> np.ndarray:
        return self._values

    @property
    def n(self) -> int:
        return self._values.shape[1]

    @property
    def t_start(self) -> float:
        return self.grid.t_start

    @property
    def t_end(self) -> float:
        return self.grid.t_end

    def __len__(self) -> int:
        return self.grid.count

    def __call__(self, t):
        """Value of the cell containing ``t``."""
        k = self.grid.cell_index(t)
        if not 0 <= k < self.grid.count:
            raise DomainError(f"t={t} outside [{self.t_start}, {self.t_end})")
        return self._values[k]

    def shifted(self, dt: float) -> "SampledFn":
        """Same values on a grid translated by ``dt``."""
        g = self.grid
        return SampledFn(Grid(g.t_start + dt, g.step, g.count), self._values, n=self.n)

    def as_history(self) -> "SampledFn":
        """Re-base so the function ends at time 0."""
        return self.shifted(-self.t_end)

    def __sub__(self, other: "SampledFn") -> "SampledFn":
        _check_compatible(self, other)
        return SampledFn(self.grid, self._values - other._values, n=self.n)

    def __add__(self, other: "SampledFn") -> "SampledFn":
        _check_compatible(self, other)
        return SampledFn(self.grid, self._values + other._values, n=self.n)

    def __mul__(self, scalar: float) -> "SampledFn":
        return SampledFn(self.grid, self._values * float(scalar), n=self.n)

    __rmul__ = __mul__

    def __eq__(self, other) -> bool:
        if not isinstance(other, SampledFn):
            return NotImplemented
        return (
            self.grid.count == other.grid.count
            and self.grid.same_step(other.grid)
            and math.isclose(self.t_start, other.t_start, abs_tol=ALIGN_RTOL * self.grid.step)
            and np.array_equal(self._values, other._values)
        )

    def __repr__(self) -> str:
        return f"SampledFn(t=[{self.t_start:g}, {self.t_end:g}), step={self.grid.step:g}, n={self.n})"


def _check_compatible(f: SampledFn, g: SampledFn) -> None:
    if f.grid.count != g.grid.count or not f.grid.same_step(g.grid):
        raise AlignmentError("functions live on different grids")
    if f.n != g.n:
        raise DataError(f"dimension mismatch: {f.n} vs {g.n}")


def sup_norm(f: SampledFn) -> float:
    """Largest Euclidean norm over the cells (0 for an empty function)."""
    if len(f) == 0 or f.n == 0:
        return 0.0
    # hypot avoids underflow of squared tiny values
    return float(np.max(np.hypot.reduce(np.abs(f.values), axis=1)))


def integrate(f: SampledFn, a: float, b: float) -> np.ndarray:
    """Exact integral of the cell-constant function over ``[a, b]``.

    Each component is accumulated with :func:`math.fsum`, so splitting the
    interval changes the result by at most a couple of roundings.
    """
    g = f.grid
    tol = ALIGN_RTOL * g.step
    if a > b + tol or a < g.t_start - tol or b > g.t_end + tol:
        raise DomainError(f"[{a}, {b}] not inside [{g.t_start}, {g.t_end}]")
    if b <= a:
        return np.zeros(f.n)
    lo = g.edges[:-1]
    overlap = np.clip(np.minimum(lo + g.step, b) - np.maximum(lo, a), 0.0, None)
    idx = np.nonzero(overlap)[0]
    prod = f.values[idx] * overlap[idx, None]
    return np.array([math.fsum(prod[:, j]) for j in range(f.n)])


def window(f: SampledFn, a: float, b: float) -> SampledFn:
    """Restriction of ``f`` to the aligned interval ``[a, b)``.

    Times are kept; call :meth:`SampledFn.as_history` to view the result as
    a history ending at 0.
    """
    i0 = f.grid.edge_index(a)
    i1 = f.grid.edge_index(b)
    if i0 < 0 or i1 > f.grid.count or i1 < i0:
        raise DomainError(f"window [{a}, {b}) outside [{f.t_start}, {f.t_end})")
    grid = Grid(f.t_start + i0 * f.grid.step, f.grid.step, i1 - i0)
    return SampledFn(grid, f.values[i0:i1], n=f.n)


def append(f: SampledFn, v) -> SampledFn:
    """Extend ``f`` by one trailing cell holding ``v``."""
    v = np.atleast_1d(np.asarray(v, dtype=float))
    if not np.all(np.isfinite(v)):
        raise DataError("appended value must be finite")
    if v.size != f.n:
        raise DataError(f"expected a vector of length {f.n}, got {v.size}")
    g = f.grid
    return SampledFn(Grid(g.t_start, g.step, g.count + 1), np.vstack([f.values, v]), n=f.n)


def concatenate(parts: list[SampledFn]) -> SampledFn:
    """Join adjacent functions sharing one step."""
    first = parts[0]
    for left, right in zip(parts, parts[1:]):
        if not left.grid.same_step(right.grid):
            raise AlignmentError("cannot join functions with different steps")
        if abs(left.t_end - right.t_start) > ALIGN_RTOL * left.grid.step:
            raise AlignmentError("functions are not adjacent")
    count = sum(len(p) for p in parts)
    grid = Grid(first.t_start, first.grid.step, count)
    return SampledFn(grid, np.vstack([p.values for p in parts]), n=first.n)


def to_csv(f: SampledFn, dest=None, header=None) -> str:
    """Write one row per cell: ``t_lo, t_hi, v_1 .. v_n`` at 17 significant digits.

    Returns the CSV text; when ``dest`` is given it is also written there.
    Profiles use ``header=("z_lo", "z_hi", "x")``.
    """
    if header is None:
        header = ["t_lo", "t_hi"] + [f"v_{j + 1}" for j in range(f.n)]
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(header)
    edges = f.grid.edges
    for k in range(len(f)):
        row = [edges[k], edges[k + 1], *f.values[k]]
        w.writerow([format(float(x), ".17g") for x in row])
    text = buf.getvalue()
    if dest is not None:
        Path(dest).write_text(text)
    return text


def read_csv(source) -> SampledFn:
    """Inverse of :func:`to_csv`; accepts a path or CSV text."""
    text = Path(source).read_text() if isinstance(source, Path) or (
        isinstance(source, str) and "\n" not in source
    ) else source
    rows = list(csv.reader(io.StringIO(text)))
    body = np.array([[float(x) for x in r] for r in rows[1:] if r], dtype=float)
    if body.size == 0:
        raise DataError("CSV holds no cells")
    lo, hi = body[:, 0], body[:, 1]
    step = float(hi[0] - lo[0])
    grid = Grid(float(lo[0]), step, body.shape[0])
    return SampledFn(grid, body[:, 2:])


def make_rng(seed: int | None = 0) -> np.random.Generator:
    """Random generator used throughout the package.

    Philox-4x64 (counter-based, 10 rounds) keyed by ``seed``, wrapped in
    :class:`numpy.random.Generator`.  Streams are reproducible from the
    seed alone and independent of platform.
    """
    return np.random.Generator(np.random.Philox(seed))
