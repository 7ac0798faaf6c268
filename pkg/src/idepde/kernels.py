"""Scalar kernels with closed-form integrals.

Constants, polynomials and exponential-affine terms ``alpha*exp(beta*s)``
cover every weight and coefficient used in the package.  Integrals are
exact, which keeps the cell weights of distributed terms free of
quadrature error.
"""

from __future__ import annotations

import math

import numpy as np
from numpy.polynomial import Polynomial as _Poly

from .errors import DataError


class Kernel:
    """Base class; subclasses implement evaluation and antiderivatives."""

    def __call__(self, s):
        raise NotImplementedError

    def integral(self, a, b):
        """Exact ``int_a^b k(s) ds``, vectorized over ``a`` and ``b``."""
        raise NotImplementedError

    def abs_integral(self, a: float, b: float) -> float:
        """``int_a^b |k(s)| ds`` or an upper bound for it."""
        raise NotImplementedError

    def sup_abs(self, a: float, b: float) -> float:
        """``max |k|`` over ``[a, b]`` or an upper bound for it."""
        raise NotImplementedError

    def is_constant(self) -> bool:
        return False

    def __add__(self, other: "Kernel") -> "Kernel":
        return KernelSum([self, other])

    def to_json(self) -> dict:
        raise NotImplementedError


class Constant(Kernel):
    def __init__(self, value: float):
        self.value = float(value)

    def __call__(self, s):
        return np.full(np.shape(s), self.value) if np.ndim(s) else self.value

    def integral(self, a, b):
        return self.value * (np.asarray(b, dtype=float) - np.asarray(a, dtype=float))

    def abs_integral(self, a, b):
        return abs(self.value) * max(b - a, 0.0)

    def sup_abs(self, a, b):
        return abs(self.value)

    def is_constant(self):
        return True

    def to_json(self):
        return {"kind": "constant", "value": self.value}

    def __repr__(self):
        return f"Constant({self.value!r})"


class Polynomial(Kernel):
    """``sum_j coeffs[j] * s**j``."""

    def __init__(self, coeffs):
        self.coeffs = [float(c) for c in coeffs]
        self._p = _Poly(self.coeffs)
        self._P = self._p.integ()

    def __call__(self, s):
        return self._p(s)

    def integral(self, a, b):
        return self._P(np.asarray(b, dtype=float)) - self._P(np.asarray(a, dtype=float))

    def _breaks(self, a, b):
        roots = self._p.roots() if self._p.degree() > 0 else []
        inner = sorted(x.real for x in np.atleast_1d(roots) if abs(x.imag) < 1e-12 and a < x.real < b)
        return [a, *inner, b]

    def abs_integral(self, a, b):
        pts = self._breaks(a, b)
        return float(sum(abs(self._P(hi) - self._P(lo)) for lo, hi in zip(pts, pts[1:])))

    def sup_abs(self, a, b):
        cand = [a, b]
        d = self._p.deriv()
        if d.degree() > 0:
            cand += [x.real for x in np.atleast_1d(d.roots()) if abs(x.imag) < 1e-12 and a < x.real < b]
        return float(max(abs(self._p(x)) for x in cand))

    def is_constant(self):
        return all(c == 0.0 for c in self.coeffs[1:])

    def to_json(self):
        return {"kind": "polynomial", "coeffs": self.coeffs}

    def __repr__(self):
        return f"Polynomial({self.coeffs!r})"


class ExpAffine(Kernel):
    """``alpha * exp(beta * s)``."""

    def __init__(self, alpha: float, beta: float):
        self.alpha = float(alpha)
        self.beta = float(beta)

    def __call__(self, s):
        return self.alpha * np.exp(self.beta * np.asarray(s, dtype=float))

    def integral(self, a, b):
        a = np.asarray(a, dtype=float)
        b = np.asarray(b, dtype=float)
        if self.beta == 0.0:
            return self.alpha * (b - a)
        return self.alpha * np.exp(self.beta * a) * np.expm1(self.beta * (b - a)) / self.beta

    def abs_integral(self, a, b):
        return abs(float(self.integral(a, b)))

    def sup_abs(self, a, b):
        return abs(self.alpha) * math.exp(max(self.beta * a, self.beta * b))

    def is_constant(self):
        return self.beta == 0.0 or self.alpha == 0.0

    def to_json(self):
        return {"kind": "exp_affine", "alpha": self.alpha, "beta": self.beta}

    def __repr__(self):
        return f"ExpAffine({self.alpha!r}, {self.beta!r})"


class KernelSum(Kernel):
    """Sum of kernels; absolute bounds are the (conservative) sums of the parts."""

    def __init__(self, terms):
        self.terms = list(terms)

    def __call__(self, s):
        return sum(t(s) for t in self.terms)

    def integral(self, a, b):
        return sum(t.integral(a, b) for t in self.terms)

    def abs_integral(self, a, b):
        return sum(t.abs_integral(a, b) for t in self.terms)

    def sup_abs(self, a, b):
        return sum(t.sup_abs(a, b) for t in self.terms)

    def is_constant(self):
        return all(t.is_constant() for t in self.terms)

    def to_json(self):
        return {"kind": "sum", "terms": [t.to_json() for t in self.terms]}


def kernel_from_json(spec) -> Kernel:
    """Build a kernel from ``{"kind": ...}``; a bare number means a constant."""
    if isinstance(spec, (int, float)):
        return Constant(spec)
    if isinstance(spec, list):
        return KernelSum([kernel_from_json(s) for s in spec])
    kind = spec.get("kind")
    if kind == "constant":
        return Constant(spec["value"])
    if kind == "polynomial":
        return Polynomial(spec["coeffs"])
    if kind == "exp_affine":
        return ExpAffine(spec["alpha"], spec["beta"])
    if kind == "sum":
        return KernelSum([kernel_from_json(s) for s in spec["terms"]])
    raise DataError(f"unknown kernel kind {kind!r}")
