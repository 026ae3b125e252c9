"""Confining potentials V(x) for the kinetic Fokker-Planck equation.

Every potential takes positions with shape (..., d) and returns the value,
gradient (..., d) and Hessian (..., d, d).  ``descriptor`` gives a
JSON-friendly dict that ``potential_from_descriptor`` can read back.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
from scipy.interpolate import BSpline, make_interp_spline


class PotentialError(ValueError):
    pass


def _as_points(x, d):
    x = np.asarray(x, dtype=float)
    if d == 1 and (x.ndim == 0 or x.shape[-1] != 1):
        x = x[..., None]
    if x.shape[-1] != d:
        raise PotentialError(f"expected trailing dimension {d}, got shape {x.shape}")
    return x


@dataclass(frozen=True)
class Quadratic:
    """V(x) = omega0^2 |x|^2 / 2 in dimension d."""

    omega0: float
    d: int = 1

    def __post_init__(self):
        if not self.omega0 > 0:
            raise PotentialError("omega0 must be positive")
        if self.d < 1:
            raise PotentialError("dimension must be >= 1")

    @property
    def dim(self):
        return self.d

    def value(self, x):
        x = _as_points(x, self.d)
        return 0.5 * self.omega0**2 * np.sum(x * x, axis=-1)

    def grad(self, x):
        x = _as_points(x, self.d)
        return self.omega0**2 * x

    def hess(self, x):
        x = _as_points(x, self.d)
        out = np.zeros(x.shape + (self.d,))
        idx = np.arange(self.d)
        out[..., idx, idx] = self.omega0**2
        return out

    def default_M(self):
        """Relative-bound constant: Hessian is omega0^2 I and higher derivatives vanish."""
        return max(self.omega0**4, 1.0)

    def descriptor(self):
        return {"variant": "quadratic", "omega0": self.omega0, "d": self.d}


@dataclass(frozen=True)
class Tabulated1D:
    """One-dimensional potential given by samples, interpolated by a B-spline.

    ``derivative_order`` is the number of continuous derivatives requested;
    the spline degree is one more than that (at least 5).
    """

    x_nodes: tuple
    V_values: tuple
    derivative_order: int = 4
    _spline: BSpline = field(init=False, repr=False, compare=False)

    def __post_init__(self):
        xs = np.asarray(self.x_nodes, dtype=float)
        vs = np.asarray(self.V_values, dtype=float)
        if xs.ndim != 1 or xs.shape != vs.shape:
            raise PotentialError("x_nodes and V_values must be 1D arrays of equal length")
        if np.any(np.diff(xs) <= 0):
            raise PotentialError("x_nodes must be strictly increasing")
        degree = max(5, self.derivative_order + 1)
        if xs.size < degree + 2:
            raise PotentialError(f"need at least {degree + 2} nodes for a degree-{degree} spline")
        object.__setattr__(self, "x_nodes", tuple(xs.tolist()))
        object.__setattr__(self, "V_values", tuple(vs.tolist()))
        object.__setattr__(self, "_spline", make_interp_spline(xs, vs, k=degree))
        # tail test: e^{-V} must be negligible at both ends of the table
        w = np.exp(-(vs - vs.min()))
        if max(w[0], w[-1]) > 1e-8:
            raise PotentialError("e^{-V} is not negligible at the table ends; integrability not verified")

    @property
    def dim(self):
        return 1

    @property
    def extent(self):
        return self.x_nodes[0], self.x_nodes[-1]

    def derivative(self, x, order):
        x = _as_points(x, 1)[..., 0]
        if order == 0:
            return self._spline(x)
        return self._spline.derivative(order)(x)

    def value(self, x):
        return self.derivative(x, 0)

    def grad(self, x):
        return self.derivative(x, 1)[..., None]

    def hess(self, x):
        return self.derivative(x, 2)[..., None, None]

    def descriptor(self):
        return {
            "variant": "tabulated1d",
            "x_nodes": list(self.x_nodes),
            "V_values": list(self.V_values),
            "derivative_order": self.derivative_order,
        }


@dataclass(frozen=True)
class CurieWeiss:
    """Mean-field quartic model.

    V(x) = sum_i beta (x_i^4/4 - x_i^2/2) - (beta K / 2N) sum_{i != j} x_i x_j.
    With N = 1 this is the single-site double well.
    """

    beta: float
    K: float = 0.0
    N: int = 1

    def __post_init__(self):
        if not self.beta > 0:
            raise PotentialError("beta must be positive")
        if int(self.N) != self.N or self.N < 1:
            raise PotentialError("N must be a positive integer")

    @property
    def dim(self):
        return self.N

    def value(self, x):
        x = _as_points(x, self.N)
        s = np.sum(x, axis=-1)
        onsite = np.sum(x**4 / 4 - x**2 / 2, axis=-1)
        pair = 0.5 * (s * s - np.sum(x * x, axis=-1))
        return self.beta * onsite - self.beta * self.K / self.N * pair

    def grad(self, x):
        x = _as_points(x, self.N)
        s = np.sum(x, axis=-1, keepdims=True)
        return self.beta * (x**3 - x - self.K / self.N * (s - x))

    def hess(self, x):
        x = _as_points(x, self.N)
        n = self.N
        out = np.broadcast_to(-self.beta * self.K / n * np.ones((n, n)), x.shape + (n,)).copy()
        idx = np.arange(n)
        out[..., idx, idx] = self.beta * (3 * x**2 - 1)
        return out

    def descriptor(self):
        return {"variant": "curie_weiss", "beta": self.beta, "K": self.K, "N": self.N}


def double_well_table(beta=1.0, L=6.0, n=241):
    """Tabulated version of the single-site double well beta (x^4/4 - x^2/2)."""
    xs = np.linspace(-L, L, n)
    return Tabulated1D(tuple(xs), tuple(beta * (xs**4 / 4 - xs**2 / 2)))


def potential_from_descriptor(desc):
    variant = desc.get("variant")
    if variant == "quadratic":
        return Quadratic(float(desc["omega0"]), int(desc.get("d", 1)))
    if variant == "tabulated1d":
        return Tabulated1D(tuple(desc["x_nodes"]), tuple(desc["V_values"]), int(desc.get("derivative_order", 4)))
    if variant == "curie_weiss":
        return CurieWeiss(float(desc["beta"]), float(desc.get("K", 0.0)), int(desc.get("N", 1)))
    raise PotentialError(f"unknown potential variant {variant!r}")
