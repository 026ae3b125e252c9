"""Tensor phase-space grids with mu-weighted quadrature.

Axis layout of a grid function is [x_1, ..., x_d, v_1, ..., v_d], each axis a
uniform node vector on [-L, L].  First derivatives use centered stencils of
even order p in the interior and one-sided stencils of the same order at the
p/2 nodes next to each edge, so polynomials of degree <= p are differentiated
exactly everywhere on the grid.
"""

from __future__ import annotations

import json
import struct
from dataclasses import dataclass
from functools import cached_property, lru_cache
from itertools import product
from math import factorial

import numpy as np

from .potentials import potential_from_descriptor

MIN_NODES = 8
MAGIC = b"HKGF"
FORMAT_VERSION = 1


class GridError(ValueError):
    pass


@lru_cache(maxsize=None)
def stencil_weights(offsets, m=1):
    """Finite-difference weights for the m-th derivative on integer offsets."""
    offs = np.asarray(offsets, dtype=float)
    n = offs.size
    A = np.vander(offs, n, increasing=True).T
    rhs = np.zeros(n)
    rhs[m] = factorial(m)
    return np.linalg.solve(A, rhs)


def diff(f, axis, h, order=4):
    """First derivative of f along ``axis`` with spacing h."""
    if order % 2 or order < 2:
        raise GridError("stencil order must be a positive even integer")
    p = order // 2
    f = np.moveaxis(np.asarray(f, dtype=float), axis, 0)
    n = f.shape[0]
    if n < order + 1:
        raise GridError(f"need at least {order + 1} nodes for an order-{order} stencil")
    out = np.zeros_like(f)
    cen = stencil_weights(tuple(range(-p, p + 1)))
    for j, c in enumerate(cen):
        if c != 0.0:
            out[p:n - p] += c * f[j:n - 2 * p + j]
    head = f[:order + 1]
    tail = f[::-1][:order + 1]
    for j in range(p):
        w = stencil_weights(tuple(i - j for i in range(order + 1)))
        out[j] = np.tensordot(w, head, axes=(0, 0))
        out[n - 1 - j] = -np.tensordot(w, tail, axes=(0, 0))
    return np.moveaxis(out / h, 0, axis)


def trapezoid_weights(n):
    w = np.ones(n)
    w[0] = w[-1] = 0.5
    return w


def multi_indices(order, d):
    """Multi-indices alpha in N^d with |alpha| = order, plus Hilbert-Schmidt multiplicity."""
    out = []
    for alpha in product(range(order + 1), repeat=d):
        if sum(alpha) == order:
            mult = factorial(order)
            for a in alpha:
                mult //= factorial(a)
            out.append((alpha, mult))
    return out


@dataclass(frozen=True, eq=False)
class PhaseGrid:
    """Uniform grid on [-L_x, L_x]^d x [-L_v, L_v]^d for a given potential."""

    potential: object
    d: int = 1
    n_x: int = 256
    L_x: float = 8.0
    n_v: int = 256
    L_v: float = 8.0
    order: int = 6

    def __post_init__(self):
        if self.d not in (1, 2):
            raise GridError("grids support d in {1, 2}")
        if getattr(self.potential, "dim", None) != self.d:
            raise GridError(f"potential dimension {getattr(self.potential, 'dim', None)} != grid dimension {self.d}")
        if self.n_x < MIN_NODES or self.n_v < MIN_NODES:
            raise GridError(f"grid too coarse: need at least {MIN_NODES} nodes per axis")
        if self.n_x < self.order + 1 or self.n_v < self.order + 1:
            raise GridError("grid too coarse for the stencil order")
        if not (self.L_x > 0 and self.L_v > 0):
            raise GridError("extents must be positive")

    @cached_property
    def x(self):
        return np.linspace(-self.L_x, self.L_x, self.n_x)

    @cached_property
    def v(self):
        return np.linspace(-self.L_v, self.L_v, self.n_v)

    @property
    def h_x(self):
        return 2 * self.L_x / (self.n_x - 1)

    @property
    def h_v(self):
        return 2 * self.L_v / (self.n_v - 1)

    @property
    def shape(self):
        return (self.n_x,) * self.d + (self.n_v,) * self.d

    @cached_property
    def mesh(self):
        """Tuple (X_1..X_d, V_1..V_d) of broadcastable coordinate arrays."""
        axes = [self.x] * self.d + [self.v] * self.d
        return tuple(np.meshgrid(*axes, indexing="ij", sparse=True))

    def x_points(self):
        """Positions as an array of shape (n_x,)*d + (d,) for potential evaluation."""
        xs = np.meshgrid(*([self.x] * self.d), indexing="ij")
        return np.stack(xs, axis=-1)

    @cached_property
    def V_x(self):
        return self.potential.value(self.x_points())

    @cached_property
    def gradV(self):
        """Components of grad V broadcast to the full grid shape."""
        g = self.potential.grad(self.x_points())
        pad = (1,) * self.d
        return tuple(g[..., j].reshape(g.shape[:-1] + pad) for j in range(self.d))

    @cached_property
    def hessV(self):
        H = self.potential.hess(self.x_points())
        pad = (1,) * self.d
        return tuple(tuple(H[..., i, j].reshape(H.shape[:-2] + pad) for j in range(self.d)) for i in range(self.d))

    @cached_property
    def density(self):
        """Unnormalized e^{-V(x) - |v|^2/2} on the grid (shifted for stability)."""
        Vx = self.V_x - np.min(self.V_x)
        rx = np.exp(-Vx)
        rv = np.exp(-0.5 * self.v**2)
        vv = rv
        for _ in range(self.d - 1):
            vv = np.multiply.outer(vv, rv)
        return np.multiply.outer(rx, vv)

    @cached_property
    def mu_weights(self):
        wx = trapezoid_weights(self.n_x)
        wv = trapezoid_weights(self.n_v)
        w = wx
        for _ in range(self.d - 1):
            w = np.multiply.outer(w, wx)
        for _ in range(self.d):
            w = np.multiply.outer(w, wv)
        W = w * self.density
        W = W / W.sum()
        W.setflags(write=False)
        return W

    # calculus -----------------------------------------------------------

    def dx(self, f, j=0, order=None):
        return diff(f, j, self.h_x, order or self.order)

    def dv(self, f, j=0, order=None):
        return diff(f, self.d + j, self.h_v, order or self.order)

    def deriv(self, f, alpha=(), beta=(), order=None):
        """Partial derivative D_x^alpha D_v^beta with multi-indices alpha, beta."""
        for j, a in enumerate(alpha):
            for _ in range(a):
                f = self.dx(f, j, order)
        for j, b in enumerate(beta):
            for _ in range(b):
                f = self.dv(f, j, order)
        return f

    def inner(self, a, b):
        return float(np.sum(self.mu_weights * a * b))

    def norm(self, a):
        return float(np.sqrt(max(self.inner(a, a), 0.0)))

    def mean(self, a):
        return float(np.sum(self.mu_weights * a))

    def sample(self, fn):
        """Evaluate fn(*mesh) and broadcast to the full grid shape."""
        vals = np.broadcast_to(np.asarray(fn(*self.mesh), dtype=float), self.shape)
        return GridFunction(self, np.array(vals))

    def boundary_mass(self, values):
        """Largest mu-weighted value h^2 rho/max(rho) on the two outermost shells of any axis."""
        rho = self.density / self.density.max()
        q = np.asarray(values) ** 2 * rho
        worst = 0.0
        for ax in range(2 * self.d):
            q_ax = np.moveaxis(q, ax, 0)
            worst = max(worst, float(np.max(q_ax[:2])), float(np.max(q_ax[-2:])))
        return worst

    def descriptor(self):
        return {
            "d": self.d,
            "n_x": self.n_x,
            "L_x": self.L_x,
            "n_v": self.n_v,
            "L_v": self.L_v,
            "order": self.order,
            "potential": self.potential.descriptor(),
        }


@dataclass(frozen=True, eq=False)
class GridFunction:
    """Immutable sample of h(x, v) on a PhaseGrid."""

    grid: PhaseGrid
    values: np.ndarray

    def __post_init__(self):
        vals = np.array(self.values, dtype=float)
        if vals.shape != self.grid.shape:
            raise GridError(f"values shape {vals.shape} does not match grid shape {self.grid.shape}")
        vals.setflags(write=False)
        object.__setattr__(self, "values", vals)

    @property
    def d(self):
        return self.grid.d

    @property
    def potential(self):
        return self.grid.potential

    def with_values(self, values):
        return GridFunction(self.grid, values)

    def mass(self):
        return self.grid.mean(self.values)

    def norm(self):
        return self.grid.norm(self.values)

    def is_admissible(self, tol=1e-10):
        return self.grid.boundary_mass(self.values) <= tol


def write_grid_function(path, gf):
    """Little-endian binary: magic, u32 version, u64 header length, JSON header, float64 data."""
    header = json.dumps({"shape": list(gf.values.shape), "dtype": "<f8", **gf.grid.descriptor()}).encode()
    with open(path, "wb") as fh:
        fh.write(MAGIC)
        fh.write(struct.pack("<IQ", FORMAT_VERSION, len(header)))
        fh.write(header)
        fh.write(np.ascontiguousarray(gf.values, dtype="<f8").tobytes())


def read_grid_function(path):
    with open(path, "rb") as fh:
        if fh.read(4) != MAGIC:
            raise GridError("not a grid-function file")
        version, hlen = struct.unpack("<IQ", fh.read(12))
        if version != FORMAT_VERSION:
            raise GridError(f"unsupported format version {version}")
        header = json.loads(fh.read(hlen).decode())
        data = np.frombuffer(fh.read(), dtype="<f8")
    grid = PhaseGrid(
        potential_from_descriptor(header["potential"]),
        d=header["d"],
        n_x=header["n_x"],
        L_x=header["L_x"],
        n_v=header["n_v"],
        L_v=header["L_v"],
        order=header.get("order", 6),
    )
    return GridFunction(grid, data.reshape(header["shape"]).astype(float))
