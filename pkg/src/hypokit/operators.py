"""Discrete A = grad_v, A* = -div_v + v., B = v.grad_x - grad V.grad_v and L = A*A + B.

Seminorms follow the Hilbert-Schmidt convention: ||grad_x^i grad_v^j h||^2 sums
|D_x^alpha D_v^beta h|^2 over all *ordered* index tuples, i.e. each multi-index
weighted by its multinomial multiplicity.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .grid import GridError, GridFunction, multi_indices


class FeasibilityError(GridError):
    pass


# raw array versions ------------------------------------------------------------

def A_arrays(grid, h, order=None):
    return [grid.dv(h, j, order) for j in range(grid.d)]


def Astar_arrays(grid, g, order=None):
    V = grid.mesh[grid.d:]
    return sum(-grid.dv(g[j], j, order) + V[j] * g[j] for j in range(grid.d))


def B_array(grid, h, order=None):
    X = grid.mesh
    out = np.zeros(grid.shape)
    for j in range(grid.d):
        out = out + X[grid.d + j] * grid.dx(h, j, order) - grid.gradV[j] * grid.dv(h, j, order)
    return out


def AstarA_array(grid, h, order=None):
    return Astar_arrays(grid, A_arrays(grid, h, order), order)


def L_array(grid, h, order=None):
    return AstarA_array(grid, h, order) + B_array(grid, h, order)


def _check_potential(h, V):
    if V is not None and V is not h.potential and V != h.potential:
        raise GridError("potential does not match the grid potential")


# public operators -------------------------------------------------------------

def apply_A(h: GridFunction, order=None):
    return [h.with_values(a) for a in A_arrays(h.grid, h.values, order)]


def apply_Astar(g, V=None, order=None):
    g = list(g)
    grid = g[0].grid
    if len(g) != grid.d:
        raise GridError(f"expected {grid.d} components")
    _check_potential(g[0], V)
    return g[0].with_values(Astar_arrays(grid, [c.values for c in g], order))


def apply_B(h: GridFunction, V=None, order=None):
    _check_potential(h, V)
    return h.with_values(B_array(h.grid, h.values, order))


def apply_L(h: GridFunction, V=None, order=None):
    _check_potential(h, V)
    return h.with_values(L_array(h.grid, h.values, order))


def commutator_residuals(V, test_h: GridFunction, order=None) -> dict:
    """Relative L^2(mu) errors of [A_i, B] - d/dx_i and [C_i, B] + sum_j d_ij V d/dv_j."""
    _check_potential(test_h, V)
    grid, h = test_h.grid, test_h.values
    d = grid.d
    Bh = B_array(grid, h, order)
    ab_num = ab_den = cb_num = cb_den = 0.0
    for i in range(d):
        comm = grid.dv(Bh, i, order) - B_array(grid, grid.dv(h, i, order), order)
        target = grid.dx(h, i, order)
        ab_num += grid.inner(comm - target, comm - target)
        ab_den += grid.inner(target, target)
        comm = grid.dx(Bh, i, order) - B_array(grid, grid.dx(h, i, order), order)
        target = -sum(grid.hessV[i][j] * grid.dv(h, j, order) for j in range(d))
        cb_num += grid.inner(comm - target, comm - target)
        cb_den += grid.inner(target, target)
    tiny = np.finfo(float).tiny
    return {
        "AB_res": float(np.sqrt(ab_num / max(ab_den, tiny))) if ab_den > 0 else float(np.sqrt(ab_num)),
        "CB_res": float(np.sqrt(cb_num / max(cb_den, tiny))) if cb_den > 0 else float(np.sqrt(cb_num)),
    }


# norm aggregates ---------------------------------------------------------------

@dataclass(frozen=True)
class NormAggregates:
    """Seminorms ||grad_x^i grad_v^j h|| for i + j <= k + 1 and mixed terms up to order k.

    ``seminorms`` is a (k+2, k+2) array with NaN where i + j > k + 1;
    ``mixed[l]`` holds <grad_x^{l-1} grad_v h, grad_x^l h> for 1 <= l <= k (mixed[0] = 0).
    """

    k: int
    seminorms: np.ndarray
    mixed: np.ndarray

    @property
    def Z(self):
        k, s = self.k, self.seminorms
        z2 = sum(s[i, l - i] ** 2 for l in range(1, k) for i in range(l + 1))
        z2 += sum(s[l, k - l] ** 2 for l in range(k))
        return float(np.sqrt(z2))

    @property
    def W_x(self):
        return float(self.seminorms[self.k, 0])

    @property
    def W(self):
        """(W_x, W_0, ..., W_k) with W_l = ||grad_x^l grad_v^{k+1-l} h||."""
        k = self.k
        return np.array([self.W_x] + [self.seminorms[l, k + 1 - l] for l in range(k + 1)])

    def dot_seminorm_sq(self, l):
        return float(sum(self.seminorms[i, l - i] ** 2 for i in range(l + 1)))

    def to_dict(self):
        return {
            "k": self.k,
            "seminorms": [[None if not np.isfinite(x) else float(x) for x in row] for row in self.seminorms],
            "mixed": [float(x) for x in self.mixed],
            "Z": self.Z,
            "W": [float(x) for x in self.W],
        }


class DerivativeCache:
    """Memoized partial derivatives D_x^alpha D_v^beta of one array."""

    def __init__(self, grid, values, order=None):
        self.grid = grid
        self.order = order
        self._store = {((0,) * grid.d, (0,) * grid.d): np.asarray(values, dtype=float)}

    def get(self, alpha, beta):
        alpha, beta = tuple(alpha), tuple(beta)
        key = (alpha, beta)
        if key in self._store:
            return self._store[key]
        # peel one derivative, v first so x-derivatives are shared across v-orders
        for j in range(self.grid.d):
            if beta[j] > 0:
                b = list(beta)
                b[j] -= 1
                out = self.grid.dv(self.get(alpha, b), j, self.order)
                break
        else:
            for j in range(self.grid.d):
                if alpha[j] > 0:
                    a = list(alpha)
                    a[j] -= 1
                    out = self.grid.dx(self.get(a, beta), j, self.order)
                    break
        self._store[key] = out
        return out

    def seminorm_sq(self, i, j):
        g = self.grid
        total = 0.0
        for alpha, ma in multi_indices(i, g.d):
            for beta, mb in multi_indices(j, g.d):
                f = self.get(alpha, beta)
                total += ma * mb * g.inner(f, f)
        return total

    def mixed(self, l):
        g = self.grid
        total = 0.0
        for alpha, ma in multi_indices(l - 1, g.d):
            for j in range(g.d):
                e = [0] * g.d
                e[j] = 1
                a1 = tuple(a + b for a, b in zip(alpha, e))
                total += ma * g.inner(self.get(alpha, e), self.get(a1, (0,) * g.d))
        return total


def _check_capacity(grid, total_order, order):
    p = order or grid.order
    n = min(grid.n_x, grid.n_v)
    if total_order > 0 and n < 4 * (p + 1):
        raise FeasibilityError(f"{total_order} stacked derivatives exceed the stencil capacity of this grid")


def compute_norm_aggregates(h: GridFunction, k: int, order=None, cache=None) -> NormAggregates:
    if k < 0:
        raise FeasibilityError("k must be non-negative")
    _check_capacity(h.grid, k + 1, order)
    cache = cache or DerivativeCache(h.grid, h.values, order)
    sem = np.full((k + 2, k + 2), np.nan)
    for tot in range(k + 2):
        for i in range(tot + 1):
            sem[i, tot - i] = np.sqrt(max(cache.seminorm_sq(i, tot - i), 0.0))
    mixed = np.zeros(k + 1)
    for l in range(1, k + 1):
        mixed[l] = cache.mixed(l)
    return NormAggregates(k, sem, mixed)


# dissipation identities (d = 1) -----------------------------------------------

def _require_1d(grid, k):
    if grid.d != 1:
        raise FeasibilityError("dissipation identities are implemented for d = 1")
    if k > 3:
        raise FeasibilityError("k <= 3 for grid feasibility")


def dissipation_terms(h: GridFunction, V=None, k=1, m1=0, order=None, caches=None) -> dict:
    """Direct inner products and closed forms for T^A, T^B (at (m1, k-m1)) and T_mix^A, T_mix^B.

    Relative errors are measured against the Cauchy-Schwarz scale of each
    inner product, ||D(X h)|| ||D h||, which bounds the quantity itself.
    """
    _check_potential(h, V)
    grid = h.grid
    _require_1d(grid, k)
    if not 0 <= m1 <= k:
        raise FeasibilityError("need 0 <= m1 <= k")
    m2 = k - m1
    if caches is None:
        caches = _dissipation_caches(h, order)
    ch, cA, cB = caches
    Vpp = grid.hessV[0][0]
    D = lambda c, i, j: c.get((i,), (j,))
    ip = grid.inner
    nrm = grid.norm

    g = D(ch, m1, m2)
    TA_dir = ip(D(cA, m1, m2), g)
    TA_cf = ip(D(ch, m1, m2 + 1), D(ch, m1, m2 + 1)) + m2 * ip(g, g)
    TB_dir = ip(D(cB, m1, m2), g)
    TB_cf = m2 * ip(D(ch, m1 + 1, m2 - 1), g) if m2 > 0 else 0.0
    for l in range(1, m1 + 1):
        TB_cf += ip(_dx_n(grid, -Vpp * D(ch, l - 1, m2 + 1), m1 - l, order), g)

    a, b = D(ch, k - 1, 1), D(ch, k, 0)
    TmA_dir = ip(D(cA, k - 1, 1), b) + ip(a, D(cA, k, 0))
    TmA_cf = 2 * ip(D(ch, k - 1, 2), D(ch, k, 1)) + ip(a, b)
    TmB_dir = ip(D(cB, k - 1, 1), b) + ip(a, D(cB, k, 0))
    TmB_cf = ip(b, b)
    for l in range(1, k):
        TmB_cf += ip(_dx_n(grid, -Vpp * D(ch, l - 1, 2), k - l - 1, order), b)
    for l in range(1, k + 1):
        TmB_cf += ip(a, _dx_n(grid, -Vpp * D(ch, l - 1, 1), k - l, order))

    scale = {
        "T_A": nrm(D(cA, m1, m2)) * nrm(g),
        "T_B": nrm(D(cB, m1, m2)) * nrm(g),
        "Tmix_A": nrm(D(cA, k - 1, 1)) * nrm(b) + nrm(a) * nrm(D(cA, k, 0)),
        "Tmix_B": nrm(D(cB, k - 1, 1)) * nrm(b) + nrm(a) * nrm(D(cB, k, 0)),
    }
    direct = {"T_A": TA_dir, "T_B": TB_dir, "Tmix_A": TmA_dir, "Tmix_B": TmB_dir}
    closed = {"T_A": TA_cf, "T_B": TB_cf, "Tmix_A": TmA_cf, "Tmix_B": TmB_cf}
    rel = {}
    for key in direct:
        err = abs(direct[key] - closed[key])
        rel[key] = err / scale[key] if scale[key] > 0 else err
    return {**direct, "direct": direct, "closed_form": closed, "relative_error": rel, "k": k, "m1": m1}


def _dx_n(grid, f, n, order):
    for _ in range(n):
        f = grid.dx(f, 0, order)
    return f


def _dissipation_caches(h, order):
    grid = h.grid
    return (
        DerivativeCache(grid, h.values, order),
        DerivativeCache(grid, AstarA_array(grid, h.values, order), order),
        DerivativeCache(grid, B_array(grid, h.values, order), order),
    )


def verify_lemma32(h: GridFunction, k: int, order=None) -> dict:
    """All dissipation identities at order k; returns the worst relative error."""
    caches = _dissipation_caches(h, order)
    rows = [dissipation_terms(h, None, k, m1, order, caches) for m1 in range(k + 1)]
    worst = max(max(r["relative_error"].values()) for r in rows)
    return {"k": k, "rows": rows, "max_relative_error": worst}


def verify_lemma33(h: GridFunction, V=None, M=1.0, k=1, order=None) -> dict:
    """Slacks LHS - RHS of the Z/W lower bounds for every dissipation term at order k."""
    _check_potential(h, V)
    grid = h.grid
    _require_1d(grid, k)
    caches = _dissipation_caches(h, order)
    norms = compute_norm_aggregates(h, k, order, cache=caches[0])
    Z, Wx = norms.Z, norms.W_x
    W = norms.W[1:]
    rM = float(np.sqrt(M))
    slacks = {}
    rows = [dissipation_terms(h, None, k, i, order, caches) for i in range(k + 1)]
    for i, row in enumerate(rows):
        slacks[f"A_{i}"] = row["T_A"] - W[i] ** 2
        if i == k:
            rhs = -(2 ** (k + 1)) * rM * Z * Wx - k * rM * W[k] * Wx
        else:
            rhs = -k * Z**2 - Z * Wx - 2**i * rM * (2 * Z**2 + Z * W[i])
        slacks[f"B_{i}"] = row["T_B"] - rhs
    row = rows[0]
    slacks["mix_A"] = row["Tmix_A"] - (-2 * W[k - 1] * W[k] - Z * Wx)
    slacks["mix_B"] = row["Tmix_B"] - (
        Wx**2 - 2**k * rM * Z * Wx - (k - 1) * rM * W[k - 1] * Wx - 2**k * rM * Z * (2 * Z + W[k])
    )
    M_needed = _assumption_M(grid, k)
    return {
        "k": k,
        "M": M,
        "slacks": slacks,
        "min_slack": float(min(slacks.values())),
        "M_consistent": None if M_needed is None else bool(M >= M_needed * (1 - 1e-12)),
        "M_required": M_needed,
        "norms": norms,
    }


def _assumption_M(grid, k):
    """Smallest admissible M for potentials with constant Hessian; None when not checkable."""
    pot = grid.potential
    if hasattr(pot, "default_M"):
        return pot.default_M()
    return None


def random_test_functions(grid, n=10, seed=0, degree=2):
    """Random smooth test functions: polynomial in (x, v) times an off-centre Gaussian (d = 1)."""
    if grid.d != 1:
        raise GridError("test functions are generated for d = 1")
    rng = np.random.Generator(np.random.Philox(seed))
    out = []
    for _ in range(n):
        c = rng.normal(size=(degree + 1, degree + 1))
        a, b = rng.uniform(0.1, 0.4, 2)
        x0, v0 = rng.normal(0, 0.5, 2)

        def fn(X, V, c=c, a=a, b=b, x0=x0, v0=v0):
            poly = sum(c[i, j] * X**i * V**j for i in range(degree + 1) for j in range(degree + 1))
            return poly * np.exp(-a * (X - x0) ** 2 - b * (V - v0) ** 2)

        out.append(grid.sample(fn))
    return out
