"""Closed-form Gaussian solutions for quadratic and zero potentials.

For V(x) = omega0^2 |x|^2 / 2 the process (X, Y) solving
dX = Y dt, dY = -Y dt - omega0^2 X dt + sqrt(2) dB is Gaussian with drift
matrix Xi = [[0, 1], [-omega0^2, -1]] acting blockwise on each coordinate.
The fundamental solution started from a point has covariance Gamma(t) (x) I_d
and its density relative to mu is the G whose weighted Sobolev seminorms are
evaluated here.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import mpmath
import numpy as np
from numpy.polynomial import hermite_e
from numpy.polynomial import polynomial as P2
from scipy.linalg import expm

from .grid import multi_indices

GH_NODES = 128
SERIES_CUTOFF = 1e-6
MP_DPS = 40


class ExactSolverError(ValueError):
    pass


@dataclass(frozen=True)
class GaussianState:
    """Gaussian law with covariance [[g11, g12], [g12, g22]] (x) I_d."""

    t: float
    mean: np.ndarray  # (2d,): x-block then v-block
    cov_blocks: tuple  # (g11, g12, g22)
    d: int = 1

    def __post_init__(self):
        m = np.asarray(self.mean, dtype=float).reshape(-1)
        if m.size != 2 * self.d:
            raise ExactSolverError("mean must have length 2d")
        object.__setattr__(self, "mean", m)
        object.__setattr__(self, "cov_blocks", tuple(float(c) for c in self.cov_blocks))

    @property
    def g11(self):
        return self.cov_blocks[0]

    @property
    def g12(self):
        return self.cov_blocks[1]

    @property
    def g22(self):
        return self.cov_blocks[2]

    @property
    def block(self):
        return np.array([[self.g11, self.g12], [self.g12, self.g22]])

    @property
    def covariance(self):
        return np.kron(self.block, np.eye(self.d))

    def is_positive_definite(self):
        return bool(np.linalg.eigvalsh(self.block)[0] > 0)


def drift_matrix(omega0):
    return np.array([[0.0, 1.0], [-(omega0**2), -1.0]])


@dataclass(frozen=True)
class SpectralData:
    omega0: float
    lambda1: complex = field(init=False)
    lambda2: complex = field(init=False)
    xi1: tuple = field(init=False)
    xi2: tuple = field(init=False)
    alpha1: complex = field(init=False)
    alpha2: complex = field(init=False)

    def __post_init__(self):
        w = float(self.omega0)
        if not w > 0:
            raise ExactSolverError("omega0 must be positive; use kolmogorov_covariance for zero potential")
        if abs(1 - 4 * w * w) < 1e-10:
            raise ExactSolverError(
                "omega0 = 1/2 gives a double eigenvalue of the drift matrix (Jordan block); not implemented"
            )
        disc = mpmath.sqrt(mpmath.mpc(1 - 4 * mpmath.mpf(w) ** 2))
        with mpmath.workdps(MP_DPS):
            l1 = (-1 + disc) / 2
            l2 = (-1 - disc) / 2
            a1 = 1 / (l1 - l2)
        object.__setattr__(self, "lambda1", complex(l1))
        object.__setattr__(self, "lambda2", complex(l2))
        object.__setattr__(self, "xi1", (1.0 + 0j, complex(l1)))
        object.__setattr__(self, "xi2", (1.0 + 0j, complex(l2)))
        object.__setattr__(self, "alpha1", complex(a1))
        object.__setattr__(self, "alpha2", complex(-a1))

    def reconstruction_residual(self, n_max=2):
        """max_n |Xi^n (0,1) - sum_k lambda_k^n alpha_k xi_k| for n <= n_max."""
        Xi = drift_matrix(self.omega0)
        e = np.array([0.0, 1.0])
        worst = 0.0
        for n in range(n_max + 1):
            lhs = np.linalg.matrix_power(Xi, n) @ e
            rhs = sum(
                lam**n * a * np.array(xi)
                for lam, a, xi in ((self.lambda1, self.alpha1, self.xi1), (self.lambda2, self.alpha2, self.xi2))
            )
            worst = max(worst, float(np.max(np.abs(lhs - rhs))))
        return worst


def _kernel(z, t):
    """(e^{z t} - 1) / z with a Taylor series when |z| t is tiny."""
    if abs(z) * t < SERIES_CUTOFF:
        return t * mpmath.fsum((z * t) ** n / mpmath.factorial(n + 1) for n in range(6))
    return mpmath.expm1(z * t) / z


def quadratic_covariance(t, spec: SpectralData, d=1) -> GaussianState:
    if t < 0:
        raise ExactSolverError("t must be non-negative")
    with mpmath.workdps(MP_DPS):
        w = mpmath.mpf(spec.omega0)
        disc = mpmath.sqrt(mpmath.mpc(1 - 4 * w * w))
        lam = [(-1 + disc) / 2, (-1 - disc) / 2]
        alpha = [1 / (lam[0] - lam[1]), -1 / (lam[0] - lam[1])]
        xi = [[1, lam[0]], [1, lam[1]]]
        tt = mpmath.mpf(t)
        g = {}
        for i, j in ((0, 0), (0, 1), (1, 1)):
            acc = mpmath.mpc(0)
            for a in range(2):
                for b in range(2):
                    acc += alpha[a] * alpha[b] * xi[a][i] * xi[b][j] * _kernel(lam[a] + lam[b], tt)
            g[(i, j)] = 2 * acc
        scale = max(1.0, max(abs(float(mpmath.re(v))) for v in g.values()))
        imag = max(abs(float(mpmath.im(v))) for v in g.values())
        if imag > 1e-12 * scale:
            raise ExactSolverError(f"imaginary residue {imag:.3e} in covariance")
        blocks = tuple(float(mpmath.re(g[key])) for key in ((0, 0), (0, 1), (1, 1)))
    return GaussianState(float(t), np.zeros(2 * d), blocks, d)


def kolmogorov_covariance(t, theta=1.0, x0=0.0, v0=0.0, eta=0.0, d=1) -> GaussianState:
    """Zero potential, dX = Y dt, dY = eta dt + sqrt(2 theta) dB."""
    if not theta > 0:
        raise ExactSolverError("theta must be positive")
    if t < 0:
        raise ExactSolverError("t must be non-negative")
    x0 = np.broadcast_to(np.asarray(x0, dtype=float), (d,))
    v0 = np.broadcast_to(np.asarray(v0, dtype=float), (d,))
    eta = np.broadcast_to(np.asarray(eta, dtype=float), (d,))
    mean = np.concatenate([x0 + v0 * t + 0.5 * eta * t * t, v0 + eta * t])
    return GaussianState(float(t), mean, (2 * theta * t**3 / 3, theta * t**2, 2 * theta * t), d)


def _lyapunov_rhs(g, w2):
    g11, g12, g22 = g
    return (2 * g12, g22 - w2 * g11 - g12, -2 * w2 * g12 - 2 * g22 + 2)


def covariance_ode_oracle(t, omega0, dt=1e-4, d=1) -> GaussianState:
    """RK4 integration of dGamma/dt = Xi Gamma + Gamma Xi^T + 2 diag(0, 1) from Gamma(0) = 0."""
    if dt > 1e-3:
        raise ExactSolverError("dt must be <= 1e-3")
    return lyapunov_rk4_path([t], omega0, dt, d)[0]


def lyapunov_rk4_path(times, omega0, dt=1e-4, d=1):
    times = np.asarray(times, dtype=float)
    if np.any(times < 0):
        raise ExactSolverError("times must be non-negative")
    w2 = float(omega0) ** 2
    order = np.argsort(times)
    out = [None] * len(times)
    g = (0.0, 0.0, 0.0)
    now = 0.0
    for idx in order:
        target = times[idx]
        n = int(np.ceil((target - now) / dt - 1e-12))
        h = (target - now) / n if n > 0 else 0.0
        for _ in range(n):
            k1 = _lyapunov_rhs(g, w2)
            k2 = _lyapunov_rhs(tuple(a + 0.5 * h * b for a, b in zip(g, k1)), w2)
            k3 = _lyapunov_rhs(tuple(a + 0.5 * h * b for a, b in zip(g, k2)), w2)
            k4 = _lyapunov_rhs(tuple(a + h * b for a, b in zip(g, k3)), w2)
            g = tuple(a + h / 6 * (b1 + 2 * b2 + 2 * b3 + b4) for a, b1, b2, b3, b4 in zip(g, k1, k2, k3, k4))
        now = target
        out[idx] = GaussianState(float(target), np.zeros(2 * d), g, d)
    return out


def propagate_gaussian(mean0, cov0, t, omega0) -> GaussianState:
    """Law at time t of the quadratic-potential process started from N(mean0, cov0), d = 1."""
    E = expm(drift_matrix(omega0) * t)
    fund = quadratic_covariance(t, SpectralData(omega0))
    C = E @ np.asarray(cov0, dtype=float) @ E.T + fund.block
    m = E @ np.asarray(mean0, dtype=float)
    return GaussianState(float(t), m, (C[0, 0], 0.5 * (C[0, 1] + C[1, 0]), C[1, 1]), 1)


def fundamental_solution(t, omega0, d=1) -> GaussianState:
    if omega0 == 0:
        return kolmogorov_covariance(t, 1.0, d=d)
    return quadratic_covariance(t, SpectralData(omega0), d)


# density relative to mu and its seminorms ------------------------------------------

def gaussian_density_ratio(state: GaussianState, omega0, x, v):
    """G(x, v) = p(x, v) / rho_mu(x, v) for d = 1 on arrays x, v."""
    if state.d != 1:
        raise ExactSolverError("pointwise evaluation implemented for d = 1")
    C = state.block
    Ci = np.linalg.inv(C)
    dx = np.asarray(x) - state.mean[0]
    dv = np.asarray(v) - state.mean[1]
    quad = Ci[0, 0] * dx * dx + 2 * Ci[0, 1] * dx * dv + Ci[1, 1] * dv * dv
    logp = -0.5 * quad - np.log(2 * np.pi) - 0.5 * np.log(np.linalg.det(C))
    logrho = np.log(omega0 / (2 * np.pi)) - 0.5 * omega0**2 * np.asarray(x) ** 2 - 0.5 * np.asarray(v) ** 2
    return np.exp(logp - logrho)


def _gh_rule(n=GH_NODES):
    nodes, weights = hermite_e.hermegauss(n)
    return nodes, weights / np.sqrt(2 * np.pi)


def _derivative_poly(Pmat, b, a_x, a_v):
    """Coefficients of the polynomial H with D_x^a_x D_v^a_v e^q = H e^q, grad q = -P z + b."""
    deg = a_x + a_v + 1
    H = np.zeros((deg + 1, deg + 1))
    H[0, 0] = 1.0
    # dq/dx = b0 - P00 x - P01 v ; dq/dv = b1 - P10 x - P11 v
    qx = np.zeros((deg + 1, deg + 1))
    qx[0, 0], qx[1, 0], qx[0, 1] = b[0], -Pmat[0, 0], -Pmat[0, 1]
    qv = np.zeros((deg + 1, deg + 1))
    qv[0, 0], qv[1, 0], qv[0, 1] = b[1], -Pmat[1, 0], -Pmat[1, 1]

    def step(H, axis, q):
        dH = np.zeros_like(H)
        der = P2.polyder(H, axis=axis)
        if axis == 0:
            dH[: der.shape[0], :] += der
        else:
            dH[:, : der.shape[1]] += der
        prod = _poly2_mul(H, q)
        dH += prod[: H.shape[0], : H.shape[1]]
        return dH

    for _ in range(a_x):
        H = step(H, 0, qx)
    for _ in range(a_v):
        H = step(H, 1, qv)
    return H


def _poly2_mul(A, B):
    out = np.zeros((A.shape[0] + B.shape[0] - 1, A.shape[1] + B.shape[1] - 1))
    for i, j in zip(*np.nonzero(B)):
        out[i:i + A.shape[0], j:j + A.shape[1]] += B[i, j] * A
    return out


def _seminorm_sq_1d(block, mean2, omega0, t, a_x, a_v, nodes=GH_NODES):
    """||D_x^a_x D_v^a_v G||^2_{L^2(mu_1)} for one (x, v) coordinate pair, in scaled variables."""
    if t <= 0:
        raise ExactSolverError("t must be positive")
    s = np.array([t**1.5, t**0.5])
    Sinv = np.diag(1 / s)
    Gs = Sinv @ block @ Sinv
    ms = mean2 / s
    Gi = np.linalg.inv(Gs)
    Dt = np.diag([omega0**2 * t**3, t])
    Q = 2 * Gi - Dt
    evals = np.linalg.eigvalsh(Q)
    if evals[0] <= 0:
        raise ExactSolverError(
            "combined exponent of |G|^2 dmu is not negative definite at this time; use the grid PDE solver instead"
        )
    Pm = Gi - Dt
    b = Gi @ ms
    Qi = np.linalg.inv(Q)
    c = Qi @ (2 * Gi @ ms)
    # log of the constant in G~(z') = exp(q(z')) / det S
    logc_rho = np.log(omega0 / (2 * np.pi))
    const = -np.log(2 * np.pi) - 0.5 * np.log(np.linalg.det(Gs)) - logc_rho
    const2 = -ms @ Gi @ ms + 0.5 * c @ Q @ c
    logpref = 2 * const + logc_rho + const2 + np.log(2 * np.pi) - 0.5 * np.log(np.linalg.det(Q))
    H = _derivative_poly(Pm, b, a_x, a_v)
    L = np.linalg.cholesky(Qi)
    xi, w = _gh_rule(nodes)
    X1, X2 = np.meshgrid(xi, xi, indexing="ij")
    W = np.outer(w, w)
    Zx = c[0] + L[0, 0] * X1
    Zv = c[1] + L[1, 0] * X1 + L[1, 1] * X2
    vals = P2.polyval2d(Zx, Zv, H)
    expect = float(np.sum(W * vals * vals))
    # undo scaling: G(z) = G~(S^{-1} z)/det S, derivatives pick up s^{-a}, measure gives det S
    log_scale = -2 * (a_x * np.log(s[0]) + a_v * np.log(s[1])) - np.log(s[0] * s[1])
    return expect * np.exp(logpref + log_scale)


def gaussian_hk_seminorm(state: GaussianState, omega0, k, l, nodes=GH_NODES) -> float:
    """||grad_x^l grad_v^{k-l} G(t)||_{L^2(mu)} for the Gaussian state relative to mu (Hilbert-Schmidt)."""
    if not 0 <= l <= k:
        raise ExactSolverError("need 0 <= l <= k")
    if not omega0 > 0:
        raise ExactSolverError("omega0 must be positive for a finite reference measure")
    d = state.d
    block = state.block
    means = [np.array([state.mean[c], state.mean[d + c]]) for c in range(d)]
    cache = {}

    def one(c, ax, av):
        key = (c, ax, av)
        if key not in cache:
            cache[key] = _seminorm_sq_1d(block, means[c], omega0, state.t, ax, av, nodes)
        return cache[key]

    total = 0.0
    for alpha, ma in multi_indices(l, d):
        for beta, mb in multi_indices(k - l, d):
            prod = 1.0
            for c in range(d):
                prod *= one(c, alpha[c], beta[c])
            total += ma * mb * prod
    return float(np.sqrt(total))


def scaled_limit_sequence(omega0, k, l, ts, d=1):
    """t^{2d+3l+(k-l)} ||grad_x^l grad_v^{k-l} G_t||^2 along the sample times ts."""
    out = []
    for t in ts:
        st = fundamental_solution(t, omega0, d)
        out.append(t ** (2 * d + 3 * l + (k - l)) * gaussian_hk_seminorm(st, omega0, k, l) ** 2)
    return np.array(out)


def sharpness_slope(omega0, k, l, t_window=(1e-3, 1e-2), n_samples=12, normalization="datum") -> dict:
    """Log-log slope of the smoothing estimate along the fundamental solution.

    With ``normalization="datum"`` the L^2 datum is h_0 = G_t itself, so the
    solution at time t is G_{2t} and the fitted quantity is
    ||grad_x^l grad_v^{k-l} G_{2t}|| / ||G_t||, whose exponent is -(k/2 + l).
    ``normalization="raw"`` fits the bare seminorm of G_t, exponent -(d + k/2 + l).
    """
    t_min, t_max = t_window
    if not (0 < t_min < t_max <= 1e-1):
        raise ExactSolverError("t_window must satisfy 0 < t_min < t_max <= 0.1")
    if n_samples < 8:
        raise ExactSolverError("need at least 8 samples")
    ts = np.geomspace(t_min, t_max, n_samples)
    ys = []
    for t in ts:
        if normalization == "datum":
            num = gaussian_hk_seminorm(fundamental_solution(2 * t, omega0), omega0, k, l)
            den = gaussian_hk_seminorm(fundamental_solution(t, omega0), omega0, 0, 0)
            ys.append(num / den)
        elif normalization == "raw":
            ys.append(gaussian_hk_seminorm(fundamental_solution(t, omega0), omega0, k, l))
        else:
            raise ExactSolverError(f"unknown normalization {normalization!r}")
    lx, ly = np.log(ts), np.log(np.asarray(ys))
    A = np.vstack([lx, np.ones_like(lx)]).T
    coef, *_ = np.linalg.lstsq(A, ly, rcond=None)
    resid = ly - A @ coef
    ss_tot = float(np.sum((ly - ly.mean()) ** 2))
    r2 = 1 - float(np.sum(resid**2)) / ss_tot if ss_tot > 0 else 1.0
    return {
        "slope": float(coef[0]),
        "intercept": float(coef[1]),
        "r_squared": r2,
        "expected": -(k / 2 + l),
        "t": ts.tolist(),
        "values": [float(y) for y in ys],
        "normalization": normalization,
    }


def simulate_kolmogorov(t, theta=1.0, n_paths=1_000_000, n_steps=200, seed=0, chunk=250_000):
    """Euler-Maruyama ensemble for dX = Y dt, dY = sqrt(2 theta) dB from the origin.

    The position update uses the trapezoid of the velocity over each step.
    Returns sample (var_x, cov_xv, var_v) and their standard errors.
    """
    rng = np.random.Generator(np.random.Philox(seed))
    dt = t / n_steps
    sums = np.zeros(3)
    sq = np.zeros(3)
    done = 0
    while done < n_paths:
        n = min(chunk, n_paths - done)
        x = np.zeros(n)
        y = np.zeros(n)
        amp = np.sqrt(2 * theta * dt)
        for _ in range(n_steps):
            y_new = y + amp * rng.standard_normal(n)
            x += 0.5 * (y + y_new) * dt
            y = y_new
        stats = np.stack([x * x, x * y, y * y])
        sums += stats.sum(axis=1)
        sq += (stats**2).sum(axis=1)
        done += n
    mean = sums / n_paths
    var = sq / n_paths - mean**2
    return mean, np.sqrt(var / n_paths)
