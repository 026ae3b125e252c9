"""Time stepping of d_t h + L h = 0 on a one-dimensional phase-space grid.

Strang splitting: half step of the transport B, full step of the velocity
Ornstein-Uhlenbeck part A*A, half step of B.

The solver state is u = phi * h with phi = sqrt(rho), rho = e^{-V(x) - v^2/2}
(uniform node weights), so the Euclidean norm of u is the discrete L^2(mu)
norm of h.

* Transport.  Conjugation by phi leaves B unchanged in form:
  B u = v d_x u - V'(x) d_v u, with analytic coefficients.  Centered
  differences with zero padding give an exactly skew matrix B_d.  A rank-two
  skew correction B_d - (r phi^T - phi r^T)/|phi|^2 with r = B_d phi makes
  phi an exact null vector, so constants are stationary and the mass <phi, u>
  is conserved.  Integrated by RK4 with sub-steps chosen from an a priori
  bound on the spectral radius.
* Velocity.  The operator phi_v^{-1} G^T R G phi_v^{-1}, with a fourth-order
  staggered difference G and R = e^{-v^2/2} at half nodes, is symmetric
  positive semi-definite with null vector phi_v.  It is advanced either
  exactly (eigendecomposition, default) or by Crank-Nicolson.

Neither sub-step increases the norm of u, and both conserve the mass.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from functools import cached_property

import numpy as np
import scipy.sparse as sp
from scipy.linalg import eigh

from .certificate import herau_functional, plain_hk_norm_sq, twisted_hk_inner
from .grid import GridFunction, PhaseGrid, stencil_weights, trapezoid_weights
from .operators import compute_norm_aggregates


class PDESolverError(RuntimeError):
    pass


class StabilityError(PDESolverError):
    pass


def central_matrix(n, h, order):
    """Centered first-difference matrix with zero padding (antisymmetric)."""
    p = order // 2
    c = stencil_weights(tuple(range(-p, p + 1)))
    diags = [c[p + m] * np.ones(n - abs(m)) for m in range(-p, p + 1) if m != 0]
    offs = [m for m in range(-p, p + 1) if m != 0]
    return sp.diags(diags, offs, shape=(n, n), format="csr") / h


def central_symbol_max(order):
    """max over theta of |sum_m c_m sin(m theta)|, the spectral radius of the stencil at h = 1."""
    p = order // 2
    c = stencil_weights(tuple(range(-p, p + 1)))
    th = np.linspace(0, np.pi, 4001)
    return float(np.max(np.abs(sum(c[p + m] * 2 * np.sin(m * th) for m in range(1, p + 1)))))

def staggered_gradient(n, h):
    """Differences at half nodes j+1/2: fourth order inside, second order at the two end halves."""
    G = np.zeros((n - 1, n))
    for m in range(n - 1):
        if 1 <= m <= n - 3:
            G[m, m - 1], G[m, m], G[m, m + 1], G[m, m + 2] = 1, -27, 27, -1
            G[m] /= 24 * h
        else:
            G[m, m], G[m, m + 1] = -1 / h, 1 / h
    return G


@dataclass(frozen=True)
class SolverConfig:
    potential: object
    n_x: int = 256
    L_x: float = 8.0
    n_v: int = 256
    L_v: float = 8.0
    dt: float = 1e-3
    t_final: float = 1.0
    record_every: int = 1
    order: int = 6
    velocity_scheme: str = "exact"
    enforce_cfl: bool = True

    def __post_init__(self):
        if self.dt <= 0 or self.t_final < 0:
            raise PDESolverError("dt must be positive and t_final non-negative")
        if self.record_every < 1:
            raise PDESolverError("record_every must be >= 1")
        if self.velocity_scheme not in ("exact", "cn"):
            raise PDESolverError("velocity_scheme must be 'exact' or 'cn'")
        if self.enforce_cfl and self.dt > self.cfl_limit() * (1 + 1e-12):
            raise PDESolverError(f"dt = {self.dt} exceeds the stability bound {self.cfl_limit():.4g}")

    @cached_property
    def grid(self):
        return PhaseGrid(self.potential, 1, self.n_x, self.L_x, self.n_v, self.L_v, self.order)

    def cfl_limit(self):
        g = self.grid
        gmax = float(np.max(np.abs(g.gradV[0])))
        lim = [g.h_x / g.L_v, g.h_v * g.h_v / 2]
        if gmax > 0:
            lim.append(g.h_v / gmax)
        return min(lim)

    @property
    def n_steps(self):
        return int(round(self.t_final / self.dt))

    def descriptor(self):
        return {
            "potential": self.potential.descriptor(),
            "n_x": self.n_x,
            "L_x": self.L_x,
            "n_v": self.n_v,
            "L_v": self.L_v,
            "dt": self.dt,
            "t_final": self.t_final,
            "record_every": self.record_every,
            "order": self.order,
            "velocity_scheme": self.velocity_scheme,
        }


@dataclass(frozen=True)
class Snapshot:
    t: float
    h: GridFunction

class KineticFPSolver:
    """Discrete operators for one SolverConfig; stepping is done by ``evolve``."""

    def __init__(self, cfg: SolverConfig):
        self.cfg = cfg
        g = self.grid = cfg.grid
        self.phi_x = np.exp(-0.5 * (g.V_x - g.V_x.min()))
        self.phi_v = np.exp(-0.25 * g.v**2)
        self.phi = np.multiply.outer(self.phi_x, self.phi_v)
        self._phi_sq = float(np.sum(self.phi**2))
        self.Dx = central_matrix(g.n_x, g.h_x, cfg.order)
        self.Dv = central_matrix(g.n_v, g.h_v, cfg.order)
        self.DvT = self.Dv.T.tocsr()
        self.vel = g.v.copy()
        self.force = np.asarray(g.gradV[0]).reshape(-1)
        self._r = self._transport_raw(self.phi)
        self._build_velocity()
        self.transport_radius = (
            np.abs(self.vel).max() * central_symbol_max(cfg.order) / g.h_x
            + np.abs(self.force).max() * central_symbol_max(cfg.order) / g.h_v
            + 2 * math.sqrt(float(np.sum(self._r**2)) / self._phi_sq)
        )

    # conversions ---------------------------------------------------------------

    def to_state(self, h):
        return self.phi * h

    def to_h(self, u):
        return u / self.phi

    def norm_sq(self, u):
        return float(np.sum(u * u)) / self._phi_sq

    def mass(self, u):
        return float(np.sum(self.phi * u)) / self._phi_sq

    # transport -------------------------------------------------------------------

    def _transport_raw(self, u):
        return self.vel[None, :] * (self.Dx @ u) - self.force[:, None] * (u @ self.DvT)

    def transport(self, u):
        """Corrected skew transport B_d u in the state variable."""
        r, phi = self._r, self.phi
        return self._transport_raw(u) - (r * np.sum(phi * u) - phi * np.sum(r * u)) / self._phi_sq

    def _transport_step(self, u, tau):
        # RK4 is stable on the imaginary axis up to |z| = 2.8
        n_sub = max(1, math.ceil(tau * self.transport_radius / 2.5))
        for _ in range(n_sub):
            u = self._rk4(u, tau / n_sub)
        return u

    def _rk4(self, u, tau):
        k1 = self.transport(u)
        k2 = self.transport(u - 0.5 * tau * k1)
        k3 = self.transport(u - 0.5 * tau * k2)
        k4 = self.transport(u - tau * k3)
        return u - tau / 6 * (k1 + 2 * k2 + 2 * k3 + k4)

    # velocity --------------------------------------------------------------------

    def _build_velocity(self):
        g = self.grid
        G = staggered_gradient(g.n_v, g.h_v)
        vh = 0.5 * (g.v[1:] + g.v[:-1])
        R = np.exp(-0.5 * vh**2)
        S = G.T @ (R[:, None] * G)
        self.S_sym = S / self.phi_v[:, None] / self.phi_v[None, :]
        self.S_sym = 0.5 * (self.S_sym + self.S_sym.T)
        self._eig = None
        self._velocity_cache = {}

    def velocity_matrix(self, tau):
        """Symmetric propagator for the velocity sub-step, acting on each x fibre."""
        key = float(tau)
        if key in self._velocity_cache:
            return self._velocity_cache[key]
        n = self.grid.n_v
        e = self.phi_v / np.linalg.norm(self.phi_v)
        P = np.eye(n) - np.outer(e, e)
        if self.cfg.velocity_scheme == "exact":
            if self._eig is None:
                lam, U = eigh(self.S_sym)
                self._eig = (np.clip(lam, 0.0, None), U)
            lam, U = self._eig
            E = (U * np.exp(-tau * lam)[None, :]) @ U.T
        else:
            E = np.linalg.solve(np.eye(n) + 0.5 * tau * self.S_sym, np.eye(n) - 0.5 * tau * self.S_sym)
        # keep phi_v as an exact fixed vector and the rest orthogonal to it
        E = np.outer(e, e) + P @ E @ P
        E = 0.5 * (E + E.T)
        self._velocity_cache[key] = E
        return E

    def velocity_step(self, u, tau):
        return u @ self.velocity_matrix(tau)

    # full step -------------------------------------------------------------------

    def step(self, u, dt):
        u = self._transport_step(u, 0.5 * dt)
        u = self.velocity_step(u, dt)
        return self._transport_step(u, 0.5 * dt)


def evolve_iter(h0: GridFunction, cfg: SolverConfig, solver: KineticFPSolver | None = None):
    """Yield Snapshot(t, h) at t = 0 and every ``record_every`` steps."""
    if h0.d != 1 or h0.grid.shape != cfg.grid.shape:
        raise PDESolverError("initial datum must live on the solver grid (d = 1)")
    solver = solver or KineticFPSolver(cfg)
    u = solver.to_state(np.asarray(h0.values, dtype=float))
    yield Snapshot(0.0, GridFunction(cfg.grid, h0.values))
    norm_prev = solver.norm_sq(u)
    for n in range(1, cfg.n_steps + 1):
        u = solver.step(u, cfg.dt)
        norm_now = solver.norm_sq(u)
        if not np.isfinite(norm_now) or norm_now > 100.0 * max(norm_prev, 1e-300):
            raise StabilityError(f"norm growth by more than 10x at step {n} (t = {n * cfg.dt:.4g}); reduce dt")
        norm_prev = norm_now
        if n % cfg.record_every == 0 or n == cfg.n_steps:
            yield Snapshot(n * cfg.dt, GridFunction(cfg.grid, solver.to_h(u)))

def evolve(h0: GridFunction, cfg: SolverConfig):
    return list(evolve_iter(h0, cfg))


# reports ----------------------------------------------------------------------

@dataclass
class NormReport:
    times: np.ndarray
    aggregates: list
    twisted: np.ndarray
    twisted_centered: np.ndarray
    plain_centered: np.ndarray
    l2_centered: np.ndarray
    mass: np.ndarray
    herau: np.ndarray
    fitted_decay_rate: float
    certified_rate: float
    envelope_constant: float
    envelope_ratio: np.ndarray  # plain_centered / (C^2 e^{-2 lambda t} plain_centered[0])
    flags: dict = field(default_factory=dict)

    def rows(self):
        for i, t in enumerate(self.times):
            yield {
                "t": float(t),
                "twisted": float(self.twisted[i]),
                "twisted_centered": float(self.twisted_centered[i]),
                "plain_hk_centered": float(self.plain_centered[i]),
                "l2_centered": float(self.l2_centered[i]),
                "mass": float(self.mass[i]),
                "herau": float(self.herau[i]),
                "envelope_ratio": float(self.envelope_ratio[i]),
            }

    def summary(self):
        return {
            "fitted_decay_rate": self.fitted_decay_rate,
            "certified_rate": self.certified_rate,
            "envelope_constant": self.envelope_constant,
            "n_snapshots": int(len(self.times)),
            "t_final": float(self.times[-1]),
            "flags": self.flags,
        }


def fit_decay_rate(times, values, window="final_half"):
    """Slope of -log(values) against t over the final half of the run."""
    times = np.asarray(times, dtype=float)
    values = np.asarray(values, dtype=float)
    sel = times >= times[0] + 0.5 * (times[-1] - times[0]) if window == "final_half" else np.ones_like(times, bool)
    v = values[sel]
    t = times[sel]
    if v.size < 2 or np.any(v <= 0) or np.max(v) < 1e-280:
        return math.nan
    coef = np.polyfit(t, np.log(v), 1)
    return float(-coef[0])


def norm_timeseries(snapshots, k, hypo_cert, herau_cert) -> NormReport:
    times, aggs, tw, twc, plc, l2c, mass, her = [], [], [], [], [], [], [], []
    for snap in snapshots:
        h = snap.h
        m = h.mass()
        hc = h.with_values(h.values - m)
        agg = compute_norm_aggregates(h, k)
        agg_c = compute_norm_aggregates(hc, k)
        times.append(snap.t)
        aggs.append(agg)
        tw.append(twisted_hk_inner(agg, hypo_cert, k))
        twc.append(twisted_hk_inner(agg_c, hypo_cert, k))
        plc.append(plain_hk_norm_sq(agg_c, k))
        l2c.append(agg_c.seminorms[0, 0] ** 2)
        mass.append(m)
        her.append(herau_functional(snap.t, agg, herau_cert, k) if 0 < snap.t <= 1 else math.nan)
    times = np.asarray(times)
    twc = np.asarray(twc)
    plc = np.asarray(plc)
    flags = {}
    lam = float(hypo_cert.lambda_final)
    C = hypo_cert.envelope_constant
    if plc[0] <= 1e-28:
        rate = math.nan
        flags["constant_data"] = True
        env = np.zeros_like(plc)
    else:
        rate = fit_decay_rate(times, twc)
        if not np.isfinite(rate):
            flags["fit_failed"] = True
        env = plc / (C * C * np.exp(-2 * lam * times) * plc[0])
    return NormReport(
        times=times,
        aggregates=aggs,
        twisted=np.asarray(tw),
        twisted_centered=twc,
        plain_centered=plc,
        l2_centered=np.asarray(l2c),
        mass=np.asarray(mass),
        herau=np.asarray(her),
        fitted_decay_rate=rate,
        certified_rate=2 * lam,
        envelope_constant=C,
        envelope_ratio=env,
        flags=flags,
    )


# initial data and helpers -------------------------------------------------------

def gaussian_datum(grid: PhaseGrid, mean, cov, omega0):
    """h_0 = p_0 / rho_mu for a Gaussian law p_0 = N(mean, cov) (quadratic potential)."""
    from .exactsolver import GaussianState, gaussian_density_ratio

    st = GaussianState(0.0, np.asarray(mean, float), (cov[0][0], cov[0][1], cov[1][1]))
    X, V = grid.mesh
    return GridFunction(grid, gaussian_density_ratio(st, omega0, X, V) * np.ones(grid.shape))


def rough_datum(cfg: SolverConfig, seed=0, amplitude=1.0, smoothing_dt=None):
    """Bounded uniform noise, projected to mean zero, then one velocity-diffusion sub-step."""
    grid = cfg.grid
    rng = np.random.Generator(np.random.Philox(seed))
    h = rng.uniform(-amplitude, amplitude, size=grid.shape)
    solver = KineticFPSolver(cfg)
    u = solver.to_state(h)
    u -= solver.mass(u) * solver.phi
    u = solver.velocity_step(u, cfg.dt if smoothing_dt is None else smoothing_dt)
    return GridFunction(grid, solver.to_h(u)), solver


def estimate_poincare_constant(potential, L=8.0, n=2001):
    """kappa_hat = 1 / (spectral gap) of the weighted Laplacian for e^{-V} on [-L, L] (1D)."""
    x = np.linspace(-L, L, n)
    h = x[1] - x[0]
    V = potential.value(x)
    V = V - V.min()
    w = trapezoid_weights(n) * np.exp(-V) * h
    xh = 0.5 * (x[1:] + x[:-1])
    Vh = potential.value(xh) - potential.value(x).min()
    G = (np.eye(n, k=1) - np.eye(n))[:-1] / h
    K = G.T @ ((np.exp(-Vh) * h)[:, None] * G)
    lam = eigh(K, np.diag(w), eigvals_only=True, subset_by_index=[0, 1])
    return float(1.0 / lam[1])
