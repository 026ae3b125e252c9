import math

import numpy as np
import pytest

from hypokit.certificate import ProblemParams, build_herau_certificate, build_hypocoercivity_certificate
from hypokit.exactsolver import fundamental_solution, gaussian_density_ratio, propagate_gaussian
from hypokit.grid import GridFunction
from hypokit.operators import compute_norm_aggregates
from hypokit.pdesolver import (
    KineticFPSolver,
    PDESolverError,
    SolverConfig,
    StabilityError,
    estimate_poincare_constant,
    evolve,
    evolve_iter,
    fit_decay_rate,
    gaussian_datum,
    norm_timeseries,
    rough_datum,
)
from hypokit.potentials import CurieWeiss, Quadratic, double_well_table


def stable_cfg(pot, n=64, L_x=8.0, t_final=0.5, **kw):
    probe = SolverConfig(pot, n, L_x, n, 8.0, dt=1.0, t_final=t_final, enforce_cfl=False)
    dt = t_final / math.ceil(t_final / probe.cfl_limit())
    return SolverConfig(pot, n, L_x, n, 8.0, dt=dt, t_final=t_final, **kw)


@pytest.fixture(scope="module")
def quad_cfg():
    return stable_cfg(Quadratic(1.0))


def test_config_validation():
    with pytest.raises(PDESolverError):
        SolverConfig(Quadratic(1.0), dt=-1.0)
    with pytest.raises(PDESolverError):
        SolverConfig(Quadratic(1.0), n_x=64, n_v=64, dt=0.5)
    with pytest.raises(PDESolverError):
        SolverConfig(Quadratic(1.0), n_x=64, n_v=64, dt=1e-3, velocity_scheme="rk2")


def test_stationarity_of_constants(quad_cfg):
    one = GridFunction(quad_cfg.grid, np.ones(quad_cfg.grid.shape))
    snaps = evolve(one, quad_cfg)
    err = snaps[-1].h.values - 1
    assert quad_cfg.grid.norm(err) / quad_cfg.t_final < 1e-10


def test_discrete_structure(quad_cfg):
    s = KineticFPSolver(quad_cfg)
    rng = np.random.default_rng(0)
    f, g = rng.normal(size=(2,) + quad_cfg.grid.shape)
    # transport is skew and kills phi; velocity propagator is symmetric, contractive, fixes phi
    assert abs(np.sum(f * s.transport(g)) + np.sum(g * s.transport(f))) < 1e-9 * np.abs(f).sum()
    assert np.max(np.abs(s.transport(s.phi))) < 1e-14
    E = s.velocity_matrix(quad_cfg.dt)
    np.testing.assert_allclose(E, E.T, atol=1e-15)
    assert np.max(np.linalg.eigvalsh(E)) <= 1 + 1e-12
    np.testing.assert_allclose(s.phi_v @ E, s.phi_v, atol=1e-14)


@pytest.mark.parametrize("scheme", ["exact", "cn"])
def test_mass_and_l2_monotone(scheme):
    cfg = stable_cfg(Quadratic(1.0), velocity_scheme=scheme)
    h0, _ = rough_datum(cfg, seed=4)
    h0 = h0.with_values(h0.values + 1.0)
    snaps = evolve(h0, cfg)
    mass = np.array([s.h.mass() for s in snaps])
    assert np.max(np.abs(mass - mass[0])) / cfg.t_final < 1e-10
    l2 = np.array([cfg.grid.norm(s.h.values - mass[0]) ** 2 for s in snaps])
    assert np.all(l2[1:] <= l2[:-1] * (1 + 1e-8))


def test_double_well_runs_and_dissipates():
    cfg = stable_cfg(double_well_table(), n=64, L_x=4.0, t_final=0.3)
    h0 = cfg.grid.sample(lambda x, v: 1 + 0.3 * x * v)
    snaps = evolve(h0, cfg)
    assert snaps[-1].h.norm() < h0.norm()


def test_gaussian_datum_tracks_exact_solution():
    cfg = stable_cfg(Quadratic(1.0), n=128, t_final=0.5)
    h0 = gaussian_datum(cfg.grid, (0.5, 0.0), [[0.5, 0.0], [0.0, 0.5]], 1.0)
    last = evolve(h0, cfg)[-1]
    st = propagate_gaussian([0.5, 0.0], np.eye(2) * 0.5, last.t, 1.0)
    X, V = cfg.grid.mesh
    exact = np.broadcast_to(gaussian_density_ratio(st, 1.0, X, V), cfg.grid.shape)
    assert cfg.grid.norm(last.h.values - exact) < 1e-4


def test_record_cadence(quad_cfg):
    cfg = SolverConfig(quad_cfg.potential, 64, 8.0, 64, 8.0, dt=quad_cfg.dt, t_final=quad_cfg.t_final, record_every=5)
    h0 = cfg.grid.sample(lambda x, v: 1 + x * v)
    snaps = list(evolve_iter(h0, cfg))
    assert snaps[0].t == 0.0 and snaps[-1].t == pytest.approx(cfg.t_final)
    assert len(snaps) == 1 + math.ceil(cfg.n_steps / 5)


def test_wrong_grid_rejected(quad_cfg):
    other = stable_cfg(Quadratic(1.0), n=32)
    h0 = other.grid.sample(lambda x, v: 1 + x)
    with pytest.raises(PDESolverError):
        evolve(h0, quad_cfg)


def test_instability_is_reported():
    cfg = SolverConfig(Quadratic(1.0), 64, 8.0, 64, 8.0, dt=0.2, t_final=2.0, enforce_cfl=False, velocity_scheme="cn")
    solver = KineticFPSolver(cfg)
    solver.transport_radius = 0.0  # disable sub-stepping so RK4 leaves its stability region
    h0 = cfg.grid.sample(lambda x, v: 1 + np.sin(3 * x) * v)
    with pytest.raises(StabilityError):
        list(evolve_iter(h0, cfg, solver))


def test_norm_report_constant_data(quad_cfg):
    one = GridFunction(quad_cfg.grid, np.full(quad_cfg.grid.shape, 2.0))
    p = ProblemParams.make(1, 1, 1)
    rep = norm_timeseries(evolve(one, quad_cfg), 1, build_hypocoercivity_certificate(p), build_herau_certificate(p))
    assert rep.twisted[0] == pytest.approx(4.0)
    assert math.isnan(rep.fitted_decay_rate) and rep.flags["constant_data"]


def test_fit_decay_rate_exact_exponential():
    t = np.linspace(0, 4, 41)
    assert fit_decay_rate(t, 3 * np.exp(-0.7 * t)) == pytest.approx(0.7)
    assert math.isnan(fit_decay_rate(t, np.zeros_like(t)))


def test_poincare_estimates():
    assert estimate_poincare_constant(Quadratic(2.0)) == pytest.approx(0.25, rel=1e-4)
    dw = estimate_poincare_constant(CurieWeiss(1.0, 0.0, 1), L=6.0)
    assert estimate_poincare_constant(double_well_table(), L=6.0) == pytest.approx(dw, rel=1e-4)


@pytest.mark.slow
def test_twisted_gronwall_after_transient():
    cfg = stable_cfg(Quadratic(1.0), n=96, t_final=3.0, record_every=10)
    h0 = cfg.grid.sample(lambda x, v: 1 + 0.5 * np.sin(x) * (1 + v))
    for k in (1, 2):
        p = ProblemParams.make(k, 1, 1)
        hyp = build_hypocoercivity_certificate(p)
        rep = norm_timeseries(evolve(h0, cfg), k, hyp, build_herau_certificate(p))
        lam2 = 2 * float(hyp.lambda_final)
        sel = np.nonzero(rep.times >= 0.1)[0]
        tw = rep.twisted_centered
        for a, b in zip(sel[:-1], sel[1:]):
            assert tw[b] <= math.exp(-lam2 * (rep.times[b] - rep.times[a])) * tw[a] * (1 + 1e-3)


@pytest.mark.slow
def test_grid_run_slope_crosscheck():
    # datum G_s (fundamental solution at time s) run for time s; the x-width of G_s is ~ s^{3/2},
    # so the window sits where a 192^2 grid still resolves it
    ss = np.geomspace(0.2, 0.5, 6)
    ys = {(1, 0): [], (1, 1): []}
    for s in ss:
        cfg = stable_cfg(Quadratic(1.0), n=192, L_x=4.0, t_final=float(s), record_every=10**9)
        X, V = cfg.grid.mesh
        h0 = GridFunction(cfg.grid, np.broadcast_to(gaussian_density_ratio(fundamental_solution(s, 1.0), 1.0, X, V), cfg.grid.shape))
        agg = compute_norm_aggregates(evolve(h0, cfg)[-1].h, 1)
        for k, l in ys:
            ys[(k, l)].append(agg.seminorms[l, k - l] / h0.norm())
    for (k, l), y in ys.items():
        slope = np.polyfit(np.log(ss), np.log(y), 1)[0]
        assert abs(slope + (k / 2 + l)) <= 0.2, ((k, l), slope)
