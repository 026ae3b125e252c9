"""Acceptance suite: one test per criterion, each reporting a PASS/FAIL line.

Run with ``pytest tests/test_acceptance.py -v``; the summary lines are printed
at the end of the session (see conftest.py).  Runtime budgets are part of
each criterion and are checked against wall time.
"""

import math
import time

import numpy as np
import pytest

from hypokit.certificate import (
    ProblemParams,
    TriangularFormInstance,
    build_herau_certificate,
    build_hypocoercivity_certificate,
    check_identities,
    check_triangular_positivity,
)
from hypokit.exactsolver import SpectralData, gaussian_density_ratio, lyapunov_rk4_path, propagate_gaussian, quadratic_covariance, sharpness_slope
from hypokit.grid import PhaseGrid
from hypokit.meanfield import (
    CurieWeissParams,
    EnsembleConfig,
    langevin_simulate,
    mean_field_M,
    poincare_kappa,
    relaxation_estimate,
    weighted_poincare_constants,
)
from hypokit.operators import random_test_functions, verify_lemma32, verify_lemma33
from hypokit.pdesolver import (
    SolverConfig,
    estimate_poincare_constant,
    evolve,
    evolve_iter,
    gaussian_datum,
    norm_timeseries,
    rough_datum,
)
from hypokit.potentials import Quadratic, double_well_table

RESULTS = []


def report(number, name, passed, detail, elapsed, budget):
    ok = bool(passed) and elapsed < budget
    RESULTS.append(f"[{'PASS' if ok else 'FAIL'}] {number:>2}. {name}: {detail} ({elapsed:.1f}s / budget {budget:g}s)")
    assert passed, detail
    assert elapsed < budget, f"runtime {elapsed:.1f}s exceeds {budget}s"


def cfl_config(pot, n, L_x, t_final, **kw):
    probe = SolverConfig(pot, n, L_x, n, 8.0, dt=1.0, t_final=t_final, enforce_cfl=False)
    dt = t_final / math.ceil(t_final / probe.cfl_limit())
    return SolverConfig(pot, n, L_x, n, 8.0, dt=dt, t_final=t_final, **kw)


# double-well test potential: x^4/4 - x^2/2 from a table, M from the single-site bound, kappa estimated
def double_well_setup():
    dw = double_well_table()
    return dw, 4.0, mean_field_M(1.0, 0.0), estimate_poincare_constant(dw, L=6.0)


def test_01_certificate_identities():
    t0 = time.perf_counter()
    bad = []
    for M in (1, 10, 100):
        for k in range(9):
            p = ProblemParams.make(k, M, 1)
            hyp, her = build_hypocoercivity_certificate(p), build_herau_certificate(p)
            for cert in (hyp, her):
                if not check_identities(cert)["all"]:
                    bad.append((type(cert).__name__, k, M))
            if hyp.lambda00 != 1 or her.Lambda0 != 2:
                bad.append(("base", k, M))
    report(1, "certificate identities k<=8, M in {1,10,100}", not bad, f"failures={bad}", time.perf_counter() - t0, 1.0)


def test_02_triangular_positivity():
    t0 = time.perf_counter()
    fixed = [check_triangular_positivity(TriangularFormInstance(1.0, M)) for M in (1.0, 4.0, 100.0)]
    rng = np.random.Generator(np.random.Philox(2))
    a = rng.uniform(0, 1e3, 1000)
    a[a == 0] = 1e-3
    Ms = rng.uniform(1, 1e3, 1000)
    rand = [check_triangular_positivity(TriangularFormInstance(float(x), float(m))) for x, m in zip(a, Ms)]
    worst = min(r["min_eigenvalue"] for r in fixed + rand)
    ok = all(r["passed"] for r in fixed + rand) and worst >= -1e-12
    report(2, "triangular form positivity (3 fixed + 1000 random)", ok, f"min eigenvalue {worst:.3e}", time.perf_counter() - t0, 1.0)


def test_03_covariance_closed_form():
    t0 = time.perf_counter()
    ts = np.linspace(0, 5, 51)
    gap, ratio_dev = 0.0, 0.0
    for w in (0.3, 0.9, 1.0, 2.0):
        spec = SpectralData(w)
        for t, ode in zip(ts, lyapunov_rk4_path(ts, w, dt=1e-3)):
            gap = max(gap, float(np.max(np.abs(np.array(quadratic_covariance(t, spec).cov_blocks) - np.array(ode.cov_blocks)))))
        t = 1e-3
        r = np.array(quadratic_covariance(t, spec).cov_blocks) / np.array([2 * t**3 / 3, t**2, 2 * t])
        ratio_dev = max(ratio_dev, float(np.max(np.abs(r - 1))))
    ok = gap < 1e-8 and ratio_dev < 0.05
    report(3, "closed-form covariance vs RK4", ok, f"max gap {gap:.2e}, short-time ratio deviation {ratio_dev:.2e}", time.perf_counter() - t0, 10.0)


def test_04_sharpness_slopes():
    t0 = time.perf_counter()
    parts, ok = [], True
    for k, l in ((1, 0), (1, 1), (2, 1), (2, 2)):
        res = sharpness_slope(1.0, k, l, t_window=(1e-3, 1e-2))
        ok &= abs(res["slope"] - res["expected"]) <= 0.1 and res["r_squared"] >= 0.999
        parts.append(f"({k},{l}) {res['slope']:.3f} r2={res['r_squared']:.5f}")
    report(4, "smoothing exponents along the fundamental solution", ok, "; ".join(parts), time.perf_counter() - t0, 60.0)


def test_05_dissipation_identities():
    t0 = time.perf_counter()
    worst = 0.0
    for w in (1.0, 2.0):
        g = PhaseGrid(Quadratic(w), n_x=256, n_v=256)
        for h in random_test_functions(g, 10, seed=5):
            for k in (1, 2, 3):
                worst = max(worst, verify_lemma32(h, k)["max_relative_error"])
    report(5, "dissipation identities, 10 functions, k<=3, 256^2", worst <= 1e-5, f"max relative error {worst:.2e}", time.perf_counter() - t0, 120.0)


def test_06_dissipation_lower_bounds():
    t0 = time.perf_counter()
    worst = math.inf
    for w in (1.0, 2.0):
        g = PhaseGrid(Quadratic(w), n_x=256, n_v=256)
        M = max(w**4, 1.0)
        for h in random_test_functions(g, 10, seed=5):
            for k in (1, 2, 3):
                worst = min(worst, verify_lemma33(h, None, M, k)["min_slack"])
    report(6, "dissipation lower bounds with M = max(w^4, 1)", worst >= -1e-5, f"min slack {worst:.3e}", time.perf_counter() - t0, 120.0)


def test_07_herau_monotonicity():
    t0 = time.perf_counter()
    dw, Lx_dw, M_dw, kap_dw = double_well_setup()
    worst, parts = -math.inf, []
    for name, pot, Lx, M, kappa in (("quadratic", Quadratic(1.0), 8.0, 1.0, 1.0), ("double-well", dw, Lx_dw, M_dw, kap_dw)):
        cfg = cfl_config(pot, 128, Lx, 1.0)
        h0, solver = rough_datum(cfg, seed=1)
        snaps = list(evolve_iter(h0, cfg, solver))
        for k in (1, 2):
            p = ProblemParams.make(k, M, kappa)
            rep = norm_timeseries(snaps, k, build_hypocoercivity_certificate(p), build_herau_certificate(p))
            sel = (rep.times > 0) & (rep.times <= 1 + 1e-12)
            F = rep.herau[sel]
            inc = float(np.max(F[1:] / F[:-1] - 1))
            worst = max(worst, inc)
            parts.append(f"{name} k={k} {inc:.2e}")
    report(7, "Herau functional non-increasing on (0,1]", worst <= 1e-6, "max per-step relative increase: " + ", ".join(parts), time.perf_counter() - t0, 300.0)


def test_08_twisted_decay_and_envelope():
    t0 = time.perf_counter()
    dw, Lx_dw, M_dw, kap_dw = double_well_setup()
    ok, parts = True, []
    for name, pot, Lx, M, kappa in (("quadratic", Quadratic(1.0), 8.0, 1.0, 1.0), ("double-well", dw, Lx_dw, M_dw, kap_dw)):
        probe = cfl_config(pot, 128, Lx, 8.0)
        cfg = SolverConfig(pot, 128, Lx, 128, 8.0, dt=probe.dt, t_final=8.0, record_every=max(1, round(0.05 / probe.dt)))
        h0 = cfg.grid.sample(lambda x, v: 1 + 0.5 * np.sin(x) * (1 + v) + 0.3 * (v * v - 1))
        snaps = evolve(h0, cfg)
        for k in (1, 2):
            p = ProblemParams.make(k, M, kappa)
            rep = norm_timeseries(snaps, k, build_hypocoercivity_certificate(p), build_herau_certificate(p))
            env = float(np.max(rep.envelope_ratio[rep.times >= 0.1]))
            good = rep.fitted_decay_rate >= rep.certified_rate and env <= 1.0
            ok &= good
            parts.append(f"{name} k={k} rate {rep.fitted_decay_rate:.3f} >= {rep.certified_rate:.2e}, envelope {env:.2e}")
    report(8, "twisted-norm rate and plain envelope", ok, "; ".join(parts), time.perf_counter() - t0, 600.0)


def test_09_curie_weiss_constants():
    t0 = time.perf_counter()
    M = mean_field_M(1, 1)
    M4p = weighted_poincare_constants(1, 0, C=1)["M4p"]
    mismatch = []
    for beta in np.geomspace(0.05, 100, 40):
        for K in np.geomspace(0.01, 50, 40):
            p = CurieWeissParams(float(beta), float(K), 8)
            if poincare_kappa(p)["valid"] != (p.lambda1 > 0):
                mismatch.append((beta, K))
    ok = M == 6060 and abs(M4p - 16.5) <= 1e-12 and not mismatch
    report(9, "Curie-Weiss constants", ok, f"M(1,1)={M:g}, M4p={M4p!r}, validity mismatches={len(mismatch)}", time.perf_counter() - t0, 1.0)


def test_10_n_independence():
    t0 = time.perf_counter()
    rates = {}
    for N in (8, 16, 32, 64):
        params = CurieWeissParams(0.3, 1.0, N)
        traj = langevin_simulate(params, EnsembleConfig(R=32, dt=params.max_dt(), t_final=800.0, seed=2026, record_every=50))
        est = relaxation_estimate(traj, burn_in=20.0, n_boot=100)
        rates[N] = (est["rate"], est["stderr"], est["flagged"])
    vals = np.array([r[0] for r in rates.values()])
    spread = float(vals.max() / vals.min() - 1)
    ok = np.all(np.isfinite(vals)) and spread <= 0.2 and not any(r[2] for r in rates.values())
    detail = ", ".join(f"N={N}: {r:.3f}+-{s:.3f}" for N, (r, s, _) in rates.items()) + f"; max/min - 1 = {spread:.3f}"
    report(10, "relaxation rate independent of N", ok, detail, time.perf_counter() - t0, 600.0)


def test_11_pde_vs_exact():
    t0 = time.perf_counter()
    cfg = cfl_config(Quadratic(1.0), 256, 8.0, 1.0, record_every=10**9)
    mean, cov = (0.5, 0.0), np.array([[0.5, 0.0], [0.0, 0.5]])
    last = evolve(gaussian_datum(cfg.grid, mean, cov, 1.0), cfg)[-1]
    st = propagate_gaussian(mean, cov, last.t, 1.0)
    X, V = cfg.grid.mesh
    exact = np.broadcast_to(gaussian_density_ratio(st, 1.0, X, V), cfg.grid.shape)
    gap = cfg.grid.norm(last.h.values - exact)
    report(11, "grid solver vs exact Gaussian solution at t=1", gap < 1e-4, f"L2(mu) gap {gap:.2e}", time.perf_counter() - t0, 180.0)


if __name__ == "__main__":
    raise SystemExit(pytest.main([__file__, "-v"]))
