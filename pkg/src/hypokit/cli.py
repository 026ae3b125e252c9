"""Command-line entry point: ``hypokit <subcommand> [flags]``.

Exit codes: 0 success, 1 runtime failure (JSON error object on stderr),
2 invalid flags or parameters.  Every run that gets past flag parsing
writes ``manifest.json`` into its output directory.
"""

from __future__ import annotations

import argparse
import csv
import json
import math
import os
import subprocess
import sys
import time
from importlib import metadata
from pathlib import Path

import numpy as np

from .certificate import (
    CertificateError,
    ProblemParams,
    build_herau_certificate,
    build_hypocoercivity_certificate,
    certificate_to_dict,
)
from .exactsolver import ExactSolverError, SpectralData, fundamental_solution, sharpness_slope
from .grid import GridError, GridFunction, PhaseGrid, write_grid_function
from .meanfield import (
    CurieWeissParams,
    EnsembleConfig,
    MeanFieldError,
    SimulationError,
    langevin_simulate,
    mean_field_M,
    poincare_kappa,
    relaxation_estimate,
    weighted_poincare_constants,
)
from .operators import FeasibilityError, commutator_residuals, random_test_functions, verify_lemma32, verify_lemma33
from .pdesolver import (
    PDESolverError,
    SolverConfig,
    StabilityError,
    estimate_poincare_constant,
    evolve_iter,
    gaussian_datum,
    norm_timeseries,
    rough_datum,
)
from .potentials import CurieWeiss, PotentialError, Quadratic, double_well_table


class UsageError(ValueError):
    pass


PARAM_ERRORS = (UsageError, CertificateError, ExactSolverError, MeanFieldError, PotentialError, PDESolverError, GridError)
RUNTIME_ERRORS = (StabilityError, SimulationError, FeasibilityError)


# helpers ------------------------------------------------------------------------

def _version():
    try:
        return metadata.version("hypokit")
    except metadata.PackageNotFoundError:
        return "unknown"


def _git_describe():
    try:
        res = subprocess.run(
            ["git", "describe", "--always", "--dirty"],
            capture_output=True, text=True, timeout=5, cwd=Path(__file__).resolve().parent,
        )
        return res.stdout.strip() or None
    except (OSError, subprocess.SubprocessError):
        return None


def _jsonable(obj):
    if isinstance(obj, dict):
        return {str(k): _jsonable(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_jsonable(v) for v in obj]
    if isinstance(obj, np.ndarray):
        return _jsonable(obj.tolist())
    if isinstance(obj, (np.floating, float)):
        f = float(obj)
        return f if math.isfinite(f) else None
    if isinstance(obj, (np.integer,)):
        return int(obj)
    if isinstance(obj, np.bool_):
        return bool(obj)
    return obj


class Run:
    """Collects artifacts of one invocation and writes the manifest."""

    def __init__(self, args):
        self.args = args
        self.out = Path(args.out)
        self.out.mkdir(parents=True, exist_ok=True)
        self.artifacts = []
        self.t0 = time.perf_counter()

    def path(self, name):
        p = self.out / name
        self.artifacts.append(str(p))
        return p

    def write_json(self, name, obj):
        with open(self.path(name), "w") as fh:
            json.dump(_jsonable(obj), fh, indent=2, sort_keys=False)
            fh.write("\n")

    def write_csv(self, name, header, rows):
        with open(self.path(name), "w", newline="") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(header)
            for r in rows:
                w.writerow([repr(float(x)) if isinstance(x, (float, np.floating)) else x for x in r])

    def manifest(self, status, error=None):
        params = {k: v for k, v in vars(self.args).items() if k not in ("func",)}
        doc = {
            "subcommand": self.args.command,
            "parameters": params,
            "artifacts": self.artifacts + [str(self.out / "manifest.json")],
            "version": _version(),
            "git_describe": _git_describe(),
            "wall_time": time.perf_counter() - self.t0,
            "status": status,
            "threads": os.environ.get("HYPOKIT_THREADS"),
            "rng": "numpy Philox counter-based generator; streams from SeedSequence([seed, replica])",
        }
        if error is not None:
            doc["error"] = error
        with open(self.out / "manifest.json", "w") as fh:
            json.dump(_jsonable(doc), fh, indent=2)
            fh.write("\n")


def _plot(path, series, xlabel, ylabel, logx=False, logy=True, title=None):
    import matplotlib

    matplotlib.use("Agg")
    import matplotlib.pyplot as plt

    fig, ax = plt.subplots(figsize=(6, 4))
    for label, x, y in series:
        ax.plot(x, y, marker=".", label=label)
    if logx:
        ax.set_xscale("log")
    if logy:
        ax.set_yscale("log")
    ax.set_xlabel(xlabel)
    ax.set_ylabel(ylabel)
    if title:
        ax.set_title(title)
    ax.legend()
    fig.tight_layout()
    fig.savefig(path, format="svg")
    plt.close(fig)


def _positive(name):
    def conv(s):
        try:
            val = float(s)
        except ValueError as exc:
            raise argparse.ArgumentTypeError(f"{name} must be a number") from exc
        if not (val > 0 and math.isfinite(val)):
            raise argparse.ArgumentTypeError(f"{name} must be positive")
        return val

    return conv


def _finite(s):
    try:
        val = float(s)
    except ValueError as exc:
        raise argparse.ArgumentTypeError("expected a number") from exc
    if not math.isfinite(val):
        raise argparse.ArgumentTypeError("expected a finite number")
    return val


def _nonneg_int(s):
    try:
        val = int(s)
    except ValueError as exc:
        raise argparse.ArgumentTypeError("expected an integer") from exc
    if val < 0:
        raise argparse.ArgumentTypeError("expected a non-negative integer")
    return val


def _pos_int(s):
    val = _nonneg_int(s)
    if val < 1:
        raise argparse.ArgumentTypeError("expected a positive integer")
    return val


# subcommands ----------------------------------------------------------------------

def cmd_certificate(args, run):
    params = ProblemParams.make(args.k, args.big_m, args.kappa)
    hypo = build_hypocoercivity_certificate(params)
    herau = build_herau_certificate(params)
    run.write_json("hypocoercivity_certificate.json", certificate_to_dict(hypo))
    run.write_json("herau_certificate.json", certificate_to_dict(herau))
    summary = {
        "k": args.k,
        "M": args.big_m,
        "kappa": args.kappa,
        "lambda_k0": float(hypo.lambda_k0),
        "lambda_final": None if hypo.lambda_final is None else float(hypo.lambda_final),
        "Lambda_k": float(herau.Lambda_k),
    }
    print(json.dumps(_jsonable(summary)))
    return 0


DEFAULT_PAIRS = "1,0;1,1;2,1;2,2"


def _parse_pairs(text):
    pairs = []
    for item in text.split(";"):
        item = item.strip()
        if not item:
            continue
        try:
            k, l = (int(s) for s in item.split(","))
        except ValueError as exc:
            raise UsageError(f"bad (k,l) pair {item!r}; expected 'k,l;k,l'") from exc
        if not (k >= 0 and 0 <= l <= k):
            raise UsageError(f"need 0 <= l <= k, got ({k},{l})")
        pairs.append((k, l))
    return pairs


def cmd_exact(args, run):
    if args.omega0 == 0:
        raise UsageError("omega0 = 0 is the free (Kolmogorov) case; the quadratic solver needs omega0 > 0")
    if abs(1 - 4 * args.omega0**2) < 1e-10:
        raise UsageError("omega0 = 1/2 makes the drift matrix a Jordan block (repeated eigenvalue); excluded")
    SpectralData(args.omega0)
    ts = np.linspace(0.0, args.t_max, args.n_times)
    rows = []
    for t in ts:
        st = fundamental_solution(float(t), args.omega0)
        rows.append((float(t), *st.cov_blocks))
    run.write_csv("covariance.csv", ["t", "g11", "g12", "g22"], rows)
    report = {"omega0": args.omega0, "covariance_rows": len(rows)}
    pairs = _parse_pairs(args.pairs) if args.sharpness else []
    fits = []
    for k, l in pairs:
        res = sharpness_slope(args.omega0, k, l, (args.t_min, args.t_max_fit), args.n_samples)
        fits.append(res)
        report.setdefault("sharpness", []).append(
            {kk: res[kk] for kk in ("slope", "intercept", "r_squared", "expected", "normalization")} | {"k": k, "l": l}
        )
    if fits:
        run.write_csv(
            "sharpness.csv",
            ["k", "l", "t", "seminorm_ratio"],
            [(k, l, float(t), float(v)) for (k, l), r in zip(pairs, fits) for t, v in zip(r["t"], r["values"])],
        )
        if args.plot:
            _plot(
                run.path("sharpness.svg"),
                [(f"(k,l)=({k},{l})", r["t"], r["values"]) for (k, l), r in zip(pairs, fits)],
                "t", "seminorm ratio", logx=True,
            )
    run.write_json("exact_report.json", report)
    print(json.dumps(_jsonable(report)))
    return 0


def _pde_potential(args):
    if args.potential == "quadratic":
        pot = Quadratic(args.omega0)
        L_x = args.L_x or 8.0
        M = args.big_m or pot.default_M()
        kappa = args.kappa or 1.0 / args.omega0**2
        kappa_hat = estimate_poincare_constant(pot, L=max(L_x, 8.0))
    else:
        pot = double_well_table(beta=args.beta, L=6.0)
        L_x = args.L_x or 4.0
        M = args.big_m or mean_field_M(args.beta, 0.0)
        kappa_hat = estimate_poincare_constant(pot, L=6.0)
        kappa = args.kappa or kappa_hat
    return pot, L_x, M, kappa, kappa_hat


def cmd_pde(args, run):
    pot, L_x, M, kappa, kappa_hat = _pde_potential(args)
    probe = SolverConfig(pot, args.n_x, L_x, args.n_v, args.L_v, dt=1.0, t_final=args.t_final, enforce_cfl=False)
    dt = args.dt
    if dt is None:
        dt = args.t_final / math.ceil(args.t_final / (0.95 * probe.cfl_limit()))
    n_steps = max(1, int(round(args.t_final / dt)))
    record = args.record_every or max(1, n_steps // 100)
    cfg = SolverConfig(
        pot, args.n_x, L_x, args.n_v, args.L_v, dt=dt, t_final=args.t_final,
        record_every=record, velocity_scheme=args.velocity_scheme,
    )
    grid = cfg.grid
    solver = None
    if args.datum == "gaussian":
        if args.potential != "quadratic":
            raise UsageError("the Gaussian datum is defined for the quadratic potential")
        h0 = gaussian_datum(grid, (0.5, 0.0), [[0.5, 0.0], [0.0, 0.5]], args.omega0)
    elif args.datum == "rough":
        h0, solver = rough_datum(cfg, seed=args.seed)
    else:
        h0 = grid.sample(lambda x, v: 1 + 0.5 * np.sin(x) * (1 + v) + 0.3 * (v * v - 1))
    if not h0.is_admissible():
        raise UsageError("initial datum is not admissible on this grid (enlarge L_x/L_v)")
    params = ProblemParams.make(args.k, M, kappa)
    hypo = build_hypocoercivity_certificate(params)
    herau = build_herau_certificate(params)

    def snaps():
        for s in evolve_iter(h0, cfg, solver):
            if args.dump_snapshots:
                write_grid_function(run.path(f"snapshot_t{s.t:.6f}.hkgf"), s.h)
            yield s

    rep = norm_timeseries(snaps(), args.k, hypo, herau)
    rows = list(rep.rows())
    header = list(rows[0].keys())
    run.write_csv("norms.csv", header, [[r[h] for h in header] for r in rows])
    sel = rep.times >= 0.1
    summary = rep.summary() | {
        "potential": pot.descriptor() if args.potential == "quadratic" else {"variant": "doublewell", "beta": args.beta},
        "M": M,
        "kappa": kappa,
        "kappa_hat": kappa_hat,
        "dt": dt,
        "grid": {"n_x": args.n_x, "L_x": L_x, "n_v": args.n_v, "L_v": args.L_v},
        "rate_ok": bool(np.isfinite(rep.fitted_decay_rate) and rep.fitted_decay_rate >= rep.certified_rate),
        "envelope_ok": bool(np.all(rep.envelope_ratio[sel] <= 1.0)),
        "mass_drift": float(np.max(np.abs(rep.mass - rep.mass[0]))),
    }
    run.write_json("summary.json", summary)
    if args.plot:
        _plot(
            run.path("norms.svg"),
            [("twisted (centred)", rep.times, np.maximum(rep.twisted_centered, 1e-300)),
             ("plain H^k (centred)", rep.times, np.maximum(rep.plain_centered, 1e-300))],
            "t", "squared norm",
        )
    print(json.dumps(_jsonable({k: summary[k] for k in ("fitted_decay_rate", "certified_rate", "rate_ok", "envelope_ok")})))
    return 0


def cmd_langevin(args, run):
    params = CurieWeissParams(args.beta, args.coupling, args.particles)
    dt = args.dt or params.max_dt()
    burn_in = args.t_final * 0.1 if args.burn_in is None else args.burn_in
    cfg = EnsembleConfig(R=args.replicas, dt=dt, t_final=args.t_final, seed=args.seed, record_every=args.record_every)
    traj = langevin_simulate(params, cfg, burn_in=burn_in)
    est = relaxation_estimate(traj, burn_in=burn_in, seed=args.seed)
    m = traj.magnetization
    R = m.shape[0]
    rows = zip(traj.times, m.mean(axis=0), m.std(axis=0, ddof=1) / math.sqrt(R) if R > 1 else np.zeros(m.shape[1]), traj.energy.mean(axis=0))
    run.write_csv("magnetization.csv", ["t", "m_mean", "m_sem", "energy_mean"], rows)
    lags = np.arange(est["acf"].size) * est["lag_dt"]
    run.write_csv("acf.csv", ["lag", "acf"], zip(lags, est["acf"]))
    summary = {
        "params": {"beta": args.beta, "K": args.coupling, "N": args.particles, "R": R, "dt": dt, "t_final": args.t_final},
        "relaxation": {k: v for k, v in est.items() if k != "acf"},
        "constants": {
            "M": mean_field_M(args.beta, args.coupling),
            "weighted_poincare": weighted_poincare_constants(args.beta, args.coupling),
            "poincare": poincare_kappa(params),
        },
        "moments": {
            "x2_mean": float(np.mean(traj.moments["x2"])),
            "v2_mean": float(np.mean(traj.moments["v2"])),
        },
    }
    if args.kappa_hat:
        summary["constants"]["single_site_kappa_hat"] = estimate_poincare_constant(CurieWeiss(args.beta, 0.0, 1), L=12.0)
    run.write_json("summary.json", summary)
    if args.plot:
        _plot(run.path("acf.svg"), [("magnetization ACF", lags, np.maximum(est["acf"], 1e-6))], "lag", "ACF")
    print(json.dumps(_jsonable({"rate": est["rate"], "stderr": est["stderr"], "flagged": est["flagged"]})))
    return 0


def cmd_verify_ops(args, run):
    if args.potential == "quadratic":
        pot, L_x = Quadratic(args.omega0), 8.0
        M = args.big_m or pot.default_M()
    else:
        pot, L_x = CurieWeiss(args.beta, 0.0, 1), 4.5
        M = args.big_m or mean_field_M(args.beta, 0.0)
    grid = PhaseGrid(pot, 1, args.n, L_x, args.n, 8.0, args.order)
    tests = random_test_functions(grid, args.n_tests, args.seed)
    ident, slack = 0.0, math.inf
    comm = {"AB_res": 0.0, "CB_res": 0.0}
    for h in tests:
        for k in range(1, args.k + 1):
            ident = max(ident, verify_lemma32(h, k)["max_relative_error"])
            slack = min(slack, verify_lemma33(h, None, M, k)["min_slack"])
        res = commutator_residuals(None, h)
        comm = {key: max(comm[key], float(res[key])) for key in comm}
    report = {
        "potential": pot.descriptor(),
        "k_max": args.k,
        "M": M,
        "n_tests": args.n_tests,
        "grid": grid.descriptor(),
        "identity_max_relative_error": ident,
        "lower_bound_min_slack": slack,
        "commutators": comm,
        "tolerances": {"identity": args.tol, "lower_bound": -args.tol, "commutators": args.tol},
    }
    report["passed"] = bool(ident <= args.tol and slack >= -args.tol and max(comm.values()) <= args.tol)
    run.write_json("verify_ops.json", report)
    print(json.dumps(_jsonable(report)))
    if not report["passed"]:
        raise VerificationFailed("operator verification exceeded tolerance")
    return 0


class VerificationFailed(RuntimeError):
    pass


# parser ------------------------------------------------------------------------------

def build_parser():
    p = argparse.ArgumentParser(prog="hypokit", description="Hypocoercivity certificates, solvers and verification.")
    sub = p.add_subparsers(dest="command", required=True)

    def common(sp, default_out):
        sp.add_argument("--out", default=default_out, help="output directory (default: %(default)s)")

    c = sub.add_parser("certificate", help="build both coefficient certificates")
    c.add_argument("--k", type=_nonneg_int, required=True, help="Sobolev order k >= 0")
    c.add_argument("--big-m", type=_positive("--big-m"), required=True, help="relative-boundedness constant M >= 1")
    c.add_argument("--kappa", type=_positive("--kappa"), default=None, help="Poincare constant (needed for the final rate)")
    common(c, "out/certificate")
    c.set_defaults(func=cmd_certificate)

    e = sub.add_parser("exact", help="closed-form Gaussian solutions for the quadratic potential")
    e.add_argument("--omega0", type=_finite, required=True, help="harmonic frequency (not 0 or 1/2)")
    e.add_argument("--t-max", type=_positive("--t-max"), default=5.0, help="covariance table end time")
    e.add_argument("--n-times", type=_pos_int, default=51, help="rows in the covariance table")
    e.add_argument("--sharpness", action="store_true", help="fit short-time seminorm slopes")
    e.add_argument("--pairs", default=DEFAULT_PAIRS, help="(k,l) pairs as 'k,l;k,l' (default: %(default)s)")
    e.add_argument("--t-min", type=_positive("--t-min"), default=1e-3, help="fit window start")
    e.add_argument("--t-max-fit", type=_positive("--t-max-fit"), default=1e-2, help="fit window end")
    e.add_argument("--n-samples", type=_pos_int, default=12, help="log-spaced sample times in the window")
    e.add_argument("--plot", action="store_true", help="write an SVG log-log plot")
    common(e, "out/exact")
    e.set_defaults(func=cmd_exact)

    d = sub.add_parser("pde", help="evolve the kinetic Fokker-Planck equation on a 1D phase-space grid")
    d.add_argument("--potential", choices=("quadratic", "doublewell"), default="quadratic")
    d.add_argument("--omega0", type=_positive("--omega0"), default=1.0)
    d.add_argument("--beta", type=_positive("--beta"), default=1.0, help="double-well inverse temperature")
    d.add_argument("--k", type=_pos_int, default=1, help="Sobolev order of the reported norms")
    d.add_argument("--t-final", type=_positive("--t-final"), default=1.0)
    d.add_argument("--dt", type=_positive("--dt"), default=None, help="time step (default: 0.95 x stability bound)")
    d.add_argument("--n-x", type=_pos_int, default=128)
    d.add_argument("--n-v", type=_pos_int, default=128)
    d.add_argument("--L-x", type=_positive("--L-x"), default=None, help="x half-width (default 8 quadratic, 4 double-well)")
    d.add_argument("--L-v", type=_positive("--L-v"), default=8.0)
    d.add_argument("--datum", choices=("perturbed", "gaussian", "rough"), default="perturbed")
    d.add_argument("--seed", type=_nonneg_int, default=0)
    d.add_argument("--record-every", type=_pos_int, default=None)
    d.add_argument("--big-m", type=_positive("--big-m"), default=None)
    d.add_argument("--kappa", type=_positive("--kappa"), default=None)
    d.add_argument("--velocity-scheme", choices=("exact", "cn"), default="exact")
    d.add_argument("--dump-snapshots", action="store_true", help="write every snapshot in the binary grid format")
    d.add_argument("--plot", action="store_true")
    common(d, "out/pde")
    d.set_defaults(func=cmd_pde)

    lg = sub.add_parser("langevin", help="Curie-Weiss particle simulation and relaxation rate")
    lg.add_argument("--beta", type=_positive("--beta"), required=True)
    lg.add_argument("--coupling", type=_finite, default=0.0, help="K (ferro > 0, antiferro < 0)")
    lg.add_argument("--particles", type=_pos_int, required=True)
    lg.add_argument("--replicas", type=_pos_int, default=32)
    lg.add_argument("--dt", type=_positive("--dt"), default=None, help="default: the largest admissible step")
    lg.add_argument("--t-final", type=_positive("--t-final"), default=50.0)
    lg.add_argument("--burn-in", type=_finite, default=None, help="default: 10%% of t-final")
    lg.add_argument("--record-every", type=_pos_int, default=50)
    lg.add_argument("--seed", type=_nonneg_int, default=0)
    lg.add_argument("--kappa-hat", action="store_true", help="also report a numerical single-site Poincare constant")
    lg.add_argument("--plot", action="store_true")
    common(lg, "out/langevin")
    lg.set_defaults(func=cmd_langevin)

    v = sub.add_parser("verify-ops", help="numerical checks of commutators and dissipation identities")
    v.add_argument("--k", type=int, choices=(1, 2, 3), default=2)
    v.add_argument("--potential", choices=("quadratic", "doublewell"), default="quadratic")
    v.add_argument("--omega0", type=_positive("--omega0"), default=1.0)
    v.add_argument("--beta", type=_positive("--beta"), default=1.0)
    v.add_argument("--big-m", type=_positive("--big-m"), default=None)
    v.add_argument("--n", type=_pos_int, default=256, help="nodes per axis")
    v.add_argument("--order", type=int, choices=(4, 6, 8), default=6, help="stencil order")
    v.add_argument("--n-tests", type=_pos_int, default=10)
    v.add_argument("--seed", type=_nonneg_int, default=0)
    v.add_argument("--tol", type=_positive("--tol"), default=1e-5)
    common(v, "out/verify-ops")
    v.set_defaults(func=cmd_verify_ops)
    return p


def _thread_cap():
    n = os.environ.get("HYPOKIT_THREADS")
    if not n:
        return None
    try:
        n = int(n)
    except ValueError:
        raise UsageError(f"HYPOKIT_THREADS must be an integer, got {n!r}") from None
    if n < 1:
        raise UsageError("HYPOKIT_THREADS must be >= 1")
    return n


def _limit_threads(n):
    if n is None:
        return None
    from threadpoolctl import threadpool_limits

    return threadpool_limits(limits=n)


def main(argv=None):
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        threads = _thread_cap()
    except UsageError as exc:
        print(f"hypokit: error: {exc}", file=sys.stderr)
        return 2
    limiter = _limit_threads(threads)
    try:
        run = Run(args)
    except OSError as exc:
        print(json.dumps({"error": type(exc).__name__, "message": str(exc)}), file=sys.stderr)
        return 1
    try:
        code = args.func(args, run)
        run.manifest("ok")
        return code
    except RUNTIME_ERRORS + (VerificationFailed,) as exc:
        err = {"error": type(exc).__name__, "message": str(exc)}
        run.manifest("failed", err)
        print(json.dumps(err), file=sys.stderr)
        return 1
    except PARAM_ERRORS as exc:
        run.manifest("invalid", {"error": type(exc).__name__, "message": str(exc)})
        print(f"hypokit {args.command}: error: {exc}", file=sys.stderr)
        return 2
    except Exception as exc:  # noqa: BLE001 - reported as a runtime failure
        err = {"error": type(exc).__name__, "message": str(exc)}
        run.manifest("failed", err)
        print(json.dumps(err), file=sys.stderr)
        return 1
    finally:
        if limiter is not None:
            limiter.restore_original_limits()


if __name__ == "__main__":
    sys.exit(main())
