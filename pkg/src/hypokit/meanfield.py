"""Curie-Weiss constants and underdamped Langevin particle ensembles.

The SDE is dX = Y dt, dY = -Y dt - grad V(X) dt + sqrt(2) dB with unit
friction.  The integrator is BAOAB: half kick, half drift, exact
Ornstein-Uhlenbeck velocity update, half drift, half kick.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from .potentials import CurieWeiss

BLOWUP = 1e3


class MeanFieldError(ValueError):
    pass


class SimulationError(RuntimeError):
    pass


# constants ------------------------------------------------------------------------

@dataclass(frozen=True)
class CurieWeissParams:
    beta: float
    K: float = 0.0
    N: int = 1

    def __post_init__(self):
        if not (self.beta > 0 and math.isfinite(self.beta)):
            raise MeanFieldError("beta must be positive and finite")
        if not math.isfinite(self.K):
            raise MeanFieldError("K must be finite")
        if int(self.N) != self.N or self.N < 1:
            raise MeanFieldError("N must be a positive integer")

    @property
    def lambda1(self):
        return math.sqrt(math.pi / self.beta) * math.exp(self.beta / 4) - self.beta * self.K

    def potential(self):
        return CurieWeiss(self.beta, self.K, int(self.N))

    def max_dt(self):
        return 1e-3 * min(1.0, 1.0 / (self.beta * (1 + abs(self.K))))


def mean_field_M(beta, K):
    """Relative-boundedness constant 2020 (beta^{2/3} + beta^2 + K^4 beta^2)."""
    if not beta > 0:
        raise MeanFieldError("beta must be positive")
    return 2020.0 * (beta ** (2 / 3) + beta**2 + K**4 * beta**2)


def weighted_poincare_constants(beta, K, C=None):
    """Weighted Poincare constants (M4', M4'', M2', M2''); C defaults to beta^{2/3}."""
    if not beta > 0:
        raise MeanFieldError("beta must be positive")
    C = beta ** (2 / 3) if C is None else C
    if not C > 0:
        raise MeanFieldError("C must be positive")
    a = (1.5 + 1.0 / C + 2.0 * K * K) ** 2
    return {
        "M4p": 2 * a + 4 / beta,
        "M4pp": 2 * C / beta**2,
        "M2p": a + 2 / beta + 0.5,
        "M2pp": C / beta**2 + 0.5,
        "C": C,
    }


def lemma_kappa(params: CurieWeissParams):
    """N-dependent value of the interacting-system lemma; None when its bracket is not positive."""
    b, K, N = params.beta, params.K, params.N
    base = math.sqrt(math.pi / b) * math.exp(b / 4)
    denom = base + b * K / N if K < 0 else base - b * (N - 1) * K / N
    return 1.0 / denom if denom > 0 else None


def poincare_kappa(params: CurieWeissParams) -> dict:
    b, K, N = params.beta, params.K, params.N
    out = {"lemma_kappa": lemma_kappa(params)}
    if K > 0:
        lam1 = params.lambda1
        out.update(regime="ferro", lambda1=lam1, valid=lam1 > 0)
        if lam1 > 0:
            out["kappa"] = 1.0 / lam1
        else:
            out["kappa"] = None
            out["message"] = "lambda1 <= 0: phase-transition regime, no Poincare certificate"
    elif K < 0:
        kappa = 0.5 * math.sqrt(b / math.pi) * math.exp(-b / 4)
        threshold_abs = 2 * b**1.5 * abs(K) * math.exp(-b / 4) / math.sqrt(math.pi)
        threshold_lit = 2 * b**1.5 * K * math.exp(-b / 4) / math.sqrt(math.pi)
        out.update(
            regime="antiferro",
            kappa=kappa,
            valid=N >= threshold_abs,
            validity={
                "abs_K_reading": {"threshold": threshold_abs, "valid": N >= threshold_abs},
                "literal_reading": {"threshold": threshold_lit, "valid": N >= threshold_lit},
            },
        )
    else:
        out.update(regime="uncoupled", kappa=out["lemma_kappa"], valid=True)
    return out


def single_site_moment(beta, power=2, L=12.0, n=20001):
    """<x^power> under e^{-beta (x^4/4 - x^2/2)} by trapezoid quadrature."""
    x = np.linspace(-L, L, n)
    w = np.exp(-beta * (x**4 / 4 - x**2 / 2) + beta / 4)
    return float(np.trapezoid(w * x**power, x) / np.trapezoid(w, x))


# simulation ---------------------------------------------------------------------

@dataclass(frozen=True)
class EnsembleConfig:
    R: int = 32
    dt: float = 1e-3
    t_final: float = 100.0
    seed: int = 0
    record_every: int = 50
    chunk_steps: int = 2000

    def __post_init__(self):
        if self.R < 1:
            raise MeanFieldError("need at least one replica")
        if not (self.dt > 0 and self.t_final > 0):
            raise MeanFieldError("dt and t_final must be positive")
        if self.record_every < 1 or self.chunk_steps < 1:
            raise MeanFieldError("record_every and chunk_steps must be >= 1")

    @property
    def n_steps(self):
        return int(round(self.t_final / self.dt))


@dataclass
class Trajectories:
    times: np.ndarray  # (T,)
    magnetization: np.ndarray  # (R, T)
    energy: np.ndarray  # (R, T)
    x_final: np.ndarray  # (R, N)
    v_final: np.ndarray  # (R, N)
    moments: dict = field(default_factory=dict)  # per-replica time averages after burn-in


def baoab_steps(grad, x, v, dt, noise, on_record=None, record_every=1, step0=0):
    """Advance (x, v) through len(noise) BAOAB steps with the given standard normals.

    noise has shape (n_steps,) + x.shape; pass zeros for the noise-free flow.
    ``on_record(step, x, v)`` is called after every ``record_every``-th step.
    """
    c = math.exp(-dt)
    s = math.sqrt(1.0 - c * c)
    f = grad(x)
    for n in range(noise.shape[0]):
        v = v - 0.5 * dt * f
        x = x + 0.5 * dt * v
        v = c * v + s * noise[n]
        x = x + 0.5 * dt * v
        f = grad(x)
        v = v - 0.5 * dt * f
        step = step0 + n + 1
        if not np.all(np.abs(x) < BLOWUP):
            raise SimulationError(f"|x| exceeded {BLOWUP:g} at step {step}; reduce dt")
        if on_record is not None and step % record_every == 0:
            on_record(step, x, v)
    return x, v


def replica_streams(seed, R):
    return [np.random.Generator(np.random.Philox(np.random.SeedSequence([int(seed), r]))) for r in range(R)]


def langevin_simulate(potential, cfg: EnsembleConfig, x0=None, v0=None, burn_in=0.0, check_dt=True) -> Trajectories:
    """Simulate R replicas of the Langevin SDE for ``potential`` (CurieWeissParams or a potential object)."""
    if isinstance(potential, CurieWeissParams):
        if check_dt and cfg.dt > potential.max_dt() * (1 + 1e-12):
            raise MeanFieldError(f"dt = {cfg.dt} exceeds {potential.max_dt():.3g} for these parameters")
        potential = potential.potential()
    N = potential.dim
    R = cfg.R
    streams = replica_streams(cfg.seed, R)
    x = np.zeros((R, N)) if x0 is None else np.broadcast_to(np.asarray(x0, float), (R, N)).copy()
    if v0 is None:
        v = np.stack([g.standard_normal(N) for g in streams])
    else:
        v = np.broadcast_to(np.asarray(v0, float), (R, N)).copy()

    def grad(y):
        return potential.grad(y).reshape(R, N)

    times, mags, ens = [0.0], [x.mean(axis=1)], [potential.value(x).reshape(R) + 0.5 * np.sum(v * v, axis=1)]
    acc = {"x2": np.zeros(R), "v2": np.zeros(R), "n": 0}

    def record(step, xs, vs):
        t = step * cfg.dt
        times.append(t)
        mags.append(xs.mean(axis=1))
        ens.append(potential.value(xs).reshape(R) + 0.5 * np.sum(vs * vs, axis=1))
        if t >= burn_in:
            acc["x2"] += np.mean(xs * xs, axis=1)
            acc["v2"] += np.mean(vs * vs, axis=1)
            acc["n"] += 1

    done = 0
    while done < cfg.n_steps:
        m = min(cfg.chunk_steps, cfg.n_steps - done)
        noise = np.stack([g.standard_normal((m, N)) for g in streams], axis=1)
        x, v = baoab_steps(grad, x, v, cfg.dt, noise, record, cfg.record_every, done)
        done += m
    n = max(acc["n"], 1)
    return Trajectories(
        times=np.asarray(times),
        magnetization=np.stack(mags, axis=1),
        energy=np.stack(ens, axis=1),
        x_final=x,
        v_final=v,
        moments={"x2": acc["x2"] / n, "v2": acc["v2"] / n, "n_samples": acc["n"]},
    )


# relaxation rate --------------------------------------------------------------------

def replica_acf(series, max_lag):
    """Replica-averaged normalized autocorrelation; series has shape (R, T)."""
    x = series - series.mean()
    T = x.shape[1]
    nfft = 1 << (2 * T - 1).bit_length()
    F = np.fft.rfft(x, nfft, axis=1)
    ac = np.fft.irfft(F * np.conj(F), nfft, axis=1)[:, : max_lag + 1]
    ac = ac.mean(axis=0) / (T - np.arange(max_lag + 1))
    return ac / ac[0]


def prony2_rate(acf, lag_dt):
    """Slowest decay rate of a two-mode fit c(j+2) = a1 c(j+1) + a2 c(j); returns (rate, r2)."""
    c = np.asarray(acf, dtype=float)
    if c.size < 5:
        return math.nan, 0.0
    A = np.column_stack([c[1:-1], c[:-2]])
    a, *_ = np.linalg.lstsq(A, c[2:], rcond=None)
    z = np.roots([1.0, -a[0], -a[1]]).astype(complex)
    if np.any(np.abs(z) >= 1) or np.any(np.abs(z) == 0):
        return math.nan, 0.0
    j = np.arange(c.size)
    basis = np.column_stack([z[0] ** j, z[1] ** j]) if abs(z[0] - z[1]) > 1e-9 else np.column_stack([z[0] ** j, j * z[0] ** j])
    amp, *_ = np.linalg.lstsq(basis, c.astype(complex), rcond=None)
    fit = (basis @ amp).real
    r2 = 1.0 - float(np.sum((c - fit) ** 2) / np.sum((c - c.mean()) ** 2))
    weights = np.abs(amp)
    keep = weights > 1e-3 * weights.max()
    rate = float(np.min(-np.log(np.abs(z[keep])))) / lag_dt
    return rate, r2


def _fit_window(acf, floor=0.05):
    below = np.nonzero(acf < floor)[0]
    return int(below[0]) if below.size else acf.size - 1


def relaxation_estimate(traj: Trajectories, burn_in=0.0, n_boot=200, seed=0, floor=0.05) -> dict:
    """Rate of the magnetization autocorrelation with a replica bootstrap standard error."""
    sel = traj.times >= burn_in
    m = traj.magnetization[:, sel]
    if m.shape[1] < 20:
        raise MeanFieldError("post burn-in window too short")
    lag_dt = float(traj.times[1] - traj.times[0])
    max_lag = m.shape[1] // 4
    acf = replica_acf(m, max_lag)
    cut = max(_fit_window(acf, floor), 4)
    rate, r2 = prony2_rate(acf[: cut + 1], lag_dt)
    rng = np.random.Generator(np.random.Philox(seed))
    boots = []
    R = m.shape[0]
    for _ in range(n_boot):
        idx = rng.integers(0, R, R)
        a = replica_acf(m[idx], max_lag)
        rb, _ = prony2_rate(a[: cut + 1], lag_dt)
        if np.isfinite(rb):
            boots.append(rb)
    stderr = float(np.std(boots, ddof=1)) if len(boots) > 1 else math.nan
    window = m.shape[1] * lag_dt
    return {
        "rate": rate,
        "stderr": stderr,
        "r2": r2,
        "flagged": bool(not np.isfinite(rate) or r2 < 0.8),
        "window_ok": bool(np.isfinite(rate) and window * rate >= 10),
        "fit_lags": cut,
        "lag_dt": lag_dt,
        "acf": acf,
    }
