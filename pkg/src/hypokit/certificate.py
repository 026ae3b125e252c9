"""Explicit coefficient families for the twisted H^k norm and the time-weighted functional.

All recursions run in exact rational arithmetic.  The only irrational input,
sqrt(M), is replaced by a rational upper bound s >= sqrt(M) (checked exactly
via s^2 >= M), which can only enlarge the aggregation constants K and
therefore keeps every derived coefficient admissible.  Each min-recursion
output is then rounded *down* to a rational with ``SIG_DIGITS`` significant
digits; any smaller positive coefficient still satisfies the induction, and
the rounding keeps denominators small.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field
from fractions import Fraction

import numpy as np

SIG_DIGITS = 40


class CertificateError(ValueError):
    pass


# rational helpers ------------------------------------------------------------

def to_fraction(x):
    if isinstance(x, Fraction):
        return x
    if isinstance(x, int):
        return Fraction(x)
    if isinstance(x, float):
        if not math.isfinite(x):
            raise CertificateError("non-finite parameter")
        return Fraction(repr(x))
    return Fraction(x)


def sqrt_upper(q: Fraction, digits=SIG_DIGITS):
    """Smallest convenient rational s with s >= sqrt(q); exact when q is a rational square."""
    if q < 0:
        raise CertificateError("negative argument to sqrt")
    rn, rd = math.isqrt(q.numerator), math.isqrt(q.denominator)
    if rn * rn == q.numerator and rd * rd == q.denominator:
        return Fraction(rn, rd)
    scale = 10 ** digits
    # ceil(sqrt(q) * scale) via integer square root of q * scale^2
    num = q.numerator * scale * scale
    root = math.isqrt(num // q.denominator)
    s = Fraction(root + 1, scale)
    while s * s < q:
        s += Fraction(1, scale)
    return s


def round_down(q: Fraction, digits=SIG_DIGITS):
    """Largest rational with ``digits`` significant decimal digits that is <= q (q > 0)."""
    if q <= 0:
        raise CertificateError("round_down expects a positive value")
    e = math.floor(math.log10(q.numerator) - math.log10(q.denominator))
    scale = Fraction(10) ** (digits - 1 - e)
    r = Fraction(math.floor(q * scale)) / scale
    while r > q:
        r -= 1 / scale
    if r <= 0:
        r = Fraction(1, 10 ** (digits - e))
        while r > q:
            r /= 10
    return r


def _float_and_err(q: Fraction):
    f = float(q)
    return f, float(abs(Fraction(f) - q))


def diag_ratios(l: int, M: Fraction):
    """r_i = coefficient_{l,i} / coefficient_l for i = 0..l."""
    big = 64 * l * l * M
    return [big] * l + [1 / (16 * l * l * M)]


# parameter and certificate types ---------------------------------------------

@dataclass(frozen=True)
class ProblemParams:
    k: int
    M: Fraction
    kappa: Fraction | None = None

    def __post_init__(self):
        if not isinstance(self.k, (int, np.integer)) or isinstance(self.k, bool) or self.k < 0:
            raise CertificateError("k must be a non-negative integer")
        object.__setattr__(self, "k", int(self.k))
        M = to_fraction(self.M)
        if M < 1:
            raise CertificateError("M must be >= 1")
        object.__setattr__(self, "M", M)
        if self.kappa is not None:
            kap = to_fraction(self.kappa)
            if kap <= 0:
                raise CertificateError("kappa must be positive")
            object.__setattr__(self, "kappa", kap)

    @classmethod
    def make(cls, k, M, kappa=None):
        return cls(k, to_fraction(M), None if kappa is None else to_fraction(kappa))


@dataclass(frozen=True)
class CoercivityLevel:
    l: int
    omega_diag: tuple  # Fractions, omega_{l,i} for i = 0..l
    omega_mix: Fraction
    eta: Fraction
    K1p: Fraction
    K1pp: Fraction
    K2p: Fraction
    K2pp: Fraction
    lambda_l0: Fraction
    sqrtM_upper: Fraction

    @property
    def K1(self):
        return self.K1p + self.K1pp

    @property
    def K2(self):
        return self.K2p + self.K2pp


@dataclass(frozen=True)
class HypocoercivityCertificate:
    params: ProblemParams
    levels: tuple
    lambda_final: Fraction | None
    c1: Fraction
    c2: Fraction
    lambda00: Fraction = Fraction(1)
    C_step3: Fraction | None = None

    @property
    def lambda_k0(self):
        return self.levels[-1].lambda_l0 if self.levels else self.lambda00

    @property
    def envelope_constant(self):
        """C with ||h_t - m||_{H^k} <= C e^{-lambda t} ||h_0 - m||_{H^k}."""
        return math.sqrt(float(self.c2 / self.c1))

    def omega(self, l, i):
        return self.levels[l - 1].omega_diag[i]

    def omega_mix(self, l):
        return self.levels[l - 1].omega_mix


@dataclass(frozen=True)
class HerauLevel:
    l: int
    sigma_diag: tuple
    sigma_mix: Fraction
    K0: Fraction
    K1: Fraction
    Lambda_l: Fraction
    sqrtM_upper: Fraction


@dataclass(frozen=True)
class HerauCertificate:
    params: ProblemParams
    levels: tuple
    Lambda0: Fraction = Fraction(2)

    @property
    def Lambda_k(self):
        return self.levels[-1].Lambda_l if self.levels else self.Lambda0

    def sigma(self, l, i):
        return self.levels[l - 1].sigma_diag[i]

    def sigma_mix(self, l):
        return self.levels[l - 1].sigma_mix


# coercivity recursion ----------------------------------------------------------

def coercivity_constants(l: int, M: Fraction, s: Fraction):
    """Cauchy-Schwarz aggregation constants (K1', K1'', K2', K2'') at level l with s >= sqrt(M)."""
    r = diag_ratios(l, M)
    K1p = sum((r[i] * (l + 2 ** (i + 1) * s) for i in range(l)), Fraction(0))
    # Z|W| coefficients from the diagonal terms: ZW_x, 2^i s Z W_i and 2^{l+1} s r_l Z W_x,
    # plus the l s r_l term carried by the reference aggregation
    K2p = sum((r[i] * (1 + 2**i * s) for i in range(l)), Fraction(0)) + l * s * r[l] + 2 ** (l + 1) * s * r[l]
    K1pp = 2 ** (l + 1) * s
    K2pp = 1 + 2**l * s + (l - 1) * s + 2 + 2**l * s
    return K1p, K1pp, K2p, K2pp


def build_hypocoercivity_certificate(params: ProblemParams) -> HypocoercivityCertificate:
    if params.kappa is None and params.k > 0:
        raise CertificateError("kappa is required for the coercivity certificate")
    M = params.M
    s = sqrt_upper(M)
    lam = Fraction(1)
    levels = []
    for l in range(1, params.k + 1):
        eta = 1 / (64 * l * l * M)
        K1p, K1pp, K2p, K2pp = coercivity_constants(l, M, s)
        K1, K2 = K1p + K1pp, K2p + K2pp
        omega = round_down(min(lam / (2 * K1), 3 * eta * lam / (4 * K2 * K2)))
        lam_next = round_down(min(lam / 4, omega * eta / 4))
        diag = tuple(ri * omega for ri in diag_ratios(l, M))
        levels.append(CoercivityLevel(l, diag, omega, eta, K1p, K1pp, K2p, K2pp, lam_next, s))
        lam = lam_next

    all_w = [w for lev in levels for w in lev.omega_diag]
    c1 = min([Fraction(1)] + [w / 2 for w in all_w])
    c2 = max([Fraction(1)] + [3 * w / 2 for w in all_w])
    if params.kappa is None:
        return HypocoercivityCertificate(params=params, levels=(), lambda_final=None, c1=c1, c2=c2)
    C = max(
        [Fraction(1), params.kappa]
        + [Fraction(3, 2) * lev.omega_diag[lev.l - 1] for lev in levels]
        + [Fraction(3, 2) * lev.omega_diag[lev.l] for lev in levels]
    )
    return HypocoercivityCertificate(
        params=params,
        levels=tuple(levels),
        lambda_final=lam / C,
        c1=c1,
        c2=c2,
        C_step3=C,
    )


# time-weighted functional recursion --------------------------------------------

def herau_constants(l: int, M: Fraction, s: Fraction):
    """(K0, K1) for level l with s >= sqrt(M)."""
    r = diag_ratios(l, M)
    K0 = (2 * l * l + 2 ** (l + 1) * s) * 64 * l * l * M + 2 ** (l + 1) * s
    K1 = (
        (3 * l - 1)
        + sum((r[i] * (1 + 2**i * s) for i in range(l)), Fraction(0))
        + 2 ** (l + 1) * s * r[l]
        + 1
        + 2 * 2**l * s
    )
    return K0, K1


def build_herau_certificate(params: ProblemParams) -> HerauCertificate:
    M = params.M
    s = sqrt_upper(M)
    Lam = Fraction(2)
    levels = []
    for l in range(1, params.k + 1):
        K0, K1 = herau_constants(l, M, s)
        sigma = round_down(min(Lam / (4 * K0), Lam / (128 * (l + 2) * l * l * M * K1 * K1)))
        Lam_next = round_down(min(Lam / 2, sigma / (128 * l * l * M)))
        diag = tuple(ri * sigma for ri in diag_ratios(l, M))
        levels.append(HerauLevel(l, diag, sigma, K0, K1, Lam_next, s))
        Lam = Lam_next
    return HerauCertificate(params=params, levels=tuple(levels))


# identity checks ----------------------------------------------------------------

def check_identities(cert) -> dict:
    """Exact rational checks of the ratio relations and monotonicity of the rates."""
    M = cert.params.M
    out = {"ratios": True, "product": True, "positive": True, "monotone": True}
    if isinstance(cert, HypocoercivityCertificate):
        prev = cert.lambda00
        for lev in cert.levels:
            diag, mix, rate = lev.omega_diag, lev.omega_mix, lev.lambda_l0
            out["ratios"] &= all(diag[i] == 64 * lev.l**2 * M * mix for i in range(lev.l))
            out["ratios"] &= diag[lev.l] == mix / (16 * lev.l**2 * M)
            out["product"] &= diag[lev.l - 1] * diag[lev.l] == 4 * mix * mix
            out["positive"] &= mix > 0 and rate > 0 and all(w > 0 for w in diag)
            out["monotone"] &= rate <= prev
            prev = rate
        out["base"] = cert.lambda00 == 1
    else:
        prev = cert.Lambda0
        for lev in cert.levels:
            diag, mix, rate = lev.sigma_diag, lev.sigma_mix, lev.Lambda_l
            out["ratios"] &= all(diag[i] == 64 * lev.l**2 * M * mix for i in range(lev.l))
            out["ratios"] &= diag[lev.l] == mix / (16 * lev.l**2 * M)
            out["product"] &= diag[lev.l - 1] * diag[lev.l] >= 4 * mix * mix
            out["positive"] &= mix > 0 and rate > 0 and all(w > 0 for w in diag)
            out["monotone"] &= rate <= prev
            prev = rate
        out["base"] = cert.Lambda0 == 2
    out["all"] = all(out.values())
    return out


# quadratic-form lemma -----------------------------------------------------------

@dataclass(frozen=True)
class TriangularFormInstance:
    a: float
    M: float
    b: float = field(init=False)
    c: float = field(init=False)
    matrix: np.ndarray = field(init=False, repr=False)
    diag_bound: np.ndarray = field(init=False, repr=False)

    def __post_init__(self):
        if not (self.a > 0):
            raise CertificateError("a must be positive")
        if not (self.M >= 1):
            raise CertificateError("M must be >= 1")
        a, M = float(self.a), float(self.M)
        b, c = a / (64 * M), a / (1024 * M * M)
        rM = math.sqrt(M)
        S = np.array([[b, 0.0, 0.0], [-b * rM, a, 0.0], [-2 * c * rM, -2 * b, c]])
        object.__setattr__(self, "b", b)
        object.__setattr__(self, "c", c)
        object.__setattr__(self, "matrix", S)
        object.__setattr__(self, "diag_bound", np.array([b / 2, a / 4, c / 4]))


SUFFICIENT_WEIGHTS = {(0, 1): 0.5, (0, 2): 0.5, (1, 0): 1 / 3, (2, 0): 1 / 3, (1, 2): 2 / 3, (2, 1): 2 / 3}


def check_triangular_positivity(inst: TriangularFormInstance, tol=1e-12) -> dict:
    S = inst.matrix
    Q = 0.5 * (S + S.T) - np.diag(inst.diag_bound)
    min_eig = float(np.linalg.eigvalsh(Q)[0])
    # sufficient criterion on the shifted lower-triangular matrix
    T = S - np.diag(inst.diag_bound)
    slack = []
    for i in range(3):
        for j in range(i):
            rhs = 4 * SUFFICIENT_WEIGHTS[(i, j)] * T[i, i] * SUFFICIENT_WEIGHTS[(j, i)] * T[j, j]
            slack.append((rhs - T[i, j] ** 2) / rhs)
    row_sums_ok = all(
        sum(w for (i, _), w in SUFFICIENT_WEIGHTS.items() if i == r) <= 1 + 1e-15 for r in range(3)
    )
    sufficient = row_sums_ok and min(slack) >= -1e-12
    return {
        "passed": min_eig >= -tol,
        "min_eigenvalue": min_eig,
        "sufficient_criterion": bool(sufficient),
        "relative_slacks": slack,
    }


# functionals ---------------------------------------------------------------------

def _need(norms, k):
    sem = np.asarray(norms.seminorms, dtype=float)
    mixed = np.asarray(norms.mixed, dtype=float)
    if sem.shape[0] < k + 1 or sem.shape[1] < k + 1 or mixed.shape[0] < k + 1:
        raise CertificateError(f"norm aggregates do not reach order {k}")
    for l in range(k + 1):
        for i in range(l + 1):
            if not np.isfinite(sem[i, l - i]):
                raise CertificateError(f"missing seminorm ||D_x^{i} D_v^{l - i} h||")
        if l >= 1 and not np.isfinite(mixed[l]):
            raise CertificateError(f"missing mixed term at order {l}")
    return sem, mixed


def twisted_hk_inner(norms, cert: HypocoercivityCertificate, k=None) -> float:
    """((h, h))_{H^k}: ||h||^2 plus weighted seminorms and mixed terms up to order k."""
    k = cert.params.k if k is None else k
    sem, mixed = _need(norms, k)
    total = sem[0, 0] ** 2
    for l in range(1, k + 1):
        lev = cert.levels[l - 1]
        total += sum(float(lev.omega_diag[i]) * sem[i, l - i] ** 2 for i in range(l + 1))
        total += 2 * float(lev.omega_mix) * mixed[l]
    return float(total)


def plain_hk_norm_sq(norms, k) -> float:
    sem, _ = _need(norms, k)
    return float(sum(sem[i, l - i] ** 2 for l in range(k + 1) for i in range(l + 1)))


def herau_functional(t, norms, cert: HerauCertificate, k=None) -> float:
    if not (0 < t <= 1):
        raise CertificateError("the time-weighted functional is defined for 0 < t <= 1")
    k = cert.params.k if k is None else k
    sem, mixed = _need(norms, k)
    total = sem[0, 0] ** 2
    for l in range(1, k + 1):
        lev = cert.levels[l - 1]
        total += sum(float(lev.sigma_diag[i]) * t ** (l + 2 * i) * sem[i, l - i] ** 2 for i in range(l + 1))
        total += 2 * float(lev.sigma_mix) * t ** (3 * l - 1) * mixed[l]
    return float(total)


# serialization --------------------------------------------------------------------

def _num(q, rule):
    f, err = _float_and_err(q)
    return {"value": f, "exact": f"{q.numerator}/{q.denominator}", "abs_error": err, "rule": rule}


def certificate_to_dict(cert) -> dict:
    p = cert.params
    head = {
        "k": p.k,
        "M": _num(p.M, "relative-bound constant, M >= 1"),
        "kappa": None if p.kappa is None else _num(p.kappa, "Poincare constant of the spatial marginal"),
        "sqrt_M_policy": "rational upper bound s >= sqrt(M), exact when M is a rational square",
        "open_question": "aggregation constants K are one faithful summation of the displayed bounds, not values fixed by the source",
    }
    if isinstance(cert, HypocoercivityCertificate):
        levels = []
        for lev in cert.levels:
            levels.append({
                "l": lev.l,
                "omega_diag": [
                    _num(w, "omega_{l,i} = 64 l^2 M omega_l for i < l" if i < lev.l else "omega_{l,l} = omega_l / (16 l^2 M)")
                    for i, w in enumerate(lev.omega_diag)
                ],
                "omega_mix": _num(lev.omega_mix, "omega_l = min{lambda_{l-1,0}/(2 K1), 3 eta lambda_{l-1,0}/(4 K2^2)}, rounded down"),
                "eta": _num(lev.eta, "eta = 1/(64 l^2 M)"),
                "K1_prime": _num(lev.K1p, "K1' = sum_{i<l} r_i (l + 2^{i+1} sqrt M)"),
                "K1_second": _num(lev.K1pp, "K1'' = 2^{l+1} sqrt M"),
                "K2_prime": _num(lev.K2p, "K2' = sum_{i<l} r_i (1 + 2^i sqrt M) + l sqrt M r_l + 2^{l+1} sqrt M r_l"),
                "K2_second": _num(lev.K2pp, "K2'' = 1 + 2^l sqrt M + (l-1) sqrt M + 2 + 2^l sqrt M"),
                "K1": _num(lev.K1, "K1 = K1' + K1''"),
                "K2": _num(lev.K2, "K2 = K2' + K2''"),
                "lambda_l0": _num(lev.lambda_l0, "lambda_{l,0} = min{lambda_{l-1,0}/4, omega_l eta/4}, rounded down"),
            })
        return {
            "kind": "hypocoercivity",
            **head,
            "lambda_00": _num(cert.lambda00, "lambda_{0,0} = 1"),
            "levels": levels,
            "C": None if cert.C_step3 is None else _num(cert.C_step3, "C = max{1, kappa, 3/2 omega_{l,l-1}, 3/2 omega_{l,l}}"),
            "lambda_final": None if cert.lambda_final is None else _num(cert.lambda_final, "lambda_k = lambda_{k,0} / C"),
            "norm_equivalence": {
                "c1": _num(cert.c1, "c1 = min{1, min omega_{l,i} / 2}"),
                "c2": _num(cert.c2, "c2 = max{1, 3/2 max omega_{l,i}}"),
            },
            "identities": check_identities(cert),
        }
    levels = []
    for lev in cert.levels:
        levels.append({
            "l": lev.l,
            "sigma_diag": [
                _num(w, "sigma_{l,i} = 64 l^2 M sigma_l for i < l" if i < lev.l else "sigma_{l,l} = sigma_l / (16 l^2 M)")
                for i, w in enumerate(lev.sigma_diag)
            ],
            "sigma_mix": _num(lev.sigma_mix, "sigma_l = min{Lambda_{l-1}/(4 K0), Lambda_{l-1}/(128 (l+2) l^2 M K1^2)}, rounded down"),
            "K0": _num(lev.K0, "K0 = (2 l^2 + 2^{l+1} sqrt M) 64 l^2 M + 2^{l+1} sqrt M"),
            "K1": _num(lev.K1, "K1 = (3l-1) + sum_{i<l} r_i (1 + 2^i sqrt M) + 2^{l+1} sqrt M r_l + 1 + 2^{l+1} sqrt M"),
            "Lambda_l": _num(lev.Lambda_l, "Lambda_l = min{Lambda_{l-1}/2, sigma_l/(128 l^2 M)}, rounded down"),
        })
    return {
        "kind": "herau",
        **head,
        "Lambda0": _num(cert.Lambda0, "Lambda_0 = 2"),
        "levels": levels,
        "identities": check_identities(cert),
    }


def certificate_to_json(cert, **kw) -> str:
    return json.dumps(certificate_to_dict(cert), indent=kw.pop("indent", 2), **kw)
