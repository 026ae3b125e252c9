import numpy as np
import pytest

from hypokit.grid import PhaseGrid
from hypokit.operators import (
    FeasibilityError,
    apply_A,
    apply_Astar,
    apply_B,
    apply_L,
    commutator_residuals,
    compute_norm_aggregates,
    dissipation_terms,
    random_test_functions,
    verify_lemma32,
    verify_lemma33,
)
from hypokit.potentials import CurieWeiss, Quadratic


@pytest.fixture(scope="module")
def qgrid():
    return PhaseGrid(Quadratic(1.0), n_x=128, n_v=128)


def test_L_annihilates_constants(qgrid):
    one = qgrid.sample(lambda x, v: np.ones_like(x * v))
    assert np.max(np.abs(apply_L(one).values)) < 1e-10


def test_A_and_adjoint_on_hermite(qgrid):
    # A* 1 = v and A v = 1
    one = qgrid.sample(lambda x, v: np.ones_like(x * v))
    np.testing.assert_allclose(apply_Astar([one]).values, np.broadcast_to(qgrid.mesh[1], qgrid.shape), atol=1e-9)
    h = qgrid.sample(lambda x, v: v + 0 * x)
    np.testing.assert_allclose(apply_A(h)[0].values, 1.0, atol=1e-9)


def test_adjointness_in_L2mu(qgrid):
    f, g = random_test_functions(qgrid, 2, seed=3)
    lhs = qgrid.inner(apply_A(f)[0].values, g.values)
    rhs = qgrid.inner(f.values, apply_Astar([g]).values)
    assert lhs == pytest.approx(rhs, rel=1e-5)


def test_B_is_antisymmetric(qgrid):
    f, g = random_test_functions(qgrid, 2, seed=5)
    a = qgrid.inner(apply_B(f).values, g.values)
    b = qgrid.inner(f.values, apply_B(g).values)
    assert a == pytest.approx(-b, rel=1e-5, abs=1e-10)


def test_L_on_linear_function(qgrid):
    # L(x) = B x = v ; L(v) = A*A v + B v = v - omega^2 x
    hx = qgrid.sample(lambda x, v: x + 0 * v)
    hv = qgrid.sample(lambda x, v: v + 0 * x)
    X, V = (np.broadcast_to(m, qgrid.shape) for m in qgrid.mesh)
    np.testing.assert_allclose(apply_L(hx).values, V, atol=1e-8)
    np.testing.assert_allclose(apply_L(hv).values, V - X, atol=1e-8)


def test_potential_mismatch_rejected(qgrid):
    h = random_test_functions(qgrid, 1)[0]
    with pytest.raises(ValueError):
        apply_B(h, V=Quadratic(2.0))


@pytest.mark.parametrize("pot,L", [(Quadratic(1.0), 8.0), (CurieWeiss(1.0, 0.0, 1), 4.5)])
def test_commutators(pot, L):
    g = PhaseGrid(pot, n_x=256, L_x=L, n_v=256)
    for h in random_test_functions(g, 3, seed=1):
        res = commutator_residuals(None, h)
        assert res["AB_res"] < 1e-5 and res["CB_res"] < 1e-5


def test_norm_aggregates_gaussian(qgrid):
    h = qgrid.sample(lambda x, v: x * v)
    agg = compute_norm_aggregates(h, 2)
    # ||d_x (x v)||^2 = <v^2> = 1, ||d_v d_x (x v)||^2 = 1, mixed <d_v h, d_x h> = <x v> = 0
    assert agg.seminorms[1, 0] ** 2 == pytest.approx(1.0, rel=1e-8)
    assert agg.seminorms[1, 1] ** 2 == pytest.approx(1.0, rel=1e-8)
    assert agg.mixed[1] == pytest.approx(0.0, abs=1e-10)
    assert agg.to_dict()["k"] == 2


def test_capacity_check():
    g = PhaseGrid(Quadratic(1.0), n_x=8, n_v=8, order=6)
    h = g.sample(lambda x, v: x * v)
    with pytest.raises(FeasibilityError):
        compute_norm_aggregates(h, 3)


def test_dissipation_keys(qgrid):
    h = random_test_functions(qgrid, 1, seed=2)[0]
    d = dissipation_terms(h, None, k=1, m1=0)
    assert {"T_A", "T_B", "Tmix_A", "Tmix_B", "direct", "closed_form", "relative_error"} <= set(d)


def test_dissipation_requires_1d():
    g = PhaseGrid(Quadratic(1.0, 2), d=2, n_x=16, n_v=16)
    h = g.sample(lambda x1, x2, v1, v2: x1 * v2)
    with pytest.raises(ValueError):
        dissipation_terms(h, None, k=1)


@pytest.mark.slow
def test_dissipation_checks_quadratic_small_set():
    g = PhaseGrid(Quadratic(1.0), n_x=256, n_v=256)
    for h in random_test_functions(g, 3, seed=9):
        for k in (1, 2):
            assert verify_lemma32(h, k)["max_relative_error"] < 1e-5
            r = verify_lemma33(h, None, 1.0, k)
            assert r["min_slack"] >= -1e-5
            assert r["M_consistent"]


def test_lower_bounds_detect_too_small_M():
    g = PhaseGrid(Quadratic(2.0), n_x=128, n_v=128)
    h = random_test_functions(g, 1, seed=4)[0]
    r = verify_lemma33(h, None, 1.0, 1)
    assert r["M_required"] == 16.0 and r["M_consistent"] is False
