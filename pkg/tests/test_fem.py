import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from scipy.integrate import quad

from fractalwave.fem import (
    PiecewiseLinear,
    SingularMatrixError,
    TriDiag,
    dominance_margins,
    evaluate,
    full_mass_matrix,
    full_stiffness_matrix,
    is_strictly_diagonally_dominant,
    l2mu_norm,
    mass_matrix,
    project,
    stiffness_matrix,
    tridiag_solve,
)
from fractalwave.measure import level_moments
from fractalwave.mesh import build_mesh, mesh_norm

RHO = (math.sqrt(5) - 1) / 2


def test_lebesgue_mass(lebesgue):
    M = mass_matrix(lebesgue, build_mesh(lebesgue, 2))
    np.testing.assert_allclose(M.diag, [1 / 6] * 3, atol=1e-15)
    np.testing.assert_allclose(M.sub, [1 / 24] * 2, atol=1e-15)
    assert M.is_symmetric


def test_uniform_stiffness(weighted):
    K = stiffness_matrix(build_mesh(weighted, 2))
    np.testing.assert_allclose(K.diag, [-8] * 3)
    np.testing.assert_allclose(K.sup, [4] * 2)


def test_golden_level_one_entries(golden):
    mesh = build_mesh(golden, 1)
    I = golden.base_moments
    # node 1 = rho^2: rising tent on T_1, falling tent on T_2
    expected = I[2, 0] + (I[0, 1] - 2 * I[1, 1] + I[2, 1])
    M = mass_matrix(golden, mesh)
    assert M.diag[0] == pytest.approx(expected, rel=1e-14)
    assert M.diag[0] == pytest.approx(1 / 3 - 2 / 6 + (RHO + 5) / (6 * (RHO + 8)) + (5 * RHO + 4) / (6 * (RHO + 8)), rel=1e-14)
    K = stiffness_matrix(mesh)
    assert K.diag[0] == pytest.approx(-(1 / RHO**2 + 1 / RHO**3))


def test_mass_against_quadrature_oracle(lebesgue, weighted):
    # Lebesgue: tents integrated by adaptive quadrature
    mesh = build_mesh(lebesgue, 3)
    x = mesh.nodes
    M = full_mass_matrix(lebesgue, mesh)

    def tent(i):
        return lambda t: np.interp(t, x, np.eye(x.size)[i])

    for i in range(x.size):
        lo, hi = x[max(i - 1, 0)], x[min(i + 1, x.size - 1)]
        val = quad(lambda t: tent(i)(t) ** 2, lo, hi, points=[x[i]])[0]
        assert M.diag[i] == pytest.approx(val, rel=1e-10)


def test_mass_sum_is_total_mass(any_builtin):
    for m in range(1, 7):
        M = full_mass_matrix(any_builtin, build_mesh(any_builtin, m))
        total = math.fsum(M.diag) + 2 * math.fsum(M.sub)
        assert total == pytest.approx(any_builtin.total_mass, abs=1e-12)


def test_stiffness_rows_sum_to_zero(any_builtin):
    K = full_stiffness_matrix(build_mesh(any_builtin, 4))
    rows = K.matvec(np.ones(K.n))
    np.testing.assert_allclose(rows[1:-1], 0, atol=1e-9 * np.abs(K.diag).max())


def test_stiffness_not_strictly_dominant(any_builtin):
    # rows away from the boundary sum to zero, so dominance is never strict
    for m in range(2, 6):
        assert not is_strictly_diagonally_dominant(stiffness_matrix(build_mesh(any_builtin, m)))


@pytest.mark.parametrize("name,levels", [("golden", range(1, 7)), ("cantor", range(1, 5))])
def test_mass_diagonally_dominant(name, levels, golden, cantor):
    spec = golden if name == "golden" else cantor
    for m in levels:
        mesh = build_mesh(spec, m)
        M = mass_matrix(spec, mesh)
        assert is_strictly_diagonally_dominant(M)
        off = np.zeros(M.n)
        off[1:] += np.abs(M.sub)
        off[:-1] += np.abs(M.sup)
        np.testing.assert_allclose(dominance_margins(spec, mesh), M.diag - off, atol=1e-15)
        assert np.all(dominance_margins(spec, mesh) > 0)


def test_mass_and_negated_stiffness_positive_definite(any_builtin):
    mesh = build_mesh(any_builtin, 3)
    assert np.all(np.linalg.eigvalsh(mass_matrix(any_builtin, mesh).to_dense()) > 0)
    assert np.all(np.linalg.eigvalsh(stiffness_matrix(mesh).to_dense()) < 0)


def test_moments_feed_mass(cantor):
    mesh = build_mesh(cantor, 2)
    mom = level_moments(cantor, 2)
    M = full_mass_matrix(cantor, mesh)
    # diag of the first node only sees the falling tent on the first cell
    assert M.diag[0] == pytest.approx((9 * mom[0, 0] - 6 * mom[0, 1] + mom[0, 2]) / 9, rel=1e-14)


# ---------------------------------------------------------------- solves


def test_identity_solve():
    A = TriDiag.symmetric(np.ones(4), np.zeros(3))
    r = np.array([1.0, -2.0, 3.0, 0.5])
    np.testing.assert_array_equal(tridiag_solve(A, r), r)
    np.testing.assert_array_equal(A.solve(r), r)


def test_roundtrip_solve(lebesgue):
    M = mass_matrix(lebesgue, build_mesh(lebesgue, 2))
    x = np.array([1.0, 2.0, 1.0])
    np.testing.assert_allclose(tridiag_solve(M, M @ x), x, atol=1e-12)
    np.testing.assert_allclose(M.solve(M @ x), x, atol=1e-12)


@pytest.mark.parametrize("n", [1, 2, 3, 7])
def test_small_orders(n):
    rng = np.random.default_rng(n)
    A = TriDiag.symmetric(4 + rng.random(n), rng.random(n - 1))
    r = rng.random(n)
    expected = np.linalg.solve(A.to_dense(), r)
    np.testing.assert_allclose(A.solve(r), expected, rtol=1e-12)
    np.testing.assert_allclose(tridiag_solve(A, r), expected, rtol=1e-12)


@settings(max_examples=50, deadline=None)
@given(st.integers(1, 60), st.integers(0, 2**32 - 1))
def test_random_dominant_vs_dense(n, seed):
    rng = np.random.default_rng(seed)
    sub, sup = rng.uniform(-1, 1, n - 1), rng.uniform(-1, 1, n - 1)
    diag = (2.5 + rng.random(n)) * rng.choice([-1, 1], n)
    A = TriDiag(diag, sub, sup)
    r = rng.uniform(-1, 1, n)
    expected = np.linalg.solve(A.to_dense(), r)
    np.testing.assert_allclose(tridiag_solve(A, r), expected, atol=1e-10)
    np.testing.assert_allclose(A.solve(r), expected, atol=1e-10)


def test_singular_detected():
    A = TriDiag.symmetric([1.0, 1.0, 1.0], [1.0, 1.0])
    with pytest.raises(SingularMatrixError):
        tridiag_solve(A, np.ones(3))
    with pytest.raises(SingularMatrixError):
        TriDiag.symmetric([0.0, 0.0], [0.0]).solve(np.ones(2))


def test_shape_checks():
    with pytest.raises(ValueError):
        TriDiag([1.0, 2.0], [1.0, 1.0], [1.0])
    with pytest.raises(ValueError):
        tridiag_solve(TriDiag.symmetric([1.0, 1.0], [0.0]), np.ones(3))


# ---------------------------------------------------------------- functions


def test_l2mu_norm_simple(lebesgue):
    mesh = build_mesh(lebesgue, 4)
    assert l2mu_norm(lebesgue, mesh, PiecewiseLinear(mesh, np.zeros(mesh.nodes.size))) == 0
    assert l2mu_norm(lebesgue, mesh, PiecewiseLinear(mesh, np.ones(mesh.nodes.size))) == pytest.approx(1.0)
    # x is in the P1 space, so the norm is exact
    x = PiecewiseLinear(mesh, mesh.nodes)
    assert l2mu_norm(lebesgue, mesh, x) == pytest.approx(1 / math.sqrt(3), rel=1e-14)


def test_l2mu_of_constant_is_sqrt_mass(any_builtin):
    mesh = build_mesh(any_builtin, 3)
    one = PiecewiseLinear(mesh, np.ones(mesh.nodes.size))
    assert l2mu_norm(any_builtin, mesh, one) == pytest.approx(math.sqrt(any_builtin.total_mass), rel=1e-13)


def test_project_tent(weighted):
    mesh = build_mesh(weighted, 3)
    tent = PiecewiseLinear(mesh, np.eye(mesh.nodes.size)[3])
    np.testing.assert_array_equal(project(tent, mesh).coeffs, np.eye(mesh.nodes.size)[3])


def test_project_sine(weighted):
    mesh = build_mesh(weighted, 3)
    f = project(lambda x: np.sin(np.pi * x), mesh)
    np.testing.assert_allclose(f.coeffs, np.sin(np.pi * np.arange(9) / 8), atol=1e-15)


def test_project_scalar_only_callable(weighted):
    mesh = build_mesh(weighted, 2)
    f = project(lambda t: math.sin(math.pi * t), mesh)
    np.testing.assert_allclose(f.coeffs, np.sin(np.pi * mesh.nodes))


def test_interpolation_bound(any_builtin):
    a, b = any_builtin.support
    L = b - a
    v = lambda x: np.sin(np.pi * (x - a) / L)  # noqa: E731
    h1 = math.sqrt(np.pi**2 / (2 * L))  # ||v'||_{L^2}
    xs = np.linspace(a, b, 20001)
    for m in range(1, 9):
        mesh = build_mesh(any_builtin, m)
        f = project(v, mesh)
        sup_err = np.max(np.abs(evaluate(f, xs) - v(xs)))
        assert sup_err <= 2 * math.sqrt(mesh_norm(mesh)) * h1


def test_evaluate_nodes_and_midpoints(golden):
    mesh = build_mesh(golden, 2)
    c = np.zeros(mesh.nodes.size)
    c[4] = 1.0
    f = PiecewiseLinear(mesh, c)
    np.testing.assert_array_equal(evaluate(f, mesh.nodes), c)
    assert evaluate(f, 0.5 * (mesh.nodes[3] + mesh.nodes[4])) == pytest.approx(0.5)
    assert isinstance(evaluate(f, 0.3), float)
    with pytest.raises(ValueError):
        evaluate(f, 1.5)


def test_piecewise_linear_validation(golden):
    mesh = build_mesh(golden, 1)
    with pytest.raises(ValueError):
        PiecewiseLinear(mesh, np.zeros(3))
    with pytest.raises(ValueError):
        PiecewiseLinear(mesh, [0, np.nan, 0, 0])
