import numpy as np
import pytest
from hypothesis import given, settings, strategies as st
from scipy.optimize import minimize

from ocrm import _pykernels, kernels, svdd
from ocrm.svdd import KernelSpec

TRIANGLE = np.array([[0.0, 0.0], [1.0, 0.0], [0.0, 1.0]])


def random_instance(rng):
    c = float(rng.choice([0.34, 0.5, 1.0]))
    n = int(rng.integers(int(np.ceil(1 / c)), 7))
    d = int(rng.integers(1, 4))
    return rng.standard_normal((n, d)), c


def slsqp_dual(x, c):
    """Third, unrelated route to the dual optimum (scipy SLSQP)."""
    K = svdd.gram(x, KernelSpec())
    n = len(x)
    res = minimize(
        lambda a: a @ K @ a - np.diag(K) @ a,
        np.full(n, 1.0 / n),
        jac=lambda a: 2 * K @ a - np.diag(K),
        bounds=[(0, c)] * n,
        constraints=[{"type": "eq", "fun": lambda a: a.sum() - 1, "jac": lambda a: np.ones(n)}],
        method="SLSQP",
        options={"ftol": 1e-14, "maxiter": 500},
    )
    return -res.fun


def test_single_point():
    m = svdd.fit(np.array([[3.0, -1.0]]), c=1.0)
    np.testing.assert_array_equal(m.alphas, [1.0])
    np.testing.assert_allclose(m.center, [3.0, -1.0])
    assert m.r2 == 0.0


def test_triangle():
    m = svdd.fit(TRIANGLE, c=1.0)
    np.testing.assert_allclose(m.center, [0.5, 0.5], atol=1e-6)
    assert m.r2 == pytest.approx(0.5, abs=1e-6)
    # all three vertices sit on the sphere; the right-angle vertex has alpha 0
    np.testing.assert_allclose(m.score(TRIANGLE), 0.0, atol=1e-6)
    # score at (5,5): 2 * 4.5^2 - 0.5
    assert m.score(np.array([5.0, 5.0])) == pytest.approx(40.0, abs=1e-5)


def test_triangle_oracle_matches_minimum_enclosing_ball():
    m = svdd.oracle_fit(TRIANGLE, c=1.0)
    np.testing.assert_allclose(m.center, [0.5, 0.5], atol=1e-12)
    assert m.r2 == pytest.approx(0.5, abs=1e-12)
    np.testing.assert_array_equal(m.indices, [1, 2])
    np.testing.assert_allclose(m.alphas, [0.5, 0.5], atol=1e-12)


def test_infeasible_c():
    with pytest.raises(svdd.InfeasibleError):
        svdd.fit(np.random.default_rng(0).standard_normal((5, 2)), c=0.1)


def test_empty_and_nonfinite():
    with pytest.raises(svdd.EmptyDatasetError):
        svdd.fit(np.zeros((0, 3)), c=1.0)
    with pytest.raises(svdd.DataError):
        svdd.fit(np.array([[0.0, np.nan]]), c=1.0)


def test_score_dimension_mismatch():
    m = svdd.fit(TRIANGLE, c=1.0)
    with pytest.raises(svdd.DimensionMismatch):
        m.score(np.zeros(3))


def test_score_at_center_and_boundary():
    rng = np.random.default_rng(1)
    x = rng.standard_normal((40, 3))
    m = svdd.fit(x, c=0.1)
    assert m.score(m.center) == pytest.approx(-m.r2, abs=1e-12)
    free = (m.alphas > 0) & (m.alphas < m.c)
    assert free.any()
    np.testing.assert_allclose(m.score(m.support_vectors[free]), 0.0, atol=1e-6)


def test_two_points():
    m = svdd.oracle_fit(np.array([[1.0, 1.0], [1.0, 1.0]]), c=1.0)
    np.testing.assert_allclose(m.center, [1.0, 1.0])
    assert m.r2 == pytest.approx(0.0, abs=1e-15)
    m = svdd.oracle_fit(np.array([[0.0, 0.0], [4.0, 2.0]]), c=1.0)
    np.testing.assert_allclose(m.center, [2.0, 1.0])
    assert m.r2 == pytest.approx(5.0)


def test_fit_agrees_with_oracle_on_random_six_point_instances():
    rng = np.random.default_rng(2)
    for _ in range(200):
        x, c = random_instance(rng)
        fitted = svdd.fit(x, c=c, tol=1e-9)
        oracle = svdd.oracle_fit(x, c=c)
        assert abs(fitted.dual_objective - oracle.dual_objective) < 1e-6


def test_oracle_agrees_with_slsqp():
    rng = np.random.default_rng(3)
    for _ in range(30):
        x, c = random_instance(rng)
        assert svdd.oracle_fit(x, c=c).dual_objective == pytest.approx(slsqp_dual(x, c), abs=1e-7)


def test_kkt_residual():
    rng = np.random.default_rng(4)
    x = rng.standard_normal((30, 2))
    m = svdd.fit(x, c=0.2, tol=1e-6)
    assert svdd.kkt_residual(m, x) <= 1e-6
    bad = svdd.SvddModel(**{**m.__dict__, "alphas": m.alphas + 0.1})
    assert svdd.kkt_residual(bad, x) > 1e-6
    o = svdd.oracle_fit(x[:7], c=0.5)
    assert svdd.kkt_residual(o, x[:7]) <= 1e-8


def test_alpha_constraints_after_fit():
    rng = np.random.default_rng(5)
    x = rng.standard_normal((200, 5))
    m = svdd.fit(x, c=0.05)
    assert abs(m.alphas.sum() - 1) < 1e-9
    assert m.alphas.min() > 0 and m.alphas.max() <= m.c
    assert m.r2 >= 0
    assert m.converged


def test_translation_equivariance():
    rng = np.random.default_rng(6)
    x = rng.standard_normal((25, 3))
    t = np.array([3.0, -7.0, 0.5])
    q = rng.standard_normal((10, 3))
    a = svdd.fit(x, c=0.1)
    b = svdd.fit(x + t, c=0.1)
    np.testing.assert_array_equal(a.indices, b.indices)
    np.testing.assert_allclose(a.alphas, b.alphas, atol=1e-8)
    assert a.r2 == pytest.approx(b.r2, abs=1e-8)
    np.testing.assert_allclose(a.score(q), b.score(q + t), atol=1e-8)


def test_dual_objective_and_radius_monotone_in_c():
    rng = np.random.default_rng(7)
    for _ in range(50):
        x = rng.standard_normal((6, 2))
        objs, radii = [], []
        for c in (0.2, 0.34, 0.5, 1.0):
            m = svdd.oracle_fit(x, c=c)
            objs.append(m.dual_objective)
            radii.append(m.r2)
        assert all(a <= b + 1e-12 for a, b in zip(objs, objs[1:]))
        assert all(a <= b + 1e-9 for a, b in zip(radii, radii[1:]))


def test_constant_kernel_offset_keeps_alpha_and_ranking():
    # k'(x, y) = x.y + s: the dual changes by a constant under sum(alpha) = 1
    rng = np.random.default_rng(8)
    x = rng.standard_normal((30, 4))
    q = rng.standard_normal((50, 4))
    K = x @ x.T
    a0, _, _ = svdd.solve_dual(K, 0.1, tol=1e-10)
    a1, _, _ = svdd.solve_dual(K + 5.0, 0.1, tol=1e-10)
    np.testing.assert_allclose(a0, a1, atol=1e-7)

    def scores(alpha, shift):
        kq = q @ x.T + shift
        return (q * q).sum(1) + shift - 2 * kq @ alpha

    np.testing.assert_array_equal(np.argsort(scores(a0, 0.0)), np.argsort(scores(a1, 5.0)))


def test_diagonal_shift_keeps_ranking_when_alpha_is_forced():
    rng = np.random.default_rng(9)
    x = rng.standard_normal((10, 3))
    q = rng.standard_normal((40, 3))
    K = x @ x.T
    a0, _, _ = svdd.solve_dual(K, 0.1)
    a1, _, _ = svdd.solve_dual(K + 2.0 * np.eye(10), 0.1)
    np.testing.assert_array_equal(a0, a1)
    s0 = (q * q).sum(1) - 2 * (q @ x.T) @ a0
    s1 = (q * q).sum(1) + 2.0 - 2 * (q @ x.T) @ a1
    np.testing.assert_array_equal(np.argsort(s0), np.argsort(s1))


@settings(max_examples=60, deadline=None)
@given(st.integers(2, 30), st.integers(1, 4), st.floats(0.0, 1.0), st.integers(0, 2**31 - 1))
def test_iterates_stay_feasible(n, d, cfrac, seed):
    rng = np.random.default_rng(seed)
    x = rng.standard_normal((n, d))
    c = 1.0 / n + cfrac * (1.0 - 1.0 / n)
    K = svdd.gram(x, KernelSpec())
    for iters in (1, 3, 10, 1000):
        alpha, _, _ = svdd.solve_dual(K, c, max_iter=iters)
        assert abs(alpha.sum() - 1) < 1e-9
        assert alpha.min() >= 0 and alpha.max() <= c


def test_rbf_kernel_fit():
    rng = np.random.default_rng(10)
    x = rng.standard_normal((40, 2))
    k = KernelSpec("rbf", 0.5)
    m = svdd.fit(x, c=0.1, kernel=k)
    assert svdd.kkt_residual(m, x) <= 1e-6
    assert m.score(np.array([10.0, 10.0])) > 0
    o = svdd.oracle_fit(x[:6], c=0.5, kernel=k)
    f = svdd.fit(x[:6], c=0.5, kernel=k, tol=1e-10)
    assert f.dual_objective == pytest.approx(o.dual_objective, abs=1e-8)


def test_backends_agree_bitwise():
    if kernels.BACKEND != "cython":
        pytest.skip("compiled kernels not built")
    rng = np.random.default_rng(11)
    x = rng.standard_normal((120, 6))
    K = svdd.gram(x, KernelSpec())
    results = []
    for impl in (kernels._impl, _pykernels):
        alpha = np.full(120, 1 / 120)
        grad = 2 * K @ alpha - np.diag(K)
        it, gap = impl.smo_solve(K, 0.05, 1e-8, 12000, alpha, grad)
        results.append((it, alpha.copy()))
    assert results[0][0] == results[1][0]
    np.testing.assert_array_equal(results[0][1], results[1][1])
