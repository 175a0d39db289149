import io
import os

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from mrenet.elasticnet import (
    RANK_DEFICIENT_LAMBDA_RATIO,
    _GramSolver,
    ElasticNetProblem,
    solution_path,
    solve,
    solve_lambda,
)
from mrenet.errors import ConvergenceError

import oracles


def instance(seed, n=None, p=None):
    rng = np.random.default_rng(seed)
    p = p or int(rng.integers(1, 5))
    n = n or int(rng.integers(p + 2, 11))
    X = rng.normal(size=(n, p)) * rng.uniform(0.5, 20, size=p) + rng.normal(size=p)
    y = X @ rng.normal(size=p) + rng.normal(size=n)
    return X, y


def test_unpenalised_limit_is_ols():
    X, y = instance(0, n=30, p=4)
    fit = solve(ElasticNetProblem(X, y, lambda2=0.0, l1_fraction=1.0))
    A = np.column_stack([np.ones(len(y)), X])
    ols = np.linalg.lstsq(A, y, rcond=None)[0]
    np.testing.assert_allclose(fit.coef, ols[1:], rtol=1e-10, atol=1e-12)
    assert np.isclose(fit.intercept, ols[0], rtol=1e-10)


@pytest.mark.parametrize("lam1, lam2", [(0.0, 0.0), (0.3, 0.0), (0.8, 2.5), (5.0, 1.0)])
def test_orthonormal_closed_form(lam1, lam2):
    rng = np.random.default_rng(11)
    Q, _ = np.linalg.qr(rng.normal(size=(9, 4)))
    y = rng.normal(size=9) * 2
    fit = solve_lambda(Q, y, lam1, lam2, standardize=False)
    np.testing.assert_allclose(fit.coef, oracles.soft_threshold_orthonormal(Q, y, lam1, lam2), atol=1e-8)


def test_p3_n6_matches_enumeration_oracle():
    X, y = instance(5, n=6, p=3)
    for lam2 in (0.0, 0.5, 4.0):
        for s in (0.1, 0.35, 0.7, 0.99):
            fit = solve(ElasticNetProblem(X, y, lam2, s))
            want, icpt = oracles.enet_fraction(X, y, lam2, s)
            np.testing.assert_allclose(fit.coef, want, atol=1e-6)
            assert abs(fit.intercept - icpt) <= 1e-6


@given(st.integers(0, 10**6), st.floats(0, 10), st.floats(0.0, 3.0))
def test_lambda_form_matches_enumeration_oracle(seed, lam2, lam_scale):
    X, y = instance(seed)
    Z, yc, keep, xm, norms, ymean = oracles.standardize(X, y)
    lam1 = lam_scale * float(np.max(np.abs(Z.T @ yc)))
    fit = solve_lambda(X, y, lam1, lam2)
    want, _ = oracles.to_original(oracles.enet_at_lambda(Z, yc, lam1, lam2), keep, xm, norms, ymean)
    np.testing.assert_allclose(fit.coef, want, atol=1e-6, rtol=1e-7)


def test_cross_check_with_generic_convex_solver():
    pytest.importorskip("cvxpy")
    for seed in range(5):
        X, y = instance(100 + seed, n=10, p=4)
        Z, yc, *_ = oracles.standardize(X, y)
        lam1 = 0.2 * float(np.max(np.abs(Z.T @ yc)))
        fit = solve_lambda(Z, yc, lam1, 0.7, standardize=False)
        np.testing.assert_allclose(fit.coef, oracles.cvxpy_enet(Z, yc, lam1, 0.7), atol=1e-6)


def test_fraction_zero_and_one():
    X, y = instance(3, n=20, p=4)
    path = solution_path(X, y, 1.5, [0.0, 1.0])
    assert np.all(path.fits[0].coef == 0) and path.fits[0].active == []
    Z, yc, keep, xm, norms, ymean = oracles.standardize(X, y)
    ridge = np.linalg.solve(Z.T @ Z + 1.5 * np.eye(4), Z.T @ yc)
    coef, _ = oracles.to_original(ridge, keep, xm, norms, ymean)
    np.testing.assert_allclose(path.fits[1].coef, coef, rtol=1e-10)
    np.testing.assert_allclose(path.fits[1].coef_rescaled, 2.5 * coef, rtol=1e-10)


@given(st.integers(0, 10**6), st.floats(0, 10), st.floats(0, 1))
def test_rescaling_and_exact_zeros(seed, lam2, s):
    X, y = instance(seed)
    fit = solve(ElasticNetProblem(X, y, lam2, s))
    np.testing.assert_array_equal(fit.coef_rescaled, (1 + lam2) * fit.coef)
    inactive = [j for j in range(X.shape[1]) if j not in fit.active]
    assert np.all(fit.coef[inactive] == 0.0)


@given(st.integers(0, 10**6), st.floats(0, 10), st.floats(0.01, 1))
def test_kkt_conditions_hold(seed, lam2, s):
    X, y = instance(seed)
    fit = solve(ElasticNetProblem(X, y, lam2, s))
    Z, yc, *_ = oracles.standardize(X, y)
    b = fit.beta_std
    g = 2 * Z.T @ (yc - Z @ b) - 2 * lam2 * b
    tol = 1e-8 * max(1.0, fit.lambda1)
    act = b != 0
    np.testing.assert_allclose(g[act], fit.lambda1 * np.sign(b[act]), atol=tol)
    assert np.all(np.abs(g[~act]) <= fit.lambda1 + tol)
    assert fit.kkt_violation <= tol


@given(st.integers(0, 10**6), st.floats(0.0, 5))
def test_fraction_hits_requested_norm(seed, lam2):
    X, y = instance(seed)
    fractions = np.linspace(0, 1, 11)
    path = solution_path(X, y, lam2, fractions)
    ref = np.abs(path.fits[-1].beta_std).sum()
    for s, fit in zip(fractions, path.fits):
        assert abs(np.abs(fit.beta_std).sum() - s * ref) <= 1e-9 * max(ref, 1)


def test_path_is_continuous_in_fraction():
    X, y = instance(8, n=40, p=4)
    path = solution_path(X, y, 0.5, np.linspace(0, 1, 401))
    B = np.vstack([f.beta_std for f in path.fits])
    assert np.max(np.abs(np.diff(B, axis=0))) <= 0.02 * np.max(np.abs(B))


@given(st.integers(0, 10**6), st.floats(0.01, 10))
def test_grouping_effect_on_duplicated_column(seed, lam2):
    X, y = instance(seed, p=3)
    X = np.column_stack([X, X[:, 1]])
    path = solution_path(X, y, lam2, np.linspace(0, 1, 21))
    for fit in path.fits:
        assert abs(fit.coef[1] - fit.coef[3]) <= 1e-8


def test_constant_column_dropped_and_reported_zero():
    X, y = instance(4, n=12, p=3)
    X = np.column_stack([X, np.full(len(y), 7.0)])
    fit = solve(ElasticNetProblem(X, y, 0.1, 0.8, names=["a", "b", "c", "k"]))
    assert fit.coef[3] == 0 and fit.dropped == ["k"]


def test_rank_deficient_reference_norm():
    rng = np.random.default_rng(9)
    X = rng.normal(size=(5, 8))
    y = rng.normal(size=5)
    top = solution_path(X, y, 0.0, [1.0]).fits[0]
    Z, yc, *_ = oracles.standardize(X, y)
    lam_max = 2 * np.max(np.abs(Z.T @ yc))
    assert np.isclose(top.lambda1, RANK_DEFICIENT_LAMBDA_RATIO * lam_max, rtol=1e-12)


def test_non_convergence_raises_with_kkt_residual():
    rng = np.random.default_rng(0)
    X = rng.normal(size=(5, 8))
    y = rng.normal(size=5)
    with pytest.raises(ConvergenceError) as err:
        solve_lambda(X, y, 0.0, 0.0, max_iterations=3)
    assert err.value.kkt_violation > 0


@pytest.mark.parametrize(
    "kw",
    [dict(lambda2=-1.0), dict(l1_fraction=1.5), dict(y=np.zeros(3)), dict(names=["a"])],
)
def test_problem_validation(kw):
    X, y = instance(1, n=6, p=2)
    args = dict(X=X, y=y)
    args.update(kw)
    with pytest.raises(ValueError):
        ElasticNetProblem(**args)


def test_unsorted_fractions_rejected():
    X, y = instance(1)
    with pytest.raises(ValueError):
        solution_path(X, y, 0.1, [0.5, 0.2])


def test_path_csv_long_format():
    X, y = instance(2, n=10, p=2)
    buf = io.StringIO()
    solution_path(X, y, 0.1, [0.0, 1.0], names=["u", "v"]).write_csv(buf)
    lines = buf.getvalue().splitlines()
    assert lines[0] == "fraction,coefficient_name,value" and len(lines) == 5
    assert lines[1] == "0.0,u,0.0"


def test_deterministic_bits():
    X, y = instance(12, n=30, p=4)
    a = solution_path(X, y, 0.3, np.linspace(0, 1, 9)).coefficient_matrix()
    b = solution_path(X, y, 0.3, np.linspace(0, 1, 9)).coefficient_matrix()
    assert a.tobytes() == b.tobytes()


@given(st.integers(0, 10**6), st.floats(0, 5), st.floats(0.0, 1.0))
def test_homotopy_matches_enumeration_oracle(seed, lam2, lam_scale):
    X, y = instance(seed)
    Z, yc, *_ = oracles.standardize(X, y)
    c = Z.T @ yc
    lam1 = lam_scale * 2 * float(np.max(np.abs(c)))
    beta = _GramSolver(Z.T @ Z, c, float(yc @ yc), lam2, 1e-12, 1000).homotopy(lam1)
    if lam2 == 0 and np.linalg.matrix_rank(Z) < Z.shape[1]:
        return
    np.testing.assert_allclose(beta, oracles.enet_at_lambda(Z, yc, lam1, lam2), atol=1e-9)


def test_ill_conditioned_gram_converges_exactly():
    # cond ~3e6 at lambda2 = 0; plain coordinate descent crawls and the sign search stalls
    d = np.load(os.path.join(os.path.dirname(__file__), "data", "ill_conditioned_gram.npz"))
    lam1 = float(d["lam1"])
    solver = _GramSolver(d["gram"], d["corr"], float(d["yy"]), 0.0, 1e-8, 100_000)
    beta = solver.solve(lam1, d["warm"].copy())
    assert solver.kkt_violation(beta, lam1) <= 1e-12
    pytest.importorskip("cvxpy")
    L = np.linalg.cholesky(d["gram"])
    # |y - Zb|^2 = b'Gb - 2c'b + yy, so any factor L of G with target L^-1 c reproduces it
    yt = np.linalg.solve(L, d["corr"])
    np.testing.assert_allclose(beta, oracles.cvxpy_enet(L.T, yt, lam1, 0.0), atol=1e-5)
