import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st
from hypothesis.extra import numpy as hnp

from mrenet import kernels
from mrenet._accel import HAS_NUMBA

from oracles import isotonic_decreasing_bruteforce, objective, profile_double_loop

needs_numba = pytest.mark.skipif(not HAS_NUMBA, reason="numba not installed")

finite = st.floats(-1e3, 1e3, allow_nan=False, allow_infinity=False)


def _gram_problem(seed, n=12, p=5):
    rng = np.random.default_rng(seed)
    X = rng.normal(size=(n, p))
    y = rng.normal(size=n)
    return X, y, X.T @ X, X.T @ y


# ---------------------------------------------------------------------------
# PAVA
# ---------------------------------------------------------------------------


def test_pava_hand_example():
    np.testing.assert_array_equal(kernels.pava_decreasing(np.array([10.0, 12.0, 5.0])), [11.0, 11.0, 5.0])


def test_pava_monotone_input_is_fixed_point():
    y = np.array([9.0, 7.0, 7.0, 3.0, 0.0])
    np.testing.assert_array_equal(kernels.pava_decreasing(y), y)


@given(hnp.arrays(np.float64, st.integers(1, 9), elements=finite))
def test_pava_matches_partition_bruteforce(y):
    np.testing.assert_allclose(kernels.pava_decreasing(y), isotonic_decreasing_bruteforce(y), rtol=1e-9, atol=1e-9)


@given(hnp.arrays(np.float64, st.integers(1, 60), elements=finite))
def test_pava_is_idempotent_and_monotone(y):
    once = kernels.pava_decreasing(y)
    assert np.all(np.diff(once) <= 0)
    np.testing.assert_array_equal(kernels.pava_decreasing(once), once)


@given(
    hnp.arrays(np.float64, 8, elements=finite),
    hnp.arrays(np.float64, 8, elements=st.floats(0.1, 10)),
)
def test_pava_weighted_preserves_weighted_mean(y, w):
    fit = kernels.pava_decreasing(y, w)
    assert np.isclose((fit * w).sum(), (y * w).sum(), rtol=1e-9, atol=1e-6)


@needs_numba
@given(hnp.arrays(np.float64, st.integers(1, 80), elements=finite))
def test_pava_backends_agree(y):
    w = np.ones_like(y)
    np.testing.assert_allclose(kernels.pava_decreasing_numba(y, w), kernels.pava_decreasing_numpy(y, w), rtol=1e-12, atol=1e-9)


# ---------------------------------------------------------------------------
# Profile accumulation
# ---------------------------------------------------------------------------


@st.composite
def records(draw):
    n = draw(st.integers(1, 40))
    dt = np.array(draw(st.lists(st.integers(1, 30), min_size=n, max_size=n)), dtype=float) / 4.0
    speeds = np.array(draw(st.lists(st.floats(0, 13, allow_nan=False), min_size=n, max_size=n)))
    return dt, speeds


GRID = np.linspace(0.0, 12.5, 51)


@given(records())
def test_profile_accumulate_matches_double_loop_exactly(rec):
    dt, speeds = rec
    offsets = np.concatenate(([0.0], np.cumsum(dt)))
    v = np.concatenate(([0.0], speeds))
    np.testing.assert_array_equal(kernels.profile_accumulate(dt, speeds, GRID), profile_double_loop(offsets, v, GRID))


@needs_numba
@given(records())
def test_profile_backends_bit_identical(rec):
    dt, speeds = rec
    a = kernels.profile_accumulate_numba(dt, speeds, GRID)
    b = kernels.profile_accumulate_numpy(dt, speeds, GRID)
    np.testing.assert_array_equal(a, b)


# ---------------------------------------------------------------------------
# Coordinate descent
# ---------------------------------------------------------------------------


@pytest.mark.parametrize("impl", ["numpy", pytest.param("numba", marks=needs_numba)])
def test_cd_orthonormal_single_sweep(impl):
    rng = np.random.default_rng(3)
    Q, _ = np.linalg.qr(rng.normal(size=(10, 4)))
    y = rng.normal(size=10)
    fn = getattr(kernels, f"coordinate_descent_{impl}")
    lam1, lam2 = 0.4, 0.7
    beta, sweeps, delta = fn(Q.T @ Q, Q.T @ y, lam1, lam2, np.zeros(4), 1e-12, 100)
    b = Q.T @ y
    expected = np.sign(b) * np.maximum(np.abs(b) - lam1 / 2, 0) / (1 + lam2)
    np.testing.assert_allclose(beta, expected, atol=1e-12)
    assert sweeps <= 3 and delta <= 1e-12


def test_cd_sweeps_never_increase_objective():
    X, y, G, c = _gram_problem(0)
    lam1, lam2 = 1.5, 0.3
    beta = np.zeros(G.shape[0])
    last = objective(X, y, beta, lam1, lam2)
    for _ in range(40):
        beta, _, _ = kernels.coordinate_descent(G, c, lam1, lam2, beta, 0.0, 1)
        now = objective(X, y, beta, lam1, lam2)
        assert now <= last + 1e-12
        last = now


def test_cd_reports_unconverged_when_sweeps_exhausted():
    X, y, G, c = _gram_problem(1)
    _, sweeps, delta = kernels.coordinate_descent(G, c, 1e-6, 0.0, np.zeros(G.shape[0]), 1e-300, 2)
    assert sweeps == 2 and delta > 0


def test_cd_warm_start_at_optimum_stops_after_one_sweep():
    X, y, G, c = _gram_problem(2)
    beta, _, _ = kernels.coordinate_descent(G, c, 0.5, 0.1, np.zeros(G.shape[0]), 1e-14, 10_000)
    again, sweeps, _ = kernels.coordinate_descent(G, c, 0.5, 0.1, beta, 1e-10, 10_000)
    assert sweeps == 1
    np.testing.assert_allclose(again, beta, atol=1e-10)


@needs_numba
@given(st.integers(0, 10_000), st.floats(0, 5), st.floats(0, 5))
def test_cd_backends_agree(seed, lam1, lam2):
    _, _, G, c = _gram_problem(seed)
    b0 = np.zeros(G.shape[0])
    a, sa, _ = kernels.coordinate_descent_numba(G, c, lam1, lam2, b0, 1e-10, 10_000)
    b, sb, _ = kernels.coordinate_descent_numpy(G, c, lam1, lam2, b0, 1e-10, 10_000)
    np.testing.assert_allclose(a, b, rtol=1e-9, atol=1e-9)
