"""Hot numeric kernels with numba and pure-numpy implementations.

Every kernel exists twice: ``*_numba`` (explicit loops, compiled with
``@njit``) and ``*_numpy`` (vectorised numpy plus a thin Python loop
where the algorithm is inherently sequential). The module-level names
without suffix point at whichever backend ``MRENET_BACKEND`` selected.

Both variants accumulate in the same order so results agree to the last
bit for the profile kernel, and to rounding for the others.
"""

import numpy as np

from ._accel import USE_NUMBA, njit

__all__ = [
    "coordinate_descent",
    "coordinate_descent_numba",
    "coordinate_descent_numpy",
    "profile_accumulate",
    "profile_accumulate_numba",
    "profile_accumulate_numpy",
    "pava_decreasing",
    "pava_decreasing_numba",
    "pava_decreasing_numpy",
]


# ---------------------------------------------------------------------------
# Elastic net coordinate descent (covariance / Gram form)
# ---------------------------------------------------------------------------


def _cd_loop(gram, corr, lam1, lam2, beta0, tol, max_sweeps):
    p = beta0.shape[0]
    beta = beta0.copy()
    grad = corr.copy()
    for j in range(p):
        bj = beta[j]
        if bj != 0.0:
            for k in range(p):
                grad[k] -= gram[j, k] * bj
    half = 0.5 * lam1
    sweeps = 0
    delta_max = np.inf
    while sweeps < max_sweeps:
        delta_max = 0.0
        for j in range(p):
            old = beta[j]
            denom = gram[j, j] + lam2
            z = grad[j] + gram[j, j] * old
            if denom <= 0.0:
                new = 0.0
            elif z > half:
                new = (z - half) / denom
            elif z < -half:
                new = (z + half) / denom
            else:
                new = 0.0
            d = new - old
            if d != 0.0:
                for k in range(p):
                    grad[k] -= gram[j, k] * d
                beta[j] = new
                if abs(d) > delta_max:
                    delta_max = abs(d)
        sweeps += 1
        if delta_max <= tol:
            break
    return beta, sweeps, delta_max


coordinate_descent_numba = njit(_cd_loop)


def coordinate_descent_numpy(gram, corr, lam1, lam2, beta0, tol, max_sweeps):
    beta = beta0.copy()
    grad = corr - gram @ beta
    half = 0.5 * lam1
    diag = np.diag(gram).copy()
    sweeps = 0
    delta_max = np.inf
    while sweeps < max_sweeps:
        delta_max = 0.0
        for j in range(beta.shape[0]):
            old = beta[j]
            denom = diag[j] + lam2
            z = grad[j] + diag[j] * old
            if denom <= 0.0:
                new = 0.0
            else:
                new = np.sign(z) * max(abs(z) - half, 0.0) / denom
            d = new - old
            if d != 0.0:
                grad -= gram[j] * d
                beta[j] = new
                delta_max = max(delta_max, abs(d))
        sweeps += 1
        if delta_max <= tol:
            break
    return beta, sweeps, delta_max


def coordinate_descent(gram, corr, lam1, lam2, beta0, tol=1e-8, max_sweeps=100_000):
    """Cyclic coordinate descent on the naive elastic net objective.

    Minimises ``b'Gb - 2c'b + lam2*|b|_2^2 + lam1*|b|_1`` which equals
    ``|y - Xb|^2 + lam2*|b|^2 + lam1*|b|_1`` up to the constant ``y'y``
    when ``G = X'X`` and ``c = X'y``.

    Returns ``(beta, sweeps, last_max_change)``. Coordinates are visited
    in fixed index order.
    """
    gram = np.ascontiguousarray(gram, dtype=np.float64)
    corr = np.ascontiguousarray(corr, dtype=np.float64)
    beta0 = np.ascontiguousarray(beta0, dtype=np.float64)
    impl = coordinate_descent_numba if USE_NUMBA else coordinate_descent_numpy
    return impl(gram, corr, float(lam1), float(lam2), beta0, float(tol), int(max_sweeps))


# ---------------------------------------------------------------------------
# Observed training distribution profile
# ---------------------------------------------------------------------------


def _profile_loop(dt, speeds, grid):
    k = grid.shape[0]
    out = np.zeros(k)
    for j in range(dt.shape[0]):
        d = dt[j]
        v = speeds[j]
        for g in range(k):
            if grid[g] < v:
                out[g] += d
            else:
                break
    return out


profile_accumulate_numba = njit(_profile_loop)


def profile_accumulate_numpy(dt, speeds, grid):
    out = np.zeros(grid.shape[0])
    # number of grid points strictly below each speed
    upto = np.searchsorted(grid, speeds, side="left")
    for d, m in zip(dt, upto):
        if m:
            out[:m] += d
    return out


def profile_accumulate(dt, speeds, grid):
    """Sum of ``dt[j]`` over records with ``speeds[j] > grid[g]``, per grid point.

    ``grid`` must be ascending. Records are accumulated in input order.
    """
    dt = np.ascontiguousarray(dt, dtype=np.float64)
    speeds = np.ascontiguousarray(speeds, dtype=np.float64)
    grid = np.ascontiguousarray(grid, dtype=np.float64)
    impl = profile_accumulate_numba if USE_NUMBA else profile_accumulate_numpy
    return impl(dt, speeds, grid)


# ---------------------------------------------------------------------------
# Decreasing isotonic regression (pool adjacent violators)
# ---------------------------------------------------------------------------


def _pava_loop(y, w):
    n = y.shape[0]
    means = np.empty(n)
    weights = np.empty(n)
    counts = np.empty(n, dtype=np.int64)
    top = -1
    for i in range(n):
        top += 1
        means[top] = y[i]
        weights[top] = w[i]
        counts[top] = 1
        # decreasing fit: a block may not exceed its left neighbour
        while top > 0 and means[top - 1] < means[top]:
            wt = weights[top - 1] + weights[top]
            means[top - 1] = (weights[top - 1] * means[top - 1] + weights[top] * means[top]) / wt
            weights[top - 1] = wt
            counts[top - 1] += counts[top]
            top -= 1
    out = np.empty(n)
    pos = 0
    for b in range(top + 1):
        for _ in range(counts[b]):
            out[pos] = means[b]
            pos += 1
    return out


pava_decreasing_numba = njit(_pava_loop)


def pava_decreasing_numpy(y, w):
    means, weights, counts = [], [], []
    for yi, wi in zip(y.tolist(), w.tolist()):
        means.append(yi)
        weights.append(wi)
        counts.append(1)
        while len(means) > 1 and means[-2] < means[-1]:
            wt = weights[-2] + weights[-1]
            means[-2] = (weights[-2] * means[-2] + weights[-1] * means[-1]) / wt
            weights[-2] = wt
            counts[-2] += counts[-1]
            del means[-1], weights[-1], counts[-1]
    return np.repeat(np.asarray(means, dtype=np.float64), counts)


def pava_decreasing(y, w=None):
    """Weighted least-squares projection of ``y`` onto non-increasing sequences."""
    y = np.ascontiguousarray(y, dtype=np.float64)
    if w is None:
        w = np.ones_like(y)
    w = np.ascontiguousarray(w, dtype=np.float64)
    if y.shape != w.shape:
        raise ValueError("weights must match the sequence length")
    if y.size and not np.all(w > 0):
        raise ValueError("weights must be positive")
    if y.size <= 1:
        return y.copy()
    impl = pava_decreasing_numba if USE_NUMBA else pava_decreasing_numpy
    return impl(y, w)
