"""Elastic net by cyclic coordinate descent, parameterised by L1-norm fraction.

The naive objective on standardised covariates ``Z`` and centred
response ``y`` is::

    |y - Z b|^2 + lambda2 * |b|_2^2 + lambda1 * |b|_1

Columns of ``Z`` are centred and scaled to unit Euclidean norm. The L1
strength is given as the fraction ``s`` of the L1 norm of the
``lambda1 = 0`` solution; ``lambda1`` itself is found by bisection on the
(monotone) norm curve. Reported coefficients come both naive and
rescaled by ``1 + lambda2``, mapped back to the original units.
"""

from __future__ import annotations

import csv
import math
from dataclasses import dataclass, field
from typing import IO, Sequence

import numpy as np

from .errors import ConvergenceError
from .kernels import coordinate_descent

DEFAULT_TOL = 1e-8
DEFAULT_MAX_ITER = 100_000

# lambda2 = 0 with rank-deficient Z has no unique lambda1 = 0 solution;
# the reference norm is then taken at this fraction of lambda_max.
RANK_DEFICIENT_LAMBDA_RATIO = 1e-3
_PATH_POINTS = 24
_BISECTION_STEPS = 200
_SWEEP_CHUNK = 200


@dataclass(eq=False)
class ElasticNetProblem:
    X: np.ndarray
    y: np.ndarray
    lambda2: float = 0.0
    l1_fraction: float = 1.0
    names: Sequence[str] | None = None
    standardize: bool = True

    def __post_init__(self):
        self.X = np.atleast_2d(np.asarray(self.X, dtype=np.float64))
        self.y = np.asarray(self.y, dtype=np.float64).ravel()
        n, p = self.X.shape
        if n < 1 or p < 1:
            raise ValueError(f"need n >= 1 and p >= 1, got {self.X.shape}")
        if self.y.size != n:
            raise ValueError(f"y has {self.y.size} entries for {n} rows")
        if not self.lambda2 >= 0:
            raise ValueError(f"lambda2 must be >= 0, got {self.lambda2}")
        if not 0.0 <= self.l1_fraction <= 1.0:
            raise ValueError(f"l1_fraction must lie in [0, 1], got {self.l1_fraction}")
        if self.names is None:
            self.names = [f"x{j}" for j in range(p)]
        elif len(self.names) != p:
            raise ValueError("names must match the number of columns")


@dataclass(eq=False)
class ElasticNetFit:
    names: list
    coef: np.ndarray
    coef_rescaled: np.ndarray
    intercept: float
    intercept_rescaled: float
    beta_std: np.ndarray
    lambda1: float
    lambda2: float
    l1_fraction: float
    sweeps: int
    kkt_violation: float
    dropped: list = field(default_factory=list)

    @property
    def active(self) -> list[int]:
        return [int(j) for j in np.flatnonzero(self.coef)]

    def predict(self, X, rescaled: bool = True) -> np.ndarray:
        X = np.atleast_2d(np.asarray(X, dtype=np.float64))
        if rescaled:
            return self.intercept_rescaled + X @ self.coef_rescaled
        return self.intercept + X @ self.coef

    def coefficients(self, rescaled: bool = True) -> dict:
        values = self.coef_rescaled if rescaled else self.coef
        return dict(zip(self.names, values.tolist()))


@dataclass(eq=False)
class SolutionPath:
    fractions: np.ndarray
    fits: list

    def coefficient_matrix(self, rescaled: bool = True) -> np.ndarray:
        return np.vstack([f.coef_rescaled if rescaled else f.coef for f in self.fits])

    def write_csv(self, fh: IO[str], rescaled: bool = True) -> None:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["fraction", "coefficient_name", "value"])
        for s, fit in zip(self.fractions.tolist(), self.fits):
            values = fit.coef_rescaled if rescaled else fit.coef
            for name, v in zip(fit.names, values.tolist()):
                w.writerow([repr(s), name, repr(v)])


# ---------------------------------------------------------------------------
# Standardised problem in Gram form
# ---------------------------------------------------------------------------


class _Standardized:
    def __init__(self, X, y, standardize=True):
        n, p = X.shape
        if standardize:
            self.keep = np.ptp(X, axis=0) > 0
            self.x_mean = X.mean(axis=0)
            self.y_mean = float(y.mean())
            Xc = X[:, self.keep] - self.x_mean[self.keep]
            scale = np.sqrt((Xc * Xc).sum(axis=0))
            self.scale = np.ones(p)
            self.scale[self.keep] = scale
            self.Z = Xc / scale
            self.yc = y - self.y_mean
        else:
            self.keep = np.ones(p, dtype=bool)
            self.x_mean = np.zeros(p)
            self.y_mean = 0.0
            self.scale = np.ones(p)
            self.Z = X
            self.yc = y
        self.gram = self.Z.T @ self.Z
        self.corr = self.Z.T @ self.yc
        self.yy = float(self.yc @ self.yc)

    def to_original(self, beta):
        coef = np.zeros(self.keep.size)
        coef[self.keep] = beta / self.scale[self.keep]
        return coef, self.y_mean - float(self.x_mean @ coef)


class _GramSolver:
    """Coordinate descent on a fixed (G, c, lambda2) with exact active-set polish."""

    def __init__(self, gram, corr, yy, lambda2, tol, max_iter):
        self.gram = gram
        self.corr = corr
        self.yy = yy
        self.lam2 = float(lambda2)
        self.tol = tol
        self.max_iter = max_iter
        self.p = corr.size
        self.lam_max = 2.0 * float(np.max(np.abs(corr))) if self.p else 0.0
        self.sweeps = 0
        scale = max(1.0, float(np.max(np.abs(corr))) if self.p else 1.0)
        self.kkt_tol = 1e-9 * scale

    def objective(self, beta, lam1):
        return (
            self.yy
            - 2.0 * float(self.corr @ beta)
            + float(beta @ self.gram @ beta)
            + self.lam2 * float(beta @ beta)
            + lam1 * float(np.abs(beta).sum())
        )

    def gradient(self, beta):
        # half the negative gradient of the smooth part
        return self.corr - self.gram @ beta - self.lam2 * beta

    def kkt_violation(self, beta, lam1):
        """Largest violation of the stationarity conditions, on the 2*x'r scale."""
        g = 2.0 * self.gradient(beta)
        active = beta != 0
        viol = np.zeros(self.p)
        viol[active] = np.abs(g[active] - lam1 * np.sign(beta[active]))
        viol[~active] = np.maximum(np.abs(g[~active]) - lam1, 0.0)
        return float(viol.max()) if self.p else 0.0

    def _pattern_solution(self, active, signs, lam1):
        idx = np.flatnonzero(active)
        if idx.size == 0:
            return np.zeros(self.p)
        M = self.gram[np.ix_(idx, idx)] + self.lam2 * np.eye(idx.size)
        try:
            b = np.linalg.solve(M, self.corr[idx] - 0.5 * lam1 * signs[idx])
        except np.linalg.LinAlgError:
            return None
        beta = np.zeros(self.p)
        beta[idx] = b
        return beta

    def _valid(self, beta, active, signs, lam1):
        if beta is None or not np.all(np.isfinite(beta)):
            return False
        if np.any(np.sign(beta[active]) != signs[active]):
            return False
        g = self.gradient(beta)
        return bool(np.all(np.abs(g[~active]) <= 0.5 * lam1 + self.kkt_tol))

    def polish(self, beta, lam1):
        active = beta != 0
        signs = np.sign(beta)
        cand = self._pattern_solution(active, signs, lam1)
        if self._valid(cand, active, signs, lam1):
            return cand
        return beta

    def solve(self, lam1, warm=None):
        if self.p == 0:
            return np.zeros(0)
        if lam1 >= self.lam_max:
            return np.zeros(self.p)
        beta = np.zeros(self.p) if warm is None else warm
        remaining = self.max_iter
        while True:
            chunk = min(remaining, _SWEEP_CHUNK)
            beta, sweeps, delta = coordinate_descent(self.gram, self.corr, lam1, self.lam2, beta, self.tol, chunk)
            self.sweeps += sweeps
            remaining -= sweeps
            if delta <= self.tol:
                return self.polish(beta, lam1)
            # ill-conditioned Gram: finish with exact active-set pivots
            exact = self.feature_sign(beta, lam1)
            if exact is None:
                exact = self.homotopy(lam1)
            if exact is not None:
                return exact
            if remaining <= 0:
                violation = self.kkt_violation(beta, lam1)
                raise ConvergenceError(f"coordinate descent did not converge in {self.max_iter} sweeps", violation)

    def feature_sign(self, beta, lam1):
        """Feature-sign search from ``beta``; None if it stalls or a pattern is singular."""
        x = beta.copy()
        active = x != 0
        theta = np.sign(x)
        current = self.objective(x, lam1)
        for _ in range(10 * self.p + 10):
            g = self.gradient(x)
            viol = np.where(active, -np.inf, np.abs(g) - 0.5 * lam1)
            j = int(np.argmax(viol))
            if viol[j] > self.kkt_tol:
                active[j] = True
                theta[j] = np.sign(g[j])
            target = self._pattern_solution(active, theta, lam1)
            if target is None or not np.all(np.isfinite(target)):
                return None
            if self._valid(target, active, theta, lam1):
                return target
            # candidates: the pattern optimum and every zero crossing on the way
            best, best_obj = None, current
            steps = [(1.0, None)]
            crossing = active & (x != 0) & (np.sign(target) != np.sign(x))
            for i in np.flatnonzero(crossing):
                steps.append((x[i] / (x[i] - target[i]), i))
            for t, i in steps:
                z = x + t * (target - x)
                if i is not None:
                    z[i] = 0.0
                obj = self.objective(z, lam1)
                if obj < best_obj:
                    best, best_obj = z, obj
            if best is None:
                return None
            x, current = best, best_obj
            active = x != 0
            theta = np.sign(x)
        return None

    def homotopy(self, lam1):
        """Follow the piecewise-linear path from ``lam_max`` down to ``lam1``.

        On a fixed active set A with signs s, ``b_A(l) = u - (l/2) w`` where
        ``M u = c_A`` and ``M w = s_A``.  Steps end where an active
        coefficient reaches zero or an inactive gradient reaches ``l/2``.
        Returns None if a pattern matrix is singular or the result fails KKT.
        """
        if lam1 >= self.lam_max:
            return np.zeros(self.p)
        signs = np.zeros(self.p)
        j = int(np.argmax(np.abs(self.corr)))
        signs[j] = np.sign(self.corr[j])
        active = np.zeros(self.p, dtype=bool)
        active[j] = True
        lam = self.lam_max
        barred = entered = j
        for _ in range(20 * self.p + 20):
            idx = np.flatnonzero(active)
            M = self.gram[np.ix_(idx, idx)] + self.lam2 * np.eye(idx.size)
            try:
                u = np.linalg.solve(M, self.corr[idx])
                w = np.linalg.solve(M, signs[idx])
            except np.linalg.LinAlgError:
                return None
            ceiling = lam * (1.0 - 1e-12)
            event, kind, k = lam1, None, -1
            with np.errstate(divide="ignore", invalid="ignore"):
                hit = 2.0 * u / w
            for pos in range(idx.size):
                # a variable that just entered sits at zero; rounding must not drop it at once
                fresh = idx[pos] == entered and hit[pos] > lam * (1.0 - 1e-6)
                if lam1 < hit[pos] < ceiling and hit[pos] > event and not fresh:
                    event, kind, k = hit[pos], "drop", idx[pos]
            inactive = np.flatnonzero(~active)
            if inactive.size:
                a = self.corr[inactive] - self.gram[np.ix_(inactive, idx)] @ u
                b = self.gram[np.ix_(inactive, idx)] @ w
                for sign in (1.0, -1.0):
                    with np.errstate(divide="ignore", invalid="ignore"):
                        l = 2.0 * a / (sign - b)
                    for pos in np.flatnonzero((l > lam1) & (l < ceiling)):
                        # likewise a variable just dropped cannot re-enter at its own breakpoint
                        echo = inactive[pos] == barred and l[pos] > lam * (1.0 - 1e-6)
                        if l[pos] > event and not echo:
                            event, kind, k = l[pos], sign, inactive[pos]
            if kind is None:
                beta = np.zeros(self.p)
                beta[idx] = u - 0.5 * lam1 * w
                return beta if self._valid(beta, active, signs, lam1) else None
            lam = event
            if kind == "drop":
                active[k] = False
                signs[k] = 0.0
                barred, entered = k, -1
            else:
                active[k] = True
                signs[k] = kind
                barred, entered = -1, k
            if not active.any():
                return None
        return None

    def segment_solve(self, beta_pattern, target, lo, hi):
        """Exact lambda1 in [lo, hi] with |b|_1 == target, if the active pattern holds there."""
        active = beta_pattern != 0
        signs = np.sign(beta_pattern)
        idx = np.flatnonzero(active)
        if idx.size == 0:
            return None
        M = self.gram[np.ix_(idx, idx)] + self.lam2 * np.eye(idx.size)
        try:
            u = np.linalg.solve(M, self.corr[idx])
            w = np.linalg.solve(M, signs[idx])
        except np.linalg.LinAlgError:
            return None
        sw = float(signs[idx] @ w)
        if not sw > 0:
            return None
        lam = 2.0 * (float(signs[idx] @ u) - target) / sw
        slack = 1e-12 * max(self.lam_max, 1.0)
        if not (lo - slack <= lam <= hi + slack):
            return None
        lam = min(max(lam, lo, 0.0), hi)
        beta = np.zeros(self.p)
        beta[idx] = u - 0.5 * lam * w
        if self._valid(beta, active, signs, lam):
            return lam, beta
        return None


def _strictly_convex(std, lambda2):
    if lambda2 > 0:
        return True
    n, p = std.Z.shape
    return p <= n and np.linalg.matrix_rank(std.Z) == p


def _fraction_fits(std, lambda2, fractions, tol, max_iter):
    """(lambda1, beta_std) for each requested L1 fraction."""
    solver = _GramSolver(std.gram, std.corr, std.yy, lambda2, tol, max_iter)
    p = std.corr.size
    lam_max = solver.lam_max
    if p == 0 or lam_max == 0.0:
        return [(0.0, np.zeros(p)) for _ in fractions], solver

    lam_ref = 0.0 if _strictly_convex(std, lambda2) else RANK_DEFICIENT_LAMBDA_RATIO * lam_max
    lo_end = lam_ref if lam_ref > 0 else 1e-6 * lam_max
    lams = list(lam_max * np.geomspace(1.0, lo_end / lam_max, _PATH_POINTS))
    if lam_ref == 0.0:
        lams.append(0.0)
    betas = [np.zeros(p)]
    for lam in lams[1:]:
        betas.append(solver.solve(lam, betas[-1]))
    norms = [float(np.abs(b).sum()) for b in betas]
    ref_norm = norms[-1]

    out = []
    for s in fractions:
        s = float(s)
        if s <= 0.0 or ref_norm == 0.0:
            out.append((lam_max, np.zeros(p)))
            continue
        if s >= 1.0:
            out.append((lams[-1], betas[-1].copy()))
            continue
        target = s * ref_norm
        k = int(np.searchsorted(norms, target))  # norms ascend along the descending path
        if norms[k] == target:
            out.append((lams[k], betas[k].copy()))
            continue
        out.append(_bisect(solver, target, lams[k], betas[k], lams[k - 1], betas[k - 1]))
    return out, solver


def _bisect(solver, target, lam_lo, beta_lo, lam_hi, beta_hi):
    """Bisection on lambda1 over [lam_lo, lam_hi]; |b(lam_lo)|_1 > target > |b(lam_hi)|_1."""
    width_floor = 1e-15 * max(solver.lam_max, 1.0)
    for _ in range(_BISECTION_STEPS):
        # inside a segment with a fixed active pattern the norm is linear in lambda1
        for pattern in (beta_lo, beta_hi):
            hit = solver.segment_solve(pattern, target, lam_lo, lam_hi)
            if hit is not None:
                return hit
        if lam_hi - lam_lo <= width_floor:
            break
        mid = 0.5 * (lam_lo + lam_hi)
        beta_mid = solver.solve(mid, beta_lo)
        norm_mid = float(np.abs(beta_mid).sum())
        if norm_mid == target:
            return mid, beta_mid
        if norm_mid > target:
            lam_lo, beta_lo = mid, beta_mid
        else:
            lam_hi, beta_hi = mid, beta_mid
    n_lo = float(np.abs(beta_lo).sum())
    n_hi = float(np.abs(beta_hi).sum())
    if n_lo - target <= target - n_hi:
        return lam_lo, beta_lo
    return lam_hi, beta_hi


def _make_fit(std, solver, names, lam1, beta, lambda2, fraction):
    coef, intercept = std.to_original(beta)
    factor = 1.0 + lambda2
    coef_r = factor * coef
    beta_full = np.zeros(std.keep.size)
    beta_full[std.keep] = beta
    return ElasticNetFit(
        names=list(names),
        coef=coef,
        coef_rescaled=coef_r,
        intercept=intercept,
        intercept_rescaled=std.y_mean - float(std.x_mean @ coef_r),
        beta_std=beta_full,
        lambda1=float(lam1),
        lambda2=float(lambda2),
        l1_fraction=float(fraction),
        sweeps=solver.sweeps,
        kkt_violation=solver.kkt_violation(beta, lam1),
        dropped=[n for n, k in zip(names, std.keep) if not k],
    )


def solve(problem: ElasticNetProblem, tolerance: float = DEFAULT_TOL, max_iterations: int = DEFAULT_MAX_ITER) -> ElasticNetFit:
    """Fit one elastic net at the problem's ``(lambda2, l1_fraction)``."""
    std = _Standardized(problem.X, problem.y, problem.standardize)
    results, solver = _fraction_fits(std, problem.lambda2, [problem.l1_fraction], tolerance, max_iterations)
    lam1, beta = results[0]
    return _make_fit(std, solver, problem.names, lam1, beta, problem.lambda2, problem.l1_fraction)


def solve_lambda(
    X,
    y,
    lambda1: float,
    lambda2: float,
    standardize: bool = True,
    names=None,
    tolerance: float = DEFAULT_TOL,
    max_iterations: int = DEFAULT_MAX_ITER,
) -> ElasticNetFit:
    """Fit at an explicit ``lambda1`` (no fraction search)."""
    problem = ElasticNetProblem(X, y, lambda2, 1.0, names, standardize)
    std = _Standardized(problem.X, problem.y, standardize)
    solver = _GramSolver(std.gram, std.corr, std.yy, lambda2, tolerance, max_iterations)
    beta = solver.solve(lambda1)
    return _make_fit(std, solver, problem.names, lambda1, beta, lambda2, math.nan)


def solution_path(
    X,
    y,
    lambda2: float,
    fractions: Sequence[float],
    names=None,
    standardize: bool = True,
    tolerance: float = DEFAULT_TOL,
    max_iterations: int = DEFAULT_MAX_ITER,
) -> SolutionPath:
    """Fits at each L1 fraction (ascending), sharing one warm-started path."""
    fractions = np.asarray(fractions, dtype=np.float64)
    if fractions.ndim != 1 or fractions.size == 0:
        raise ValueError("fractions must be a non-empty 1-d sequence")
    if np.any(np.diff(fractions) < 0):
        raise ValueError("fractions must be sorted ascending")
    if fractions[0] < 0 or fractions[-1] > 1:
        raise ValueError("fractions must lie in [0, 1]")
    problem = ElasticNetProblem(X, y, lambda2, 1.0, names, standardize)
    std = _Standardized(problem.X, problem.y, standardize)
    results, solver = _fraction_fits(std, lambda2, fractions, tolerance, max_iterations)
    fits = [
        _make_fit(std, solver, problem.names, lam1, beta, lambda2, s)
        for s, (lam1, beta) in zip(fractions.tolist(), results)
    ]
    return SolutionPath(fractions=fractions, fits=fits)
