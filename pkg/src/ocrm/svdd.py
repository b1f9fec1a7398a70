"""Support vector data description.

The primal problem is the smallest sphere (centre ``a``, radius ``r``) that
encloses the data up to slacks weighted by ``c``. It is solved through its
dual

    maximise   sum_i a_i K_ii - sum_ij a_i a_j K_ij
    subject to 0 <= a_i <= c,  sum_i a_i = 1

with pairwise (SMO) updates that keep every iterate feasible.
"""
from __future__ import annotations

import itertools
import logging
from dataclasses import dataclass, field

import numpy as np

from . import kernels

log = logging.getLogger(__name__)

# alphas within this relative distance of 0 or c are treated as at the bound;
# rounding in sum-preserving updates can leave c - 1 ulp behind
BOUND_RTOL = 1e-10


class SvddError(ValueError):
    pass


class InfeasibleError(SvddError):
    """``c < 1/n``: no alpha can satisfy both the box and the simplex constraint."""


class EmptyDatasetError(SvddError):
    pass


class DataError(SvddError):
    pass


class DimensionMismatch(SvddError):
    pass


@dataclass(frozen=True)
class KernelSpec:
    kind: str = "linear"
    gamma: float = 1.0

    def __post_init__(self):
        if self.kind not in ("linear", "rbf"):
            raise ValueError(f"unknown kernel {self.kind!r}")
        if self.kind == "rbf" and not self.gamma > 0:
            raise ValueError("rbf gamma must be positive")

    def __call__(self, a, b):
        a = np.atleast_2d(a)
        b = np.atleast_2d(b)
        if self.kind == "linear":
            return a @ b.T
        sq = (a * a).sum(1)[:, None] + (b * b).sum(1)[None, :] - 2.0 * (a @ b.T)
        return np.exp(-self.gamma * np.maximum(sq, 0.0))

    def diag(self, a):
        a = np.atleast_2d(a)
        if self.kind == "linear":
            return (a * a).sum(1)
        return np.ones(a.shape[0])


@dataclass
class SvddModel:
    support_vectors: np.ndarray
    alphas: np.ndarray
    c: float
    kernel: KernelSpec
    center_norm2: float
    r2: float
    indices: np.ndarray = field(default=None)
    dual_objective: float = float("nan")
    n_iter: int = 0
    converged: bool = True

    @property
    def dim(self):
        return self.support_vectors.shape[1]

    @property
    def center(self):
        """Explicit centre; only defined for the linear kernel."""
        if self.kernel.kind != "linear":
            raise AttributeError("centre is implicit for non-linear kernels")
        return self.alphas @ self.support_vectors

    def dist2(self, x):
        x = np.asarray(x, dtype=np.float64)
        single = x.ndim == 1
        x = np.atleast_2d(x)
        if x.shape[1] != self.dim:
            raise DimensionMismatch(f"expected {self.dim}-d input, got {x.shape[1]}")
        if self.kernel.kind == "linear":
            diff = x - self.center
            d2 = (diff * diff).sum(1)
        else:
            d2 = self.kernel.diag(x) - 2.0 * (self.kernel(x, self.support_vectors) @ self.alphas) + self.center_norm2
        return d2[0] if single else d2

    def score(self, x):
        """Squared distance to the centre minus r^2; positive means outside."""
        return self.dist2(x) - self.r2

    @property
    def bounded(self):
        return self.alphas >= self.c * (1 - BOUND_RTOL)


def _check(features, c):
    x = np.asarray(features, dtype=np.float64)
    if x.ndim != 2 or x.shape[0] == 0:
        raise EmptyDatasetError("SVDD needs at least one sample")
    if not np.all(np.isfinite(x)):
        raise DataError("features contain NaN or Inf")
    n = x.shape[0]
    if c * n < 1.0 - 1e-12:
        raise InfeasibleError(f"c={c} < 1/n={1.0 / n:.6g}; constraints cannot be met")
    return x


def gram(x, kernel):
    """Kernel matrix; linear kernels are evaluated on mean-centred data."""
    if kernel.kind == "linear":
        xc = x - x.mean(axis=0)
        return np.ascontiguousarray(xc @ xc.T)
    return np.ascontiguousarray(kernel(x, x))


def dual_objective(K, alpha):
    return float(alpha @ np.diag(K) - alpha @ K @ alpha)


def solve_dual(K, c, tol=1e-6, max_iter=None):
    """Run SMO on a precomputed Gram matrix. Returns ``(alpha, n_iter, gap)``."""
    n = K.shape[0]
    if c * n < 1.0 - 1e-12:
        raise InfeasibleError(f"c={c} < 1/n={1.0 / n:.6g}")
    K = np.ascontiguousarray(K, dtype=np.float64)
    alpha = np.full(n, 1.0 / n)
    if c < 1.0 / n:
        alpha[:] = c  # c == 1/n up to rounding
    grad = 2.0 * (K @ alpha) - np.diag(K)
    max_iter = 100 * n if max_iter is None else max_iter
    n_iter, gap = kernels.smo_solve(K, float(c), float(tol), int(max_iter), alpha, grad)
    return alpha, int(n_iter), float(gap)


def _radius2(K, alpha, c):
    grad = 2.0 * (K @ alpha) - np.diag(K)
    aka = float(alpha @ K @ alpha)
    d2 = -grad + aka
    at_zero = alpha <= c * BOUND_RTOL
    at_c = alpha >= c * (1 - BOUND_RTOL)
    free = ~(at_zero | at_c)
    if free.any():
        return max(float(d2[free].mean()), 0.0)
    inside = d2[at_zero]
    outside = d2[at_c]
    lo = inside.max() if inside.size else None
    hi = outside.min() if outside.size else None
    if lo is None:
        return max(float(hi), 0.0)
    if hi is None:
        return max(float(lo), 0.0)
    return max(0.5 * float(lo + hi), 0.0)


def _build(x, K, alpha, c, kernel, n_iter=0, converged=True):
    sv = alpha > 0
    alphas = alpha[sv].copy()
    svs = x[sv].copy()
    if kernel.kind == "linear":
        a = alphas @ svs
        cn2 = float(a @ a)
    else:
        cn2 = float(alphas @ kernel(svs, svs) @ alphas)
    return SvddModel(
        support_vectors=svs,
        alphas=alphas,
        c=float(c),
        kernel=kernel,
        center_norm2=cn2,
        r2=_radius2(K, alpha, c),
        indices=np.flatnonzero(sv),
        dual_objective=dual_objective(K, alpha),
        n_iter=n_iter,
        converged=converged,
    )


def fit(features, c=0.1, kernel=None, tol=1e-6, max_iter=None):
    """Fit the hypersphere to ``features[n, d]``."""
    kernel = kernel or KernelSpec()
    x = _check(features, c)
    K = gram(x, kernel)
    alpha, n_iter, gap = solve_dual(K, c, tol, max_iter)
    converged = gap <= tol
    if not converged:
        log.warning("SMO stopped after %d iterations with KKT gap %.3g > tol %.3g", n_iter, gap, tol)
    return _build(x, K, alpha, c, kernel, n_iter, converged)


def oracle_fit(features, c=0.1, kernel=None):
    """Exact dual solution by enumerating active sets; for n <= 8 only."""
    kernel = kernel or KernelSpec()
    x = _check(features, c)
    n = x.shape[0]
    if n > 8:
        raise ValueError("oracle_fit is limited to n <= 8")
    K = gram(x, kernel)
    alpha = oracle_alpha(K, c)
    return _build(x, K, alpha, c, kernel)


def oracle_alpha(K, c):
    n = K.shape[0]
    d = np.diag(K)
    best, best_obj = None, np.inf
    max_bound = int(np.floor(1.0 / c + 1e-12))
    for state in itertools.product((0, 1, 2), repeat=n):  # 0: zero, 1: at c, 2: free
        at_c = [i for i, s in enumerate(state) if s == 1]
        if len(at_c) > max_bound:
            continue
        free = [i for i, s in enumerate(state) if s == 2]
        alpha = np.zeros(n)
        alpha[at_c] = c
        if free:
            m = len(free)
            A = np.zeros((m + 1, m + 1))
            A[:m, :m] = 2.0 * K[np.ix_(free, free)]
            A[:m, m] = 1.0
            A[m, :m] = 1.0
            rhs = np.empty(m + 1)
            rhs[:m] = d[free] - 2.0 * c * K[np.ix_(free, at_c)].sum(axis=1)
            rhs[m] = 1.0 - c * len(at_c)
            sol, *_ = np.linalg.lstsq(A, rhs, rcond=None)
            if np.abs(A @ sol - rhs).max() > 1e-9:
                continue
            af = sol[:m]
            if af.min() < -1e-12 or af.max() > c + 1e-12:
                continue
            alpha[free] = np.clip(af, 0.0, c)
        elif abs(alpha.sum() - 1.0) > 1e-12:
            continue
        obj = float(alpha @ K @ alpha - d @ alpha)
        if obj < best_obj - 1e-15:
            best, best_obj = alpha, obj
    return best


def kkt_residual(model, features):
    """Largest violation of the optimality conditions on the training features."""
    x = np.asarray(features, dtype=np.float64)
    alpha = np.zeros(x.shape[0])
    alpha[model.indices] = model.alphas
    d2 = model.dist2(x)
    r2 = model.r2
    c = model.c
    viol = np.where(alpha <= c * BOUND_RTOL, np.maximum(d2 - r2, 0.0),
                    np.where(alpha >= c * (1 - BOUND_RTOL), np.maximum(r2 - d2, 0.0), np.abs(d2 - r2)))
    feas = max(abs(alpha.sum() - 1.0), max(-alpha.min(), 0.0), max(alpha.max() - c, 0.0))
    return float(max(viol.max(), feas))


def score(model, x):
    return model.score(x)
