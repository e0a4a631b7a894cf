"""Numerical kernels shared by the model families and the permutation tests.

Everything here is a pure function of its inputs.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Callable

import numpy as np


@dataclass(frozen=True)
class ObjectiveBundle:
    """Objective value, gradient and Hessian at a single parameter point."""

    value: float
    gradient: np.ndarray
    hessian: np.ndarray

    def __post_init__(self):
        g = np.asarray(self.gradient, dtype=float).reshape(-1)
        h = np.asarray(self.hessian, dtype=float).reshape(g.size, g.size)
        object.__setattr__(self, "gradient", g)
        object.__setattr__(self, "hessian", 0.5 * (h + h.T))

    @property
    def dimension(self) -> int:
        return self.gradient.size


@dataclass(frozen=True)
class OptimResult:
    theta_hat: np.ndarray
    converged: bool
    iterations: int
    grad_norm: float
    value: float
    message: str = ""


def newton_maximize(
    bundle_fn: Callable[[np.ndarray], ObjectiveBundle],
    init,
    tol: float = 1e-8,
    max_iter: int = 100,
    max_halvings: int = 30,
    max_abs: float = 30.0,
) -> OptimResult:
    """Maximize a smooth objective by Newton-Raphson with step halving.

    Converges when the gradient max-norm drops to ``tol`` or the relative
    change of the objective falls below 1e-12. If the Hessian is not negative
    definite a (scaled) gradient step is taken instead. Parameters leaving the
    box ``|theta| <= max_abs`` are treated as divergence and reported with
    ``converged=False``.
    """
    theta = np.array(init, dtype=float).reshape(-1)
    b = bundle_fn(theta)
    if not np.isfinite(b.value) or not np.all(np.isfinite(b.gradient)):
        raise ValueError("objective is not finite at the initial value")

    for it in range(max_iter + 1):
        gnorm = float(np.max(np.abs(b.gradient))) if b.dimension else 0.0
        if gnorm <= tol:
            return OptimResult(theta, True, it, gnorm, b.value)
        if it == max_iter:
            break

        step = _newton_direction(b)
        accepted = False
        for _ in range(max_halvings + 1):
            cand = theta + step
            cb = bundle_fn(cand)
            if np.isfinite(cb.value) and cb.value >= b.value:
                accepted = True
                break
            step = 0.5 * step
        if not accepted:
            # no ascent possible in the search direction: at the optimum up to round-off
            return OptimResult(theta, gnorm <= np.sqrt(tol), it, gnorm, b.value,
                               "line search failed")

        rel = abs(cb.value - b.value) / max(1.0, abs(b.value))
        theta, b = cand, cb
        if np.max(np.abs(theta)) > max_abs:
            gnorm = float(np.max(np.abs(b.gradient)))
            return OptimResult(theta, False, it + 1, gnorm, b.value, "divergence")
        if rel <= 1e-12:
            gnorm = float(np.max(np.abs(b.gradient))) if b.dimension else 0.0
            return OptimResult(theta, True, it + 1, gnorm, b.value)

    gnorm = float(np.max(np.abs(b.gradient))) if b.dimension else 0.0
    return OptimResult(theta, False, max_iter, gnorm, b.value, "max_iter reached")


def _newton_direction(b: ObjectiveBundle) -> np.ndarray:
    neg_h = -b.hessian
    try:
        chol = np.linalg.cholesky(neg_h)
    except np.linalg.LinAlgError:
        chol = None
    if chol is not None:
        y = np.linalg.solve(chol, b.gradient)
        step = np.linalg.solve(chol.T, y)
        if np.all(np.isfinite(step)):
            return step
    g = b.gradient
    scale = np.max(np.abs(g))
    return g / scale if scale > 1.0 else g.copy()


def pseudo_inverse(M, rank_tol: float = 1e-10) -> tuple[np.ndarray, int]:
    """Moore-Penrose inverse of a symmetric PSD matrix via eigendecomposition.

    Eigenvalues at or below ``rank_tol * lambda_max`` are treated as zero.
    Returns the inverse and the number of retained eigenvalues.
    """
    M = np.atleast_2d(np.asarray(M, dtype=float))
    M = 0.5 * (M + M.T)
    if M.size == 0:
        return M.copy(), 0
    lam, vec = np.linalg.eigh(M)
    lmax = lam.max()
    if not lmax > 0:
        return np.zeros_like(M), 0
    keep = lam > rank_tol * lmax
    v = vec[:, keep]
    return (v / lam[keep]) @ v.T, int(keep.sum())


def _steps(x: np.ndarray, h: float) -> np.ndarray:
    return h * np.maximum(1.0, np.abs(x))


def finite_diff_gradient(f: Callable[[np.ndarray], float], x, h: float = 1e-5) -> np.ndarray:
    """Central-difference gradient with step ``h * max(1, |x_k|)``."""
    x = np.asarray(x, dtype=float).reshape(-1)
    steps = _steps(x, h)
    out = np.empty_like(x)
    for k in range(x.size):
        e = np.zeros_like(x)
        e[k] = steps[k]
        fp, fm = f(x + e), f(x - e)
        if not (np.isfinite(fp) and np.isfinite(fm)):
            raise ValueError(f"non-finite evaluation at coordinate {k}")
        out[k] = (fp - fm) / (2.0 * steps[k])
    return out


def finite_diff_jacobian(f: Callable[[np.ndarray], np.ndarray], x, h: float = 1e-5) -> np.ndarray:
    """Central-difference Jacobian of a vector-valued function, shape (len(f(x)), len(x))."""
    x = np.asarray(x, dtype=float).reshape(-1)
    steps = _steps(x, h)
    cols = []
    for k in range(x.size):
        e = np.zeros_like(x)
        e[k] = steps[k]
        fp = np.asarray(f(x + e), dtype=float)
        fm = np.asarray(f(x - e), dtype=float)
        if not (np.all(np.isfinite(fp)) and np.all(np.isfinite(fm))):
            raise ValueError(f"non-finite evaluation at coordinate {k}")
        cols.append((fp - fm) / (2.0 * steps[k]))
    return np.column_stack(cols)
