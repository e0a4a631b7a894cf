"""Normal-error models: the linear treatment model and the log-link GLM with offset."""

from __future__ import annotations

import numpy as np

from ..numerics import ObjectiveBundle, newton_maximize
from .base import FitError, ModelFit

LOG_2PI = np.log(2.0 * np.pi)


def _rows(rows, n):
    return np.arange(n) if rows is None else np.asarray(rows, dtype=int)


def _check_arms(x: np.ndarray, minimum: int = 2):
    n1 = int(np.sum(x == 1))
    n0 = int(np.sum(x == 0))
    if n0 < minimum or n1 < minimum:
        raise FitError(f"treatment effect inestimable: arm sizes {n0}/{n1}")


def _degenerate(rss: float, y: np.ndarray) -> bool:
    # exact fits: residuals are pure round-off
    scale = max(1.0, float(np.max(np.abs(y))))
    return rss <= y.size * (1e-10 * scale) ** 2


def linear_design(treatment, strata=None) -> np.ndarray:
    x = np.asarray(treatment, dtype=float)
    cols = [np.ones_like(x), x]
    if strata is not None:
        s = np.asarray(strata, dtype=float)
        cols.extend(s.reshape(x.size, -1).T)
    return np.column_stack(cols)


def linear_row_loglik(params, response, treatment, strata=None) -> np.ndarray:
    """Per-observation log-likelihood; ``params`` = (alpha, beta, gamma..., sigma2)."""
    X = linear_design(treatment, strata)
    coef, s2 = np.asarray(params[:-1]), params[-1]
    r = np.asarray(response, dtype=float) - X @ coef
    return -0.5 * (LOG_2PI + np.log(s2)) - 0.5 * r**2 / s2


def fit_linear_treatment(response, treatment, strata=None, rows=None) -> ModelFit:
    """Normal linear model ``y ~ alpha + beta * x + gamma' strata`` by least squares.

    Scores are the residuals divided by the ML error variance (intercept
    block) and the same times the treatment indicator (treatment block).
    Strata and variance columns are carried along but not tested.
    """
    response = np.asarray(response, dtype=float)
    rows = _rows(rows, response.size)
    y = response[rows]
    x = np.asarray(treatment, dtype=float)[rows]
    S = None if strata is None else np.asarray(strata, dtype=float).reshape(response.size, -1)[rows]
    _check_arms(x)
    X = linear_design(x, S)
    n, k = X.shape
    coef, _, rank, _ = np.linalg.lstsq(X, y, rcond=None)
    if rank < k:
        raise FitError("collinear design matrix")
    r = y - X @ coef
    rss = float(r @ r)
    s2 = rss / n
    names = ["alpha", "beta"] + [f"gamma{j + 1}" for j in range(k - 2)] + ["sigma2"]

    if _degenerate(rss, y):
        r = np.zeros_like(r)
        s2 = 0.0
        scores = np.zeros((n, k + 1))
        vcov = np.zeros((k + 1, k + 1))
        objective = -np.inf
    else:
        scores = np.column_stack([X * (r / s2)[:, None], -0.5 / s2 + 0.5 * r**2 / s2**2])
        vcov = np.zeros((k + 1, k + 1))
        vcov[:k, :k] = s2 * np.linalg.inv(X.T @ X)
        vcov[k, k] = 2.0 * s2**2 / n
        objective = 0.5 * n * (LOG_2PI + np.log(s2) + 1.0)

    return ModelFit(
        family="linear",
        param_names=tuple(names),
        params=np.append(coef, s2),
        vcov=vcov,
        scores=scores,
        score_names=tuple(names),
        alpha_cols=(0,),
        beta_cols=(1,),
        objective=float(objective),
        converged=True,
        rows=rows,
        treatment_params=("beta",),
        extra={"rss": rss},
    )


def gaussian_log_row_loglik(params, response, offset_log, treatment) -> np.ndarray:
    """Per-observation log-likelihood; ``params`` = (alpha, beta, sigma2)."""
    a, b, s2 = params
    mu = np.exp(np.asarray(offset_log) + a + b * np.asarray(treatment))
    r = np.asarray(response) - mu
    return -0.5 * (LOG_2PI + np.log(s2)) - 0.5 * r**2 / s2


def fit_gaussian_log(response, offset_log, treatment, rows=None, tol: float = 1e-8) -> ModelFit:
    """Normal GLM with log link and offset: ``E(y|x) = exp(offset + alpha + beta * x)``.

    The mean parameters are found by Newton-Raphson on the residual sum of
    squares; the error variance is its ML estimate RSS / n and is excluded
    from both score blocks.
    """
    response = np.asarray(response, dtype=float)
    rows = _rows(rows, response.size)
    y = response[rows]
    o = np.asarray(offset_log, dtype=float)[rows]
    x = np.asarray(treatment, dtype=float)[rows]
    _check_arms(x)
    if np.any(y <= 0):
        raise FitError("gaussian-log response must be positive")
    X = linear_design(x)
    n = y.size

    def bundle(theta):
        eta = np.clip(o + X @ theta, -700, 700)
        mu = np.exp(eta)
        r = y - mu
        g = X.T @ (r * mu)
        w = r * mu - mu**2
        return ObjectiveBundle(-0.5 * float(r @ r), g, (X * w[:, None]).T @ X)

    init = np.linalg.lstsq(X, np.log(y) - o, rcond=None)[0]
    res = newton_maximize(bundle, init, tol=tol)
    coef = res.theta_hat
    mu = np.exp(o + X @ coef)
    r = y - mu
    rss = float(r @ r)
    names = ("alpha", "beta", "sigma2")

    if _degenerate(rss, y):
        s2 = 0.0
        scores = np.zeros((n, 3))
        vcov = np.zeros((3, 3))
        objective = -np.inf
    else:
        s2 = rss / n
        scores = np.column_stack([X * (r * mu / s2)[:, None], -0.5 / s2 + 0.5 * r**2 / s2**2])
        info = (X * (mu**2 - r * mu)[:, None]).T @ X / s2
        vcov = np.zeros((3, 3))
        try:
            vcov[:2, :2] = np.linalg.inv(info)
        except np.linalg.LinAlgError:
            vcov[:2, :2] = np.nan
        vcov[2, 2] = 2.0 * s2**2 / n
        objective = 0.5 * n * (LOG_2PI + np.log(s2) + 1.0)

    return ModelFit(
        family="gaussian-log",
        param_names=names,
        params=np.append(coef, s2),
        vcov=vcov,
        scores=scores,
        score_names=names,
        alpha_cols=(0,),
        beta_cols=(1,),
        objective=float(objective),
        converged=res.converged,
        rows=rows,
        treatment_params=("beta",),
        extra={"rss": rss, "iterations": res.iterations},
    )
