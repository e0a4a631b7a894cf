"""Proportional-odds models for ordinal items.

Parametrisation: ``P(Y <= r | x) = 1 / (1 + exp(-(alpha_r - beta * x)))``, so
a positive ``beta`` moves probability mass to higher categories. Only the
observed categories enter a fit; intercepts are named after the category
they bound from above.
"""

from __future__ import annotations

import numpy as np
from scipy.special import expit

from ..numerics import ObjectiveBundle, newton_maximize
from .base import FitError, ModelFit

MIN_CELL_ROWS = 8


def _cdf_parts(eta: np.ndarray):
    """F, density and density derivative, with the limits at +/- inf."""
    F = np.where(np.isposinf(eta), 1.0, np.where(np.isneginf(eta), 0.0, expit(np.where(np.isfinite(eta), eta, 0.0))))
    f = F * (1.0 - F)
    return F, f, f * (1.0 - 2.0 * F)


def _bounds(alpha: np.ndarray, beta: float, y: np.ndarray, x: np.ndarray):
    cut = np.concatenate(([-np.inf], alpha, [np.inf]))
    a = cut[y + 1] - beta * x
    b = cut[y] - beta * x
    a = np.where(y == alpha.size, np.inf, a)
    b = np.where(y == 0, -np.inf, b)
    return a, b


def _row_terms(alpha, beta, y, x):
    a, b = _bounds(alpha, beta, y, x)
    Fa, fa, dfa = _cdf_parts(a)
    Fb, fb, dfb = _cdf_parts(b)
    # the upper tail probability is formed directly to avoid cancellation
    p = np.where(np.isposinf(a), expit(-np.where(np.isfinite(b), b, 0.0)), Fa - Fb)
    p = np.where(np.isposinf(a) & np.isneginf(b), 1.0, p)
    return p, fa, dfa, fb, dfb


def prop_odds_row_loglik(params, y, x) -> np.ndarray:
    """Per-observation log-likelihood; ``params`` = (alpha_0..alpha_{K-2}, beta), ``y`` coded 0..K-1."""
    params = np.asarray(params, dtype=float)
    p = _row_terms(params[:-1], params[-1], np.asarray(y, dtype=int), np.asarray(x, dtype=float))[0]
    with np.errstate(divide="ignore", invalid="ignore"):
        return np.log(p)


def _grad_hess(alpha, beta, y, x):
    """Log-likelihood value, per-row scores and Hessian in (alpha, beta)."""
    K1 = alpha.size
    p, fa, dfa, fb, dfb = _row_terms(alpha, beta, y, x)
    with np.errstate(divide="ignore"):
        value = float(np.sum(np.log(p)))
    la = fa / p
    lb = -fb / p
    laa = dfa / p - la**2
    lbb = -dfb / p - lb**2
    lab = fa * fb / p**2
    n = y.size
    Da = np.zeros((n, K1 + 1))
    Db = np.zeros((n, K1 + 1))
    up = y < K1
    lo = y > 0
    Da[np.flatnonzero(up), y[up]] = 1.0
    Db[np.flatnonzero(lo), y[lo] - 1] = 1.0
    Da[:, -1] = -x
    Db[:, -1] = -x
    scores = la[:, None] * Da + lb[:, None] * Db
    H = (Da * laa[:, None]).T @ Da + (Db * lbb[:, None]).T @ Db
    cross = (Da * lab[:, None]).T @ Db
    H += cross + cross.T
    return value, scores, H


def _alpha_from_internal(phi: np.ndarray) -> np.ndarray:
    return phi[0] + np.concatenate(([0.0], np.cumsum(np.exp(phi[1:]))))


def fit_prop_odds(item, treatment, rows=None, tol: float = 1e-8) -> ModelFit:
    """Proportional-odds model for one ordinal item against the treatment contrast.

    Intercepts are kept ordered by optimising over the first intercept and
    the logs of successive increments; estimates, scores and covariance are
    reported in the (alpha, beta) parametrisation.
    """
    item = np.asarray(item, dtype=float)
    rows = np.arange(item.size) if rows is None else np.asarray(rows, dtype=int)
    yraw = item[rows]
    x = np.asarray(treatment, dtype=float)[rows]
    levels, y = np.unique(yraw, return_inverse=True)
    K = levels.size
    if K < 2:
        raise FitError("ordinal item observed in fewer than two categories")
    if np.all(x == x[0]):
        raise FitError("treatment effect inestimable: one arm only")
    K1 = K - 1
    cum = np.cumsum(np.bincount(y, minlength=K))[:-1] / y.size
    alpha0 = np.log(cum / (1 - cum))
    phi0 = np.concatenate(([alpha0[0]], np.log(np.maximum(np.diff(alpha0), 1e-3)), [0.0]))

    def bundle(theta):
        phi, beta = theta[:-1], theta[-1]
        alpha = _alpha_from_internal(phi)
        value, scores, H = _grad_hess(alpha, beta, y, x)
        if not np.isfinite(value):
            return ObjectiveBundle(-np.inf, np.zeros(K), np.zeros((K, K)))
        g = scores.sum(axis=0)
        J = np.zeros((K, K))
        J[:K1, 0] = 1.0
        inc = np.exp(phi[1:])
        for s in range(1, K1):
            J[s:K1, s] = inc[s - 1]
        J[K1, K1] = 1.0
        Hphi = J.T @ H @ J
        # curvature of the exp() increments
        tail = np.cumsum(g[:K1][::-1])[::-1]
        Hphi[np.arange(1, K1), np.arange(1, K1)] += tail[1:] * inc
        return ObjectiveBundle(value, J.T @ g, Hphi)

    res = newton_maximize(bundle, phi0, tol=tol)
    alpha = _alpha_from_internal(res.theta_hat[:-1])
    beta = float(res.theta_hat[-1])
    value, scores, H = _grad_hess(alpha, beta, y, x)
    try:
        vcov = np.linalg.inv(-H)
    except np.linalg.LinAlgError:
        vcov = np.full((K, K), np.nan)
    names = tuple(f"alpha{_fmt_level(l)}" for l in levels[:-1]) + ("beta",)
    return ModelFit(
        family="polr",
        param_names=names,
        params=np.append(alpha, beta),
        vcov=vcov,
        scores=scores,
        score_names=names,
        alpha_cols=tuple(range(K1)),
        beta_cols=(K1,),
        objective=-value,
        converged=res.converged and np.isfinite(value),
        rows=rows,
        treatment_params=("beta",),
        extra={"levels": levels, "iterations": res.iterations},
    )


def _fmt_level(v: float) -> str:
    return str(int(v)) if float(v).is_integer() else str(v)


def fit_strat_prop_odds_ensemble(items6, items0, treatment, rows=None, item_names=None,
                                 min_cell: int = MIN_CELL_ROWS) -> ModelFit:
    """Baseline-specific proportional-odds models for a set of items.

    For every item and every observed baseline value ``k`` a separate model
    is fitted on the rows with that baseline. Cells with fewer than
    ``min_cell`` rows, a single arm, a single observed category or a failed
    fit are dropped. Score columns of a cell are zero outside its rows.
    """
    items6 = [np.asarray(c, dtype=float) for c in items6]
    items0 = [np.asarray(c, dtype=float) for c in items0]
    if len(items6) != len(items0) or not items6:
        raise ValueError("items6 and items0 must be equally long, non-empty lists")
    n_all = items6[0].size
    rows = np.arange(n_all) if rows is None else np.asarray(rows, dtype=int)
    item_names = item_names or [f"item{j + 1}" for j in range(len(items6))]
    x = np.asarray(treatment, dtype=float)
    n = rows.size

    names, params, blocks, score_cols = [], [], [], []
    alpha_cols, beta_cols, components, cells = [], [], [], []
    objective = 0.0
    col = 0
    for j, (y6, y0) in enumerate(zip(items6, items0)):
        base = y0[rows]
        item_cols = []
        for k in np.unique(base):
            local = np.flatnonzero(base == k)
            cell_rows = rows[local]
            xs = x[cell_rows]
            if (local.size < min_cell or np.all(xs == xs[0])
                    or np.unique(y6[cell_rows]).size < 2):
                continue
            try:
                fit = fit_prop_odds(y6, x, cell_rows)
            except FitError:
                continue
            if not fit.converged or not np.all(np.isfinite(fit.vcov)):
                continue
            prefix = f"{item_names[j]}|{_fmt_level(k)}|"
            p = len(fit.param_names)
            names.extend(prefix + nm for nm in fit.param_names)
            params.append(fit.params)
            blocks.append(fit.vcov)
            S = np.zeros((n, p))
            S[local] = fit.scores
            score_cols.append(S)
            alpha_cols.extend(col + c for c in fit.alpha_cols)
            beta_cols.extend(col + c for c in fit.beta_cols)
            item_cols.extend(range(col, col + p))
            cells.append({"item": j, "name": item_names[j], "baseline": float(k), "local": local,
                          "cols": np.arange(col, col + p), "levels": fit.extra["levels"]})
            objective += fit.objective
            col += p
        if item_cols:
            components.append((np.array(item_cols), base.copy()))
    if not params:
        raise FitError("no estimable (item, baseline) cell")

    vcov = np.zeros((col, col))
    at = 0
    for b in blocks:
        m = b.shape[0]
        vcov[at:at + m, at:at + m] = b
        at += m
    baselines = np.column_stack([y0[rows] for y0 in items0])
    strata = np.unique(baselines, axis=0, return_inverse=True)[1].reshape(-1)
    names = tuple(names)
    return ModelFit(
        family="polr-stratified",
        param_names=names,
        params=np.concatenate(params),
        vcov=vcov,
        scores=np.hstack(score_cols),
        score_names=names,
        alpha_cols=tuple(alpha_cols),
        beta_cols=tuple(beta_cols),
        objective=float(objective),
        converged=True,
        rows=rows,
        treatment_params=tuple(names[c] for c in beta_cols),
        components=tuple(components),
        strata=strata,
        extra={"cells": cells},
    )


def ensemble_row_loglik(fit: ModelFit, params, items6, treatment) -> np.ndarray:
    """Per-row log-likelihood of an ensemble fit evaluated at ``params``."""
    params = np.asarray(params, dtype=float)
    x = np.asarray(treatment, dtype=float)[fit.rows]
    out = np.zeros(fit.rows.size)
    for cell in fit.extra["cells"]:
        local, cols = cell["local"], cell["cols"]
        y = np.asarray(items6[cell["item"]], dtype=float)[fit.rows][local]
        codes = np.searchsorted(cell["levels"], y)
        out[local] += prop_odds_row_loglik(params[cols], codes, x[local])
    return out
