"""Right-censored survival models: Weibull accelerated failure time and Cox."""

from __future__ import annotations

import numpy as np

from ..numerics import ObjectiveBundle, newton_maximize
from .base import FitError, ModelFit


def _survival_inputs(time, event, treatment, rows):
    time = np.asarray(time, dtype=float)
    rows = np.arange(time.size) if rows is None else np.asarray(rows, dtype=int)
    t = time[rows]
    d = np.asarray(event, dtype=float)[rows]
    x = np.asarray(treatment, dtype=float)[rows]
    if d.sum() < 1:
        raise FitError("no events")
    if np.all(x == x[0]):
        raise FitError("treatment effect inestimable: one arm only")
    if np.any(t <= 0):
        raise FitError("survival times must be positive")
    return rows, t, d, x


# ---------------------------------------------------------------- Weibull


def weibull_row_loglik(params, time, event, treatment) -> np.ndarray:
    """Per-observation log-likelihood; ``params`` = (alpha1, beta, alpha2).

    ``P(T <= t | x) = F((log t - alpha1 - beta * x) / alpha2)`` with the
    minimum extreme value distribution ``F(z) = 1 - exp(-exp(z))``. Events
    contribute the log density of T, censored rows the log survivor function.
    """
    a, b, scale = params
    logt = np.log(time)
    z = (logt - a - b * np.asarray(treatment)) / scale
    d = np.asarray(event, dtype=float)
    return d * (z - np.log(scale) - logt) - np.exp(z)


def _weibull_bundle(theta, logt, d, x):
    a, b, s = theta
    sigma = np.exp(s)
    z = (logt - a - b * x) / sigma
    w = np.exp(np.minimum(z, 700.0))
    value = float(np.sum(d * (z - s - logt) - w))
    r = d - w
    X = np.column_stack([np.ones_like(x), x])
    g_u = -(X.T @ r) / sigma
    g_s = float(np.sum(-d - z * r))
    H = np.empty((3, 3))
    H[:2, :2] = -(X * w[:, None]).T @ X / sigma**2
    cross = X.T @ (r - w * z) / sigma
    H[:2, 2] = H[2, :2] = cross
    H[2, 2] = float(np.sum(z * (r - w * z)))
    return ObjectiveBundle(value, np.append(g_u, g_s), H)


def fit_weibull(time, event, treatment, rows=None, tol: float = 1e-8) -> ModelFit:
    """Weibull AFT model fitted by maximum likelihood.

    Optimisation runs over (alpha1, beta, log alpha2). The intercept block
    holds both the location ``alpha1`` and the scale ``alpha2`` scores since
    together they determine the baseline hazard.
    """
    rows, t, d, x = _survival_inputs(time, event, treatment, rows)
    logt = np.log(t)
    init = np.array([np.log(t.sum() / d.sum()), 0.0, 0.0])
    res = newton_maximize(lambda th: _weibull_bundle(th, logt, d, x), init, tol=tol,
                          max_abs=max(30.0, 2.0 * abs(init[0]) + 10.0))
    a, b, s = res.theta_hat
    sigma = float(np.exp(s))
    z = (logt - a - b * x) / sigma
    w = np.exp(z)
    r = d - w
    scores = np.column_stack([-r / sigma, -x * r / sigma, (-d - z * r) / sigma])
    bundle = _weibull_bundle(res.theta_hat, logt, d, x)
    J = np.diag([1.0, 1.0, sigma])
    try:
        vcov = J @ np.linalg.inv(-bundle.hessian) @ J
    except np.linalg.LinAlgError:
        vcov = np.full((3, 3), np.nan)
    names = ("alpha1", "beta", "alpha2")
    return ModelFit(
        family="weibull",
        param_names=names,
        params=np.array([a, b, sigma]),
        vcov=vcov,
        scores=scores,
        score_names=names,
        alpha_cols=(0, 2),
        beta_cols=(1,),
        objective=-bundle.value,
        converged=res.converged,
        rows=rows,
        treatment_params=("beta",),
        extra={"iterations": res.iterations},
    )


# ---------------------------------------------------------------- Cox


class _RiskSets:
    """Breslow risk-set sums over the distinct event times of a sample."""

    def __init__(self, t, d, x):
        self.t, self.d, self.x = t, d, x
        self.utimes, self.inv = np.unique(t, return_inverse=True)
        self.deaths = np.bincount(self.inv, weights=d, minlength=self.utimes.size)
        self.xdeaths = np.bincount(self.inv, weights=d * x, minlength=self.utimes.size)

    def sums(self, beta):
        r = np.exp(beta * self.x)
        m = self.utimes.size

        def at_risk(w):
            per = np.bincount(self.inv, weights=w, minlength=m)
            return np.cumsum(per[::-1])[::-1]

        return r, at_risk(r), at_risk(r * self.x), at_risk(r * self.x**2)

    def bundle(self, beta):
        b = float(np.asarray(beta).reshape(-1)[0])
        _, S0, S1, S2 = self.sums(b)
        ev = self.deaths > 0
        xbar = S1[ev] / S0[ev]
        dd = self.deaths[ev]
        value = float(b * self.xdeaths.sum() - np.sum(dd * np.log(S0[ev])))
        grad = float(self.xdeaths.sum() - np.sum(dd * xbar))
        info = float(np.sum(dd * (S2[ev] / S0[ev] - xbar**2)))
        return ObjectiveBundle(value, [grad], [[-info]])


def cox_partial_loglik(beta: float, time, event, treatment) -> float:
    """Breslow partial log-likelihood."""
    rs = _RiskSets(np.asarray(time, float), np.asarray(event, float), np.asarray(treatment, float))
    return rs.bundle(beta).value


def cox_residuals(beta: float, time, event, treatment):
    """Martingale and score residuals at ``beta`` under the Breslow baseline hazard."""
    rs = _RiskSets(np.asarray(time, float), np.asarray(event, float), np.asarray(treatment, float))
    r, S0, S1, _ = rs.sums(beta)
    with np.errstate(invalid="ignore", divide="ignore"):
        dlam = np.where(rs.deaths > 0, rs.deaths / S0, 0.0)
        xbar = np.where(rs.deaths > 0, S1 / S0, 0.0)
    cumhaz = np.cumsum(dlam)
    cumx = np.cumsum(xbar * dlam)
    H = cumhaz[rs.inv]
    martingale = rs.d - H * r
    score = rs.d * (rs.x - xbar[rs.inv]) - r * (rs.x * H - cumx[rs.inv])
    return martingale, score


def fit_cox(time, event, treatment, rows=None, tol: float = 1e-10) -> ModelFit:
    """Cox proportional hazards model with Breslow ties.

    The intercept block is the martingale residual (a surrogate for the
    baseline-hazard score), the treatment block the score residual.
    """
    rows, t, d, x = _survival_inputs(time, event, treatment, rows)
    rs = _RiskSets(t, d, x)
    res = newton_maximize(rs.bundle, [0.0], tol=tol)
    beta = float(res.theta_hat[0])
    final = rs.bundle(beta)
    info = -final.hessian[0, 0]
    vcov = np.array([[1.0 / info if info > 0 else np.nan]])
    martingale, score = cox_residuals(beta, t, d, x)
    return ModelFit(
        family="cox",
        param_names=("beta",),
        params=np.array([beta]),
        vcov=vcov,
        scores=np.column_stack([martingale, score]),
        score_names=("martingale", "beta"),
        alpha_cols=(0,),
        beta_cols=(1,),
        objective=-final.value,
        converged=res.converged,
        rows=rows,
        treatment_params=("beta",),
        extra={"iterations": res.iterations},
    )
