"""Fitted-model container and confidence-interval helpers."""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
from scipy import stats


class FitError(RuntimeError):
    """A model cannot be estimated on the given rows."""


@dataclass(frozen=True)
class ModelFit:
    """Result of fitting a model family on a set of rows.

    ``scores`` holds one row per entry of ``rows`` and one column per entry of
    ``score_names``; each row is the gradient of that observation's
    log-likelihood contribution at the estimate (Cox: martingale and score
    residuals). ``alpha_cols`` and ``beta_cols`` index the intercept and
    treatment blocks of ``scores``; remaining columns (nuisance parameters)
    are never tested.

    ``components`` optionally splits the score columns into groups, each with
    its own row stratification (the stratified ensemble); ``strata`` then gives
    the permutation blocks used by the independence tests.
    """

    family: str
    param_names: tuple[str, ...]
    params: np.ndarray
    vcov: np.ndarray
    scores: np.ndarray
    score_names: tuple[str, ...]
    alpha_cols: tuple[int, ...]
    beta_cols: tuple[int, ...]
    objective: float
    converged: bool
    rows: np.ndarray
    treatment_params: tuple[str, ...]
    components: tuple[tuple[np.ndarray, np.ndarray], ...] = ()
    strata: np.ndarray | None = None
    extra: dict = field(default_factory=dict)

    @property
    def theta(self) -> dict[str, float]:
        return dict(zip(self.param_names, (float(v) for v in self.params)))

    @property
    def n(self) -> int:
        return int(self.rows.size)

    def index(self, name: str) -> int:
        try:
            return self.param_names.index(name)
        except ValueError:
            raise KeyError(f"no parameter named {name!r}") from None

    def coef(self, name: str) -> float:
        return float(self.params[self.index(name)])

    def se(self, name: str) -> float:
        k = self.index(name)
        v = self.vcov[k, k]
        return float(np.sqrt(v)) if v > 0 else float("nan")

    def block(self, which: str) -> np.ndarray:
        cols = self.alpha_cols if which == "alpha" else self.beta_cols
        return self.scores[:, list(cols)]


@dataclass(frozen=True)
class EffectClass:
    label: str
    ci: tuple[float, float]
    level: float = 0.95


def wald_ci(fit: ModelFit, param: str, level: float = 0.95) -> tuple[float, float]:
    est = fit.coef(param)
    k = fit.index(param)
    return wald_interval(est, fit.vcov[k, k], level)


def wald_interval(estimate: float, variance: float, level: float = 0.95) -> tuple[float, float]:
    if not (variance > 0 and np.isfinite(variance)):
        raise ValueError("variance must be positive and finite")
    z = stats.norm.ppf(0.5 * (1.0 + level))
    half = z * np.sqrt(variance)
    return float(estimate - half), float(estimate + half)


def classify_interval(lower: float, upper: float, level: float = 0.95) -> EffectClass:
    if lower > 0:
        label = "positive"
    elif upper < 0:
        label = "negative"
    else:
        label = "none"
    return EffectClass(label, (lower, upper), level)


def classify_effect(fit: ModelFit, param: str, level: float = 0.95) -> EffectClass:
    lo, hi = wald_ci(fit, param, level)
    return classify_interval(lo, hi, level)
