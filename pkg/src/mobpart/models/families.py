"""Bind a model family to dataset columns according to a role map."""

from __future__ import annotations

from dataclasses import dataclass
from typing import Callable

import numpy as np

from ..data import Dataset, RoleMap, treatment_vector, validate_roles
from .base import ModelFit
from .gaussian import fit_gaussian_log, fit_linear_treatment
from .ordinal import fit_prop_odds, fit_strat_prop_odds_ensemble
from .survival import fit_cox, fit_weibull


@dataclass(frozen=True)
class Family:
    """A model family bound to one dataset: ``fit(rows) -> ModelFit``."""

    name: str
    fit: Callable[[np.ndarray], ModelFit]

    def segment_objective(self, fit: ModelFit) -> float:
        """Contribution of one segment to the segmented objective.

        Gaussian families share the error variance across segments, so their
        segmented objective reduces to the residual sum of squares.
        """
        if self.name in ("linear", "gaussian-log"):
            return float(fit.extra["rss"])
        return float(fit.objective)


def make_family(dataset: Dataset, roles: RoleMap) -> Family:
    validate_roles(dataset, roles)
    x = treatment_vector(dataset, roles.treatment)
    ep = roles.endpoint
    v = dataset.values
    name = roles.family
    if name == "linear":
        strata = None
        if roles.strata:
            strata = np.column_stack([v(s) for s in roles.strata])
        y = v(ep["response"])
        return Family(name, lambda rows: fit_linear_treatment(y, x, strata, rows))
    if name == "gaussian-log":
        y, off = v(ep["response"]), v(ep["offset"])
        return Family(name, lambda rows: fit_gaussian_log(y, off, x, rows))
    if name == "polr":
        y = v(ep["item"])
        return Family(name, lambda rows: fit_prop_odds(y, x, rows))
    if name == "polr-stratified":
        pairs = [tuple(p) for p in ep["items"]]
        items6 = [v(a) for a, _ in pairs]
        items0 = [v(b) for _, b in pairs]
        labels = [a for a, _ in pairs]
        return Family(name, lambda rows: fit_strat_prop_odds_ensemble(items6, items0, x, rows, labels))
    if name == "weibull":
        t, d = v(ep["time"]), v(ep["event"])
        return Family(name, lambda rows: fit_weibull(t, d, x, rows))
    if name == "cox":
        t, d = v(ep["time"]), v(ep["event"])
        return Family(name, lambda rows: fit_cox(t, d, x, rows))
    raise ValueError(f"unknown family {name!r}")
