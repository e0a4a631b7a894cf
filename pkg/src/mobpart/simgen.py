"""Synthetic treatment-by-covariate designs and a brute-force split oracle."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .data import Dataset, RoleMap
from .models import FitError, make_family
from .models.families import Family

DGPS = ("pred", "pred2", "prog", "null")
ERROR_VARIANCE = 0.7


@dataclass(frozen=True)
class DGPSpec:
    name: str
    n: int = 200
    J_noise: int = 0
    seed: int = 0

    def __post_init__(self):
        if self.name not in DGPS:
            raise ValueError(f"unknown design {self.name!r}; choose from {DGPS}")
        if self.n < 4:
            raise ValueError("n must be at least 4")
        if self.J_noise < 0:
            raise ValueError("J_noise must be >= 0")


def mean_function(name: str, x: np.ndarray, z1: np.ndarray) -> np.ndarray:
    neg = (z1 < 0).astype(float)
    pos = (z1 > 0).astype(float)
    if name == "pred":
        return 1.9 + 0.2 * x + 1.8 * neg + 3.6 * pos * x
    if name == "pred2":
        return 1.9 + 0.2 * x + 1.8 * neg + 3.6 * neg * x
    if name == "prog":
        return 2.0 * x + pos
    if name == "null":
        return 1.0 + 0.5 * x
    raise ValueError(f"unknown design {name!r}")


def generate(spec: DGPSpec) -> Dataset:
    """Draw one sample: Bernoulli(0.5) treatment, standard normal ``z1`` and noise variables."""
    rng = np.random.default_rng(spec.seed)
    n = spec.n
    x = rng.integers(0, 2, n).astype(float)
    Z = rng.standard_normal((n, 1 + spec.J_noise))
    sd = 1.0 if spec.name == "null" else np.sqrt(ERROR_VARIANCE)
    y = mean_function(spec.name, x, Z[:, 0]) + sd * rng.standard_normal(n)
    data = {"y": y, "x_A": x}
    kinds = {"y": "continuous", "x_A": "continuous"}
    for j in range(Z.shape[1]):
        data[f"z{j + 1}"] = Z[:, j]
        kinds[f"z{j + 1}"] = "continuous"
    return Dataset.from_arrays(data, kinds)


def default_roles(dataset: Dataset, family: str = "linear") -> RoleMap:
    zs = tuple(n for n in dataset.names if n.startswith("z"))
    return RoleMap(family, {"response": "y"}, "x_A", zs)


def oracle_best_split(dataset: Dataset, roles: RoleMap, variable: str, minbucket: int = 1,
                      family: Family | None = None) -> tuple[float, float]:
    """Cutpoint minimising the total objective of separate fits in both halves.

    Every unique observed value (except the largest) is tried as ``z <= mu``;
    halves with fewer than ``minbucket`` rows or failing fits are skipped.
    Ties go to the smallest cutpoint.
    """
    family = family or make_family(dataset, roles)
    z = dataset.values(variable)
    rows = np.flatnonzero(~np.isnan(z))
    best = (np.nan, np.inf)
    for mu in np.unique(z[rows])[:-1]:
        left = rows[z[rows] <= mu]
        right = rows[z[rows] > mu]
        if left.size < minbucket or right.size < minbucket:
            continue
        try:
            fl, fr = family.fit(left), family.fit(right)
        except FitError:
            continue
        total = family.segment_objective(fl) + family.segment_objective(fr)
        if not np.isfinite(best[1]) or total < best[1] - 1e-12 * max(1.0, abs(best[1])):
            best = (float(mu), float(total))
    if not np.isfinite(best[1]):
        raise ValueError("no admissible cutpoint")
    return best
