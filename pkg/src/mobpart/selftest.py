"""Oracle checks runnable from the command line.

Each suite returns a list of :class:`Check` rows (measured value against a
threshold) so results can be printed as a table or asserted in tests.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .data import Dataset, RoleMap
from .fluctest import _all_permutations, conditional_moments, linear_statistic, perm_pvalue
from .models import (
    cox_partial_loglik,
    cox_residuals,
    ensemble_row_loglik,
    gaussian_log_row_loglik,
    linear_row_loglik,
    make_family,
    prop_odds_row_loglik,
    weibull_row_loglik,
)
from .numerics import finite_diff_gradient, finite_diff_jacobian, pseudo_inverse
from .simgen import DGPSpec, default_roles, generate
from .tree import ControlParams, grow_tree

SUITES = ("gradients", "permutation", "penrose", "typeI")
ROW_FAMILIES = ("linear", "gaussian-log", "polr", "polr-stratified", "weibull")
FAMILIES = ROW_FAMILIES + ("cox",)
ITEM_LEVELS = ("0", "1", "2", "3", "4")


@dataclass(frozen=True)
class Check:
    name: str
    measured: float
    threshold: float
    passed: bool


def _check(name: str, measured: float, threshold: float) -> Check:
    return Check(name, float(measured), float(threshold), bool(measured <= threshold))


# ---------------------------------------------------------------- random datasets


def _ordinal(rng, latent, cuts=(-1.0, 0.0, 1.0, 2.0)):
    return np.searchsorted(np.asarray(cuts), latent + rng.logistic(size=latent.size)).astype(float)


def random_dataset(family: str, rng: np.random.Generator, n: int) -> tuple[Dataset, RoleMap]:
    """A small random dataset with a valid role map for ``family``."""
    x = np.zeros(n)
    x[rng.permutation(n)[: n // 2]] = 1.0
    z = rng.standard_normal(n)
    data = {"x": x, "z": z}
    kinds = {"x": "continuous", "z": "continuous"}
    levels = {}
    if family == "linear":
        data["y"] = 1.0 + 0.5 * x + rng.standard_normal(n)
        endpoint = {"response": "y"}
    elif family == "gaussian-log":
        off = 0.3 * rng.standard_normal(n)
        data["y"] = np.exp(off + 0.5 + 0.4 * x) + 0.3 * np.abs(rng.standard_normal(n)) + 0.05
        data["off"] = off
        endpoint = {"response": "y", "offset": "off"}
    elif family == "polr":
        data["item"] = _ordinal(rng, 0.8 * x)
        kinds["item"], levels["item"] = "ordinal", ITEM_LEVELS
        endpoint = {"item": "item"}
    elif family == "polr-stratified":
        pairs = []
        for j in range(2):
            base = rng.integers(0, 2, n).astype(float)
            data[f"b{j}"] = base
            data[f"i{j}"] = _ordinal(rng, base + 0.6 * x)
            for c in (f"b{j}", f"i{j}"):
                kinds[c], levels[c] = "ordinal", ITEM_LEVELS
            pairs.append([f"i{j}", f"b{j}"])
        endpoint = {"items": pairs}
    elif family in ("weibull", "cox"):
        t = np.exp(1.0 + 0.5 * x + 0.7 * np.log(-np.log(rng.uniform(size=n))))
        c = np.exp(1.5 + rng.standard_normal(n))
        data["time"] = np.minimum(t, c)
        data["event"] = (t <= c).astype(float)
        kinds["time"], kinds["event"] = "time", "event"
        endpoint = {"time": "time", "event": "event"}
    else:
        raise ValueError(f"unknown family {family!r}")
    roles = RoleMap(family, endpoint, "x", ("z",))
    return Dataset.from_arrays(data, kinds, levels), roles


def row_loglik(dataset: Dataset, roles: RoleMap, fit):
    """Per-row log-likelihood of the fitted rows as a function of the parameters."""
    v = dataset.values
    x = v(roles.treatment)[fit.rows]
    ep = roles.endpoint
    fam = roles.family
    if fam == "linear":
        y = v(ep["response"])[fit.rows]
        return lambda th: linear_row_loglik(th, y, x)
    if fam == "gaussian-log":
        y, off = v(ep["response"])[fit.rows], v(ep["offset"])[fit.rows]
        return lambda th: gaussian_log_row_loglik(th, y, off, x)
    if fam == "polr":
        y = v(ep["item"])[fit.rows]
        codes = np.searchsorted(fit.extra["levels"], y)
        return lambda th: prop_odds_row_loglik(th, codes, x)
    if fam == "polr-stratified":
        items6 = [v(a) for a, _ in ep["items"]]
        xall = v(roles.treatment)
        return lambda th: ensemble_row_loglik(fit, th, items6, xall)
    if fam == "weibull":
        t, d = v(ep["time"])[fit.rows], v(ep["event"])[fit.rows]
        return lambda th: weibull_row_loglik(th, t, d, x)
    raise ValueError(f"no per-row log-likelihood for family {fam!r}")


def score_errors(dataset: Dataset, roles: RoleMap) -> tuple[float, float, float]:
    """(relative score error, max |column sum|, n) for one dataset.

    The Cox model has no per-row likelihood; its summed score residuals are
    compared with the derivative of the partial likelihood instead.
    """
    fit = make_family(dataset, roles).fit(None)
    if roles.family == "cox":
        ep = roles.endpoint
        t, d, x = (dataset.values(c) for c in (ep["time"], ep["event"], roles.treatment))
        fd = finite_diff_gradient(lambda b: cox_partial_loglik(b[0], t, d, x), fit.params)
        analytic = fit.scores[:, 1].sum()
        # score residuals vanish in sum only at the estimate; compare at beta + 0.1 as well
        shifted = cox_residuals(fit.params[0] + 0.1, t, d, x)[1].sum()
        fd_shift = finite_diff_gradient(lambda b: cox_partial_loglik(b[0], t, d, x), fit.params + 0.1)
        err = max(abs(analytic - fd[0]), abs(shifted - fd_shift[0])) / max(1.0, abs(fd_shift[0]))
        sums = max(abs(fit.scores[:, 0].sum()), abs(analytic))
        return float(err), float(sums), fit.n
    f = row_loglik(dataset, roles, fit)
    J = finite_diff_jacobian(f, fit.params)
    err = np.max(np.abs(J - fit.scores)) / max(1.0, np.max(np.abs(J)))
    return float(err), float(np.max(np.abs(fit.scores.sum(axis=0)))), fit.n


def suite_gradients(n_datasets: int = 20, seed: int = 0, tol: float = 1e-6) -> list[Check]:
    rng = np.random.default_rng(seed)
    out = []
    for fam in FAMILIES:
        worst_err, worst_sum = 0.0, 0.0
        for _ in range(n_datasets):
            ds, roles = random_dataset(fam, rng, int(rng.integers(50, 101)))
            err, sums, n = score_errors(ds, roles)
            worst_err = max(worst_err, err)
            worst_sum = max(worst_sum, sums / n)
        out.append(_check(f"{fam}: score vs finite differences", worst_err, tol))
        out.append(_check(f"{fam}: score column sums / N", worst_sum, tol))
    return out


# ---------------------------------------------------------------- permutation


def exact_pvalue(G, H) -> float:
    """Exact permutation p-value by enumerating all row orders (small m only)."""
    res = perm_pvalue(G, H, exhaustive_threshold=10**9, method="exhaustive")
    return res.p_raw


def enumerated_moments(G, H) -> tuple[np.ndarray, np.ndarray]:
    idx = _all_permutations(np.zeros(G.shape[0], dtype=int))
    T = np.array([linear_statistic(G, H[p]) for p in idx])
    return T.mean(axis=0), np.cov(T, rowvar=False, bias=True)


def suite_permutation(m: int = 7, n_cases: int = 5, B: int = 50_000, seed: int = 0) -> list[Check]:
    rng = np.random.default_rng(seed)
    out = []
    worst_mom, worst_z = 0.0, 0.0
    for case in range(n_cases):
        G = rng.standard_normal((m, 1))
        H = rng.standard_normal((m, 2))
        mu, S = conditional_moments(G, H)
        emu, eS = enumerated_moments(G, H)
        worst_mom = max(worst_mom, np.max(np.abs(mu - emu)), np.max(np.abs(S - eS)))
        p_exact = exact_pvalue(G, H)
        p_mc = perm_pvalue(G, H, B=B, seed=(seed, case), exhaustive_threshold=0).p_raw
        se = np.sqrt(max(p_exact * (1 - p_exact), 1e-12) / B)
        worst_z = max(worst_z, abs(p_mc - p_exact) / se)
    out.append(_check(f"moments vs enumeration (m={m})", worst_mom, 1e-10))
    out.append(_check(f"Monte Carlo vs exact p, in standard errors (B={B})", worst_z, 3.0))
    return out


def suite_penrose(n_cases: int = 20, seed: int = 0, tol: float = 1e-8) -> list[Check]:
    rng = np.random.default_rng(seed)
    worst = 0.0
    for _ in range(n_cases):
        d = int(rng.integers(2, 7))
        r = int(rng.integers(1, d + 1))
        A = rng.standard_normal((d, r))
        M = A @ A.T
        P, rank = pseudo_inverse(M)
        if rank != r:
            worst = np.inf
        conds = (M @ P @ M - M, P @ M @ P - P, (M @ P).T - M @ P, (P @ M).T - P @ M)
        worst = max(worst, max(np.max(np.abs(c)) for c in conds) / max(1.0, np.max(np.abs(M))))
    return [_check("Penrose conditions (relative)", worst, tol)]


def type_one_rate(nsim: int, n: int = 200, J: int = 5, alpha: float = 0.05, nperm: int = 999,
                  seed: int = 0, threads: int = 1) -> float:
    """Fraction of null-design samples whose root node splits."""
    splits = 0
    for r in range(nsim):
        ds = generate(DGPSpec("null", n, J, seed * 1_000_003 + r))
        control = ControlParams(alpha=alpha, maxdepth=1, nperm=nperm, seed=r, threads=threads)
        tree = grow_tree(ds, default_roles(ds), control)
        splits += tree.root.split is not None
    return splits / nsim


def suite_type_one(nsim: int = 50, alpha: float = 0.05, seed: int = 0) -> list[Check]:
    rate = type_one_rate(nsim, alpha=alpha, seed=seed)
    bound = alpha + 2.0 * np.sqrt(alpha * (1 - alpha) / nsim)
    return [_check(f"null split frequency ({nsim} replications)", rate, bound)]


def run_suite(name: str, **kwargs) -> list[Check]:
    if name == "gradients":
        return suite_gradients(**kwargs)
    if name == "permutation":
        return suite_permutation(**kwargs)
    if name == "penrose":
        return suite_penrose(**kwargs)
    if name == "typeI":
        return suite_type_one(**kwargs)
    raise ValueError(f"unknown suite {name!r}; choose from {SUITES}")


def format_checks(checks: list[Check]) -> str:
    width = max(len(c.name) for c in checks)
    lines = [f"{'check':<{width}}  {'measured':>12}  {'threshold':>12}  result"]
    for c in checks:
        lines.append(f"{c.name:<{width}}  {c.measured:>12.4g}  {c.threshold:>12.4g}  "
                     f"{'PASS' if c.passed else 'FAIL'}")
    return "\n".join(lines)
