"""Acceptance suite: one test per criterion, each printing a pass/fail line."""

import json
import math

import numpy as np
import pytest
from scipy import optimize, stats

from mobpart import cli
from mobpart.data import Dataset, RoleMap, schema_of, write_csv
from mobpart.fluctest import conditional_moments, perm_pvalue
from mobpart.models import (
    classify_interval,
    cox_residuals,
    fit_cox,
    fit_linear_treatment,
    fit_weibull,
    make_family,
    wald_interval,
)
from mobpart.selftest import FAMILIES, enumerated_moments, random_dataset, score_errors
from mobpart.simgen import DGPSpec, default_roles, generate, oracle_best_split
from mobpart.tree import ControlParams, grow_tree, select_cutpoint


def test_criterion_01_score_correctness(report):
    rng = np.random.default_rng(101)
    worst = {}
    for fam in FAMILIES:
        errs, sums = [], []
        for _ in range(20):
            ds, roles = random_dataset(fam, rng, int(rng.integers(50, 101)))
            err, s, n = score_errors(ds, roles)
            errs.append(err)
            sums.append(s / n)
        worst[fam] = (max(errs), max(sums))
    ok = all(e <= 1e-6 and s <= 1e-6 for e, s in worst.values())
    detail = ", ".join(f"{f} {e:.1e}/{s:.1e}" for f, (e, s) in worst.items())
    report(1, ok, f"max relative score error / column sum per N: {detail}")
    assert ok


def test_criterion_02_linear_closed_form(report):
    rng = np.random.default_rng(202)
    worst = 0.0
    for _ in range(10):
        n = int(rng.integers(30, 120))
        x = (rng.uniform(size=n) < 0.5).astype(float)
        x[:2], x[2:4] = 0.0, 1.0
        y = rng.normal(1.0 + 2.0 * x, 1.5)
        fit = fit_linear_treatment(y, x)
        # least squares residuals from the normal equations, scaled by the ML variance
        X = np.column_stack([np.ones(n), x])
        coef = np.linalg.solve(X.T @ X, X.T @ y)
        r = y - X @ coef
        s2 = r @ r / n
        worst = max(worst, np.max(np.abs(fit.scores[:, 0] - r / s2)),
                    np.max(np.abs(fit.scores[:, 1] - x * r / s2)))
    ok = worst <= 1e-12
    report(2, ok, f"max |score - residual/sigma2| = {worst:.2e} (<= 1e-12)")
    assert ok


def test_criterion_03_permutation_moments_and_pvalues(report):
    rng = np.random.default_rng(303)
    worst_mom, worst_z = 0.0, 0.0
    for case in range(20):
        m = int(rng.integers(4, 8))
        p, q = int(rng.integers(1, 3)), int(rng.integers(1, 3))
        G = rng.standard_normal((m, p))
        H = rng.standard_normal((m, q))
        mu, S = conditional_moments(G, H)
        emu, eS = enumerated_moments(G, H)
        worst_mom = max(worst_mom, np.max(np.abs(mu - emu)), np.max(np.abs(S - eS)))
        exact = perm_pvalue(G, H, method="exhaustive").p_raw
        mc = perm_pvalue(G, H, B=50_000, seed=(303, case), exhaustive_threshold=0).p_raw
        se = math.sqrt(max(exact * (1 - exact), 1e-12) / 50_000)
        worst_z = max(worst_z, abs(mc - exact) / se)
    ok = worst_mom <= 1e-10 and worst_z <= 3.0
    report(3, ok, f"moment error {worst_mom:.1e} (<= 1e-10); worst MC deviation {worst_z:.2f} SE (<= 3)")
    assert ok


@pytest.mark.slow
def test_criterion_04_type_one_error(report):
    nsim = 1000
    splits = 0
    for r in range(nsim):
        ds = generate(DGPSpec("null", 200, 5, 40_000 + r))
        tree = grow_tree(ds, default_roles(ds), ControlParams(alpha=0.05, maxdepth=1, nperm=999, seed=r))
        splits += tree.root.split is not None
    rate = splits / nsim
    ok = rate <= 0.064
    report(4, ok, f"null root-split frequency {rate:.3f} over {nsim} replications (<= 0.064)")
    assert ok


def _pred_runs(name, reps=100, seed0=0):
    out = []
    for r in range(reps):
        ds = generate(DGPSpec(name, 200, 0, seed0 + r))
        tree = grow_tree(ds, default_roles(ds), ControlParams(nperm=999, seed=r))
        out.append(tree)
    return out


def test_criterion_05_subgroup_recovery(report):
    trees = _pred_runs("pred", seed0=5000)
    on_z1 = [t for t in trees if t.root.split is not None and t.root.split.variable == "z1"]
    beta_z1 = sum(t.root.winner.block == "beta" for t in on_z1)
    cuts = [t.root.split.threshold for t in on_z1]
    covered = 0
    for t in on_z1:
        left, right = (t.nodes[c].fit for c in t.root.children)
        bl, br = left.coef("beta"), right.coef("beta")
        covered += abs(bl - 0.2) <= 3 * left.se("beta") and abs(br - 3.8) <= 3 * right.se("beta")
    ok = beta_z1 >= 90 and -0.25 <= np.mean(cuts) <= 0.25 and covered >= 0.9 * len(on_z1)
    report(5, ok, f"split on z1 with block beta {beta_z1}/100 (>= 90); mean cutpoint {np.mean(cuts):+.3f}; "
                  f"effects covered {covered}/{len(on_z1)} (>= 90%)")
    assert ok


def test_criterion_06_block_attribution(report):
    pred2 = _pred_runs("pred2", seed0=6000)
    alpha2 = sum(t.root.split is not None and t.root.winner.block == "alpha" for t in pred2)
    prog = _pred_runs("prog", seed0=7000)
    alpha_p = sum(t.root.split is not None and t.root.winner.block == "alpha" for t in prog)
    splitting = [t for t in prog if t.root.split is not None]
    prognostic = sum(t.root.annotation == "prognostic only" for t in splitting)
    ok = alpha2 >= 80 and alpha_p >= 80 and prognostic >= 0.9 * len(splitting)
    report(6, ok, f"second predictive design: block alpha {alpha2}/100 (>= 80); prognostic design: block "
                  f"alpha {alpha_p}/100 (>= 80), prognostic-only {prognostic}/{len(splitting)} (>= 90%)")
    assert ok


def test_criterion_07_cutpoint_oracle(report):
    z = np.linspace(-1, 1, 40)
    x = np.tile([0.0, 1.0], 20)
    y = np.where(z >= 0, 3.0, 0.0) + 0.5 * x
    step = Dataset.from_arrays({"y": y, "x_A": x, "z1": z})
    roles = RoleMap("linear", {"response": "y"}, "x_A", ("z1",))
    control = ControlParams(minbucket=5, minfit=10)
    fam = make_family(step, roles)
    fit = fam.fit(None)
    mu_tree = select_cutpoint(fit, step, "z1", control).threshold
    mu_oracle = oracle_best_split(step, roles, "z1", 5, fam)[0]
    step_ok = mu_tree == mu_oracle == z[19]

    control = ControlParams(minbucket=10, minfit=20)
    agree = 0
    for r in range(100):
        ds = generate(DGPSpec("pred", 60, 0, 8000 + r))
        roles = default_roles(ds)
        fam = make_family(ds, roles)
        split = select_cutpoint(fam.fit(None), ds, "z1", control)
        mu, _ = oracle_best_split(ds, roles, "z1", 10, fam)
        u = np.unique(ds.values("z1"))
        agree += abs(np.searchsorted(u, split.threshold) - np.searchsorted(u, mu)) <= 1
    ok = step_ok and agree >= 90
    report(7, ok, f"step instance exact: {step_ok}; within one position on {agree}/100 (>= 90)")
    assert ok


def _breslow_score(beta, t, d, x):
    total = 0.0
    for i in np.flatnonzero(d):
        risk = t >= t[i]
        w = np.exp(beta * x[risk])
        total += x[i] - np.sum(w * x[risk]) / np.sum(w)
    return total


def _weibull_loglik(theta, t, d, x):
    a, b, sigma = theta
    scale = np.exp(a + b * x)
    k = 1.0 / sigma
    return np.sum(d * stats.weibull_min.logpdf(t, k, scale=scale)
                  + (1 - d) * stats.weibull_min.logsf(t, k, scale=scale))


def _grid_maximize(f, center, width, rounds=40, points=9):
    center = np.asarray(center, float)
    width = np.asarray(width, float)
    for _ in range(rounds):
        axes = [np.linspace(c - w, c + w, points) for c, w in zip(center, width)]
        grid = np.stack(np.meshgrid(*axes, indexing="ij"), axis=-1).reshape(-1, center.size)
        vals = np.array([f(g) for g in grid])
        center = grid[np.argmax(vals)]
        width = width * 0.5
    return center


def test_criterion_08_survival_identities(report):
    rng = np.random.default_rng(808)
    worst_res, worst_cox, worst_wb = 0.0, 0.0, 0.0
    for _ in range(3):
        n = 80
        x = np.repeat([0.0, 1.0], n // 2)
        t_true = np.exp(1.0 + 0.6 * x + 0.8 * np.log(-np.log(rng.uniform(size=n))))
        c = np.exp(1.8 + rng.standard_normal(n))
        t, d = np.minimum(t_true, c), (t_true <= c).astype(float)
        cox = fit_cox(t, d, x)
        mart, score = cox_residuals(cox.params[0], t, d, x)
        worst_res = max(worst_res, abs(mart.sum()), abs(score.sum()))
        beta_bis = optimize.bisect(lambda b: _breslow_score(b, t, d, x), -10, 10, xtol=1e-13)
        worst_cox = max(worst_cox, abs(cox.params[0] - beta_bis))
        wb = fit_weibull(t, d, x)
        grid = _grid_maximize(lambda th: _weibull_loglik(th, t, d, x) if th[2] > 0 else -np.inf,
                              wb.params + np.array([0.3, -0.3, 0.2]), np.array([1.0, 1.0, 0.5]))
        worst_wb = max(worst_wb, np.max(np.abs(grid - wb.params)))
    ok = worst_res <= 1e-8 and worst_cox <= 1e-8 and worst_wb <= 1e-4
    report(8, ok, f"residual sums {worst_res:.1e} (<= 1e-8); Cox vs bisection {worst_cox:.1e} (<= 1e-8); "
                  f"Weibull vs grid {worst_wb:.1e} (<= 1e-4)")
    assert ok


# (estimate, printed lower, printed upper, colour class) for published entries with symmetric intervals
TABLE_ENTRIES = [
    (0.84, 0.08, 1.59, "positive"),
    (0.62, 0.01, 1.23, "positive"),
    (0.52, 0.03, 1.02, "positive"),
    (-0.37, -0.72, -0.03, "negative"),
    (-0.27, -1.15, 0.60, "none"),
    (0.33, -0.33, 1.00, "none"),
    (0.04, -0.40, 0.47, "none"),
    (-0.06, -0.60, 0.48, "none"),
    (-0.20, -1.28, 0.88, "none"),
    (0.15, -0.57, 0.87, "none"),
    (-0.26, -0.76, 0.23, "none"),
    (-0.24, -0.96, 0.47, "none"),
    (-0.05, -0.58, 0.48, "none"),
    (-0.03, -0.39, 0.32, "none"),
    (0.35, -0.62, 1.32, "none"),
]


def test_criterion_09_wald_reporting(report):
    worst, classes = 0.0, 0
    z = stats.norm.ppf(0.975)
    for est, lo, hi, cls in TABLE_ENTRIES:
        se = (hi - lo) / (2 * z)
        a, b = wald_interval(est, se**2, 0.95)
        worst = max(worst, abs(a - lo), abs(b - hi))
        classes += classify_interval(round(a, 2), round(b, 2)).label == cls
    ok = worst <= 0.01 and classes == len(TABLE_ENTRIES)
    report(9, ok, f"max bound deviation {worst:.4f} (<= 0.01); classes matched {classes}/{len(TABLE_ENTRIES)}")
    assert ok


def test_criterion_10_determinism(tmp_path, report):
    ds = generate(DGPSpec("pred", 200, 3, 10))
    write_csv(ds, tmp_path / "d.csv")
    cfg = {"data": "d.csv", "schema": schema_of(ds),
           "roles": {"family": "linear", "endpoint": {"response": "y"}, "treatment": "x_A",
                     "partitioning": ["z1", "z2", "z3", "z4"]},
           "control": {"nperm": 1999, "seed": 11}, "output": "out"}
    (tmp_path / "cfg.json").write_text(json.dumps(cfg))
    outputs = []
    for threads in (1, 2, 4):
        out = tmp_path / f"out{threads}"
        code = cli.main(["analyze", "--config", str(tmp_path / "cfg.json"), "--threads", str(threads),
                         "--out", str(out), "--format", "json"])
        assert code == 0
        outputs.append((out / "tree.json").read_bytes())
    ok = outputs[0] == outputs[1] == outputs[2]
    report(10, ok, "tree.json byte-identical for --threads 1, 2, 4" if ok else "tree.json differs across threads")
    assert ok
