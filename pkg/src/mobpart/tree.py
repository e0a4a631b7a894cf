"""Recursive partitioning driver.

Each node fits the base model, tests every partitioning variable against the
intercept and treatment score blocks, and splits on the variable with the
smallest Bonferroni-adjusted p-value if that is at most ``alpha``. Node ids
are assigned breadth-first starting with 1 at the root.
"""

from __future__ import annotations

import itertools
import logging
from collections import deque
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from typing import Mapping, Sequence

import numpy as np

from .data import Column, Dataset, RoleMap, complete_cases
from .fluctest import (
    DEFAULT_NPERM,
    EXHAUSTIVE_THRESHOLD,
    METHODS,
    InstabilityTestResult,
    adjust_results,
    perm_pvalue,
    quad_statistic,
    regressor_matrix,
    stratified_moments,
)
from .models import FitError, ModelFit, classify_interval, make_family, wald_interval
from .models.families import Family
from .numerics import pseudo_inverse

log = logging.getLogger(__name__)

BLOCKS = ("alpha", "beta")
MAX_NOMINAL_EXHAUSTIVE = 10
LEAF_REASONS = ("no-significant-variable", "maxdepth", "minfit", "no-admissible-cutpoint", "fit-failure")
CI_CAVEAT = ("Intervals are computed within subgroups chosen from the same data and are not "
             "adjusted for that selection; read them as a range of plausible values.")


@dataclass(frozen=True)
class ControlParams:
    alpha: float = 0.05
    maxdepth: int = 2
    minbucket: int = 20
    minfit: int = 40
    nperm: int = DEFAULT_NPERM
    seed: int = 0
    exhaustive_threshold: int = EXHAUSTIVE_THRESHOLD
    method: str = "montecarlo"
    threads: int = 1
    level: float = 0.95

    def __post_init__(self):
        if not 0 < self.alpha < 1:
            raise ValueError("alpha must lie in (0, 1)")
        if self.maxdepth < 0:
            raise ValueError("maxdepth must be >= 0")
        if self.minbucket < 1:
            raise ValueError("minbucket must be >= 1")
        if self.minfit < 2 * self.minbucket:
            raise ValueError("minfit must be at least 2 * minbucket")
        if self.nperm < 1:
            raise ValueError("nperm must be >= 1")
        if self.method not in METHODS:
            raise ValueError(f"method must be one of {METHODS}")
        if self.threads < 1:
            raise ValueError("threads must be >= 1")
        if not 0 < self.level < 1:
            raise ValueError("level must lie in (0, 1)")


@dataclass(frozen=True)
class SplitSpec:
    """Binary split: ``z <= threshold`` (or ``z in categories``) goes left."""

    variable: str
    threshold: float | None = None
    categories: tuple[int, ...] | None = None
    missing_route: str = "left"
    statistic: float = 0.0

    def goes_left(self, values: np.ndarray) -> np.ndarray:
        v = np.asarray(values, dtype=float)
        miss = np.isnan(v)
        if self.categories is not None:
            left = np.isin(v, self.categories)
        else:
            left = v <= self.threshold
        return np.where(miss, self.missing_route == "left", left)

    def describe(self, column: Column | None, side: str) -> str:
        if self.categories is not None:
            labels = [column.levels[c] if column is not None else str(c) for c in self.categories]
            if column is not None and side == "right":
                labels = [l for k, l in enumerate(column.levels) if k not in self.categories]
                text = f"{self.variable} not in {{{', '.join(labels)}}}"
            else:
                text = f"{self.variable} in {{{', '.join(labels)}}}"
        else:
            value = column.label(self.threshold) if column is not None else f"{self.threshold:.6g}"
            if column is not None and not column.categorical:
                value = f"{self.threshold:.6g}"
            text = f"{self.variable} {'<=' if side == 'left' else '>'} {value}"
        if side == self.missing_route:
            text += " (or missing)"
        return text


@dataclass
class TreeNode:
    id: int
    rows: np.ndarray
    depth: int
    fit: ModelFit | None = None
    tests: list[InstabilityTestResult] = field(default_factory=list)
    split: SplitSpec | None = None
    children: tuple[int, int] | None = None
    reason: str | None = None
    winner: InstabilityTestResult | None = None
    annotation: str | None = None
    error: str | None = None

    @property
    def is_leaf(self) -> bool:
        return self.split is None

    @property
    def n(self) -> int:
        return int(self.rows.size)


@dataclass(frozen=True)
class SubgroupReport:
    node_id: int
    predicate: tuple[str, ...]
    n: int
    effects: tuple[dict, ...]
    annotations: tuple[tuple[str, str], ...]

    @property
    def predicate_text(self) -> str:
        return " & ".join(self.predicate) if self.predicate else "all"


@dataclass
class Tree:
    nodes: dict[int, TreeNode]
    roles: RoleMap
    control: ControlParams
    family: str
    columns: dict[str, Column]

    @property
    def root(self) -> TreeNode:
        return self.nodes[1]

    def leaves(self) -> list[TreeNode]:
        return [n for n in self.nodes.values() if n.is_leaf]

    def inner(self) -> list[TreeNode]:
        return [n for n in self.nodes.values() if not n.is_leaf]

    def parent_map(self) -> dict[int, tuple[int, str]]:
        out = {}
        for node in self.nodes.values():
            if node.children:
                out[node.children[0]] = (node.id, "left")
                out[node.children[1]] = (node.id, "right")
        return out

    def path(self, node_id: int) -> list[tuple[TreeNode, str]]:
        parents = self.parent_map()
        out = []
        while node_id in parents:
            pid, side = parents[node_id]
            out.append((self.nodes[pid], side))
            node_id = pid
        return out[::-1]

    def predict_node(self, row: Mapping) -> int:
        return predict_node(self, row)

    def predict(self, dataset: Dataset, rows=None) -> np.ndarray:
        rows = dataset.all_rows() if rows is None else np.asarray(rows, dtype=int)
        out = np.ones(rows.size, dtype=int)
        for node in sorted(self.nodes.values(), key=lambda n: n.id):
            if node.is_leaf:
                continue
            here = out == node.id
            left = node.split.goes_left(dataset[node.split.variable].values[rows[here]])
            out[here] = np.where(left, node.children[0], node.children[1])
        return out


def _as_value(column: Column, value) -> float:
    if value is None:
        return np.nan
    if isinstance(value, str):
        if column.categorical:
            return float(column.levels.index(value))
        return float(value) if value not in ("", "NA") else np.nan
    return float(value)


def predict_node(tree: Tree, row: Mapping) -> int:
    """Leaf id for a single observation given as ``{variable: value}``; absent keys are missing."""
    node = tree.root
    while not node.is_leaf:
        col = tree.columns[node.split.variable]
        v = _as_value(col, row.get(node.split.variable))
        left = bool(node.split.goes_left(np.array([v]))[0])
        node = tree.nodes[node.children[0] if left else node.children[1]]
    return node.id


# --------------------------------------------------------------- variable selection


def _block_components(fit: ModelFit, cols: Sequence[int], ok: np.ndarray):
    if not fit.components:
        return None
    pos = {c: k for k, c in enumerate(cols)}
    comps = []
    for ccols, labels in fit.components:
        sel = [pos[c] for c in ccols if c in pos]
        if sel:
            comps.append((np.array(sel), labels[ok]))
    return comps


def _run_test(args):
    G, H, strata, comps, seed, control = args
    return perm_pvalue(G, H, B=control.nperm, strata=strata, seed=seed, components=comps,
                       exhaustive_threshold=control.exhaustive_threshold, method=control.method)


def select_variable(fit: ModelFit, dataset: Dataset, partitioning: Sequence[str],
                    control: ControlParams, node_id: int = 1):
    """Test every partitioning variable against both score blocks.

    Returns ``(winner, tests)``: ``tests`` lists the performed tests with
    Bonferroni-adjusted p-values; ``winner`` is the test with the smallest
    adjusted p-value if that does not exceed ``control.alpha``, else None.
    Ties on the adjusted p-value go to the earlier variable; the two blocks
    of one variable are separated by their asymptotic p-values.
    """
    tasks, meta = [], []
    for j, name in enumerate(partitioning):
        col = dataset[name]
        z = col.values[fit.rows]
        ok = ~np.isnan(z)
        if ok.sum() < control.minbucket or np.unique(z[ok]).size < 2:
            continue
        G = regressor_matrix(z[ok], col.kind)
        strata = None if fit.strata is None else fit.strata[ok]
        for b, block in enumerate(BLOCKS):
            cols = list(fit.alpha_cols if block == "alpha" else fit.beta_cols)
            if not cols:
                continue
            H = fit.scores[np.ix_(ok, cols)]
            comps = _block_components(fit, cols, ok)
            seed = (int(control.seed), int(node_id), j, b)
            tasks.append((G, H, strata, comps, seed, control))
            meta.append((j, name, block))
    if not tasks:
        return None, []
    if control.threads > 1:
        with ThreadPoolExecutor(max_workers=control.threads) as pool:
            raw = list(pool.map(_run_test, tasks))
    else:
        raw = [_run_test(t) for t in tasks]
    raw = [r.__class__(**{**r.__dict__, "variable": name, "block": block})
           for r, (_, name, block) in zip(raw, meta)]
    tests = adjust_results(raw)
    order = sorted(range(len(tests)), key=lambda k: (tests[k].p_adj, meta[k][0], tests[k].p_chisq,
                                                      BLOCKS.index(meta[k][2])))
    best = tests[order[0]]
    return (best if best.p_adj <= control.alpha else None), tests


# --------------------------------------------------------------- cutpoint search


def _candidate_splits(z: np.ndarray, col: Column, beta_signal: np.ndarray):
    """Yield (left indicator, threshold, categories) for every binary split of ``z``."""
    if col.kind == "nominal":
        present = np.unique(z)
        if present.size <= MAX_NOMINAL_EXHAUSTIVE:
            rest = present[1:]
            for r in range(0, rest.size):
                for extra in itertools.combinations(rest, r):
                    cats = (present[0],) + extra
                    yield np.isin(z, cats), None, tuple(int(c) for c in cats)
        else:
            means = np.array([beta_signal[z == c].mean() for c in present])
            ordered = present[np.argsort(means, kind="stable")]
            for k in range(1, ordered.size):
                cats = tuple(sorted(int(c) for c in ordered[:k]))
                yield np.isin(z, cats), None, cats
    else:
        for u in np.unique(z)[:-1]:
            yield z <= u, float(u), None


def select_cutpoint(fit: ModelFit, dataset: Dataset, variable: str,
                    control: ControlParams) -> SplitSpec | None:
    """Best binary split of ``variable`` for the node's concatenated score blocks.

    Every admissible split (both children with at least ``minbucket``
    non-missing rows) is scored by the two-sample quadratic-form statistic of
    its indicator against ``[psi_alpha | psi_beta]``; the maximum wins, ties
    going to the first candidate (smallest threshold). Rows missing the
    variable follow the larger child.
    """
    col = dataset[variable]
    z_all = col.values[fit.rows]
    ok = ~np.isnan(z_all)
    z = z_all[ok]
    cols = list(fit.alpha_cols) + list(fit.beta_cols)
    H = fit.scores[np.ix_(ok, cols)]
    m = z.size
    comps = _block_components(fit, cols, ok)
    strata = None if fit.strata is None else fit.strata[ok]
    beta_signal = fit.scores[np.ix_(ok, list(fit.beta_cols))].sum(axis=1) if fit.beta_cols else np.zeros(m)

    fast = comps is None and strata is None
    if fast:
        Hc = H - H.mean(axis=0)
        Vplus, _ = pseudo_inverse(Hc.T @ Hc / m)

    best = None
    best_stat = -np.inf
    for left, threshold, cats in _candidate_splits(z, col, beta_signal):
        nl = int(left.sum())
        if nl < control.minbucket or m - nl < control.minbucket:
            continue
        if fast:
            d = left @ Hc
            stat = float(d @ Vplus @ d) * (m - 1) / (nl * (m - nl))
        else:
            stat = _indicator_statistic(left.astype(float)[:, None], H, comps, strata)
        if best is None or stat > best_stat + 1e-12 * max(1.0, abs(best_stat)):
            best_stat = stat
            best = (threshold, cats, nl)
    if best is None:
        return None
    threshold, cats, nl = best
    route = "left" if nl >= m - nl else "right"
    return SplitSpec(variable, threshold, cats, route, float(best_stat))


def _indicator_statistic(g, H, comps, strata) -> float:
    if comps is None:
        comps = [(np.arange(H.shape[1]), strata)]
    total = 0.0
    for cols, labels in comps:
        Hk = H[:, cols]
        mu, Sigma = stratified_moments(g, Hk, labels)
        total += quad_statistic((g.T @ Hk).reshape(-1), mu, Sigma)[0]
    return total


# --------------------------------------------------------------- growing


def _fit_node(family: Family, node: TreeNode):
    try:
        node.fit = family.fit(node.rows)
    except FitError as exc:
        node.error = str(exc)
        node.reason = "fit-failure"
        return False
    if not node.fit.converged:
        node.error = "model fit did not converge"
        node.reason = "fit-failure"
        return False
    return True


def grow_tree(dataset: Dataset, roles: RoleMap, control: ControlParams | None = None,
              family: Family | None = None) -> Tree:
    """Grow a model-based tree by significance-based pre-pruning.

    Rows with missing model columns (endpoint, treatment, strata) are
    dropped first. Raises :class:`FitError` if the model cannot be fitted on
    the full sample.
    """
    control = control or ControlParams()
    family = family or make_family(dataset, roles)
    rows = complete_cases(dataset, roles.model_columns())
    if rows.size == 0:
        raise FitError("no complete rows for the model columns")
    columns = {name: dataset[name] for name in roles.partitioning}
    nodes: dict[int, TreeNode] = {}
    queue = deque([TreeNode(1, rows, 0)])
    next_id = 2
    while queue:
        node = queue.popleft()
        nodes[node.id] = node
        fitted = _fit_node(family, node)
        if node.id == 1 and node.fit is None:
            raise FitError(f"root model cannot be fitted: {node.error}")
        if not fitted:
            continue
        if node.depth >= control.maxdepth:
            node.reason = "maxdepth"
            continue
        if node.n < control.minfit:
            node.reason = "minfit"
            continue
        winner, tests = select_variable(node.fit, dataset, roles.partitioning, control, node.id)
        node.tests = tests
        if winner is None:
            node.reason = "no-significant-variable"
            continue
        split = select_cutpoint(node.fit, dataset, winner.variable, control)
        if split is None:
            node.reason = "no-admissible-cutpoint"
            continue
        node.winner = winner
        node.split = split
        left = split.goes_left(dataset[split.variable].values[node.rows])
        node.children = (next_id, next_id + 1)
        queue.append(TreeNode(next_id, node.rows[left], node.depth + 1))
        queue.append(TreeNode(next_id + 1, node.rows[~left], node.depth + 1))
        next_id += 2
        log.debug("node %d: split on %s (p_adj=%.4g)", node.id, split.variable, winner.p_adj)

    tree = Tree(dict(sorted(nodes.items())), roles, control, family.name, columns)
    for node in tree.inner():
        node.annotation = annotate_split(tree, node)
    return tree


# --------------------------------------------------------------- reporting


def treatment_effects(fit: ModelFit | None, level: float = 0.95) -> list[dict]:
    if fit is None:
        return []
    out = []
    for name in fit.treatment_params:
        est = fit.coef(name)
        var = fit.vcov[fit.index(name), fit.index(name)]
        try:
            lo, hi = wald_interval(est, var, level)
            label = classify_interval(lo, hi, level).label
        except ValueError:
            lo = hi = float("nan")
            label = "undetermined"
        out.append({"param": name, "estimate": est, "se": float(np.sqrt(var)) if var > 0 else float("nan"),
                    "lower": lo, "upper": hi, "class": label})
    return out


def annotate_split(tree: Tree, node: TreeNode) -> str:
    """Label a split variable from the treatment effects of the two children.

    Heuristic: predictive if, for some treatment parameter estimated on both
    sides, the confidence intervals do not overlap or the effect classes
    differ; otherwise prognostic only.
    """
    left, right = (tree.nodes[c] for c in node.children)
    if left.fit is None or right.fit is None:
        return "undetermined"
    level = tree.control.level
    le = {e["param"]: e for e in treatment_effects(left.fit, level)}
    re = {e["param"]: e for e in treatment_effects(right.fit, level)}
    shared = [p for p in le if p in re and np.isfinite(le[p]["lower"]) and np.isfinite(re[p]["lower"])]
    if not shared:
        return "undetermined"
    for p in shared:
        a, b = le[p], re[p]
        if a["upper"] < b["lower"] or b["upper"] < a["lower"] or a["class"] != b["class"]:
            return "predictive (possibly also prognostic)"
    return "prognostic only"


def extract_subgroups(tree: Tree) -> list[SubgroupReport]:
    out = []
    for leaf in tree.leaves():
        path = tree.path(leaf.id)
        predicate = tuple(n.split.describe(tree.columns.get(n.split.variable), side) for n, side in path)
        annotations = tuple((n.split.variable, n.annotation or "") for n, _ in path)
        out.append(SubgroupReport(leaf.id, predicate, leaf.n,
                                  tuple(treatment_effects(leaf.fit, tree.control.level)), annotations))
    return out
