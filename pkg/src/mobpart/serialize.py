"""Tree serialization: canonical JSON, DOT, indented text and CSV reports."""

from __future__ import annotations

import csv
import io
import json
import math

import numpy as np

from . import __version__
from .data import Dataset
from .tree import CI_CAVEAT, Tree, TreeNode, extract_subgroups, treatment_effects

SCHEMA_VERSION = 1
FLOAT_DIGITS = 12


def _canon(obj):
    """Round floats to 12 significant digits; non-finite values become null."""
    if isinstance(obj, dict):
        return {str(k): _canon(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_canon(v) for v in obj]
    if isinstance(obj, (bool, np.bool_)):
        return bool(obj)
    if isinstance(obj, (int, np.integer)):
        return int(obj)
    if isinstance(obj, (float, np.floating)):
        v = float(obj)
        if not math.isfinite(v):
            return None
        v = float(f"{v:.{FLOAT_DIGITS}g}")
        return 0.0 if v == 0 else v
    return obj


def canonical_json(obj) -> str:
    """Deterministic JSON text: sorted keys, two-space indent, 12-digit floats."""
    return json.dumps(_canon(obj), sort_keys=True, indent=2, allow_nan=False) + "\n"


def _split_dict(tree: Tree, node: TreeNode) -> dict | None:
    s = node.split
    if s is None:
        return None
    col = tree.columns.get(s.variable)
    out = {"variable": s.variable, "missing_route": s.missing_route, "statistic": s.statistic}
    if s.categories is not None:
        out["categories"] = [col.levels[c] if col is not None and col.levels else c for c in s.categories]
    else:
        out["threshold"] = s.threshold
    return out


def _node_dict(tree: Tree, node: TreeNode, parents) -> dict:
    fit = node.fit
    out = {
        "id": node.id,
        "depth": node.depth,
        "n": node.n,
        "parent": parents.get(node.id, (None,))[0],
        "children": list(node.children) if node.children else None,
        "leaf": node.is_leaf,
        "reason": node.reason,
        "split": _split_dict(tree, node),
        "annotation": node.annotation,
        "error": node.error,
        "tests": [
            {"variable": t.variable, "block": t.block, "statistic": t.statistic, "rank": t.rank,
             "p_raw": t.p_raw, "p_adj": t.p_adj, "p_chisq": t.p_chisq, "method": t.method, "B": t.B,
             "n_strata": t.n_strata}
            for t in node.tests
        ],
        "winner": None if node.winner is None else
        {"variable": node.winner.variable, "block": node.winner.block, "p_adj": node.winner.p_adj},
    }
    if fit is not None:
        se = np.sqrt(np.clip(np.diag(fit.vcov), 0, None))
        out["fit"] = {
            "family": fit.family,
            "converged": bool(fit.converged),
            "objective": fit.objective,
            "params": {nm: float(v) for nm, v in zip(fit.param_names, fit.params)},
            "se": {nm: float(v) for nm, v in zip(fit.param_names, se)},
        }
        out["effects"] = treatment_effects(fit, tree.control.level)
    else:
        out["fit"] = None
        out["effects"] = []
    return out


def tree_to_dict(tree: Tree, extra_meta: dict | None = None) -> dict:
    c = tree.control
    parents = tree.parent_map()
    meta = {
        "family": tree.family,
        "seed": c.seed,
        "control": {"alpha": c.alpha, "maxdepth": c.maxdepth, "minbucket": c.minbucket,
                    "minfit": c.minfit, "nperm": c.nperm, "exhaustive_threshold": c.exhaustive_threshold,
                    "method": c.method, "level": c.level},
        "roles": {"family": tree.roles.family, "endpoint": dict(tree.roles.endpoint),
                  "treatment": tree.roles.treatment, "partitioning": list(tree.roles.partitioning),
                  "strata": list(tree.roles.strata)},
        "ci_caveat": CI_CAVEAT,
        "multiplicity": "bonferroni",
        "version": __version__,
    }
    meta.update(extra_meta or {})
    return {"schema_version": SCHEMA_VERSION, "metadata": meta,
            "nodes": [_node_dict(tree, n, parents) for n in tree.nodes.values()]}


def tree_json(tree: Tree, extra_meta: dict | None = None) -> str:
    return canonical_json(tree_to_dict(tree, extra_meta))


# ---------------------------------------------------------------- human-readable


def _fmt(v: float, digits: int = 3) -> str:
    return "NA" if v is None or not np.isfinite(v) else f"{v:.{digits}f}"


def _effect_text(e: dict) -> str:
    return f"{e['param']} = {_fmt(e['estimate'], 2)} ({_fmt(e['lower'], 2)}, {_fmt(e['upper'], 2)})"


def _edge_label(tree: Tree, node: TreeNode, side: str) -> str:
    text = node.split.describe(tree.columns.get(node.split.variable), side)
    return text[len(node.split.variable) + 1:]


def tree_dot(tree: Tree) -> str:
    """Graph description: inner nodes show the split variable and adjusted p-value,
    leaves the size and treatment effects with confidence intervals."""
    lines = ["digraph mobtree {", f'  graph [comment="seed={tree.control.seed}"];',
             '  node [fontname="Helvetica"];']
    for node in tree.nodes.values():
        if node.is_leaf:
            effects = [_effect_text(e) for e in treatment_effects(node.fit, tree.control.level)]
            label = "\\n".join([f"Node {node.id} (n = {node.n})"] + effects)
            shape = "box"
        else:
            label = f"{node.id}\\n{node.split.variable}\\np = {node.winner.p_adj:.3g}"
            shape = "ellipse"
        lines.append(f'  n{node.id} [shape={shape}, label="{_escape(label)}"];')
    for node in tree.inner():
        for child, side in zip(node.children, ("left", "right")):
            lines.append(f'  n{node.id} -> n{child} [label="{_escape(_edge_label(tree, node, side))}"];')
    lines.append("}")
    return "\n".join(lines) + "\n"


def _escape(s: str) -> str:
    return s.replace('"', '\\"')


def tree_text(tree: Tree) -> str:
    lines = []

    def walk(node: TreeNode, indent: int, head: str):
        pad = "|   " * indent
        if node.is_leaf:
            effects = "; ".join(f"{_effect_text(e)} [{e['class']}]"
                                for e in treatment_effects(node.fit, tree.control.level))
            lines.append(f"{pad}[{node.id}] {head}n = {node.n}: {effects or 'no fit'} ({node.reason})")
            return
        lines.append(f"{pad}[{node.id}] {head}n = {node.n}, split on {node.split.variable} "
                     f"(block {node.winner.block}, p = {node.winner.p_adj:.4g}; {node.annotation})")
        for child, side in zip(node.children, ("left", "right")):
            desc = node.split.describe(tree.columns.get(node.split.variable), side)
            walk(tree.nodes[child], indent + 1, f"{desc}: ")

    walk(tree.root, 0, "")
    lines.append("")
    lines.append(f"Seed: {tree.control.seed}")
    lines.append(f"Note: {CI_CAVEAT}")
    return "\n".join(lines) + "\n"


SUBGROUP_FIELDS = ("node_id", "predicate", "n", "param", "estimate", "se", "lower", "upper", "class",
                   "annotation", "seed")


def subgroups_csv(tree: Tree) -> str:
    """One row per (leaf, treatment parameter)."""
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(SUBGROUP_FIELDS)
    for sg in extract_subgroups(tree):
        note = "; ".join(f"{v}: {a}" for v, a in sg.annotations)
        effects = sg.effects or ({"param": "", "estimate": np.nan, "se": np.nan, "lower": np.nan,
                                  "upper": np.nan, "class": "undetermined"},)
        for e in effects:
            w.writerow([sg.node_id, sg.predicate_text, sg.n, e["param"], _num(e["estimate"]), _num(e["se"]),
                        _num(e["lower"]), _num(e["upper"]), e["class"], note, tree.control.seed])
    return buf.getvalue()


def _num(v) -> str:
    return "NA" if v is None or not np.isfinite(v) else f"{v:.{FLOAT_DIGITS}g}"


def membership_csv(tree: Tree, dataset: Dataset) -> str:
    """Leaf id for every dataset row; ``used`` marks rows that entered the fits."""
    leaves = tree.predict(dataset)
    used = np.zeros(len(dataset), dtype=bool)
    used[tree.root.rows] = True
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(("row", "node_id", "used", "seed"))
    for i, (leaf, u) in enumerate(zip(leaves, used)):
        w.writerow((i + 1, int(leaf), int(u), tree.control.seed))
    return buf.getvalue()
