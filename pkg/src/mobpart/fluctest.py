"""Permutation tests of independence between score blocks and partitioning variables.

The test statistic is the quadratic form of the linear statistic
``t = vec(G' H)`` standardised by its exact conditional mean and covariance
under permutation of the rows of ``H`` (within strata, when given). Rows of
``G`` hold the transformed partitioning variable, rows of ``H`` the scores.

Vectorisation is row-major: ``t[a * q + b] = sum_i G[i, a] * H[i, b]``.
"""

from __future__ import annotations

import itertools
import math
import warnings
from dataclasses import dataclass, replace
from typing import Sequence

import numpy as np
from scipy import stats

from .numerics import pseudo_inverse

DEFAULT_NPERM = 9999
EXHAUSTIVE_THRESHOLD = 100_000
TIE_SLACK = 1e-12
METHODS = ("montecarlo", "exhaustive", "chisq")


@dataclass(frozen=True)
class InstabilityTestResult:
    statistic: float
    rank: int
    p_raw: float
    p_adj: float
    method: str
    B: int
    n_strata: int = 1
    p_chisq: float = 1.0
    variable: str = ""
    block: str = ""


def regressor_matrix(values: np.ndarray, kind: str) -> np.ndarray:
    """Transformation of a partitioning variable into the columns of ``G``.

    Continuous (and time/event) values enter as they are, ordinal variables
    through their integer level scores, nominal variables as indicators of
    the levels present.
    """
    v = np.asarray(values, dtype=float)
    if kind == "nominal":
        present = np.unique(v)
        return (v[:, None] == present[None, :]).astype(float)
    return v.reshape(-1, 1)


def linear_statistic(G, H) -> np.ndarray:
    G = np.asarray(G, dtype=float)
    H = np.asarray(H, dtype=float)
    return (G.T @ H).reshape(-1)


def conditional_moments(G, H) -> tuple[np.ndarray, np.ndarray]:
    """Mean and covariance of ``linear_statistic(G, H[perm])`` over all row permutations."""
    G = np.asarray(G, dtype=float)
    H = np.asarray(H, dtype=float)
    m = G.shape[0]
    if m < 2:
        raise ValueError("conditional moments need at least two rows")
    gsum = G.sum(axis=0)
    hbar = H.mean(axis=0)
    Hc = H - hbar
    Vh = Hc.T @ Hc / m
    mu = np.outer(gsum, hbar).reshape(-1)
    Sg = m / (m - 1) * (G.T @ G) - np.outer(gsum, gsum) / (m - 1)
    return mu, np.kron(Sg, Vh)


def stratified_moments(G, H, strata=None) -> tuple[np.ndarray, np.ndarray]:
    """Moments under permutation within blocks: sums of the per-block moments."""
    G = np.asarray(G, dtype=float)
    H = np.asarray(H, dtype=float)
    if strata is None:
        return conditional_moments(G, H)
    strata = np.asarray(strata)
    d = G.shape[1] * H.shape[1]
    mu = np.zeros(d)
    Sigma = np.zeros((d, d))
    for s in np.unique(strata):
        idx = np.flatnonzero(strata == s)
        if idx.size == 1:
            mu += linear_statistic(G[idx], H[idx])
            continue
        m_s, S_s = conditional_moments(G[idx], H[idx])
        mu += m_s
        Sigma += S_s
    return mu, Sigma


def quad_statistic(t, mu, Sigma, rank_tol: float = 1e-10) -> tuple[float, int]:
    Splus, rank = pseudo_inverse(Sigma, rank_tol)
    d = np.asarray(t, dtype=float) - np.asarray(mu, dtype=float)
    return float(max(d @ Splus @ d, 0.0)), rank


def _compact(labels) -> np.ndarray:
    return np.unique(np.asarray(labels), return_inverse=True)[1].reshape(-1)


def _n_permutations(strata: np.ndarray) -> float:
    log_total = sum(math.lgamma(int(c) + 1) for c in np.bincount(strata))
    if log_total > math.log(1e15):
        return math.inf
    return float(round(math.exp(log_total)))


def _all_permutations(strata: np.ndarray) -> np.ndarray:
    """Every within-block permutation as rows of an index array."""
    m = strata.size
    idx = np.arange(m)[None, :]
    for s in np.unique(strata):
        pos = np.flatnonzero(strata == s)
        if pos.size < 2:
            continue
        perms = pos[np.array(list(itertools.permutations(range(pos.size))))]
        k = perms.shape[0]
        idx = np.repeat(idx, k, axis=0)
        idx[:, pos] = np.tile(perms, (idx.shape[0] // k, 1))
    return idx


class _Permuter:
    """Random within-block permutations from a counter-based stream."""

    def __init__(self, strata: np.ndarray, seed):
        self.strata = strata
        self.base = np.argsort(strata, kind="stable")
        self.sorted_codes = strata[self.base].astype(float)
        key = list(seed) if isinstance(seed, (tuple, list)) else [int(seed)]
        self.rng = np.random.Generator(np.random.Philox(np.random.SeedSequence(key)))

    def draw(self, b: int) -> np.ndarray:
        m = self.strata.size
        u = self.rng.random((b, m))
        order = np.argsort(self.sorted_codes[None, :] + u, axis=1)
        idx = np.empty((b, m), dtype=np.intp)
        idx[:, self.base] = self.base[order]
        return idx


def _components(q: int, components) -> list[tuple[np.ndarray, np.ndarray | None]]:
    if not components:
        return [(np.arange(q), None)]
    return [(np.asarray(c, dtype=int), None if s is None else _compact(s)) for c, s in components]


def perm_pvalue(G, H, B: int = DEFAULT_NPERM, strata=None, seed=0, components=None,
                exhaustive_threshold: int = EXHAUSTIVE_THRESHOLD, method: str = "montecarlo",
                rank_tol: float = 1e-10) -> InstabilityTestResult:
    """Conditional permutation test of independence between ``G`` and ``H``.

    Rows of ``H`` are permuted within ``strata``. With ``components`` (a list
    of ``(H column indices, block labels)``) the statistic is the sum of the
    per-component quadratic forms, each standardised with its own blocks.
    When the number of within-block permutations does not exceed
    ``exhaustive_threshold`` they are enumerated and the p-value is exact;
    otherwise ``B`` random permutations give the estimate
    ``(1 + #{c_b >= c_0}) / (B + 1)``. ``method="chisq"`` returns the
    asymptotic chi-square approximation instead.
    """
    if method not in METHODS:
        raise ValueError(f"unknown method {method!r}")
    G = np.asarray(G, dtype=float)
    H = np.asarray(H, dtype=float)
    if G.ndim == 1:
        G = G[:, None]
    if H.ndim == 1:
        H = H[:, None]
    m, p = G.shape
    q = H.shape[1]
    if H.shape[0] != m:
        raise ValueError("G and H must have the same number of rows")
    perm_blocks = np.zeros(m, dtype=int) if strata is None else _compact(strata)
    comps = _components(q, components)

    prepared = []
    c0 = 0.0
    rank = 0
    for cols, labels in comps:
        mu, Sigma = stratified_moments(G, H[:, cols], labels if labels is not None else
                                       (perm_blocks if strata is not None else None))
        Splus, r = pseudo_inverse(Sigma, rank_tol)
        d = linear_statistic(G, H[:, cols]) - mu
        c0 += float(max(d @ Splus @ d, 0.0))
        rank += r
        prepared.append((cols, mu, Splus))
    p_chisq = float(stats.chi2.sf(c0, rank)) if rank > 0 else 1.0
    n_strata = int(perm_blocks.max()) + 1 if m else 0

    def result(p_raw, used_method, n):
        return InstabilityTestResult(c0, rank, float(p_raw), float(p_raw), used_method, int(n),
                                     n_strata, p_chisq)

    if m and np.bincount(perm_blocks).max() < 2:
        warnings.warn("all permutation blocks are singletons; p-value set to 1", RuntimeWarning)
        return result(1.0, method, 0)
    if rank == 0 or c0 <= 0.0:
        return result(1.0, method, 0 if method == "chisq" else B)
    if method == "chisq":
        return result(p_chisq, "chisq", 0)

    threshold = c0 - TIE_SLACK * max(1.0, c0)
    total = _n_permutations(perm_blocks)
    if method == "exhaustive" or total <= exhaustive_threshold:
        if total > 10 * EXHAUSTIVE_THRESHOLD and method == "exhaustive":
            raise ValueError(f"exhaustive enumeration of {total:.3g} permutations requested")
        idx = _all_permutations(perm_blocks)
        count = 0
        for start in range(0, idx.shape[0], _chunk(m, p, q)):
            count += int(np.sum(_stats(G, H, idx[start:start + _chunk(m, p, q)], prepared) >= threshold))
        return result(count / idx.shape[0], "exhaustive", idx.shape[0])

    if B < 1:
        raise ValueError("B must be at least 1")
    permuter = _Permuter(perm_blocks, seed)
    count = 0
    done = 0
    chunk = _chunk(m, p, q)
    while done < B:
        b = min(chunk, B - done)
        count += int(np.sum(_stats(G, H, permuter.draw(b), prepared) >= threshold))
        done += b
    return result((1 + count) / (B + 1), "montecarlo", B)


def _chunk(m: int, p: int, q: int) -> int:
    return int(max(1, min(1024, 4_000_000 // max(1, m * min(p, q) + p * q))))


def _stats(G, H, idx, prepared) -> np.ndarray:
    """Quadratic forms for a batch of permutations (rows of ``idx``)."""
    if G.shape[1] <= H.shape[1]:
        # G[inv]' H == G' H[idx]; gather on the narrower matrix
        inv = np.empty_like(idx)
        np.put_along_axis(inv, idx, np.arange(idx.shape[1])[None, :], axis=1)
        T = np.einsum("bmp,mq->bpq", G[inv], H, optimize=True)
    else:
        T = np.einsum("mp,bmq->bpq", G, H[idx], optimize=True)
    out = np.zeros(idx.shape[0])
    for cols, mu, Splus in prepared:
        D = T[:, :, cols].reshape(idx.shape[0], -1) - mu
        out += np.einsum("bi,ij,bj->b", D, Splus, D, optimize=True)
    return out


def bonferroni_adjust(p_raws: Sequence[float | None]) -> list[float | None]:
    """Multiply by the number of tests actually performed (``None`` marks a skipped test)."""
    k = sum(p is not None for p in p_raws)
    return [None if p is None else min(1.0, p * k) for p in p_raws]


def adjust_results(results: Sequence[InstabilityTestResult]) -> list[InstabilityTestResult]:
    adj = bonferroni_adjust([r.p_raw for r in results])
    return [replace(r, p_adj=a) for r, a in zip(results, adj)]
