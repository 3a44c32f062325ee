"""Brute-force re-derivations of the closed-form quantities.

Everything here is written with plain Python loops over lists on purpose so
that it shares no arithmetic with the vectorized implementation it checks.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np
from scipy import stats as sps

ALGEBRA_TOL = 1e-12
SAMPLER_ALPHA = 1e-3


@dataclass
class Check:
    name: str
    max_abs_error: float
    tolerance: float

    @property
    def passed(self) -> bool:
        return self.max_abs_error <= self.tolerance


@dataclass
class OracleReport:
    checks: list = field(default_factory=list)

    def add(self, name, err, tol):
        self.checks.append(Check(name, float(err), tol))

    @property
    def passed(self) -> bool:
        return all(c.passed for c in self.checks)

    def failures(self):
        return [c for c in self.checks if not c.passed]


def _loop_statistics(counts):
    C = len(counts)
    N = 0
    for i in range(C):
        for j in range(C):
            N += counts[i][j]
    J = [[counts[i][j] / N for j in range(C)] for i in range(C)]
    P = [[0.0] * C for _ in range(C)]
    for j in range(C):
        col = 0.0
        n_col = 0
        for i in range(C):
            col += J[i][j]
            n_col += counts[i][j]
        if n_col > 0:
            for i in range(C):
                P[i][j] = J[i][j] / col
    q = [0.0] * C
    for i in range(C):
        acc = 0.0
        for j in range(C):
            acc += J[i][j]
        q[i] = acc
    W = [[0.0] * C for _ in range(C)]
    w = [[0.0] * C for _ in range(C)]
    for i in range(C):
        for j in range(C):
            if counts[i][j] > 0:
                W[i][j] = q[i] / P[i][j]
                w[i][j] = W[i][j] / counts[i][j]
    return J, P, q, W, w


def _max_abs(a, b):
    a = np.asarray(a, dtype=float)
    b = np.asarray(b, dtype=float)
    if a.shape != b.shape:
        return math.inf
    return float(np.max(np.abs(a - b))) if a.size else 0.0


def oracle_weights(M, tol: float = ALGEBRA_TOL) -> OracleReport:
    """Recompute J, P, q, W, w by loops and compare to the core module."""
    from . import core

    counts = [[int(v) for v in row] for row in np.asarray(getattr(M, "counts", M))]
    if len(counts) > 6:
        raise ValueError("oracle_weights is limited to C <= 6")
    cm = M if isinstance(M, core.ConfusionMatrix) else core.ConfusionMatrix(np.array(counts))
    st = core.estimate_statistics(cm)
    wt = core.compute_weights(st, cm)
    J, P, q, W, w = _loop_statistics(counts)
    rep = OracleReport()
    rep.add("J", _max_abs(J, st.J), tol)
    rep.add("P", _max_abs(P, st.P), tol)
    rep.add("q", _max_abs(q, st.q), tol)
    # W can be large (q/P with tiny P); compare relative to magnitude
    scale = max(1.0, max(max(row) for row in W))
    rep.add("W", _max_abs(W, wt.W) / scale, tol)
    scale_w = max(1.0, max(max(row) for row in w))
    rep.add("w", _max_abs(w, wt.w) / scale_w, tol)
    return rep


def loop_mutual_information(joint) -> float:
    rows = [[float(v) for v in row] for row in np.asarray(joint)]
    total = 0.0
    for row in rows:
        for v in row:
            total += v
    rows = [[v / total for v in row] for row in rows]
    R = len(rows)
    K = len(rows[0])
    r = [sum(rows[i][j] for j in range(K)) for i in range(R)]
    c = [sum(rows[i][j] for i in range(R)) for j in range(K)]
    mi = 0.0
    for i in range(R):
        for j in range(K):
            p = rows[i][j]
            if p > 0:
                mi += p * math.log(p / (r[i] * c[j]))
    return mi


def oracle_mi(joint, tol: float = ALGEBRA_TOL) -> OracleReport:
    from . import core

    J = np.asarray(joint, dtype=float)
    if max(J.shape) > 6:
        raise ValueError("oracle_mi is limited to C <= 6")
    rep = OracleReport()
    rep.add("mutual_information", abs(loop_mutual_information(J) - core.mutual_information(J)), tol)
    return rep


def chi_square_gof(observed, expected_probs):
    """Pearson chi-square over cells with positive expected probability.

    Returns (statistic, dof, p_value). Draws landing on zero-probability cells
    make the statistic infinite.
    """
    observed = np.asarray(observed, dtype=float)
    p = np.asarray(expected_probs, dtype=float)
    p = p / p.sum()
    n = observed.sum()
    pos = p > 0
    if observed[~pos].sum() > 0:
        return math.inf, int(pos.sum()) - 1, 0.0
    exp = n * p[pos]
    stat = float(((observed[pos] - exp) ** 2 / exp).sum())
    dof = int(pos.sum()) - 1
    if dof <= 0:
        return stat, 0, 1.0
    return stat, dof, float(sps.chi2.sf(stat, dof))


def oracle_sampler(weights, draws, alpha: float = SAMPLER_ALPHA) -> OracleReport:
    """Chi-square goodness of fit of drawn indices against ``weights``.

    The reported error is the p-value shortfall ``max(0, alpha - p)`` so that
    ``passed`` means the fit is not rejected at level ``alpha``.
    """
    weights = np.asarray(weights, dtype=float)
    if weights.size > 1000:
        raise ValueError("oracle_sampler handles at most 1000 distinct weights")
    observed = np.bincount(np.asarray(draws, dtype=np.int64), minlength=weights.size)
    if observed.size > weights.size:
        rep = OracleReport()
        rep.add("index_range", math.inf, 0.0)
        return rep
    _, _, pval = chi_square_gof(observed, weights)
    rep = OracleReport()
    rep.add("chi_square_pvalue_shortfall", max(0.0, alpha - pval), 0.0)
    return rep
