"""LMMSE baseline and the exhaustive maximum-likelihood oracle."""

import numpy as np

from .base import Detector, DetectionResult
from .cavity import hard_decision
from .ep import spd_inverse
from .validation import as_batch, check_batch

DEFAULT_ML_BUDGET = 2**24
_CHUNK = 1 << 14


class EnumerationBudgetError(ValueError):
    """Raised when the candidate count M^K exceeds the enumeration budget."""

    def __init__(self, required, budget):
        self.required = required
        self.budget = budget
        super().__init__(
            f"exhaustive search needs {required} candidates, exceeding the budget {budget}"
        )


class MmseDetector(Detector):
    """Linear MMSE: (H^T H + (sigma^2/Es) I)^-1 H^T y, per-component decision."""

    name = "mmse"

    def __init__(self):
        pass

    def detect_batch(self, batch, trace=False):
        batch = check_batch(batch)
        points = batch.constellation.real_points
        k = batch.h.shape[-1]
        gram = np.einsum("bnk,bnj->bkj", batch.h, batch.h)
        hty = np.einsum("bnk,bn->bk", batch.h, batch.y)
        ridge = np.asarray(batch.noise_var) / batch.constellation.es_real
        a = gram + ridge[:, None, None] * np.eye(k)
        x_soft = np.einsum("bkj,bj->bk", spd_inverse(a), hty)
        x_hard = hard_decision(x_soft, points)
        result = DetectionResult(x_hard=x_hard, iterations_run=1)
        if trace:
            result.x_soft_trace = x_soft[None]
        return result


def mmse_detect(instance, trace=False):
    return MmseDetector().detect(instance, trace=trace)


def candidate_chunk(points, k, start, stop):
    """Rows start..stop of the lexicographic enumeration of points^k."""
    m = points.size
    idx = np.arange(start, stop, dtype=np.int64)[:, None]
    powers = m ** np.arange(k - 1, -1, -1, dtype=np.int64)
    digits = (idx // powers) % m
    return points[digits]


def enumeration_size(m, k, budget):
    total = m**k
    if total > budget:
        raise EnumerationBudgetError(total, budget)
    return int(total)


def ml_oracle(instance, budget=DEFAULT_ML_BUDGET):
    """Exhaustive argmin of ||y - Hx||^2 over the real alphabet lattice.

    Ties break to the lexicographically smallest candidate (scan order).
    Returns (x_ml, objective).
    """
    batch = as_batch(instance)
    h, y = batch.h[0], batch.y[0]
    points = batch.constellation.real_points
    k = h.shape[1]
    total = enumeration_size(points.size, k, budget)

    best_obj = np.inf
    best_x = None
    for start in range(0, total, _CHUNK):
        stop = min(start + _CHUNK, total)
        cands = candidate_chunk(points, k, start, stop)
        residual = y[None, :] - cands @ h.T
        objs = np.einsum("cn,cn->c", residual, residual)
        pos = int(np.argmin(objs))
        if objs[pos] < best_obj:
            best_obj = float(objs[pos])
            best_x = cands[pos]
    return best_x, best_obj


def _split_tables(points, k):
    ka = k // 2
    kb = k - ka
    m = points.size
    table_a = candidate_chunk(points, ka, 0, m**ka)
    table_b = candidate_chunk(points, kb, 0, m**kb)
    return table_a, table_b


def candidate_objectives_batch(h, y, points, budget=DEFAULT_ML_BUDGET):
    """All ||y - Hx||^2 in lexicographic candidate order, for a batch.

    Uses the Gram-form half-lattice split obj = c1(a) + c2(b) + 2 a^T G12 b,
    which matches the direct scan up to rounding. Returns (B, M^K).
    """
    b_sz, _, k = h.shape
    enumeration_size(points.size, k, budget)
    table_a, table_b = _split_tables(points, k)
    ka = table_a.shape[1]
    gram = np.einsum("bnk,bnj->bkj", h, h)
    hty = np.einsum("bnk,bn->bk", h, y)
    ynorm = np.einsum("bn,bn->b", y, y)

    gaa = gram[:, :ka, :ka]
    gbb = gram[:, ka:, ka:]
    gab = gram[:, :ka, ka:]
    # c1/c2: quadratic-minus-linear terms of each half lattice, (B, Ma)/(B, Mb)
    qa = np.einsum("ci,bij,cj->bc", table_a, gaa, table_a, optimize=True)
    qb = np.einsum("ci,bij,cj->bc", table_b, gbb, table_b, optimize=True)
    c1 = qa - 2.0 * np.einsum("ci,bi->bc", table_a, hty[:, :ka])
    c2 = qb - 2.0 * np.einsum("ci,bi->bc", table_b, hty[:, ka:])
    cross = 2.0 * np.einsum("ai,bij,cj->bac", table_a, gab, table_b, optimize=True)
    objs = ynorm[:, None, None] + c1[:, :, None] + c2[:, None, :] + cross
    return objs.reshape(b_sz, -1)


def ml_solve_batch(h, y, points, budget=DEFAULT_ML_BUDGET):
    """Batched exhaustive ML solutions; returns (x_ml (B, K), objectives (B,))."""
    k = h.shape[-1]
    objs = candidate_objectives_batch(h, y, points, budget)
    best = np.argmin(objs, axis=1)
    x_ml = candidate_index_to_vector(best, points, k)
    return x_ml, objs[np.arange(len(best)), best]


def candidate_index_to_vector(index, points, k):
    """Decode lexicographic candidate indices back into symbol vectors."""
    index = np.atleast_1d(np.asarray(index, dtype=np.int64))
    powers = points.size ** np.arange(k - 1, -1, -1, dtype=np.int64)
    digits = (index[:, None] // powers) % points.size
    return points[digits]


class MlOracle(Detector):
    """Exhaustive ML detector (feasible only for small M^K)."""

    name = "ml"

    def __init__(self, budget=DEFAULT_ML_BUDGET):
        self.budget = int(budget)

    def detect_batch(self, batch, trace=False):
        batch = check_batch(batch)
        points = batch.constellation.real_points
        x_ml, _ = ml_solve_batch(batch.h, batch.y, points, self.budget)
        return DetectionResult(x_hard=x_ml, iterations_run=1)


def detection_objective(h, y, x):
    """||y - Hx||^2 for arrays with matching leading axes."""
    residual = y - np.einsum("...nk,...k->...n", h, x)
    return np.einsum("...n,...n->...", residual, residual)
