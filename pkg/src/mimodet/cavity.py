"""Per-user Gaussian cavity machinery shared by the message-passing detectors."""

import numpy as np

VAR_FLOOR = 1e-13


def gaussian_product(mean_a, var_a, mean_b, var_b):
    """Moments of the (normalized) product of two Gaussian densities."""
    mean_a, var_a = np.asarray(mean_a, dtype=float), np.asarray(var_a, dtype=float)
    mean_b, var_b = np.asarray(mean_b, dtype=float), np.asarray(var_b, dtype=float)
    if np.any(var_a <= 0) or np.any(var_b <= 0):
        raise ValueError("gaussian_product requires strictly positive variances")
    var = 1.0 / (1.0 / var_a + 1.0 / var_b)
    mean = var * (mean_a / var_a + mean_b / var_b)
    return mean, var


def discretized_gaussian_pmf(mean, var, points):
    """N(mean, var) evaluated on the alphabet `points` and renormalized.

    mean/var broadcast against each other; the output gains a trailing axis
    of size len(points). Computed with max-subtraction in the log domain.
    """
    mean = np.asarray(mean, dtype=float)[..., None]
    var = np.asarray(var, dtype=float)[..., None]
    logq = -((points - mean) ** 2) / (2.0 * var)
    logq -= logq.max(axis=-1, keepdims=True)
    q = np.exp(logq)
    q /= q.sum(axis=-1, keepdims=True)
    return q


def discrete_moments(q, points):
    """Mean and variance of categorical distributions over `points`.

    q has a trailing axis of size len(points); rows must sum to one.
    Accepts a CavityDistribution for q and a Constellation for points.
    """
    q = getattr(q, "q", q)
    points = getattr(points, "real_points", points)
    q = np.asarray(q, dtype=float)
    total = q.sum(axis=-1)
    if np.any(np.abs(total - 1.0) > 1e-9):
        raise ValueError("cavity probabilities must sum to 1 (within 1e-9)")
    x_hat = np.einsum("...m,m->...", q, points)
    v_hat = np.einsum("...m,...m->...", q, (points - x_hat[..., None]) ** 2)
    return x_hat, np.maximum(v_hat, VAR_FLOOR)


def hard_decision(values, points):
    """Nearest-point decision per real dimension."""
    values = np.asarray(values)
    midpoints = (points[1:] + points[:-1]) / 2.0
    idx = np.searchsorted(midpoints, values)
    return points[idx]


def complex_symbol_errors(x_hard, x_true):
    """Count wrong complex symbols (either real component wrong).

    The trailing axis holds the real-lifted K = 2*Nt entries with the
    real parts first. Returns (errors, symbols).
    """
    k = x_hard.shape[-1]
    half = k // 2
    wrong = (x_hard[..., :half] != x_true[..., :half]) | (
        x_hard[..., half:] != x_true[..., half:]
    )
    return int(wrong.sum()), int(wrong.size)
