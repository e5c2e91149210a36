"""Expectation-propagation detector with per-iteration introspection."""

import numpy as np

from .base import Detector, DetectionResult, EpState
from .cavity import VAR_FLOOR, discrete_moments, discretized_gaussian_pmf, hard_decision
from .validation import as_batch, check_batch, check_positive_int, check_unit_interval


class SingularSystemError(RuntimeError):
    """The observation-module system matrix failed its SPD factorization."""


def spd_inverse(a):
    """Inverse of a (stack of) SPD matrix via Cholesky factor inversion."""
    try:
        chol = np.linalg.cholesky(a)
    except np.linalg.LinAlgError as exc:
        raise SingularSystemError(
            "system matrix is not positive definite (should not occur for lambda > 0)"
        ) from exc
    chol_inv = np.linalg.inv(chol)
    return np.swapaxes(chol_inv, -1, -2) @ chol_inv


def ep_observe_core(gram, hty, noise_var, lam, gam):
    """Posterior and cavity moments from the Gaussian observation model.

    gram/hty are precomputed H^T H and H^T y with leading batch axes;
    returns (sigma_diag, mu, x_obs, v_obs, sigma_full).
    """
    k = gram.shape[-1]
    a = gram / noise_var[..., None, None] + lam[..., None] * np.eye(k)
    sigma_full = spd_inverse(a)
    sigma_diag = np.diagonal(sigma_full, axis1=-2, axis2=-1)
    b = hty / noise_var[..., None] + gam
    mu = np.einsum("...ij,...j->...i", sigma_full, b)
    denom = np.maximum(1.0 - sigma_diag * lam, VAR_FLOOR)
    v_obs = np.maximum(sigma_diag / denom, VAR_FLOOR)
    x_obs = v_obs * (mu / sigma_diag - gam)
    return sigma_diag, mu, x_obs, v_obs, sigma_full


def ep_observe(instance, gamma, lam):
    """Single-instance observation module: (sigma_post, mu_post, x_obs, v_obs)."""
    if np.any(np.asarray(lam) <= 0):
        raise ValueError("lambda entries must be strictly positive")
    batch = as_batch(instance)
    gram = np.einsum("bnk,bnj->bkj", batch.h, batch.h)
    hty = np.einsum("bnk,bn->bk", batch.h, batch.y)
    sigma_diag, mu, x_obs, v_obs, _ = ep_observe_core(
        gram, hty, batch.noise_var, np.asarray(lam)[None], np.asarray(gamma)[None]
    )
    return sigma_diag[0], mu[0], x_obs[0], v_obs[0]


def ep_estimate(x_hat, v_hat, x_obs, v_obs, prev_gamma, prev_lambda, eta):
    """Moment-matched prior update with negativity guard and damping."""
    if np.any(np.asarray(v_hat) <= 0) or np.any(np.asarray(v_obs) <= 0):
        raise ValueError("variances must be strictly positive")
    lam_new = 1.0 / v_hat - 1.0 / v_obs
    gam_new = x_hat / v_hat - x_obs / v_obs
    revert = lam_new <= 0.0
    lam_new = np.where(revert, prev_lambda, lam_new)
    gam_new = np.where(revert, prev_gamma, gam_new)
    lam = (1.0 - eta) * lam_new + eta * prev_lambda
    gam = (1.0 - eta) * gam_new + eta * prev_gamma
    return gam, lam


def ep_detect_core(batch, iterations, damping, collect_trace=False):
    """Batched EP loop; returns final estimates and optional stacked traces."""
    h, y = batch.h, batch.y
    noise_var = np.asarray(batch.noise_var, dtype=float)
    points = batch.constellation.real_points
    es = batch.constellation.es_real
    b, _, k = h.shape

    gram = np.einsum("bnk,bnj->bkj", h, h)
    hty = np.einsum("bnk,bn->bk", h, y)
    lam = np.full((b, k), 1.0 / es)
    gam = np.zeros((b, k))

    trace = {key: [] for key in ("x_hat", "x_obs", "v_obs", "mu", "sigma", "states")}
    x_hat = np.zeros((b, k))
    for t in range(1, iterations + 1):
        sigma_diag, mu, x_obs, v_obs, _ = ep_observe_core(gram, hty, noise_var, lam, gam)
        q = discretized_gaussian_pmf(x_obs, v_obs, points)
        x_hat, v_hat = discrete_moments(q, points)
        gam, lam = ep_estimate(x_hat, v_hat, x_obs, v_obs, gam, lam, damping)
        if collect_trace:
            trace["x_hat"].append(x_hat)
            trace["x_obs"].append(x_obs)
            trace["v_obs"].append(v_obs)
            trace["mu"].append(mu)
            trace["sigma"].append(sigma_diag)
            trace["states"].append(
                EpState(
                    gamma=gam,
                    lam=lam,
                    sigma_post=sigma_diag,
                    mu_post=mu,
                    x_obs=x_obs,
                    v_obs=v_obs,
                    x_hat=x_hat,
                    v_hat=v_hat,
                    iteration=t,
                )
            )
    x_hard = hard_decision(x_hat, points)
    return x_hard, x_hat, trace


class EpDetector(Detector):
    """EP detector: damped Gaussian prior refinement, T observation/estimation rounds."""

    name = "ep"

    def __init__(self, iterations=10, damping=0.9):
        self.iterations = check_positive_int(iterations, "iterations")
        self.damping = check_unit_interval(damping, "damping")

    def detect_batch(self, batch, trace=False):
        batch = check_batch(batch)
        x_hard, _, traces = ep_detect_core(
            batch, self.iterations, self.damping, collect_trace=trace
        )
        result = DetectionResult(x_hard=x_hard, iterations_run=self.iterations)
        if trace:
            result.x_soft_trace = np.stack(traces["x_hat"])
            result.cavity_trace = (np.stack(traces["x_obs"]), np.stack(traces["v_obs"]))
            result.posterior_trace = (np.stack(traces["mu"]), np.stack(traces["sigma"]))
            result.states = traces["states"]
        return result


def ep_detect(instance, iterations=10, damping=0.9, trace=False):
    """Functional wrapper around EpDetector for one instance."""
    return EpDetector(iterations=iterations, damping=damping).detect(instance, trace=trace)
