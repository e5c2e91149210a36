"""Bayesian parallel interference cancellation with decision-statistics combining."""

import numpy as np

from .base import Detector, DetectionResult, BpicState
from .cavity import VAR_FLOOR, discrete_moments, discretized_gaussian_pmf, hard_decision
from .validation import as_batch, check_batch, check_positive_int


def bpic_observe_core(gram, gram_sq, gkk, hty, noise_var, x_hat_prev, v_hat_prev):
    """PIC mean and interference-plus-noise variance for every user.

    mu_k = h_k^T (y - H xhat_{\\k}) / (h_k^T h_k); the interference variance
    sums (h_k^T h_j)^2 v_j over j != k. With x_hat_prev = 0 the mean reduces
    to the matched filter.
    """
    interference = np.einsum("...kj,...j->...k", gram, x_hat_prev) - gkk * x_hat_prev
    mu = (hty - interference) / gkk
    var_sum = np.einsum("...kj,...j->...k", gram_sq, v_hat_prev) - gkk**2 * v_hat_prev
    sigma = (var_sum + gkk * noise_var[..., None]) / gkk**2
    return mu, np.maximum(sigma, VAR_FLOOR)


def bpic_observe(instance, x_hat_prev, v_hat_prev):
    """Single-instance observation module: (mu, sigma)."""
    batch = as_batch(instance)
    gram = np.einsum("bnk,bnj->bkj", batch.h, batch.h)
    gkk = np.diagonal(gram, axis1=-2, axis2=-1)
    if np.any(gkk <= 0):
        raise ValueError("zero-norm channel column")
    hty = np.einsum("bnk,bn->bk", batch.h, batch.y)
    mu, sigma = bpic_observe_core(
        gram,
        gram**2,
        gkk,
        hty,
        batch.noise_var,
        np.asarray(x_hat_prev, dtype=float)[None],
        np.asarray(v_hat_prev, dtype=float)[None],
    )
    return mu[0], sigma[0]


def dsc_error(gram, gkk, hty, x_hat):
    """Instantaneous squared error of the matched-filter residual per user."""
    residual = (hty - np.einsum("...kj,...j->...k", gram, x_hat)) / gkk
    return residual**2


def dsc_weights(error_prev, error_cur):
    """DSC weighting rho = e_prev / (e_cur + e_prev); 0.5 when both vanish."""
    total = error_cur + error_prev
    with np.errstate(invalid="ignore", divide="ignore"):
        rho = np.where(total > 0, error_prev / np.where(total > 0, total, 1.0), 0.5)
    return rho


def bpic_dsc(x_hat_new, v_hat_new, state, instance):
    """Combine consecutive estimates by inverse instantaneous squared errors.

    `state` is the BpicState from the previous iteration (t-1 >= 1);
    returns the updated BpicState for iteration t.
    """
    if state.iteration < 1:
        raise ValueError("DSC is only defined from the second iteration on")
    batch = as_batch(instance)
    gram = np.einsum("bnk,bnj->bkj", batch.h, batch.h)[0]
    gkk = np.diagonal(gram)
    hty = np.einsum("bnk,bn->bk", batch.h, batch.y)[0]
    error_cur = dsc_error(gram, gkk, hty, x_hat_new)
    rho = dsc_weights(state.dsc_error_cur, error_cur)
    x_hat = (1.0 - rho) * state.x_hat + rho * x_hat_new
    v_hat = (1.0 - rho) * state.v_hat + rho * v_hat_new
    return BpicState(
        x_hat=x_hat,
        v_hat=v_hat,
        mu=state.mu,
        sigma=state.sigma,
        dsc_error_prev=state.dsc_error_cur,
        dsc_error_cur=error_cur,
        rho=rho,
        iteration=state.iteration + 1,
    )


def bpic_detect_core(batch, iterations, prior_var_init=0.0, collect_trace=False):
    """Batched BPIC loop: observe -> Bayesian moments -> DSC (t >= 2).

    prior_var_init is v^(0); zero makes the first-iteration variance the
    matched-filter noise term sigma^2 / (h_k^T h_k).
    """
    h, y = batch.h, batch.y
    noise_var = np.asarray(batch.noise_var, dtype=float)
    points = batch.constellation.real_points
    b, _, k = h.shape

    gram = np.einsum("bnk,bnj->bkj", h, h)
    gkk = np.diagonal(gram, axis1=-2, axis2=-1)
    if np.any(gkk <= 0):
        raise ValueError("zero-norm channel column")
    gram_sq = gram**2
    hty = np.einsum("bnk,bn->bk", h, y)

    x_hat = np.zeros((b, k))
    v_hat = np.full((b, k), float(prior_var_init))
    error_prev = None
    trace = {key: [] for key in ("x_hat", "mu", "sigma", "states")}
    for t in range(1, iterations + 1):
        mu, sigma = bpic_observe_core(gram, gram_sq, gkk, hty, noise_var, x_hat, v_hat)
        q = discretized_gaussian_pmf(mu, sigma, points)
        x_est, v_est = discrete_moments(q, points)
        error_cur = dsc_error(gram, gkk, hty, x_est)
        rho = None
        if t == 1:
            x_hat, v_hat = x_est, v_est
        else:
            rho = dsc_weights(error_prev, error_cur)
            x_hat = (1.0 - rho) * x_hat + rho * x_est
            v_hat = (1.0 - rho) * v_hat + rho * v_est
        error_prev_old, error_prev = error_prev, error_cur
        if collect_trace:
            trace["x_hat"].append(x_hat)
            trace["mu"].append(mu)
            trace["sigma"].append(sigma)
            trace["states"].append(
                BpicState(
                    x_hat=x_hat,
                    v_hat=v_hat,
                    mu=mu,
                    sigma=sigma,
                    dsc_error_prev=error_prev_old,
                    dsc_error_cur=error_cur,
                    rho=rho,
                    iteration=t,
                )
            )
    x_hard = hard_decision(x_hat, points)
    return x_hard, x_hat, trace


class BpicDetector(Detector):
    """BPIC detector: matched-filter PIC observation, Bayesian estimation, DSC."""

    name = "bpic"

    def __init__(self, iterations=10, prior_var_init=0.0):
        self.iterations = check_positive_int(iterations, "iterations")
        self.prior_var_init = float(prior_var_init)

    def detect_batch(self, batch, trace=False):
        batch = check_batch(batch)
        x_hard, _, traces = bpic_detect_core(
            batch, self.iterations, self.prior_var_init, collect_trace=trace
        )
        result = DetectionResult(x_hard=x_hard, iterations_run=self.iterations)
        if trace:
            result.x_soft_trace = np.stack(traces["x_hat"])
            result.cavity_trace = (np.stack(traces["mu"]), np.stack(traces["sigma"]))
            result.posterior_trace = result.cavity_trace
            result.states = traces["states"]
        return result


def bpic_detect(instance, iterations=10, trace=False):
    """Functional wrapper around BpicDetector for one instance."""
    return BpicDetector(iterations=iterations).detect(instance, trace=trace)
