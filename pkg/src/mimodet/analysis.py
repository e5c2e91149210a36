"""Posterior-approximation diagnostics: moment gaps, probability ratios,
residual-noise correlation, QQ data, and condition-binned SER."""

from dataclasses import dataclass

import numpy as np
from scipy.special import ndtri

from .baselines import (
    candidate_chunk,
    candidate_objectives_batch,
    detection_objective,
    enumeration_size,
)
from .cavity import complex_symbol_errors, hard_decision
from .system import InstanceBatch, RngStream, lift_complex_to_real, lift_vector, sample_batch
from .validation import as_batch

DEFAULT_POSTERIOR_BUDGET = 2**20


@dataclass
class TruePosterior:
    """Exact posterior over the full symbol lattice for one instance."""

    support: np.ndarray        # (M^K, K)
    probs: np.ndarray          # (M^K,)
    mu_true: np.ndarray        # (K,)
    sigma_true_diag: np.ndarray  # (K,)


@dataclass
class MetricsReport:
    """Posterior-accuracy summary for one detector/configuration."""

    detector: str
    delta_mu: float
    delta_sigma: float
    r_per_iter: np.ndarray
    c_per_iter: np.ndarray
    ser: float
    ser_ci95: float
    qq_quantiles: np.ndarray   # (2, n): theoretical, empirical
    n_instances: int
    n_residual_instances: int


def _posterior_from_objectives(objs, noise_var, points, k):
    """Probabilities and exact first/second diagonal moments, batched.

    objs is (B, C) in lexicographic candidate order; normalization uses
    log-sum-exp.
    """
    log_p = -objs / (2.0 * noise_var[:, None])
    log_p -= log_p.max(axis=1, keepdims=True)
    p = np.exp(log_p)
    p /= p.sum(axis=1, keepdims=True)
    support = candidate_chunk(points, k, 0, objs.shape[1])
    mu = p @ support
    second = p @ support**2
    return p, support, mu, np.maximum(second - mu**2, 0.0)


def enumerate_posterior(instance, budget=DEFAULT_POSTERIOR_BUDGET):
    """Exact posterior by lattice enumeration (feasible for M^K <= budget)."""
    batch = as_batch(instance)
    points = batch.constellation.real_points
    k = batch.h.shape[-1]
    enumeration_size(points.size, k, budget)
    objs = candidate_objectives_batch(batch.h, batch.y, points, budget)
    p, support, mu, var = _posterior_from_objectives(
        objs, np.asarray(batch.noise_var, dtype=float), points, k
    )
    return TruePosterior(
        support=support, probs=p[0], mu_true=mu[0], sigma_true_diag=var[0]
    )


def moment_gaps(posterior_means, posterior_vars, true_means=None, true_vars=None):
    """Average Euclidean gaps between detector and true posterior moments.

    Either pass four arrays, or a traced DetectionResult and a TruePosterior
    (final-iteration posterior moments are compared).
    """
    if true_means is None and true_vars is None:
        result, posterior = posterior_means, posterior_vars
        mean_trace, var_trace = result.posterior_trace
        posterior_means, posterior_vars = mean_trace[-1], var_trace[-1]
        true_means, true_vars = posterior.mu_true, posterior.sigma_true_diag
    posterior_means = np.atleast_2d(posterior_means)
    posterior_vars = np.atleast_2d(posterior_vars)
    true_means = np.atleast_2d(true_means)
    true_vars = np.atleast_2d(true_vars)
    delta_mu = np.linalg.norm(true_means - posterior_means, axis=-1).mean()
    delta_sigma = np.linalg.norm(true_vars - posterior_vars, axis=-1).mean()
    return float(delta_mu), float(delta_sigma)


def probability_ratio(x_est_per_iter, instance, ml_budget=2**24):
    """Posterior-probability ratio of per-iteration estimates to the ML solution.

    Normalization cancels: the ratio is exp(-(f(x_est) - f(x_ml)) / (2 sigma^2)).
    """
    from .baselines import ml_oracle

    batch = as_batch(instance)
    _, obj_ml = ml_oracle(instance, budget=ml_budget)
    h, y = batch.h[0], batch.y[0]
    sigma2 = float(batch.noise_var[0])
    x_est_per_iter = np.asarray(x_est_per_iter)
    objs = detection_objective(h, y, x_est_per_iter)
    return np.exp(-(objs - obj_ml) / (2.0 * sigma2))


def probability_ratio_from_objectives(est_objs, ml_objs, noise_var):
    """Batched ratio average: est_objs (T, B), ml_objs (B), noise_var (B)."""
    return np.exp(-(est_objs - ml_objs[None, :]) / (2.0 * noise_var[None, :])).mean(axis=1)


def residual_noise_stats(cavity_means, cavity_vars, x_ml, qq_points=512):
    """Residual-noise correlation coefficient per iteration plus QQ data.

    cavity_means/vars are (T, R, K) traces over R realizations; x_ml is
    (R, K). Returns (c_per_iter, qq) where qq stacks Gaussian reference
    quantiles over empirical standardized-residual quantiles.
    """
    cavity_means = np.asarray(cavity_means)
    cavity_vars = np.asarray(cavity_vars)
    x_ml = np.asarray(x_ml)
    if cavity_means.ndim != 3 or cavity_means.shape[1] < 2:
        raise ValueError("residual statistics need traces for at least 2 realizations")
    t_iters, _, k = cavity_means.shape
    eps = (cavity_means - x_ml[None]) / np.sqrt(cavity_vars)
    eye = np.eye(k)
    c_per_iter = np.empty(t_iters)
    for t in range(t_iters):
        corr = np.corrcoef(eps[t].T)
        c_per_iter[t] = np.linalg.norm(corr - eye)
    pooled = eps[-1].ravel()
    pooled = (pooled - pooled.mean()) / pooled.std()
    pooled.sort()
    n = pooled.size
    grid = np.linspace(0, n - 1, num=min(qq_points, n)).round().astype(int)
    theoretical = ndtri((grid + 0.5) / n)
    return c_per_iter, np.stack([theoretical, pooled[grid]])


def condition_number(h):
    """Ratio of extreme singular values; infinite for (numerically) rank-deficient matrices."""
    h = np.asarray(h)
    singulars = np.linalg.svd(h, compute_uv=False)
    tol = singulars[0] * max(h.shape) * np.finfo(h.dtype).eps
    if singulars[-1] <= tol:
        return np.inf
    return float(singulars[0] / singulars[-1])


def repeat_channel_batch(h_complex, constellation, snr_db, count, rng):
    """Symbol/noise draws over a fixed complex channel realization."""
    gen = rng.generator() if isinstance(rng, RngStream) else rng
    n_rx, n_tx = h_complex.shape
    sigma2_c = n_tx / (n_rx * 10.0 ** (snr_db / 10.0))
    h = lift_complex_to_real(h_complex)
    sym_idx = gen.integers(0, constellation.qam_order, size=(count, n_tx))
    x = lift_vector(constellation.complex_points[sym_idx])
    noise_c = gen.normal(size=(count, n_rx, 2)) * np.sqrt(sigma2_c / 2.0)
    noise = lift_vector(noise_c[..., 0] + 1j * noise_c[..., 1])
    y = x @ h.T + noise
    return InstanceBatch(
        h=np.broadcast_to(h, (count,) + h.shape).copy(),
        x_true=x,
        y=y,
        noise=noise,
        noise_var=np.full(count, sigma2_c / 2.0),
        n_tx=n_tx,
        n_rx=n_rx,
        constellation=constellation,
    )


def condition_binned_ser(
    detector,
    n_tx,
    n_rx,
    constellation,
    snr_db,
    n_channels,
    samples_per_channel,
    rng,
    bins=20,
):
    """Per-channel SER bucketed by the channel condition number.

    Returns a list of dict rows (bin bounds, mean condition number, ser,
    channel count); rank-deficient draws are reported under an infinite bin.
    """
    conds = np.empty(n_channels)
    sers = np.empty(n_channels)
    for i in range(n_channels):
        stream = rng.substream(i)
        gen = stream.generator()
        h_c = gen.normal(scale=np.sqrt(0.5 / n_rx), size=(n_rx, n_tx, 2))
        h_c = h_c[..., 0] + 1j * h_c[..., 1]
        conds[i] = condition_number(lift_complex_to_real(h_c))
        batch = repeat_channel_batch(
            h_c, constellation, snr_db, samples_per_channel, rng.substream(n_channels + i)
        )
        result = detector.detect_batch(batch)
        errs, syms = complex_symbol_errors(result.x_hard, batch.x_true)
        sers[i] = errs / syms

    finite = np.isfinite(conds)
    rows = []
    if finite.any():
        edges = np.quantile(conds[finite], np.linspace(0, 1, bins + 1))
        which = np.clip(np.searchsorted(edges, conds[finite], side="right") - 1, 0, bins - 1)
        for b in range(bins):
            mask = which == b
            if not mask.any():
                continue
            rows.append(
                {
                    "bin": b,
                    "cond_low": float(edges[b]),
                    "cond_high": float(edges[b + 1]),
                    "cond_mean": float(conds[finite][mask].mean()),
                    "ser": float(sers[finite][mask].mean()),
                    "n_channels": int(mask.sum()),
                }
            )
    if (~finite).any():
        rows.append(
            {
                "bin": bins,
                "cond_low": np.inf,
                "cond_high": np.inf,
                "cond_mean": np.inf,
                "ser": float(sers[~finite].mean()),
                "n_channels": int((~finite).sum()),
            }
        )
    return rows


def approximation_metrics(
    detector,
    n_tx,
    n_rx,
    constellation,
    snr_db,
    n_instances,
    rng,
    budget=DEFAULT_POSTERIOR_BUDGET,
    chunk=64,
):
    """Enumeration-based accuracy metrics: delta_mu, delta_sigma, r(t), SER.

    Heavy: enumerates the full lattice per instance. Returns a dict of
    accumulated values plus the per-iteration probability ratio.
    """
    points = constellation.real_points
    k = 2 * n_tx
    enumeration_size(points.size, k, budget)

    sum_dmu = sum_dsig = 0.0
    errors = symbols = 0
    r_sums = None
    done = 0
    stream = 0
    while done < n_instances:
        size = min(chunk, n_instances - done)
        batch = sample_batch(n_tx, n_rx, constellation, snr_db, size, rng.substream(stream))
        result = detector.detect_batch(batch, trace=True)
        objs = candidate_objectives_batch(batch.h, batch.y, points, budget)
        noise_var = np.asarray(batch.noise_var, dtype=float)
        _, _, mu_true, var_true = _posterior_from_objectives(objs, noise_var, points, k)

        post_mu, post_var = result.posterior_trace
        dmu = np.linalg.norm(mu_true - post_mu[-1], axis=-1)
        dsig = np.linalg.norm(var_true - post_var[-1], axis=-1)
        sum_dmu += dmu.sum()
        sum_dsig += dsig.sum()

        obj_ml = objs.min(axis=1)
        hard_iters = hard_decision(result.x_soft_trace, points)
        est_objs = detection_objective(batch.h[None], batch.y[None], hard_iters)
        ratios = np.exp(-(est_objs - obj_ml[None]) / (2.0 * noise_var[None]))
        r_sums = ratios.sum(axis=1) + (0.0 if r_sums is None else r_sums)

        e, s = complex_symbol_errors(result.x_hard, batch.x_true)
        errors += e
        symbols += s
        done += size
        stream += 1

    ser = errors / symbols
    return {
        "delta_mu": sum_dmu / n_instances,
        "delta_sigma": sum_dsig / n_instances,
        "r_per_iter": r_sums / n_instances,
        "ser": ser,
        "ser_ci95": 1.96 * np.sqrt(ser * (1 - ser) / symbols),
        "n_instances": n_instances,
        "symbols": symbols,
    }


def residual_metrics(
    detector,
    n_tx,
    n_rx,
    constellation,
    snr_db,
    n_instances,
    rng,
    budget=2**24,
    chunk=512,
    qq_points=512,
):
    """Residual-noise metrics: Pearson coefficient c(t) and QQ quantiles.

    Needs only the ML solutions (lattice argmin), so it scales to much
    larger realization counts than approximation_metrics.
    """
    points = constellation.real_points
    k = 2 * n_tx
    enumeration_size(points.size, k, budget)

    means = []
    variances = []
    ml = []
    done = 0
    stream = 10_000_000
    while done < n_instances:
        size = min(chunk, n_instances - done)
        batch = sample_batch(n_tx, n_rx, constellation, snr_db, size, rng.substream(stream))
        result = detector.detect_batch(batch, trace=True)
        objs = candidate_objectives_batch(batch.h, batch.y, points, budget)
        best = np.argmin(objs, axis=1)
        from .baselines import candidate_index_to_vector

        ml.append(candidate_index_to_vector(best, points, k))
        means.append(result.cavity_trace[0])
        variances.append(result.cavity_trace[1])
        done += size
        stream += 1

    cavity_means = np.concatenate(means, axis=1)
    cavity_vars = np.concatenate(variances, axis=1)
    x_ml = np.concatenate(ml, axis=0)
    c_per_iter, qq = residual_noise_stats(cavity_means, cavity_vars, x_ml, qq_points)
    return {"c_per_iter": c_per_iter, "qq_quantiles": qq, "n_instances": n_instances}


def posterior_metrics_report(
    detector,
    name,
    n_tx,
    n_rx,
    constellation,
    snr_db,
    n_instances,
    rng,
    n_residual_instances=None,
    budget=DEFAULT_POSTERIOR_BUDGET,
):
    """Full MetricsReport combining enumeration and residual passes."""
    if n_residual_instances is None:
        n_residual_instances = n_instances
    approx = approximation_metrics(
        detector, n_tx, n_rx, constellation, snr_db, n_instances, rng, budget
    )
    resid = residual_metrics(
        detector, n_tx, n_rx, constellation, snr_db, n_residual_instances, rng
    )
    return MetricsReport(
        detector=name,
        delta_mu=approx["delta_mu"],
        delta_sigma=approx["delta_sigma"],
        r_per_iter=approx["r_per_iter"],
        c_per_iter=resid["c_per_iter"],
        ser=approx["ser"],
        ser_ci95=approx["ser_ci95"],
        qq_quantiles=resid["qq_quantiles"],
        n_instances=n_instances,
        n_residual_instances=n_residual_instances,
    )
