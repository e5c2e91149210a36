"""GNN-refined detectors: EP and BPIC observation modules feeding the graph
network, whose readout replaces the Gaussian cavity in the estimation step.

One tape-based forward serves inference (under no_grad) and training
(record=True); gradients flow through every iteration, including the EP
matrix solve and the BPIC/DSC chain.
"""

from dataclasses import dataclass, field
from typing import Optional

import numpy as np

from . import autodiff as ad
from .base import Detector, DetectionResult
from .cavity import VAR_FLOOR, discretized_gaussian_pmf, hard_decision
from .ep import spd_inverse
from .gnn import (
    GnnParams,
    exclusion_mask,
    init_features,
    init_messages_t,
    pair_features,
    readout_t,
    run_rounds_t,
)
from .validation import check_batch, check_positive_int, check_unit_interval


@dataclass
class GepnetConfig:
    iterations: int = 10
    damping: float = 0.7
    rounds: int = 2
    params: Optional[GnnParams] = None


@dataclass
class GpicnetConfig:
    iterations: int = 15  # test-time default; training uses 10
    rounds: int = 2
    params: Optional[GnnParams] = None


@dataclass
class NeuralForward:
    """Forward-pass outputs; tensors stay alive for backward when recorded."""

    x_hat: ad.Tensor
    q_final: ad.Tensor
    param_tensors: dict
    traces: dict = field(default_factory=dict)


def _stack_attrs(mean_t, var_t, b, k):
    return ad.concat(
        [ad.reshape(mean_t, (b, k, 1)), ad.reshape(var_t, (b, k, 1))], axis=-1
    )


def _tape_moments(q_used, points):
    x_hat = ad.dot_last(q_used, points)
    b, k = x_hat.value.shape
    deviation = ad.sub(points, ad.reshape(x_hat, (b, k, 1)))
    v_raw = ad.sumprod_last(q_used, ad.square(deviation))
    return x_hat, ad.clamp_min(v_raw, VAR_FLOOR)


def gepnet_forward(
    batch,
    params,
    iterations=10,
    damping=0.7,
    rounds=2,
    cavity_source="gnn",
    record=False,
    collect_trace=False,
):
    """GEPNet loop: EP observe -> GNN -> moment-matched estimation update.

    cavity_source="gaussian" swaps the readout for the discretized Gaussian
    cavity, which must reproduce plain EP (wiring check).
    """
    h, y = batch.h, batch.y
    noise_var = np.asarray(batch.noise_var, dtype=float)
    points = batch.constellation.real_points
    es = batch.constellation.es_real
    b, _, k = h.shape

    gram = np.einsum("bnk,bnj->bkj", h, h)
    hty = np.einsum("bnk,bn->bk", h, y)
    gram_diag = np.diagonal(gram, axis1=-2, axis2=-1)
    a0 = gram / noise_var[:, None, None]
    b0 = hty / noise_var[:, None]
    pair_f = pair_features(gram, noise_var)
    mask = exclusion_mask(k)
    feats = init_features(hty, gram_diag, noise_var)

    pt = params.as_tensors(requires_grad=record)
    lam = ad.Tensor(np.full((b, k), 1.0 / es))
    gam = ad.Tensor(np.zeros((b, k)))
    g = ad.Tensor(np.zeros((b, k, params.dims.n_h1)))
    u = None
    traces = {key: [] for key in ("x_hat", "x_obs", "v_obs", "mu", "sigma", "q")}
    x_hat = q_used = None

    for t in range(1, iterations + 1):
        sigma_full = ad.spd_inverse_of(lam, a0, spd_inverse)
        sigma_diag = ad.diagonal(sigma_full)
        mu = ad.matvec(sigma_full, ad.add(b0, gam))
        denom = ad.clamp_min(ad.sub(1.0, ad.mul(sigma_diag, lam)), VAR_FLOOR)
        v_obs = ad.clamp_min(ad.div(sigma_diag, denom), VAR_FLOOR)
        x_obs = ad.mul(v_obs, ad.sub(ad.div(mu, sigma_diag), gam))

        if u is None:
            u = init_messages_t(feats, pt)
        attrs = _stack_attrs(x_obs, v_obs, b, k)
        u, g = run_rounds_t(u, g, attrs, pair_f, mask, pt, rounds)
        _, q = readout_t(u, pt)
        if cavity_source == "gaussian":
            q_used = ad.Tensor(discretized_gaussian_pmf(x_obs.value, v_obs.value, points))
        else:
            q_used = q

        x_hat, v_hat = _tape_moments(q_used, points)
        lam_new = ad.sub(ad.div(1.0, v_hat), ad.div(1.0, v_obs))
        gam_new = ad.sub(ad.div(x_hat, v_hat), ad.div(x_obs, v_obs))
        revert = lam_new.value <= 0.0
        lam_kept = ad.where(revert, lam, lam_new)
        gam_kept = ad.where(revert, gam, gam_new)
        lam = ad.add(ad.mul(1.0 - damping, lam_kept), ad.mul(damping, lam))
        gam = ad.add(ad.mul(1.0 - damping, gam_kept), ad.mul(damping, gam))

        if collect_trace:
            traces["x_hat"].append(x_hat.value)
            traces["x_obs"].append(x_obs.value)
            traces["v_obs"].append(v_obs.value)
            traces["mu"].append(mu.value)
            traces["sigma"].append(sigma_diag.value)
            traces["q"].append(q_used.value)

    return NeuralForward(x_hat=x_hat, q_final=q_used, param_tensors=pt, traces=traces)


def gpicnet_forward(
    batch,
    params,
    iterations=15,
    rounds=2,
    cavity_source="gnn",
    record=False,
    collect_trace=False,
):
    """GPICNet loop: PIC observe -> GNN -> estimation -> DSC (t >= 2)."""
    h, y = batch.h, batch.y
    noise_var = np.asarray(batch.noise_var, dtype=float)
    points = batch.constellation.real_points
    b, _, k = h.shape

    gram = np.einsum("bnk,bnj->bkj", h, h)
    hty = np.einsum("bnk,bn->bk", h, y)
    gkk = np.diagonal(gram, axis1=-2, axis2=-1)
    gram_sq = gram**2
    gkk_sq = gkk**2
    noise_term = gkk * noise_var[:, None]
    pair_f = pair_features(gram, noise_var)
    mask = exclusion_mask(k)
    feats = init_features(hty, gkk, noise_var)

    pt = params.as_tensors(requires_grad=record)
    g = ad.Tensor(np.zeros((b, k, params.dims.n_h1)))
    u = None
    x_hat = ad.Tensor(np.zeros((b, k)))
    v_hat = ad.Tensor(np.zeros((b, k)))
    e_prev = None
    traces = {key: [] for key in ("x_hat", "mu", "sigma", "q")}
    q_used = None

    for t in range(1, iterations + 1):
        interference = ad.sub(ad.matvec(gram, x_hat), ad.mul(gkk, x_hat))
        mu = ad.div(ad.sub(hty, interference), gkk)
        var_sum = ad.sub(ad.matvec(gram_sq, v_hat), ad.mul(gkk_sq, v_hat))
        sigma = ad.clamp_min(ad.div(ad.add(var_sum, noise_term), gkk_sq), VAR_FLOOR)

        if u is None:
            u = init_messages_t(feats, pt)
        attrs = _stack_attrs(mu, sigma, b, k)
        u, g = run_rounds_t(u, g, attrs, pair_f, mask, pt, rounds)
        _, q = readout_t(u, pt)
        if cavity_source == "gaussian":
            q_used = ad.Tensor(discretized_gaussian_pmf(mu.value, sigma.value, points))
        else:
            q_used = q

        x_est, v_est = _tape_moments(q_used, points)
        e_cur = ad.square(ad.div(ad.sub(hty, ad.matvec(gram, x_est)), gkk))
        if t == 1:
            x_hat, v_hat = x_est, v_est
        else:
            total = ad.add(e_cur, e_prev)
            zero = total.value <= 0.0
            safe_total = ad.where(zero, np.ones_like(total.value), total)
            rho = ad.where(zero, np.full_like(total.value, 0.5), ad.div(e_prev, safe_total))
            x_hat = ad.add(ad.mul(ad.sub(1.0, rho), x_hat), ad.mul(rho, x_est))
            v_hat = ad.add(ad.mul(ad.sub(1.0, rho), v_hat), ad.mul(rho, v_est))
        e_prev = e_cur

        if collect_trace:
            traces["x_hat"].append(x_hat.value)
            traces["mu"].append(mu.value)
            traces["sigma"].append(sigma.value)
            traces["q"].append(q_used.value)

    return NeuralForward(x_hat=x_hat, q_final=q_used, param_tensors=pt, traces=traces)


class _NeuralDetector(Detector):
    forward_kind = "gepnet"

    def _forward(self, batch, record=False, collect_trace=False):
        raise NotImplementedError

    def _check(self, batch):
        check_batch(batch)
        if self.params is None:
            raise ValueError(f"{type(self).__name__} needs trained GnnParams")
        self.params.check_compatible(batch.constellation.real_points.size)

    def detect_batch(self, batch, trace=False):
        self._check(batch)
        with ad.no_grad():
            fwd = self._forward(batch, collect_trace=trace)
        points = batch.constellation.real_points
        result = DetectionResult(
            x_hard=hard_decision(fwd.x_hat.value, points), iterations_run=self.iterations
        )
        if trace:
            tr = fwd.traces
            result.x_soft_trace = np.stack(tr["x_hat"])
            if self.forward_kind == "gepnet":
                result.cavity_trace = (np.stack(tr["x_obs"]), np.stack(tr["v_obs"]))
                result.posterior_trace = (np.stack(tr["mu"]), np.stack(tr["sigma"]))
            else:
                result.cavity_trace = (np.stack(tr["mu"]), np.stack(tr["sigma"]))
                result.posterior_trace = result.cavity_trace
            result.q_trace = np.stack(tr["q"])
        return result


class GepnetDetector(_NeuralDetector):
    """GNN-refined EP detector."""

    name = "gepnet"
    forward_kind = "gepnet"

    def __init__(self, params, iterations=10, damping=0.7, rounds=2, cavity_source="gnn"):
        self.params = params
        self.iterations = check_positive_int(iterations, "iterations")
        self.damping = check_unit_interval(damping, "damping")
        self.rounds = int(rounds)
        self.cavity_source = cavity_source

    @classmethod
    def from_config(cls, config):
        return cls(
            config.params,
            iterations=config.iterations,
            damping=config.damping,
            rounds=config.rounds,
        )

    def _forward(self, batch, record=False, collect_trace=False):
        return gepnet_forward(
            batch,
            self.params,
            iterations=self.iterations,
            damping=self.damping,
            rounds=self.rounds,
            cavity_source=self.cavity_source,
            record=record,
            collect_trace=collect_trace,
        )


class GpicnetDetector(_NeuralDetector):
    """GNN-refined BPIC detector."""

    name = "gpicnet"
    forward_kind = "gpicnet"

    def __init__(self, params, iterations=15, rounds=2, cavity_source="gnn"):
        self.params = params
        self.iterations = check_positive_int(iterations, "iterations")
        self.rounds = int(rounds)
        self.cavity_source = cavity_source

    @classmethod
    def from_config(cls, config):
        return cls(config.params, iterations=config.iterations, rounds=config.rounds)

    def _forward(self, batch, record=False, collect_trace=False):
        return gpicnet_forward(
            batch,
            self.params,
            iterations=self.iterations,
            rounds=self.rounds,
            cavity_source=self.cavity_source,
            record=record,
            collect_trace=collect_trace,
        )


def forward_for_training(kind, batch, params, iterations, rounds, damping=0.7):
    """Recorded forward pass of either detector for the trainer."""
    if kind == "gepnet":
        return gepnet_forward(
            batch, params, iterations=iterations, damping=damping, rounds=rounds, record=True
        )
    if kind == "gpicnet":
        return gpicnet_forward(batch, params, iterations=iterations, rounds=rounds, record=True)
    raise ValueError(f"unknown detector kind {kind!r}")
