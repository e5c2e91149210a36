"""Detector interface: result containers and the estimator-style base class."""

import inspect
from dataclasses import dataclass, field
from typing import Optional

import numpy as np


@dataclass
class EpState:
    """Per-iteration EP internals (arrays may carry a leading batch axis)."""

    gamma: np.ndarray
    lam: np.ndarray
    sigma_post: np.ndarray
    mu_post: np.ndarray
    x_obs: np.ndarray
    v_obs: np.ndarray
    x_hat: np.ndarray
    v_hat: np.ndarray
    iteration: int


@dataclass
class BpicState:
    """Per-iteration BPIC internals."""

    x_hat: np.ndarray
    v_hat: np.ndarray
    mu: np.ndarray
    sigma: np.ndarray
    dsc_error_prev: Optional[np.ndarray]
    dsc_error_cur: Optional[np.ndarray]
    rho: Optional[np.ndarray]
    iteration: int


@dataclass
class DetectionResult:
    """Hard decisions plus optional per-iteration introspection traces.

    Trace arrays are stacked over iterations on the first axis; batch
    detection adds a batch axis after it. cavity_trace holds the
    per-iteration (mean, variance) pair fed to the symbol estimator
    ((x_obs, v_obs) for EP-family, (mu, Sigma) for BPIC-family);
    posterior_trace holds the observation-module posterior moments.
    """

    x_hard: np.ndarray
    iterations_run: int
    x_soft_trace: Optional[np.ndarray] = None
    cavity_trace: Optional[tuple] = None
    posterior_trace: Optional[tuple] = None
    q_trace: Optional[np.ndarray] = None
    states: Optional[list] = field(default=None, repr=False)


class Detector:
    """Estimator-style base: keyword params, get/set_params, detect/detect_batch.

    Subclasses implement detect_batch(batch, trace=...); detect() wraps a
    single SystemInstance and squeezes the batch axis.
    """

    name = "detector"

    @classmethod
    def _param_names(cls):
        sig = inspect.signature(cls.__init__)
        return [p for p in sig.parameters if p != "self"]

    def get_params(self):
        return {name: getattr(self, name) for name in self._param_names()}

    def set_params(self, **params):
        valid = self._param_names()
        for key, value in params.items():
            if key not in valid:
                raise ValueError(f"unknown parameter {key!r} for {type(self).__name__}")
            setattr(self, key, value)
        return self

    def detect_batch(self, batch, trace=False):
        raise NotImplementedError

    def detect(self, instance, trace=False):
        from .validation import as_batch

        result = self.detect_batch(as_batch(instance), trace=trace)
        return _squeeze_result(result)


def _squeeze_batch_axis(arr, axis):
    return None if arr is None else np.squeeze(arr, axis=axis)


def _squeeze_result(result):
    cavity = result.cavity_trace
    posterior = result.posterior_trace
    return DetectionResult(
        x_hard=result.x_hard[0],
        iterations_run=result.iterations_run,
        x_soft_trace=_squeeze_batch_axis(result.x_soft_trace, 1),
        cavity_trace=None if cavity is None else tuple(np.squeeze(a, 1) for a in cavity),
        posterior_trace=None
        if posterior is None
        else tuple(np.squeeze(a, 1) for a in posterior),
        q_trace=_squeeze_batch_axis(result.q_trace, 1),
        states=result.states,
    )
