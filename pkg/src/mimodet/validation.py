"""Input validation helpers for detector-facing entry points."""

import numpy as np

from .system import InstanceBatch, SystemInstance, batch_from_instance


def check_positive_int(value, name):
    if not isinstance(value, (int, np.integer)) or value < 1:
        raise ValueError(f"{name} must be a positive integer, got {value!r}")
    return int(value)


def check_unit_interval(value, name):
    value = float(value)
    if not 0.0 <= value <= 1.0:
        raise ValueError(f"{name} must lie in [0, 1], got {value}")
    return value


def as_batch(instance_or_batch):
    """Accept a SystemInstance or an InstanceBatch; return an InstanceBatch."""
    if isinstance(instance_or_batch, InstanceBatch):
        return instance_or_batch
    if isinstance(instance_or_batch, SystemInstance):
        return batch_from_instance(instance_or_batch)
    raise TypeError(
        f"expected SystemInstance or InstanceBatch, got {type(instance_or_batch).__name__}"
    )


def check_batch(batch):
    """Shape/finiteness checks shared by every detector."""
    b, n, k = batch.h.shape
    if batch.y.shape != (b, n):
        raise ValueError(f"y shape {batch.y.shape} does not match h shape {batch.h.shape}")
    if n < k:
        raise ValueError(f"require N >= K, got N={n}, K={k}")
    if k != 2 * batch.n_tx or n != 2 * batch.n_rx:
        raise ValueError("real-lifted sizes must satisfy K = 2*n_tx, N = 2*n_rx")
    if np.any(np.asarray(batch.noise_var) <= 0):
        raise ValueError("noise_var must be strictly positive")
    if not (np.all(np.isfinite(batch.h)) and np.all(np.isfinite(batch.y))):
        raise ValueError("h and y must be finite")
    return batch
