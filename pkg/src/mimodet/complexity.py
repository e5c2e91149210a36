"""Multiplication-count estimates for the detector family.

Formulas are kept for the whole comparison set, including detectors this
package does not implement; M is the real-alphabet size (sqrt of the QAM
order), and the GNN-bearing rows use S_u = 8, N_h1 = 64, N_h2 = 32, L = 2
unless overridden.
"""

from dataclasses import dataclass


@dataclass(frozen=True)
class GnnCostDims:
    s_u: int = 8
    n_h1: int = 64
    n_h2: int = 32
    rounds: int = 2


def _gnn_per_node_round(d):
    return d.n_h1 * (4 * d.s_u + 5 + 3 * d.n_h1) + d.n_h2 * (d.n_h1 + d.s_u + 2)


def _gnn_setup(d, m):
    return d.s_u * (d.n_h1 + d.n_h2 + 3) + d.n_h1 * d.n_h2 + m


def amp(n, k, m, t, d):
    return (4 * n * k + 8 * n + 6 * k + 4 * m * k) * t


def gnn(n, k, m, t, d):
    first = (1.5 * n + 0.5 * n * k + k + _gnn_setup(d, m)) * k
    return first + _gnn_per_node_round(d) * k * t


def mmse(n, k, m, t, d):
    return k**3 + k**2 * (n + 1) + n * k


def re_mimo(n, k, m, t, d):
    d_s = 512
    blocks = 8
    d_psi = d_s + m + n
    d_phi = d_psi + 1
    d_v = d_k = d_phi / blocks
    first = 2 * (n + 1) + (5 * d_s * (2 * n + 1) + 4 * d_s**2 + 2) * k
    per_iter = (
        0.5 * n * (k + 1)
        + m
        + 2 * d_phi * d_k
        + d_phi * d_v
        + d_phi * d_s
        + d_phi * d_s
        + (5.0 / 8.0) * d_psi**2
        + 1
    )
    return first + per_iter * k * t


def oampnet(n, k, m, t, d):
    return n * k * (k - 1) + (
        k**3 + n**2 * k + n * k**2 + 2 * n * k + 12 * k + 4 * m * k + 2 * k + 8
    ) * t


def ep(n, k, m, t, d):
    return n * k**2 + n * k + (k**3 + k**2 + 13 * k + 2 * m * k) * t


def bpic(n, k, m, t, d):
    return n * k**2 - 6 * k + (17 + 2 * m + n) * k * t


def gpicnet(n, k, m, t, d):
    first = (1.5 * n + 1.5 * n * k - 5 + _gnn_setup(d, m)) * k
    per_iter = 3 * n * k + 2 * m + 10 + _gnn_per_node_round(d) * d.rounds
    return first + per_iter * k * t


def gepnet(n, k, m, t, d):
    first = (2.5 * n + 1.5 * n * k + k + _gnn_setup(d, m)) * k
    per_iter = (
        k**3 + k**2 + 13 * k + 2 * k * m + _gnn_per_node_round(d) * k * d.rounds
    )
    return first + per_iter * t


FORMULAS = {
    "amp": amp,
    "gnn": gnn,
    "mmse": mmse,
    "re-mimo": re_mimo,
    "oampnet": oampnet,
    "ep": ep,
    "bpic": bpic,
    "gpicnet": gpicnet,
    "gepnet": gepnet,
}


def complexity_estimate(detector_name, n, k, m, t=10, dims=None):
    """Multiplication count for one detector at the given real-valued sizes."""
    key = detector_name.lower()
    if key not in FORMULAS:
        raise ValueError(
            f"unknown detector {detector_name!r}; known: {sorted(FORMULAS)}"
        )
    return float(FORMULAS[key](n, k, m, t, dims or GnnCostDims()))
