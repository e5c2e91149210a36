"""Square QAM constellations normalized to unit average complex energy."""

from dataclasses import dataclass, field

import numpy as np

SUPPORTED_QAM_ORDERS = (4, 16, 64)


def _gray_sequence(n_bits):
    """Binary-reflected Gray sequence of length 2**n_bits."""
    seq = [0]
    for _ in range(n_bits):
        seq = seq + [s | (1 << (len(seq).bit_length() - 1)) for s in reversed(seq)]
    return seq


@dataclass(frozen=True)
class Constellation:
    """One square QAM alphabet in both complex and real-lifted form.

    complex_points are ordered by the Gray-labeled bit index (I bits first,
    Q bits second); real_points are the distinct per-axis levels sorted
    ascending. es_real is the average energy per real dimension (0.5 for a
    unit-energy complex alphabet).
    """

    qam_order: int
    complex_points: np.ndarray
    real_points: np.ndarray
    es_real: float = field(default=0.5)

    @property
    def m_real(self):
        """Number of per-axis amplitude levels (sqrt of the QAM order)."""
        return self.real_points.size

    def index_of_real(self, values):
        """Index of each entry of `values` in real_points (nearest match)."""
        idx = np.searchsorted(self.real_points, values)
        idx = np.clip(idx, 1, self.m_real - 1)
        lower = self.real_points[idx - 1]
        upper = self.real_points[idx]
        idx -= np.abs(values - lower) <= np.abs(values - upper)
        return idx


def make_constellation(qam_order):
    """Build a Gray-labeled square QAM constellation with unit average energy.

    Raises ValueError for orders other than 4, 16, 64.
    """
    if qam_order not in SUPPORTED_QAM_ORDERS:
        raise ValueError(
            f"unsupported QAM order {qam_order!r}: expected one of {SUPPORTED_QAM_ORDERS}"
        )
    m = int(round(np.sqrt(qam_order)))
    bits_per_axis = m.bit_length() - 1
    levels = np.arange(-(m - 1), m, 2, dtype=np.float64)
    # Unit average complex energy: E|s|^2 = 2 * mean(levels^2).
    scale = np.sqrt(2.0 * np.mean(levels**2))
    levels = levels / scale
    gray = _gray_sequence(bits_per_axis)
    axis_by_bits = np.empty(m, dtype=np.float64)
    for position, code in enumerate(gray):
        axis_by_bits[code] = levels[position]
    i_part = np.repeat(axis_by_bits, m)
    q_part = np.tile(axis_by_bits, m)
    complex_points = i_part + 1j * q_part
    es_real = float(np.mean(np.abs(complex_points) ** 2)) / 2.0
    return Constellation(
        qam_order=qam_order,
        complex_points=complex_points,
        real_points=levels.copy(),
        es_real=es_real,
    )
