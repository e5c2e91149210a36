"""System model: RNG streams, complex-to-real lifting, SNR mapping, sampling."""

import json
from dataclasses import dataclass

import numpy as np

from .constellation import Constellation, make_constellation


@dataclass(frozen=True)
class RngStream:
    """Reproducible, splittable random stream keyed by (seed, stream_id)."""

    seed: int
    stream_id: int = 0

    def generator(self):
        return np.random.default_rng(np.random.SeedSequence((self.seed, self.stream_id)))

    def substream(self, offset):
        return RngStream(self.seed, self.stream_id + offset)


def lift_complex_to_real(h_complex):
    """Lift a complex Nr x Nt matrix to the real 2Nr x 2Nt block form.

    The block structure [[Re, -Im], [Im, Re]] commutes with the vector
    lifting [Re; Im], so complex matvecs map to real matvecs.
    """
    h_complex = np.asarray(h_complex, dtype=np.complex128)
    re, im = h_complex.real, h_complex.imag
    top = np.concatenate([re, -im], axis=-1)
    bottom = np.concatenate([im, re], axis=-1)
    return np.concatenate([top, bottom], axis=-2)


def lift_vector(x_complex):
    """Lift a complex vector (stack of vectors) to [Re; Im]."""
    x_complex = np.asarray(x_complex, dtype=np.complex128)
    return np.concatenate([x_complex.real, x_complex.imag], axis=-1)


def unlift_vector(x_real):
    """Inverse of lift_vector."""
    x_real = np.asarray(x_real)
    k = x_real.shape[-1]
    if k % 2:
        raise ValueError("real-lifted vector length must be even")
    half = k // 2
    return x_real[..., :half] + 1j * x_real[..., half:]


def snr_to_noise_var(snr_db, n_tx, n_rx):
    """Complex noise variance giving the requested SNR.

    With unit-energy symbols and channel columns of variance 1/Nr,
    E||Hx||^2 = Nt, so sigma~^2 = Nt / (Nr * 10^(SNR/10)). The per-real-
    dimension variance is half of this.
    """
    if not (n_rx >= n_tx >= 1):
        raise ValueError(f"require n_rx >= n_tx >= 1, got n_tx={n_tx}, n_rx={n_rx}")
    return n_tx / (n_rx * 10.0 ** (snr_db / 10.0))


@dataclass
class SystemInstance:
    """One real-lifted channel realization y = h @ x_true + noise."""

    h: np.ndarray
    x_true: np.ndarray
    y: np.ndarray
    noise: np.ndarray
    noise_var: float
    n_tx: int
    n_rx: int
    constellation: Constellation

    @property
    def k(self):
        return 2 * self.n_tx

    @property
    def n(self):
        return 2 * self.n_rx


@dataclass
class InstanceBatch:
    """A batch of instances sharing (n_tx, n_rx, constellation).

    Arrays carry a leading batch axis; noise_var is per-sample to allow
    mixed-SNR batches.
    """

    h: np.ndarray          # (B, N, K)
    x_true: np.ndarray     # (B, K)
    y: np.ndarray          # (B, N)
    noise: np.ndarray      # (B, N)
    noise_var: np.ndarray  # (B,)
    n_tx: int
    n_rx: int
    constellation: Constellation

    def __len__(self):
        return self.h.shape[0]

    @property
    def k(self):
        return 2 * self.n_tx

    @property
    def n(self):
        return 2 * self.n_rx

    def instance(self, i):
        return SystemInstance(
            h=self.h[i],
            x_true=self.x_true[i],
            y=self.y[i],
            noise=self.noise[i],
            noise_var=float(self.noise_var[i]),
            n_tx=self.n_tx,
            n_rx=self.n_rx,
            constellation=self.constellation,
        )


def batch_from_instance(instance):
    return InstanceBatch(
        h=instance.h[None],
        x_true=instance.x_true[None],
        y=instance.y[None],
        noise=instance.noise[None],
        noise_var=np.asarray([instance.noise_var]),
        n_tx=instance.n_tx,
        n_rx=instance.n_rx,
        constellation=instance.constellation,
    )


def sample_batch(n_tx, n_rx, constellation, snr_db, count, rng):
    """Draw `count` i.i.d. instances of the real-lifted system.

    Channel entries are circularly-symmetric complex Gaussian with variance
    1/Nr per entry; symbols are uniform over the complex alphabet; snr_db
    may be a scalar or a per-sample array.
    """
    if n_rx < n_tx:
        raise ValueError(f"require n_rx >= n_tx, got n_tx={n_tx}, n_rx={n_rx}")
    gen = rng.generator() if isinstance(rng, RngStream) else rng
    snr_db = np.broadcast_to(np.asarray(snr_db, dtype=np.float64), (count,))
    sigma2_c = n_tx / (n_rx * 10.0 ** (snr_db / 10.0))

    h_c = gen.normal(scale=np.sqrt(0.5 / n_rx), size=(count, n_rx, n_tx, 2))
    h_c = h_c[..., 0] + 1j * h_c[..., 1]
    sym_idx = gen.integers(0, constellation.qam_order, size=(count, n_tx))
    x_c = constellation.complex_points[sym_idx]
    n_c = gen.normal(size=(count, n_rx, 2)) * np.sqrt(sigma2_c / 2.0)[:, None, None]
    n_c = n_c[..., 0] + 1j * n_c[..., 1]

    h = lift_complex_to_real(h_c)
    x = lift_vector(x_c)
    noise = lift_vector(n_c)
    y = np.einsum("bnk,bk->bn", h, x) + noise
    return InstanceBatch(
        h=h,
        x_true=x,
        y=y,
        noise=noise,
        noise_var=sigma2_c / 2.0,
        n_tx=n_tx,
        n_rx=n_rx,
        constellation=constellation,
    )


def sample_instance(n_tx, n_rx, constellation, snr_db, rng):
    """Draw a single SystemInstance (see sample_batch)."""
    return sample_batch(n_tx, n_rx, constellation, snr_db, 1, rng).instance(0)


def export_dataset(path, records):
    """Write a JSON-lines dataset of regenerable instance descriptors.

    Each record is a dict with seed, stream_id, n_tx, n_rx, qam_order,
    snr_db; instances are regenerated from seeds rather than stored densely.
    """
    keys = ("seed", "stream_id", "n_tx", "n_rx", "qam_order", "snr_db")
    with open(path, "w", encoding="utf-8") as fh:
        for rec in records:
            row = {key: rec[key] for key in keys}
            fh.write(json.dumps(row, sort_keys=True) + "\n")


def load_dataset(path):
    """Regenerate instances from a JSON-lines dataset written by export_dataset."""
    instances = []
    with open(path, "r", encoding="utf-8") as fh:
        for line in fh:
            line = line.strip()
            if not line:
                continue
            rec = json.loads(line)
            constellation = make_constellation(rec["qam_order"])
            stream = RngStream(rec["seed"], rec["stream_id"])
            instances.append(
                sample_instance(rec["n_tx"], rec["n_rx"], constellation, rec["snr_db"], stream)
            )
    return instances
