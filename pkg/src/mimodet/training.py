"""Training loop: batched sample generation with mixed user counts and uniform
SNR, cross-entropy on the final readout, Adam, plateau LR schedule."""

import csv
from dataclasses import dataclass, field, asdict
from typing import Optional

import numpy as np

from . import autodiff as ad
from .checkpoint import save_params, save_sidecar
from .constellation import make_constellation
from .gnn import GnnDims, GnnParams
from .neural import forward_for_training
from .system import RngStream, sample_batch


@dataclass
class TrainConfig:
    detector_kind: str
    n_rx: int
    qam_order: int
    k_train_set: tuple
    snr_min_db: float
    snr_max_db: float
    epochs: int = 600
    batches_per_epoch: int = 1563
    batch_size: int = 64
    lr: float = 1e-4
    plateau_factor: float = 0.91
    patience: int = 10
    min_rel_improvement: float = 1e-4
    val_samples: int = 5000
    seed: int = 0
    iterations: int = 10
    rounds: int = 2
    damping: float = 0.7
    use_float32: bool = False
    checkpoint_path: Optional[str] = None
    log_path: Optional[str] = None

    def __post_init__(self):
        if self.detector_kind not in ("gepnet", "gpicnet"):
            raise ValueError(f"unknown detector kind {self.detector_kind!r}")
        if self.snr_min_db > self.snr_max_db:
            raise ValueError("snr_min_db must not exceed snr_max_db")
        self.k_train_set = tuple(int(k) for k in self.k_train_set)
        if not self.k_train_set:
            raise ValueError("k_train_set must be nonempty")
        for k in self.k_train_set:
            if k % 2 or not (2 <= k <= 2 * self.n_rx):
                raise ValueError(
                    f"k_train entries must be even user-dimension counts <= 2*n_rx, got {k}"
                )

    @classmethod
    def paper_scale(cls, detector_kind, n_rx, qam_order, k_train_set, snr_min_db, snr_max_db, **kw):
        """The published recipe: 600 epochs of 1563 x 64 samples, lr 1e-4."""
        return cls(
            detector_kind=detector_kind,
            n_rx=n_rx,
            qam_order=qam_order,
            k_train_set=k_train_set,
            snr_min_db=snr_min_db,
            snr_max_db=snr_max_db,
            **kw,
        )

    @classmethod
    def desk_scale(cls, detector_kind, n_rx, qam_order, k_train_set, snr_min_db, snr_max_db, **kw):
        """Reduced preset that trains in minutes-to-hours on a desktop."""
        defaults = dict(
            epochs=40, batches_per_epoch=200, batch_size=64, lr=1e-3, val_samples=2000, patience=5
        )
        defaults.update(kw)
        return cls(
            detector_kind=detector_kind,
            n_rx=n_rx,
            qam_order=qam_order,
            k_train_set=k_train_set,
            snr_min_db=snr_min_db,
            snr_max_db=snr_max_db,
            **defaults,
        )


@dataclass
class OptimizerState:
    """Adam accumulators mirroring the parameter tensors."""

    lr: float
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    step_count: int = 0
    m: dict = field(default_factory=dict)
    v: dict = field(default_factory=dict)


def adam_step(params, grads, state):
    """One Adam update, in place on params.tensors."""
    state.step_count += 1
    t = state.step_count
    bias1 = 1.0 - state.beta1**t
    bias2 = 1.0 - state.beta2**t
    for name, g in grads.items():
        if name not in state.m:
            state.m[name] = np.zeros_like(params.tensors[name])
            state.v[name] = np.zeros_like(params.tensors[name])
        m = state.m[name]
        v = state.v[name]
        m += (1.0 - state.beta1) * (g - m)
        v += (1.0 - state.beta2) * (g * g - v)
        params.tensors[name] -= state.lr * (m / bias1) / (np.sqrt(v / bias2) + state.eps)


def labels_from_symbols(x_true, constellation):
    """Alphabet indices of transmitted real symbols; rejects foreign values."""
    idx = constellation.index_of_real(x_true)
    if not np.allclose(constellation.real_points[idx], x_true, rtol=0, atol=1e-9):
        raise ValueError("transmitted symbols contain values outside the constellation")
    return idx


def cross_entropy_loss(q, x_true, constellation):
    """Batch-mean total cross-entropy of the readout against the sent symbols.

    q is (W, K, M) (or (K, M) for one sample); the log is floored at 1e-30.
    """
    q = np.asarray(q)
    single = q.ndim == 2
    if single:
        q = q[None]
        x_true = np.asarray(x_true)[None]
    labels = labels_from_symbols(x_true, constellation)
    w, k, m = q.shape
    picked = np.take_along_axis(q, labels[..., None], axis=-1)[..., 0]
    return float(-np.log(np.maximum(picked, 1e-30)).sum() / w)


def _loss_tensor(q_final, x_true, constellation):
    labels = labels_from_symbols(x_true, constellation)
    onehot = np.eye(constellation.real_points.size)[labels]
    w = q_final.value.shape[0]
    logq = ad.log(ad.clamp_min(q_final, 1e-30))
    return ad.mul(ad.tsum(ad.mul(logq, onehot)), -1.0 / w)


@dataclass
class TrainLogRow:
    epoch: int
    train_loss: float
    val_loss: float
    lr: float


@dataclass
class TrainResult:
    params: GnnParams
    log: list
    best_val_loss: float
    diverged: bool = False

    def write_log(self, path):
        with open(path, "w", newline="", encoding="utf-8") as fh:
            writer = csv.writer(fh)
            writer.writerow(["epoch", "train_loss", "val_loss", "lr"])
            for row in self.log:
                writer.writerow(
                    [row.epoch, f"{row.train_loss:.10g}", f"{row.val_loss:.10g}", f"{row.lr:.10g}"]
                )


def _sample_train_batch(config, constellation, stream, size=None):
    gen = stream.generator()
    k = int(gen.choice(np.asarray(config.k_train_set)))
    size = size or config.batch_size
    snrs = gen.uniform(config.snr_min_db, config.snr_max_db, size=size)
    return sample_batch(k // 2, config.n_rx, constellation, snrs, size, gen)


def _forward_loss(config, batch, params, record):
    def run():
        return forward_for_training(
            config.detector_kind,
            batch,
            params,
            iterations=config.iterations,
            rounds=config.rounds,
            damping=config.damping,
        )

    if record:
        fwd = run()
    else:
        with ad.no_grad():
            fwd = run()
    loss = _loss_tensor(fwd.q_final, batch.x_true, batch.constellation)
    return loss, fwd


def validation_loss(config, params, constellation, epoch):
    total = 0.0
    count = 0
    n_batches = max(1, config.val_samples // config.batch_size)
    for i in range(n_batches):
        stream = RngStream(config.seed, 2_000_000_000 + epoch * 100_000 + i)
        batch = _sample_train_batch(config, constellation, stream)
        loss, _ = _forward_loss(config, batch, params, record=False)
        total += loss.value * len(batch)
        count += len(batch)
    return total / count


def train(config, initial_params=None, progress=None):
    """Run the training recipe; returns the best-validation parameters.

    Divergence (non-finite loss) aborts and returns the last good checkpoint
    with diverged=True.
    """
    constellation = make_constellation(config.qam_order)
    dims = GnnDims(m=constellation.real_points.size, rounds=config.rounds)
    params = (
        initial_params.copy()
        if initial_params is not None
        else GnnParams.initialize(dims, RngStream(config.seed, 1))
    )
    if config.use_float32:
        params.tensors = {k: v.astype(np.float32) for k, v in params.tensors.items()}
    opt = OptimizerState(lr=config.lr)
    best_val = np.inf
    best_params = params.copy()
    bad_epochs = 0
    log = []
    diverged = False

    for epoch in range(config.epochs):
        epoch_losses = []
        for b in range(config.batches_per_epoch):
            stream = RngStream(config.seed, 1_000_000 + epoch * config.batches_per_epoch + b)
            batch = _sample_train_batch(config, constellation, stream)
            if config.use_float32:
                batch.h = batch.h.astype(np.float32)
                batch.y = batch.y.astype(np.float32)
                batch.noise_var = batch.noise_var.astype(np.float32)
            loss, fwd = _forward_loss(config, batch, params, record=True)
            if not np.isfinite(loss.value):
                diverged = True
                break
            ad.backward(loss)
            grads = {
                name: (t.grad if t.grad is not None else np.zeros_like(t.value))
                for name, t in fwd.param_tensors.items()
            }
            adam_step(params, grads, opt)
            epoch_losses.append(float(loss.value))
        if diverged:
            break

        val = validation_loss(config, params, constellation, epoch)
        if not np.isfinite(val):
            diverged = True
            break
        if val < best_val * (1.0 - config.min_rel_improvement):
            best_val = val
            best_params = params.copy()
            bad_epochs = 0
        else:
            bad_epochs += 1
            if bad_epochs >= config.patience:
                opt.lr *= config.plateau_factor
                bad_epochs = 0
        log.append(TrainLogRow(epoch, float(np.mean(epoch_losses)), float(val), opt.lr))
        if progress is not None:
            progress(log[-1])

    if config.use_float32:
        best_params.tensors = {k: v.astype(np.float64) for k, v in best_params.tensors.items()}
    if not np.isfinite(best_val):
        best_params = params.copy()
    result = TrainResult(
        params=best_params, log=log, best_val_loss=float(best_val), diverged=diverged
    )
    if config.checkpoint_path:
        echo = {
            k: v
            for k, v in asdict(config).items()
            if v is not None and k not in ("checkpoint_path", "log_path")
        }
        provenance = {
            "config": echo,
            "epochs_completed": len(log),
            "best_val_loss": result.best_val_loss,
            "diverged": diverged,
        }
        save_params(best_params, config.checkpoint_path, metadata=provenance)
        save_sidecar(config.checkpoint_path, provenance)
    if config.log_path:
        result.write_log(config.log_path)
    return result


def evaluate_ser(params, detector_kind, scenario):
    """Monte-Carlo SER table for a trained parameter set over a scenario."""
    from .bench import run_sweep

    scenario = scenario.with_detectors([detector_kind])
    return run_sweep(scenario, params_override={detector_kind: params})
