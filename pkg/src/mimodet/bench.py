"""Monte-Carlo SER benchmark harness: scenarios, detector registry, sweeps,
robustness matrices, and CSV/JSON result files."""

import json
import time
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field, replace

import numpy as np

from .baselines import MlOracle, MmseDetector
from .bpic import BpicDetector
from .cavity import complex_symbol_errors
from .checkpoint import load_params
from .constellation import make_constellation
from .ep import EpDetector
from .neural import GepnetDetector, GpicnetDetector
from .system import RngStream, sample_batch

SWEEP_COLUMNS = [
    "detector",
    "n_tx",
    "n_rx",
    "qam_order",
    "snr_db",
    "ser",
    "ci95",
    "errors",
    "samples",
    "wall_time",
    "status",
    "error",
]
ROBUSTNESS_COLUMNS = ["k_train_spec", "k_test"] + SWEEP_COLUMNS


@dataclass
class Scenario:
    """One benchmark definition; instances regenerate from (seed, stream)."""

    detectors: tuple
    n_tx: int
    n_rx: int
    qam_order: int = 4
    snr_min_db: float = 0.0
    snr_max_db: float = 20.0
    snr_step_db: float = 2.0
    samples_per_point: int = 10000
    seed: int = 0
    model_paths: dict = field(default_factory=dict)
    overrides: dict = field(default_factory=dict)
    chunk_size: int = 2048
    analysis: bool = False

    def __post_init__(self):
        self.detectors = tuple(self.detectors)
        if self.samples_per_point < 1:
            raise ValueError("samples_per_point must be at least 1")
        if self.snr_step_db <= 0:
            raise ValueError("snr_step_db must be positive")
        if self.snr_max_db < self.snr_min_db:
            raise ValueError("snr grid is empty")

    @property
    def snr_grid(self):
        count = int(np.floor((self.snr_max_db - self.snr_min_db) / self.snr_step_db + 1e-9)) + 1
        return [self.snr_min_db + i * self.snr_step_db for i in range(count)]

    def with_detectors(self, names):
        return replace(self, detectors=tuple(names))

    @classmethod
    def from_json(cls, source):
        if isinstance(source, (str, bytes)):
            with open(source, "r", encoding="utf-8") as fh:
                source = json.load(fh)
        return cls(**source)


@dataclass
class ResultRow:
    detector: str
    n_tx: int
    n_rx: int
    qam_order: int
    snr_db: float
    ser: float
    ci95: float
    errors: int
    samples: int
    wall_time: float
    status: str = "ok"
    error: str = ""
    k_train_spec: str = ""
    k_test: int = 0


def ser_confidence(errors, samples):
    """Normal-approximation 95% interval half-width for a symbol error rate."""
    p = errors / samples
    return p, 1.96 * np.sqrt(p * (1.0 - p) / samples)


def build_detector(name, scenario, params_override=None):
    """Instantiate a detector by registry name, honoring scenario overrides."""
    over = scenario.overrides.get(name, {})
    iterations = over.get("iterations")
    if name == "ep":
        return EpDetector(
            iterations=iterations or 10, damping=over.get("damping", 0.9)
        )
    if name == "bpic":
        return BpicDetector(iterations=iterations or 10)
    if name == "mmse":
        return MmseDetector()
    if name == "ml":
        return MlOracle(budget=over.get("budget", 2**24))
    if name in ("gepnet", "gpicnet"):
        params = (params_override or {}).get(name)
        if params is None:
            path = scenario.model_paths.get(name)
            if path is None:
                raise ValueError(f"detector {name!r} needs a model path or parameter set")
            constellation = make_constellation(scenario.qam_order)
            params, _ = load_params(path)
            params.check_compatible(constellation.real_points.size)
        if name == "gepnet":
            return GepnetDetector(
                params,
                iterations=iterations or 10,
                damping=over.get("damping", 0.7),
                rounds=over.get("rounds", params.dims.rounds),
            )
        return GpicnetDetector(
            params,
            iterations=iterations or 15,
            rounds=over.get("rounds", params.dims.rounds),
        )
    raise ValueError(f"unknown detector {name!r}")


def _chunk_plan(total, chunk_size):
    sizes = []
    done = 0
    while done < total:
        size = min(chunk_size, total - done)
        sizes.append((len(sizes), size))
        done += size
    return sizes


def _run_chunk(args):
    scenario, name, params, snr_index, snr_db, chunk_id, size = args
    constellation = make_constellation(scenario.qam_order)
    stream = RngStream(scenario.seed, snr_index * 1_000_000 + chunk_id)
    batch = sample_batch(scenario.n_tx, scenario.n_rx, constellation, snr_db, size, stream)
    detector = build_detector(name, scenario, params_override=params)
    start = time.perf_counter()
    result = detector.detect_batch(batch)
    elapsed = time.perf_counter() - start
    errors, symbols = complex_symbol_errors(result.x_hard, batch.x_true)
    return errors, symbols, elapsed


def run_sweep(scenario, workers=1, deterministic=True, params_override=None):
    """SER per (detector, SNR) with 95% CIs; failures become error rows.

    Instances are identical across detectors at the same SNR point (paired
    streams), and results are independent of worker count.
    """
    rows = []
    for name in scenario.detectors:
        try:
            build_detector(name, scenario, params_override)
        except Exception as exc:
            for snr in scenario.snr_grid:
                rows.append(
                    ResultRow(
                        detector=name,
                        n_tx=scenario.n_tx,
                        n_rx=scenario.n_rx,
                        qam_order=scenario.qam_order,
                        snr_db=snr,
                        ser=float("nan"),
                        ci95=float("nan"),
                        errors=0,
                        samples=0,
                        wall_time=0.0,
                        status="error",
                        error=f"{type(exc).__name__}: {exc}",
                    )
                )
            continue
        tasks = []
        for snr_index, snr in enumerate(scenario.snr_grid):
            for chunk_id, size in _chunk_plan(scenario.samples_per_point, scenario.chunk_size):
                tasks.append(
                    (scenario, name, params_override, snr_index, snr, chunk_id, size)
                )
        if workers > 1:
            with ProcessPoolExecutor(max_workers=workers) as pool:
                outcomes = list(pool.map(_run_chunk, tasks))
        else:
            outcomes = [_run_chunk(t) for t in tasks]
        per_snr = {}
        for task, (errors, symbols, elapsed) in zip(tasks, outcomes):
            snr = task[4]
            agg = per_snr.setdefault(snr, [0, 0, 0.0])
            agg[0] += errors
            agg[1] += symbols
            agg[2] += elapsed
        for snr in scenario.snr_grid:
            errors, symbols, elapsed = per_snr[snr]
            ser, ci = ser_confidence(errors, symbols)
            rows.append(
                ResultRow(
                    detector=name,
                    n_tx=scenario.n_tx,
                    n_rx=scenario.n_rx,
                    qam_order=scenario.qam_order,
                    snr_db=snr,
                    ser=ser,
                    ci95=ci,
                    errors=errors,
                    samples=symbols,
                    wall_time=0.0 if deterministic else elapsed,
                )
            )
    return rows


def run_robustness(scenario, checkpoints, k_tests, workers=1, deterministic=True):
    """Evaluate each trained checkpoint at each test K.

    checkpoints maps a K_train spec label (e.g. "4+8") to a model path; rows
    are tagged with (k_train_spec, k_test). Missing checkpoints yield error
    rows and the matrix continues.
    """
    all_rows = []
    for spec_label, path in checkpoints.items():
        for k_test in k_tests:
            if k_test % 2 or k_test > 2 * scenario.n_rx:
                raise ValueError(f"invalid test user-dimension count {k_test}")
            sub = replace(
                scenario,
                n_tx=k_test // 2,
                model_paths={**scenario.model_paths, **{d: path for d in scenario.detectors}},
            )
            rows = run_sweep(sub, workers=workers, deterministic=deterministic)
            for row in rows:
                row.k_train_spec = spec_label
                row.k_test = k_test
            all_rows.extend(rows)
    return all_rows


def _format_cell(value):
    if isinstance(value, float):
        if np.isnan(value):
            return ""
        return f"{value:.10g}"
    return str(value)


def write_csv(rows, path, columns=None):
    columns = columns or SWEEP_COLUMNS
    with open(path, "w", encoding="utf-8", newline="") as fh:
        fh.write(",".join(columns) + "\n")
        for row in rows:
            fh.write(",".join(_format_cell(getattr(row, c)) for c in columns) + "\n")


def write_json(rows, path, columns=None):
    columns = columns or SWEEP_COLUMNS
    payload = [{c: getattr(row, c) for c in columns} for row in rows]
    for entry in payload:
        for key, value in entry.items():
            if isinstance(value, float) and np.isnan(value):
                entry[key] = None
    with open(path, "w", encoding="utf-8") as fh:
        json.dump(payload, fh, indent=2, sort_keys=True)
        fh.write("\n")
