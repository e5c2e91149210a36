import json

import numpy as np
import pytest
from scipy.stats import norm

from mimodet import RngStream, Scenario, complexity_estimate, make_constellation, run_sweep
from mimodet.bench import (
    ROBUSTNESS_COLUMNS,
    build_detector,
    run_robustness,
    ser_confidence,
    write_csv,
    write_json,
)
from mimodet.bpic import BpicDetector
from mimodet.cavity import complex_symbol_errors
from mimodet.system import InstanceBatch, lift_complex_to_real, lift_vector


def _scenario(**kw):
    defaults = dict(
        detectors=("ep", "mmse"),
        n_tx=2,
        n_rx=4,
        qam_order=4,
        snr_min_db=6.0,
        snr_max_db=10.0,
        snr_step_db=2.0,
        samples_per_point=600,
        seed=3,
        chunk_size=300,
    )
    defaults.update(kw)
    return Scenario(**defaults)


def test_scenario_validation():
    with pytest.raises(ValueError):
        _scenario(samples_per_point=0)
    with pytest.raises(ValueError):
        _scenario(snr_step_db=0.0)
    with pytest.raises(ValueError):
        _scenario(snr_min_db=10.0, snr_max_db=5.0)
    assert _scenario().snr_grid == [6.0, 8.0, 10.0]


def test_sweep_rows_and_csv_determinism(tmp_path):
    scenario = _scenario()
    rows1 = run_sweep(scenario)
    rows2 = run_sweep(scenario)
    p1, p2 = tmp_path / "a.csv", tmp_path / "b.csv"
    write_csv(rows1, p1)
    write_csv(rows2, p2)
    assert p1.read_bytes() == p2.read_bytes()
    assert len(rows1) == 6
    assert all(0.0 <= r.ser <= 1.0 and r.ci95 >= 0 for r in rows1)
    write_json(rows1, tmp_path / "a.json")
    payload = json.loads((tmp_path / "a.json").read_text())
    assert len(payload) == 6 and payload[0]["detector"] == "ep"


def test_sweep_worker_count_invariance():
    scenario = _scenario(samples_per_point=400, chunk_size=100)
    rows1 = run_sweep(scenario, workers=1)
    rows2 = run_sweep(scenario, workers=2)
    assert [(r.detector, r.snr_db, r.errors, r.samples) for r in rows1] == [
        (r.detector, r.snr_db, r.errors, r.samples) for r in rows2
    ]


def test_sweep_detectors_share_instances_and_mmse_is_worse():
    rows = run_sweep(_scenario(samples_per_point=4000, chunk_size=2000))
    by = {(r.detector, r.snr_db): r for r in rows}
    for snr in (6.0, 8.0, 10.0):
        assert by[("mmse", snr)].ser >= by[("ep", snr)].ser


def test_sweep_missing_checkpoint_error_rows():
    scenario = _scenario(detectors=("ep", "gepnet"), samples_per_point=100)
    rows = run_sweep(scenario)
    errs = [r for r in rows if r.status == "error"]
    oks = [r for r in rows if r.status == "ok"]
    assert len(errs) == 3 and all(r.detector == "gepnet" for r in errs)
    assert len(oks) == 3 and all(r.detector == "ep" for r in oks)
    assert "model path" in errs[0].error


def test_build_detector_overrides():
    scenario = _scenario(overrides={"ep": {"iterations": 4, "damping": 0.5}})
    det = build_detector("ep", scenario)
    assert det.iterations == 4 and det.damping == 0.5
    with pytest.raises(ValueError):
        build_detector("unknown", scenario)


def test_ci_coverage_matched_filter_orthogonal_channel():
    # analytic SER for the matched filter on an orthogonal channel:
    # per-real-dimension error Q(d/sigma), complex symbol error 1-(1-p)^2
    c = make_constellation(4)
    n_tx, count = 2, 700
    h_c = np.eye(n_tx)
    noise_var = 0.09  # per real dimension
    d = c.real_points[1]
    p_dim = norm.sf(d / np.sqrt(noise_var))
    truth = 1.0 - (1.0 - p_dim) ** 2
    h = lift_complex_to_real(h_c)
    detector = BpicDetector(iterations=1)
    covered = 0
    for run in range(100):
        gen = RngStream(77, run).generator()
        sym = gen.integers(0, 4, size=(count, n_tx))
        x = lift_vector(c.complex_points[sym])
        noise = gen.normal(scale=np.sqrt(noise_var), size=(count, 2 * n_tx))
        batch = InstanceBatch(
            h=np.broadcast_to(h, (count,) + h.shape).copy(),
            x_true=x,
            y=x @ h.T + noise,
            noise=noise,
            noise_var=np.full(count, noise_var),
            n_tx=n_tx,
            n_rx=n_tx,
            constellation=c,
        )
        errors, symbols = complex_symbol_errors(detector.detect_batch(batch).x_hard, x)
        ser, ci = ser_confidence(errors, symbols)
        if abs(ser - truth) <= ci:
            covered += 1
    assert covered >= 90


def test_robustness_matrix_rows(tmp_path):
    from mimodet import GnnDims, GnnParams, save_params

    path = tmp_path / "model.ckpt"
    save_params(GnnParams.initialize(GnnDims(m=2), RngStream(1)), path)
    scenario = _scenario(
        detectors=("gepnet",), samples_per_point=50, snr_min_db=8.0, snr_max_db=8.0
    )
    rows = run_robustness(
        scenario, {"4+8": str(path), "6": str(tmp_path / "missing.ckpt")}, k_tests=[4, 6]
    )
    tags = {(r.k_train_spec, r.k_test, r.status) for r in rows}
    assert ("4+8", 4, "ok") in tags and ("4+8", 6, "ok") in tags
    assert ("6", 4, "error") in tags and ("6", 6, "error") in tags
    write_csv(rows, tmp_path / "rob.csv", columns=ROBUSTNESS_COLUMNS)
    header = (tmp_path / "rob.csv").read_text().splitlines()[0]
    assert header.startswith("k_train_spec,k_test,detector")


def test_robustness_same_k_matches_plain_sweep(tmp_path):
    from mimodet import GnnDims, GnnParams, save_params

    path = tmp_path / "model.ckpt"
    save_params(GnnParams.initialize(GnnDims(m=2), RngStream(2)), path)
    scenario = _scenario(
        detectors=("gepnet",),
        samples_per_point=200,
        snr_min_db=8.0,
        snr_max_db=8.0,
        model_paths={"gepnet": str(path)},
    )
    direct = run_sweep(scenario)
    matrix = run_robustness(scenario, {"solo": str(path)}, k_tests=[2 * scenario.n_tx])
    assert direct[0].ser == matrix[0].ser and direct[0].errors == matrix[0].errors


def test_complexity_reference_values():
    # published EP / GEPNet / MMSE / AMP / GNN / OAMPNet entries (16-QAM, M = 4)
    assert abs(complexity_estimate("ep", 256, 256, 4, 10) / 1e7 - 18.5324) < 5e-4
    assert abs(complexity_estimate("gepnet", 256, 128, 4, 10) / 1e7 - 7.1497) < 5e-4
    assert abs(complexity_estimate("mmse", 256, 256, 4, 10) / 1e7 - 3.3686) < 5e-4
    assert abs(complexity_estimate("amp", 256, 128, 4, 10) / 1e7 - 0.1359) < 5e-4
    assert abs(complexity_estimate("gnn", 256, 256, 4, 10) / 1e7 - 5.2862) < 5e-4
    assert abs(complexity_estimate("oampnet", 256, 128, 4, 10) / 1e7 - 15.1656) < 1e-3
    # formula-evaluation regression values for the remaining rows
    assert abs(complexity_estimate("bpic", 256, 128, 4, 10) / 1e7 - 0.45532) < 1e-4
    assert abs(complexity_estimate("re-mimo", 256, 128, 4, 10)) > 0
    with pytest.raises(ValueError):
        complexity_estimate("sphere", 16, 16, 2, 10)


def test_cli_complexity_and_sweep(tmp_path, capsys):
    from mimodet.cli import main

    code = main(["complexity", "--detector", "ep", "--n", "256", "--k", "256", "--m", "4"])
    assert code == 0
    out = capsys.readouterr().out
    assert "1.85324e+08" in out
    cfg = tmp_path / "scenario.json"
    cfg.write_text(
        json.dumps(
            {
                "detectors": ["ep"],
                "n_tx": 2,
                "n_rx": 4,
                "qam_order": 4,
                "snr_min_db": 8.0,
                "snr_max_db": 8.0,
                "snr_step_db": 2.0,
                "samples_per_point": 100,
                "seed": 5,
            }
        )
    )
    code = main(["sweep", "--config", str(cfg), "--out", str(tmp_path / "res")])
    assert code == 0
    lines = (tmp_path / "res.csv").read_text().splitlines()
    assert lines[0].startswith("detector,") and len(lines) == 2


def test_cli_bad_config_exit_code(tmp_path):
    from mimodet.cli import main

    cfg = tmp_path / "bad.json"
    cfg.write_text(json.dumps({"detectors": ["ep"], "n_tx": 2}))
    assert main(["sweep", "--config", str(cfg)]) == 2
