import itertools

import numpy as np
import pytest

from mimodet import (
    BpicDetector,
    EpDetector,
    MlOracle,
    MmseDetector,
    RngStream,
    make_constellation,
    ml_oracle,
    sample_batch,
    sample_instance,
)
from mimodet.baselines import (
    EnumerationBudgetError,
    candidate_chunk,
    detection_objective,
    ml_solve_batch,
)
from mimodet.system import SystemInstance


def test_mmse_zero_forcing_limit():
    inst = sample_instance(2, 2, make_constellation(4), 10.0, RngStream(0))
    inst.noise_var = 1e-12
    result = MmseDetector().detect(inst, trace=True)
    zf = np.linalg.solve(inst.h, inst.y)
    np.testing.assert_allclose(result.x_soft_trace[0], zf, atol=1e-6)


def test_mmse_scalar_shrinkage():
    c = make_constellation(4)
    h = np.eye(4)
    y = np.array([0.5, -0.3, 0.2, 0.8])
    inst = SystemInstance(
        h=h, x_true=c.real_points[[0, 0, 1, 1]].copy(), y=y, noise=np.zeros(4),
        noise_var=c.es_real, n_tx=2, n_rx=2, constellation=c,
    )
    result = MmseDetector().detect(inst, trace=True)
    np.testing.assert_allclose(result.x_soft_trace[0], y / 2.0, atol=1e-12)


def test_mmse_matches_ridge_oracle():
    c = make_constellation(4)
    for trial in range(5):
        inst = sample_instance(4, 8, c, 8.0, RngStream(30, trial))
        ridge = inst.noise_var / c.es_real
        direct = np.linalg.solve(
            inst.h.T @ inst.h + ridge * np.eye(8), inst.h.T @ inst.y
        )
        result = MmseDetector().detect(inst, trace=True)
        assert np.abs(result.x_soft_trace[0] - direct).max() < 1e-10


def test_ml_noiseless_exact():
    c = make_constellation(4)
    inst = sample_instance(2, 4, c, 10.0, RngStream(1))
    inst.y = inst.h @ inst.x_true
    x_ml, obj = ml_oracle(inst)
    np.testing.assert_array_equal(x_ml, inst.x_true)
    assert obj < 1e-18


def test_ml_matches_hand_enumeration():
    c = make_constellation(4)
    inst = sample_instance(1, 2, c, 3.0, RngStream(2))  # K = 2, M = 2
    best, best_obj = None, np.inf
    for cand in itertools.product(c.real_points, repeat=2):
        obj = np.sum((inst.y - inst.h @ np.array(cand)) ** 2)
        if obj < best_obj:
            best, best_obj = np.array(cand), obj
    x_ml, obj = ml_oracle(inst)
    np.testing.assert_array_equal(x_ml, best)
    assert abs(obj - best_obj) < 1e-12


def test_ml_budget_rejected_with_required_count():
    c = make_constellation(64)
    inst = sample_instance(8, 8, c, 30.0, RngStream(3))
    with pytest.raises(EnumerationBudgetError) as err:
        ml_oracle(inst, budget=2**20)
    assert err.value.required == 8**16
    assert "budget" in str(err.value)


def test_candidate_order_is_lexicographic():
    points = np.array([-1.0, 1.0])
    chunk = candidate_chunk(points, 3, 0, 8)
    expected_first = [-1.0, -1.0, -1.0]
    expected_second = [-1.0, -1.0, 1.0]
    np.testing.assert_array_equal(chunk[0], expected_first)
    np.testing.assert_array_equal(chunk[1], expected_second)
    # first symbol is the most significant digit
    np.testing.assert_array_equal(chunk[4], [1.0, -1.0, -1.0])


def test_batch_solver_matches_single_oracle():
    c = make_constellation(4)
    batch = sample_batch(3, 5, c, 6.0, 12, RngStream(4))
    x_batch, obj_batch = ml_solve_batch(batch.h, batch.y, c.real_points)
    for i in range(12):
        x_single, obj_single = ml_oracle(batch.instance(i))
        np.testing.assert_array_equal(x_batch[i], x_single)
        assert abs(obj_batch[i] - obj_single) < 1e-9


def test_ml_objective_never_exceeded_by_other_detectors():
    c = make_constellation(4)
    batch = sample_batch(4, 8, c, 7.0, 64, RngStream(5))
    x_ml, obj_ml = ml_solve_batch(batch.h, batch.y, c.real_points)
    for det in (EpDetector(), BpicDetector(), MmseDetector()):
        hard = det.detect_batch(batch).x_hard
        objs = detection_objective(batch.h, batch.y, hard)
        assert np.all(obj_ml <= objs + 1e-9)


def test_ml_oracle_detector_class():
    c = make_constellation(4)
    batch = sample_batch(2, 4, c, 8.0, 16, RngStream(6))
    det = MlOracle()
    result = det.detect_batch(batch)
    x_batch, _ = ml_solve_batch(batch.h, batch.y, c.real_points)
    np.testing.assert_array_equal(result.x_hard, x_batch)
    assert det.get_params() == {"budget": 2**24}
