import numpy as np
import pytest

from mimodet import GnnDims, GnnParams, RngStream, load_params, save_params
from mimodet.checkpoint import (
    CheckpointDimensionError,
    CheckpointError,
    CheckpointTruncatedError,
    CheckpointVersionError,
    save_sidecar,
)


def _params(m=2, seed=0):
    return GnnParams.initialize(GnnDims(m=m), RngStream(seed))


def test_roundtrip_byte_exact(tmp_path):
    params = _params()
    p1 = tmp_path / "a.ckpt"
    p2 = tmp_path / "b.ckpt"
    save_params(params, p1, metadata={"note": "x"})
    loaded, meta = load_params(p1)
    assert meta == {"note": "x"}
    save_params(loaded, p2, metadata={"note": "x"})
    assert p1.read_bytes() == p2.read_bytes()
    for name in params.tensors:
        np.testing.assert_array_equal(params.tensors[name], loaded.tensors[name])


def test_forward_identical_after_roundtrip(tmp_path):
    from mimodet import gnn_forward, gnn_init, sample_instance, make_constellation

    inst = sample_instance(2, 4, make_constellation(4), 10.0, RngStream(3))
    params = _params(seed=5)
    state, _ = gnn_init(inst, params)
    attrs = np.stack([np.zeros(4), np.ones(4)], axis=1)
    before, _ = gnn_forward(inst, attrs, state, params)
    path = tmp_path / "c.ckpt"
    save_params(params, path)
    loaded, _ = load_params(path)
    after, _ = gnn_forward(inst, attrs, state, loaded)
    np.testing.assert_array_equal(before.q, after.q)


def test_dimension_mismatch_reported(tmp_path):
    path = tmp_path / "d.ckpt"
    save_params(_params(m=2), path)
    with pytest.raises(CheckpointDimensionError):
        load_params(path, expected_dims=GnnDims(m=4))
    with pytest.raises(CheckpointDimensionError):
        load_params(path, expected_dims=GnnDims(n_u=16, m=2))


def test_version_mismatch_reported(tmp_path):
    path = tmp_path / "e.ckpt"
    save_params(_params(), path)
    new = bytearray(path.read_bytes())
    idx = new.find(b'"format_version":1')
    assert idx > 0
    new[idx : idx + len(b'"format_version":1')] = b'"format_version":9'
    path.write_bytes(bytes(new))
    with pytest.raises(CheckpointVersionError):
        load_params(path)


def test_truncation_reported(tmp_path):
    path = tmp_path / "f.ckpt"
    save_params(_params(), path)
    raw = path.read_bytes()
    path.write_bytes(raw[: len(raw) - 128])
    with pytest.raises(CheckpointTruncatedError):
        load_params(path)


def test_garbage_rejected(tmp_path):
    path = tmp_path / "g.ckpt"
    path.write_bytes(b"not a checkpoint at all")
    with pytest.raises(CheckpointError):
        load_params(path)


def test_sidecar(tmp_path):
    import json

    path = tmp_path / "h.ckpt"
    save_sidecar(path, {"epochs": 3, "seed": 1})
    with open(str(path) + ".json", encoding="utf-8") as fh:
        assert json.load(fh) == {"epochs": 3, "seed": 1}
