import numpy as np
import pytest
from scipy.special import expit

from mimodet import (
    GnnDims,
    GnnParams,
    NodeAttributes,
    RngStream,
    gnn_backward,
    gnn_forward,
    gnn_init,
    gnn_readout,
    gnn_round,
    make_constellation,
    sample_instance,
)
from mimodet.gnn import EdgeAttributes, GnnState
from mimodet.system import SystemInstance


def _instance(n_tx=4, n_rx=8, seed=0, snr=10.0):
    return sample_instance(n_tx, n_rx, make_constellation(4), snr, RngStream(seed))


def _random_attrs(k, seed=1):
    rng = np.random.default_rng(seed)
    return np.stack([rng.normal(size=k), rng.uniform(0.1, 1.0, size=k)], axis=1)


def _params(seed=2, m=2):
    return GnnParams.initialize(GnnDims(m=m), RngStream(seed))


def scalar_mlp(x, p, prefix):
    h = np.maximum(x @ p[prefix + "w1"] + p[prefix + "b1"], 0.0)
    h = np.maximum(h @ p[prefix + "w2"] + p[prefix + "b2"], 0.0)
    return h @ p[prefix + "w3"] + p[prefix + "b3"]


def scalar_round(u, g, attrs, f, p, node_order):
    """Straight-line per-node reference of one synchronous round.

    Reads only pre-round state; the incoming-message sum always runs in
    ascending original node index regardless of processing order.
    """
    k, n_u = u.shape
    new_u, new_g = u.copy(), g.copy()
    for node in node_order:
        agg = np.zeros(n_u)
        for j in range(k):  # canonical ascending accumulation
            if j == node:
                continue
            pair_in = np.concatenate([u[node], u[j], f[node, j]])
            agg = agg + scalar_mlp(pair_in, p, "d.")
        mk = np.concatenate([agg, attrs[node]])
        r = expit(mk @ p["gru.w_ir"] + p["gru.b_ir"] + g[node] @ p["gru.w_hr"] + p["gru.b_hr"])
        z = expit(mk @ p["gru.w_iz"] + p["gru.b_iz"] + g[node] @ p["gru.w_hz"] + p["gru.b_hz"])
        n = np.tanh(
            mk @ p["gru.w_in"] + p["gru.b_in"]
            + r * (g[node] @ p["gru.w_hn"] + p["gru.b_hn"])
        )
        new_g[node] = (1 - z) * n + z * g[node]
        new_u[node] = new_g[node] @ p["w2"] + p["b2"]
    return new_u, new_g


def test_init_constant_weight_rows():
    inst = _instance()
    params = _params()
    params.tensors["w1"][:] = 0.0
    params.tensors["b1"][:] = 0.25
    state, edges = gnn_init(inst, params)
    np.testing.assert_allclose(state.u, 0.25)
    assert state.g.shape == (8, 64) and np.all(state.g == 0)
    assert edges.f.shape == (8, 8, 2)
    np.testing.assert_allclose(edges.f[..., 1], inst.noise_var)
    np.testing.assert_allclose(edges.f[2, 5, 0], inst.h[:, 2] @ inst.h[:, 5])
    np.testing.assert_allclose(
        edges.init_features[:, 0], inst.h.T @ inst.y, atol=1e-12
    )


def test_init_permutes_with_columns():
    inst = _instance(seed=5)
    params = _params()
    perm = np.random.default_rng(0).permutation(8)
    permuted = SystemInstance(
        h=inst.h[:, perm], x_true=inst.x_true[perm], y=inst.y, noise=inst.noise,
        noise_var=inst.noise_var, n_tx=inst.n_tx, n_rx=inst.n_rx,
        constellation=inst.constellation,
    )
    base, _ = gnn_init(inst, params)
    shuffled, _ = gnn_init(permuted, params)
    np.testing.assert_allclose(shuffled.u, base.u[perm], atol=1e-12)


def test_round_matches_scalar_reference():
    inst = _instance(n_tx=3, n_rx=4, seed=7)
    params = _params(seed=8)
    state, edges = gnn_init(inst, params)
    attrs = _random_attrs(6, seed=9)
    out = gnn_round(state, NodeAttributes(attrs), edges, params)
    ref_u, ref_g = scalar_round(
        state.u, state.g, attrs, edges.f, params.tensors, node_order=range(6)
    )
    assert np.abs(out.u - ref_u).max() < 1e-12
    assert np.abs(out.g - ref_g).max() < 1e-12


def test_round_is_synchronous_and_order_free():
    inst = _instance(n_tx=3, n_rx=4, seed=17)
    params = _params(seed=18)
    state, edges = gnn_init(inst, params)
    attrs = _random_attrs(6, seed=19)
    fwd = scalar_round(state.u, state.g, attrs, edges.f, params.tensors, range(6))
    rev = scalar_round(state.u, state.g, attrs, edges.f, params.tensors, range(5, -1, -1))
    assert np.array_equal(fwd[0], rev[0]) and np.array_equal(fwd[1], rev[1])


def test_round_k2_aggregates_single_message():
    inst = _instance(n_tx=1, n_rx=2, seed=20)
    params = _params(seed=21)
    state, edges = gnn_init(inst, params)
    attrs = _random_attrs(2, seed=22)
    out = gnn_round(state, NodeAttributes(attrs), edges, params)
    pair_in = np.concatenate([state.u[0], state.u[1], edges.f[0, 1]])
    single = scalar_mlp(pair_in, params.tensors, "d.")
    mk = np.concatenate([single, attrs[0]])
    p = params.tensors
    r = expit(mk @ p["gru.w_ir"] + p["gru.b_ir"])
    z = expit(mk @ p["gru.w_iz"] + p["gru.b_iz"])
    n = np.tanh(mk @ p["gru.w_in"] + p["gru.b_in"] + r * p["gru.b_hn"])
    expected_u = ((1 - z) * n) @ p["w2"] + p["b2"]
    np.testing.assert_allclose(out.u[0], expected_u, atol=1e-12)


def test_identical_users_stay_identical():
    # two nodes with identical state, attributes, and symmetric couplings
    params = _params(seed=23)
    k = 2
    u = np.tile(np.random.default_rng(1).normal(size=8), (k, 1))
    g = np.zeros((k, 64))
    f = np.zeros((k, k, 2))
    f[..., 0] = 0.7
    f[..., 1] = 0.1
    attrs = np.tile([[0.2, 0.5]], (k, 1))
    edges = EdgeAttributes(f=f, init_features=np.zeros((k, 3)))
    out = gnn_round(GnnState(u=u, g=g), NodeAttributes(attrs), edges, params)
    np.testing.assert_allclose(out.u[0], out.u[1], atol=1e-13)


def test_readout_uniform_for_equal_logits():
    params = _params(seed=24)
    for name in ("r.w1", "r.w2", "r.w3"):
        params.tensors[name][:] = 0.0
    params.tensors["r.b3"][:] = 1.7
    state = GnnState(u=np.random.default_rng(0).normal(size=(4, 8)), g=np.zeros((4, 64)))
    cavity = gnn_readout(state, params)
    np.testing.assert_allclose(cavity.q, 0.5, atol=1e-12)


def test_readout_saturation_and_normalization():
    params = _params(seed=25)
    state = GnnState(u=np.random.default_rng(3).normal(size=(5, 8)), g=np.zeros((5, 64)))
    cavity = gnn_readout(state, params)
    np.testing.assert_allclose(cavity.q.sum(axis=1), 1.0, atol=1e-12)
    assert np.all(cavity.q >= 0) and np.all(cavity.q <= 1)
    state.u[0] = 0.0
    params.tensors["r.b3"][:] = [50.0, -50.0]
    for name in ("r.w1", "r.w2", "r.w3"):
        params.tensors[name][:] = 0.0
    cavity = gnn_readout(state, params)
    assert cavity.q[0, 0] > 1.0 - 1e-12


def test_forward_zero_rounds_reads_out_incoming_state():
    inst = _instance(seed=26)
    params = _params(seed=27)
    state, edges = gnn_init(inst, params)
    cavity, new_state = gnn_forward(inst, _random_attrs(8), state, params, rounds=0)
    direct = gnn_readout(state, params)
    np.testing.assert_allclose(cavity.q, direct.q, atol=1e-14)
    np.testing.assert_array_equal(new_state.u, state.u)


def test_forward_purity():
    inst = _instance(seed=28)
    params = _params(seed=29)
    state, edges = gnn_init(inst, params)
    attrs = _random_attrs(8, seed=30)
    a = gnn_forward(inst, attrs, state, params)
    b = gnn_forward(inst, attrs, state, params)
    np.testing.assert_array_equal(a[0].q, b[0].q)
    np.testing.assert_array_equal(a[1].g, b[1].g)


def test_forward_outputs_finite_and_normalized():
    inst = _instance(n_tx=4, n_rx=8, seed=31)
    params = _params(seed=32)
    state, edges = gnn_init(inst, params)
    cavity, new_state = gnn_forward(inst, _random_attrs(8, seed=33), state, params)
    assert np.isfinite(new_state.u).all() and np.isfinite(new_state.g).all()
    np.testing.assert_allclose(cavity.q.sum(axis=1), 1.0, atol=1e-9)


def test_parameter_count_independent_of_k():
    counts = set()
    for n_tx in (2, 4, 8):
        inst = _instance(n_tx=n_tx, n_rx=8, seed=34)
        params = _params(seed=35)
        state, edges = gnn_init(inst, params)
        gnn_forward(inst, _random_attrs(2 * n_tx, seed=36), state, params)
        counts.add(params.parameter_count())
    assert len(counts) == 1
    dims = GnnDims(m=2)
    n_u, h1, h2, m = dims.n_u, dims.n_h1, dims.n_h2, dims.m
    expected = (
        3 * n_u + n_u
        + (2 * n_u + 2) * h1 + h1 + h1 * h2 + h2 + h2 * n_u + n_u
        + 3 * ((n_u + 2) * h1 + h1 * h1 + 2 * h1)
        + h1 * n_u + n_u
        + n_u * h1 + h1 + h1 * h2 + h2 + h2 * m + m
    )
    assert counts.pop() == expected


def test_forward_permutation_equivariance():
    params = _params(seed=37)
    rng = np.random.default_rng(38)
    for trial in range(5):
        inst = _instance(seed=40 + trial)
        attrs = _random_attrs(8, seed=50 + trial)
        state, _ = gnn_init(inst, params)
        cavity, _ = gnn_forward(inst, attrs, state, params)
        perm = rng.permutation(8)
        permuted = SystemInstance(
            h=inst.h[:, perm], x_true=inst.x_true[perm], y=inst.y, noise=inst.noise,
            noise_var=inst.noise_var, n_tx=inst.n_tx, n_rx=inst.n_rx,
            constellation=inst.constellation,
        )
        state_p, _ = gnn_init(permuted, params)
        cavity_p, _ = gnn_forward(permuted, attrs[perm], state_p, params)
        assert np.abs(cavity_p.q - cavity.q[perm]).max() < 1e-6


def test_node_attributes_validation():
    with pytest.raises(ValueError):
        NodeAttributes(np.array([[0.1, -0.2]]))
    with pytest.raises(ValueError):
        NodeAttributes(np.zeros((3, 4)))


def test_backward_rejects_missing_or_reused_tape():
    inst = _instance(seed=60)
    params = _params(seed=61)
    state, _ = gnn_init(inst, params)
    with pytest.raises(ValueError, match="tape"):
        gnn_backward(None, np.zeros((8, 2)))
    cavity, _, tape = gnn_forward(inst, _random_attrs(8), state, params, record=True)
    gnn_backward(tape, np.ones_like(cavity.q))
    with pytest.raises(ValueError, match="consumed"):
        gnn_backward(tape, np.ones_like(cavity.q))


def test_backward_zero_upstream_gives_zero_grads():
    inst = _instance(seed=62)
    params = _params(seed=63)
    state, _ = gnn_init(inst, params)
    cavity, _, tape = gnn_forward(inst, _random_attrs(8), state, params, record=True)
    grads, attr_grad = gnn_backward(tape, np.zeros_like(cavity.q))
    assert all(np.all(g == 0) for g in grads.values())
    assert np.all(attr_grad == 0)


def test_backward_matches_finite_differences():
    inst = _instance(n_tx=2, n_rx=3, seed=64)
    params = _params(seed=65)
    attrs = _random_attrs(4, seed=66)
    state, _ = gnn_init(inst, params)
    rng = np.random.default_rng(67)
    seed_grad = rng.normal(size=(4, 2))

    cavity, _, tape = gnn_forward(inst, attrs, state, params, record=True)
    grads, attr_grad = gnn_backward(tape, seed_grad)

    def loss_at(p, a):
        c, _ = gnn_forward(inst, a, state, p)
        return float((c.q * seed_grad).sum())

    def central_fd(fn, h=1e-5):
        # reject coordinates whose difference quotient is not h-stable
        # (a ReLU kink inside the window makes any finite difference wrong)
        fd_h = fn(h)
        fd_half = fn(h / 2)
        if abs(fd_h - fd_half) > 1e-4 * max(abs(fd_h), abs(fd_half), 1e-6):
            return None
        return fd_half

    worst = 0.0
    tested = 0
    for name in params.tensors:
        arr = params.tensors[name]
        for _ in range(3):
            idx = tuple(rng.integers(0, d) for d in arr.shape) if arr.ndim else ()

            def quotient(h, name=name, idx=idx):
                plus, minus = params.copy(), params.copy()
                plus.tensors[name][idx] += h
                minus.tensors[name][idx] -= h
                return (loss_at(plus, attrs) - loss_at(minus, attrs)) / (2 * h)

            fd = central_fd(quotient)
            if fd is None:
                continue
            rel = abs(fd - grads[name][idx]) / max(abs(fd), abs(grads[name][idx]), 1e-7)
            worst = max(worst, rel)
            tested += 1
    for _ in range(6):
        idx = (rng.integers(0, 4), rng.integers(0, 2))

        def quotient(h, idx=idx):
            plus, minus = attrs.copy(), attrs.copy()
            plus[idx] += h
            minus[idx] -= h
            return (loss_at(params, plus) - loss_at(params, minus)) / (2 * h)

        fd = central_fd(quotient)
        if fd is None:
            continue
        rel = abs(fd - attr_grad[idx]) / max(abs(fd), abs(attr_grad[idx]), 1e-7)
        worst = max(worst, rel)
        tested += 1
    assert tested > 60
    assert worst < 1e-4


def test_backward_linear_submodel_closed_form():
    # bypass every ReLU/GRU nonlinearity: zero hidden weights turn the readout
    # into logits = r.b3 + r.w3^T relu(r.b2 + ...); make it affine instead
    inst = _instance(n_tx=1, n_rx=2, seed=70)
    params = _params(seed=71)
    p = params.tensors
    for name in ("r.w1", "r.b1", "r.w2", "r.b2"):
        p[name][:] = 0.0
    p["r.b2"][:] = 1.0  # keeps the last hidden layer at a constant positive value
    state = GnnState(u=np.zeros((2, 8)), g=np.zeros((2, 64)))
    cavity, _, tape = gnn_forward(inst, _random_attrs(2, seed=72), state, params, rounds=0, record=True)
    upstream = np.array([[1.0, 0.0], [0.0, 0.0]])
    grads, _ = gnn_backward(tape, upstream)
    # logits = r.w3^T @ ones + r.b3 per node; q = softmax(logits)
    q = cavity.q[0]
    jac = np.diag(q) - np.outer(q, q)  # d q / d logits
    expected_b3 = jac @ upstream[0]
    np.testing.assert_allclose(grads["r.b3"], expected_b3, atol=1e-12)
    np.testing.assert_allclose(grads["r.w3"], np.tile(expected_b3, (32, 1)), atol=1e-12)
