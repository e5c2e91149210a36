"""Pair-wise-MRF graph network: attributes, message rounds, GRU update, readout.

All learnable tensors live in GnnParams; the forward pieces run on the
autodiff tape so the same code serves inference (under no_grad) and training.
"""

from dataclasses import dataclass, field

import numpy as np

from . import autodiff as ad
from .system import RngStream
from .validation import as_batch


@dataclass(frozen=True)
class GnnDims:
    """Architecture sizes; parameter count is independent of K and N."""

    n_u: int = 8
    n_h1: int = 64
    n_h2: int = 32
    m: int = 2
    rounds: int = 2


def _spec(dims):
    """Ordered (name, shape, fan_in) for every learnable tensor."""
    n_u, n_h1, n_h2, m = dims.n_u, dims.n_h1, dims.n_h2, dims.m
    pair_in = 2 * n_u + 2
    gru_in = n_u + 2
    entries = [
        ("w1", (3, n_u), 3),
        ("b1", (n_u,), None),
        ("d.w1", (pair_in, n_h1), pair_in),
        ("d.b1", (n_h1,), None),
        ("d.w2", (n_h1, n_h2), n_h1),
        ("d.b2", (n_h2,), None),
        ("d.w3", (n_h2, n_u), n_h2),
        ("d.b3", (n_u,), None),
    ]
    for gate in ("r", "z", "n"):
        entries.append((f"gru.w_i{gate}", (gru_in, n_h1), gru_in))
    for gate in ("r", "z", "n"):
        entries.append((f"gru.w_h{gate}", (n_h1, n_h1), n_h1))
    for gate in ("r", "z", "n"):
        entries.append((f"gru.b_i{gate}", (n_h1,), None))
    for gate in ("r", "z", "n"):
        entries.append((f"gru.b_h{gate}", (n_h1,), None))
    entries += [
        ("w2", (n_h1, n_u), n_h1),
        ("b2", (n_u,), None),
        ("r.w1", (n_u, n_h1), n_u),
        ("r.b1", (n_h1,), None),
        ("r.w2", (n_h1, n_h2), n_h1),
        ("r.b2", (n_h2,), None),
        ("r.w3", (n_h2, m), n_h2),
        ("r.b3", (m,), None),
    ]
    return entries


@dataclass
class GnnParams:
    """All learnable tensors, keyed by name in a fixed serialization order."""

    dims: GnnDims
    tensors: dict = field(default_factory=dict)

    @classmethod
    def initialize(cls, dims, rng):
        """Fan-in-scaled uniform weights, zero biases, fixed by the stream."""
        gen = rng.generator() if isinstance(rng, RngStream) else rng
        tensors = {}
        for name, shape, fan_in in _spec(dims):
            if fan_in is None:
                tensors[name] = np.zeros(shape)
            else:
                bound = 1.0 / np.sqrt(fan_in)
                tensors[name] = gen.uniform(-bound, bound, size=shape)
        return cls(dims=dims, tensors=tensors)

    def parameter_count(self):
        return sum(t.size for t in self.tensors.values())

    def copy(self):
        return GnnParams(self.dims, {k: v.copy() for k, v in self.tensors.items()})

    def as_tensors(self, requires_grad=False):
        return {k: ad.Tensor(v, requires_grad=requires_grad) for k, v in self.tensors.items()}

    def check_compatible(self, m, n_u=None):
        if self.dims.m != m:
            raise ValueError(
                f"parameter readout width {self.dims.m} does not match constellation size {m}"
            )
        if n_u is not None and self.dims.n_u != n_u:
            raise ValueError(f"message size mismatch: {self.dims.n_u} vs {n_u}")


@dataclass
class GnnState:
    """Per-node runtime state carried across rounds and detector iterations."""

    u: np.ndarray  # (K, N_u) messages
    g: np.ndarray  # (K, N_h1) GRU hidden


@dataclass
class NodeAttributes:
    """Per-node [estimate, variance] rows; variances must be positive."""

    a: np.ndarray

    def __post_init__(self):
        self.a = np.asarray(self.a, dtype=float)
        if self.a.ndim != 2 or self.a.shape[1] != 2:
            raise ValueError("node attributes must be a (K, 2) array")
        if np.any(self.a[:, 1] <= 0):
            raise ValueError("node attribute variances must be strictly positive")


@dataclass
class EdgeAttributes:
    """Pair features f_jk = [h_k^T h_j, sigma^2] and the init features."""

    f: np.ndarray              # (K, K, 2); diagonal unused
    init_features: np.ndarray  # (K, 3) rows [y^T h_k, h_k^T h_k, sigma^2]


@dataclass
class CavityDistribution:
    """Readout output: per-user categorical distribution over the alphabet."""

    q: np.ndarray
    logits: np.ndarray


def exclusion_mask(k):
    """(1, K, K, 1) multiplicative mask zeroing the j == k diagonal."""
    return (1.0 - np.eye(k))[None, :, :, None]


def pair_features(gram, noise_var):
    """(B, K, K, 2) edge features from the Gram matrix and noise power."""
    b, k, _ = gram.shape
    f = np.empty((b, k, k, 2))
    f[..., 0] = gram
    f[..., 1] = np.asarray(noise_var)[:, None, None]
    return f


def init_features(hty, gram_diag, noise_var):
    """(B, K, 3) rows [y^T h_k, h_k^T h_k, sigma^2]."""
    return np.stack(
        [hty, gram_diag, np.broadcast_to(np.asarray(noise_var)[:, None], hty.shape)], axis=-1
    )


def _mlp(x, pt, prefix):
    h = ad.relu(ad.add(ad.matmul(x, pt[prefix + "w1"]), pt[prefix + "b1"]))
    h = ad.relu(ad.add(ad.matmul(h, pt[prefix + "w2"]), pt[prefix + "b2"]))
    return ad.add(ad.matmul(h, pt[prefix + "w3"]), pt[prefix + "b3"])


def _gru(x, h, pt):
    r = ad.sigmoid(
        ad.add(
            ad.add(ad.matmul(x, pt["gru.w_ir"]), pt["gru.b_ir"]),
            ad.add(ad.matmul(h, pt["gru.w_hr"]), pt["gru.b_hr"]),
        )
    )
    z = ad.sigmoid(
        ad.add(
            ad.add(ad.matmul(x, pt["gru.w_iz"]), pt["gru.b_iz"]),
            ad.add(ad.matmul(h, pt["gru.w_hz"]), pt["gru.b_hz"]),
        )
    )
    n = ad.tanh(
        ad.add(
            ad.add(ad.matmul(x, pt["gru.w_in"]), pt["gru.b_in"]),
            ad.mul(r, ad.add(ad.matmul(h, pt["gru.w_hn"]), pt["gru.b_hn"])),
        )
    )
    one_minus_z = ad.sub(1.0, z)
    return ad.add(ad.mul(one_minus_z, n), ad.mul(z, h))


def init_messages_t(feats, pt):
    """u^(0) rows from the self-potential features (tape)."""
    b, k, _ = feats.shape if not isinstance(feats, ad.Tensor) else feats.value.shape
    flat = ad.reshape(ad.as_tensor(feats), (b * k, 3))
    u = ad.add(ad.matmul(flat, pt["w1"]), pt["b1"])
    n_u = pt["b1"].value.shape[0]
    return ad.reshape(u, (b, k, n_u))


def run_rounds_t(u, g, attrs, pair_feats, mask, pt, rounds):
    """L synchronous message-passing rounds (tape). Shapes (B, K, ...)."""
    b, k, n_u = u.value.shape
    n_h1 = g.value.shape[-1]
    for _ in range(rounds):
        uk = ad.broadcast_to(ad.reshape(u, (b, k, 1, n_u)), (b, k, k, n_u))
        uj = ad.broadcast_to(ad.reshape(u, (b, 1, k, n_u)), (b, k, k, n_u))
        pair_in = ad.concat([uk, uj, ad.as_tensor(pair_feats)], axis=-1)
        msgs = _mlp(ad.reshape(pair_in, (b * k * k, 2 * n_u + 2)), pt, "d.")
        msgs = ad.reshape(msgs, (b, k, k, n_u))
        agg = ad.tsum(ad.mul(msgs, mask), axis=2)
        mk = ad.concat([agg, ad.as_tensor(attrs)], axis=-1)
        g = _gru(ad.reshape(mk, (b * k, n_u + 2)), ad.reshape(g, (b * k, n_h1)), pt)
        u = ad.reshape(ad.add(ad.matmul(g, pt["w2"]), pt["b2"]), (b, k, n_u))
        g = ad.reshape(g, (b, k, n_h1))
    return u, g


def readout_t(u, pt):
    """Logits and row-softmax cavity distribution (tape)."""
    b, k, n_u = u.value.shape
    logits = _mlp(ad.reshape(u, (b * k, n_u)), pt, "r.")
    m = pt["r.b3"].value.shape[0]
    logits = ad.reshape(logits, (b, k, m))
    return logits, ad.softmax(logits, axis=-1)


def gnn_init(instance, params):
    """Initial messages u^(0) and edge attributes for one instance (t=1 only)."""
    batch = as_batch(instance)
    gram = np.einsum("bnk,bnj->bkj", batch.h, batch.h)
    hty = np.einsum("bnk,bn->bk", batch.h, batch.y)
    gd = np.diagonal(gram, axis1=-2, axis2=-1)
    feats = init_features(hty, gd, batch.noise_var)
    with ad.no_grad():
        u0 = init_messages_t(feats, params.as_tensors()).value[0]
    k = gram.shape[-1]
    edges = EdgeAttributes(
        f=pair_features(gram, batch.noise_var)[0], init_features=feats[0]
    )
    return GnnState(u=u0, g=np.zeros((k, params.dims.n_h1))), edges


def gnn_round(state, node_attrs, edge_attrs, params):
    """One synchronous round over all K nodes of one instance."""
    attrs = node_attrs.a if isinstance(node_attrs, NodeAttributes) else np.asarray(node_attrs)
    k = state.u.shape[0]
    with ad.no_grad():
        u, g = run_rounds_t(
            ad.Tensor(state.u[None]),
            ad.Tensor(state.g[None]),
            attrs[None],
            edge_attrs.f[None],
            exclusion_mask(k),
            params.as_tensors(),
            rounds=1,
        )
    return GnnState(u=u.value[0], g=g.value[0])


def gnn_readout(state, params):
    """Readout of the current messages into a cavity distribution."""
    with ad.no_grad():
        logits, q = readout_t(ad.Tensor(state.u[None]), params.as_tensors())
    return CavityDistribution(q=q.value[0], logits=logits.value[0])


@dataclass
class GnnForwardTape:
    """Recorded forward pass for gnn_backward."""

    q: ad.Tensor
    param_tensors: dict
    attr_tensor: ad.Tensor
    consumed: bool = False


def gnn_forward(instance, node_attrs, state, params, rounds=None, record=False):
    """L rounds plus readout; returns the refined cavity and the carried state.

    With record=True also returns a GnnForwardTape for gnn_backward.
    """
    attrs = node_attrs.a if isinstance(node_attrs, NodeAttributes) else np.asarray(node_attrs)
    if rounds is None:
        rounds = params.dims.rounds
    k = state.u.shape[0]
    pt = params.as_tensors(requires_grad=record)
    attr_t = ad.Tensor(attrs[None], requires_grad=record)
    if record:
        u, g = run_rounds_t(
            ad.Tensor(state.u[None]),
            ad.Tensor(state.g[None]),
            attr_t,
            pair_features_from_edges(instance, k),
            exclusion_mask(k),
            pt,
            rounds,
        )
        logits, q = readout_t(u, pt)
        cavity = CavityDistribution(q=q.value[0], logits=logits.value[0])
        new_state = GnnState(u=u.value[0], g=g.value[0])
        return cavity, new_state, GnnForwardTape(q=q, param_tensors=pt, attr_tensor=attr_t)
    with ad.no_grad():
        u, g = run_rounds_t(
            ad.Tensor(state.u[None]),
            ad.Tensor(state.g[None]),
            attr_t,
            pair_features_from_edges(instance, k),
            exclusion_mask(k),
            pt,
            rounds,
        )
        logits, q = readout_t(u, pt)
    return (
        CavityDistribution(q=q.value[0], logits=logits.value[0]),
        GnnState(u=u.value[0], g=g.value[0]),
    )


def pair_features_from_edges(instance_or_edges, k):
    if isinstance(instance_or_edges, EdgeAttributes):
        return instance_or_edges.f[None]
    batch = as_batch(instance_or_edges)
    gram = np.einsum("bnk,bnj->bkj", batch.h, batch.h)
    return pair_features(gram, batch.noise_var)


def gnn_backward(tape, upstream_gradient):
    """Reverse pass through a recorded gnn_forward.

    upstream_gradient is dLoss/dq with the same shape as the readout; returns
    (parameter gradient dict, node-attribute gradient).
    """
    if not isinstance(tape, GnnForwardTape):
        raise ValueError("gnn_backward requires the tape recorded by gnn_forward(record=True)")
    if tape.consumed:
        raise ValueError("tape already consumed by a previous backward pass")
    tape.consumed = True
    upstream = np.asarray(upstream_gradient)
    if upstream.shape != tape.q.value.shape:
        upstream = upstream[None]
    ad.backward(tape.q, upstream)
    grads = {
        name: (np.zeros_like(t.value) if t.grad is None else t.grad)
        for name, t in tape.param_tensors.items()
    }
    attr_grad = tape.attr_tensor.grad
    if attr_grad is None:
        attr_grad = np.zeros_like(tape.attr_tensor.value)
    return grads, attr_grad[0]
