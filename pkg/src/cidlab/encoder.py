"""Two-encoder MLP: a trained query encoder and its momentum (EMA) copy.

The base network is a stack of affine layers each followed by ReLU; its
output is the learned representation consumed by the linear probe (raw, not
normalized — and non-negative, mirroring the post-ReLU pooled features of
the convolutional encoders this stands in for). The projection head is
affine -> ReLU -> affine, and its output is unit-normalized to give the
contrastive-space embedding. Gradients are hand-derived per layer,
including the normalization Jacobian (I - u u^T)/||h||.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .exceptions import ShapeMismatchError, ZeroVectorError
from .numerics import ZERO_NORM_TOL, check_finite


@dataclass(frozen=True)
class EncoderConfig:
    input_dim: int
    base_hidden_dims: tuple = (256, 256)
    repr_dim: int = 128
    head_hidden_dim: int = 256
    embed_dim: int = 64
    momentum_coeff: float = 0.999

    def __post_init__(self):
        dims = (self.input_dim, *self.base_hidden_dims, self.repr_dim,
                self.head_hidden_dim, self.embed_dim)
        if any(int(d) < 1 for d in dims):
            raise ValueError(f"all dimensions must be >= 1, got {dims}")
        if not 0.0 <= self.momentum_coeff < 1.0:
            raise ValueError(f"momentum_coeff must lie in [0, 1), got {self.momentum_coeff}")
        object.__setattr__(self, "base_hidden_dims", tuple(int(d) for d in self.base_hidden_dims))

    def base_layer_dims(self):
        return [self.input_dim, *self.base_hidden_dims, self.repr_dim]

    def head_layer_dims(self):
        return [self.repr_dim, self.head_hidden_dim, self.embed_dim]

    def to_dict(self):
        return {
            "input_dim": self.input_dim,
            "base_hidden_dims": list(self.base_hidden_dims),
            "repr_dim": self.repr_dim,
            "head_hidden_dim": self.head_hidden_dim,
            "embed_dim": self.embed_dim,
            "momentum_coeff": self.momentum_coeff,
        }

    @classmethod
    def from_dict(cls, d):
        return cls(input_dim=int(d["input_dim"]),
                   base_hidden_dims=tuple(int(v) for v in d["base_hidden_dims"]),
                   repr_dim=int(d["repr_dim"]),
                   head_hidden_dim=int(d["head_hidden_dim"]),
                   embed_dim=int(d["embed_dim"]),
                   momentum_coeff=float(d["momentum_coeff"]))


@dataclass
class EncoderParams:
    """Per-layer weights and biases for the base stack and the head.

    Weights have shape (fan_in, fan_out); activations are row vectors, so a
    layer computes ``x @ W + b``.
    """

    base_weights: list
    base_biases: list
    head_weights: list
    head_biases: list

    def flat(self):
        """All arrays in declared layer order (base W,b pairs then head W,b pairs)."""
        out = []
        for w, b in zip(self.base_weights, self.base_biases):
            out.extend((w, b))
        for w, b in zip(self.head_weights, self.head_biases):
            out.extend((w, b))
        return out

    @classmethod
    def from_flat(cls, config: EncoderConfig, arrays):
        arrays = list(arrays)
        n_base = len(config.base_layer_dims()) - 1
        n_head = len(config.head_layer_dims()) - 1
        if len(arrays) != 2 * (n_base + n_head):
            raise ShapeMismatchError(f"expected {2 * (n_base + n_head)} arrays, got {len(arrays)}")
        bw = arrays[0:2 * n_base:2]
        bb = arrays[1:2 * n_base:2]
        hw = arrays[2 * n_base::2]
        hb = arrays[2 * n_base + 1::2]
        return cls(list(bw), list(bb), list(hw), list(hb))

    def copy(self):
        return EncoderParams([w.copy() for w in self.base_weights],
                             [b.copy() for b in self.base_biases],
                             [w.copy() for w in self.head_weights],
                             [b.copy() for b in self.head_biases])

    def scale(self, factor):
        return EncoderParams([w * factor for w in self.base_weights],
                             [b * factor for b in self.base_biases],
                             [w * factor for w in self.head_weights],
                             [b * factor for b in self.head_biases])

    def allclose(self, other, rtol=0.0, atol=0.0):
        return all(np.allclose(a, b, rtol=rtol, atol=atol)
                   for a, b in zip(self.flat(), other.flat()))


@dataclass
class EncoderPair:
    """Query encoder (trained) plus its key encoder (EMA copy)."""

    config: EncoderConfig
    query_encoder: EncoderParams
    key_encoder: EncoderParams


def _kaiming_uniform(rng, fan_in, fan_out):
    bound = np.sqrt(6.0 / fan_in)
    return rng.uniform(-bound, bound, size=(fan_in, fan_out))


def init_params(config: EncoderConfig, rng) -> EncoderParams:
    """Kaiming-uniform (fan-in) weights, zero biases, fixed by the rng stream."""
    bw, bb, hw, hb = [], [], [], []
    dims = config.base_layer_dims()
    for i in range(len(dims) - 1):
        bw.append(_kaiming_uniform(rng, dims[i], dims[i + 1]))
        bb.append(np.zeros(dims[i + 1]))
    dims = config.head_layer_dims()
    for i in range(len(dims) - 1):
        hw.append(_kaiming_uniform(rng, dims[i], dims[i + 1]))
        hb.append(np.zeros(dims[i + 1]))
    return EncoderParams(bw, bb, hw, hb)


def init_pair(config: EncoderConfig, rng) -> EncoderPair:
    """Fresh pair; the key encoder starts as an exact copy of the query encoder."""
    query = init_params(config, rng)
    return EncoderPair(config=config, query_encoder=query, key_encoder=query.copy())


def _as_batch(x, dim, what):
    x = np.asarray(x, dtype=np.float64)
    single = x.ndim == 1
    if single:
        x = x[None, :]
    if x.ndim != 2 or x.shape[1] != dim:
        raise ShapeMismatchError(f"{what} must have {dim} columns, got shape {x.shape}")
    return x, single


def forward_base(params: EncoderParams, x):
    """Learned representation: the affine->ReLU base stack applied to ``x``.

    Accepts a single vector or a (n, input_dim) batch; returns matching shape.
    """
    a, single = _as_batch(x, params.base_weights[0].shape[0], "input")
    for w, b in zip(params.base_weights, params.base_biases):
        a = np.maximum(a @ w + b, 0.0)
    return a[0] if single else a


def forward_head(params: EncoderParams, repr_vec):
    """Unit-norm contrastive-space embedding from a learned representation."""
    a, single = _as_batch(repr_vec, params.head_weights[0].shape[0], "representation")
    h = np.maximum(a @ params.head_weights[0] + params.head_biases[0], 0.0)
    h = h @ params.head_weights[1] + params.head_biases[1]
    norms = np.linalg.norm(h, axis=1)
    if np.any(norms <= ZERO_NORM_TOL):
        raise ZeroVectorError("head output norm is at or below the zero tolerance")
    u = h / norms[:, None]
    return u[0] if single else u


def embed(params: EncoderParams, x):
    """Full chain input -> base -> head -> unit embedding."""
    return forward_head(params, forward_base(params, x))


@dataclass
class ForwardCache:
    """Intermediate activations of one batched forward pass, kept for backward."""

    x: np.ndarray
    base_zs: list
    base_as: list
    head_z1: np.ndarray
    head_a1: np.ndarray
    head_out: np.ndarray
    norms: np.ndarray
    embeddings: np.ndarray

    @property
    def representations(self):
        return self.base_as[-1]


def forward_cached(params: EncoderParams, x) -> ForwardCache:
    """Batched forward pass retaining every pre-activation for backprop."""
    a, _ = _as_batch(x, params.base_weights[0].shape[0], "input")
    x0 = a
    base_zs, base_as = [], []
    for w, b in zip(params.base_weights, params.base_biases):
        z = a @ w + b
        a = np.maximum(z, 0.0)
        base_zs.append(z)
        base_as.append(a)
    z1 = a @ params.head_weights[0] + params.head_biases[0]
    a1 = np.maximum(z1, 0.0)
    h = a1 @ params.head_weights[1] + params.head_biases[1]
    norms = np.linalg.norm(h, axis=1)
    if np.any(norms <= ZERO_NORM_TOL):
        raise ZeroVectorError("head output norm is at or below the zero tolerance")
    u = h / norms[:, None]
    return ForwardCache(x=x0, base_zs=base_zs, base_as=base_as,
                        head_z1=z1, head_a1=a1, head_out=h, norms=norms,
                        embeddings=u)


def normalization_backward(cache: ForwardCache, grad_embedding):
    """Pull an embedding gradient back through u = h/||h||.

    Returns dL/dh = (g - u (u.g)) / ||h|| row-wise; the result is orthogonal
    to the embedding direction.
    """
    g, single = _as_batch(grad_embedding, cache.embeddings.shape[1], "embedding gradient")
    u = cache.embeddings
    proj = np.sum(u * g, axis=1, keepdims=True)
    gh = (g - u * proj) / cache.norms[:, None]
    return gh[0] if single else gh


def backward_batch(params: EncoderParams, cache: ForwardCache, grad_embeddings) -> EncoderParams:
    """Parameter gradients summed over the batch rows.

    ``grad_embeddings`` holds dL/du per row; the chain runs through the
    normalization Jacobian, the head, and the base stack. The caller divides
    by the batch size when a mean-loss gradient is wanted.
    """
    g, _ = _as_batch(grad_embeddings, cache.embeddings.shape[1], "embedding gradient")
    if g.shape[0] != cache.x.shape[0]:
        raise ShapeMismatchError("gradient batch size does not match forward batch size")
    gh = normalization_backward(cache, g)

    gw_h2 = cache.head_a1.T @ gh
    gb_h2 = gh.sum(axis=0)
    gz1 = (gh @ params.head_weights[1].T) * (cache.head_z1 > 0.0)
    r = cache.base_as[-1]
    gw_h1 = r.T @ gz1
    gb_h1 = gz1.sum(axis=0)
    ga = gz1 @ params.head_weights[0].T

    grads_w = [None] * len(params.base_weights)
    grads_b = [None] * len(params.base_biases)
    inputs = [cache.x] + cache.base_as[:-1]
    for layer in reversed(range(len(params.base_weights))):
        gz = ga * (cache.base_zs[layer] > 0.0)
        grads_w[layer] = inputs[layer].T @ gz
        grads_b[layer] = gz.sum(axis=0)
        ga = gz @ params.base_weights[layer].T
    return EncoderParams(grads_w, grads_b, [gw_h1, gw_h2], [gb_h1, gb_h2])


def backward(params: EncoderParams, x, grad_embedding) -> EncoderParams:
    """Gradients for all parameters from one input and one embedding gradient."""
    cache = forward_cached(params, np.atleast_2d(np.asarray(x, dtype=np.float64)))
    g = np.asarray(grad_embedding, dtype=np.float64)
    if g.ndim != 1 or g.size != cache.embeddings.shape[1]:
        raise ShapeMismatchError(f"upstream gradient must have {cache.embeddings.shape[1]} entries")
    return backward_batch(params, cache, g[None, :])


def ema_update(pair: EncoderPair, m: float = None) -> EncoderParams:
    """Move every key parameter toward the query parameter: k <- m*k + (1-m)*q.

    ``m`` defaults to the pair's configured momentum coefficient. The key
    encoder is updated in place and returned.
    """
    if m is None:
        m = pair.config.momentum_coeff
    if not 0.0 <= m < 1.0:
        raise ValueError(f"momentum coefficient must lie in [0, 1), got {m}")
    for k, q in zip(pair.key_encoder.flat(), pair.query_encoder.flat()):
        k *= m
        k += (1.0 - m) * q
    return pair.key_encoder


def validate_params(config: EncoderConfig, params: EncoderParams):
    """Check shapes against the config and finiteness of every array."""
    dims = config.base_layer_dims()
    expect = [(dims[i], dims[i + 1]) for i in range(len(dims) - 1)]
    got = [w.shape for w in params.base_weights]
    if expect != got:
        raise ShapeMismatchError(f"base weight shapes {got} do not match config {expect}")
    dims = config.head_layer_dims()
    expect = [(dims[i], dims[i + 1]) for i in range(len(dims) - 1)]
    got = [w.shape for w in params.head_weights]
    if expect != got:
        raise ShapeMismatchError(f"head weight shapes {got} do not match config {expect}")
    for arr in params.flat():
        check_finite(arr, "encoder parameter")
    return params
