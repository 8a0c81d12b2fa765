"""
Layer primitives of the two-path CNN.

Each layer accepts a single sample (``C x H x W`` / ``in_dim`` / ``C``) or a
batch with a leading sample axis. Convolutions use zero "same" padding with a
3x3 kernel and stride 1; pooling uses non-overlapping 2x2 windows.
"""
from dataclasses import dataclass

import numpy as np

from tensor_core import NonFiniteValueError, Tensor, mul, register_primitive, reshape


class LayerShapeError(ValueError):
    pass


@dataclass
class ConvParams:
    filters: Tensor  # out_channels x in_channels x 3 x 3
    biases: Tensor  # out_channels

    def __post_init__(self):
        shape = self.filters.shape
        if len(shape) != 4 or shape[2:] != (3, 3):
            raise LayerShapeError(f"conv filters must be out x in x 3 x 3, got {shape}")
        if self.biases.shape != (shape[0],):
            raise LayerShapeError(f"conv biases must have shape ({shape[0]},), got {self.biases.shape}")

    @property
    def out_channels(self):
        return self.filters.shape[0]

    @property
    def in_channels(self):
        return self.filters.shape[1]


@dataclass
class DenseParams:
    weights: Tensor  # out_dim x in_dim
    biases: Tensor  # out_dim

    def __post_init__(self):
        shape = self.weights.shape
        if len(shape) != 2 or shape[0] < 1:
            raise LayerShapeError(f"dense weights must be out x in with out >= 1, got {shape}")
        if self.biases.shape != (shape[0],):
            raise LayerShapeError(f"dense biases must have shape ({shape[0]},), got {self.biases.shape}")


def _as_batch(values, sample_ndim):
    if values.ndim == sample_ndim:
        return values[None], True
    if values.ndim == sample_ndim + 1:
        return values, False
    raise LayerShapeError(f"expected {sample_ndim}-d sample or {sample_ndim + 1}-d batch, got shape {values.shape}")


# ------------------------------------------------------------------------------
# Convolution
# ------------------------------------------------------------------------------

def conv2d(x, params):
    if x.values.ndim not in (3, 4):
        raise LayerShapeError(f"conv2d expects C x H x W or N x C x H x W, got {x.shape}")
    channels = x.shape[-3]
    if channels != params.in_channels:
        raise LayerShapeError(f"conv2d input has {channels} channels, filters expect {params.in_channels}")
    return _conv2d(x, params.filters, params.biases)


@register_primitive('conv2d')
def _conv2d(x, filters, biases):
    xv, single = _as_batch(x.values, 3)
    n, _, h, w = xv.shape
    wv = filters.values
    padded = np.pad(xv, ((0, 0), (0, 0), (1, 1), (1, 1)))

    out = np.zeros((n, wv.shape[0], h, w))
    for i in range(3):
        for j in range(3):
            window = padded[:, :, i:i + h, j:j + w]
            out += np.tensordot(window, wv[:, :, i, j], axes=([1], [1])).transpose(0, 3, 1, 2)
    out += biases.values[None, :, None, None]

    def rule(g):
        g4 = g[None] if single else g
        grad_padded = np.zeros_like(padded)
        grad_filters = np.empty_like(wv)
        for i in range(3):
            for j in range(3):
                window = padded[:, :, i:i + h, j:j + w]
                grad_filters[:, :, i, j] = np.tensordot(g4, window, axes=([0, 2, 3], [0, 2, 3]))
                grad_padded[:, :, i:i + h, j:j + w] += np.tensordot(
                    g4, wv[:, :, i, j], axes=([1], [0])).transpose(0, 3, 1, 2)
        grad_x = grad_padded[:, :, 1:h + 1, 1:w + 1]
        return (grad_x[0] if single else grad_x), grad_filters, g4.sum(axis=(0, 2, 3))

    return (out[0] if single else out), rule


# ------------------------------------------------------------------------------
# Pooling and activation
# ------------------------------------------------------------------------------

@register_primitive('maxpool2')
def maxpool2(x):
    xv, single = _as_batch(x.values, 3)
    n, c, h, w = xv.shape
    if h < 2 or w < 2:
        raise LayerShapeError(f"maxpool2 needs H >= 2 and W >= 2, got {h} x {w}")
    ho, wo = h // 2, w // 2
    # window entries ordered (0,0), (0,1), (1,0), (1,1): argmax keeps the first in scan order
    windows = xv[:, :, :2 * ho, :2 * wo].reshape(n, c, ho, 2, wo, 2).transpose(0, 1, 2, 4, 3, 5)
    windows = windows.reshape(n, c, ho, wo, 4)
    winners = windows.argmax(axis=-1)[..., None]
    out = np.take_along_axis(windows, winners, axis=-1)[..., 0]

    def rule(g):
        g4 = g[None] if single else g
        routed = np.zeros((n, c, ho, wo, 4))
        np.put_along_axis(routed, winners, g4[..., None], axis=-1)
        grad = np.zeros((n, c, h, w))
        grad[:, :, :2 * ho, :2 * wo] = routed.reshape(n, c, ho, wo, 2, 2).transpose(0, 1, 2, 4, 3, 5).reshape(
            n, c, 2 * ho, 2 * wo)
        return (grad[0] if single else grad),

    return (out[0] if single else out), rule


@register_primitive('relu')
def relu(x):
    active = x.values > 0
    return np.where(active, x.values, 0.0), lambda g: (g * active,)


def dropout(x, rate, mask_source, training):
    """Inverted dropout; the sampled mask enters the graph as a constant leaf."""
    if not 0 <= rate < 1:
        raise ValueError(f"dropout rate must lie in [0, 1), got {rate}")
    if not training or rate == 0:
        return x
    rng = np.random.default_rng(mask_source)
    keep = 1.0 - rate
    mask = Tensor((rng.random(x.shape) < keep) / keep, name='dropout.mask')
    return mul(x, mask)


# ------------------------------------------------------------------------------
# Dense head and probabilities
# ------------------------------------------------------------------------------

def dense(x, params):
    in_dim = params.weights.shape[1]
    if x.values.ndim not in (1, 2) or x.shape[-1] != in_dim:
        raise LayerShapeError(f"dense expects trailing dimension {in_dim}, got input {x.shape}")
    return _dense(x, params.weights, params.biases)


@register_primitive('dense')
def _dense(x, weights, biases):
    xv, single = _as_batch(x.values, 1)
    wv = weights.values
    out = xv @ wv.T + biases.values

    def rule(g):
        g2 = g[None] if single else g
        grad_x = g2 @ wv
        return (grad_x[0] if single else grad_x), g2.T @ xv, g2.sum(axis=0)

    return (out[0] if single else out), rule


@register_primitive('softmax')
def softmax(z):
    zv = z.values
    if zv.ndim not in (1, 2) or zv.shape[-1] < 2:
        raise LayerShapeError(f"softmax needs at least 2 classes on the last axis, got {z.shape}")
    if not np.all(np.isfinite(zv)):
        raise NonFiniteValueError("softmax received non-finite logits")
    shifted = np.exp(zv - zv.max(axis=-1, keepdims=True))
    probs = shifted / shifted.sum(axis=-1, keepdims=True)

    def rule(g):
        return probs * (g - (g * probs).sum(axis=-1, keepdims=True)),

    return probs, rule


@register_primitive('log')
def log(x, eps=0.0):
    shifted = x.values + eps
    return np.log(shifted), lambda g: (g / shifted,)


@register_primitive('gather')
def gather(z, rows, cols):
    """Pick ``z[rows[k], cols[k]]`` into a vector."""
    rows = np.asarray(rows, dtype=np.intp)
    cols = np.asarray(cols, dtype=np.intp)
    shape = z.shape

    def rule(g):
        grad = np.zeros(shape)
        np.add.at(grad, (rows, cols), g)
        return grad,

    return z.values[rows, cols], rule


def flatten(x):
    return reshape(x, (x.shape[0], -1))
