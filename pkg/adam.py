"""Adam over every trainable tensor of the shared, supervised and unsupervised sets."""
from dataclasses import dataclass, field

import numpy as np


class NonFiniteGradientError(RuntimeError):
    pass


@dataclass
class AdamState:
    lr: float = 0.001
    beta1: float = 0.9
    beta2: float = 0.999
    epsilon: float = 1e-8
    k: int = 0  # completed steps
    m: dict = field(default_factory=dict)  # first moments by tensor name
    v: dict = field(default_factory=dict)  # second moments by tensor name

    @classmethod
    def create(cls, params, lr=0.001, beta1=0.9, beta2=0.999, epsilon=1e-8):
        named = list(params.named_tensors())
        return cls(lr=lr, beta1=beta1, beta2=beta2, epsilon=epsilon, k=0,
                   m={name: np.zeros(tensor.shape) for name, tensor in named},
                   v={name: np.zeros(tensor.shape) for name, tensor in named})

    @classmethod
    def from_config(cls, params, config):
        return cls.create(params, lr=config.lr, beta1=config.beta1, beta2=config.beta2, epsilon=config.epsilon)


def adam_step(params, grads, state):
    """One bias-corrected Adam update, applied in place; returns ``(params, state)``."""
    named = list(params.named_tensors())
    for name, tensor in named:
        g = grads.get(name)
        if g is None:
            raise KeyError(f"no gradient for tensor '{name}'")
        if g.shape != tensor.shape:
            raise ValueError(f"gradient for '{name}' has shape {g.shape}, tensor has {tensor.shape}")
        if not np.all(np.isfinite(g)):
            raise NonFiniteGradientError(f"non-finite gradient for tensor '{name}'")

    state.k += 1
    bc1 = 1.0 - state.beta1 ** state.k
    bc2 = 1.0 - state.beta2 ** state.k
    for name, tensor in named:
        g = grads[name]
        m = state.m.setdefault(name, np.zeros(tensor.shape))
        v = state.v.setdefault(name, np.zeros(tensor.shape))
        m *= state.beta1
        m += (1.0 - state.beta1) * g
        v *= state.beta2
        v += (1.0 - state.beta2) * (g * g)
        m_hat = m / bc1
        v_hat = v / bc2
        tensor.values -= state.lr * m_hat / (np.sqrt(v_hat) + state.epsilon)
    return params, state
