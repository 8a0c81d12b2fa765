"""
The joint objective for one minibatch B:

    total = l + w(t) * l'
    l  = -(1/|B|) * sum over labeled i of log(softmax(z_i)[y_i] + 1e-12)
    l' = (1/(C|B|)) * sum over all i of ||z_i - z'_i||^2

The supervised term is normalised by the full batch size, labeled or not.
"""
import math
from dataclasses import dataclass

from nn_layers import LayerShapeError, gather, log, softmax
from tensor_core import Tensor, add, scale, square, sub, total

LOG_CLAMP = 1e-12


@dataclass
class LossBreakdown:
    supervised: float  # l
    unsupervised: float  # l'
    weight: float  # w(t)
    total: float
    objective: Tensor = None  # recorded total, seeds backward

    def as_record(self):
        return {'l': self.supervised, 'l_prime': self.unsupervised, 'w': self.weight, 'total': self.total}


@dataclass(frozen=True)
class RampSchedule:
    w_max: float = 1.0
    t_ramp: float = 80

    def __post_init__(self):
        if self.t_ramp <= 0:
            raise ValueError(f"t_ramp must be positive, got {self.t_ramp}")
        if self.w_max < 0:
            raise ValueError(f"w_max must be non-negative, got {self.w_max}")


def supervised_loss(z, labels):
    batch, classes = z.shape
    if len(labels) != batch:
        raise LayerShapeError(f"{len(labels)} labels for a batch of {batch}")
    rows = [i for i, label in enumerate(labels) if label is not None]
    cols = [labels[i] for i in rows]
    for label in cols:
        if not 0 <= label < classes:
            raise ValueError(f"label {label} outside [0, {classes})")
    if not rows:
        return Tensor(0.0)
    picked = gather(softmax(z), rows, cols)
    return scale(total(log(picked, LOG_CLAMP)), -1.0 / batch)


def consistency_loss(z, z_prime):
    if z.shape != z_prime.shape:
        raise LayerShapeError(f"z {z.shape} and z' {z_prime.shape} differ in shape")
    batch, classes = z.shape
    return scale(total(square(sub(z, z_prime))), 1.0 / (classes * batch))


def ramp_weight(t, schedule):
    """w(t) = w_max * exp(-5 * (1 - min(t, T)/T)^2)."""
    if t < 0:
        raise ValueError(f"epoch index must be non-negative, got {t}")
    if schedule.t_ramp <= 0:
        raise ValueError(f"t_ramp must be positive, got {schedule.t_ramp}")
    phase = 1.0 - min(t, schedule.t_ramp) / schedule.t_ramp
    return schedule.w_max * math.exp(-5.0 * phase * phase)


def total_loss(z, z_prime, labels, t, schedule):
    weight = ramp_weight(t, schedule)
    l = supervised_loss(z, labels)
    l_prime = consistency_loss(z, z_prime)
    objective = add(l, scale(l_prime, weight))
    return LossBreakdown(supervised=l.item(), unsupervised=l_prime.item(), weight=weight,
                         total=objective.item(), objective=objective)
