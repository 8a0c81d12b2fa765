"""
Finite-difference verification of every registered primitive and of the
full training objective on a tiny two-path network.

Inputs are drawn from [-1, 1], several draws per primitive. ReLU inputs are
kept at least 0.1 away from zero and pooling inputs are distinct, so no step
crosses a kink or a tie. The tiny network gets small positive biases so no
channel feeds exact zeros into the next convolution.
"""
import logging
from dataclasses import dataclass, field

import numpy as np

from dtsl_network import TRAINING, ArchitectureSpec, forward_two_path, init_network
from nn_layers import dropout
from objective import RampSchedule, total_loss
from tensor_core import Tensor, backward, finite_difference_gradient, primitive, record, registered_primitives, \
    relative_error

logger = logging.getLogger(__name__)

TOLERANCE = 1e-5
STEP = 1e-5
DRAWS = 10  # random draws per primitive
BIAS_RANGE = (0.05, 0.2)
# tiny filter plan for the full-objective check
TINY_SHARED = (2, 2, 2, 3, 3, 3)
TINY_PATH = (4, 3, 2)


class GradcheckFailure(RuntimeError):
    def __init__(self, offenders):
        names = ', '.join(f"{result.name} ({result.max_error:.3g})" for result in offenders)
        super().__init__(f"gradient check failed for: {names}")
        self.offenders = offenders


@dataclass
class ComponentResult:
    name: str
    max_error: float
    checked: int  # perturbed coordinates
    note: str = ''


@dataclass
class GradcheckReport:
    tolerance: float
    results: list = field(default_factory=list)

    @property
    def offenders(self):
        return [result for result in self.results if not result.max_error <= self.tolerance]

    @property
    def passed(self):
        return not self.offenders

    def render(self):
        lines = []
        for result in self.results:
            status = 'ok' if result.max_error <= self.tolerance else 'FAIL'
            note = f"  ({result.note})" if result.note else ''
            lines.append(f"{result.name:<10} max rel err {result.max_error:.3e}  {result.checked:>5} coords  "
                         f"{status}{note}")
        lines.append(f"tolerance {self.tolerance:.0e}: {'passed' if self.passed else 'FAILED'}")
        return '\n'.join(lines) + '\n'


def _leaf(rng, shape, name, low=-1.0, high=1.0):
    return Tensor(rng.uniform(low, high, size=shape), trainable=True, name=name)


def _away_from_zero(rng, shape, name, margin=0.1):
    magnitude = rng.uniform(margin, 1.0, size=shape)
    return Tensor(magnitude * rng.choice([-1.0, 1.0], size=shape), trainable=True, name=name)


def _distinct(rng, shape, name):
    # spacing far above the finite-difference step keeps window maxima unique
    values = np.linspace(-1.0, 1.0, int(np.prod(shape)))
    return Tensor(rng.permutation(values).reshape(shape), trainable=True, name=name)


def _numeric(objective, leaf, h):
    original = leaf.values

    def perturbed(candidate):
        leaf.values = candidate.values
        return objective()

    try:
        return finite_difference_gradient(perturbed, Tensor(original), h)
    finally:
        leaf.values = original


def check_component(name, objective, leaves, h=STEP, note=''):
    """Compare ``backward`` against central differences for each leaf of a scalar ``objective``."""
    _, graph = record(objective)
    analytic = backward(graph)
    errors, checked = [0.0], 0
    for leaf in leaves:
        numeric = _numeric(objective, leaf, h)
        errors.append(relative_error(analytic[leaf.name], numeric))
        checked += leaf.size
    worst = float(np.max(errors))  # NaN propagates
    logger.debug(f"[GRADCHECK] {name}: {worst:.3e} over {checked} coordinates")
    return ComponentResult(name, worst, checked, note)


def _projected(rng, build):
    """Scalar objective sum(build() * R) for a fixed random R."""
    weights = {}

    def objective():
        out = build()
        if 'r' not in weights:
            weights['r'] = Tensor(rng.uniform(-1.0, 1.0, size=out.shape))
        return primitive('total')(primitive('mul')(out, weights['r']))

    return objective


def _layer_cases(rng):
    op = primitive
    cases = []

    x = _leaf(rng, (2, 2, 4, 4), 'x')
    filters, biases = _leaf(rng, (3, 2, 3, 3), 'filters'), _leaf(rng, (3,), 'biases')
    cases.append(('conv2d', lambda: op('conv2d')(x, filters, biases), (x, filters, biases), ''))

    pooled = _distinct(rng, (2, 3, 4, 5), 'x')
    cases.append(('maxpool2', lambda: op('maxpool2')(pooled), (pooled,), 'distinct inputs, no ties'))

    kinked = _away_from_zero(rng, (3, 7), 'x')
    cases.append(('relu', lambda: op('relu')(kinked), (kinked,), 'checked away from the kink, |x| >= 0.1'))

    features = _leaf(rng, (4, 6), 'x')
    weights, bias = _leaf(rng, (3, 6), 'weights'), _leaf(rng, (3,), 'biases')
    cases.append(('dense', lambda: op('dense')(features, weights, bias), (features, weights, bias), ''))

    logits = _leaf(rng, (4, 3), 'z')
    cases.append(('softmax', lambda: op('softmax')(logits), (logits,), ''))

    positive = _leaf(rng, (5,), 'x', 0.5, 1.5)
    cases.append(('log', lambda: op('log')(positive, 1e-12), (positive,), 'inputs in [0.5, 1.5]'))

    table = _leaf(rng, (4, 3), 'z')
    cases.append(('gather', lambda: op('gather')(table, [0, 2, 3, 2], [1, 0, 2, 0]), (table,), ''))

    a, b = _leaf(rng, (3, 4), 'a'), _leaf(rng, (3, 4), 'b')
    cases.append(('identity', lambda: op('identity')(a), (a,), ''))
    cases.append(('add', lambda: op('add')(a, b), (a, b), ''))
    cases.append(('sub', lambda: op('sub')(a, b), (a, b), ''))
    cases.append(('mul', lambda: op('mul')(a, b), (a, b), ''))
    cases.append(('scale', lambda: op('scale')(a, -1.7), (a,), ''))
    cases.append(('square', lambda: op('square')(a), (a,), ''))
    cases.append(('total', lambda: op('total')(a), (a,), ''))
    cases.append(('reshape', lambda: op('reshape')(a, (2, 6)), (a,), ''))

    dropped = _leaf(rng, (4, 6), 'x')
    cases.append(('dropout', lambda: dropout(dropped, 0.5, [7, 0], True), (dropped,), 'fixed mask'))
    return cases


def _loss_case(seed):
    arch = ArchitectureSpec(8, 8, 2, TINY_SHARED, TINY_PATH).validate()
    params = init_network(arch, seed)
    rng = np.random.default_rng(seed + 1)
    for name, tensor in params.named_tensors():
        if name.endswith('.biases'):
            tensor.values = rng.uniform(*BIAS_RANGE, size=tensor.shape)
    batch = Tensor(rng.uniform(-1.0, 1.0, size=(3, 1, 8, 8)))
    labels = (1, None, 0)
    schedule = RampSchedule(w_max=1.0, t_ramp=4)

    def objective():
        output = forward_two_path(batch, params, TRAINING, seed=(seed, 1, 0), dropout_rate=0.5)
        return total_loss(output.z, output.z_prime, labels, 2, schedule).objective

    return objective, [tensor for _, tensor in params.named_tensors()]


def run_gradcheck(seed=0, tolerance=TOLERANCE, h=STEP, draws=DRAWS):
    rng = np.random.default_rng(seed)
    report = GradcheckReport(tolerance)
    merged = {}
    for _ in range(draws):
        for name, build, leaves, note in _layer_cases(rng):
            objective = _projected(rng, build) if name != 'total' else build
            result = check_component(name, objective, leaves, h, note)
            if name not in merged:
                merged[name] = result
                continue
            merged[name].max_error = float(np.max([merged[name].max_error, result.max_error]))
            merged[name].checked += result.checked
    report.results.extend(merged.values())

    objective, leaves = _loss_case(seed)
    report.results.append(check_component('loss', objective, leaves, h, 'tiny two-path network, L = D = 8, C = 2'))

    missing = sorted(set(registered_primitives()) - {result.name for result in report.results})
    if missing:
        logger.warning(f"[GRADCHECK] primitives without a check: {', '.join(missing)}")
    for result in report.results:
        logger.info(f"[GRADCHECK] {result.name}: max relative error {result.max_error:.3e}")
    return report


def assert_passed(report):
    if not report.passed:
        raise GradcheckFailure(report.offenders)
    return report
