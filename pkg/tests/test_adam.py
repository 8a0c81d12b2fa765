import numpy as np
import pytest
from numpy.testing import assert_array_equal

from adam import AdamState, NonFiniteGradientError, adam_step
from tensor_core import Tensor


class Params:
    def __init__(self, **tensors):
        self.tensors = {name: Tensor(values, trainable=True, name=name) for name, values in tensors.items()}

    def named_tensors(self):
        return iter(self.tensors.items())


def test_first_step_is_bias_corrected():
    params = Params(w=[0.5])
    state = AdamState.create(params, lr=0.001, beta1=0.9, beta2=0.999, epsilon=1e-8)
    adam_step(params, {'w': np.array([1.0])}, state)
    delta = params.tensors['w'].values[0] - 0.5
    assert delta == pytest.approx(-0.001 / (1.0 + 1e-8), rel=1e-9)
    assert state.k == 1


def test_zero_gradient_leaves_parameters():
    params = Params(w=[[1.0, -2.0]], b=[0.3])
    state = AdamState.create(params)
    adam_step(params, {'w': np.zeros((1, 2)), 'b': np.zeros(1)}, state)
    assert_array_equal(params.tensors['w'].values, [[1.0, -2.0]])
    assert_array_equal(params.tensors['b'].values, [0.3])


def test_identical_tensors_get_identical_updates():
    params = Params(a=[0.1, 0.2], b=[0.1, 0.2])
    state = AdamState.create(params)
    g = np.array([0.7, -1.3])
    for _ in range(5):
        adam_step(params, {'a': g, 'b': g.copy()}, state)
    assert_array_equal(params.tensors['a'].values, params.tensors['b'].values)


def test_non_finite_gradient_aborts_before_any_update():
    params = Params(a=[1.0], b=[2.0])
    state = AdamState.create(params)
    with pytest.raises(NonFiniteGradientError):
        adam_step(params, {'a': np.array([0.5]), 'b': np.array([np.nan])}, state)
    assert params.tensors['a'].values[0] == 1.0
    assert state.k == 0


def test_missing_or_misshaped_gradient():
    params = Params(a=[1.0, 2.0])
    state = AdamState.create(params)
    with pytest.raises(KeyError):
        adam_step(params, {}, state)
    with pytest.raises(ValueError):
        adam_step(params, {'a': np.zeros(3)}, state)
