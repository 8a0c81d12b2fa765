"""
Dense float64 tensors with a tape-based reverse-mode differentiation engine.

Every differentiable operation is a registered primitive: a forward function
returning ``(values, backward_rule)`` where the rule maps the output gradient
to one gradient per tensor operand (``None`` for operands without one).
While a graph is recording, each primitive call appends an entry to it, so
the tape is in topological order by construction.
"""
import functools
import itertools
import math
import threading
from dataclasses import dataclass

import numpy as np

_serials = itertools.count()
_local = threading.local()
_registry = {}


class UnsupportedOperationError(TypeError):
    pass


class GraphShapeError(ValueError):
    pass


class NonFiniteValueError(ValueError):
    pass


class Tensor:
    __slots__ = ('values', 'grad', 'trainable', 'name', 'serial')

    def __init__(self, values, trainable=False, name=None):
        self.values = np.array(values, dtype=np.float64)
        self.grad = None
        self.trainable = trainable
        self.name = name
        self.serial = next(_serials)

    @property
    def shape(self):
        return self.values.shape

    @property
    def size(self):
        return self.values.size

    def item(self):
        if self.values.size != 1:
            raise ValueError(f"tensor of shape {self.shape} is not a scalar")
        return float(self.values.reshape(-1)[0])

    def __array_ufunc__(self, ufunc, method, *inputs, **kwargs):
        raise UnsupportedOperationError(
            f"numpy ufunc '{ufunc.__name__}' applied to a Tensor; use a registered primitive")

    def __add__(self, other):
        return add(self, other)

    def __sub__(self, other):
        return sub(self, other)

    def __mul__(self, other):
        if isinstance(other, Tensor):
            return mul(self, other)
        return scale(self, other)

    __rmul__ = __mul__

    def __neg__(self):
        return scale(self, -1.0)

    def __repr__(self):
        label = f" '{self.name}'" if self.name else ""
        return f"Tensor{label}(shape={self.shape}, trainable={self.trainable})"


@dataclass
class GraphEntry:
    op: str
    inputs: tuple
    output: Tensor
    rule: object


class DiffGraph:
    """Ordered record of the primitive calls made while recording."""

    def __init__(self):
        self.entries = []
        self.outputs = ()
        self.start_serial = next(_serials)
        self._produced = set()

    def append(self, op, inputs, output, rule):
        self.entries.append(GraphEntry(op, inputs, output, rule))
        self._produced.add(id(output))

    def produced(self, tensor):
        return id(tensor) in self._produced

    def leaves(self):
        seen, leaves = set(), []
        for entry in self.entries:
            for tensor in entry.inputs:
                if id(tensor) not in self._produced and id(tensor) not in seen:
                    seen.add(id(tensor))
                    leaves.append(tensor)
        return leaves

    @property
    def output(self):
        if len(self.outputs) != 1:
            raise GraphShapeError(f"graph has {len(self.outputs)} outputs; pass the output to differentiate")
        return self.outputs[0]

    def __len__(self):
        return len(self.entries)


def current_graph():
    stack = getattr(_local, 'stack', None)
    return stack[-1] if stack else None


def register_primitive(name):
    def decorate(forward):
        @functools.wraps(forward)
        def apply(*args, **kwargs):
            values, rule = forward(*args, **kwargs)
            out = Tensor(values)
            graph = current_graph()
            if graph is not None:
                operands = tuple(arg for arg in args if isinstance(arg, Tensor))
                graph.append(name, operands, out, rule)
            return out

        apply.primitive_name = name
        _registry[name] = apply
        return apply

    return decorate


def primitive(name):
    try:
        return _registry[name]
    except KeyError:
        raise UnsupportedOperationError(f"no primitive registered under '{name}'") from None


def registered_primitives():
    return sorted(_registry)


def record(f, *args, **kwargs):
    """Run ``f`` while recording; returns ``(outputs, graph)``."""
    graph = DiffGraph()
    stack = getattr(_local, 'stack', None)
    if stack is None:
        stack = _local.stack = []
    stack.append(graph)
    try:
        outputs = f(*args, **kwargs)
        single = isinstance(outputs, Tensor)
        if not single and not isinstance(outputs, (tuple, list)):
            raise UnsupportedOperationError(f"recorded function returned {type(outputs).__name__}, not a Tensor")
        results = []
        for out in ((outputs,) if single else tuple(outputs)):
            if not isinstance(out, Tensor):
                raise UnsupportedOperationError(f"recorded function returned {type(out).__name__}, not a Tensor")
            if not graph.produced(out):
                if out.serial > graph.start_serial:
                    raise UnsupportedOperationError(
                        "output was created while recording but not by a registered primitive")
                out = identity(out)
            results.append(out)
    finally:
        stack.pop()
    graph.outputs = tuple(results)
    return (results[0] if single else tuple(results)), graph


def backward(graph, seed=None, output=None):
    """Propagate ``seed`` from the graph output back to every leaf.

    Returns a dict of gradients for the trainable leaves keyed by tensor name
    and sets ``.grad`` on each of them.
    """
    output = graph.output if output is None else output
    if seed is None:
        seed_values = np.ones(output.shape)
    else:
        seed_values = seed.values if isinstance(seed, Tensor) else np.asarray(seed, dtype=np.float64)
    if seed_values.shape != output.shape:
        raise GraphShapeError(f"seed shape {seed_values.shape} does not match output shape {output.shape}")

    grads = {id(output): seed_values}
    for index in range(len(graph.entries) - 1, -1, -1):
        entry = graph.entries[index]
        upstream = grads.pop(id(entry.output), None)
        if upstream is None:
            continue
        parts = entry.rule(upstream)
        if len(parts) != len(entry.inputs):
            raise GraphShapeError(f"entry {index} ({entry.op}) returned {len(parts)} gradients "
                                  f"for {len(entry.inputs)} operands")
        for operand, part in zip(entry.inputs, parts):
            if part is None:
                continue
            if part.shape != operand.shape:
                raise GraphShapeError(f"entry {index} ({entry.op}) produced gradient of shape {part.shape} "
                                      f"for operand of shape {operand.shape}")
            key = id(operand)
            grads[key] = grads[key] + part if key in grads else part

    result = {}
    for position, leaf in enumerate(graph.leaves()):
        if not leaf.trainable:
            continue
        leaf.grad = grads.get(id(leaf), np.zeros(leaf.shape))
        result[leaf.name or f"leaf{position}"] = leaf.grad
    return result


def finite_difference_gradient(f, x, h=1e-5):
    """Central differences of a scalar function ``f`` around ``x``."""
    if not h > 0:
        raise ValueError(f"step must be positive, got {h}")
    base = x.values.reshape(-1)
    out = np.empty_like(base)
    for i in range(base.size):
        shifted = base.copy()
        shifted[i] = base[i] + h
        forward = _scalar(f(Tensor(shifted.reshape(x.shape))))
        shifted[i] = base[i] - h
        back = _scalar(f(Tensor(shifted.reshape(x.shape))))
        out[i] = (forward - back) / (2.0 * h)
    return Tensor(out.reshape(x.shape))


def _scalar(value):
    value = value.item() if isinstance(value, Tensor) else float(value)
    if not math.isfinite(value):
        raise NonFiniteValueError(f"function value is not finite: {value}")
    return value


def relative_error(a, b, floor=1e-3):
    # entries smaller than floor are compared absolutely
    a = a.values if isinstance(a, Tensor) else np.asarray(a, dtype=np.float64)
    b = b.values if isinstance(b, Tensor) else np.asarray(b, dtype=np.float64)
    if a.size == 0:
        return 0.0
    magnitude = np.maximum(np.maximum(np.abs(a), np.abs(b)), floor)
    return float(np.max(np.abs(a - b) / magnitude))


# ------------------------------------------------------------------------------
# Shape arithmetic and elementwise primitives
# ------------------------------------------------------------------------------

def _same_shape(op, a, b):
    if a.shape != b.shape:
        raise GraphShapeError(f"{op}: shapes {a.shape} and {b.shape} differ")


@register_primitive('identity')
def identity(x):
    return x.values.copy(), lambda g: (g,)


@register_primitive('add')
def add(a, b):
    _same_shape('add', a, b)
    return a.values + b.values, lambda g: (g, g)


@register_primitive('sub')
def sub(a, b):
    _same_shape('sub', a, b)
    return a.values - b.values, lambda g: (g, -g)


@register_primitive('mul')
def mul(a, b):
    _same_shape('mul', a, b)
    av, bv = a.values, b.values
    return av * bv, lambda g: (g * bv, g * av)


@register_primitive('scale')
def scale(x, factor):
    factor = float(factor)
    return x.values * factor, lambda g: (g * factor,)


@register_primitive('square')
def square(x):
    xv = x.values
    return xv * xv, lambda g: (2.0 * xv * g,)


@register_primitive('total')
def total(x):
    shape = x.shape
    return np.array(x.values.sum()), lambda g: (np.full(shape, float(g)),)


@register_primitive('reshape')
def reshape(x, shape):
    original = x.shape
    return x.values.reshape(shape).copy(), lambda g: (g.reshape(original),)
