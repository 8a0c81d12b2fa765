"""
The two-path network: a shared CNN trunk feeding a supervised and an
unsupervised CNN path, each ending in its own dense head.

Layer plan for an N x 1 x L x D batch:

    shared:  conv128 x3 -> maxpool2 -> conv256 x3 -> maxpool2
    path:    conv512 -> conv256 -> conv128 -> maxpool2 -> flatten
             -> dropout (training only) -> dense(C)

ReLU follows every convolution. Both paths read the same trunk output.
"""
import io
import logging
import struct
import zlib
from dataclasses import dataclass

import numpy as np

from adam import AdamState
from config import Config
from nn_layers import ConvParams, DenseParams, conv2d, dense, dropout, flatten, maxpool2, relu, softmax
from tensor_core import Tensor

logger = logging.getLogger(__name__)

SHARED_FILTERS = tuple(Config.shared_filters)
PATH_FILTERS = tuple(Config.path_filters)
PATHS = ('sup', 'unsup')
TRAINING = 'training'
INFERENCE = 'inference'

CHECKPOINT_MAGIC = b'DTSL'
CHECKPOINT_VERSION = 1


class ArchitectureError(ValueError):
    pass


class CorruptCheckpointError(ValueError):
    pass


class CheckpointVersionError(ValueError):
    pass


@dataclass(frozen=True)
class ArchitectureSpec:
    max_len: int  # L
    embed_dim: int  # D
    num_classes: int  # C
    shared_filters: tuple = SHARED_FILTERS
    path_filters: tuple = PATH_FILTERS

    def validate(self):
        if self.num_classes < 2:
            raise ArchitectureError(f"need at least 2 classes, got {self.num_classes}")
        if self.max_len < 8 or self.embed_dim < 8:
            raise ArchitectureError(f"three 2x2 pooling stages need L >= 8 and D >= 8, "
                                    f"got {self.max_len} x {self.embed_dim}")
        if len(self.shared_filters) != 6 or len(self.path_filters) != 3:
            raise ArchitectureError("filter plan must list 6 shared and 3 per-path convolutions")
        return self

    @property
    def trunk_shape(self):
        return self.shared_filters[-1], self.max_len // 4, self.embed_dim // 4

    @property
    def flatten_width(self):
        return self.path_filters[-1] * (self.max_len // 8) * (self.embed_dim // 8)

    @classmethod
    def from_config(cls, config):
        return cls(config.max_len, config.embed_dim, config.num_classes, tuple(config.shared_filters),
                   tuple(config.path_filters)).validate()


@dataclass
class PathParams:
    convs: list
    head: DenseParams


@dataclass
class NetworkParams:
    arch: ArchitectureSpec
    theta_shared: list
    theta_sup: PathParams
    theta_unsup: PathParams

    def path(self, name):
        return self.theta_sup if name == 'sup' else self.theta_unsup

    def named_tensors(self):
        """Every trainable tensor in the fixed checkpoint order."""
        for conv in self.theta_shared:
            yield conv.filters.name, conv.filters
            yield conv.biases.name, conv.biases
        for name in PATHS:
            path = self.path(name)
            for conv in path.convs:
                yield conv.filters.name, conv.filters
                yield conv.biases.name, conv.biases
            yield path.head.weights.name, path.head.weights
            yield path.head.biases.name, path.head.biases

    def parameter_count(self):
        return sum(tensor.size for _, tensor in self.named_tensors())

    def group_of(self, tensor_name):
        return {'shared': 'theta_shared', 'sup': 'theta_sup', 'unsup': 'theta_unsup'}[tensor_name.split('.')[0]]


@dataclass
class TwoPathOutput:
    z: Tensor
    z_prime: Tensor


@dataclass
class Checkpoint:
    arch: ArchitectureSpec
    params: NetworkParams
    adam: AdamState
    epoch: int
    fingerprint: str = ''
    version: int = CHECKPOINT_VERSION


# ------------------------------------------------------------------------------
# Construction
# ------------------------------------------------------------------------------

def _build(arch, draw):
    def conv(prefix, out_channels, in_channels):
        fan_in = in_channels * 9
        return ConvParams(
            Tensor(draw((out_channels, in_channels, 3, 3), fan_in), trainable=True, name=f"{prefix}.filters"),
            Tensor(np.zeros(out_channels), trainable=True, name=f"{prefix}.biases"))

    shared, channels = [], 1
    for index, filters in enumerate(arch.shared_filters):
        shared.append(conv(f"shared.conv{index}", filters, channels))
        channels = filters

    paths = []
    for name in PATHS:
        convs, in_channels = [], channels
        for index, filters in enumerate(arch.path_filters):
            convs.append(conv(f"{name}.conv{index}", filters, in_channels))
            in_channels = filters
        width = arch.flatten_width
        head = DenseParams(
            Tensor(draw((arch.num_classes, width), width), trainable=True, name=f"{name}.head.weights"),
            Tensor(np.zeros(arch.num_classes), trainable=True, name=f"{name}.head.biases"))
        paths.append(PathParams(convs, head))
    return NetworkParams(arch, shared, paths[0], paths[1])


def init_network(arch, seed):
    """He-normal weights, zero biases; deterministic in ``seed``."""
    arch.validate()
    rng = np.random.default_rng(seed)
    params = _build(arch, lambda shape, fan_in: rng.standard_normal(shape) * np.sqrt(2.0 / fan_in))
    logger.info(f"[NETWORK] initialised {params.parameter_count()} parameters "
                f"(L={arch.max_len}, D={arch.embed_dim}, C={arch.num_classes}, seed={seed})")
    return params


def _allocate(arch):
    return _build(arch, lambda shape, fan_in: np.zeros(shape))


# ------------------------------------------------------------------------------
# Forward evaluation
# ------------------------------------------------------------------------------

def _check_batch(batch, arch):
    x = batch if isinstance(batch, Tensor) else Tensor(batch)
    expected = (1, arch.max_len, arch.embed_dim)
    if x.values.ndim != 4 or x.shape[1:] != expected:
        raise ArchitectureError(f"batch must be N x {' x '.join(map(str, expected))}, got {x.shape}")
    return x


def shared_trunk(batch, params):
    h = _check_batch(batch, params.arch)
    for index, conv in enumerate(params.theta_shared):
        h = relu(conv2d(h, conv))
        if index in (2, 5):
            h = maxpool2(h)
    return h


def _run_path(h, path, training, rate, mask_seed):
    for conv in path.convs:
        h = relu(conv2d(h, conv))
    h = flatten(maxpool2(h))
    h = dropout(h, rate, mask_seed, training)
    return dense(h, path.head)


def forward_two_path(batch, params, mode=INFERENCE, seed=0, dropout_rate=0.5):
    """Evaluate both paths on one batch; ``seed`` may be an int or a tuple of ints."""
    if mode not in (TRAINING, INFERENCE):
        raise ValueError(f"mode must be '{TRAINING}' or '{INFERENCE}', got {mode!r}")
    training = mode == TRAINING
    entropy = list(seed) if isinstance(seed, (tuple, list)) else [seed]
    trunk = shared_trunk(batch, params)
    z = _run_path(trunk, params.theta_sup, training, dropout_rate, entropy + [0])
    z_prime = _run_path(trunk, params.theta_unsup, training, dropout_rate, entropy + [1])
    return TwoPathOutput(z, z_prime)


def predict(batch, params):
    """Class indices from the supervised path; ties go to the lower index."""
    output = forward_two_path(batch, params, INFERENCE)
    return softmax(output.z).values.argmax(axis=-1)


def predict_in_chunks(inputs, params, chunk_size=64):
    labels = [predict(inputs[start:start + chunk_size], params) for start in range(0, len(inputs), chunk_size)]
    return np.concatenate(labels) if labels else np.zeros(0, dtype=np.intp)


# ------------------------------------------------------------------------------
# Checkpoints
# ------------------------------------------------------------------------------

def save_checkpoint(path, params, adam_state, epoch, fingerprint=''):
    arch = params.arch
    buffer = io.BytesIO()
    buffer.write(struct.pack('<4sI', CHECKPOINT_MAGIC, CHECKPOINT_VERSION))
    buffer.write(struct.pack('<III', arch.max_len, arch.embed_dim, arch.num_classes))
    for plan in (arch.shared_filters, arch.path_filters):
        buffer.write(struct.pack(f'<I{len(plan)}I', len(plan), *plan))
    buffer.write(struct.pack('<IQ', epoch, adam_state.k))
    buffer.write(struct.pack('<4d', adam_state.lr, adam_state.beta1, adam_state.beta2, adam_state.epsilon))
    encoded = fingerprint.encode('utf-8')
    buffer.write(struct.pack('<I', len(encoded)))
    buffer.write(encoded)

    named = list(params.named_tensors())
    buffer.write(struct.pack('<I', len(named)))
    for name, tensor in named:
        for values in (tensor.values, adam_state.m[name], adam_state.v[name]):
            flat = np.ascontiguousarray(values, dtype='<f8').reshape(-1)
            buffer.write(struct.pack('<Q', flat.size))
            buffer.write(flat.tobytes())

    payload = buffer.getvalue()
    with open(path, 'wb') as handle:
        handle.write(payload)
        handle.write(struct.pack('<I', zlib.crc32(payload) & 0xFFFFFFFF))
    logger.info(f"[CHECKPOINT] epoch {epoch} written to {path} ({len(payload) + 4} bytes)")


class _Reader:
    def __init__(self, data):
        self.data = data
        self.offset = 0

    def take(self, size):
        if self.offset + size > len(self.data):
            raise CorruptCheckpointError(f"checkpoint truncated at byte {self.offset}")
        chunk = self.data[self.offset:self.offset + size]
        self.offset += size
        return chunk

    def unpack(self, fmt):
        return struct.unpack(fmt, self.take(struct.calcsize(fmt)))


def load_checkpoint(path):
    with open(path, 'rb') as handle:
        data = handle.read()
    if len(data) < 12:
        raise CorruptCheckpointError(f"{path} is too short to be a checkpoint")
    magic, version = struct.unpack('<4sI', data[:8])
    if magic != CHECKPOINT_MAGIC:
        raise CorruptCheckpointError(f"{path} does not start with {CHECKPOINT_MAGIC!r}")
    if version != CHECKPOINT_VERSION:
        raise CheckpointVersionError(f"{path} has format version {version}, expected {CHECKPOINT_VERSION}")
    payload, (checksum,) = data[:-4], struct.unpack('<I', data[-4:])
    if zlib.crc32(payload) & 0xFFFFFFFF != checksum:
        raise CorruptCheckpointError(f"{path} failed its checksum (truncated or modified)")

    reader = _Reader(payload)
    reader.take(8)
    max_len, embed_dim, num_classes = reader.unpack('<III')
    plans = []
    for _ in range(2):
        (count,) = reader.unpack('<I')
        plans.append(tuple(reader.unpack(f'<{count}I')))
    try:
        arch = ArchitectureSpec(max_len, embed_dim, num_classes, plans[0], plans[1]).validate()
    except ArchitectureError as e:
        raise CorruptCheckpointError(f"{path} holds an invalid architecture: {e}") from e
    epoch, step = reader.unpack('<IQ')
    lr, beta1, beta2, epsilon = reader.unpack('<4d')
    (length,) = reader.unpack('<I')
    fingerprint = reader.take(length).decode('utf-8')

    params = _allocate(arch)
    named = list(params.named_tensors())
    (count,) = reader.unpack('<I')
    if count != len(named):
        raise CorruptCheckpointError(f"{path} lists {count} tensors, architecture has {len(named)}")
    m, v = {}, {}
    for name, tensor in named:
        blocks = []
        for _ in range(3):
            (size,) = reader.unpack('<Q')
            if size != tensor.size:
                raise CorruptCheckpointError(f"{path}: tensor '{name}' has {size} values, expected {tensor.size}")
            blocks.append(np.frombuffer(reader.take(8 * size), dtype='<f8').astype(np.float64).reshape(tensor.shape))
        tensor.values, m[name], v[name] = blocks
    if reader.offset != len(payload):
        raise CorruptCheckpointError(f"{path} has {len(payload) - reader.offset} trailing bytes")

    adam_state = AdamState(lr=lr, beta1=beta1, beta2=beta2, epsilon=epsilon, k=step, m=m, v=v)
    logger.info(f"[CHECKPOINT] restored epoch {epoch} from {path}")
    return Checkpoint(arch=arch, params=params, adam=adam_state, epoch=epoch, fingerprint=fingerprint,
                      version=version)
