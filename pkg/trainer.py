"""
Semi-supervised training of the two-path network.

For each epoch t = 1..epochs the consistency weight w is fixed from the
ramp at t - 1 completed epochs. Each minibatch runs both paths in training
mode with their own dropout masks, forms l + w * l', backpropagates and takes
one Adam step over the shared and both path parameter sets.
"""
import logging
import math
from dataclasses import dataclass, field

import numpy as np
from tqdm import tqdm

from adam import AdamState, adam_step
from dtsl_network import TRAINING, ArchitectureSpec, forward_two_path, init_network, predict_in_chunks
from objective import LossBreakdown, RampSchedule, ramp_weight, total_loss
from phemecommon import batches, num_batches
from tensor_core import NonFiniteValueError, backward, record
from time_logger import EpochLog

logger = logging.getLogger(__name__)


class NonFiniteLossError(RuntimeError):
    def __init__(self, epoch, batch, supervised, unsupervised, weight):
        super().__init__(f"non-finite loss at epoch {epoch}, batch {batch}: "
                         f"l={supervised} l'={unsupervised} w={weight}")
        self.epoch = epoch
        self.batch = batch
        self.supervised = supervised
        self.unsupervised = unsupervised
        self.weight = weight


@dataclass
class MetricsSnapshot:
    epoch: int
    samples: int
    metrics: object  # dtslcommon.ClassMetrics


@dataclass
class TrainState:
    epoch: int  # completed epochs
    params: object
    adam: AdamState
    history: list = field(default_factory=list)  # LossBreakdown per completed epoch
    snapshots: list = field(default_factory=list)


def initial_state(config, arch=None):
    arch = ArchitectureSpec.from_config(config) if arch is None else arch.validate()
    params = init_network(arch, config.seed)
    return TrainState(epoch=0, params=params, adam=AdamState.from_config(params, config))


def state_from_checkpoint(checkpoint, history=None):
    """Resumable state from a loaded checkpoint; ``history`` restores earlier epoch records."""
    history = list(history or [])[:checkpoint.epoch]
    return TrainState(epoch=checkpoint.epoch, params=checkpoint.params, adam=checkpoint.adam, history=history)


def history_from_log(records):
    return [LossBreakdown(r['l'], r['l_prime'], r['w'], r['total']) for r in sorted(records, key=lambda r: r['t'])]


def _train_batch(state, minibatch, t, index, weight_epoch, schedule, config):
    breakdown = None

    def objective():
        nonlocal breakdown
        output = forward_two_path(minibatch.inputs, state.params, TRAINING, seed=(config.seed, t, index),
                                  dropout_rate=config.dropout)
        breakdown = total_loss(output.z, output.z_prime, minibatch.labels, weight_epoch, schedule)
        return breakdown.objective

    try:
        _, graph = record(objective)
    except NonFiniteValueError as e:
        weight = ramp_weight(weight_epoch, schedule)
        raise NonFiniteLossError(t, index, math.nan, math.nan, weight) from e
    if not all(math.isfinite(value) for value in (breakdown.supervised, breakdown.unsupervised, breakdown.total)):
        raise NonFiniteLossError(t, index, breakdown.supervised, breakdown.unsupervised, breakdown.weight)

    grads = backward(graph)
    for name, tensor in state.params.named_tensors():
        grads.setdefault(name, np.zeros(tensor.shape))
    adam_step(state.params, grads, state.adam)
    return breakdown


def train(split, config, resume=None, heldout=None, log_path=None, arch=None):
    """Run epochs ``state.epoch + 1`` to ``config.epochs``.

    ``arch`` replaces the default filter plan when no ``resume`` state is given.
    """
    if len(split) == 0 or split.num_labeled == 0:
        raise ValueError(f"training needs a non-empty split with labeled samples "
                         f"(N={len(split)}, M={split.num_labeled})")
    config.validate()
    state = resume if resume is not None else initial_state(config, arch)
    schedule = RampSchedule(config.effective_w_max(split.labeled_fraction), config.t_ramp)
    epoch_log = EpochLog(log_path, append=resume is not None)
    total_batches = num_batches(split, config.batch_size)
    logger.info(f"[TRAIN] N={len(split)} M={split.num_labeled} epochs {state.epoch + 1}..{config.epochs} "
                f"w_max={schedule.w_max:.6g}")

    for t in range(state.epoch + 1, config.epochs + 1):
        epoch_log.start_epoch()
        weight_epoch = t - 1
        supervised, unsupervised = [], []
        progress = tqdm(batches(split, config.batch_size, config.seed, t), total=total_batches,
                        desc=f"epoch {t}/{config.epochs}", disable=config.verbose == 0, leave=False)
        for index, minibatch in enumerate(progress):
            breakdown = _train_batch(state, minibatch, t, index, weight_epoch, schedule, config)
            supervised.append(breakdown.supervised)
            unsupervised.append(breakdown.unsupervised)
            progress.set_postfix(loss=f"{breakdown.total:.4f}")

        weight = ramp_weight(weight_epoch, schedule)
        l, l_prime = float(np.mean(supervised)), float(np.mean(unsupervised))
        summary = LossBreakdown(l, l_prime, weight, l + weight * l_prime)
        state.history.append(summary)
        state.epoch = t
        epoch_log.finish_epoch(t, summary, len(supervised))
        logger.info(f"[EPOCH] {t}/{config.epochs} l={l:.6f} l'={l_prime:.6f} w={weight:.6f} "
                    f"total={summary.total:.6f}")

        if heldout and config.eval_every and t % config.eval_every == 0:
            snapshot = evaluate_epoch_hook(state, heldout, config)
            state.snapshots.append(snapshot)
            logger.info(f"[EPOCH] {t} held-out macro-F={snapshot.metrics.macro_f:.4f} on {snapshot.samples} samples")
    return state


def evaluate_epoch_hook(state, heldout, config=None):
    """Macro precision/recall/F of the supervised path on labeled held-out samples; parameters are not touched."""
    # Import here to avoid circular imports
    from dtslcommon import confusion, macro_prf

    scored = [sample for sample in heldout if sample.label is not None]
    if not scored:
        raise ValueError("held-out set has no labeled samples")
    num_classes = state.params.arch.num_classes
    inputs = np.stack([sample.matrix for sample in scored])
    chunk_size = config.batch_size if config is not None else 64
    predictions = predict_in_chunks(inputs, state.params, chunk_size)
    cm = confusion([sample.label for sample in scored], predictions, num_classes)
    return MetricsSnapshot(epoch=state.epoch, samples=len(scored), metrics=macro_prf(cm))
