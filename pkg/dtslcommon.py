"""
Leave-one-event-out evaluation and macro precision/recall/F reporting.

Each fold holds out every record of one event, trains on the rest with the
configured labeled ratio and scores the held-out event. The macro summary
pools the confusion matrices of all folds before averaging over classes;
the per-event breakdown keeps the fold-level view.
"""
import json
import logging
from dataclasses import dataclass, field

import numpy as np
import pandas as pd
from sklearn.model_selection import LeaveOneGroupOut

from dtsl_network import ArchitectureError, predict_in_chunks
from phemecommon import LABEL_NAMES, LABELS, designate_labeled, encode_all
from trainer import train

logger = logging.getLogger(__name__)


class FoldPlanError(ValueError):
    pass


class MetricsInputError(ValueError):
    pass


@dataclass(frozen=True)
class FoldPlan:
    event: str
    train_ids: tuple
    test_ids: tuple
    train_indices: tuple = ()
    test_indices: tuple = ()


@dataclass
class ClassMetrics:
    precision: tuple  # per class
    recall: tuple
    f_score: tuple
    macro_precision: float
    macro_recall: float
    macro_f: float
    confusion: np.ndarray = None

    def as_dict(self):
        per_class = {LABEL_NAMES.get(c, str(c)): {'precision': self.precision[c], 'recall': self.recall[c],
                                                  'f_score': self.f_score[c]}
                     for c in range(len(self.precision))}
        return {'per_class': per_class, 'macro_precision': self.macro_precision, 'macro_recall': self.macro_recall,
                'macro_f': self.macro_f, 'confusion': self.confusion.tolist() if self.confusion is not None else None}


@dataclass
class MetricsReport:
    labeled_ratio: float
    fingerprint: str
    summary: ClassMetrics  # pooled over folds
    per_event: dict = field(default_factory=dict)  # event -> ClassMetrics
    folds: list = field(default_factory=list)  # event, train and test sizes

    def positive_class(self, label=LABELS['fake']):
        """Per-event precision, recall and F of one class."""
        return {event: (m.precision[label], m.recall[label], m.f_score[label]) for event, m in self.per_event.items()}


# ------------------------------------------------------------------------------
# Folds and metrics
# ------------------------------------------------------------------------------

def loeo_folds(records):
    events = np.array([record.event for record in records], dtype=object)
    distinct = sorted(set(events.tolist()))
    if len(distinct) < 2:
        raise FoldPlanError(f"leave-one-event-out needs at least 2 events, found {len(distinct)}")
    ids = [record.id for record in records]
    plans = []
    for train_index, test_index in LeaveOneGroupOut().split(np.zeros((len(records), 1)), groups=events):
        plans.append(FoldPlan(event=events[test_index[0]],
                              train_ids=tuple(ids[i] for i in train_index),
                              test_ids=tuple(ids[i] for i in test_index),
                              train_indices=tuple(int(i) for i in train_index),
                              test_indices=tuple(int(i) for i in test_index)))
    plans.sort(key=lambda plan: plan.event)
    return plans


def confusion(labels, predictions, num_classes):
    """Counts with rows indexed by true class and columns by predicted class."""
    if len(labels) != len(predictions):
        raise MetricsInputError(f"{len(labels)} labels but {len(predictions)} predictions")
    try:
        truth = np.asarray(labels, dtype=np.int64).reshape(-1)
        guess = np.asarray(predictions, dtype=np.int64).reshape(-1)
    except (TypeError, ValueError) as e:
        raise MetricsInputError(f"labels and predictions must be class indices: {e}") from e
    for name, values in (('label', truth), ('prediction', guess)):
        if values.size and (values.min() < 0 or values.max() >= num_classes):
            raise MetricsInputError(f"{name} outside [0, {num_classes})")
    cm = np.zeros((num_classes, num_classes), dtype=np.int64)
    np.add.at(cm, (truth, guess), 1)
    return cm


def macro_prf(cm):
    cm = np.asarray(cm)
    counts = cm.astype(np.float64)
    hits = np.diag(counts)
    predicted, actual = counts.sum(axis=0), counts.sum(axis=1)
    # an empty denominator scores 0
    precision = np.divide(hits, predicted, out=np.zeros_like(hits), where=predicted > 0)
    recall = np.divide(hits, actual, out=np.zeros_like(hits), where=actual > 0)
    both = precision + recall
    f_score = np.divide(2 * precision * recall, both, out=np.zeros_like(hits), where=both > 0)
    return ClassMetrics(precision=tuple(float(p) for p in precision),
                        recall=tuple(float(r) for r in recall),
                        f_score=tuple(float(f) for f in f_score),
                        macro_precision=float(precision.mean()),
                        macro_recall=float(recall.mean()),
                        macro_f=float(f_score.mean()),
                        confusion=cm.copy())


# ------------------------------------------------------------------------------
# Cross-validation
# ------------------------------------------------------------------------------

def _score(samples, params, num_classes):
    scored = [sample for sample in samples if sample.label is not None]
    if not scored:
        return np.zeros((num_classes, num_classes), dtype=np.int64)
    predictions = predict_in_chunks(np.stack([sample.matrix for sample in scored]), params)
    return confusion([sample.label for sample in scored], predictions, num_classes)


def run_loeo(records, table, config, arch=None):
    config.validate()
    if table.dim != config.embed_dim:
        raise ArchitectureError(f"embeddings have dimension {table.dim}, configuration expects {config.embed_dim}")
    folds = loeo_folds(records)
    samples = encode_all(records, table, config.max_len)
    pooled = np.zeros((config.num_classes, config.num_classes), dtype=np.int64)
    per_event, fold_sizes = {}, []

    for number, fold in enumerate(folds, 1):
        logger.info(f"[FOLD] {number}/{len(folds)} held-out event {fold.event}: "
                    f"{len(fold.train_ids)} train / {len(fold.test_ids)} test")
        split = designate_labeled([samples[i] for i in fold.train_indices], config.labeled_ratio, config.seed)
        state = train(split, config, arch=arch)
        cm = _score([samples[i] for i in fold.test_indices], state.params, config.num_classes)
        pooled += cm
        per_event[fold.event] = macro_prf(cm)
        fold_sizes.append({'event': fold.event, 'train': len(fold.train_ids), 'test': len(fold.test_ids),
                           'labeled': split.num_labeled})
        logger.info(f"[FOLD] {fold.event} macro-F={per_event[fold.event].macro_f:.4f}")

    report = MetricsReport(labeled_ratio=config.labeled_ratio, fingerprint=config.fingerprint(),
                           summary=macro_prf(pooled), per_event=per_event, folds=fold_sizes)
    logger.info(f"[LOEO] ratio {config.labeled_ratio}: MP={report.summary.macro_precision:.4f} "
                f"MR={report.summary.macro_recall:.4f} MF={report.summary.macro_f:.4f}")
    return report


# ------------------------------------------------------------------------------
# Reports
# ------------------------------------------------------------------------------

def report_to_dict(report):
    return {
        'labeled_ratio': report.labeled_ratio,
        'fingerprint': report.fingerprint,
        'summary': report.summary.as_dict(),
        'per_event': {event: metrics.as_dict() for event, metrics in report.per_event.items()},
        'fake_class': {event: dict(zip(('precision', 'recall', 'f_score'), values))
                       for event, values in report.positive_class().items()},
        'folds': report.folds,
    }


def write_report(report, path):
    with open(path, 'w', encoding='utf-8') as handle:
        json.dump(report_to_dict(report), handle, indent=2, sort_keys=True)
        handle.write('\n')
    logger.info(f"[REPORT] written to {path}")


def _percent(value):
    return f"{100 * value:.2f}%"


def _formatted(frame):
    # DataFrame.map replaced applymap in pandas 2.1
    return frame.map(_percent) if hasattr(frame, 'map') else frame.applymap(_percent)


def _summary_row(report):
    summary = report.summary
    return {'MP': summary.macro_precision, 'MR': summary.macro_recall, 'MF': summary.macro_f}


def render_sweep(reports):
    """One MP / MR / MF row per labeled ratio."""
    frame = pd.DataFrame([_summary_row(report) for report in reports],
                         index=[f"DTSL ({report.labeled_ratio:.0%})" for report in reports])
    return _formatted(frame).to_string()


def render_report(report):
    lines = [render_sweep([report]), '']
    block = pd.DataFrame.from_dict(report.positive_class(), orient='index', columns=['Precision', 'Recall', 'Fscore'])
    block.index.name = 'Events'
    lines.append(f"{report.labeled_ratio:.0%} labeled data (fake class)")
    lines.append(_formatted(block).to_string())
    lines.append('')
    lines.append(f"fingerprint {report.fingerprint}")
    return '\n'.join(lines) + '\n'
