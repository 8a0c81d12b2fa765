"""
Corpus handling for tweet-level fake/true classification.

Corpus file: one JSON object per line with ``id``, ``event``, ``text`` and
``label`` (``"fake"``, ``"true"`` or ``null``). Embedding file: optional
``vocab_size D`` header, then ``word v1 ... vD`` per line.
"""
import json
import logging
import math
import re
import string
import unicodedata
from dataclasses import dataclass
from pathlib import Path

import numpy as np
import pandas as pd

from tensor_core import Tensor

logger = logging.getLogger(__name__)

LABELS = {'fake': 1, 'true': 0}
LABEL_NAMES = {value: key for key, value in LABELS.items()}
MAX_MALFORMED_FRACTION = 0.01

# The five main PHEME events and their short codes.
EVENT_CODES = {
    'germanwings-crash': 'GC',
    'charliehebdo': 'CH',
    'sydneysiege': 'SS',
    'ferguson': 'FE',
    'ottawashooting': 'OS',
}
# Tweets per event as (fake, true) in the five-event PHEME release.
PHEME_COUNTS = {
    'GC': (2637, 2014),
    'CH': (7697, 32481),
    'SS': (9046, 16175),
    'FE': (6686, 18368),
    'OS': (6624, 6032),
}
FIXTURE_COUNTS = {
    'alpha': (40, 30),
    'beta': (35, 35),
    'gamma': (25, 35),
}


class CorpusFormatError(ValueError):
    pass


class EmbeddingFormatError(ValueError):
    pass


class LabelDesignationError(ValueError):
    pass


@dataclass(frozen=True)
class TweetRecord:
    id: str
    event: str
    text: str
    label: int = None  # 1 fake, 0 true, None unlabeled


@dataclass
class EncodedSample:
    matrix: np.ndarray  # 1 x L x D
    label: int
    id: str
    event: str


@dataclass
class Minibatch:
    inputs: Tensor  # |B| x 1 x L x D
    labels: tuple  # class index, or None where the label is hidden
    ids: tuple
    indices: np.ndarray


# ------------------------------------------------------------------------------
# Corpus files
# ------------------------------------------------------------------------------

def _parse_record(line):
    data = json.loads(line)
    if not isinstance(data, dict):
        raise ValueError("record is not an object")
    record_id, event, text = data['id'], data['event'], data['text']
    if isinstance(record_id, int) and not isinstance(record_id, bool):
        record_id = str(record_id)
    if not isinstance(record_id, str) or not record_id:
        raise ValueError("id must be a non-empty string")
    if not isinstance(event, str) or not event:
        raise ValueError("event must be a non-empty string")
    if not isinstance(text, str):
        raise ValueError("text must be a string")
    token = data.get('label')
    if token is not None and token not in LABELS:
        raise ValueError(f"unknown label {token!r}")
    return TweetRecord(record_id, event, text, None if token is None else LABELS[token])


def load_corpus(path):
    try:
        with open(path, 'r', encoding='utf-8') as handle:
            lines = handle.readlines()
    except (OSError, UnicodeDecodeError) as e:
        raise CorpusFormatError(f"cannot read corpus {path}: {e}") from e

    records, malformed, seen = [], 0, 0
    for number, line in enumerate(lines, 1):
        if not line.strip():
            continue
        seen += 1
        try:
            records.append(_parse_record(line))
        except (ValueError, KeyError, TypeError) as e:
            malformed += 1
            logger.debug(f"[CORPUS] {path}:{number} skipped: {e}")

    if seen == 0:
        logger.warning(f"[CORPUS] {path} is empty")
        return []
    if malformed:
        logger.warning(f"[CORPUS] {malformed}/{seen} malformed lines skipped in {path}")
    if malformed / seen > MAX_MALFORMED_FRACTION:
        raise CorpusFormatError(f"{path}: {malformed} of {seen} lines are malformed "
                                f"(limit {MAX_MALFORMED_FRACTION:.0%})")
    logger.info(f"[CORPUS] loaded {len(records)} records from {path}")
    return records


def write_corpus(records, path):
    with open(path, 'w', encoding='utf-8') as handle:
        for record in records:
            label = None if record.label is None else LABEL_NAMES[record.label]
            handle.write(json.dumps({'id': record.id, 'event': record.event, 'text': record.text, 'label': label},
                                    ensure_ascii=False) + '\n')


def convert_pheme_threads(root, out_path=None, events=None):
    """Flatten PHEME thread archives into per-tweet records.

    Every tweet of a thread (source and reactions) carries the thread-level
    annotation: rumour threads are fake, non-rumour threads are true.
    Expected layout: ``<root>/<event>-all-rnr-threads/{rumours,non-rumours}/
    <thread>/{source-tweets,reactions}/*.json``.
    """
    root = Path(root)
    records = []
    for event_dir in sorted(path for path in root.iterdir() if path.is_dir()):
        name = event_dir.name.replace('-all-rnr-threads', '')
        code = EVENT_CODES.get(name, name)
        if events is not None and code not in events:
            continue
        for category, label in (('rumours', LABELS['fake']), ('non-rumours', LABELS['true'])):
            category_dir = event_dir / category
            if not category_dir.is_dir():
                continue
            for thread_dir in sorted(path for path in category_dir.iterdir() if path.is_dir()):
                for part in ('source-tweets', 'reactions'):
                    for tweet_path in sorted((thread_dir / part).glob('*.json')):
                        with open(tweet_path, 'r', encoding='utf-8') as handle:
                            tweet = json.load(handle)
                        tweet_id = str(tweet.get('id_str') or tweet.get('id') or tweet_path.stem)
                        records.append(TweetRecord(tweet_id, code, tweet.get('text', ''), label))
    logger.info(f"[CORPUS] converted {len(records)} tweets from {root}")
    if out_path is not None:
        write_corpus(records, out_path)
    return records


def corpus_statistics(records):
    """Tweets and class distribution per event, with a Total row."""
    frame = pd.DataFrame([{'event': r.event, 'label': r.label} for r in records], columns=['event', 'label'])
    table = frame.groupby('event').agg(
        Tweets=('event', 'size'),
        Fake=('label', lambda labels: int((labels == LABELS['fake']).sum())),
        True_=('label', lambda labels: int((labels == LABELS['true']).sum())),
    ).rename(columns={'True_': 'True'})
    table.loc['Total'] = table.sum()
    return table.astype(int)


# ------------------------------------------------------------------------------
# Tokens and embeddings
# ------------------------------------------------------------------------------

_URL = re.compile(r'^(https?://|www\.)\S*$')
_USER = re.compile(r'^@\w+')


def _is_punctuation(ch):
    return ch in string.punctuation or unicodedata.category(ch).startswith('P')


def _strip_punctuation(token):
    start, end = 0, len(token)
    while start < end and _is_punctuation(token[start]):
        start += 1
    while end > start and _is_punctuation(token[end - 1]):
        end -= 1
    core = token[start:end]
    if core and token[:start].endswith('#'):
        return '#' + core
    return core


def _trim_for_markers(token):
    # keeps a leading @ or # so mentions and hashtags survive the trim
    start, end = 0, len(token)
    while start < end and token[start] not in '@#' and _is_punctuation(token[start]):
        start += 1
    while end > start and _is_punctuation(token[end - 1]):
        end -= 1
    return token[start:end]


def tokenize(text):
    tokens = []
    for raw in text.lower().split():
        trimmed = _trim_for_markers(raw)
        if _URL.match(trimmed):
            tokens.append('<url>')
        elif _USER.match(trimmed):
            tokens.append('<user>')
        else:
            token = _strip_punctuation(raw)
            if token:
                tokens.append(token)
    return tokens


@dataclass
class EmbeddingTable:
    dim: int
    vectors: dict

    def __len__(self):
        return len(self.vectors)

    def __contains__(self, word):
        return word in self.vectors

    def lookup(self, word):
        vector = self.vectors.get(word)
        return np.zeros(self.dim) if vector is None else vector


def load_embeddings(path):
    dim, vectors, duplicates = None, {}, 0
    with open(path, 'r', encoding='utf-8') as handle:
        for number, line in enumerate(handle, 1):
            parts = line.split()
            if not parts:
                continue
            if number == 1 and len(parts) == 2 and all(part.isdigit() for part in parts):
                dim = int(parts[1])
                continue
            word, values = parts[0], parts[1:]
            if dim is None:
                dim = len(values)
            if len(values) != dim:
                raise EmbeddingFormatError(f"{path} line {number}: expected {dim} values, got {len(values)}")
            try:
                vector = np.array([float(value) for value in values])
            except ValueError as e:
                raise EmbeddingFormatError(f"{path} line {number}: {e}") from e
            if word in vectors:
                duplicates += 1
                continue
            vectors[word] = vector
    if dim is None or dim < 1:
        raise EmbeddingFormatError(f"{path} holds no vectors")
    if duplicates:
        logger.warning(f"[EMBEDDINGS] {duplicates} duplicate words in {path}; first occurrence kept")
    logger.info(f"[EMBEDDINGS] loaded {len(vectors)} vectors of dimension {dim} from {path}")
    return EmbeddingTable(dim, vectors)


def write_embeddings(table, path, header=True):
    with open(path, 'w', encoding='utf-8') as handle:
        if header:
            handle.write(f"{len(table)} {table.dim}\n")
        for word, vector in table.vectors.items():
            handle.write(word + ' ' + ' '.join(repr(float(value)) for value in vector) + '\n')


def encode(record, table, max_len):
    """Sentence image: row j is the embedding of token j, zero rows pad to ``max_len``."""
    if max_len < 1:
        raise ValueError(f"max_len must be positive, got {max_len}")
    matrix = np.zeros((1, max_len, table.dim))
    for row, token in enumerate(tokenize(record.text)[:max_len]):
        matrix[0, row] = table.lookup(token)
    return EncodedSample(matrix, record.label, record.id, record.event)


def encode_all(records, table, max_len):
    return [encode(record, table, max_len) for record in records]


# ------------------------------------------------------------------------------
# Labeled designation and minibatches
# ------------------------------------------------------------------------------

class CorpusSplit:
    """Encoded samples with the labeled subset S; other labels stay hidden from training."""

    def __init__(self, samples, labeled, labeled_ratio):
        self._matrices = [sample.matrix for sample in samples]
        self._truth = tuple(sample.label for sample in samples)
        self.ids = tuple(sample.id for sample in samples)
        self.events = tuple(sample.event for sample in samples)
        self.labeled = frozenset(int(i) for i in labeled)
        self.labeled_ratio = labeled_ratio

    def __len__(self):
        return len(self._matrices)

    @property
    def num_labeled(self):
        return len(self.labeled)

    @property
    def labeled_fraction(self):
        return self.num_labeled / len(self) if len(self) else 0.0

    def training_label(self, index):
        return self._truth[index] if index in self.labeled else None

    def training_labels(self):
        return [self.training_label(index) for index in range(len(self))]

    def inputs(self, indices):
        return np.stack([self._matrices[index] for index in indices])

    def ground_truth(self):
        """Every label, for scoring only."""
        return list(self._truth)


def designate_labeled(samples, ratio, seed):
    if not 0 < ratio <= 1:
        raise LabelDesignationError(f"labeled ratio must lie in (0, 1], got {ratio}")
    total = len(samples)
    wanted = int(math.floor(ratio * total + 0.5))
    if wanted == 0:
        raise LabelDesignationError(f"ratio {ratio} of {total} samples leaves no labeled sample")
    candidates = [index for index, sample in enumerate(samples) if sample.label is not None]
    if len(candidates) < wanted:
        raise LabelDesignationError(f"{wanted} labeled samples requested but only {len(candidates)} carry labels")
    rng = np.random.default_rng(seed)
    chosen = sorted(candidates[pick] for pick in rng.choice(len(candidates), size=wanted, replace=False))
    logger.info(f"[SPLIT] {wanted}/{total} samples labeled (ratio {ratio})")
    return CorpusSplit(samples, chosen, ratio)


def batches(split, batch_size, seed, epoch):
    """One epoch of minibatches over a (seed, epoch)-seeded permutation."""
    if batch_size < 1:
        raise ValueError(f"batch size must be positive, got {batch_size}")
    order = np.random.default_rng([seed, epoch]).permutation(len(split))
    for start in range(0, len(order), batch_size):
        indices = order[start:start + batch_size]
        yield Minibatch(inputs=Tensor(split.inputs(indices)),
                        labels=tuple(split.training_label(int(i)) for i in indices),
                        ids=tuple(split.ids[i] for i in indices),
                        indices=indices)


def num_batches(split, batch_size):
    return -(-len(split) // batch_size)


# ------------------------------------------------------------------------------
# Synthetic fixtures
# ------------------------------------------------------------------------------

def synthetic_vocabulary(words_per_class=12, neutral_words=8):
    return {
        LABELS['fake']: [f"fake{i}" for i in range(words_per_class)],
        LABELS['true']: [f"true{i}" for i in range(words_per_class)],
        None: [f"word{i}" for i in range(neutral_words)],
    }


def synthetic_corpus(counts=None, seed=0, tokens=(4, 8), neutral_share=0.3, vocabulary=None):
    """Records whose two classes use disjoint vocabularies; ``counts`` maps event -> (fake, true)."""
    counts = FIXTURE_COUNTS if counts is None else counts
    vocabulary = synthetic_vocabulary() if vocabulary is None else vocabulary
    rng = np.random.default_rng(seed)
    records = []
    for event in sorted(counts):
        fake, true = counts[event]
        labels = [LABELS['fake']] * fake + [LABELS['true']] * true
        for position in rng.permutation(len(labels)):
            label = labels[position]
            length = int(rng.integers(tokens[0], tokens[1] + 1))
            words = []
            for _ in range(length):
                pool = vocabulary[None] if rng.random() < neutral_share else vocabulary[label]
                words.append(pool[int(rng.integers(len(pool)))])
            records.append(TweetRecord(f"{event}-{len(records)}", event, ' '.join(words), label))
    return records


def synthetic_embeddings(dim, seed=0, vocabulary=None, signal=1.0):
    """Random unit-scale vectors; class words are shifted apart along the first axis."""
    vocabulary = synthetic_vocabulary() if vocabulary is None else vocabulary
    rng = np.random.default_rng(seed)
    vectors = {}
    for label in (LABELS['fake'], LABELS['true'], None):
        shift = 0.0 if label is None else (signal if label == LABELS['fake'] else -signal)
        for word in vocabulary[label]:
            vector = rng.standard_normal(dim) / math.sqrt(dim)
            vector[0] += shift
            vectors[word] = vector
    return EmbeddingTable(dim, vectors)


def write_fixture(directory, counts=None, embed_dim=100, seed=0):
    directory = Path(directory)
    directory.mkdir(parents=True, exist_ok=True)
    corpus_path, embeddings_path = directory / 'corpus.jsonl', directory / 'embeddings.txt'
    write_corpus(synthetic_corpus(counts, seed=seed), corpus_path)
    write_embeddings(synthetic_embeddings(embed_dim, seed=seed), embeddings_path)
    logger.info(f"[FIXTURE] wrote {corpus_path} and {embeddings_path}")
    return corpus_path, embeddings_path
