import json
import logging

import numpy as np
import pytest
from numpy.testing import assert_array_equal

from phemecommon import (PHEME_COUNTS, CorpusFormatError, EmbeddingFormatError, EmbeddingTable,
                         LabelDesignationError, TweetRecord, batches, convert_pheme_threads, corpus_statistics,
                         designate_labeled, encode, encode_all, load_corpus, load_embeddings, synthetic_corpus,
                         synthetic_embeddings, tokenize, write_corpus, write_embeddings, write_fixture)


def write_lines(path, lines):
    path.write_text('\n'.join(lines) + '\n', encoding='utf-8')
    return path


def record_line(i, event='GC', label='fake', text='a tweet'):
    return json.dumps({'id': str(i), 'event': event, 'text': text, 'label': label})


def test_load_corpus_maps_labels(tmp_path):
    path = write_lines(tmp_path / 'c.jsonl', [record_line(1, label='fake'), record_line(2, label='true'),
                                              record_line(3, label=None)])
    records = load_corpus(path)
    assert [r.label for r in records] == [1, 0, None]
    assert records[0] == TweetRecord('1', 'GC', 'a tweet', 1)


def test_load_corpus_empty_file_warns(tmp_path, caplog):
    path = tmp_path / 'empty.jsonl'
    path.write_text('', encoding='utf-8')
    with caplog.at_level(logging.WARNING):
        assert load_corpus(path) == []
    assert 'empty' in caplog.text


def test_unknown_label_is_skipped(tmp_path):
    lines = [record_line(i) for i in range(199)] + [record_line(999, label='satire')]
    records = load_corpus(write_lines(tmp_path / 'c.jsonl', lines))
    assert len(records) == 199
    assert '999' not in {r.id for r in records}


def test_too_many_malformed_lines(tmp_path):
    lines = [record_line(i) for i in range(50)] + ['{not json', '{"id": "x"}']
    with pytest.raises(CorpusFormatError):
        load_corpus(write_lines(tmp_path / 'c.jsonl', lines))


def test_unreadable_corpus(tmp_path):
    with pytest.raises(CorpusFormatError):
        load_corpus(tmp_path / 'missing.jsonl')


def test_write_and_reload_corpus(tmp_path):
    records = synthetic_corpus({'x': (2, 3)}, seed=1) + [TweetRecord('u1', 'x', 'unlabeled tweet', None)]
    write_corpus(records, tmp_path / 'out.jsonl')
    assert load_corpus(tmp_path / 'out.jsonl') == records


def _thread(root, event, category, thread, tweets):
    for part, tweet_id in tweets:
        folder = root / f"{event}-all-rnr-threads" / category / thread / part
        folder.mkdir(parents=True, exist_ok=True)
        (folder / f"{tweet_id}.json").write_text(json.dumps({'id': int(tweet_id), 'id_str': tweet_id,
                                                              'text': f"tweet {tweet_id}"}), encoding='utf-8')


def test_convert_pheme_threads_uses_thread_labels(tmp_path):
    root = tmp_path / 'pheme'
    _thread(root, 'germanwings-crash', 'rumours', '1', [('source-tweets', '1'), ('reactions', '11'),
                                                        ('reactions', '12')])
    _thread(root, 'germanwings-crash', 'non-rumours', '2', [('source-tweets', '2')])
    _thread(root, 'ferguson', 'non-rumours', '3', [('source-tweets', '3'), ('reactions', '31')])
    records = convert_pheme_threads(root, tmp_path / 'pheme.jsonl')
    by_id = {r.id: r for r in records}
    assert {r.event for r in records} == {'GC', 'FE'}
    assert [by_id[i].label for i in ('1', '11', '12', '2', '3', '31')] == [1, 1, 1, 0, 0, 0]
    assert load_corpus(tmp_path / 'pheme.jsonl') == records
    only = convert_pheme_threads(root, events={'FE'})
    assert {r.event for r in only} == {'FE'}


def test_corpus_statistics_for_pheme_counts():
    records = [TweetRecord(f"{event}{i}", event, '', 1 if i < fake else 0)
               for event, (fake, true) in PHEME_COUNTS.items() for i in range(fake + true)]
    table = corpus_statistics(records)
    assert table.loc['GC'].tolist() == [4651, 2637, 2014]
    assert table.loc['Total', 'Tweets'] == 107_760
    assert list(table.columns) == ['Tweets', 'Fake', 'True']


@pytest.mark.parametrize('text, tokens', [
    ('Breaking: CRASH!', ['breaking', 'crash']),
    ('see http://t.co/x @bob #news', ['see', '<url>', '<user>', '#news']),
    ('', []),
    ('"#Paris!" ... @anna: www.example.org', ['#paris', '<user>', '<url>']),
    ('tab\tand nbsp', ['tab', 'and', 'nbsp']),
    ('(@bob) said "http://t.co/x"', ['<user>', 'said', '<url>']),
    ('via .@cnn, (www.bbc.com).', ['via', '<user>', '<url>']),
])
def test_tokenize(text, tokens):
    assert tokenize(text) == tokens


def test_load_embeddings_with_and_without_header(tmp_path):
    body = ['apple 0.1 0.2 0.3', 'pear -1 0 1']
    plain = load_embeddings(write_lines(tmp_path / 'plain.txt', body))
    headed = load_embeddings(write_lines(tmp_path / 'headed.txt', ['2 3'] + body))
    assert len(plain) == 2 and plain.dim == 3
    assert headed.dim == plain.dim
    for word in ('apple', 'pear'):
        assert_array_equal(headed.lookup(word), plain.lookup(word))
    assert_array_equal(plain.lookup('banana'), np.zeros(3))


def test_embedding_length_error_cites_line(tmp_path):
    lines = [f"w{i} 1 2 3" for i in range(6)] + ['broken 1 2']
    with pytest.raises(EmbeddingFormatError, match='line 7'):
        load_embeddings(write_lines(tmp_path / 'e.txt', lines))


def test_duplicate_embedding_keeps_first(tmp_path, caplog):
    with caplog.at_level(logging.WARNING):
        table = load_embeddings(write_lines(tmp_path / 'e.txt', ['a 1 1', 'a 2 2']))
    assert_array_equal(table.lookup('a'), [1.0, 1.0])
    assert 'duplicate' in caplog.text


def test_write_embeddings_roundtrip(tmp_path):
    table = synthetic_embeddings(4, seed=2)
    write_embeddings(table, tmp_path / 'e.txt')
    loaded = load_embeddings(tmp_path / 'e.txt')
    assert len(loaded) == len(table)
    for word, vector in table.vectors.items():
        assert_array_equal(loaded.lookup(word), vector)


def test_encode_rows_and_padding():
    table = EmbeddingTable(3, {'one': np.array([1.0, 2.0, 3.0]), 'two': np.array([4.0, 5.0, 6.0])})
    sample = encode(TweetRecord('1', 'E', 'One two', 1), table, 4)
    assert sample.matrix.shape == (1, 4, 3)
    assert_array_equal(sample.matrix[0, :2], [[1, 2, 3], [4, 5, 6]])
    assert_array_equal(sample.matrix[0, 2:], np.zeros((2, 3)))
    assert_array_equal(encode(TweetRecord('2', 'E', '', None), table, 8).matrix, np.zeros((1, 8, 3)))


def test_encode_truncates_long_tweets():
    vectors = {f"t{i}": np.full(2, float(i)) for i in range(100)}
    sample = encode(TweetRecord('1', 'E', ' '.join(vectors), 0), EmbeddingTable(2, vectors), 64)
    assert_array_equal(sample.matrix[0, :, 0], np.arange(64.0))


def test_designation_sizes_and_determinism(tiny_table):
    records = synthetic_corpus({'e': (500, 500)}, seed=0)
    samples = encode_all(records, tiny_table, 8)
    split = designate_labeled(samples, 0.05, seed=1)
    assert split.num_labeled == 50
    assert designate_labeled(samples, 0.05, seed=1).labeled == split.labeled
    other = designate_labeled(samples, 0.05, seed=2)
    assert other.labeled != split.labeled and other.num_labeled == 50
    assert designate_labeled(samples, 1.0, seed=1).num_labeled == 1000


def test_designation_hides_labels(tiny_split):
    hidden = [i for i in range(len(tiny_split)) if i not in tiny_split.labeled]
    assert hidden
    assert all(tiny_split.training_label(i) is None for i in hidden)
    assert all(tiny_split.training_label(i) is not None for i in tiny_split.labeled)
    assert None not in tiny_split.ground_truth()


@pytest.mark.parametrize('ratio', [0.0, 1.5, 0.001])
def test_designation_errors(tiny_corpus, tiny_table, ratio):
    with pytest.raises(LabelDesignationError):
        designate_labeled(encode_all(tiny_corpus, tiny_table, 8), ratio, seed=0)


def test_designation_rounds_half_up(tiny_table):
    samples = encode_all(synthetic_corpus({'e': (5, 5)}, seed=0), tiny_table, 8)
    assert designate_labeled(samples, 0.25, seed=0).num_labeled == 3


@pytest.mark.parametrize('total, sizes', [(100, [25] * 4), (101, [25, 25, 25, 25, 1])])
def test_batch_sizes_and_coverage(tiny_table, total, sizes):
    samples = encode_all(synthetic_corpus({'e': (total // 2, total - total // 2)}, seed=0), tiny_table, 8)
    split = designate_labeled(samples, 0.1, seed=0)
    epoch = list(batches(split, 25, seed=4, epoch=1))
    assert [len(b.ids) for b in epoch] == sizes
    assert sorted(i for b in epoch for i in b.ids) == sorted(split.ids)
    assert epoch[0].inputs.shape == (25, 1, 8, 8)
    again = list(batches(split, 25, seed=4, epoch=1))
    assert [b.ids for b in again] == [b.ids for b in epoch]
    assert [b.ids for b in batches(split, 25, seed=4, epoch=2)] != [b.ids for b in epoch]


def test_fixture_files(tmp_path):
    corpus_path, embeddings_path = write_fixture(tmp_path / 'fixture', embed_dim=16, seed=0)
    records = load_corpus(corpus_path)
    table = load_embeddings(embeddings_path)
    assert len(records) == 200
    assert {r.event for r in records} == {'alpha', 'beta', 'gamma'}
    assert table.dim == 16
    assert all(token in table for r in records for token in tokenize(r.text))


def test_labeled_share_per_batch_is_hypergeometric(tiny_split):
    size, total, labeled = 5, len(tiny_split), tiny_split.num_labeled
    counts = [sum(label is not None for label in next(batches(tiny_split, size, seed=0, epoch=epoch)).labels)
              for epoch in range(1, 401)]
    share = labeled / total
    variance = size * share * (1 - share) * (total - size) / (total - 1)
    assert abs(np.mean(counts) - size * share) <= 3 * np.sqrt(variance / len(counts))
