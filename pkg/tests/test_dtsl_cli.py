import json

import pytest

from dtsl import EXIT_GRADCHECK, EXIT_OK, EXIT_RUNTIME, EXIT_USAGE, main
from dtsl_network import load_checkpoint
from phemecommon import load_corpus, synthetic_embeddings, write_embeddings, write_fixture
from time_logger import read_epoch_log

NARROW = ['--max-len', '8', '--embed-dim', '8', '--shared-filters', '4,4,4,8,8,8', '--path-filters', '8,8,8',
          '--batch-size', '10', '--verbose', '0']


@pytest.fixture
def fixture_files(tmp_path):
    return write_fixture(tmp_path / 'fixture', counts={'a': (10, 10), 'b': (10, 10)}, embed_dim=8, seed=1)


def run(command, corpus, embeddings, *extra):
    return main([command, '--corpus', str(corpus), '--embeddings', str(embeddings), *NARROW, *extra])


@pytest.fixture
def trained(tmp_path, fixture_files):
    out = tmp_path / 'run'
    assert run('train', *fixture_files, '--epochs', '1', '--labeled-ratio', '0.5', '--out', str(out)) == EXIT_OK
    return out


def test_fixture_command(tmp_path):
    out = tmp_path / 'fx'
    assert main(['fixture', '--out', str(out), '--embed-dim', '8', '--verbose', '0']) == EXIT_OK
    assert len(load_corpus(out / 'corpus.jsonl')) == 200
    assert (out / 'embeddings.txt').exists()


def test_train_writes_checkpoint_and_log(trained):
    checkpoint = load_checkpoint(trained / 'model.ckpt')
    assert checkpoint.epoch == 1
    assert checkpoint.arch.shared_filters == (4, 4, 4, 8, 8, 8)
    assert [record['t'] for record in read_epoch_log(trained / 'train_log.jsonl')] == [1]


def test_same_seed_gives_identical_checkpoints(tmp_path, fixture_files):
    for name in ('first', 'second'):
        assert run('train', *fixture_files, '--epochs', '1', '--seed', '7', '--out', str(tmp_path / name)) == EXIT_OK
    assert (tmp_path / 'first' / 'model.ckpt').read_bytes() == (tmp_path / 'second' / 'model.ckpt').read_bytes()


def test_resume_continues_training(trained, fixture_files):
    assert run('train', *fixture_files, '--epochs', '2', '--labeled-ratio', '0.5', '--out', str(trained),
               '--resume') == EXIT_OK
    assert load_checkpoint(trained / 'model.ckpt').epoch == 2
    assert [record['t'] for record in read_epoch_log(trained / 'train_log.jsonl')] == [1, 2]


def test_predict_is_repeatable(tmp_path, trained, fixture_files):
    outputs = []
    for name in ('a.tsv', 'b.tsv'):
        out = tmp_path / name
        assert run('predict', *fixture_files, '--checkpoint', str(trained / 'model.ckpt'), '--out', str(out)) == \
            EXIT_OK
        outputs.append(out.read_text(encoding='utf-8'))
    assert outputs[0] == outputs[1]
    lines = outputs[0].splitlines()
    assert len(lines) == 40
    assert all(line.split('\t')[1] in ('fake', 'true') for line in lines)


def test_evaluate_writes_report(tmp_path, trained, fixture_files):
    out = tmp_path / 'evaluation.json'
    assert run('evaluate', *fixture_files, '--checkpoint', str(trained / 'model.ckpt'), '--out', str(out)) == \
        EXIT_OK
    report = json.loads(out.read_text(encoding='utf-8'))
    assert sorted(report['per_event']) == ['a', 'b']
    assert sum(map(sum, report['summary']['confusion'])) == 40


def test_embedding_width_mismatch(tmp_path, trained, fixture_files):
    corpus, _ = fixture_files
    wide = tmp_path / 'wide.txt'
    write_embeddings(synthetic_embeddings(12), wide)
    assert run('train', corpus, wide, '--epochs', '1', '--out', str(tmp_path / 'x')) == EXIT_RUNTIME
    assert run('predict', corpus, wide, '--checkpoint', str(trained / 'model.ckpt'),
               '--out', str(tmp_path / 'p.tsv')) == EXIT_RUNTIME


@pytest.mark.parametrize('override', [
    ('--max-len', '16'), ('--shared-filters', '16,16,16,32,32,32'), ('--path-filters', '4,4,4'),
])
def test_checkpoint_must_match_configured_architecture(tmp_path, trained, fixture_files, override):
    checkpoint = str(trained / 'model.ckpt')
    predictions = tmp_path / 'p.tsv'
    assert run('predict', *fixture_files, '--checkpoint', checkpoint, '--out', str(predictions), *override) == \
        EXIT_RUNTIME
    assert not predictions.exists()
    assert run('evaluate', *fixture_files, '--checkpoint', checkpoint, '--out', str(tmp_path / 'e.json'),
               *override) == EXIT_RUNTIME
    assert run('train', *fixture_files, '--epochs', '2', '--out', str(trained), '--resume', *override) == EXIT_RUNTIME
    assert load_checkpoint(trained / 'model.ckpt').epoch == 1


def test_usage_errors(tmp_path, fixture_files):
    corpus, embeddings = fixture_files
    assert run('train', tmp_path / 'missing.jsonl', embeddings) == EXIT_USAGE
    assert run('train', corpus, embeddings, '--epochs', 'many') == EXIT_USAGE
    assert run('train', corpus, embeddings, '--epochs', '0') == EXIT_USAGE
    assert run('train', corpus, embeddings, '--lr', 'nan') == EXIT_USAGE
    assert run('train', corpus, embeddings, '--w-max', 'inf') == EXIT_USAGE
    assert main(['serve']) == EXIT_USAGE
    assert main(['predict', '--corpus', str(corpus), '--embeddings', str(embeddings)]) == EXIT_USAGE
    assert run('sweep', corpus, embeddings, '--ratios', '0.5,2') == EXIT_USAGE


def test_loeo_command(tmp_path, fixture_files):
    out = tmp_path / 'reports' / 'loeo.json'
    assert run('loeo', *fixture_files, '--epochs', '1', '--out', str(out)) == EXIT_OK
    report = json.loads(out.read_text(encoding='utf-8'))
    assert sorted(report['per_event']) == ['a', 'b']
    text = (tmp_path / 'reports' / 'loeo.json.txt').read_text(encoding='utf-8')
    assert 'DTSL (10%)' in text and 'fingerprint' in text


def test_loeo_needs_two_events(tmp_path):
    corpus, embeddings = write_fixture(tmp_path / 'one', counts={'a': (5, 5)}, embed_dim=8)
    assert run('loeo', corpus, embeddings, '--epochs', '1', '--out', str(tmp_path / 'r.json')) == EXIT_RUNTIME


def test_sweep_command(tmp_path, fixture_files):
    out = tmp_path / 'sweep.json'
    assert run('sweep', *fixture_files, '--epochs', '1', '--ratios', '0.5,1.0', '--out', str(out)) == EXIT_OK
    assert (tmp_path / 'sweep-50.json').exists() and (tmp_path / 'sweep-100.json').exists()
    text = (tmp_path / 'sweep.json.txt').read_text(encoding='utf-8')
    assert 'DTSL (50%)' in text and 'DTSL (100%)' in text


def test_stats_command(fixture_files, capsys):
    corpus, _ = fixture_files
    assert main(['stats', '--corpus', str(corpus), '--verbose', '0']) == EXIT_OK
    printed = capsys.readouterr().out
    assert 'Total' in printed and 'Fake' in printed


def test_convert_command(tmp_path):
    thread = tmp_path / 'pheme' / 'ottawashooting-all-rnr-threads' / 'rumours' / '9' / 'source-tweets'
    thread.mkdir(parents=True)
    (thread / '9.json').write_text(json.dumps({'id_str': '9', 'text': 'shots fired'}), encoding='utf-8')
    out = tmp_path / 'pheme.jsonl'
    assert main(['convert', '--pheme-root', str(tmp_path / 'pheme'), '--out', str(out), '--verbose', '0']) == EXIT_OK
    assert [(r.id, r.event, r.label) for r in load_corpus(out)] == [('9', 'OS', 1)]


def test_gradcheck_command(capsys):
    assert main(['gradcheck', '--verbose', '0']) == EXIT_OK
    assert 'passed' in capsys.readouterr().out


def test_gradcheck_failure_exit_code(monkeypatch):
    import dtsl
    from gradcheck import ComponentResult, GradcheckReport

    failing = GradcheckReport(1e-5, [ComponentResult('relu', 0.5, 21)])
    monkeypatch.setattr(dtsl, 'run_gradcheck', lambda seed: failing)
    assert main(['gradcheck', '--verbose', '0']) == EXIT_GRADCHECK
