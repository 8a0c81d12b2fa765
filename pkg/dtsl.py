"""
Command-line entry point.

    python dtsl.py fixture --out fixture
    python dtsl.py train --corpus fixture/corpus.jsonl --embeddings fixture/embeddings.txt --out runs/a
    python dtsl.py loeo --config run.json --labeled-ratio 0.1 --out reports/loeo-10.json
    python dtsl.py gradcheck

Exit codes: 0 success, 1 usage or configuration error, 2 runtime failure,
3 gradient check failure.
"""
import argparse
import logging
import os
import sys
from collections import defaultdict
from pathlib import Path

import numpy as np

from config import Config, ConfigError, TrainConfig, load_config_file, resolve_run_config
from dtsl_network import ArchitectureError, ArchitectureSpec, load_checkpoint, predict_in_chunks, save_checkpoint
from dtslcommon import MetricsReport, confusion, macro_prf, render_report, render_sweep, run_loeo, write_report
from gradcheck import GradcheckFailure, assert_passed, run_gradcheck
from phemecommon import LABEL_NAMES, convert_pheme_threads, corpus_statistics, designate_labeled, encode_all, \
    load_corpus, load_embeddings, write_fixture
from time_logger import read_epoch_log
from trainer import history_from_log, state_from_checkpoint, train

logger = logging.getLogger('dtsl')

EXIT_OK, EXIT_USAGE, EXIT_RUNTIME, EXIT_GRADCHECK = 0, 1, 2, 3
DEFAULT_RATIOS = (0.05, 0.10, 0.30)


def _filter_plan(text):
    return tuple(int(part) for part in text.split(',') if part.strip())


# flag -> config field, with the type argparse converts to
FLAGS = {
    'corpus': str, 'embeddings': str, 'checkpoint': str, 'out': str, 'pheme_root': str,
    'labeled_ratio': float, 'epochs': int, 'batch_size': int, 'lr': float, 'w_max': float, 't_ramp': int,
    'seed': int, 'max_len': int, 'embed_dim': int, 'dropout': float, 'eval_every': int, 'verbose': int,
    'shared_filters': _filter_plan, 'path_filters': _filter_plan,
}


class _ArgumentParser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        raise ConfigError('arguments', message)


def build_parser():
    parser = _ArgumentParser(prog='dtsl', description='Two-path semi-supervised CNN for fake news detection.')
    parser.add_argument('command', choices=('train', 'evaluate', 'loeo', 'predict', 'gradcheck', 'sweep',
                                            'convert', 'stats', 'fixture'))
    parser.add_argument('--config', help='JSON file with configuration values; flags override it')
    for name, kind in FLAGS.items():
        parser.add_argument('--' + name.replace('_', '-'), dest=name, type=kind, default=None)
    parser.add_argument('--resume', action='store_true', help='continue training from --checkpoint')
    parser.add_argument('--ratios', default=None, help='comma separated labeled ratios for sweep')
    parser.add_argument('--events', default=None, help='comma separated event codes for convert')
    return parser


def configure_logging(verbose):
    level = {0: logging.WARNING, 1: logging.INFO}.get(verbose, logging.DEBUG)
    logging.basicConfig(level=level, format='%(asctime)s %(levelname)s %(name)s %(message)s', force=True)


def _parse_ratios(text):
    if text is None:
        return DEFAULT_RATIOS
    try:
        ratios = tuple(float(part) for part in text.split(',') if part.strip())
    except ValueError as e:
        raise ConfigError('ratios', f"must be comma separated numbers: {e}") from e
    if not ratios or any(not 0 < ratio <= 1 for ratio in ratios):
        raise ConfigError('ratios', f"each ratio must lie in (0, 1], got {text}")
    return ratios


def _check_dimension(table, embed_dim, source):
    if table.dim != embed_dim:
        raise ArchitectureError(f"embeddings have dimension {table.dim} but {source} expects {embed_dim}")


def _load_matching_checkpoint(config, path):
    checkpoint = load_checkpoint(path)
    expected = ArchitectureSpec.from_config(config)
    if checkpoint.arch != expected:
        raise ArchitectureError(f"checkpoint {path} holds {checkpoint.arch}, the configuration asks for {expected}")
    return checkpoint


def _output(config, default):
    path = Path(config.out or default)
    if path.parent != Path('.'):
        path.parent.mkdir(parents=True, exist_ok=True)
    return path


# ------------------------------------------------------------------------------
# Commands
# ------------------------------------------------------------------------------

def cmd_train(config, args):
    records = load_corpus(config.corpus)
    table = load_embeddings(config.embeddings)
    _check_dimension(table, config.embed_dim, 'the configuration')
    split = designate_labeled(encode_all(records, table, config.max_len), config.labeled_ratio, config.seed)

    out = Path(config.out or 'dtsl-run')
    out.mkdir(parents=True, exist_ok=True)
    checkpoint_path = Path(config.checkpoint) if config.checkpoint else out / 'model.ckpt'
    log_path = out / 'train_log.jsonl'

    resume = None
    if args.resume:
        checkpoint = _load_matching_checkpoint(config, checkpoint_path)
        if checkpoint.fingerprint and checkpoint.fingerprint != config.fingerprint():
            logger.warning(f"[TRAIN] checkpoint {checkpoint_path} was written under a different configuration")
        history = history_from_log(read_epoch_log(log_path)) if log_path.exists() else None
        resume = state_from_checkpoint(checkpoint, history)
        print(f"Resuming from epoch {checkpoint.epoch}")

    state = train(split, config.train_config(), resume=resume, log_path=log_path)
    save_checkpoint(checkpoint_path, state.params, state.adam, state.epoch, config.fingerprint())
    final = state.history[-1] if state.history else None
    if final is not None:
        print(f"Finished epoch {state.epoch}: l={final.supervised:.6f} l'={final.unsupervised:.6f} "
              f"total={final.total:.6f}")
    print(f"Checkpoint:\t {checkpoint_path}")
    return state


def cmd_evaluate(config, args):
    checkpoint = _load_matching_checkpoint(config, config.checkpoint)
    arch = checkpoint.arch
    table = load_embeddings(config.embeddings)
    _check_dimension(table, arch.embed_dim, f"checkpoint {config.checkpoint}")
    samples = [sample for sample in encode_all(load_corpus(config.corpus), table, arch.max_len)
               if sample.label is not None]
    if not samples:
        raise ValueError(f"{config.corpus} holds no labeled records to evaluate")

    predictions = predict_in_chunks(np.stack([sample.matrix for sample in samples]), checkpoint.params)
    by_event = defaultdict(lambda: ([], []))
    for sample, prediction in zip(samples, predictions):
        by_event[sample.event][0].append(sample.label)
        by_event[sample.event][1].append(int(prediction))
    per_event = {event: macro_prf(confusion(*by_event[event], arch.num_classes)) for event in sorted(by_event)}
    summary = macro_prf(confusion([s.label for s in samples], predictions, arch.num_classes))
    fingerprint = checkpoint.fingerprint or config.fingerprint()
    report = MetricsReport(labeled_ratio=config.labeled_ratio, fingerprint=fingerprint, summary=summary,
                           per_event=per_event)
    out = _output(config, 'evaluation.json')
    write_report(report, out)
    print(render_report(report))
    return report


def cmd_loeo(config, args):
    records = load_corpus(config.corpus)
    table = load_embeddings(config.embeddings)
    report = run_loeo(records, table, config.train_config())
    out = _output(config, 'loeo_report.json')
    write_report(report, out)
    text = render_report(report)
    Path(f"{out}.txt").write_text(text, encoding='utf-8')
    print(text)
    return report


def cmd_sweep(config, args):
    records = load_corpus(config.corpus)
    table = load_embeddings(config.embeddings)
    out = _output(config, 'sweep_report.json')
    reports = []
    for ratio in _parse_ratios(args.ratios):
        run_config = TrainConfig(**{**config.train_config().to_dict(), 'labeled_ratio': ratio})
        report = run_loeo(records, table, run_config)
        write_report(report, out.with_name(f"{out.stem}-{round(ratio * 100)}{out.suffix}"))
        reports.append(report)
    text = render_sweep(reports) + '\n' + '\n'.join(render_report(report) for report in reports)
    Path(f"{out}.txt").write_text(text, encoding='utf-8')
    print(text)
    return reports


def cmd_predict(config, args):
    checkpoint = _load_matching_checkpoint(config, config.checkpoint)
    table = load_embeddings(config.embeddings)
    _check_dimension(table, checkpoint.arch.embed_dim, f"checkpoint {config.checkpoint}")
    samples = encode_all(load_corpus(config.corpus), table, checkpoint.arch.max_len)
    inputs = np.stack([sample.matrix for sample in samples]) if samples else np.zeros((0,))
    predictions = predict_in_chunks(inputs, checkpoint.params) if samples else []
    out = _output(config, 'predictions.tsv')
    with open(out, 'w', encoding='utf-8') as handle:
        for sample, prediction in zip(samples, predictions):
            handle.write(f"{sample.id}\t{LABEL_NAMES[int(prediction)]}\n")
    print(f"{len(samples)} predictions written to {out}")
    return out


def cmd_gradcheck(config, args):
    report = run_gradcheck(seed=config.seed)
    print(report.render())
    return assert_passed(report)


def cmd_convert(config, args):
    events = set(args.events.split(',')) if args.events else None
    out = _output(config, 'pheme.jsonl')
    records = convert_pheme_threads(config.pheme_root, out, events)
    print(corpus_statistics(records).to_string())
    return records


def cmd_stats(config, args):
    table = corpus_statistics(load_corpus(config.corpus))
    print(table.to_string())
    return table


def cmd_fixture(config, args):
    return write_fixture(config.out or 'fixture', embed_dim=config.embed_dim, seed=config.seed)


COMMANDS = {
    'train': cmd_train,
    'evaluate': cmd_evaluate,
    'loeo': cmd_loeo,
    'sweep': cmd_sweep,
    'predict': cmd_predict,
    'gradcheck': cmd_gradcheck,
    'convert': cmd_convert,
    'stats': cmd_stats,
    'fixture': cmd_fixture,
}


def main(argv=None):
    try:
        args = build_parser().parse_args(argv)
        configure_logging(args.verbose if args.verbose is not None else Config.verbose)
        file_values = load_config_file(args.config) if args.config else {}
        flags = {name: getattr(args, name) for name in FLAGS}
        flags['command'] = args.command
        config = resolve_run_config(file_values, flags)
        config.validate_paths(os.path.exists)
        if args.command == 'sweep':
            _parse_ratios(args.ratios)
    except (ConfigError, OSError) as e:
        logger.error(f"[CONFIG] {e}")
        return EXIT_USAGE

    try:
        COMMANDS[config.command](config, args)
    except GradcheckFailure as e:
        logger.error(f"[GRADCHECK] {e}")
        return EXIT_GRADCHECK
    except ConfigError as e:
        logger.error(f"[CONFIG] {e}")
        return EXIT_USAGE
    except (ValueError, RuntimeError, OSError, KeyError) as e:
        logger.error(f"[{config.command.upper()}] {type(e).__name__}: {e}")
        return EXIT_RUNTIME
    return EXIT_OK


if __name__ == '__main__':
    sys.exit(main())
