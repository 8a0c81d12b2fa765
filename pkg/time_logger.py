import json
import logging
import time

logger = logging.getLogger(__name__)


class EpochLog:
    """Line-delimited training log, one JSON record per finished epoch."""

    def __init__(self, path=None, append=False):
        self.path = path
        self.records = []
        self._started = None
        self._failed = False
        if path is not None and not append:
            self._open('w')

    def start_epoch(self):
        self._started = time.perf_counter()

    def finish_epoch(self, t, breakdown, batches):
        wall_time = time.perf_counter() - self._started if self._started is not None else 0.0
        record = {'t': t, **breakdown.as_record(), 'batches': batches,
                  'wall_time': round(wall_time, 6), 'timestamp': time.time()}
        self.records.append(record)
        self._write(record)
        return record

    def _write(self, record):
        if self.path is None or self._failed:
            return
        self._open('a', json.dumps(record) + '\n')

    def _open(self, mode, text=''):
        try:
            with open(self.path, mode, encoding='utf-8') as handle:
                handle.write(text)
        except OSError as e:
            # training carries on without the file
            self._failed = True
            logger.warning(f"[LOG] cannot write epoch log {self.path}: {e}")


def read_epoch_log(path):
    with open(path, 'r', encoding='utf-8') as handle:
        return [json.loads(line) for line in handle if line.strip()]
