# -*- coding: utf-8 -*-

"""
gpair.utils
~~~~~~~~~~~

Runtime options, structured key=value logging, stage timing and the
process-pool fan-out helper.
"""

import logging
import os
import time
from concurrent.futures import TimeoutError
from dataclasses import dataclass
from multiprocessing import get_context

import numba
from pebble import ProcessPool

from gpair.exceptions import GpairError, InvalidArgumentError

logger = logging.getLogger(__name__)

THREADS_ENV = "GPAIR_THREADS"

DEFAULT_N_MIN = 25

DENSE_ENTRY_CAP = 10 ** 7

MAX_TOF_PAIRS = 50_000_000

PSNR_CAP_DB = 200.0

POOL_TASK_TIMEOUT = 3600


@dataclass
class RuntimeOptions:
    """Process-wide execution switches.

    - deterministic: compile operator kernels without fastmath so that every
      reduction keeps its sequential per-owner order bit for bit.
    - threads: numba thread cap, None keeps numba's default.
    """
    deterministic: bool = True
    threads: int = None


RUNTIME = RuntimeOptions()


def configure_runtime(deterministic=None, threads=None):
    """Apply runtime switches; `threads` falls back to $GPAIR_THREADS.

    Returns
    -------
    - RuntimeOptions, the process-wide options after the update
    """
    if deterministic is not None:
        RUNTIME.deterministic = bool(deterministic)
    if threads is None and os.environ.get(THREADS_ENV):
        try:
            threads = int(os.environ[THREADS_ENV])
        except ValueError:
            raise InvalidArgumentError(f"{THREADS_ENV} must be an integer, got {os.environ[THREADS_ENV]!r}")
    if threads is not None:
        if threads < 1:
            raise InvalidArgumentError(f"thread count must be >= 1, got {threads}")
        threads = min(threads, numba.config.NUMBA_NUM_THREADS)
        numba.set_num_threads(threads)
        RUNTIME.threads = threads
    return RUNTIME


def _fmt_value(value):
    if isinstance(value, float):
        return repr(value)
    if isinstance(value, (list, tuple)):
        return ",".join(_fmt_value(v) for v in value)
    return str(value)


def kv_line(event, **fields):
    """Render one structured record: `event k1=v1 k2=v2`."""
    parts = [event] + [f"{k}={_fmt_value(v)}" for k, v in fields.items()]
    return " ".join(parts)


def log_kv(event, level=logging.INFO, **fields):
    logger.log(level, kv_line(event, **fields))


class StageTimer:
    """StageTimer class for timing one named stage and logging it as key=value."""

    def __init__(self, name, log=True, level=logging.INFO, **fields):
        self.name = name
        self.log = log
        self.level = level
        self.fields = fields
        self.__start = None
        self.__wall_ms = None

    def __enter__(self):
        self.__start = time.perf_counter()
        return self

    def __exit__(self, type, value, traceback):
        self.__wall_ms = (time.perf_counter() - self.__start) * 1e3
        if self.log and type is None:
            log_kv("stage", level=self.level, name=self.name, wall_ms=round(self.__wall_ms, 3), **self.fields)

    @property
    def wall_ms(self):
        return self.__wall_ms


def get_chunks(lst, n):
    """Yield successive n-sized chunks from lst."""
    if n < 1:
        raise InvalidArgumentError(f"chunk size must be >= 1, got {n}")
    for i in range(0, len(lst), n):
        yield lst[i:i + n]


def run_chunked(func, chunks, max_workers, timeout=POOL_TASK_TIMEOUT):
    """Run `func(chunk)` for every chunk in a process pool, results in chunk order.

    Params
    ------
    - func: a picklable module-level callable
    - chunks: list of argument chunks
    - max_workers: int, pool size
    - timeout: int, seconds before a single task is cancelled

    Returns
    -------
    - list, one result per chunk
    """
    results = [None] * len(chunks)
    failures = []

    def task_done(index):
        def _done(future):
            try:
                results[index] = future.result()
            except TimeoutError as error:
                logger.error("chunk %d took longer than %d seconds", index, error.args[1])
                failures.append(error)
            except Exception as error:
                logger.error("chunk %d raised %s", index, error)
                failures.append(error)
        return _done

    # numba thread pools do not survive fork
    with ProcessPool(max_workers=max_workers, max_tasks=max_workers, context=get_context("spawn")) as pool:
        for i, chunk in enumerate(chunks):
            future = pool.schedule(func, (chunk,), timeout=timeout)
            future.add_done_callback(task_done(i))

    if failures:
        error = failures[0]
        if isinstance(error, GpairError):
            raise error
        raise GpairError(f"{len(failures)} pooled task(s) failed, first: {error!r}") from error
    return results
