"""
Worker pool and timing context managers for Monte-Carlo runs.
"""

import logging
import time
from concurrent.futures import ThreadPoolExecutor
from typing import Callable, Iterable, List, Optional, TypeVar

logger = logging.getLogger(__name__)

T = TypeVar("T")
R = TypeVar("R")


class SamplePool:
    """
    A context manager running per-sample work on a thread pool.

    Results of :meth:`map` come back in the order of the items for any
    number of threads. With one thread the work runs inline.

    Args:
        threads (int): Number of worker threads, at least 1
    """

    def __init__(self, threads: int = 1):
        if int(threads) != threads or threads < 1:
            raise ValueError(f"threads must be a positive integer, got {threads}")
        self.threads = int(threads)
        self._executor: Optional[ThreadPoolExecutor] = None

    def __enter__(self):
        if self.threads > 1:
            self._executor = ThreadPoolExecutor(max_workers=self.threads,
                                                thread_name_prefix="chlab-sample")
            logger.debug(f"started sample pool with {self.threads} threads")
        return self

    def __exit__(self, exc_type, exc_val, exc_tb):
        if self._executor is not None:
            self._executor.shutdown(wait=True)
            self._executor = None
        if exc_type is not None:
            logger.error(f"sample pool stopped: {exc_val}")
        return False

    @property
    def active(self) -> bool:
        return self.threads == 1 or self._executor is not None

    def map(self, func: Callable[[T], R], items: Iterable[T]) -> List[R]:
        """
        Apply func to every item.

        Args:
            func (callable): Work for one item; must not share mutable state
            items (iterable): Items, typically sample indices

        Returns:
            list: func(item) in item order

        Raises:
            RuntimeError: If a multi-threaded pool is used outside its with-block
        """
        if self.threads == 1:
            return [func(item) for item in items]
        if self._executor is None:
            raise RuntimeError("SamplePool must be entered before use")
        return list(self._executor.map(func, items))


class Timer:
    """
    A timer context manager logging the elapsed wall time at INFO on exit.

    Args:
        name (str): Label used in the log line
    """

    def __init__(self, name: str = "Timer"):
        self.name = name
        self.start_time = None
        self.elapsed_time = 0.0

    def __enter__(self):
        self.start_time = time.perf_counter()
        logger.debug(f"{self.name} started")
        return self

    def __exit__(self, exc_type, exc_val, exc_tb):
        self.elapsed_time = time.perf_counter() - self.start_time
        logger.info(f"{self.name} completed in {self.elapsed_time:.3f} s")
        return False
