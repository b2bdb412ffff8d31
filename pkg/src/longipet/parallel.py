"""Bounded worker pool for cohort-level loops.

The pool size comes from the LONGIPET_THREADS environment variable
(default 1).  Results are always assembled in input order, so the thread
count never changes any output.
"""

import os
from concurrent.futures import ThreadPoolExecutor

from .errors import ParameterError

ENV_VAR = "LONGIPET_THREADS"


def thread_count(value=None) -> int:
    """Resolve the worker count from ``value`` or the environment."""
    if value is None:
        value = os.environ.get(ENV_VAR, "1")
    try:
        n = int(value)
    except (TypeError, ValueError):
        raise ParameterError(f"{ENV_VAR} must be a positive integer, got {value!r}")
    if n < 1:
        raise ParameterError(f"{ENV_VAR} must be a positive integer, got {n}")
    return n


def pool_map(fn, items, max_workers: int = 1):
    """Map ``fn`` over ``items``, in threads when max_workers > 1.

    Output order matches input order regardless of worker count.
    """
    items = list(items)
    if max_workers <= 1 or len(items) <= 1:
        return [fn(item) for item in items]
    with ThreadPoolExecutor(max_workers=min(max_workers, len(items))) as ex:
        return list(ex.map(fn, items))
