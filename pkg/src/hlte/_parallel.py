"""Worker-pool sizing and an order-preserving parallel map."""

from __future__ import annotations

import os

from joblib import Parallel, delayed

from .exceptions import ConfigError

ENV_JOBS = "HLTE_JOBS"


def resolve_jobs(jobs=None) -> int:
    """Explicit value, else ``$HLTE_JOBS``, else the number of usable cores."""
    if jobs is None:
        env = os.environ.get(ENV_JOBS, "").strip()
        if env:
            try:
                jobs = int(env)
            except ValueError:
                raise ConfigError(f"{ENV_JOBS} must be an integer, got {env!r}") from None
    if jobs is None:
        try:
            return max(1, len(os.sched_getaffinity(0)))
        except AttributeError:  # pragma: no cover
            return max(1, os.cpu_count() or 1)
    jobs = int(jobs)
    if jobs < 1:
        raise ConfigError("jobs must be at least 1")
    return jobs


def parallel_map(fn, items, jobs=None):
    items = list(items)
    n_jobs = min(resolve_jobs(jobs), max(1, len(items)))
    if n_jobs == 1:
        return [fn(it) for it in items]
    return Parallel(n_jobs=n_jobs)(delayed(fn)(it) for it in items)
