# utils.py
import logging
import os
from concurrent.futures import ThreadPoolExecutor
from contextlib import contextmanager

import numpy as np
import pandas as pd
from tqdm import tqdm

__all__ = [
    "PARTIAL_SUFFIX",
    "atomic_output",
    "df_to_csv",
    "parallel_map",
    "derive_seed",
    "default_log_callback",
    "tqdm_progress_callback",
    "read_frame",
]

PARTIAL_SUFFIX = ".partial"


@contextmanager
def atomic_output(path):
    """
    Yields a `.partial` path to write to. On success the file is renamed to `path`;
    if the block raises, the partial file is left on disk for inspection.
    """
    directory = os.path.dirname(os.path.abspath(path))
    os.makedirs(directory, exist_ok=True)
    partial = f"{path}{PARTIAL_SUFFIX}"
    yield partial
    os.replace(partial, path)


def df_to_csv(df, path, float_format=None):
    """Writes a DataFrame as CSV with '\\n' line endings on every platform."""
    with atomic_output(path) as partial:
        df.to_csv(partial, index=False, float_format=float_format, lineterminator="\n")


def parallel_map(func, items, jobs=1):
    """Order-preserving map; jobs > 1 runs on a thread pool."""
    items = list(items)
    if jobs <= 1 or len(items) <= 1:
        return [func(item) for item in items]
    with ThreadPoolExecutor(max_workers=jobs) as executor:
        return list(executor.map(func, items))


def derive_seed(seed, *keys):
    """Deterministic sub-seed for a (seed, key, ...) tuple, stable across runs and platforms."""
    entropy = [int(seed)]
    for key in keys:
        if isinstance(key, str):
            entropy.extend(key.encode("utf-8"))
        else:
            entropy.append(int(key))
    return int(np.random.SeedSequence(entropy).generate_state(1)[0])


def default_log_callback(logger):
    """Routes `log_callback(message, level)` calls to a logger."""
    def log_callback(message, level="info"):
        logger.log(logging.getLevelName(level.upper()), message)
    return log_callback


def tqdm_progress_callback(disable=False):
    """Builds a `progress_callback(current, total, message)` backed by one tqdm bar per total."""
    state = {"bar": None, "total": None}

    def progress_callback(current, total, message=""):
        if state["bar"] is None or state["total"] != total:
            if state["bar"] is not None:
                state["bar"].close()
            state["bar"] = tqdm(total=total, disable=disable, leave=False)
            state["total"] = total
        bar = state["bar"]
        bar.set_description(message)
        bar.update(current - bar.n)
        if current >= total:
            bar.close()
            state["bar"] = None

    return progress_callback


def read_frame(path, **kwargs):
    """Reads a CSV into a DataFrame, keeping `id` columns as strings."""
    return pd.read_csv(path, dtype={"id": str}, keep_default_na=False, **kwargs)
