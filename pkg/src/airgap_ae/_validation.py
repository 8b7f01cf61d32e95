"""Input checks shared by the estimators."""

import numpy as np


def check_messages(messages, n_messages):
    messages = np.asarray(messages)
    if messages.ndim != 1 or not np.issubdtype(messages.dtype, np.integer):
        raise ValueError("messages must be a 1-d integer array")
    if messages.size and (messages.min() < 0 or messages.max() >= n_messages):
        raise ValueError(f"messages must lie in [0, {n_messages - 1}]")
    return messages


def check_block(Y, n_uses):
    Y = np.asarray(Y)
    if Y.ndim != 2 or Y.shape[1] != n_uses:
        raise ValueError(f"expected a block with {n_uses} columns, got shape {Y.shape}")
    if not np.all(np.isfinite(Y)):
        raise ValueError("block contains non-finite entries")
    return Y.astype(complex, copy=False)


def check_unit_interval(r):
    r = np.asarray(r, dtype=float).reshape(-1)
    if r.size and (r.min() < 0 or r.max() > 1 or not np.all(np.isfinite(r))):
        raise ValueError("values must lie in [0, 1]")
    return r
