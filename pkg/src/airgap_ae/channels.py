"""Channel models, SNR bookkeeping and seeded random streams.

Blocks of channel symbols are complex128 arrays of shape ``(S, N)``: one row
per example, ``N`` complex channel uses per row. Networks see the real layout
``[Re(x_1..x_N) | Im(x_1..x_N)]`` produced by :func:`to_real`.
"""

from __future__ import annotations

import zlib
from dataclasses import dataclass

import numpy as np


def substream(seed, label, *index):
    """Independent generator derived from a master seed and a stream label.

    Equal ``(seed, label, index)`` always give the same stream, which is how
    two devices regenerate the same training batch without exchanging it.
    """
    key = (zlib.crc32(label.encode("utf-8")),) + tuple(int(i) for i in index)
    return np.random.default_rng(np.random.SeedSequence(int(seed), spawn_key=key))


def to_real(X):
    X = np.asarray(X)
    return np.concatenate([X.real, X.imag], axis=1)


def to_complex(x):
    x = np.asarray(x, dtype=float)
    n = x.shape[1] // 2
    return x[:, :n] + 1j * x[:, n:]


def snr_to_noise_var(snr_db):
    """Noise variance per complex symbol for unit-energy symbols."""
    return 10.0 ** (-float(snr_db) / 10.0)


def complex_normal(rng, shape, var):
    """Circular complex Gaussian samples with total variance ``var``."""
    std = np.sqrt(var / 2.0)
    return std * rng.standard_normal(shape) + 1j * std * rng.standard_normal(shape)


def awgn_apply(X, noise_var, rng):
    if noise_var <= 0:
        raise ValueError("noise variance must be positive")
    X = np.asarray(X, dtype=complex)
    return X + complex_normal(rng, X.shape, noise_var)


def rbf_apply(X, noise_var, rng):
    """Rayleigh block fading: one gain per row. Returns ``(Y, h)``.

    The gains are for test harnesses only; training code goes through
    :meth:`Channel.transmit`, which drops them.
    """
    if noise_var <= 0:
        raise ValueError("noise variance must be positive")
    X = np.asarray(X, dtype=complex)
    h = complex_normal(rng, (X.shape[0], 1), 1.0)
    return h * X + complex_normal(rng, X.shape, noise_var), h[:, 0]


def sample_perturbation(S, N, var, rng):
    if not 0 < var < 1:
        raise ValueError("perturbation variance must lie in (0, 1)")
    return complex_normal(rng, (S, N), var)


@dataclass(frozen=True)
class Channel:
    """Black-box channel ``P(y|x)``. Only :meth:`transmit` is meant for learners."""

    kind: str = "awgn"
    snr_db: float = 10.0

    def __post_init__(self):
        if self.kind not in ("awgn", "rbf"):
            raise ValueError(f"unknown channel kind {self.kind!r}")

    @property
    def noise_var(self):
        return snr_to_noise_var(self.snr_db)

    def at_snr(self, snr_db):
        return Channel(self.kind, snr_db)

    def transmit(self, X, rng):
        if self.kind == "awgn":
            return awgn_apply(X, self.noise_var, rng)
        return rbf_apply(X, self.noise_var, rng)[0]
