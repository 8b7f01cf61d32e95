"""Reference schemes: Gray-mapped QPSK, a lattice codebook with ML decoding,
and analog repetition links for real numbers.

All encoders produce unit average energy per complex symbol. On Rayleigh
block fading the discrete schemes prepend one known pilot and equalise with
it before deciding.
"""

from __future__ import annotations

import itertools
import math

import numpy as np
from scipy.special import ndtr
from sklearn.base import BaseEstimator

from ._validation import check_block, check_messages, check_unit_interval
from .channels import snr_to_noise_var
from .nn import ConfigurationError
from .rtn import guard_gain

PILOT = 1.0 + 0.0j


class CodebookError(ValueError):
    pass


def q_function(x):
    return ndtr(-np.asarray(x, dtype=float))


def qpsk_bler_closed_form(snr_db, n_symbols=4):
    q = q_function(math.sqrt(1.0 / snr_to_noise_var(snr_db)))
    return float(1.0 - (1.0 - q) ** (2 * n_symbols))


def pilot_equalize(Y, pilot=PILOT):
    """Estimate the gain from the leading pilot and divide it out of the rest.

    Returns ``(data / h_hat, h_hat)``.
    """
    Y = np.asarray(Y, dtype=complex)
    if Y.shape[1] < 2:
        raise ValueError("block needs a pilot and at least one data symbol")
    h_hat = guard_gain(Y[:, 0] / pilot)
    return Y[:, 1:] / h_hat[:, None], h_hat


class _Modem(BaseEstimator):
    """Stateless encoder/decoder; ``fit`` is a no-op kept for pipeline use."""

    def fit(self, X=None, y=None):
        return self

    def transform(self, messages):
        return self.encode(messages)

    def predict(self, Y):
        return self.decode(Y)

    @property
    def n_uses(self):
        return self.n_data_symbols + (1 if self.pilot else 0)

    def _attach_pilot(self, X):
        if not self.pilot:
            return X
        return np.concatenate([np.full((X.shape[0], 1), PILOT), X], axis=1)

    def _strip_pilot(self, Y):
        Y = check_block(Y, self.n_uses)
        if not self.pilot:
            return Y
        return pilot_equalize(Y)[0]


class QPSKModem(_Modem):
    """256 messages as 4 Gray-mapped QPSK symbols (two bits per symbol, MSB first)."""

    n_messages = 256
    n_data_symbols = 4

    def __init__(self, pilot=False):
        self.pilot = pilot

    def encode(self, messages):
        m = check_messages(messages, self.n_messages)
        bits = (m[:, None] >> np.arange(7, -1, -1)) & 1
        re = 1 - 2 * bits[:, 0::2]
        im = 1 - 2 * bits[:, 1::2]
        return self._attach_pilot((re + 1j * im) / math.sqrt(2.0))

    def decode(self, Y):
        Z = self._strip_pilot(Y)
        bits = np.empty((Z.shape[0], 8), dtype=np.int64)
        bits[:, 0::2] = Z.real < 0
        bits[:, 1::2] = Z.imag < 0
        return bits @ (1 << np.arange(7, -1, -1))


def qpsk_encode(messages, pilot=False):
    return QPSKModem(pilot).encode(messages)


def qpsk_decode(Y, pilot=False):
    return QPSKModem(pilot).decode(Y)


# --------------------------------------------------------------------------
# lattice codebook


def normalize_codebook(points):
    """Scale rows of complex symbols to unit average energy per symbol."""
    points = np.asarray(points, dtype=complex)
    energy = np.mean(np.sum(np.abs(points) ** 2, axis=1)) / points.shape[1]
    return points / math.sqrt(energy)


def e8_shell(norm2):
    """All E8 lattice points with squared norm ``norm2`` (2 or 4), as integers of 2x."""
    out = []
    for v in itertools.product(range(-2, 3), repeat=8):
        if sum(c * c for c in v) == norm2 and sum(v) % 2 == 0:
            out.append(tuple(2 * c for c in v))
    for v in itertools.product((-3, -1, 1, 3), repeat=8):
        # coordinates are v/2; D8 + (1/2, ..., 1/2) needs an even coordinate sum
        if sum(c * c for c in v) == 4 * norm2 and (sum(v) // 2) % 2 == 0:
            out.append(tuple(v))
    return sorted(out)


def agrell_generate_fallback(n_messages=256):
    """240 minimal E8 vectors plus the lexicographically smallest next-shell vectors.

    A stand-in when the optimised 256-point packing is not available. Its
    minimum distance equals the E8 minimum distance.
    """
    if n_messages != 256:
        raise ConfigurationError("the fallback codebook is defined for 256 messages")
    first = e8_shell(2)
    second = e8_shell(4)
    rows = np.array(first + second[: n_messages - len(first)], dtype=float) / 2.0
    return Codebook(rows_to_complex(rows))


def rows_to_complex(rows):
    """Real rows ``(re_1, im_1, re_2, im_2, ...)`` to complex symbols."""
    rows = np.asarray(rows, dtype=float)
    return rows[:, 0::2] + 1j * rows[:, 1::2]


def agrell_load(path, n_messages=256):
    """Load a codebook CSV: one message per line, 8 reals ``re1,im1,...,re4,im4``."""
    rows = []
    with open(path, encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, start=1):
            line = line.strip()
            if not line or line.startswith("#"):
                continue
            try:
                values = [float(v) for v in line.split(",")]
            except ValueError as exc:
                raise CodebookError(f"{path}:{lineno}: {exc}") from None
            if len(values) != 8 or not all(math.isfinite(v) for v in values):
                raise CodebookError(f"{path}:{lineno}: expected 8 finite reals, got {len(values)}")
            rows.append(values)
    if len(rows) != n_messages:
        raise ConfigurationError(f"{path}: expected {n_messages} codewords, found {len(rows)}")
    return Codebook(rows_to_complex(rows))


def ml_decode(points, Y, h_hat=None):
    """Nearest codeword in Euclidean distance; ties go to the lowest index."""
    Y = np.asarray(Y, dtype=complex)
    if h_hat is not None:
        Y = Y / np.asarray(h_hat)[:, None]
    P = to_real_rows(points)
    Yr = to_real_rows(Y)
    d = np.sum(P * P, axis=1)[None, :] - 2.0 * Yr @ P.T
    return np.argmin(d, axis=1)


def to_real_rows(X):
    return np.concatenate([X.real, X.imag], axis=1)


class Codebook(_Modem):
    """Fixed constellation of complex codewords with minimum-distance decoding."""

    def __init__(self, points, pilot=False):
        self.points = points
        self.pilot = pilot
        pts = np.asarray(points, dtype=complex)
        if len({tuple(np.round(r, 12)) for r in pts}) != len(pts):
            raise CodebookError("codewords are not distinct")
        self.points_ = normalize_codebook(pts)

    @property
    def n_messages(self):
        return self.points_.shape[0]

    @property
    def n_data_symbols(self):
        return self.points_.shape[1]

    def with_pilot(self, pilot=True):
        return Codebook(self.points_, pilot=pilot)

    def encode(self, messages):
        m = check_messages(messages, self.n_messages)
        return self._attach_pilot(self.points_[m])

    def decode(self, Y):
        return ml_decode(self.points_, self._strip_pilot(Y))

    def min_distance(self):
        P = to_real_rows(self.points_)
        d2 = np.sum(P * P, 1)[:, None] + np.sum(P * P, 1)[None, :] - 2 * P @ P.T
        np.fill_diagonal(d2, np.inf)
        return math.sqrt(max(d2.min(), 0.0))


# --------------------------------------------------------------------------
# analog repetition links


class AnalogLink(BaseEstimator):
    """Send a real number as ``N`` identical symbols ``(r - mean)(1 + j) / sqrt(2 var)``.

    With ``pilot=True`` the first of the ``n_uses`` symbols is a known pilot
    and the remaining ones carry the repetitions; the receiver equalises with
    the pilot estimate before averaging. Decoded values are clipped to [0, 1].
    """

    def __init__(self, n_uses=4, pilot=False, source_mean=0.5, source_var=1.0 / 12.0):
        self.n_uses = n_uses
        self.pilot = pilot
        self.source_mean = source_mean
        self.source_var = source_var

    def fit(self, X=None, y=None):
        return self

    @property
    def n_repetitions(self):
        return self.n_uses - 1 if self.pilot else self.n_uses

    def encode(self, r):
        r = check_unit_interval(r)
        s = (r - self.source_mean) * (1 + 1j) / math.sqrt(2 * self.source_var)
        X = np.repeat(s[:, None], self.n_repetitions, axis=1)
        if self.pilot:
            X = np.concatenate([np.full((len(r), 1), PILOT), X], axis=1)
        return X

    def decode(self, Y, clip=True):
        Y = check_block(Y, self.n_uses)
        if self.pilot:
            Y = pilot_equalize(Y)[0]
        k = self.n_repetitions
        r_hat = math.sqrt(2 * self.source_var) / (2 * k) * np.sum(Y.real + Y.imag, axis=1) + self.source_mean
        return np.clip(r_hat, 0.0, 1.0) if clip else r_hat

    transform = encode
    predict = decode


def analog_tx_awgn(r, n_uses=4):
    return AnalogLink(n_uses).encode(r)


def analog_rx_awgn(Y):
    return AnalogLink(np.asarray(Y).shape[1]).decode(Y)


def analog_tx_rbf(r, n_uses=5):
    return AnalogLink(n_uses, pilot=True).encode(r)


def analog_rx_rbf(Y):
    return AnalogLink(np.asarray(Y).shape[1], pilot=True).decode(Y)
