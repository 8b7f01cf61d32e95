"""Message autoencoder trained by alternating receiver/transmitter updates.

The receiver learns by supervised cross-entropy. The transmitter never sees
the channel: it adds Gaussian exploration noise to its output and updates
from per-example losses returned by a feedback transport, using the
likelihood-ratio (REINFORCE) gradient of a circular Gaussian policy.

Messages are 0-based integer labels in ``range(n_messages)``.
"""

from __future__ import annotations

import logging
import math
import os
import time
import warnings
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field

import numpy as np

from .channels import Channel, complex_normal, substream, to_complex, to_real
from .nn import ConfigurationError, Mlp, TrainingError, make_optimizer
from .rtn import RtnReceiver

logger = logging.getLogger(__name__)

PROB_FLOOR = 1e-300


# --------------------------------------------------------------------------
# feedback transports


class PerfectTransport:
    name = "perfect"

    def __call__(self, losses, rng):
        return np.asarray(losses, dtype=float)


@dataclass
class GaussianTransport:
    """Returns ``l + eps`` with ``eps ~ N(0, sigma_l2)``. No clipping."""

    sigma_l2: float
    name: str = "gaussian"

    def __call__(self, losses, rng):
        losses = np.asarray(losses, dtype=float)
        if self.sigma_l2 == 0:
            return losses.copy()
        return losses + math.sqrt(self.sigma_l2) * rng.standard_normal(losses.shape)


# --------------------------------------------------------------------------
# random streams


@dataclass
class Streams:
    """Named substreams of one master seed."""

    seed: int
    messages: np.random.Generator = field(init=False, repr=False)
    perturbation: np.random.Generator = field(init=False, repr=False)
    channel: np.random.Generator = field(init=False, repr=False)
    feedback: np.random.Generator = field(init=False, repr=False)

    def __post_init__(self):
        self.messages = substream(self.seed, "messages")
        self.perturbation = substream(self.seed, "perturbation")
        self.channel = substream(self.seed, "channel")
        self.feedback = substream(self.seed, "feedback")


def as_streams(rng):
    if isinstance(rng, Streams):
        return rng
    return Streams(int(rng))


# --------------------------------------------------------------------------
# the system


class CommSystem:
    """Transmitter/receiver pair for ``n_messages`` messages over ``n_channel`` uses.

    Transmitter: one-hot(M) -> dense M ELU -> dense 2N linear -> per-row
    normalisation to ``||x||^2 = N``. Receiver: 2N -> dense M ReLU -> dense M
    softmax; on Rayleigh fading a gain-estimation stage (2N -> 10N ReLU -> 2)
    equalises the input first.
    """

    def __init__(self, n_messages=256, n_channel=4, channel_kind="awgn", sigma_c2=0.02,
                 learning_rate=1e-3, optimizer="adam", seed=0):
        if n_messages < 2 or n_channel < 1:
            raise ConfigurationError("need n_messages >= 2 and n_channel >= 1")
        if not 0 < sigma_c2 < 1:
            raise ConfigurationError("sigma_c2 must lie in (0, 1)")
        self.n_messages = int(n_messages)
        self.n_channel = int(n_channel)
        self.channel_kind = channel_kind
        self.sigma_c2 = float(sigma_c2)
        init = substream(seed, "init")
        M, N = self.n_messages, self.n_channel
        self.transmitter = Mlp((M, M, 2 * N), ("elu", "linear"), rng=init)
        if channel_kind == "awgn":
            self.receiver = Mlp((2 * N, M, M), ("relu", "softmax"), rng=init)
        elif channel_kind == "rbf":
            self.receiver = RtnReceiver(N, 10 * N, M, M, "softmax", rng=init)
        else:
            raise ConfigurationError(f"unknown channel kind {channel_kind!r}")
        self.tx_opt = make_optimizer(optimizer, learning_rate)
        self.rx_opt = make_optimizer(optimizer, learning_rate)

    # -- transmitter -------------------------------------------------------

    def _tx_table(self):
        """Normalised symbols for every message, plus what backprop needs."""
        eye = np.eye(self.n_messages)
        z, cache = self.transmitter.forward(eye, return_cache=True)
        norms = np.linalg.norm(z, axis=1, keepdims=True)
        x = math.sqrt(self.n_channel) * z / norms
        return x, (cache, z, norms)

    def check_messages(self, messages):
        messages = np.asarray(messages)
        if messages.ndim != 1 or not np.issubdtype(messages.dtype, np.integer):
            raise ValueError("messages must be a 1-d integer array")
        if messages.size and (messages.min() < 0 or messages.max() >= self.n_messages):
            raise ValueError(f"messages must lie in [0, {self.n_messages - 1}]")
        return messages

    def encode(self, messages):
        messages = self.check_messages(messages)
        x, _ = self._tx_table()
        return to_complex(x[messages])

    def constellation(self):
        return to_complex(self._tx_table()[0])

    def tx_backward(self, messages, upstream):
        """Param gradient of ``sum_i <upstream_i, x(m_i)>`` with ``x`` in real layout."""
        x, (cache, z, norms) = self._tx_table()
        per_msg = np.zeros_like(x)
        np.add.at(per_msg, messages, upstream)
        return self.transmitter.backward(cache, _normalize_backward(x, norms, per_msg, self.n_channel))

    # -- receiver ----------------------------------------------------------

    def predict_proba(self, Y):
        Y = np.asarray(Y)
        if Y.ndim != 2 or Y.shape[1] != self.n_channel:
            raise ConfigurationError(f"received block must have {self.n_channel} columns")
        return self.receiver.forward(to_real(Y))

    def decode(self, Y):
        # argmax returns the lowest index on ties
        return np.argmax(self.predict_proba(Y), axis=1)


def _normalize_backward(x, norms, g, n):
    """Backprop through ``x = sqrt(n) z / ||z||`` row-wise."""
    u = x / math.sqrt(n)
    return (math.sqrt(n) / norms) * (g - u * np.sum(u * g, axis=1, keepdims=True))


def tx_forward(system, messages):
    return system.encode(messages)


def rx_forward(system, Y):
    return system.predict_proba(Y)


def ce_losses(probs, messages):
    p = probs[np.arange(len(messages)), messages]
    if np.any(p < PROB_FLOOR):
        warnings.warn("zero probability on the true message, clamped before log", RuntimeWarning)
        p = np.maximum(p, PROB_FLOOR)
    return -np.log(p)


def policy_gradient_upstream(losses, x_p, mean, sigma2, scale=1.0):
    """Per-row upstream for the score-function gradient of a Gaussian policy.

    The policy sends ``x_p = scale * mean + w`` with ``w ~ CN(0, sigma2 I)``.
    Returns, in real layout, ``(2 l_i / sigma2) * scale * (x_p_i - scale * mean_i) / S``
    so that one backward pass through ``mean`` yields the batch-mean gradient.
    """
    losses = np.asarray(losses, dtype=float)
    diff = to_real(x_p - scale * mean)
    return (2.0 * scale / sigma2) * losses[:, None] * diff / len(losses)


def grad_frobenius_sq(system, messages=None):
    """Per-message ``||d x(m) / d theta_T||_F^2`` of the normalised transmitter output."""
    x, (cache, z, norms) = system._tx_table()
    total = np.zeros(system.n_messages)
    for k in range(x.shape[1]):
        e = np.zeros_like(x)
        e[:, k] = 1.0
        total += system.transmitter.per_example_grad_sq(
            cache, _normalize_backward(x, norms, e, system.n_channel))
    if messages is None:
        return total
    return total[system.check_messages(messages)]


# --------------------------------------------------------------------------
# training steps


def train_receiver_step(system, channel, batch_size, rng):
    streams = as_streams(rng)
    messages = streams.messages.integers(0, system.n_messages, batch_size)
    X = system.encode(messages)
    Y = channel.transmit(X, streams.channel)
    probs, cache = system.receiver.forward(to_real(Y), return_cache=True)
    loss = float(np.mean(ce_losses(probs, messages)))
    if not np.isfinite(loss):
        raise TrainingError("non-finite receiver loss")
    grad = system.receiver.backward_ce(cache, messages)
    system.rx_opt.step(system.receiver, grad)
    return loss


def transmitter_gradient(system, channel, transport, batch_size, rng, clip_losses=False):
    """One policy-gradient estimate. Returns ``(grad, true_losses, returned_losses)``."""
    streams = as_streams(rng)
    messages = streams.messages.integers(0, system.n_messages, batch_size)
    X = system.encode(messages)
    X_p = X + complex_normal(streams.perturbation, X.shape, system.sigma_c2)
    Y = channel.transmit(X_p, streams.channel)
    losses = ce_losses(system.predict_proba(Y), messages)
    if clip_losses:
        losses = np.clip(losses, 0.0, 1.0)
    returned = np.asarray(transport(losses, streams.feedback), dtype=float)
    if returned.shape != losses.shape:
        raise TrainingError("transport changed the number of losses")
    upstream = policy_gradient_upstream(returned, X_p, X, system.sigma_c2)
    return system.tx_backward(messages, upstream), losses, returned


def train_transmitter_step(system, channel, transport, batch_size, rng, clip_losses=False):
    grad, losses, returned = transmitter_gradient(system, channel, transport, batch_size, rng, clip_losses)
    system.tx_opt.step(system.transmitter, grad)
    return float(np.mean(returned))


@dataclass
class TrainingLog:
    rows: list = field(default_factory=list)

    def append(self, iteration, phase, loss, elapsed):
        self.rows.append({"iteration": iteration, "phase": phase, "loss": loss, "elapsed": elapsed})

    def losses(self, phase):
        return np.array([r["loss"] for r in self.rows if r["phase"] == phase])


def lr_schedule(initial, final, n):
    """Geometric interpolation from ``initial`` to ``final`` over ``n`` steps."""
    if final is None or n <= 1:
        return np.full(max(n, 1), initial)
    return initial * (final / initial) ** (np.arange(n) / (n - 1))


def alternating_train(system, channel, transport=None, n_iter=1000, batch_size=4096, seed=0,
                      rx_steps=1, tx_steps=1, clip_losses=False, plateau_tol=None,
                      plateau_window=100, log=None, final_learning_rate=None):
    """Alternate receiver and transmitter updates for ``n_iter`` outer iterations.

    Stops early when ``plateau_tol`` is set and the relative improvement of the
    windowed mean receiver loss falls below it. Aborts when the receiver loss
    stays above ``10 ln M`` for 100 consecutive iterations. With
    ``final_learning_rate`` both optimizers decay geometrically to it.
    """
    transport = PerfectTransport() if transport is None else transport
    streams = as_streams(seed)
    log = TrainingLog() if log is None else log
    start = time.perf_counter()
    blowup = 10.0 * math.log(system.n_messages)
    bad = 0
    rx_hist = []
    schedule = lr_schedule(system.rx_opt.learning_rate, final_learning_rate, n_iter)
    for it in range(n_iter):
        system.rx_opt.learning_rate = system.tx_opt.learning_rate = schedule[it]
        for _ in range(rx_steps):
            loss = train_receiver_step(system, channel, batch_size, streams)
            log.append(it, "receiver", loss, time.perf_counter() - start)
        rx_hist.append(loss)
        for _ in range(tx_steps):
            tx_loss = train_transmitter_step(system, channel, transport, batch_size, streams, clip_losses)
            log.append(it, "transmitter", tx_loss, time.perf_counter() - start)
        bad = bad + 1 if loss > blowup else 0
        if bad >= 100:
            raise TrainingError(f"receiver loss above {blowup:.2f} for 100 iterations at iteration {it}")
        if plateau_tol is not None and len(rx_hist) >= 2 * plateau_window and (it + 1) % plateau_window == 0:
            prev = np.mean(rx_hist[-2 * plateau_window:-plateau_window])
            cur = np.mean(rx_hist[-plateau_window:])
            if (prev - cur) / prev < plateau_tol:
                logger.info("plateau reached at iteration %d", it)
                break
    return system, log


# --------------------------------------------------------------------------
# Monte-Carlo evaluation


def wilson_interval(errors, n, z=1.959963984540054):
    p = errors / n
    denom = 1 + z * z / n
    centre = (p + z * z / (2 * n)) / denom
    half = z * math.sqrt(p * (1 - p) / n + z * z / (4 * n * n)) / denom
    return centre - half, centre + half


def _n_threads():
    try:
        return max(1, int(os.environ.get("AIRGAP_AE_THREADS", "1")))
    except ValueError:
        return 1


def run_shards(fn, n_samples, seed, label, shard_size=50_000):
    """Evaluate ``fn(size, rng)`` over fixed shards; order of results is shard order.

    Shard boundaries depend only on ``n_samples`` and ``shard_size``, so the
    result does not depend on how many threads run them.
    """
    sizes = [shard_size] * (n_samples // shard_size)
    if n_samples % shard_size:
        sizes.append(n_samples % shard_size)
    jobs = [(s, substream(seed, label, i)) for i, s in enumerate(sizes)]
    threads = _n_threads()
    if threads == 1 or len(jobs) == 1:
        return [fn(s, r) for s, r in jobs]
    with ThreadPoolExecutor(max_workers=threads) as pool:
        return list(pool.map(lambda job: fn(*job), jobs))


def evaluate_bler(modem, channel, n_samples=100_000, seed=0, n_messages=None):
    """Monte-Carlo block error rate with a Wilson 95% half-width.

    ``modem`` needs ``encode(messages) -> X`` and ``decode(Y) -> messages``.
    Returns ``(bler, halfwidth)``.
    """
    if n_samples < 1:
        raise ValueError("n_samples must be >= 1")
    M = n_messages or modem.n_messages

    def shard(size, rng):
        m = rng.integers(0, M, size)
        Y = channel.transmit(modem.encode(m), rng)
        return int(np.count_nonzero(modem.decode(Y) != m))

    errors = sum(run_shards(shard, n_samples, seed, f"bler/{channel.kind}/{channel.snr_db!r}"))
    lo, hi = wilson_interval(errors, n_samples)
    return errors / n_samples, (hi - lo) / 2


def bler_curve(modem, channel, snr_grid, n_samples=100_000, seed=0):
    return [(snr,) + evaluate_bler(modem, channel.at_snr(snr), n_samples, seed) for snr in snr_grid]
