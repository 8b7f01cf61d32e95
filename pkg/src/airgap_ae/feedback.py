"""Learned two-way link for real numbers in [0, 1].

Two devices, A and B, each hold a transmitter and a receiver. Receivers
learn by regression on a training batch that both sides regenerate from a
shared seed. Transmitters learn by policy gradient, and the per-example
squared errors they need travel back over the opposite direction of the
same learned link.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from ._validation import check_unit_interval
from .channels import complex_normal, substream, to_complex, to_real
from .comm import lr_schedule, policy_gradient_upstream, run_shards
from .nn import ConfigurationError, Mlp, TrainingError, make_optimizer
from .rtn import RtnReceiver

SCALE_FLOOR = 1e-12
DIRECTIONS = ("AB", "BA")


class TrainingSource:
    """Uniform reals regenerated from ``(seed, step)``; equal on both devices."""

    def __init__(self, seed):
        self.seed = int(seed)

    def draw(self, step, size):
        return substream(self.seed, "shared-source", step).uniform(0.0, 1.0, size)


@dataclass
class Device:
    name: str
    transmitter: Mlp
    receiver: object
    tx_opt: object
    rx_opt: object
    source: TrainingSource
    ema_decay: float = 0.999
    scale_ema: float = 0.0
    scale_updates: int = 0

    def record_scale(self, s):
        self.scale_ema = self.ema_decay * self.scale_ema + (1 - self.ema_decay) * s
        self.scale_updates += 1

    def frozen_scale(self):
        if self.scale_updates == 0:
            # before any training step: RMS amplitude over a uniform grid of inputs
            z = self.transmitter.forward(np.linspace(0.0, 1.0, 1001)[:, None])
            return max(math.sqrt(np.mean(z * z) * 2), SCALE_FLOOR)
        # bias-corrected moving average, as in Adam's moment estimates
        return self.scale_ema / (1 - self.ema_decay**self.scale_updates)


class FeedbackSystem:
    """Devices A and B for ``n_uses`` complex channel uses per real number.

    Transmitter: 1 -> dense 10N ELU -> dense 2N linear -> energy normalisation
    (batch average during training, frozen scale at inference). Receiver on
    AWGN: 2N -> dense 10N ReLU -> dense 1 linear; on Rayleigh fading a gain
    estimation stage equalises the input first.
    """

    def __init__(self, n_uses=4, channel_kind="awgn", sigma_f2=0.02, learning_rate=1e-3,
                 optimizer="adam", seed=0, ema_decay=0.999):
        if not 0 < sigma_f2 < 1:
            raise ConfigurationError("sigma_f2 must lie in (0, 1)")
        if channel_kind not in ("awgn", "rbf"):
            raise ConfigurationError(f"unknown channel kind {channel_kind!r}")
        self.n_uses = int(n_uses)
        self.channel_kind = channel_kind
        self.sigma_f2 = float(sigma_f2)
        self.seed = int(seed)
        N = self.n_uses
        self.devices = {}
        for name in ("A", "B"):
            init = substream(seed, f"init/{name}")
            tx = Mlp((1, 10 * N, 2 * N), ("elu", "linear"), rng=init)
            if channel_kind == "awgn":
                rx = Mlp((2 * N, 10 * N, 1), ("relu", "linear"), rng=init)
            else:
                rx = RtnReceiver(N, 10 * N, 10 * N, 1, "linear", rng=init)
            self.devices[name] = Device(
                name, tx, rx, make_optimizer(optimizer, learning_rate),
                make_optimizer(optimizer, learning_rate), TrainingSource(seed), ema_decay,
            )

    def pair(self, direction):
        if direction not in DIRECTIONS:
            raise ValueError(f"direction must be one of {DIRECTIONS}")
        return self.devices[direction[0]], self.devices[direction[1]]

    # -- transmitter -------------------------------------------------------

    def _tx_train(self, device, r):
        """Batch-normalised encoding. Returns ``(X, cache, z, s)``."""
        z, cache = device.transmitter.forward(np.asarray(r, dtype=float)[:, None], return_cache=True)
        s = math.sqrt(np.mean(np.sum(z * z, axis=1)) / self.n_uses)
        if s < SCALE_FLOOR:
            s = SCALE_FLOOR
        device.record_scale(s)
        return to_complex(z / s), cache, z, s

    def encode(self, device, r, training=False):
        device = self.devices[device] if isinstance(device, str) else device
        r = check_unit_interval(r)
        if training:
            return self._tx_train(device, r)[0]
        z = device.transmitter.forward(r[:, None])
        return to_complex(z / device.frozen_scale())

    def _batchnorm_backward(self, z, s, g):
        # x = z / s with s^2 = sum ||z_j||^2 / (S N)
        S = z.shape[0]
        return g / s - np.sum(g * z) * z / (s**3 * S * self.n_uses)

    # -- receiver ----------------------------------------------------------

    def decode(self, device, Y, clip=False, gain=None):
        device = self.devices[device] if isinstance(device, str) else device
        Y = np.asarray(Y)
        if Y.ndim != 2 or Y.shape[1] != self.n_uses:
            raise ConfigurationError(f"received block must have {self.n_uses} columns")
        x = to_real(Y)
        if gain is not None:
            if not isinstance(device.receiver, RtnReceiver):
                raise ConfigurationError("a forced gain needs the fading receiver")
            out = device.receiver.forward(x, gain=gain)
        else:
            out = device.receiver.forward(x)
        r_hat = out[:, 0]
        return np.clip(r_hat, 0.0, 1.0) if clip else r_hat


def ftx_forward(system, device, r, training=False):
    return system.encode(device, r, training)


def frx_forward(system, device, Y, clip=False):
    return system.decode(device, Y, clip)


def loss_transport(system, direction, losses, channel, rng):
    """Carry a vector of values in [0, 1] over one learned direction.

    The decoded values are returned unclipped.
    """
    tx, rx = system.pair(direction)
    losses = check_unit_interval(losses)
    Y = channel.transmit(system.encode(tx, losses), rng)
    return system.decode(rx, Y)


class LearnedTransport:
    """Feedback transport backed by a trained :class:`FeedbackSystem`."""

    name = "learned"

    def __init__(self, system, channel, direction="BA"):
        self.system = system
        self.channel = channel
        self.direction = direction

    def __call__(self, losses, rng):
        return loss_transport(self.system, self.direction, np.clip(losses, 0.0, 1.0), self.channel, rng)


# --------------------------------------------------------------------------
# training


@dataclass
class FeedbackStreams:
    seed: int
    step: int = 0
    channel: np.random.Generator = field(init=False, repr=False)
    perturbation: dict = field(init=False, repr=False)

    def __post_init__(self):
        self.channel = substream(self.seed, "feedback/channel")
        self.perturbation = {d: substream(self.seed, f"feedback/perturbation/{d}") for d in "AB"}

    def next_step(self):
        self.step += 1
        return self.step


def _as_streams(rng):
    return rng if isinstance(rng, FeedbackStreams) else FeedbackStreams(int(rng))


def train_receiver(system, direction, channel, batch_size, rng):
    """One regression step on the receiving device. Returns the batch MSE."""
    streams = _as_streams(rng)
    tx, rx = system.pair(direction)
    step = streams.next_step()
    X = system._tx_train(tx, tx.source.draw(step, batch_size))[0]
    Y = channel.transmit(X, streams.channel)
    out, cache = rx.receiver.forward(to_real(Y), return_cache=True)
    r = rx.source.draw(step, batch_size)
    err = out[:, 0] - r
    mse = float(np.mean(err * err))
    if not math.isfinite(mse):
        raise TrainingError("non-finite receiver MSE")
    rx.rx_opt.step(rx.receiver, rx.receiver.backward(cache, (2.0 * err / batch_size)[:, None]))
    return mse


def transmitter_gradient(system, direction, channel, batch_size, rng, transport_back=None):
    """Policy-gradient estimate for the sending device of ``direction``.

    ``transport_back(losses, rng)`` returns the losses as seen by the sender;
    by default they go over the opposite learned direction.
    """
    streams = _as_streams(rng)
    tx, rx = system.pair(direction)
    step = streams.next_step()
    X, cache, z, s = system._tx_train(tx, tx.source.draw(step, batch_size))
    a = math.sqrt(1.0 - system.sigma_f2)
    W = complex_normal(streams.perturbation[tx.name], X.shape, system.sigma_f2)
    X_p = a * X + W
    Y = channel.transmit(X_p, streams.channel)
    r_hat = system.decode(rx, Y)
    r = rx.source.draw(step, batch_size)
    losses = np.clip((r - r_hat) ** 2, 0.0, 1.0)
    if transport_back is None:
        returned = loss_transport(system, direction[::-1], losses, channel, streams.channel)
    else:
        returned = np.asarray(transport_back(losses, streams.channel), dtype=float)
    upstream = policy_gradient_upstream(returned, X_p, X, system.sigma_f2, scale=a)
    grad = tx.transmitter.backward(cache, system._batchnorm_backward(z, s, upstream))
    return grad, losses, returned


def train_transmitter(system, direction, channel, batch_size, rng, transport_back=None):
    tx, _ = system.pair(direction)
    grad, losses, returned = transmitter_gradient(system, direction, channel, batch_size, rng, transport_back)
    tx.tx_opt.step(tx.transmitter, grad)
    return float(np.mean(losses))


def main_loop(system, channel, n_outer=100, inner_steps=50, batch_size=4096, seed=0,
              plateau_tol=None, plateau_window=10, transport_back=None, final_learning_rate=None):
    """Alternate (transmitter A, receiver B) and (transmitter B, receiver A) blocks.

    With ``final_learning_rate`` the rate of every optimizer decays
    geometrically to that value over the outer iterations. Returns
    ``(system, log)`` with one log row per step pair. Aborts when the receiver
    MSE of a direction exceeds 10 for 100 consecutive steps.
    """
    streams = _as_streams(seed)
    log = []
    bad = {d: 0 for d in DIRECTIONS}
    history = {d: [] for d in DIRECTIONS}
    opts = [o for dev in system.devices.values() for o in (dev.tx_opt, dev.rx_opt)]
    schedule = lr_schedule(opts[0].learning_rate, final_learning_rate, n_outer)
    for outer in range(n_outer):
        for opt in opts:
            opt.learning_rate = schedule[outer]
        for direction in DIRECTIONS:
            for inner in range(inner_steps):
                tx_loss = train_transmitter(system, direction, channel, batch_size, streams, transport_back)
                mse = train_receiver(system, direction, channel, batch_size, streams)
                log.append({"outer": outer, "direction": direction, "step": inner,
                            "tx_loss": tx_loss, "mse": mse})
                bad[direction] = bad[direction] + 1 if mse > 10 else 0
                if bad[direction] >= 100:
                    raise TrainingError(f"MSE above 10 for 100 steps on {direction} at outer iteration {outer}")
            history[direction].append(mse)
        if plateau_tol is not None and outer + 1 >= 2 * plateau_window:
            if all(_plateaued(history[d], plateau_window, plateau_tol) for d in DIRECTIONS):
                break
    return system, log


def _plateaued(values, window, tol):
    prev = np.mean(values[-2 * window:-window])
    cur = np.mean(values[-window:])
    return (prev - cur) / prev < tol


def evaluate_mse(system, direction, channel, n_samples=100_000, seed=0):
    """Monte-Carlo MSE of the clipped decoder output, with a 95% half-width."""
    tx, rx = system.pair(direction)

    def shard(size, rng):
        r = rng.uniform(0.0, 1.0, size)
        Y = channel.transmit(system.encode(tx, r), rng)
        e = (system.decode(rx, Y, clip=True) - r) ** 2
        return e.sum(), (e * e).sum()

    parts = run_shards(shard, n_samples, seed, f"mse/{direction}/{channel.kind}/{channel.snr_db!r}")
    s1 = sum(p[0] for p in parts)
    s2 = sum(p[1] for p in parts)
    mean = s1 / n_samples
    var = max(s2 / n_samples - mean * mean, 0.0)
    return mean, 1.959963984540054 * math.sqrt(var / n_samples)


def evaluate_link_mse(link, channel, n_samples=100_000, seed=0):
    """Same estimator for any object with ``encode(r)`` / ``decode(Y)`` (e.g. analog links)."""

    def shard(size, rng):
        r = rng.uniform(0.0, 1.0, size)
        e = (link.decode(channel.transmit(link.encode(r), rng)) - r) ** 2
        return e.sum(), (e * e).sum()

    parts = run_shards(shard, n_samples, seed, f"mse/link/{channel.kind}/{channel.snr_db!r}")
    s1 = sum(p[0] for p in parts)
    s2 = sum(p[1] for p in parts)
    mean = s1 / n_samples
    var = max(s2 / n_samples - mean * mean, 0.0)
    return mean, 1.959963984540054 * math.sqrt(var / n_samples)
