"""scikit-learn style front ends for the learned systems.

Training data is generated internally (uniform messages or uniform reals),
so ``fit`` ignores ``X`` and ``y``; they are accepted so the estimators can
sit in tools that expect the usual signature.
"""

from __future__ import annotations

import numpy as np
from sklearn.base import BaseEstimator
from sklearn.utils.validation import check_is_fitted

from ._validation import check_block, check_messages, check_unit_interval
from .channels import Channel
from .comm import (CommSystem, GaussianTransport, PerfectTransport, alternating_train, bler_curve,
                   evaluate_bler)
from .config import parse_transport
from .feedback import FeedbackSystem, LearnedTransport, evaluate_mse, main_loop
from .nn import ConfigurationError


class AlternatingAutoencoder(BaseEstimator):
    """Message autoencoder trained without a channel model.

    ``transport`` is ``"perfect"``, ``"gaussian:<sigma_l2>"`` or ``"learned"``;
    the latter needs a fitted :class:`FeedbackLink` as ``feedback``.
    """

    def __init__(self, n_messages=256, n_channel=4, channel="awgn", snr_db=10.0, sigma_c2=0.02,
                 batch_size=4096, n_iter=1500, learning_rate=1e-3, final_learning_rate=None,
                 rx_steps=1, tx_steps=1, transport="perfect", clip_losses=False, plateau_tol=None,
                 feedback=None, optimizer="adam", random_state=0):
        self.n_messages = n_messages
        self.n_channel = n_channel
        self.channel = channel
        self.snr_db = snr_db
        self.sigma_c2 = sigma_c2
        self.batch_size = batch_size
        self.n_iter = n_iter
        self.learning_rate = learning_rate
        self.final_learning_rate = final_learning_rate
        self.rx_steps = rx_steps
        self.tx_steps = tx_steps
        self.transport = transport
        self.clip_losses = clip_losses
        self.plateau_tol = plateau_tol
        self.feedback = feedback
        self.optimizer = optimizer
        self.random_state = random_state

    def _make_transport(self):
        kind, sigma_l2 = parse_transport(self.transport)
        if kind == "perfect":
            return PerfectTransport()
        if kind == "gaussian":
            return GaussianTransport(sigma_l2)
        if self.feedback is None:
            raise ConfigurationError("transport='learned' needs a fitted FeedbackLink as feedback")
        return self.feedback.as_transport()

    def fit(self, X=None, y=None):
        self.channel_ = Channel(self.channel, self.snr_db)
        self.system_ = CommSystem(self.n_messages, self.n_channel, self.channel, self.sigma_c2,
                                  self.learning_rate, self.optimizer, seed=self.random_state)
        transport = self._make_transport()
        # the learned link clips to [0, 1] by construction; keep the comparison runs consistent
        clip = self.clip_losses or getattr(transport, "name", "") == "learned"
        _, self.log_ = alternating_train(
            self.system_, self.channel_, transport, n_iter=self.n_iter, batch_size=self.batch_size,
            seed=self.random_state, rx_steps=self.rx_steps, tx_steps=self.tx_steps, clip_losses=clip,
            plateau_tol=self.plateau_tol, final_learning_rate=self.final_learning_rate)
        return self

    @classmethod
    def from_system(cls, system, **params):
        est = cls(n_messages=system.n_messages, n_channel=system.n_channel, channel=system.channel_kind,
                  sigma_c2=system.sigma_c2, **params)
        est.system_ = system
        est.channel_ = Channel(system.channel_kind, est.snr_db)
        return est

    # encode/decode are what the Monte-Carlo evaluators call
    def encode(self, messages):
        check_is_fitted(self, "system_")
        return self.system_.encode(check_messages(messages, self.n_messages))

    def decode(self, Y):
        check_is_fitted(self, "system_")
        return self.system_.decode(check_block(Y, self.n_channel))

    def transform(self, messages):
        return self.encode(messages)

    def predict_proba(self, Y):
        check_is_fitted(self, "system_")
        return self.system_.predict_proba(check_block(Y, self.n_channel))

    def predict(self, Y):
        return self.decode(Y)

    def score(self, Y, messages):
        """Fraction of correctly decoded blocks."""
        return float(np.mean(self.predict(Y) == np.asarray(messages)))

    def bler(self, snr_db=None, n_samples=100_000, seed=0):
        check_is_fitted(self, "system_")
        channel = self.channel_ if snr_db is None else self.channel_.at_snr(snr_db)
        return evaluate_bler(self.system_, channel, n_samples, seed)

    def bler_curve(self, snr_grid, n_samples=100_000, seed=0):
        check_is_fitted(self, "system_")
        return bler_curve(self.system_, self.channel_, snr_grid, n_samples, seed)


class FeedbackLink(BaseEstimator):
    """Learned two-way link for reals in [0, 1] (devices A and B)."""

    def __init__(self, n_uses=4, channel="awgn", snr_db=10.0, sigma_f2=0.02, batch_size=4096,
                 n_outer=160, inner_steps=50, learning_rate=3e-3, final_learning_rate=1e-4,
                 plateau_tol=None, optimizer="adam", random_state=0):
        self.n_uses = n_uses
        self.channel = channel
        self.snr_db = snr_db
        self.sigma_f2 = sigma_f2
        self.batch_size = batch_size
        self.n_outer = n_outer
        self.inner_steps = inner_steps
        self.learning_rate = learning_rate
        self.final_learning_rate = final_learning_rate
        self.plateau_tol = plateau_tol
        self.optimizer = optimizer
        self.random_state = random_state

    def fit(self, X=None, y=None):
        self.channel_ = Channel(self.channel, self.snr_db)
        self.system_ = FeedbackSystem(self.n_uses, self.channel, self.sigma_f2, self.learning_rate,
                                      self.optimizer, seed=self.random_state)
        _, self.log_ = main_loop(self.system_, self.channel_, n_outer=self.n_outer,
                                 inner_steps=self.inner_steps, batch_size=self.batch_size,
                                 seed=self.random_state, plateau_tol=self.plateau_tol,
                                 final_learning_rate=self.final_learning_rate)
        return self

    @classmethod
    def from_system(cls, system, **params):
        est = cls(n_uses=system.n_uses, channel=system.channel_kind, sigma_f2=system.sigma_f2, **params)
        est.system_ = system
        est.channel_ = Channel(system.channel_kind, est.snr_db)
        return est

    def transform(self, r, device="A"):
        check_is_fitted(self, "system_")
        return self.system_.encode(device, check_unit_interval(r))

    def predict(self, Y, device="B", clip=True):
        check_is_fitted(self, "system_")
        return self.system_.decode(device, check_block(Y, self.n_uses), clip=clip)

    def mse(self, snr_db=None, direction="AB", n_samples=100_000, seed=0):
        check_is_fitted(self, "system_")
        channel = self.channel_ if snr_db is None else self.channel_.at_snr(snr_db)
        return evaluate_mse(self.system_, direction, channel, n_samples, seed)

    def as_transport(self, direction="BA", snr_db=None):
        check_is_fitted(self, "system_")
        channel = self.channel_ if snr_db is None else self.channel_.at_snr(snr_db)
        return LearnedTransport(self.system_, channel, direction)
