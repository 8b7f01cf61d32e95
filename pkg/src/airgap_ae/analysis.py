"""How noisy loss feedback affects the transmitter's gradient estimator.

With returned losses ``l + eps``, ``eps ~ N(0, sigma_l2)``, the batch gradient
is linear in the losses, so for every replication

    grad_noisy = grad_clean + sqrt(sigma_l2) * grad(eps_unit)

and a whole grid of noise levels is measured from two backward passes on the
same batch. ``V`` is the mean squared distance of the noisy estimate to the
mean clean estimate.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from .channels import complex_normal, substream
from .comm import (CommSystem, GaussianTransport, PerfectTransport, Streams, _normalize_backward,
                   alternating_train, ce_losses, evaluate_bler, grad_frobenius_sq,
                   policy_gradient_upstream)


@dataclass
class VarianceReport:
    sigma_l2: np.ndarray
    v: np.ndarray
    v_stderr: np.ndarray
    clean_variance: float
    d_norm_sq: float
    predicted_b: np.ndarray
    batch_size: int
    replications: int
    stage: str = ""
    extra: dict = field(default_factory=dict)

    def predicted_v(self):
        """``A/S + sigma_l2 E||D||^2 / S`` with ``A/S`` measured on clean losses."""
        return self.clean_variance + self.sigma_l2 * self.d_norm_sq / self.batch_size

    def rows(self):
        return [(float(s), float(v), self.stage) for s, v in zip(self.sigma_l2, self.v)]


def _replication(system, channel, batch_size, seed, rep):
    streams = Streams(seed)
    # one independent stream family per replication
    streams.messages = substream(seed, "var/messages", rep)
    streams.perturbation = substream(seed, "var/perturbation", rep)
    streams.channel = substream(seed, "var/channel", rep)
    streams.feedback = substream(seed, "var/feedback", rep)
    m = streams.messages.integers(0, system.n_messages, batch_size)
    X = system.encode(m)
    X_p = X + complex_normal(streams.perturbation, X.shape, system.sigma_c2)
    Y = channel.transmit(X_p, streams.channel)
    losses = ce_losses(system.predict_proba(Y), m)
    eps = streams.feedback.standard_normal(batch_size)
    g_clean = system.tx_backward(m, policy_gradient_upstream(losses, X_p, X, system.sigma_c2))
    g_eps = system.tx_backward(m, policy_gradient_upstream(eps, X_p, X, system.sigma_c2))
    return g_clean, g_eps


def gradient_replications(system, channel, batch_size=1000, replications=200, seed=0):
    """Clean gradients and unit-noise gradients, one row per replication."""
    pairs = [_replication(system, channel, batch_size, seed, r) for r in range(replications)]
    return np.array([p[0] for p in pairs]), np.array([p[1] for p in pairs])


def variance_curve(system, channel, sigma_l2_grid, batch_size=1000, replications=200, seed=0, stage=""):
    if replications < 2:
        raise ValueError("need at least 2 replications")
    G, E = gradient_replications(system, channel, batch_size, replications, seed)
    mean_clean = G.mean(axis=0)
    C = G - mean_clean
    cc = np.einsum("ij,ij->i", C, C)
    ce = np.einsum("ij,ij->i", C, E)
    ee = np.einsum("ij,ij->i", E, E)
    grid = np.asarray(sigma_l2_grid, dtype=float)
    per_rep = cc[None, :] + 2 * np.sqrt(grid)[:, None] * ce[None, :] + grid[:, None] * ee[None, :]
    v = per_rep.mean(axis=1)
    se = per_rep.std(axis=1, ddof=1) / math.sqrt(replications)
    # E||D||^2 from per-example score functions (independent of the replications above)
    d2 = score_norm_sq(system, max(20_000, 4 * batch_size), seed)
    b = np.array([estimate_B_closed_form(system, s) for s in grid])
    return VarianceReport(grid, v, se, float(cc.mean()), d2, b, batch_size, replications, stage,
                          {"noise_slope_mc": float(ee.mean())})


def estimate_V(system, channel, sigma_l2, batch_size=1000, replications=200, seed=0):
    return float(variance_curve(system, channel, [sigma_l2], batch_size, replications, seed).v[0])


def score_norm_sq(system, n_samples=4000, seed=0):
    """Monte-Carlo ``E||D||^2`` with ``D = grad_theta log pi(x_p | m)``."""
    rng = substream(seed, "var/score")
    m = rng.integers(0, system.n_messages, n_samples)
    eye = np.eye(system.n_messages)[m]
    z, cache = system.transmitter.forward(eye, return_cache=True)
    norms = np.linalg.norm(z, axis=1, keepdims=True)
    x = math.sqrt(system.n_channel) * z / norms
    w = complex_normal(rng, (n_samples, system.n_channel), system.sigma_c2)
    upstream = (2.0 / system.sigma_c2) * np.concatenate([w.real, w.imag], axis=1)
    per = system.transmitter.per_example_grad_sq(
        cache, _normalize_backward(x, norms, upstream, system.n_channel))
    return float(per.mean())


def estimate_B_closed_form(system, sigma_l2, messages=None):
    """Noise term ``B = sigma_l2 E||D||^2`` in closed form.

    For ``w ~ CN(0, sigma_c2 I)`` each real component has variance
    ``sigma_c2 / 2``, so ``E||D||^2 = (2 / sigma_c2) E||grad_theta f(m)||_F^2``.
    Divide by the batch size to compare with ``V``.
    """
    frob = grad_frobenius_sq(system, messages)
    return float(sigma_l2 * 2.0 / system.sigma_c2 * frob.mean())


def fit_affine(sigma_l2, v):
    """Least-squares ``v = intercept + slope * sigma_l2``; returns ``(intercept, slope, r2)``."""
    A = np.stack([np.ones_like(sigma_l2), sigma_l2], axis=1)
    coef, *_ = np.linalg.lstsq(A, v, rcond=None)
    pred = A @ coef
    ss_res = np.sum((v - pred) ** 2)
    ss_tot = np.sum((v - v.mean()) ** 2)
    return float(coef[0]), float(coef[1]), float(1 - ss_res / ss_tot) if ss_tot > 0 else 1.0


def loglog_r2(sigma_l2, v, intercept, slope):
    pred = intercept + slope * np.asarray(sigma_l2)
    lv, lp = np.log(v), np.log(pred)
    return float(1 - np.sum((lv - lp) ** 2) / np.sum((lv - lv.mean()) ** 2))


def bler_vs_feedback_mse_sweep(sigma_l2_grid, channel, n_iter=1500, batch_size=4096, seed=0,
                               n_messages=256, n_channel=4, sigma_c2=0.02, learning_rate=1e-3,
                               final_learning_rate=None, eval_samples=200_000, system_kwargs=None):
    """Train one system per noise level from identical seeds and report BLER.

    ``sigma_l2 = 0`` uses the perfect transport. Training aborts are recorded
    as ``nan`` with the error message. Returns rows ``(sigma_l2, bler, halfwidth, error)``.
    """
    rows = []
    for s in sigma_l2_grid:
        system = CommSystem(n_messages, n_channel, channel.kind, sigma_c2, learning_rate, seed=seed,
                            **(system_kwargs or {}))
        transport = PerfectTransport() if s == 0 else GaussianTransport(float(s))
        try:
            alternating_train(system, channel, transport, n_iter=n_iter, batch_size=batch_size, seed=seed,
                              final_learning_rate=final_learning_rate)
        except RuntimeError as exc:
            rows.append((float(s), float("nan"), float("nan"), str(exc)))
            continue
        bler, half = evaluate_bler(system, channel, eval_samples, seed=seed + 1)
        rows.append((float(s), bler, half, ""))
    return rows
