"""Independent reference computations used by several test modules."""

import math

import numpy as np

from airgap_ae.channels import complex_normal, substream
from airgap_ae.comm import policy_gradient_upstream


def toy_policy_gradient(transport, theta=0.3, target=1.0 + 0.5j, sigma2=0.02, batch=1000,
                        replications=200, seed=0):
    """Score-function estimates for a one-parameter transmitter.

    The transmitter emits ``x = theta`` on one complex channel use and the
    loss is ``|x_p - target|^2``. With ``x_p = x + w``, ``w ~ CN(0, sigma2)``,
    ``E[l] = (theta - Re target)^2 + (Im target)^2 + sigma2``, so the exact
    gradient is ``2 (theta - Re target)``. Returns ``(estimates, exact)``.
    """
    est = np.empty(replications)
    for r in range(replications):
        rng = substream(seed, "toy", r)
        x = np.full((batch, 1), theta + 0j)
        x_p = x + complex_normal(rng, x.shape, sigma2)
        losses = np.abs(x_p[:, 0] - target) ** 2
        returned = transport(losses, rng)
        upstream = policy_gradient_upstream(returned, x_p, x, sigma2)
        # dx/dtheta = 1 + 0j: only the real column contributes
        est[r] = upstream[:, 0].sum()
    return est, 2.0 * (theta - target.real)


def within_standard_errors(samples, value, k=3.0):
    se = samples.std(ddof=1) / math.sqrt(len(samples))
    return abs(samples.mean() - value) <= k * se, se


def naive_nearest(points, Y):
    """Double-loop minimum-distance decision, lowest index on ties."""
    pts = [list(map(complex, p)) for p in points]
    out = np.empty(len(Y), dtype=int)
    for i, y in enumerate(Y):
        y = list(map(complex, y))
        best, best_d = 0, math.inf
        for k, p in enumerate(pts):
            d = sum(abs(a - b) ** 2 for a, b in zip(y, p))
            if d < best_d:
                best, best_d = k, d
        out[i] = best
    return out
