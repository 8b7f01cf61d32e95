"""Receivers: plain dense receiver and the radio-transformer receiver.

Both expose the same surface as :class:`~airgap_ae.nn.Mlp` (``params``,
``n_params``, ``forward``, ``backward``, ``backward_ce``) so the optimizers
and training loops can treat them alike.
"""

from __future__ import annotations

import numpy as np

from .channels import to_complex, to_real
from .nn import ConfigurationError, Mlp

H_FLOOR = 1e-6


def guard_gain(h):
    mag = np.abs(h)
    small = mag < H_FLOOR
    if np.any(small):
        h = h.copy()
        m = mag[small]
        # keep the phase, add the floor to the magnitude
        phase = np.ones_like(h[small])
        nz = m > 0
        phase[nz] = h[small][nz] / m[nz]
        h[small] = phase * (m + H_FLOOR)
    return h


class RtnReceiver:
    """Estimate a complex gain from ``y``, divide it out, then classify/regress.

    Parameters live in one buffer: the estimation network first, then the
    downstream network. The estimator's output bias starts at ``1 + 0j``.
    """

    def __init__(self, n_uses, estimator_hidden, hidden, n_out, final_activation, rng=None, params=None):
        self.n_uses = n_uses
        est_dims = (2 * n_uses, estimator_hidden, 2)
        disc_dims = (2 * n_uses, hidden, n_out)
        k = sum(a * b + b for a, b in zip(est_dims[:-1], est_dims[1:]))
        total = k + sum(a * b + b for a, b in zip(disc_dims[:-1], disc_dims[1:]))
        if params is None:
            params = np.zeros(total)
            fresh = True
        else:
            if params.shape != (total,):
                raise ConfigurationError(f"expected {total} params, got {params.shape}")
            fresh = False
        self.params = params
        self.n_params = total
        self._split = k
        self.estimator = Mlp(est_dims, ("relu", "linear"), params=params[:k])
        self.discriminator = Mlp(disc_dims, ("relu", final_activation), params=params[k:])
        if fresh and rng is not None:
            self.estimator.init_glorot(rng)
            self.discriminator.init_glorot(rng)
            self.estimator.bias(1)[:] = (1.0, 0.0)

    @property
    def layer_dims(self):
        return self.discriminator.layer_dims

    def forward(self, x, return_cache=False, gain=None):
        """``gain`` overrides the estimated channel gain (testing and genie runs)."""
        x = np.asarray(x, dtype=float)
        if x.ndim != 2 or x.shape[1] != 2 * self.n_uses:
            raise ConfigurationError(f"input of shape {x.shape} does not match {2 * self.n_uses} reals")
        y = to_complex(x)
        if gain is None:
            h_real, est_cache = self.estimator.forward(x, return_cache=True)
            h = to_complex(h_real)[:, 0]
        else:
            est_cache = None
            h = np.broadcast_to(np.asarray(gain, dtype=complex), (x.shape[0],)).copy()
        h = guard_gain(h)
        z = y / h[:, None]
        out, disc_cache = self.discriminator.forward(to_real(z), return_cache=True)
        if return_cache:
            return out, (est_cache, disc_cache, z, h)
        return out

    def _combine(self, cache, disc_grad, dz_real):
        est_cache, _, z, h = cache
        grad = np.zeros(self.n_params)
        grad[self._split:] = disc_grad
        if est_cache is not None:
            # z = y / h  =>  dL/dh = -sum_k g_k conj(z_k) / conj(h), g = dL/dRe z + j dL/dIm z
            g = to_complex(dz_real)
            dh = -np.sum(g * np.conj(z), axis=1) / np.conj(h)
            grad[: self._split] = self.estimator.backward(est_cache, np.stack([dh.real, dh.imag], axis=1))
        return grad

    def backward(self, cache, upstream):
        disc_grad, dz = self.discriminator.backward(cache[1], upstream, return_input_grad=True)
        return self._combine(cache, disc_grad, dz)

    def backward_ce(self, cache, labels):
        disc_grad, dz = self.discriminator.backward_ce(cache[1], labels, return_input_grad=True)
        return self._combine(cache, disc_grad, dz)
