"""Dense feed-forward networks with analytic backpropagation.

Parameters of a network live in one flat float64 vector. The layout is, for
each layer ``i`` in order, the weight matrix of shape ``(dims[i], dims[i+1])``
in row-major order followed by the bias vector of length ``dims[i+1]``.
Optimizers update that vector in place, so any views handed out by
:meth:`Mlp.weights` and :meth:`Mlp.bias` stay valid.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

ACTIVATIONS = ("elu", "relu", "linear", "softmax")


class ConfigurationError(ValueError):
    """Raised for shape or configuration mismatches."""


class TrainingError(RuntimeError):
    """Raised when a training step produces non-finite values or diverges."""


def activation_apply(kind, x):
    if kind == "elu":
        return np.where(x > 0, x, np.expm1(np.minimum(x, 0.0)))
    if kind == "relu":
        return np.maximum(x, 0.0)
    if kind == "linear":
        return x
    if kind == "softmax":
        z = x - x.max(axis=-1, keepdims=True)
        e = np.exp(z)
        return e / e.sum(axis=-1, keepdims=True)
    raise ConfigurationError(f"unknown activation {kind!r}")


def activation_grad(kind, x):
    """Elementwise derivative at pre-activation ``x``.

    Softmax has no elementwise derivative; use :func:`softmax_backward`.
    """
    if kind == "elu":
        return np.where(x > 0, 1.0, np.exp(np.minimum(x, 0.0)))
    if kind == "relu":
        return (x > 0).astype(x.dtype)
    if kind == "linear":
        return np.ones_like(x)
    raise ConfigurationError(f"no elementwise derivative for {kind!r}")


def softmax_backward(p, upstream):
    # Jacobian-vector product of row-wise softmax: p * (g - <p, g>)
    return p * (upstream - np.sum(p * upstream, axis=-1, keepdims=True))


def n_params_for(layer_dims):
    return sum(a * b + b for a, b in zip(layer_dims[:-1], layer_dims[1:]))


class Mlp:
    """Feed-forward dense network.

    Parameters
    ----------
    layer_dims : sequence of int
        Widths ``[d_in, h_1, ..., d_out]``.
    activations : sequence of str
        One entry per layer, from ``ACTIVATIONS``. Softmax only as the last one.
    params : ndarray, optional
        Flat parameter buffer. It is used as-is (not copied) so that several
        networks can share slices of one buffer.
    rng : numpy.random.Generator, optional
        Used for Glorot-uniform initialisation when ``params`` is None.
    """

    def __init__(self, layer_dims, activations, params=None, rng=None):
        self.layer_dims = tuple(int(d) for d in layer_dims)
        self.activations = tuple(activations)
        if len(self.layer_dims) < 2 or any(d < 1 for d in self.layer_dims):
            raise ConfigurationError(f"bad layer dims {self.layer_dims}")
        if len(self.activations) != len(self.layer_dims) - 1:
            raise ConfigurationError("need one activation per layer")
        for i, a in enumerate(self.activations):
            if a not in ACTIVATIONS:
                raise ConfigurationError(f"unknown activation {a!r}")
            if a == "softmax" and i != len(self.activations) - 1:
                raise ConfigurationError("softmax is only allowed as the final activation")

        self._offsets = []
        off = 0
        for a, b in zip(self.layer_dims[:-1], self.layer_dims[1:]):
            self._offsets.append((off, off + a * b, off + a * b + b))
            off += a * b + b
        self.n_params = off

        if params is None:
            params = np.zeros(self.n_params)
            if rng is not None:
                self.init_glorot(rng, params)
        elif params.shape != (self.n_params,):
            raise ConfigurationError(f"expected {self.n_params} params, got {params.shape}")
        self.params = params

    def init_glorot(self, rng, params=None):
        params = self.params if params is None else params
        for (w0, b0, b1), a, b in zip(self._offsets, self.layer_dims[:-1], self.layer_dims[1:]):
            limit = np.sqrt(6.0 / (a + b))
            params[w0:b0] = rng.uniform(-limit, limit, size=a * b)
            params[b0:b1] = 0.0
        return params

    @property
    def n_layers(self):
        return len(self.activations)

    def weights(self, i):
        w0, b0, _ = self._offsets[i]
        return self.params[w0:b0].reshape(self.layer_dims[i], self.layer_dims[i + 1])

    def bias(self, i):
        _, b0, b1 = self._offsets[i]
        return self.params[b0:b1]

    def _check_input(self, x):
        x = np.asarray(x, dtype=float)
        if x.ndim != 2 or x.shape[1] != self.layer_dims[0]:
            raise ConfigurationError(
                f"input of shape {x.shape} does not match input width {self.layer_dims[0]}"
            )
        return x

    def forward(self, x, return_cache=False):
        x = self._check_input(x)
        inputs, pre = [], []
        a = x
        for i, kind in enumerate(self.activations):
            inputs.append(a)
            z = a @ self.weights(i) + self.bias(i)
            pre.append(z)
            a = activation_apply(kind, z)
        if return_cache:
            return a, (inputs, pre, a)
        return a

    def _deltas(self, cache, upstream):
        """Yield ``(layer, delta)`` from the last layer down, where ``delta`` is
        the gradient w.r.t. that layer's pre-activation."""
        inputs, pre, out = cache
        upstream = np.asarray(upstream, dtype=float)
        if upstream.shape != out.shape:
            raise ConfigurationError(f"upstream shape {upstream.shape} != output shape {out.shape}")
        last = self.n_layers - 1
        if self.activations[last] == "softmax":
            delta = softmax_backward(out, upstream)
        else:
            delta = upstream * activation_grad(self.activations[last], pre[last])
        for i in range(last, -1, -1):
            yield i, delta
            if i > 0:
                delta = (delta @ self.weights(i).T) * activation_grad(self.activations[i - 1], pre[i - 1])

    def _backward_from_delta(self, cache, delta_last, return_input_grad):
        inputs, pre, _ = cache
        grad = np.zeros(self.n_params)
        delta = delta_last
        for i in range(self.n_layers - 1, -1, -1):
            w0, b0, b1 = self._offsets[i]
            grad[w0:b0] = (inputs[i].T @ delta).ravel()
            grad[b0:b1] = delta.sum(axis=0)
            if i > 0:
                delta = (delta @ self.weights(i).T) * activation_grad(self.activations[i - 1], pre[i - 1])
            elif return_input_grad:
                return grad, delta @ self.weights(0).T
        return grad

    def backward(self, cache, upstream, return_input_grad=False):
        """Gradient w.r.t. params of ``sum_rows <upstream_row, output_row>``."""
        inputs, pre, out = cache
        upstream = np.asarray(upstream, dtype=float)
        if upstream.shape != out.shape:
            raise ConfigurationError(f"upstream shape {upstream.shape} != output shape {out.shape}")
        last = self.n_layers - 1
        if self.activations[last] == "softmax":
            delta = softmax_backward(out, upstream)
        else:
            delta = upstream * activation_grad(self.activations[last], pre[last])
        return self._backward_from_delta(cache, delta, return_input_grad)

    def backward_ce(self, cache, labels, return_input_grad=False):
        """Gradient of the batch-mean cross-entropy for a softmax output.

        Uses the fused ``p - onehot`` form, which stays accurate for
        confident predictions.
        """
        if self.activations[-1] != "softmax":
            raise ConfigurationError("fused cross-entropy path needs a softmax output")
        out = cache[2]
        labels = np.asarray(labels)
        delta = out.copy()
        delta[np.arange(len(labels)), labels] -= 1.0
        delta /= len(labels)
        return self._backward_from_delta(cache, delta, return_input_grad)

    def per_example_grad_sq(self, cache, upstream):
        """``||grad_params <upstream_i, f(x_i)>||^2`` for every row ``i``."""
        inputs = cache[0]
        total = np.zeros(len(inputs[0]))
        for i, delta in self._deltas(cache, upstream):
            d2 = np.sum(delta * delta, axis=1)
            total += (np.sum(inputs[i] * inputs[i], axis=1) + 1.0) * d2
        return total


def grad_frobenius_sq(net, x):
    """Per-example squared Frobenius norm of the Jacobian of ``net(x)`` w.r.t. params."""
    out, cache = net.forward(x, return_cache=True)
    total = np.zeros(out.shape[0])
    for k in range(out.shape[1]):
        e = np.zeros_like(out)
        e[:, k] = 1.0
        total += net.per_example_grad_sq(cache, e)
    return total


@dataclass
class SGD:
    learning_rate: float = 1e-2
    t: int = 0

    def step(self, net, grad):
        grad = _checked(net, grad)
        net.params -= self.learning_rate * grad
        self.t += 1
        return net


@dataclass
class Adam:
    learning_rate: float = 1e-3
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    t: int = 0
    m: np.ndarray | None = field(default=None, repr=False)
    v: np.ndarray | None = field(default=None, repr=False)

    def step(self, net, grad):
        grad = _checked(net, grad)
        if self.m is None:
            self.m = np.zeros_like(net.params)
            self.v = np.zeros_like(net.params)
        self.t += 1
        self.m *= self.beta1
        self.m += (1 - self.beta1) * grad
        self.v *= self.beta2
        self.v += (1 - self.beta2) * grad * grad
        m_hat = self.m / (1 - self.beta1**self.t)
        v_hat = self.v / (1 - self.beta2**self.t)
        net.params -= self.learning_rate * m_hat / (np.sqrt(v_hat) + self.eps)
        return net


def _checked(net, grad):
    grad = np.asarray(grad, dtype=float)
    if grad.shape != net.params.shape:
        raise ConfigurationError(f"gradient shape {grad.shape} != params shape {net.params.shape}")
    if not np.all(np.isfinite(grad)):
        raise TrainingError("non-finite gradient, step aborted")
    return grad


def make_optimizer(kind="adam", learning_rate=1e-3):
    if kind == "adam":
        return Adam(learning_rate=learning_rate)
    if kind == "sgd":
        return SGD(learning_rate=learning_rate)
    raise ConfigurationError(f"unknown optimizer {kind!r}")
