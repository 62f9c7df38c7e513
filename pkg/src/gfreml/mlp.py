"""Fully connected ReLU network with hand-written forward and backward passes.

Parameters are stored per layer as ``W`` of shape ``(fan_out, fan_in)`` and
``b`` of shape ``(fan_out,)``.  The flat parameter order used by
:func:`grad_params` and :func:`get_flat_params` is, layer by layer from the
input side, ``W`` in row-major order followed by ``b`` (omitted for bias-free
networks).
"""

from __future__ import annotations

import copy
from dataclasses import dataclass, field

import numpy as np

from .errors import DataError, DimensionMismatch, Diverged

DIVERGENCE_FACTOR = 1e6


@dataclass
class MlpNetwork:
    layer_widths: tuple[int, ...]
    weights: list[np.ndarray]
    biases: list[np.ndarray] | None
    rng_seed: int | None = None

    @property
    def depth(self) -> int:
        """Number of weight layers."""
        return len(self.weights)

    @property
    def use_bias(self) -> bool:
        return self.biases is not None

    @property
    def n_params(self) -> int:
        total = sum(W.size for W in self.weights)
        if self.biases is not None:
            total += sum(b.size for b in self.biases)
        return total

    def copy(self) -> "MlpNetwork":
        return copy.deepcopy(self)


@dataclass
class TrainTrace:
    epochs: int
    learning_rate: float
    train_mse: np.ndarray
    test_mse: np.ndarray | None = None
    predictions: np.ndarray | None = field(default=None, repr=False)
    monitor_mse: np.ndarray | None = None


def init_network(layer_widths, seed=None, bias: bool = True, readout_scale: float = 1.0) -> MlpNetwork:
    """He-normal weights on ReLU layers and zero biases.

    The linear output layer is drawn from ``N(0, readout_scale^2 / fan_in)``.
    Shrinking ``readout_scale`` shrinks the initial output ``f0`` without
    touching the hidden-layer features.
    """
    widths = tuple(int(w) for w in layer_widths)
    if len(widths) < 2 or any(w < 1 for w in widths) or widths[-1] != 1:
        raise DataError(f"invalid layer widths {layer_widths!r}; need [d, ..., 1] with positive entries")
    if not readout_scale > 0:
        raise DataError(f"readout_scale must be positive, got {readout_scale}")
    rng = np.random.default_rng(seed)
    weights = []
    n_layers = len(widths) - 1
    for layer, (fan_in, fan_out) in enumerate(zip(widths[:-1], widths[1:])):
        std = readout_scale * np.sqrt(1.0 / fan_in) if layer == n_layers - 1 else np.sqrt(2.0 / fan_in)
        weights.append(rng.standard_normal((fan_out, fan_in)) * std)
    biases = [np.zeros(w) for w in widths[1:]] if bias else None
    return MlpNetwork(layer_widths=widths, weights=weights, biases=biases, rng_seed=seed)


def _as_batch(net: MlpNetwork, X) -> np.ndarray:
    X = np.asarray(X, dtype=float)
    if X.ndim == 1:
        X = X[None, :]
    if X.ndim != 2 or X.shape[1] != net.layer_widths[0]:
        raise DimensionMismatch(f"network expects inputs of dimension {net.layer_widths[0]}, got shape {X.shape}")
    return X


def _forward_cache(net: MlpNetwork, X: np.ndarray):
    """Return (activations, pre-activations); activations[0] is the input."""
    acts = [X]
    pre = []
    a = X
    last = net.depth - 1
    for layer, W in enumerate(net.weights):
        z = a @ W.T
        if net.biases is not None:
            z = z + net.biases[layer]
        pre.append(z)
        a = z if layer == last else np.maximum(z, 0.0)
        acts.append(a)
    return acts, pre


def forward(net: MlpNetwork, X) -> np.ndarray:
    """Network outputs ``f(X)`` as a length-n vector."""
    X = _as_batch(net, X)
    acts, _ = _forward_cache(net, X)
    return acts[-1][:, 0]


def _backward_deltas(net: MlpNetwork, pre: list[np.ndarray]) -> list[np.ndarray]:
    """Per-example derivatives of the scalar output w.r.t. each layer's pre-activation."""
    n = pre[0].shape[0]
    deltas = [None] * net.depth
    delta = np.ones((n, 1))
    deltas[-1] = delta
    for layer in range(net.depth - 1, 0, -1):
        delta = (delta @ net.weights[layer]) * (pre[layer - 1] > 0.0)
        deltas[layer - 1] = delta
    return deltas


def grad_params(net: MlpNetwork, x) -> np.ndarray:
    """Flat gradient of the scalar output at a single input ``x``."""
    return jacobian(net, np.atleast_2d(np.asarray(x, dtype=float)))[0]


def jacobian(net: MlpNetwork, X) -> np.ndarray:
    """Parameter Jacobian, one row per input (``n x n_params``)."""
    X = _as_batch(net, X)
    acts, pre = _forward_cache(net, X)
    deltas = _backward_deltas(net, pre)
    blocks = []
    for layer in range(net.depth):
        d, a = deltas[layer], acts[layer]
        blocks.append((d[:, :, None] * a[:, None, :]).reshape(X.shape[0], -1))
        if net.biases is not None:
            blocks.append(d)
    return np.concatenate(blocks, axis=1)


def ntk_factors(net: MlpNetwork, X):
    """Per-layer ``(deltas, input activations)`` whose products assemble the empirical NTK."""
    X = _as_batch(net, X)
    acts, pre = _forward_cache(net, X)
    deltas = _backward_deltas(net, pre)
    return [(deltas[layer], acts[layer]) for layer in range(net.depth)]


def ntk_from_factors(net: MlpNetwork, left, right) -> np.ndarray:
    """``J(X1) J(X2)^T`` from the factors of two input batches."""
    out = None
    for (d1, a1), (d2, a2) in zip(left, right):
        inner = a1 @ a2.T
        if net.biases is not None:
            inner = inner + 1.0
        block = (d1 @ d2.T) * inner
        out = block if out is None else out + block
    return out


def get_flat_params(net: MlpNetwork) -> np.ndarray:
    parts = []
    for layer, W in enumerate(net.weights):
        parts.append(W.ravel())
        if net.biases is not None:
            parts.append(net.biases[layer])
    return np.concatenate(parts)


def set_flat_params(net: MlpNetwork, theta) -> None:
    theta = np.asarray(theta, dtype=float)
    if theta.shape != (net.n_params,):
        raise DimensionMismatch(f"expected {net.n_params} parameters, got shape {theta.shape}")
    pos = 0
    for layer, W in enumerate(net.weights):
        net.weights[layer] = theta[pos:pos + W.size].reshape(W.shape).copy()
        pos += W.size
        if net.biases is not None:
            b = net.biases[layer]
            net.biases[layer] = theta[pos:pos + b.size].copy()
            pos += b.size


def _mse(a: np.ndarray, b: np.ndarray) -> float:
    return float(np.mean((a - b) ** 2))


def train_full_batch(
    net: MlpNetwork,
    X,
    y,
    learning_rate: float,
    epochs: int,
    X_test=None,
    y_test=None,
    record_predictions: bool = False,
    monitor=None,
) -> TrainTrace:
    """Full-batch gradient descent on ``0.5 * ||y - f(X)||^2``; mutates ``net``.

    MSE (mean, not halved) is recorded on the training and optional test
    sets before the first step and after every step.  ``monitor`` is an
    optional list of extra ``(X, y)`` pairs tracked the same way.
    """
    X = _as_batch(net, X)
    y = np.asarray(y, dtype=float)
    if y.shape != (X.shape[0],):
        raise DimensionMismatch(f"response length {y.shape} does not match {X.shape[0]} inputs")
    if not learning_rate > 0:
        raise DataError(f"learning rate must be positive, got {learning_rate}")
    epochs = int(epochs)
    if epochs < 0:
        raise DataError(f"epochs must be nonnegative, got {epochs}")
    has_test = X_test is not None and y_test is not None
    if has_test:
        X_test = _as_batch(net, X_test)
        y_test = np.asarray(y_test, dtype=float)

    monitor = [(_as_batch(net, Xm), np.asarray(ym, dtype=float)) for Xm, ym in (monitor or [])]
    monitor_mse = np.empty((len(monitor), epochs + 1)) if monitor else None
    train_mse = np.empty(epochs + 1)
    test_mse = np.empty(epochs + 1) if has_test else None
    preds = np.empty((epochs + 1, X.shape[0])) if record_predictions else None

    last = net.depth - 1
    for epoch in range(epochs + 1):
        acts, pre = _forward_cache(net, X)
        f = acts[-1][:, 0]
        train_mse[epoch] = _mse(f, y)
        if has_test:
            test_mse[epoch] = _mse(forward(net, X_test), y_test)
        if preds is not None:
            preds[epoch] = f
        for j, (Xm, ym) in enumerate(monitor):
            monitor_mse[j, epoch] = _mse(forward(net, Xm), ym)
        if not np.isfinite(train_mse[epoch]) or train_mse[epoch] > DIVERGENCE_FACTOR * max(
            train_mse[0], np.finfo(float).tiny
        ):
            raise Diverged(
                f"training MSE {train_mse[epoch]:.3e} at epoch {epoch} exceeds "
                f"{DIVERGENCE_FACTOR:g}x its initial value {train_mse[0]:.3e}"
            )
        if epoch == epochs:
            break
        # dL/dz for the output layer is the residual f - y
        delta = (f - y)[:, None]
        grads_W = [None] * net.depth
        grads_b = [None] * net.depth
        for layer in range(last, -1, -1):
            grads_W[layer] = delta.T @ acts[layer]
            grads_b[layer] = delta.sum(axis=0)
            if layer > 0:
                delta = (delta @ net.weights[layer]) * (pre[layer - 1] > 0.0)
        for layer in range(net.depth):
            net.weights[layer] -= learning_rate * grads_W[layer]
            if net.biases is not None:
                net.biases[layer] -= learning_rate * grads_b[layer]

    return TrainTrace(
        epochs=epochs,
        learning_rate=float(learning_rate),
        train_mse=train_mse,
        test_mse=test_mse,
        predictions=preds,
        monitor_mse=monitor_mse,
    )
