"""A stacked LSTM regressor with hand-written backpropagation through time.

Cell equations (gate blocks ordered i, f, g, o)::

    z_t = W_x x_t + W_h h_{t-1} + b
    i, f, o = sigmoid(z_i), sigmoid(z_f), sigmoid(z_o);  g = tanh(z_g)
    c_t = f * c_{t-1} + i * g
    h_t = o * tanh(c_t)

Layers are stacked (layer l+1 reads the hidden states of layer l) and the
prediction is a linear readout of the top layer's final hidden state. Training
minimizes mean squared error with mini-batch Adam. Everything is float64.

The per-timestep recurrences run in :mod:`nowcaster.kernels`; the input
projections and weight gradients are whole-sequence matrix products.
"""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from . import kernels
from .errors import DataError, TrainingError


@dataclass(frozen=True)
class LstmHyperparams:
    n_timesteps: int = 12
    hidden_size: int = 20
    n_layers: int = 2
    epochs: int = 200
    batch_size: int = 30
    learning_rate: float = 1e-2
    seed: int = 0

    def __post_init__(self):
        for name in ("n_timesteps", "hidden_size", "n_layers", "batch_size"):
            if int(getattr(self, name)) < 1:
                raise ValueError(f"{name} must be positive")
        if self.epochs < 0:
            raise ValueError("epochs must be >= 0")
        if not self.learning_rate > 0:
            raise ValueError("learning_rate must be positive")

    def replace(self, **changes) -> "LstmHyperparams":
        values = {k: getattr(self, k) for k in self.__dataclass_fields__}
        values.update(changes)
        return LstmHyperparams(**values)


@dataclass(eq=False)
class LstmNetwork:
    """Weights of a stacked LSTM plus its linear readout.

    ``W_x[l]`` is (4H, F) for the first layer and (4H, H) above it,
    ``W_h[l]`` is (4H, H) and ``b[l]`` has length 4H.
    """

    W_x: list
    W_h: list
    b: list
    w_out: np.ndarray
    b_out: np.ndarray  # shape (1,) so the optimizer can update it in place
    hyperparams: LstmHyperparams
    n_features: int
    seed: int = 0
    loss_history: list = field(default_factory=list)
    epochs_run: int = 0

    @property
    def hidden_size(self) -> int:
        return self.W_h[0].shape[1]

    @property
    def n_layers(self) -> int:
        return len(self.W_h)

    @property
    def final_loss(self) -> float:
        return self.loss_history[-1] if self.loss_history else float("nan")

    def parameters(self) -> list:
        """Flat list of parameter arrays in a fixed order."""
        out = []
        for layer in range(self.n_layers):
            out += [self.W_x[layer], self.W_h[layer], self.b[layer]]
        return out + [self.w_out, self.b_out]

    def parameter_names(self) -> list:
        out = []
        for layer in range(self.n_layers):
            out += [f"W_x[{layer}]", f"W_h[{layer}]", f"b[{layer}]"]
        return out + ["w_out", "b_out"]

    def copy(self) -> "LstmNetwork":
        return LstmNetwork([w.copy() for w in self.W_x], [w.copy() for w in self.W_h],
                           [v.copy() for v in self.b], self.w_out.copy(), self.b_out.copy(),
                           self.hyperparams, self.n_features, self.seed,
                           list(self.loss_history), self.epochs_run)


def init(hp: LstmHyperparams, n_features: int, seed: int | None = None) -> LstmNetwork:
    """Uniform(-1/sqrt(H), 1/sqrt(H)) weights; forget-gate biases start at +1."""
    seed = hp.seed if seed is None else seed
    rng = np.random.default_rng(seed)
    hsz = hp.hidden_size
    bound = 1.0 / np.sqrt(hsz)
    W_x, W_h, b = [], [], []
    for layer in range(hp.n_layers):
        n_in = n_features if layer == 0 else hsz
        W_x.append(rng.uniform(-bound, bound, (4 * hsz, n_in)))
        W_h.append(rng.uniform(-bound, bound, (4 * hsz, hsz)))
        bias = rng.uniform(-bound, bound, 4 * hsz)
        bias[hsz:2 * hsz] = 1.0
        b.append(bias)
    w_out = rng.uniform(-bound, bound, hsz)
    b_out = rng.uniform(-bound, bound, 1)
    return LstmNetwork(W_x, W_h, b, w_out, b_out, hp, n_features, seed)


def _inputs(data):
    return data.inputs if hasattr(data, "inputs") else np.asarray(data, dtype=float)


def forward(net: LstmNetwork, data):
    """Predictions for every observation plus the cache needed by backward."""
    x = _inputs(data)
    if x.ndim != 3 or x.shape[2] != net.n_features:
        raise DataError(f"expected inputs of shape (N, T, {net.n_features}), got {x.shape}")
    cache = []
    for layer in range(net.n_layers):
        zx = np.ascontiguousarray(x @ net.W_x[layer].T + net.b[layer])
        hs, cs, gates = kernels.lstm_layer_forward(zx, net.W_h[layer])
        cache.append((x, hs, cs, gates))
        x = hs
    preds = x[:, -1] @ net.w_out + net.b_out[0]
    return preds, cache


def predict(net: LstmNetwork, data) -> np.ndarray:
    """Forward pass only (standardized target units)."""
    return forward(net, data)[0]


def loss_and_gradients(net: LstmNetwork, data, targets=None):
    """Mean squared error and its gradient for every parameter.

    Gradients come back in :meth:`LstmNetwork.parameters` order.
    """
    y = data.targets if targets is None else np.asarray(targets, dtype=float)
    if y is None:
        raise DataError("batch has no targets")
    preds, cache = forward(net, data)
    n = len(preds)
    resid = preds - y
    mse = float(resid @ resid) / n
    dpred = 2.0 * resid / n
    h_last = cache[-1][1][:, -1]
    grads_out = [h_last.T @ dpred, np.array([dpred.sum()])]

    dhs = np.zeros_like(cache[-1][1])
    dhs[:, -1] = np.outer(dpred, net.w_out)
    layer_grads = [None] * net.n_layers
    for layer in range(net.n_layers - 1, -1, -1):
        x, hs, cs, gates = cache[layer]
        dz, dw_h = kernels.lstm_layer_backward(np.ascontiguousarray(dhs), gates, cs, hs, net.W_h[layer])
        flat = dz.reshape(-1, dz.shape[2])
        dw_x = flat.T @ x.reshape(-1, x.shape[2])
        db = flat.sum(axis=0)
        layer_grads[layer] = [dw_x, dw_h, db]
        if layer > 0:
            dhs = dz @ net.W_x[layer]
    grads = [g for trio in layer_grads for g in trio]
    return mse, grads + grads_out


class Adam:
    """Bias-corrected Adam acting in place on a list of arrays."""

    def __init__(self, params, lr=1e-2, beta1=0.9, beta2=0.999, eps=1e-8):
        self.params = params
        self.lr, self.beta1, self.beta2, self.eps = lr, beta1, beta2, eps
        self.m = [np.zeros_like(p) for p in params]
        self.v = [np.zeros_like(p) for p in params]
        self.t = 0

    def step(self, grads):
        self.t += 1
        bc1 = 1.0 - self.beta1 ** self.t
        bc2 = 1.0 - self.beta2 ** self.t
        for p, g, m, v in zip(self.params, grads, self.m, self.v):
            m *= self.beta1
            m += (1.0 - self.beta1) * g
            v *= self.beta2
            v += (1.0 - self.beta2) * (g * g)
            p -= self.lr * (m / bc1) / (np.sqrt(v / bc2) + self.eps)


def train(batch, hp: LstmHyperparams, seed: int | None = None) -> LstmNetwork:
    """Fit a fresh network with ``hp.epochs`` epochs of shuffled mini-batch Adam.

    ``seed`` (default ``hp.seed``) drives both initialization and the
    per-epoch shuffles, so a run is fully reproducible. ``loss_history[0]``
    is the full-batch loss before training and entry ``k`` the loss after
    epoch ``k``.
    """
    if batch.targets is None:
        raise DataError("training batch has no targets")
    seed = hp.seed if seed is None else seed
    net = init(hp, batch.inputs.shape[2], seed)
    shuffle_rng = np.random.default_rng([seed, 1])
    inputs, targets = batch.inputs, batch.targets
    n = len(targets)
    params = net.parameters()
    opt = Adam(params, lr=hp.learning_rate)
    net.loss_history.append(_full_loss(net, inputs, targets, epoch=0))
    for epoch in range(1, hp.epochs + 1):
        order = shuffle_rng.permutation(n)
        for start in range(0, n, hp.batch_size):
            idx = order[start:start + hp.batch_size]
            loss, grads = loss_and_gradients(net, inputs[idx], targets[idx])
            if not np.isfinite(loss):
                raise TrainingError(f"non-finite loss in epoch {epoch}; lower the learning rate", epoch)
            opt.step(grads)
        net.loss_history.append(_full_loss(net, inputs, targets, epoch))
        net.epochs_run = epoch
    return net


def _full_loss(net, inputs, targets, epoch):
    with np.errstate(over="ignore", invalid="ignore"):
        resid = predict(net, inputs) - targets
        loss = float(resid @ resid) / len(resid)
    if not np.isfinite(loss):
        raise TrainingError(f"non-finite loss after epoch {epoch}; lower the learning rate", epoch)
    return loss
