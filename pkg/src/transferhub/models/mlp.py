"""Small fully connected network with a width-3 penultimate layer.

Hidden layers use ReLU and the output unit is linear.  The penultimate
activations double as a feature extractor for BLR heads.  Training is plain
mini-batch SGD without momentum; an optional penalty term is added to the
squared-error task loss (see :mod:`transferhub.adaptation`).
"""

from __future__ import annotations

from dataclasses import dataclass, replace

import numpy as np

PENULTIMATE_WIDTH = 3
MIN_HIDDEN_WIDTH = 11


def layer_sizes(n_inputs: int, widen: int = 1, min_width: int = MIN_HIDDEN_WIDTH) -> list[int]:
    """``[D, k*D, k*D/2, ..., 3, 1]``: halve while the next width stays >= ``min_width``."""
    if n_inputs < 1 or widen < 1:
        raise ValueError("n_inputs and widen must be positive")
    hidden = [widen * n_inputs]
    while hidden[-1] // 2 >= min_width:
        hidden.append(hidden[-1] // 2)
    return [n_inputs, *hidden, PENULTIMATE_WIDTH, 1]


@dataclass(frozen=True, eq=False)
class Mlp:
    weights: tuple  # each (fan_in, fan_out)
    biases: tuple
    x_mean: np.ndarray | None = None
    x_scale: np.ndarray | None = None

    @property
    def sizes(self) -> list[int]:
        return [self.weights[0].shape[0]] + [W.shape[1] for W in self.weights]

    @property
    def n_inputs(self) -> int:
        return self.weights[0].shape[0]

    @property
    def out_dim(self) -> int:
        return self.weights[-1].shape[0]

    @property
    def n_params(self) -> int:
        return sum(W.size + b.size for W, b in zip(self.weights, self.biases))

    def params(self) -> np.ndarray:
        return np.concatenate([np.concatenate([W.ravel(), b]) for W, b in zip(self.weights, self.biases)])

    def with_params(self, theta) -> "Mlp":
        theta = np.asarray(theta, dtype=float)
        if theta.shape != (self.n_params,):
            raise ValueError(f"expected {self.n_params} parameters, got {theta.shape}")
        Ws, bs, pos = [], [], 0
        for W, b in zip(self.weights, self.biases):
            Ws.append(theta[pos:pos + W.size].reshape(W.shape).copy())
            pos += W.size
            bs.append(theta[pos:pos + b.size].copy())
            pos += b.size
        return replace(self, weights=tuple(Ws), biases=tuple(bs))

    def scale(self, X) -> np.ndarray:
        X = np.asarray(X, dtype=float)
        if X.ndim != 2 or X.shape[1] != self.n_inputs:
            raise ValueError(f"dimension mismatch: network expects {self.n_inputs} inputs")
        if self.x_mean is None:
            return X
        return (X - self.x_mean) / self.x_scale

    def transform(self, X) -> np.ndarray:
        return mlp_forward(self, X)[1]

    def predict(self, X) -> np.ndarray:
        return mlp_forward(self, X)[0]


def init_mlp(sizes, seed: int, x_mean=None, x_scale=None) -> Mlp:
    """Uniform +-sqrt(6/(fan_in+fan_out)) weights, zero biases."""
    rng = np.random.default_rng(seed)
    Ws, bs = [], []
    for fan_in, fan_out in zip(sizes[:-1], sizes[1:]):
        limit = np.sqrt(6.0 / (fan_in + fan_out))
        Ws.append(rng.uniform(-limit, limit, size=(fan_in, fan_out)))
        bs.append(np.zeros(fan_out))
    if x_mean is not None:
        x_mean = np.asarray(x_mean, dtype=float)
        x_scale = np.asarray(x_scale, dtype=float)
    return Mlp(tuple(Ws), tuple(bs), x_mean, x_scale)


def _forward(mlp: Mlp, Z: np.ndarray) -> list[np.ndarray]:
    acts = [Z]
    last = len(mlp.weights) - 1
    for i, (W, b) in enumerate(zip(mlp.weights, mlp.biases)):
        a = acts[-1] @ W + b
        acts.append(a if i == last else np.maximum(a, 0.0))
    return acts


def mlp_forward(mlp: Mlp, X) -> tuple[np.ndarray, np.ndarray]:
    """Return ``(predictions, penultimate features)``."""
    acts = _forward(mlp, mlp.scale(X))
    return acts[-1][:, 0], acts[-2]


def _backward(mlp: Mlp, acts: list[np.ndarray], grad_out: np.ndarray) -> np.ndarray:
    """Gradient of ``sum(grad_out * f)`` w.r.t. the flat parameter vector."""
    g = grad_out[:, None]
    grads_W, grads_b = [], []
    for i in range(len(mlp.weights) - 1, -1, -1):
        grads_W.append(acts[i].T @ g)
        grads_b.append(g.sum(axis=0))
        if i:
            g = (g @ mlp.weights[i].T) * (acts[i] > 0)
    grads_W.reverse()
    grads_b.reverse()
    return np.concatenate([np.concatenate([gW.ravel(), gb]) for gW, gb in zip(grads_W, grads_b)])


def loss_and_grad(mlp: Mlp, X, y, penalty=None, ref=None) -> tuple[float, np.ndarray]:
    """Task loss ``mean(0.5 (y - f)^2)`` plus ``lam * penalty`` and its gradient.

    ``penalty`` carries ``kind`` (WD, WDS or BT), ``lam`` and, for WDS,
    ``theta0``.  For BT, ``ref`` holds the per-row source-ensemble prediction
    and the penalty is ``mean((ref - f)^2)``.
    """
    y = np.asarray(y, dtype=float)
    acts = _forward(mlp, mlp.scale(X))
    f = acts[-1][:, 0]
    n = len(y)
    r = f - y
    loss = 0.5 * float(r @ r) / n
    grad_out = r / n
    lam = 0.0 if penalty is None else float(penalty.lam)
    extra = None
    if lam != 0.0:
        kind = penalty.kind
        if kind == "BT":
            d = f - np.asarray(ref, dtype=float)
            loss += lam * float(d @ d) / n
            grad_out = grad_out + 2.0 * lam * d / n
        elif kind in ("WD", "WDS"):
            theta = mlp.params()
            delta = theta if kind == "WD" else theta - np.asarray(penalty.theta0, dtype=float)
            loss += lam * 0.5 * float(delta @ delta)
            extra = lam * delta
        else:
            raise ValueError(f"unknown penalty kind {kind!r}")
    grad = _backward(mlp, acts, grad_out)
    if extra is not None:
        grad = grad + extra
    return loss, grad


def sgd_train(mlp: Mlp, X, y, lr: float, n_epochs: int, batch_size: int, seed: int,
              penalty=None, ref=None) -> Mlp:
    """Shuffled mini-batch SGD without momentum; returns a trained copy."""
    if lr < 0:
        raise ValueError("lr must be nonnegative")
    if batch_size < 1:
        raise ValueError("batch_size must be at least 1")
    X = np.asarray(X, dtype=float)
    y = np.asarray(y, dtype=float)
    ref = None if ref is None else np.asarray(ref, dtype=float)
    rng = np.random.default_rng(seed)
    theta = mlp.params()
    net = mlp
    n = len(y)
    for epoch in range(n_epochs):
        order = rng.permutation(n)
        for start in range(0, n, batch_size):
            idx = order[start:start + batch_size]
            with np.errstate(over="ignore", invalid="ignore"):
                loss, grad = loss_and_grad(net, X[idx], y[idx], penalty, None if ref is None else ref[idx])
            if not np.isfinite(loss) or not np.all(np.isfinite(grad)):
                raise FloatingPointError(
                    f"non-finite loss {loss} at epoch {epoch}, batch starting {start} (lr={lr})"
                )
            theta = theta - lr * grad
            net = net.with_params(theta)
    return net


def fit_scaler(X) -> tuple[np.ndarray, np.ndarray]:
    X = np.asarray(X, dtype=float)
    mean = X.mean(axis=0)
    scale = X.std(axis=0)
    scale[scale < 1e-12] = 1.0
    return mean, scale


def train_source_mlp(X, y, X_val, y_val, seed: int, widen_grid=(1, 2, 4), lr_grid=(0.003, 0.01, 0.03),
                     epochs_grid=(20, 50), batch_size: int = 64) -> tuple[Mlp, float, dict]:
    """Grid search over widening factor, learning rate and epochs by validation nRMSE."""
    X = np.asarray(X, dtype=float)
    mean, scale = fit_scaler(X)
    best = None
    for k in widen_grid:
        for lr in lr_grid:
            net0 = init_mlp(layer_sizes(X.shape[1], k), seed, mean, scale)
            done = 0
            for epochs in sorted(epochs_grid):
                # continue training instead of restarting for the longer schedule
                try:
                    net0 = sgd_train(net0, X, y, lr, epochs - done, batch_size, seed + epochs)
                except FloatingPointError:
                    break
                done = epochs
                err = float(np.sqrt(np.mean((net0.predict(X_val) - y_val) ** 2)))
                if np.isfinite(err) and (best is None or err < best[1]):
                    best = (net0, err, {"widen": k, "lr": lr, "epochs": epochs})
    if best is None:
        raise FloatingPointError("every source-model configuration diverged")
    return best
