"""A small sequential network library with hand-written backpropagation.

Layers act on the last axis, so ``Dense`` accepts both ``(batch, features)``
and ``(batch, seq, features)`` inputs.  Weights follow the ``y = x @ W + b``
convention, i.e. a dense weight has shape ``(fan_in, fan_out)``.
"""
from __future__ import annotations

from dataclasses import dataclass
from typing import Sequence

import numpy as np

from q3r.optim import ParamTensor
from q3r.reweighting import q3r_value


def glorot(rng: np.random.Generator, fan_in: int, fan_out: int) -> np.ndarray:
    s = np.sqrt(6.0 / (fan_in + fan_out))
    return rng.uniform(-s, s, size=(fan_in, fan_out))


class Layer:
    name: str = "layer"
    kind: str = "layer"

    def params(self) -> list[ParamTensor]:
        return []

    def in_dim(self) -> int | None:
        return None

    def out_dim(self, in_dim: int) -> int:
        return in_dim

    def forward(self, x: np.ndarray):
        """Return ``(y, cache)``."""
        raise NotImplementedError

    def backward(self, dy: np.ndarray, cache) -> tuple[np.ndarray, dict[str, np.ndarray]]:
        """Return ``(dx, {param name: grad})``."""
        raise NotImplementedError


def _flat(x: np.ndarray) -> np.ndarray:
    return x.reshape(-1, x.shape[-1])


class Dense(Layer):
    kind = "dense"

    def __init__(self, name: str, w, b=None):
        self.name = name
        self.W = ParamTensor(f"{name}.W", w)
        d_out = self.W.shape[1]
        self.b = ParamTensor(f"{name}.b", np.zeros(d_out) if b is None else b)

    @classmethod
    def init(cls, name: str, fan_in: int, fan_out: int, rng: np.random.Generator) -> "Dense":
        return cls(name, glorot(rng, fan_in, fan_out))

    def params(self):
        return [self.W, self.b]

    def in_dim(self):
        return self.W.shape[0]

    def out_dim(self, in_dim):
        return self.W.shape[1]

    def forward(self, x):
        return x @ self.W.w + self.b.w, x

    def backward(self, dy, x):
        dw = _flat(x).T @ _flat(dy)
        db = _flat(dy).sum(axis=0)
        return dy @ self.W.w.T, {self.W.name: dw, self.b.name: db}


class DeltaDense(Dense):
    """Dense layer ``x @ (W0 + D) + b`` with a frozen base ``W0``.

    Only the additive delta ``D`` and the bias train; Q3R targets ``D``.
    """

    kind = "delta_dense"

    def __init__(self, name: str, base, delta=None, b=None):
        self.base = np.array(base, dtype=np.float64)
        super().__init__(name, np.zeros_like(self.base) if delta is None else delta, b)

    def effective_weight(self) -> np.ndarray:
        return self.base + self.W.w

    def forward(self, x):
        return x @ self.effective_weight() + self.b.w, x

    def backward(self, dy, x):
        dw = _flat(x).T @ _flat(dy)
        db = _flat(dy).sum(axis=0)
        return dy @ self.effective_weight().T, {self.W.name: dw, self.b.name: db}


class FactorizedDense(Layer):
    """Bias-free ``x @ A @ B``: a rank-limited dense map."""

    kind = "factorized"

    def __init__(self, name: str, a, b):
        self.name = name
        self.A = ParamTensor(f"{name}.A", a)
        self.B = ParamTensor(f"{name}.B", b)
        if self.A.shape[1] != self.B.shape[0]:
            raise ValueError(f"{name}: inner dimensions {self.A.shape} and {self.B.shape} differ")

    @classmethod
    def init(cls, name, fan_in, fan_out, rank, rng):
        return cls(name, glorot(rng, fan_in, rank), glorot(rng, rank, fan_out))

    def params(self):
        return [self.A, self.B]

    def in_dim(self):
        return self.A.shape[0]

    def out_dim(self, in_dim):
        return self.B.shape[1]

    def forward(self, x):
        h = x @ self.A.w
        return h @ self.B.w, (x, h)

    def backward(self, dy, cache):
        x, h = cache
        dh = dy @ self.B.w.T
        grads = {self.A.name: _flat(x).T @ _flat(dh), self.B.name: _flat(h).T @ _flat(dy)}
        return dh @ self.A.w.T, grads


class Relu(Layer):
    kind = "relu"

    def __init__(self, name: str = "relu"):
        self.name = name

    def forward(self, x):
        mask = x > 0
        return x * mask, mask

    def backward(self, dy, mask):
        return dy * mask, {}


class MeanPool(Layer):
    """Average over the sequence axis: ``(batch, seq, d) -> (batch, d)``."""

    kind = "meanpool"

    def __init__(self, name: str = "pool"):
        self.name = name

    def forward(self, x):
        if x.ndim != 3:
            raise ValueError(f"{self.name}: expected (batch, seq, dim) input, got {x.shape}")
        return x.mean(axis=1), x.shape[1]

    def backward(self, dy, seq):
        return np.repeat(dy[:, None, :] / seq, seq, axis=1), {}


def softmax(z: np.ndarray, axis: int = -1) -> np.ndarray:
    z = z - z.max(axis=axis, keepdims=True)
    e = np.exp(z)
    return e / e.sum(axis=axis, keepdims=True)


class Attention(Layer):
    """Single-head scaled dot-product self-attention with output projection.

    No masking, positional encoding or normalization.
    """

    kind = "attention"

    def __init__(self, name: str, wq, wk, wv, wo):
        self.name = name
        self.Wq = ParamTensor(f"{name}.Wq", wq)
        self.Wk = ParamTensor(f"{name}.Wk", wk)
        self.Wv = ParamTensor(f"{name}.Wv", wv)
        self.Wo = ParamTensor(f"{name}.Wo", wo)
        d = self.Wq.shape[0]
        for p in self.params():
            if p.shape != (d, d):
                raise ValueError(f"{p.name}: expected square ({d}, {d}) weight, got {p.shape}")

    @classmethod
    def init(cls, name, dim, rng):
        return cls(name, *(glorot(rng, dim, dim) for _ in range(4)))

    def params(self):
        return [self.Wq, self.Wk, self.Wv, self.Wo]

    def in_dim(self):
        return self.Wq.shape[0]

    def forward(self, x):
        if x.ndim != 3:
            raise ValueError(f"{self.name}: expected (batch, seq, dim) input, got {x.shape}")
        scale = 1.0 / np.sqrt(x.shape[-1])
        q, k, v = x @ self.Wq.w, x @ self.Wk.w, x @ self.Wv.w
        p = softmax(np.einsum("bsd,btd->bst", q, k) * scale)
        h = p @ v
        return h @ self.Wo.w, (x, q, k, v, p, h, scale)

    def backward(self, dy, cache):
        x, q, k, v, p, h, scale = cache
        grads = {self.Wo.name: _flat(h).T @ _flat(dy)}
        dh = dy @ self.Wo.w.T
        dp = dh @ np.swapaxes(v, 1, 2)
        dv = np.swapaxes(p, 1, 2) @ dh
        ds = p * (dp - np.sum(dp * p, axis=-1, keepdims=True)) * scale
        dq = ds @ k
        dk = np.swapaxes(ds, 1, 2) @ q
        grads[self.Wq.name] = _flat(x).T @ _flat(dq)
        grads[self.Wk.name] = _flat(x).T @ _flat(dk)
        grads[self.Wv.name] = _flat(x).T @ _flat(dv)
        dx = dq @ self.Wq.w.T + dk @ self.Wk.w.T + dv @ self.Wv.w.T
        return dx, grads


@dataclass
class Batch:
    """Inputs plus targets: integer class labels or real-valued regression targets."""

    inputs: np.ndarray
    targets: np.ndarray

    def __post_init__(self):
        self.inputs = np.asarray(self.inputs, dtype=np.float64)
        self.targets = np.asarray(self.targets)
        if self.inputs.shape[0] < 1:
            raise ValueError("batch size must be >= 1")
        if self.targets.shape[0] != self.inputs.shape[0]:
            raise ValueError("inputs and targets disagree on batch size")

    def __len__(self):
        return int(self.inputs.shape[0])


Net = Sequence[Layer]


def parameters(net: Net) -> list[ParamTensor]:
    return [p for layer in net for p in layer.params()]


def check_chain(net: Net, in_dim: int) -> int:
    """Propagate the feature dimension through ``net``; raise on the first mismatch."""
    d = in_dim
    for i, layer in enumerate(net):
        want = layer.in_dim()
        if want is not None and want != d:
            raise ValueError(f"dimension mismatch at layer {i} ({layer.name}): expected {want}, got {d}")
        d = layer.out_dim(d)
    return d


def forward(net: Net, batch: Batch | np.ndarray):
    """Return ``(predictions, caches)``."""
    x = batch.inputs if isinstance(batch, Batch) else np.asarray(batch, dtype=np.float64)
    check_chain(net, x.shape[-1])
    caches = []
    for layer in net:
        x, cache = layer.forward(x)
        caches.append(cache)
    return x, caches


def softmax_ce(logits: np.ndarray, labels: np.ndarray) -> tuple[float, np.ndarray]:
    """Mean cross-entropy and its gradient in the logits."""
    labels = np.asarray(labels, dtype=np.int64)
    n, k = logits.shape
    if np.any(labels < 0) or np.any(labels >= k):
        raise ValueError(f"class labels must lie in [0, {k})")
    z = logits - logits.max(axis=1, keepdims=True)
    logp = z - np.log(np.exp(z).sum(axis=1, keepdims=True))
    loss = -float(np.mean(logp[np.arange(n), labels]))
    d = np.exp(logp)
    d[np.arange(n), labels] -= 1.0
    return loss, d / n


def mse(pred: np.ndarray, target: np.ndarray) -> tuple[float, np.ndarray]:
    """Mean over the batch of ``||pred - target||^2 / 2``."""
    target = np.asarray(target, dtype=np.float64).reshape(pred.shape)
    diff = pred - target
    n = pred.shape[0]
    return 0.5 * float(np.sum(diff * diff)) / n, diff / n


LOSSES = {"ce": softmax_ce, "mse": mse}


def loss_fn(kind: str):
    try:
        return LOSSES[kind]
    except KeyError:
        raise ValueError(f"unknown loss {kind!r}") from None


def backward(net: Net, batch: Batch, loss_kind: str, forward_result=None):
    """Mean loss over the batch and the gradient of every parameter, keyed by name.

    ``forward_result`` is the ``(predictions, caches)`` pair from :func:`forward`
    for this batch; it is recomputed when omitted.
    """
    pred, caches = forward(net, batch) if forward_result is None else forward_result
    loss, d = loss_fn(loss_kind)(pred, batch.targets)
    grads: dict[str, np.ndarray] = {}
    for layer, cache in zip(reversed(net), reversed(caches)):
        d, g = layer.backward(d, cache)
        grads.update(g)
    return loss, grads


def evaluate(net: Net, batches: Sequence[Batch], loss_kind: str) -> tuple[float, float | None]:
    """Sample-weighted mean loss and, for classification, accuracy."""
    if not batches:
        raise ValueError("empty evaluation set")
    total, correct, n = 0.0, 0, 0
    for batch in batches:
        pred, _ = forward(net, batch)
        loss, _ = loss_fn(loss_kind)(pred, batch.targets)
        total += loss * len(batch)
        if loss_kind == "ce":
            correct += int(np.sum(np.argmax(pred, axis=1) == batch.targets))
        n += len(batch)
    return total / n, (correct / n if loss_kind == "ce" else None)


def loss_total_with_q3r(net: Net, batch: Batch, loss_kind: str, lam: float, operators: dict) -> float:
    """Data loss plus ``lam`` times the Q3R value of every Q3R-enabled matrix.

    ``operators`` maps parameter names to reweighting operators.
    """
    pred, _ = forward(net, batch)
    loss, _ = loss_fn(loss_kind)(pred, batch.targets)
    reg = 0.0
    for p in parameters(net):
        if not p.q3r_enabled:
            continue
        if p.name not in operators:
            raise KeyError(f"missing operator for {p.name}")
        reg += q3r_value(operators[p.name], p.w)
    return loss + lam * reg
