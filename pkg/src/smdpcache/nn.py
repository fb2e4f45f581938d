"""Small fully connected networks with hand-written backpropagation."""

from __future__ import annotations

import json
from pathlib import Path

import numpy as np

CHECKPOINT_VERSION = 1


class DivergenceError(FloatingPointError):
    """Raised when a loss or gradient stops being finite."""


def softmax(z: np.ndarray) -> np.ndarray:
    z = z - z.max(axis=-1, keepdims=True)
    e = np.exp(z)
    return e / e.sum(axis=-1, keepdims=True)


def log_softmax(z: np.ndarray) -> np.ndarray:
    z = z - z.max(axis=-1, keepdims=True)
    return z - np.log(np.exp(z).sum(axis=-1, keepdims=True))


class Mlp:
    """ReLU network; ``head`` is ``"softmax"`` (actor) or ``"linear"`` (critic).

    Weights start uniform in [-init_range, init_range], biases at ``bias_init``.
    """

    def __init__(self, layer_dims, head="linear", rng=None, init_range=0.1, bias_init=0.1):
        if len(layer_dims) < 2:
            raise ValueError("need at least input and output dimensions")
        if head not in ("linear", "softmax"):
            raise ValueError(f"unknown head {head!r}")
        rng = np.random.default_rng(rng)
        self.layer_dims = [int(d) for d in layer_dims]
        self.head = head
        self.weights = [
            rng.uniform(-init_range, init_range, size=(a, b))
            for a, b in zip(self.layer_dims[:-1], self.layer_dims[1:])
        ]
        self.biases = [np.full(b, float(bias_init)) for b in self.layer_dims[1:]]

    @property
    def params(self) -> list[np.ndarray]:
        out = []
        for w, b in zip(self.weights, self.biases):
            out += [w, b]
        return out

    def copy(self) -> "Mlp":
        other = Mlp.__new__(Mlp)
        other.layer_dims = list(self.layer_dims)
        other.head = self.head
        other.weights = [w.copy() for w in self.weights]
        other.biases = [b.copy() for b in self.biases]
        return other

    def _check(self, x):
        if x.shape[-1] != self.layer_dims[0]:
            raise ValueError(f"expected input dim {self.layer_dims[0]}, got {x.shape[-1]}")

    def raw(self, x: np.ndarray) -> np.ndarray:
        """Output of the last affine layer (logits or value)."""
        x = np.asarray(x, dtype=np.float64)
        self._check(x)
        last = len(self.weights) - 1
        for i, (w, b) in enumerate(zip(self.weights, self.biases)):
            x = x @ w + b
            if i < last:
                x = np.maximum(x, 0.0)
        return x

    def forward(self, x: np.ndarray) -> np.ndarray:
        out = self.raw(x)
        return softmax(out) if self.head == "softmax" else out

    def backward(self, x: np.ndarray, upstream: np.ndarray) -> list[np.ndarray]:
        """Gradients of ``sum(upstream * raw(x))`` with respect to ``params``.

        ``x`` may be one sample or a batch. The ReLU subgradient at 0 is 0.
        """
        x = np.atleast_2d(np.asarray(x, dtype=np.float64))
        self._check(x)
        g = np.asarray(upstream, dtype=np.float64).reshape(x.shape[0], self.layer_dims[-1])
        acts = [x]
        last = len(self.weights) - 1
        h = x
        for i, (w, b) in enumerate(zip(self.weights, self.biases)):
            h = h @ w + b
            if i < last:
                h = np.maximum(h, 0.0)
            acts.append(h)
        grads = [None] * (2 * len(self.weights))
        for i in range(last, -1, -1):
            grads[2 * i] = acts[i].T @ g
            grads[2 * i + 1] = g.sum(axis=0)
            if i > 0:
                g = (g @ self.weights[i].T) * (acts[i] > 0.0)
        return grads

    def state_dict(self) -> dict:
        return {
            "layer_dims": self.layer_dims,
            "head": self.head,
            "weights": [w.ravel().tolist() for w in self.weights],
            "biases": [b.tolist() for b in self.biases],
        }

    @classmethod
    def from_state_dict(cls, d: dict) -> "Mlp":
        net = cls.__new__(cls)
        net.layer_dims = [int(v) for v in d["layer_dims"]]
        net.head = d["head"]
        dims = net.layer_dims
        net.weights = [
            np.array(w, dtype=np.float64).reshape(a, b)
            for w, a, b in zip(d["weights"], dims[:-1], dims[1:])
        ]
        net.biases = [np.array(b, dtype=np.float64) for b in d["biases"]]
        return net


def forward(net: Mlp, x) -> np.ndarray:
    return net.forward(x)


def gradients(net: Mlp, x, upstream) -> list[np.ndarray]:
    return net.backward(x, upstream)


class Adam:
    """Adaptive-moment optimiser; ``sgd=True`` degrades it to plain SGD."""

    def __init__(self, params, lr=3e-4, beta1=0.9, beta2=0.999, eps=1e-8, sgd=False):
        self.lr = lr
        self.beta1 = beta1
        self.beta2 = beta2
        self.eps = eps
        self.sgd = sgd
        self.t = 0
        self.m = [np.zeros_like(p) for p in params]
        self.v = [np.zeros_like(p) for p in params]

    def step(self, params, grads, lr=None):
        lr = self.lr if lr is None else lr
        for g in grads:
            if not np.all(np.isfinite(g)):
                raise DivergenceError("non-finite gradient")
        if self.sgd:
            for p, g in zip(params, grads):
                p -= lr * g
            return
        self.t += 1
        c1 = 1.0 - self.beta1 ** self.t
        c2 = 1.0 - self.beta2 ** self.t
        for p, g, m, v in zip(params, grads, self.m, self.v):
            m *= self.beta1
            m += (1.0 - self.beta1) * g
            v *= self.beta2
            v += (1.0 - self.beta2) * g * g
            p -= lr * (m / c1) / (np.sqrt(v / c2) + self.eps)

    def state_dict(self) -> dict:
        return {
            "t": self.t,
            "lr": self.lr,
            "beta1": self.beta1,
            "beta2": self.beta2,
            "eps": self.eps,
            "sgd": self.sgd,
            "m": [a.ravel().tolist() for a in self.m],
            "v": [a.ravel().tolist() for a in self.v],
        }

    def load_state_dict(self, d: dict):
        self.t = int(d["t"])
        self.lr, self.beta1, self.beta2, self.eps = d["lr"], d["beta1"], d["beta2"], d["eps"]
        self.sgd = bool(d["sgd"])
        self.m = [np.array(a, dtype=np.float64).reshape(p.shape) for a, p in zip(d["m"], self.m)]
        self.v = [np.array(a, dtype=np.float64).reshape(p.shape) for a, p in zip(d["v"], self.v)]


def apply_update(net: Mlp, grads, optimizer: Adam, lr=None) -> Mlp:
    optimizer.step(net.params, grads, lr)
    return net


def save_checkpoint(path, net: Mlp, optimizer: Adam | None = None):
    payload = {"version": CHECKPOINT_VERSION, **net.state_dict(),
               "has_optimizer": optimizer is not None}
    if optimizer is not None:
        payload["optimizer"] = optimizer.state_dict()
    Path(path).write_text(json.dumps(payload))


def load_checkpoint(path) -> tuple[Mlp, Adam | None]:
    payload = json.loads(Path(path).read_text())
    if payload.get("version") != CHECKPOINT_VERSION:
        raise ValueError(f"unsupported checkpoint version {payload.get('version')}")
    net = Mlp.from_state_dict(payload)
    opt = None
    if payload.get("has_optimizer"):
        opt = Adam(net.params)
        opt.load_state_dict(payload["optimizer"])
    return net, opt
