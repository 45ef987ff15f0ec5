"""Small softmax classifier with hand-written gradients.

One hidden rectifier layer (width 0 degenerates to softmax regression).
The gradient of the weighted proportion loss over a batch of mini-bags is
computed analytically; no autodiff framework is involved.
"""

from __future__ import annotations

from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .losses import LOG_CLAMP


@dataclass
class ClassifierParams:
    """Weights of the affine -> rectifier -> affine -> softmax network.

    ``w1``/``b1`` are None when there is no hidden layer.
    """

    w1: np.ndarray | None
    b1: np.ndarray | None
    w2: np.ndarray
    b2: np.ndarray

    @property
    def dim(self) -> int:
        return (self.w1 if self.w1 is not None else self.w2).shape[0]

    @property
    def hidden(self) -> int:
        return 0 if self.w1 is None else self.w1.shape[1]

    @property
    def num_classes(self) -> int:
        return self.w2.shape[1]

    def copy(self) -> "ClassifierParams":
        return ClassifierParams(
            w1=None if self.w1 is None else self.w1.copy(),
            b1=None if self.b1 is None else self.b1.copy(),
            w2=self.w2.copy(),
            b2=self.b2.copy(),
        )

    def arrays(self):
        if self.w1 is None:
            return {"w2": self.w2, "b2": self.b2}
        return {"w1": self.w1, "b1": self.b1, "w2": self.w2, "b2": self.b2}


@dataclass
class GradientBundle:
    """Per-parameter gradients, shape-congruent with ClassifierParams."""

    w1: np.ndarray | None
    b1: np.ndarray | None
    w2: np.ndarray
    b2: np.ndarray

    def arrays(self):
        if self.w1 is None:
            return {"w2": self.w2, "b2": self.b2}
        return {"w1": self.w1, "b1": self.b1, "w2": self.w2, "b2": self.b2}


def init_classifier(
    dim: int, hidden: int, num_classes: int, rng: np.random.Generator
) -> ClassifierParams:
    """Uniform init in [-1/sqrt(fan_in), +1/sqrt(fan_in)], biases zero."""

    def layer(fan_in, fan_out):
        limit = 1.0 / np.sqrt(fan_in)
        return rng.uniform(-limit, limit, size=(fan_in, fan_out))

    if hidden == 0:
        return ClassifierParams(
            w1=None, b1=None, w2=layer(dim, num_classes), b2=np.zeros(num_classes)
        )
    return ClassifierParams(
        w1=layer(dim, hidden),
        b1=np.zeros(hidden),
        w2=layer(hidden, num_classes),
        b2=np.zeros(num_classes),
    )


def _softmax(z: np.ndarray) -> np.ndarray:
    shifted = z - z.max(axis=1, keepdims=True)
    e = np.exp(shifted)
    return e / e.sum(axis=1, keepdims=True)


def _forward_matrix(params: ClassifierParams, x: np.ndarray):
    if x.shape[1] != params.dim:
        raise ValueError(f"feature dim {x.shape[1]} != model dim {params.dim}")
    if params.w1 is None:
        hidden_pre = None
        activations = x
    else:
        hidden_pre = x @ params.w1 + params.b1
        activations = np.maximum(hidden_pre, 0.0)
    probs = _softmax(activations @ params.w2 + params.b2)
    return probs, hidden_pre, activations


def forward(params: ClassifierParams, features) -> np.ndarray:
    """Per-class confidences: positive, summing to one per instance.

    Accepts a single feature vector or a matrix of rows; the output keeps
    the input's dimensionality.
    """
    features = np.asarray(features, dtype=np.float64)
    single = features.ndim == 1
    probs, _, _ = _forward_matrix(params, np.atleast_2d(features))
    return probs[0] if single else probs


def batch_gradient(params: ClassifierParams, batch, eps: float = LOG_CLAMP):
    """Loss and exact gradient of the weighted proportion loss.

    ``batch`` is a sequence of (features, target, weight) triples, one per
    mini-bag; the loss is sum_i w_i * CE(column mean of softmax, target_i).
    Returns (loss, GradientBundle). Equal-size mini-bags take a stacked
    fast path; the result is the same either way.
    """
    if len(batch) == 0:
        raise ValueError("empty batch")

    mats = [np.atleast_2d(np.asarray(f, dtype=np.float64)) for f, _, _ in batch]
    targets = np.stack([np.asarray(t, dtype=np.float64) for _, t, _ in batch])
    weights = np.array([w for _, _, w in batch], dtype=np.float64)
    sizes = {m.shape[0] for m in mats}
    if len(sizes) == 1:
        return _batch_gradient_stacked(params, np.stack(mats), targets, weights, eps)

    gw1 = None if params.w1 is None else np.zeros_like(params.w1)
    gb1 = None if params.b1 is None else np.zeros_like(params.b1)
    gw2 = np.zeros_like(params.w2)
    gb2 = np.zeros_like(params.b2)
    total_loss = 0.0
    for x, target, weight in zip(mats, targets, weights):
        n = x.shape[0]
        probs, hidden_pre, activations = _forward_matrix(params, x)
        mean_conf = probs.mean(axis=0)
        clamped = np.clip(mean_conf, eps, 1.0)
        total_loss += weight * float(-(target * np.log(clamped)).sum())

        # d loss / d mean confidence; the clamp freezes entries below eps
        g_mean = np.where(mean_conf > eps, -target / clamped, 0.0)
        g_probs = np.tile((weight / n) * g_mean, (n, 1))
        # softmax backward per row: P * (g - <g, P>)
        inner = (g_probs * probs).sum(axis=1, keepdims=True)
        g_logits = probs * (g_probs - inner)

        gw2 += activations.T @ g_logits
        gb2 += g_logits.sum(axis=0)
        if params.w1 is not None:
            g_act = g_logits @ params.w2.T
            g_pre = g_act * (hidden_pre > 0)
            gw1 += x.T @ g_pre
            gb1 += g_pre.sum(axis=0)

    return total_loss, GradientBundle(w1=gw1, b1=gb1, w2=gw2, b2=gb2)


def _batch_gradient_stacked(params, x, targets, weights, eps):
    """Equal-size fast path; (bags, n, dim) inputs, one flat forward pass."""
    bags, n, dim = x.shape
    flat = x.reshape(bags * n, dim)
    probs, hidden_pre, activations = _forward_matrix(params, flat)
    mean_conf = probs.reshape(bags, n, -1).mean(axis=1)
    clamped = np.clip(mean_conf, eps, 1.0)
    total_loss = float((weights * -(targets * np.log(clamped)).sum(axis=1)).sum())

    g_mean = np.where(mean_conf > eps, -targets / clamped, 0.0)
    g_probs = np.repeat((weights[:, None] / n) * g_mean, n, axis=0)
    inner = (g_probs * probs).sum(axis=1, keepdims=True)
    g_logits = probs * (g_probs - inner)

    gw2 = activations.T @ g_logits
    gb2 = g_logits.sum(axis=0)
    if params.w1 is None:
        return total_loss, GradientBundle(w1=None, b1=None, w2=gw2, b2=gb2)
    g_act = g_logits @ params.w2.T
    g_pre = g_act * (hidden_pre > 0)
    return total_loss, GradientBundle(
        w1=flat.T @ g_pre, b1=g_pre.sum(axis=0), w2=gw2, b2=gb2
    )


def sgd_step(
    params: ClassifierParams, grads: GradientBundle, learning_rate: float
) -> ClassifierParams:
    """Plain gradient-descent update; returns fresh parameters."""

    def upd(p, g):
        return None if p is None else p - learning_rate * g

    return ClassifierParams(
        w1=upd(params.w1, grads.w1),
        b1=upd(params.b1, grads.b1),
        w2=params.w2 - learning_rate * grads.w2,
        b2=params.b2 - learning_rate * grads.b2,
    )


class AdamOptimizer:
    """Adam with bias correction.

    Noise-adaptive per-parameter scaling matters for perturbed-supervision
    training: coordinates whose gradients fluctuate across drawn targets
    get throttled, which plain gradient descent cannot do.
    """

    def __init__(self, learning_rate: float, beta1: float = 0.9, beta2: float = 0.999, eps: float = 1e-8):
        self.learning_rate = learning_rate
        self.beta1 = beta1
        self.beta2 = beta2
        self.eps = eps
        self._m: dict[str, np.ndarray] = {}
        self._v: dict[str, np.ndarray] = {}
        self._t = 0

    def step(self, params: ClassifierParams, grads: GradientBundle) -> ClassifierParams:
        self._t += 1
        new = params.copy()
        new_arrays = new.arrays()
        for name, g in grads.arrays().items():
            m = self._m.get(name)
            if m is None:
                m = np.zeros_like(g)
                self._v[name] = np.zeros_like(g)
            v = self._v[name]
            m = self.beta1 * m + (1 - self.beta1) * g
            v = self.beta2 * v + (1 - self.beta2) * g * g
            self._m[name], self._v[name] = m, v
            m_hat = m / (1 - self.beta1**self._t)
            v_hat = v / (1 - self.beta2**self._t)
            new_arrays[name] -= self.learning_rate * m_hat / (np.sqrt(v_hat) + self.eps)
        return new


class SgdOptimizer:
    """Gradient descent with optional classical momentum."""

    def __init__(self, learning_rate: float, momentum: float = 0.0):
        self.learning_rate = learning_rate
        self.momentum = momentum
        self._velocity: GradientBundle | None = None

    def step(self, params: ClassifierParams, grads: GradientBundle) -> ClassifierParams:
        if self.momentum == 0.0:
            return sgd_step(params, grads, self.learning_rate)
        if self._velocity is None:
            self._velocity = GradientBundle(
                w1=None if grads.w1 is None else np.zeros_like(grads.w1),
                b1=None if grads.b1 is None else np.zeros_like(grads.b1),
                w2=np.zeros_like(grads.w2),
                b2=np.zeros_like(grads.b2),
            )
        v = self._velocity

        def mix(vel, g):
            return None if vel is None else self.momentum * vel + g

        self._velocity = GradientBundle(
            w1=mix(v.w1, grads.w1), b1=mix(v.b1, grads.b1),
            w2=self.momentum * v.w2 + grads.w2, b2=self.momentum * v.b2 + grads.b2,
        )
        return sgd_step(params, self._velocity, self.learning_rate)


# -- checkpoint format -------------------------------------------------------
#
# Plain text: a header of `key value` lines, then one block per parameter
# array with one row of 17-significant-digit decimals per matrix row.
# Decimal round-trips are bit exact for float64.

_MAGIC = "bagprop-checkpoint 1"


def save_checkpoint(params: ClassifierParams, path, seed: int, epoch: int):
    path = Path(path)
    lines = [
        _MAGIC,
        f"dim {params.dim}",
        f"hidden {params.hidden}",
        f"classes {params.num_classes}",
        f"seed {seed}",
        f"epoch {epoch}",
    ]
    for name, arr in params.arrays().items():
        mat = np.atleast_2d(arr)
        lines.append(f"param {name} {mat.shape[0]} {mat.shape[1]}")
        for row in mat:
            lines.append(" ".join(f"{v:.17g}" for v in row))
    path.write_text("\n".join(lines) + "\n")


def load_checkpoint(path) -> tuple[ClassifierParams, dict]:
    lines = Path(path).read_text().splitlines()
    if not lines or lines[0] != _MAGIC:
        raise ValueError(f"{path} is not a classifier checkpoint")
    meta = {}
    i = 1
    while i < len(lines) and not lines[i].startswith("param "):
        key, value = lines[i].split(maxsplit=1)
        meta[key] = int(value)
        i += 1
    arrays = {}
    while i < len(lines):
        _, name, rows, cols = lines[i].split()
        rows, cols = int(rows), int(cols)
        block = np.array(
            [[float(v) for v in lines[i + 1 + r].split()] for r in range(rows)]
        )
        arrays[name] = block
        i += 1 + rows
    hidden = meta["hidden"]
    params = ClassifierParams(
        w1=arrays["w1"] if hidden else None,
        b1=arrays["b1"][0] if hidden else None,
        w2=arrays["w2"],
        b2=arrays["b2"][0],
    )
    return params, meta
