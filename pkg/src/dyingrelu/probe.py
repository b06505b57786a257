"""Per-layer activation probabilities of a small ReLU MLP during training.

A plain numpy multilayer perceptron (ReLU hidden layers, softmax output,
cross-entropy loss, mini-batch gradient descent) is trained on isotropic
Gaussian class blobs.  After every epoch the fraction of (unit, sample) pairs
with a positive pre-activation is measured on the whole training set, one
number per hidden layer.
"""
from __future__ import annotations

import csv
import math
from dataclasses import dataclass, field
from typing import Optional, Sequence

import numpy as np

__all__ = [
    "BlobSpec",
    "MlpConfig",
    "Mlp",
    "ProbeResult",
    "GradCheckResult",
    "make_blobs",
    "train_and_probe",
    "gradient_check",
]


@dataclass(frozen=True)
class BlobSpec:
    classes: int = 2
    per_class: int = 200
    dim: int = 10
    separation: float = 3.0

    def __post_init__(self):
        if self.classes < 2 or self.per_class < 1 or self.dim < 1:
            raise ValueError(f"invalid dataset spec: {self}")


@dataclass(frozen=True)
class MlpConfig:
    layer_sizes: tuple = (10, 32, 32, 32, 2)
    eta: float = 0.05
    epochs: int = 50
    batch_size: int = 32
    seed: int = 0
    dataset: BlobSpec = field(default_factory=BlobSpec)
    # forces hidden layer `dead_layer` (0-based) into the y < 0 region
    dead_layer: Optional[int] = None
    dead_bias: float = -1e3
    dead_weight_scale: float = 1e-6

    def __post_init__(self):
        object.__setattr__(self, "layer_sizes", tuple(int(s) for s in self.layer_sizes))
        if len(self.layer_sizes) < 2 or min(self.layer_sizes) < 1:
            raise ValueError(f"layer_sizes must have >= 2 positive entries, got {self.layer_sizes}")
        if self.layer_sizes[0] != self.dataset.dim:
            raise ValueError("input size must equal dataset.dim")
        if self.layer_sizes[-1] != self.dataset.classes:
            raise ValueError("output size must equal dataset.classes")
        if self.eta <= 0 or self.epochs < 0 or self.batch_size < 1:
            raise ValueError("need eta > 0, epochs >= 0, batch_size >= 1")
        if self.dead_layer is not None and not (0 <= self.dead_layer < self.n_hidden):
            raise ValueError(f"dead_layer must index one of {self.n_hidden} hidden layers")

    @property
    def n_hidden(self) -> int:
        return len(self.layer_sizes) - 2

    def to_dict(self) -> dict:
        return {
            "layer_sizes": list(self.layer_sizes),
            "eta": self.eta,
            "epochs": self.epochs,
            "batch_size": self.batch_size,
            "seed": self.seed,
            "dataset": vars(self.dataset).copy(),
            "dead_layer": self.dead_layer,
            "dead_bias": self.dead_bias,
            "dead_weight_scale": self.dead_weight_scale,
        }

    @classmethod
    def from_dict(cls, d: dict) -> "MlpConfig":
        d = dict(d)
        d["dataset"] = BlobSpec(**d.get("dataset", {}))
        return cls(**d)


def _streams(seed: int):
    data, init, order = np.random.SeedSequence(seed).spawn(3)
    return np.random.default_rng(data), np.random.default_rng(init), np.random.default_rng(order)


def make_blobs(spec: BlobSpec, rng: np.random.Generator):
    """Gaussian blobs with unit covariance; class means sit ``separation`` from the origin."""
    centers = rng.standard_normal((spec.classes, spec.dim))
    centers *= spec.separation / np.linalg.norm(centers, axis=1, keepdims=True)
    labels = np.repeat(np.arange(spec.classes), spec.per_class)
    X = centers[labels] + rng.standard_normal((labels.size, spec.dim))
    return X, labels


class Mlp:
    """ReLU hidden layers followed by a linear softmax output layer."""

    def __init__(self, weights: Sequence[np.ndarray], biases: Sequence[np.ndarray]):
        self.weights = [np.array(W, dtype=float) for W in weights]
        self.biases = [np.array(b, dtype=float) for b in biases]

    @classmethod
    def he_normal(cls, layer_sizes, rng: np.random.Generator) -> "Mlp":
        weights, biases = [], []
        for fan_in, fan_out in zip(layer_sizes[:-1], layer_sizes[1:]):
            weights.append(rng.standard_normal((fan_in, fan_out)) * math.sqrt(2.0 / fan_in))
            biases.append(np.zeros(fan_out))
        return cls(weights, biases)

    @property
    def params(self) -> list[np.ndarray]:
        out = []
        for W, b in zip(self.weights, self.biases):
            out += [W, b]
        return out

    def forward(self, X):
        """Returns ``(pre_activations, logits)``; one pre-activation array per hidden layer."""
        pre = []
        h = X
        for W, b in zip(self.weights[:-1], self.biases[:-1]):
            z = h @ W + b
            pre.append(z)
            h = np.maximum(z, 0.0)
        return pre, h @ self.weights[-1] + self.biases[-1]

    def loss(self, X, y) -> float:
        return _cross_entropy(self.forward(X)[1], y)

    def gradients(self, X, y):
        """Loss and gradients of the mean cross-entropy, in :attr:`params` order."""
        pre, logits = self.forward(X)
        n = X.shape[0]
        loss = _cross_entropy(logits, y)
        delta = _softmax(logits)
        delta[np.arange(n), y] -= 1.0
        delta /= n
        acts = [X] + [np.maximum(z, 0.0) for z in pre]
        grads = []
        for layer in range(len(self.weights) - 1, -1, -1):
            grads.append(delta.sum(axis=0))
            grads.append(acts[layer].T @ delta)
            if layer > 0:
                delta = (delta @ self.weights[layer].T) * (pre[layer - 1] > 0.0)
        grads.reverse()
        return loss, grads

    def sgd_step(self, X, y, eta: float) -> None:
        _, grads = self.gradients(X, y)
        for p, g in zip(self.params, grads):
            p -= eta * g

    def activation_probs(self, X) -> np.ndarray:
        pre, _ = self.forward(X)
        return np.array([float(np.mean(z > 0.0)) for z in pre])


def _softmax(logits):
    z = logits - logits.max(axis=1, keepdims=True)
    e = np.exp(z)
    return e / e.sum(axis=1, keepdims=True)


def _cross_entropy(logits, y) -> float:
    z = logits - logits.max(axis=1, keepdims=True)
    logp = z - np.log(np.exp(z).sum(axis=1, keepdims=True))
    return -float(np.mean(logp[np.arange(y.size), y]))


def build(config: MlpConfig):
    """Dataset, initialized network and shuffling stream for ``config``."""
    data_rng, init_rng, order_rng = _streams(config.seed)
    X, y = make_blobs(config.dataset, data_rng)
    net = Mlp.he_normal(config.layer_sizes, init_rng)
    if config.dead_layer is not None:
        net.weights[config.dead_layer] *= config.dead_weight_scale
        net.biases[config.dead_layer][:] = config.dead_bias
    return X, y, net, order_rng


@dataclass(eq=False)
class ProbeResult:
    config: MlpConfig
    activation: np.ndarray  # (epochs, hidden layers), measured after each epoch
    initial_activation: np.ndarray
    loss: np.ndarray  # initial loss followed by one entry per completed epoch
    diverged: bool = False
    diagnostic: str = ""

    @property
    def epochs_completed(self) -> int:
        return int(self.activation.shape[0])

    def activation_rows(self):
        for e in range(self.activation.shape[0]):
            for layer in range(self.activation.shape[1]):
                yield e + 1, layer + 1, float(self.activation[e, layer])

    def write_activation_csv(self, path) -> None:
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(["epoch", "layer", "activation_prob"])
            for e, layer, v in self.activation_rows():
                w.writerow([e, layer, repr(v)])

    def write_loss_csv(self, path) -> None:
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(["epoch", "loss"])
            for e, v in enumerate(self.loss):
                w.writerow([e, repr(float(v))])


def train_and_probe(config: MlpConfig) -> ProbeResult:
    """Train with mini-batch gradient descent, recording Pr[y > 0] per hidden layer per epoch.

    Training stops early, with ``diverged=True`` and a diagnostic message, if
    the training loss becomes non-finite or exceeds ten times its initial value.
    """
    if config.n_hidden < 1:
        raise ValueError("probing needs at least one hidden layer")
    X, y, net, order_rng = build(config)
    n = X.shape[0]
    init_act = net.activation_probs(X)
    loss0 = net.loss(X, y)
    losses = [loss0]
    acts = []
    diverged, diagnostic = False, ""
    with np.errstate(over="ignore", invalid="ignore"):
        for epoch in range(1, config.epochs + 1):
            order = order_rng.permutation(n)
            for start in range(0, n, config.batch_size):
                idx = order[start : start + config.batch_size]
                net.sgd_step(X[idx], y[idx], config.eta)
            loss = net.loss(X, y)
            if not math.isfinite(loss) or loss > 10.0 * loss0:
                diverged = True
                diagnostic = f"training diverged at epoch {epoch}: loss {loss:.4g} vs initial {loss0:.4g}"
                break
            losses.append(loss)
            acts.append(net.activation_probs(X))
    return ProbeResult(
        config=config,
        activation=np.array(acts).reshape(len(acts), config.n_hidden),
        initial_activation=init_act,
        loss=np.array(losses),
        diverged=diverged,
        diagnostic=diagnostic,
    )


@dataclass
class GradCheckResult:
    max_rel_error: float
    checked: int
    # (parameter index in Mlp.params, flat coordinate) pairs skipped at ReLU kinks
    excluded: list = field(default_factory=list)


def gradient_check(
    config: MlpConfig,
    net: Optional[Mlp] = None,
    batch=None,
    step: float = 1e-5,
    floor: float = 1e-8,
) -> GradCheckResult:
    """Compare backprop gradients with central differences on a fixed batch.

    Coordinates whose perturbation flips the sign of any hidden
    pre-activation straddle a ReLU kink; they are listed in ``excluded``
    instead of being compared.  The discrepancy of a coordinate is
    ``|g - g_fd| / max(|g| + |g_fd|, floor)``.
    """
    if net is None or batch is None:
        X, y, built, _ = build(config)
        net = net if net is not None else built
        if batch is None:
            batch = (X[: config.batch_size], y[: config.batch_size])
    Xb, yb = batch
    _, grads = net.gradients(Xb, yb)

    def signs():
        return [z > 0.0 for z in net.forward(Xb)[0]]

    base = signs()
    worst, checked, excluded = 0.0, 0, []
    for pi, (p, g) in enumerate(zip(net.params, grads)):
        flat, gflat = p.reshape(-1), g.reshape(-1)
        for i in range(flat.size):
            orig = flat[i]
            flat[i] = orig + step
            lp, sp = net.loss(Xb, yb), signs()
            flat[i] = orig - step
            lm, sm = net.loss(Xb, yb), signs()
            flat[i] = orig
            if any((a != b).any() or (c != b).any() for a, b, c in zip(sp, base, sm)):
                excluded.append((pi, i))
                continue
            fd = (lp - lm) / (2.0 * step)
            worst = max(worst, abs(gflat[i] - fd) / max(abs(gflat[i]) + abs(fd), floor))
            checked += 1
    return GradCheckResult(max_rel_error=worst, checked=checked, excluded=excluded)
