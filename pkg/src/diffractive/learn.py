"""Detector readout, losses, adjoint training with Adam, and evaluation metrics."""
from __future__ import annotations

import time
from dataclasses import asdict, dataclass, field

import numpy as np

from .data import Dataset, DetectorLayout
from .errors import AllZeroSignal, GeometryMismatch, NonFiniteScore, UnknownClass
from .network import NetworkSpec, backward, forward


@dataclass
class TrainConfig:
    loss: str = "cross-entropy"          # or "mse"
    learning_rate: float = 0.001
    adam_beta1: float = 0.9
    adam_beta2: float = 0.999
    adam_epsilon: float = 1e-8
    virtual_contrast_T: float = 10.0
    batch_size: int = 32
    epochs: int = 50
    seed: int = 0

    def __post_init__(self):
        if self.loss not in ("cross-entropy", "mse"):
            raise ValueError(f"unknown loss {self.loss!r}")
        if self.learning_rate < 0:
            raise ValueError("learning rate must be non-negative")
        if not (0 <= self.adam_beta1 < 1 and 0 <= self.adam_beta2 < 1):
            raise ValueError("Adam betas must lie in [0, 1)")
        if self.virtual_contrast_T <= 0:
            raise ValueError("virtual contrast T must be positive")
        if self.batch_size < 1 or self.epochs < 0:
            raise ValueError("batch_size >= 1 and epochs >= 0 required")

    def to_dict(self) -> dict:
        return asdict(self)


def detector_readout(y: np.ndarray, layout: DetectorLayout) -> np.ndarray:
    """Power on each detector, shape (C,) or (C, batch)."""
    y = np.asarray(y)
    if y.shape[0] != layout.aperture.size:
        raise GeometryMismatch(f"field has {y.shape[0]} cells, aperture has {layout.aperture.size}")
    p = np.abs(y) ** 2
    return np.stack([p[m].sum(axis=0) for m in layout.members])


def class_scores(intensity, T: float = 10.0) -> np.ndarray:
    """Softmax of the max-normalised signals scaled by the virtual contrast ``T``.

    Works along axis 0, so a (C, batch) array gives per-sample scores.
    """
    i = np.asarray(intensity, dtype=float)
    m = i.max(axis=0)
    if np.any(m <= 0):
        c = i.shape[0]
        raise AllZeroSignal("all detector signals are zero", np.full(i.shape, 1.0 / c))
    z = T * i / m
    z = z - z.max(axis=0)
    e = np.exp(z)
    return e / e.sum(axis=0)


def cross_entropy_loss(sigma, g) -> float:
    sigma = np.asarray(sigma, dtype=float)
    g = np.asarray(g, dtype=float)
    if not np.all(np.isfinite(sigma)):
        raise NonFiniteScore("class scores contain non-finite values")
    with np.errstate(divide="ignore"):
        logs = np.where(g > 0, np.log(sigma), 0.0)
    loss = -float(np.sum(g * logs))
    if not np.isfinite(loss):
        raise NonFiniteScore("cross-entropy is infinite (score of target class is zero)")
    return loss


def one_hot(label: int, classes: int) -> np.ndarray:
    g = np.zeros(classes)
    g[label] = 1.0
    return g


def cross_entropy_grad_intensity(intensity, label: int, T: float = 10.0):
    """Loss and dL/dI for one sample; zero gradient when every detector is dark."""
    i = np.asarray(intensity, dtype=float)
    c = i.size
    m_idx = int(np.argmax(i))
    m = i[m_idx]
    if m <= 0:
        return float(np.log(c)), np.zeros(c)
    sigma = class_scores(i, T)
    g = one_hot(label, c)
    loss = cross_entropy_loss(sigma, g)
    d = sigma - g                     # dL/dI'
    grad = (T / m) * d
    grad[m_idx] -= (T / m**2) * float(d @ i)
    return loss, grad


def target_profile(c: int, layout: DetectorLayout) -> np.ndarray:
    """Ground-truth intensity: 1 on detector ``c``, 0 elsewhere on the aperture."""
    if not 0 <= c < layout.classes:
        raise UnknownClass(f"class {c} not in [0, {layout.classes})")
    prof = np.zeros(layout.aperture.size)
    prof[layout.members[c]] = 1.0
    return prof


def mse_loss(y, c: int, layout: DetectorLayout) -> float:
    """Plain cell sum of (|u|^2 - target)^2 over the output aperture."""
    y = np.asarray(y)
    if y.shape[0] != layout.aperture.size:
        raise GeometryMismatch("field does not match the output aperture")
    return float(np.sum((np.abs(y) ** 2 - target_profile(c, layout)) ** 2))


def mse_grad_field(y, c: int, layout: DetectorLayout):
    """Loss and dL/dRe(u) + j dL/dIm(u)."""
    y = np.asarray(y)
    resid = np.abs(y) ** 2 - target_profile(c, layout)
    return float(np.sum(resid**2)), 4.0 * resid * y


def loss_and_field_grad(y: np.ndarray, labels, layout: DetectorLayout, config: TrainConfig):
    """Per-sample losses and output-field gradients for a (N_o, batch) field."""
    labels = np.asarray(labels)
    losses = np.empty(labels.size)
    grads = np.empty_like(y)
    if config.loss == "mse":
        for b, c in enumerate(labels):
            losses[b], grads[:, b] = mse_grad_field(y[:, b], int(c), layout)
        return losses, grads
    intensity = detector_readout(y, layout)
    grads[:] = 0
    for b, c in enumerate(labels):
        losses[b], d_i = cross_entropy_grad_intensity(intensity[:, b], int(c),
                                                      config.virtual_contrast_T)
        for k, m in enumerate(layout.members):
            grads[m, b] = 2.0 * d_i[k] * y[m, b]
    return losses, grads


class Adam:
    """Bias-corrected Adam over a list of parameter arrays (updated in place)."""

    def __init__(self, lr=0.001, beta1=0.9, beta2=0.999, epsilon=1e-8):
        self.lr = lr
        self.beta1 = beta1
        self.beta2 = beta2
        self.epsilon = epsilon
        self.m = None
        self.v = None
        self.t = 0

    @classmethod
    def from_config(cls, config: TrainConfig) -> "Adam":
        return cls(config.learning_rate, config.adam_beta1, config.adam_beta2, config.adam_epsilon)

    def step(self, params: list[np.ndarray], grads: list[np.ndarray]) -> None:
        if self.m is None:
            self.m = [np.zeros_like(p) for p in params]
            self.v = [np.zeros_like(p) for p in params]
        if len(params) != len(self.m):
            raise ValueError("optimizer state does not match the parameter list")
        self.t += 1
        bc1 = 1.0 - self.beta1**self.t
        bc2 = 1.0 - self.beta2**self.t
        for p, g, m, v in zip(params, grads, self.m, self.v):
            m *= self.beta1
            m += (1.0 - self.beta1) * g
            v *= self.beta2
            v += (1.0 - self.beta2) * (g * g)
            p -= self.lr * (m / bc1) / (np.sqrt(v / bc2) + self.epsilon)


def adam_step(state: Adam, params: list[np.ndarray], grads: list[np.ndarray]):
    state.step(params, grads)
    return params, state


def trainable(net: NetworkSpec):
    """Parameter arrays that training updates, with their gradient keys."""
    out = []
    for k, s in enumerate(net.layers):
        out.append((k, "phase", s.raw_phase))
        if s.mode == "complex":
            out.append((k, "amplitude", s.raw_amplitude))
    return out


def batch_gradients(net: NetworkSpec, x, labels, layout, config):
    """Mean loss, per-sample losses, output fields and batch-averaged gradients."""
    y, cache = forward(net, x)
    losses, g_y = loss_and_field_grad(y, labels, layout, config)
    grads = backward(net, cache, g_y / len(labels))
    return losses, y, grads


def dataset_loss(net: NetworkSpec, data: Dataset, layout, config: TrainConfig,
                 chunk: int = 256) -> float:
    total = 0.0
    for s in range(0, len(data), chunk):
        y, _ = forward(net, data.inputs[:, s:s + chunk])
        losses, _ = loss_and_field_grad(y, data.labels[s:s + chunk], layout, config)
        total += losses.sum()
    return total / len(data)


def train(net: NetworkSpec, data: Dataset, layout: DetectorLayout, config: TrainConfig,
          callback=None):
    """Mini-batch Adam training; returns the (mutated) network and per-epoch history."""
    if len(data) == 0:
        raise ValueError("empty dataset")
    opt = Adam.from_config(config)
    params = trainable(net)
    history = []
    n = len(data)
    for epoch in range(config.epochs):
        t0 = time.perf_counter()
        order = np.random.default_rng([config.seed, epoch]).permutation(n)
        loss_sum = 0.0
        correct = 0
        for s in range(0, n, config.batch_size):
            idx = order[s:s + config.batch_size]
            losses, y, grads = batch_gradients(net, data.inputs[:, idx], data.labels[idx],
                                               layout, config)
            loss_sum += losses.sum()
            correct += int(np.sum(np.argmax(detector_readout(y, layout), axis=0)
                                  == data.labels[idx]))
            opt.step([p for _, _, p in params], [grads[k][key] for k, key, _ in params])
        rec = {"epoch": epoch + 1, "mean_loss": loss_sum / n, "train_accuracy": correct / n,
               "wall_time": time.perf_counter() - t0}
        history.append(rec)
        if callback is not None:
            callback(rec)
    return net, history


@dataclass
class Metrics:
    accuracy: float
    mean_efficiency: float
    mean_contrast: float
    count: int
    undefined_contrast: int = 0
    per_class: dict = field(default_factory=dict)

    def to_dict(self) -> dict:
        return asdict(self)


def sample_scores(intensity: np.ndarray, labels) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    """Correctness, efficiency and contrast per sample; contrast is -inf when undefined."""
    i = np.asarray(intensity, dtype=float)
    labels = np.asarray(labels)
    if i.ndim == 1:
        i = i[:, None]
        labels = labels.reshape(1)
    cols = np.arange(labels.size)
    total = i.sum(axis=0)
    gt = i[labels, cols]
    others = i.copy()
    others[labels, cols] = -np.inf
    sc = others.max(axis=0)
    dark = total <= 0
    correct = (np.argmax(i, axis=0) == labels) & ~dark
    with np.errstate(divide="ignore", invalid="ignore"):
        eff = np.where(dark, 0.0, gt / np.where(dark, 1.0, total))
        contrast = np.where(gt > 0, (gt - sc) / np.where(gt > 0, gt, 1.0), -np.inf)
    return correct, eff, contrast


def metrics_from_intensity(intensity, labels, classes: int | None = None) -> Metrics:
    labels = np.asarray(labels)
    correct, eff, contrast = sample_scores(intensity, labels)
    finite = np.isfinite(contrast)
    classes = int(np.asarray(intensity).shape[0]) if classes is None else classes
    per_class = {}
    for c in range(classes):
        sel = labels == c
        if not sel.any():
            continue
        fc = finite & sel
        per_class[c] = {
            "count": int(sel.sum()),
            "accuracy": float(correct[sel].mean()),
            "efficiency": float(eff[sel].mean()),
            "contrast": float(contrast[fc].mean()) if fc.any() else None,
        }
    return Metrics(
        accuracy=float(correct.mean()),
        mean_efficiency=float(eff.mean()),
        mean_contrast=float(contrast[finite].mean()) if finite.any() else float("nan"),
        count=int(labels.size),
        undefined_contrast=int((~finite).sum()),
        per_class=per_class,
    )


def evaluate(net: NetworkSpec, data: Dataset, layout: DetectorLayout, chunk: int = 256) -> Metrics:
    if len(data) == 0:
        raise ValueError("empty dataset")
    parts = []
    for s in range(0, len(data), chunk):
        y, _ = forward(net, data.inputs[:, s:s + chunk])
        parts.append(detector_readout(y, layout))
    return metrics_from_intensity(np.hstack(parts), data.labels, layout.classes)
