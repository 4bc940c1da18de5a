"""Multinomial logistic regression on frozen embeddings.

The classifier minimizes summed softmax cross-entropy plus an L2 penalty
``(1/(2C)) * ||W||^2`` on the weights (bias unregularized) with a
deterministic full-batch quasi-Newton method, to a projected-gradient
tolerance of 1e-5.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy.optimize import minimize


@dataclass(frozen=True)
class ClassifierModel:
    weights: np.ndarray  # (num_classes, k)
    bias: np.ndarray  # (num_classes,)
    reg_strength: float


def softmax_objective(flat, x, y, num_classes, inv_c):
    """Loss and gradient of summed cross-entropy + (1/(2C))||W||^2."""
    k = x.shape[1]
    w = flat[: num_classes * k].reshape(num_classes, k)
    b = flat[num_classes * k :]
    logits = x @ w.T + b
    logits -= logits.max(axis=1, keepdims=True)
    exp = np.exp(logits)
    probs = exp / exp.sum(axis=1, keepdims=True)
    n = len(y)
    loss = -np.log(probs[np.arange(n), y] + 1e-300).sum() + 0.5 * inv_c * np.sum(w * w)
    delta = probs
    delta[np.arange(n), y] -= 1.0
    grad_w = delta.T @ x + inv_c * w
    grad_b = delta.sum(axis=0)
    return loss, np.concatenate([grad_w.ravel(), grad_b])


def fit_logistic(z_train, y_train, reg_strength=1.0, num_classes=None, gtol=1e-5, max_iter=1000):
    """Fit the softmax classifier; raises on a single-class training set."""
    x = np.asarray(z_train, dtype=np.float64)
    y = np.asarray(y_train, dtype=np.int64)
    if num_classes is None:
        num_classes = int(y.max()) + 1
    if len(np.unique(y)) < 2:
        raise ValueError("training set contains a single class")
    inv_c = 1.0 / reg_strength
    x0 = np.zeros(num_classes * x.shape[1] + num_classes)
    result = minimize(
        softmax_objective,
        x0,
        args=(x, y, num_classes, inv_c),
        jac=True,
        method="L-BFGS-B",
        options={"maxiter": max_iter, "gtol": gtol, "ftol": 1e-14},
    )
    k = x.shape[1]
    return ClassifierModel(
        weights=result.x[: num_classes * k].reshape(num_classes, k),
        bias=result.x[num_classes * k :],
        reg_strength=reg_strength,
    )


def predict(model, z):
    z = np.asarray(z, dtype=np.float64)
    return np.argmax(z @ model.weights.T + model.bias, axis=1)


@dataclass(frozen=True)
class ClassificationResult:
    fraction: float
    repeats: int
    micro_mean: float
    micro_std: float
    macro_mean: float
    macro_std: float
    micro_per_repeat: tuple
    macro_per_repeat: tuple


def classification_experiment(z, labels, fraction, repeats=10, seed=0, num_classes=None):
    """Mean (micro, macro) F1 over repeated uniform train/test node splits.

    Each repeat samples ``floor(fraction * n)`` training nodes with its own
    rng stream derived from (seed, repeat), so repeat order or parallel
    execution cannot change the result.
    """
    from .metrics import f1_scores

    z = np.asarray(z, dtype=np.float64)
    labels = np.asarray(labels, dtype=np.int64)
    if num_classes is None:
        num_classes = int(labels.max()) + 1
    n = len(labels)
    n_train = int(np.floor(fraction * n))
    if n_train < 1:
        raise ValueError(f"fraction {fraction} leaves no training nodes")
    if n_train >= n:
        raise ValueError(f"fraction {fraction} leaves no evaluation nodes")
    micros, macros = [], []
    for repeat in range(repeats):
        rng = np.random.default_rng([seed, repeat])
        train_idx = rng.choice(n, size=n_train, replace=False)
        mask = np.zeros(n, dtype=bool)
        mask[train_idx] = True
        clf = fit_logistic(z[mask], labels[mask], num_classes=num_classes)
        pred = predict(clf, z[~mask])
        micro, macro = f1_scores(pred, labels[~mask], num_classes)
        micros.append(micro)
        macros.append(macro)
    micros = np.array(micros)
    macros = np.array(macros)
    return ClassificationResult(
        fraction=fraction,
        repeats=repeats,
        micro_mean=float(micros.mean()),
        micro_std=float(micros.std()),
        macro_mean=float(macros.mean()),
        macro_std=float(macros.std()),
        micro_per_repeat=tuple(micros.tolist()),
        macro_per_repeat=tuple(macros.tolist()),
    )
