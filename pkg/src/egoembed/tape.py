"""Dense 2-D tensors with reverse-mode gradients recorded on a tape.

Everything is float64. The tape is a flat list of backward closures: ops
are recorded in the order they execute, which is already a topological
order of the computation, so the backward sweep just replays the list in
reverse exactly once. Ops called with ``tape=None`` run forward-only,
which is how evaluation-mode passes avoid bookkeeping.
"""

from __future__ import annotations

import itertools

import numpy as np

__all__ = [
    "Tensor",
    "Tape",
    "matmul",
    "transpose",
    "add",
    "sub",
    "mul",
    "scale",
    "leaky_relu",
    "elu",
    "dropout",
    "gather_rows",
    "segment_sum",
    "segment_softmax",
    "segment_softmax_values",
    "slice_rows",
    "slice_cols",
    "concat_cols",
    "mean_tensors",
    "row_sum",
    "sum_all",
    "sigmoid_cross_entropy",
    "l2_penalty",
    "glorot_init",
    "AdamState",
    "adam_step",
    "backward",
    "finite_diff_grad",
]

_ids = itertools.count()


class Tensor:
    """A 2-D float64 matrix, optionally tracked for gradients."""

    __slots__ = ("values", "grad", "requires_grad", "node_id")

    def __init__(self, values, requires_grad=False):
        arr = np.asarray(values, dtype=np.float64)
        if arr.ndim != 2:
            raise ValueError(f"tensors are 2-D, got shape {arr.shape}")
        self.values = arr
        self.grad = None
        self.requires_grad = requires_grad
        self.node_id = next(_ids)

    @property
    def shape(self):
        return self.values.shape

    def accumulate(self, g):
        if self.grad is None:
            self.grad = np.zeros_like(self.values)
        self.grad += g

    def grad_or_zeros(self):
        if self.grad is None:
            return np.zeros_like(self.values)
        return self.grad

    def zero_grad(self):
        self.grad = None

    def __repr__(self):
        return f"Tensor(id={self.node_id}, shape={self.values.shape}, requires_grad={self.requires_grad})"


class Tape:
    """Ordered op records for one forward pass.

    Recording order equals topological order, so ``backward`` walks the
    records once in reverse. A tape can only be consumed once.
    """

    def __init__(self):
        self._records = []
        self._spent = False

    def __len__(self):
        return len(self._records)

    def record(self, fn):
        self._records.append(fn)

    def backward(self, loss):
        if self._spent:
            raise RuntimeError("tape already consumed; record a fresh forward pass")
        if loss.shape != (1, 1):
            raise ValueError(f"loss must be a 1x1 scalar tensor, got shape {loss.shape}")
        self._spent = True
        loss.grad = np.ones((1, 1))
        for fn in reversed(self._records):
            fn()


def backward(tape, loss, params=()):
    """Run the reverse sweep and make sure every parameter has a gradient.

    Parameters unreachable from the loss end up with an all-zero gradient.
    """
    tape.backward(loss)
    for p in params:
        if p.grad is None:
            p.grad = np.zeros_like(p.values)
    return [p.grad for p in params]


def _wants_grad(*tensors):
    return any(t.requires_grad for t in tensors)


def _unbroadcast(g, shape):
    """Sum gradient ``g`` back down to ``shape`` after numpy broadcasting."""
    if g.shape == shape:
        return g
    out = g
    if shape[0] == 1 and g.shape[0] != 1:
        out = out.sum(axis=0, keepdims=True)
    if shape[1] == 1 and g.shape[1] != 1:
        out = out.sum(axis=1, keepdims=True)
    return out


def matmul(a, b, tape=None):
    if a.shape[1] != b.shape[0]:
        raise ValueError(f"matmul shape mismatch: {a.shape} @ {b.shape}")
    out = Tensor(a.values @ b.values, requires_grad=_wants_grad(a, b))
    if tape is not None and out.requires_grad:

        def bwd():
            g = out.grad
            if g is None:
                return
            if a.requires_grad:
                a.accumulate(g @ b.values.T)
            if b.requires_grad:
                b.accumulate(a.values.T @ g)

        tape.record(bwd)
    return out


def transpose(a, tape=None):
    out = Tensor(a.values.T.copy(), requires_grad=a.requires_grad)
    if tape is not None and out.requires_grad:

        def bwd():
            if out.grad is not None:
                a.accumulate(out.grad.T)

        tape.record(bwd)
    return out


def add(a, b, tape=None):
    out = Tensor(a.values + b.values, requires_grad=_wants_grad(a, b))
    if tape is not None and out.requires_grad:

        def bwd():
            g = out.grad
            if g is None:
                return
            if a.requires_grad:
                a.accumulate(_unbroadcast(g, a.shape))
            if b.requires_grad:
                b.accumulate(_unbroadcast(g, b.shape))

        tape.record(bwd)
    return out


def sub(a, b, tape=None):
    out = Tensor(a.values - b.values, requires_grad=_wants_grad(a, b))
    if tape is not None and out.requires_grad:

        def bwd():
            g = out.grad
            if g is None:
                return
            if a.requires_grad:
                a.accumulate(_unbroadcast(g, a.shape))
            if b.requires_grad:
                b.accumulate(-_unbroadcast(g, b.shape))

        tape.record(bwd)
    return out


def mul(a, b, tape=None):
    """Elementwise product with numpy broadcasting."""
    out = Tensor(a.values * b.values, requires_grad=_wants_grad(a, b))
    if tape is not None and out.requires_grad:

        def bwd():
            g = out.grad
            if g is None:
                return
            if a.requires_grad:
                a.accumulate(_unbroadcast(g * b.values, a.shape))
            if b.requires_grad:
                b.accumulate(_unbroadcast(g * a.values, b.shape))

        tape.record(bwd)
    return out


def scale(a, c, tape=None):
    out = Tensor(a.values * c, requires_grad=a.requires_grad)
    if tape is not None and out.requires_grad:

        def bwd():
            if out.grad is not None:
                a.accumulate(out.grad * c)

        tape.record(bwd)
    return out


def leaky_relu(a, slope=0.2, tape=None):
    # subgradient at 0 takes the positive branch
    positive = a.values >= 0
    out = Tensor(np.where(positive, a.values, slope * a.values), requires_grad=a.requires_grad)
    if tape is not None and out.requires_grad:

        def bwd():
            if out.grad is not None:
                a.accumulate(out.grad * np.where(positive, 1.0, slope))

        tape.record(bwd)
    return out


def elu(a, tape=None):
    positive = a.values > 0
    expm1 = np.expm1(np.where(positive, 0.0, a.values))
    out = Tensor(np.where(positive, a.values, expm1), requires_grad=a.requires_grad)
    if tape is not None and out.requires_grad:

        def bwd():
            if out.grad is not None:
                a.accumulate(out.grad * np.where(positive, 1.0, expm1 + 1.0))

        tape.record(bwd)
    return out


def dropout(a, p, rng=None, training=False, tape=None):
    """Inverted dropout: zero entries with probability p, scale the rest by 1/(1-p)."""
    if not 0.0 <= p < 1.0:
        raise ValueError(f"dropout probability must be in [0, 1), got {p}")
    if not training or p == 0.0:
        return a
    keep = rng.random(a.shape) >= p
    factor = keep / (1.0 - p)
    out = Tensor(a.values * factor, requires_grad=a.requires_grad)
    if tape is not None and out.requires_grad:

        def bwd():
            if out.grad is not None:
                a.accumulate(out.grad * factor)

        tape.record(bwd)
    return out


def gather_rows(a, index, tape=None):
    """Select rows of ``a``; ``index=None`` is the identity pass-through."""
    if index is None:
        return a
    index = np.asarray(index, dtype=np.int64)
    out = Tensor(a.values[index], requires_grad=a.requires_grad)
    if tape is not None and out.requires_grad:

        def bwd():
            if out.grad is not None:
                if a.grad is None:
                    a.grad = np.zeros_like(a.values)
                np.add.at(a.grad, index, out.grad)

        tape.record(bwd)
    return out


def _segment_counts(offsets):
    counts = np.diff(offsets)
    if np.any(counts <= 0):
        raise ValueError("empty segment")
    return counts


def segment_sum(a, offsets, tape=None):
    """Sum consecutive row segments delimited by ``offsets``."""
    offsets = np.asarray(offsets, dtype=np.int64)
    counts = _segment_counts(offsets)
    out = Tensor(np.add.reduceat(a.values, offsets[:-1], axis=0), requires_grad=a.requires_grad)
    if tape is not None and out.requires_grad:

        def bwd():
            if out.grad is not None:
                a.accumulate(np.repeat(out.grad, counts, axis=0))

        tape.record(bwd)
    return out


def segment_softmax_values(values, offsets):
    """Softmax within each row segment, stabilised by per-segment max subtraction."""
    values = np.asarray(values, dtype=np.float64)
    squeeze = values.ndim == 1
    if squeeze:
        values = values[:, None]
    offsets = np.asarray(offsets, dtype=np.int64)
    counts = _segment_counts(offsets)
    seg_max = np.maximum.reduceat(values, offsets[:-1], axis=0)
    shifted = values - np.repeat(seg_max, counts, axis=0)
    e = np.exp(shifted)
    denom = np.add.reduceat(e, offsets[:-1], axis=0)
    out = e / np.repeat(denom, counts, axis=0)
    return out[:, 0] if squeeze else out


def segment_softmax(a, offsets, tape=None):
    offsets = np.asarray(offsets, dtype=np.int64)
    counts = _segment_counts(offsets)
    soft = segment_softmax_values(a.values, offsets)
    out = Tensor(soft, requires_grad=a.requires_grad)
    if tape is not None and out.requires_grad:

        def bwd():
            g = out.grad
            if g is None:
                return
            # d logits = alpha * (g - sum_segment(g * alpha))
            inner = np.add.reduceat(g * soft, offsets[:-1], axis=0)
            a.accumulate(soft * (g - np.repeat(inner, counts, axis=0)))

        tape.record(bwd)
    return out


def slice_rows(a, start, stop, tape=None):
    if start == 0 and stop == a.shape[0]:
        return a
    out = Tensor(a.values[start:stop].copy(), requires_grad=a.requires_grad)
    if tape is not None and out.requires_grad:

        def bwd():
            if out.grad is not None:
                if a.grad is None:
                    a.grad = np.zeros_like(a.values)
                a.grad[start:stop] += out.grad

        tape.record(bwd)
    return out


def slice_cols(a, start, stop, tape=None):
    if start == 0 and stop == a.shape[1]:
        return a
    out = Tensor(a.values[:, start:stop].copy(), requires_grad=a.requires_grad)
    if tape is not None and out.requires_grad:

        def bwd():
            if out.grad is not None:
                if a.grad is None:
                    a.grad = np.zeros_like(a.values)
                a.grad[:, start:stop] += out.grad

        tape.record(bwd)
    return out


def concat_cols(tensors, tape=None):
    out = Tensor(
        np.concatenate([t.values for t in tensors], axis=1),
        requires_grad=_wants_grad(*tensors),
    )
    if tape is not None and out.requires_grad:
        widths = [t.shape[1] for t in tensors]
        stops = np.cumsum(widths)

        def bwd():
            g = out.grad
            if g is None:
                return
            start = 0
            for t, stop in zip(tensors, stops):
                if t.requires_grad:
                    t.accumulate(g[:, start:stop])
                start = stop

        tape.record(bwd)
    return out


def mean_tensors(tensors, tape=None):
    """Elementwise mean of same-shaped tensors (multi-head averaging)."""
    k = len(tensors)
    acc = tensors[0].values.copy()
    for t in tensors[1:]:
        acc += t.values
    out = Tensor(acc / k, requires_grad=_wants_grad(*tensors))
    if tape is not None and out.requires_grad:

        def bwd():
            g = out.grad
            if g is None:
                return
            share = g / k
            for t in tensors:
                if t.requires_grad:
                    t.accumulate(share)

        tape.record(bwd)
    return out


def row_sum(a, tape=None):
    out = Tensor(a.values.sum(axis=1, keepdims=True), requires_grad=a.requires_grad)
    if tape is not None and out.requires_grad:

        def bwd():
            if out.grad is not None:
                a.accumulate(np.broadcast_to(out.grad, a.shape))

        tape.record(bwd)
    return out


def sum_all(a, tape=None):
    out = Tensor(np.array([[a.values.sum()]]), requires_grad=a.requires_grad)
    if tape is not None and out.requires_grad:

        def bwd():
            if out.grad is not None:
                a.accumulate(np.full(a.shape, out.grad[0, 0]))

        tape.record(bwd)
    return out


def sigmoid_cross_entropy(logits, labels, tape=None):
    """Summed binary cross-entropy of logistic(logits) against 0/1 labels."""
    labels = np.asarray(labels, dtype=np.float64).reshape(logits.shape)
    s = logits.values
    value = np.logaddexp(0.0, s) - labels * s
    out = Tensor(np.array([[value.sum()]]), requires_grad=logits.requires_grad)
    if tape is not None and out.requires_grad:

        def bwd():
            if out.grad is not None:
                sig = 1.0 / (1.0 + np.exp(-s))
                logits.accumulate(out.grad[0, 0] * (sig - labels))

        tape.record(bwd)
    return out


def l2_penalty(params, lam, tape=None):
    """lam * sum of squared Frobenius norms, as a scalar tensor on the tape."""
    total = Tensor(np.zeros((1, 1)))
    for p in params:
        total = add(total, sum_all(mul(p, p, tape), tape), tape)
    return scale(total, lam, tape)


def glorot_init(rows, cols, rng):
    limit = np.sqrt(6.0 / (rows + cols))
    return rng.uniform(-limit, limit, size=(rows, cols))


class AdamState:
    """Per-parameter first/second moment estimates plus the step counter."""

    def __init__(self, lr=0.001, beta1=0.9, beta2=0.999, eps=1e-8):
        self.lr = lr
        self.beta1 = beta1
        self.beta2 = beta2
        self.eps = eps
        self.step_count = 0
        self._m = {}
        self._v = {}

    def moments(self, param):
        key = param.node_id
        if key not in self._m:
            self._m[key] = np.zeros_like(param.values)
            self._v[key] = np.zeros_like(param.values)
        return self._m[key], self._v[key]


def adam_step(state, params):
    """One bias-corrected Adam update; consumes and clears the gradients."""
    state.step_count += 1
    t = state.step_count
    b1, b2 = state.beta1, state.beta2
    for p in params:
        g = p.grad_or_zeros()
        m, v = state.moments(p)
        m *= b1
        m += (1.0 - b1) * g
        v *= b2
        v += (1.0 - b2) * g * g
        m_hat = m / (1.0 - b1**t)
        v_hat = v / (1.0 - b2**t)
        p.values -= state.lr * m_hat / (np.sqrt(v_hat) + state.eps)
        p.zero_grad()


def finite_diff_grad(f, x, h=1e-5):
    """Central finite differences of a scalar function, entry by entry."""
    x = np.asarray(x, dtype=np.float64)
    grad = np.zeros_like(x)
    it = np.nditer(x, flags=["multi_index"])
    while not it.finished:
        idx = it.multi_index
        orig = x[idx]
        x[idx] = orig + h
        up = f(x)
        x[idx] = orig - h
        down = f(x)
        x[idx] = orig
        grad[idx] = (up - down) / (2.0 * h)
        it.iternext()
    return grad
