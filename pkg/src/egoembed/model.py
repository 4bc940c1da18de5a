"""Attention-based neighborhood autoencoder for attributed graphs.

The encoder stacks attention layers that aggregate attribute vectors over
each node's neighborhood (self-loop included) into a low-dimensional
embedding; the decoder mirrors the stack to diffuse embeddings back and
reconstruct every node's attributes. Training minimizes the squared
Frobenius reconstruction error plus an L2 penalty on all parameters.

Variants: ``aggregation="gcn"`` swaps learned attention for fixed
row-normalized edge weights; ``decoder_kind="mlp"`` decodes with plain
dense layers; ``decoder_kind="structure"`` drops attribute reconstruction
and trains inner-product edge logits against the adjacency instead.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Optional

import numpy as np
import scipy.sparse as sp

from . import tape as T
from .metrics import auc, link_scores
from .splits import sample_negative_edges

HIDDEN_ACTIVATION = "elu"
FINAL_ACTIVATION = "identity"


class TrainingDivergedError(RuntimeError):
    def __init__(self, epoch, loss, lr):
        self.epoch = epoch
        self.loss = loss
        self.lr = lr
        super().__init__(f"non-finite loss {loss} at epoch {epoch} (lr={lr})")


@dataclass(frozen=True)
class ModelConfig:
    encoder_dims: tuple = (128, 64)
    encoder_heads: tuple = (8, 1)
    decoder_dims: Optional[tuple] = None  # None: mirror encoder, last dim = num_features
    decoder_heads: tuple = (8, 1)
    dropout: float = 0.5
    l2_coeff: float = 5e-4
    lr: float = 0.001
    leaky_slope: float = 0.2
    aggregation: str = "attention"  # or "gcn"
    decoder_kind: str = "graph"  # "mlp" or "structure"
    epochs: int = 200
    patience: int = 30
    seed: int = 0

    def resolved_decoder_dims(self, num_features):
        if self.decoder_kind == "structure":
            return ()
        if self.decoder_dims is not None:
            return tuple(self.decoder_dims)
        # mirror the encoder's hidden widths, widening back out to the inputs
        return tuple(reversed(self.encoder_dims[:-1])) + (num_features,)

    def validate(self, num_features):
        if self.aggregation not in ("attention", "gcn"):
            raise ValueError(f"unknown aggregation {self.aggregation!r}")
        if self.decoder_kind not in ("graph", "mlp", "structure"):
            raise ValueError(f"unknown decoder kind {self.decoder_kind!r}")
        if not 0.0 <= self.dropout < 1.0:
            raise ValueError("dropout must be in [0, 1)")
        if len(self.encoder_dims) != len(self.encoder_heads):
            raise ValueError("encoder_dims and encoder_heads lengths differ")
        for dim, k in zip(self.encoder_dims[:-1], self.encoder_heads[:-1]):
            if dim % k:
                raise ValueError(f"encoder width {dim} not divisible by {k} heads")
        dec_dims = self.resolved_decoder_dims(num_features)
        if self.decoder_kind != "structure":
            if len(dec_dims) != len(self.decoder_heads):
                raise ValueError("decoder_dims and decoder_heads lengths differ")
            if dec_dims[-1] != num_features:
                raise ValueError(
                    f"last decoder width {dec_dims[-1]} must equal the attribute dimension {num_features}"
                )
            for dim, k in zip(dec_dims[:-1], self.decoder_heads[:-1]):
                if dim % k:
                    raise ValueError(f"decoder width {dim} not divisible by {k} heads")
        return self

    def to_dict(self):
        out = {
            "encoder_dims": list(self.encoder_dims),
            "encoder_heads": list(self.encoder_heads),
            "decoder_dims": None if self.decoder_dims is None else list(self.decoder_dims),
            "decoder_heads": list(self.decoder_heads),
            "dropout": self.dropout,
            "l2_coeff": self.l2_coeff,
            "lr": self.lr,
            "leaky_slope": self.leaky_slope,
            "aggregation": self.aggregation,
            "decoder_kind": self.decoder_kind,
            "epochs": self.epochs,
            "patience": self.patience,
            "seed": self.seed,
        }
        return out

    @classmethod
    def from_dict(cls, payload):
        kwargs = dict(payload)
        for key in ("encoder_dims", "encoder_heads", "decoder_heads"):
            if key in kwargs and kwargs[key] is not None:
                kwargs[key] = tuple(kwargs[key])
        if kwargs.get("decoder_dims") is not None:
            kwargs["decoder_dims"] = tuple(kwargs["decoder_dims"])
        return cls(**kwargs)


@dataclass
class LayerParams:
    """Weights of one layer: shared transform plus per-head attention vectors.

    ``weight`` is (out_total, in_dim); row block k of it is head k's
    transform when heads concatenate. ``attn`` stacks one length-2*head_dim
    vector per head; it is None for gcn aggregation and dense layers.
    """

    weight: T.Tensor
    attn: Optional[T.Tensor]
    bias: Optional[T.Tensor]
    num_heads: int
    head_combine: str  # "concat" | "average"
    activation: str  # "elu" | "identity"
    kind: str = "graph"  # "graph" | "dense"

    @property
    def head_dim(self):
        return self.weight.shape[0] // self.num_heads


@dataclass
class ModelParams:
    encoder: list
    decoder: list

    def named(self):
        out = []
        for prefix, layers in (("encoder", self.encoder), ("decoder", self.decoder)):
            for i, layer in enumerate(layers):
                out.append((f"{prefix}.{i}.weight", layer.weight))
                if layer.attn is not None:
                    out.append((f"{prefix}.{i}.attn", layer.attn))
                if layer.bias is not None:
                    out.append((f"{prefix}.{i}.bias", layer.bias))
        return out

    def tensors(self):
        return [t for _, t in self.named()]


@dataclass(frozen=True)
class Embedding:
    Z: np.ndarray


@dataclass(frozen=True)
class AttentionCoefficients:
    """Per-edge aggregation weights aligned with the CSR entries, one column per head."""

    values: np.ndarray

    def head(self, k):
        return self.values[:, k]


@dataclass(frozen=True)
class Adjacency:
    """CSR block whose rows are target nodes and whose columns index the
    rows of the layer's input tensor. A full graph is the square case."""

    row_offsets: np.ndarray
    col_indices: np.ndarray
    edge_weights: np.ndarray
    num_sources: int
    target_index: Optional[np.ndarray] = None  # input rows of the targets; None = identity

    @property
    def num_targets(self):
        return len(self.row_offsets) - 1

    def edge_rows(self):
        return np.repeat(np.arange(self.num_targets), np.diff(self.row_offsets))


def adjacency_of(g):
    return Adjacency(
        row_offsets=g.row_offsets,
        col_indices=g.col_indices,
        edge_weights=g.edge_weights,
        num_sources=g.num_nodes,
        target_index=None,
    )


def _require_self_loops(g):
    if not g.has_self_loops():
        raise ValueError("graph must carry self-loops; call add_self_loops first")


def gcn_coefficient_values(adj):
    """Row-normalized edge weights: weight / sum of weights over the neighborhood."""
    counts = np.diff(adj.row_offsets)
    if np.any(counts <= 0):
        raise ValueError("node with empty neighborhood")
    sums = np.add.reduceat(adj.edge_weights, adj.row_offsets[:-1])
    return adj.edge_weights / np.repeat(sums, counts)


def gcn_coeffs(g):
    """Parameter-free aggregation weights; constant across training."""
    _require_self_loops(g)
    return AttentionCoefficients(values=gcn_coefficient_values(adjacency_of(g))[:, None])


def _edge_dots(a, b, rows, cols):
    """Per-edge row dot products sum_f a[rows[e], f] * b[cols[e], f], chunked."""
    total = len(rows)
    out = np.empty(total)
    chunk = max(1, 8_000_000 // max(1, b.shape[1]))
    for start in range(0, total, chunk):
        sl = slice(start, start + chunk)
        out[sl] = np.einsum("ef,ef->e", a[rows[sl]], b[cols[sl]])
    return out


def weighted_neighbor_sum(alpha, h, adj, tape=None):
    """out_i = sum over neighbors j of alpha_ij * h_j, as a tape op.

    Forward and both backward products run through scipy sparse matmuls.
    """
    mat = sp.csr_matrix(
        (alpha.values[:, 0], adj.col_indices, adj.row_offsets),
        shape=(adj.num_targets, adj.num_sources),
    )
    out = T.Tensor(mat @ h.values, requires_grad=alpha.requires_grad or h.requires_grad)
    if tape is not None and out.requires_grad:
        edge_rows = adj.edge_rows()

        def bwd():
            g = out.grad
            if g is None:
                return
            if h.requires_grad:
                h.accumulate(mat.T @ g)
            if alpha.requires_grad:
                alpha.accumulate(_edge_dots(g, h.values, edge_rows, adj.col_indices)[:, None])

        tape.record(bwd)
    return out


def _head_attention(adj, hw_k, hw_tgt_k, attn_row, slope, tape):
    """Eq.-style attention for one head: leaky-relu edge logits, then a
    softmax over each target's neighborhood slice."""
    m = hw_k.shape[1]
    a_self = T.transpose(T.slice_cols(attn_row, 0, m, tape), tape)
    a_peer = T.transpose(T.slice_cols(attn_row, m, 2 * m, tape), tape)
    s_self = T.matmul(hw_tgt_k, a_self, tape)  # scores of target nodes
    s_peer = T.matmul(hw_k, a_peer, tape)  # scores of source nodes
    logits = T.add(
        T.gather_rows(s_self, adj.edge_rows(), tape),
        T.gather_rows(s_peer, adj.col_indices, tape),
        tape,
    )
    logits = T.leaky_relu(logits, slope, tape)
    return T.segment_softmax(logits, adj.row_offsets, tape)


def attn_layer_forward(
    adj,
    h,
    layer,
    *,
    aggregation="attention",
    leaky_slope=0.2,
    dropout_p=0.0,
    training=False,
    rng=None,
    tape=None,
):
    """One aggregation layer over an adjacency block.

    Per head: transform inputs, weight each neighbor by its coefficient,
    sum over the neighborhood. Heads concatenate or average per the layer,
    then the layer activation applies. Dropout hits the layer input and,
    for learned attention, the coefficients.
    """
    counts = np.diff(adj.row_offsets)
    if np.any(counts <= 0):
        raise ValueError("node with empty neighborhood; add self-loops first")
    h = T.dropout(h, dropout_p, rng, training, tape)
    hw = T.matmul(h, T.transpose(layer.weight, tape), tape)
    hw_tgt = T.gather_rows(hw, adj.target_index, tape)
    m = layer.head_dim
    gcn_alpha = None
    if aggregation == "gcn":
        gcn_alpha = T.Tensor(gcn_coefficient_values(adj)[:, None])
    heads = []
    for k in range(layer.num_heads):
        hw_k = T.slice_cols(hw, k * m, (k + 1) * m, tape)
        if aggregation == "attention":
            hw_tgt_k = T.slice_cols(hw_tgt, k * m, (k + 1) * m, tape)
            attn_row = T.slice_rows(layer.attn, k, k + 1, tape)
            alpha = _head_attention(adj, hw_k, hw_tgt_k, attn_row, leaky_slope, tape)
            alpha = T.dropout(alpha, dropout_p, rng, training, tape)
        else:
            alpha = gcn_alpha
        heads.append(weighted_neighbor_sum(alpha, hw_k, adj, tape))
    if len(heads) == 1:
        out = heads[0]
    elif layer.head_combine == "concat":
        out = T.concat_cols(heads, tape)
    else:
        out = T.mean_tensors(heads, tape)
    if layer.activation == "elu":
        out = T.elu(out, tape)
    return out


def dense_layer_forward(h, layer, *, dropout_p=0.0, training=False, rng=None, tape=None):
    h = T.dropout(h, dropout_p, rng, training, tape)
    out = T.add(T.matmul(h, T.transpose(layer.weight, tape), tape), layer.bias, tape)
    if layer.activation == "elu":
        out = T.elu(out, tape)
    return out


def attention_coeffs(g, h, layer, head=None, slope=0.2):
    """Evaluation-mode attention coefficients on the graph's CSR entries.

    Returns all heads as an (edges, heads) matrix, or a single head's
    column when ``head`` is given.
    """
    _require_self_loops(g)
    adj = adjacency_of(g)
    h_values = h.values if isinstance(h, T.Tensor) else np.asarray(h, dtype=np.float64)
    hw = h_values @ layer.weight.values.T
    m = layer.head_dim
    heads = range(layer.num_heads) if head is None else [head]
    cols = []
    for k in heads:
        hw_k = T.Tensor(hw[:, k * m : (k + 1) * m])
        attn_row = T.Tensor(layer.attn.values[k : k + 1])
        alpha = _head_attention(adj, hw_k, hw_k, attn_row, slope, tape=None)
        cols.append(alpha.values[:, 0])
    return AttentionCoefficients(values=np.column_stack(cols))


def init_params(config, num_features, rng):
    def graph_layer(in_dim, dim, k, last):
        # hidden layers concatenate K heads of width dim/K; the final layer
        # averages K heads of full width dim
        combine = "average" if last else "concat"
        m = dim // k if combine == "concat" else dim
        weight = T.Tensor(T.glorot_init(k * m, in_dim, rng), requires_grad=True)
        attn = None
        if config.aggregation == "attention":
            attn = T.Tensor(
                np.vstack([T.glorot_init(1, 2 * m, rng) for _ in range(k)]),
                requires_grad=True,
            )
        return LayerParams(
            weight=weight,
            attn=attn,
            bias=None,
            num_heads=k,
            head_combine=combine,
            activation=FINAL_ACTIVATION if last else HIDDEN_ACTIVATION,
            kind="graph",
        )

    encoder = []
    in_dim = num_features
    enc_dims = config.encoder_dims
    for i, (dim, k) in enumerate(zip(enc_dims, config.encoder_heads)):
        encoder.append(graph_layer(in_dim, dim, k, last=i == len(enc_dims) - 1))
        in_dim = dim

    decoder = []
    if config.decoder_kind == "graph":
        dec_dims = config.resolved_decoder_dims(num_features)
        in_dim = enc_dims[-1]
        for i, (dim, k) in enumerate(zip(dec_dims, config.decoder_heads)):
            decoder.append(graph_layer(in_dim, dim, k, last=i == len(dec_dims) - 1))
            in_dim = dim
    elif config.decoder_kind == "mlp":
        dec_dims = config.resolved_decoder_dims(num_features)
        in_dim = enc_dims[-1]
        for i, dim in enumerate(dec_dims):
            last = i == len(dec_dims) - 1
            decoder.append(
                LayerParams(
                    weight=T.Tensor(T.glorot_init(dim, in_dim, rng), requires_grad=True),
                    attn=None,
                    bias=T.Tensor(np.zeros((1, dim)), requires_grad=True),
                    num_heads=1,
                    head_combine="average",
                    activation=FINAL_ACTIVATION if last else HIDDEN_ACTIVATION,
                    kind="dense",
                )
            )
            in_dim = dim
    return ModelParams(encoder=encoder, decoder=decoder)


class Model:
    """Configuration plus parameters plus the rng streams used in training."""

    def __init__(self, config, num_features, params=None):
        config.validate(num_features)
        self.config = config
        self.num_features = num_features
        init_rng = np.random.default_rng([config.seed, 0])
        self.params = params if params is not None else init_params(config, num_features, init_rng)
        self._drop_rng = np.random.default_rng([config.seed, 1])

    # -- forward passes ------------------------------------------------

    def _layer_kwargs(self, training, tape):
        return dict(
            aggregation=self.config.aggregation,
            leaky_slope=self.config.leaky_slope,
            dropout_p=self.config.dropout,
            training=training,
            rng=self._drop_rng,
            tape=tape,
        )

    def encode_tensor(self, adjs, x, training=False, tape=None):
        h = x if isinstance(x, T.Tensor) else T.Tensor(x)
        for layer, adj in zip(self.params.encoder, adjs):
            h = attn_layer_forward(adj, h, layer, **self._layer_kwargs(training, tape))
        return h

    def decode_tensor(self, adjs, z, training=False, tape=None):
        if self.config.decoder_kind == "structure":
            return None
        h = z
        if self.config.decoder_kind == "graph":
            for layer, adj in zip(self.params.decoder, adjs):
                h = attn_layer_forward(adj, h, layer, **self._layer_kwargs(training, tape))
            return h
        for layer in self.params.decoder:
            h = dense_layer_forward(
                h,
                layer,
                dropout_p=self.config.dropout,
                training=training,
                rng=self._drop_rng,
                tape=tape,
            )
        return h

    def forward(self, g, X, training=False, tape=None):
        """Full-graph pass: returns (Z tensor, reconstruction tensor or None)."""
        _require_self_loops(g)
        adj = adjacency_of(g)
        n_enc = len(self.params.encoder)
        n_dec = len(self.params.decoder)
        z = self.encode_tensor([adj] * n_enc, np.asarray(X, dtype=np.float64), training, tape)
        xp = self.decode_tensor([adj] * n_dec, z, training, tape)
        return z, xp

    def embed(self, g, X):
        """Evaluation-mode embeddings (dropout off)."""
        _require_self_loops(g)
        adj = adjacency_of(g)
        z = self.encode_tensor([adj] * len(self.params.encoder), np.asarray(X, dtype=np.float64), False, None)
        return z.values

    # -- persistence ----------------------------------------------------

    def named_params(self):
        return self.params.named()

    def tensors(self):
        return self.params.tensors()

    def state_arrays(self):
        return [(name, t.values.copy()) for name, t in self.named_params()]

    def load_state_arrays(self, named_arrays):
        expected = dict(self.named_params())
        loaded = dict(named_arrays)
        if set(loaded) != set(expected):
            missing = set(expected) - set(loaded)
            extra = set(loaded) - set(expected)
            raise ValueError(f"parameter name mismatch: missing={sorted(missing)}, extra={sorted(extra)}")
        for name, tensor in expected.items():
            arr = loaded[name]
            if arr.shape != tensor.values.shape:
                raise ValueError(f"shape mismatch for {name}: {arr.shape} vs {tensor.values.shape}")
            tensor.values = arr.astype(np.float64, copy=True)
            tensor.zero_grad()


def encode(g, X, model, training=False):
    values = X.values if hasattr(X, "values") else X
    _require_self_loops(g)
    adjs = [adjacency_of(g)] * len(model.params.encoder)
    z = model.encode_tensor(adjs, np.asarray(values, dtype=np.float64), training, None)
    return Embedding(Z=z.values)


def reconstruction_loss(x, x_prime, tape=None):
    """Sum of squared entrywise differences (no averaging)."""
    x_t = x if isinstance(x, T.Tensor) else T.Tensor(x)
    diff = T.sub(x_prime, x_t, tape)
    return T.sum_all(T.mul(diff, diff, tape), tape)


def decode_structure(z, pairs):
    """Edge probabilities logistic(z_i . z_j) for the requested pairs."""
    z = z.values if isinstance(z, T.Tensor) else np.asarray(z)
    pairs = np.asarray(pairs, dtype=np.int64).reshape(-1, 2)
    scores = np.einsum("ij,ij->i", z[pairs[:, 0]], z[pairs[:, 1]])
    return 1.0 / (1.0 + np.exp(-scores))


def structure_loss(z, pos_pairs, neg_pairs, tape=None):
    """Summed logistic loss of inner-product edge logits on labelled pairs."""
    pairs = np.concatenate([pos_pairs, neg_pairs], axis=0)
    labels = np.concatenate([np.ones(len(pos_pairs)), np.zeros(len(neg_pairs))])[:, None]
    zi = T.gather_rows(z, pairs[:, 0], tape)
    zj = T.gather_rows(z, pairs[:, 1], tape)
    logits = T.row_sum(T.mul(zi, zj, tape), tape)
    return T.sigmoid_cross_entropy(logits, labels, tape)


@dataclass
class EpochLog:
    epoch: int
    loss: float
    val_auc: Optional[float]


@dataclass
class TrainResult:
    model: Model
    embedding: np.ndarray
    log: list
    best_epoch: Optional[int]
    best_val_auc: Optional[float]


def _training_loss(model, g, X, tape, epoch):
    adj = adjacency_of(g)
    cfg = model.config
    z = model.encode_tensor([adj] * len(model.params.encoder), X, True, tape)
    if cfg.decoder_kind == "structure":
        pos = g.undirected_edges()
        neg = sample_negative_edges(g, len(pos), [cfg.seed, 2, epoch])
        data_loss = structure_loss(z, pos, neg, tape)
    else:
        xp = model.decode_tensor([adj] * len(model.params.decoder), z, True, tape)
        data_loss = reconstruction_loss(X, xp, tape)
    reg = T.l2_penalty(model.tensors(), cfg.l2_coeff, tape)
    return T.add(data_loss, reg, tape)


def train(g, X, config, split=None):
    """Full-batch training with optional validation-AUC model selection.

    When a split is supplied, the checkpoint with the best validation AUC
    is kept and training stops after ``patience`` non-improving epochs;
    otherwise the loop runs all epochs.
    """
    _require_self_loops(g)
    x_values = X.values if hasattr(X, "values") else np.asarray(X, dtype=np.float64)
    model = Model(config, x_values.shape[1])
    adam = T.AdamState(lr=config.lr)
    params = model.tensors()

    log = []
    best_auc = -np.inf
    best_epoch = None
    best_state = None
    use_val = split is not None and len(split.val_pos) > 0
    for epoch in range(1, config.epochs + 1):
        tp = T.Tape()
        loss = _training_loss(model, g, x_values, tp, epoch)
        loss_value = float(loss.values[0, 0])
        if not np.isfinite(loss_value):
            raise TrainingDivergedError(epoch, loss_value, config.lr)
        T.backward(tp, loss, params)
        T.adam_step(adam, params)

        val_auc = None
        if use_val:
            z = model.embed(g, x_values)
            val_auc = auc(link_scores(z, split.val_pos, split.val_neg))
            if val_auc > best_auc:
                best_auc = val_auc
                best_epoch = epoch
                best_state = model.state_arrays()
        log.append(EpochLog(epoch=epoch, loss=loss_value, val_auc=val_auc))
        if use_val and epoch - best_epoch >= config.patience:
            break

    if best_state is not None:
        model.load_state_arrays(best_state)
    return TrainResult(
        model=model,
        embedding=model.embed(g, x_values),
        log=log,
        best_epoch=best_epoch,
        best_val_auc=None if best_epoch is None else best_auc,
    )
