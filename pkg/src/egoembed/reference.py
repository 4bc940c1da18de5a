"""Dense-matrix reference for the sparse forward pass (test oracle).

Builds the full n-by-n coefficient matrix per head (masked row softmax of
edge logits, or row-normalized weights), multiplies it out, and mirrors
the head combination and activations. Evaluation mode only; used to check
the production CSR path on small fixtures.
"""

from __future__ import annotations

import numpy as np


def _activation(name, x):
    if name == "identity":
        return x
    if name == "elu":
        return np.where(x > 0, x, np.expm1(np.minimum(x, 0.0)))
    raise ValueError(f"unknown activation {name!r}")


def _leaky(x, slope):
    return np.where(x >= 0, x, slope * x)


def dense_coefficient_matrix(adj_mask, weights_dense, hw, attn_vec, slope):
    """Masked-softmax attention matrix for one head, or row-normalized
    weights when ``attn_vec`` is None."""
    n = adj_mask.shape[0]
    if attn_vec is None:
        coeff = np.where(adj_mask, weights_dense, 0.0)
        return coeff / coeff.sum(axis=1, keepdims=True)
    m = hw.shape[1]
    s_self = hw @ attn_vec[:m]
    s_peer = hw @ attn_vec[m:]
    logits = _leaky(s_self[:, None] + s_peer[None, :], slope)
    logits = np.where(adj_mask, logits, -np.inf)
    logits -= logits.max(axis=1, keepdims=True)
    e = np.exp(logits)
    return e / e.sum(axis=1, keepdims=True)


def _dense_graph_layer(adj_mask, weights_dense, h, layer, aggregation, slope):
    hw = h @ layer.weight.values.T
    m = layer.head_dim
    outs = []
    for k in range(layer.num_heads):
        hw_k = hw[:, k * m : (k + 1) * m]
        attn_vec = None
        if aggregation == "attention":
            attn_vec = layer.attn.values[k]
        coeff = dense_coefficient_matrix(adj_mask, weights_dense, hw_k, attn_vec, slope)
        outs.append(coeff @ hw_k)
    if len(outs) == 1:
        combined = outs[0]
    elif layer.head_combine == "concat":
        combined = np.concatenate(outs, axis=1)
    else:
        combined = np.mean(outs, axis=0)
    return _activation(layer.activation, combined)


def dense_reference_forward(g, x, model):
    """Evaluation-mode (Z, reconstruction) via dense matrices.

    For the structure decoder the reconstruction slot carries the full
    logistic(Z Z^T) edge-probability matrix.
    """
    x = np.asarray(x.values if hasattr(x, "values") else x, dtype=np.float64)
    dense = g.to_dense()
    adj_mask = dense > 0
    if not np.all(adj_mask.diagonal()):
        raise ValueError("graph must carry self-loops")
    cfg = model.config
    h = x
    for layer in model.params.encoder:
        h = _dense_graph_layer(adj_mask, dense, h, layer, cfg.aggregation, cfg.leaky_slope)
    z = h
    if cfg.decoder_kind == "structure":
        return z, 1.0 / (1.0 + np.exp(-(z @ z.T)))
    if cfg.decoder_kind == "mlp":
        for layer in model.params.decoder:
            h = _activation(layer.activation, h @ layer.weight.values.T + layer.bias.values[0])
        return z, h
    for layer in model.params.decoder:
        h = _dense_graph_layer(adj_mask, dense, h, layer, cfg.aggregation, cfg.leaky_slope)
    return z, h
