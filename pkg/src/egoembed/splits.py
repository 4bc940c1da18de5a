"""Reproducible edge splits and negative sampling for link prediction.

Undirected edges (self-loops excluded) are partitioned into train/val/test
positives; an equal number of never-observed node pairs is sampled as
validation/test negatives. Everything is deterministic for a fixed seed,
and splits serialize to JSON for exact reruns.
"""

from __future__ import annotations

import json
from dataclasses import dataclass

import numpy as np

from .graph import SparseGraph, add_self_loops, graph_from_edges

MIN_SPLITTABLE_EDGES = 20


class SplitError(ValueError):
    pass


def _as_pairs(arr):
    out = np.asarray(arr, dtype=np.int64).reshape(-1, 2)
    out.flags.writeable = False
    return out


@dataclass(frozen=True)
class EdgeSplit:
    seed: int
    ratios: tuple
    num_nodes: int
    train_pos: np.ndarray
    val_pos: np.ndarray
    test_pos: np.ndarray
    val_neg: np.ndarray
    test_neg: np.ndarray

    def to_json(self, fp):
        payload = {
            "seed": int(self.seed),
            "ratios": list(self.ratios),
            "num_nodes": int(self.num_nodes),
            "train_pos": self.train_pos.tolist(),
            "val_pos": self.val_pos.tolist(),
            "test_pos": self.test_pos.tolist(),
            "val_neg": self.val_neg.tolist(),
            "test_neg": self.test_neg.tolist(),
        }
        json.dump(payload, fp)

    @classmethod
    def from_json(cls, fp):
        payload = json.load(fp)
        return cls(
            seed=payload["seed"],
            ratios=tuple(payload["ratios"]),
            num_nodes=payload["num_nodes"],
            train_pos=_as_pairs(payload["train_pos"]),
            val_pos=_as_pairs(payload["val_pos"]),
            test_pos=_as_pairs(payload["test_pos"]),
            val_neg=_as_pairs(payload["val_neg"]),
            test_neg=_as_pairs(payload["test_neg"]),
        )

    def validate(self, g):
        """Check the split invariants against the graph it was drawn from."""
        original = {tuple(e) for e in g.undirected_edges()}
        train = {tuple(e) for e in self.train_pos}
        val = {tuple(e) for e in self.val_pos}
        test = {tuple(e) for e in self.test_pos}
        if train | val | test != original:
            raise SplitError("positive sets do not cover the original edge set")
        if (train & val) or (train & test) or (val & test):
            raise SplitError("positive sets are not disjoint")
        if len(self.test_neg) != len(self.test_pos):
            raise SplitError("test negatives must match test positives 1:1")
        if len(self.val_neg) != len(self.val_pos):
            raise SplitError("val negatives must match val positives 1:1")
        negatives = {tuple(e) for e in self.val_neg} | {tuple(e) for e in self.test_neg}
        if negatives & original:
            raise SplitError("a negative edge exists in the graph")
        for i, j in negatives:
            if i == j:
                raise SplitError("self-pair sampled as negative")
        return self


def sample_negative_edges(g, count, rng_seed):
    """Draw ``count`` distinct unordered non-edges (no self-pairs).

    Small graphs are handled by enumerating every non-edge; larger ones by
    rejection sampling against the edge set. Deterministic per seed.
    """
    if count < 0:
        raise ValueError("count must be non-negative")
    n = g.num_nodes
    edges = g.undirected_edges()
    total_pairs = n * (n - 1) // 2
    available = total_pairs - len(edges)
    if count > available:
        raise ValueError(f"cannot sample {count} negatives, only {available} non-edges exist")
    if count == 0:
        return _as_pairs(np.zeros((0, 2), dtype=np.int64))
    rng = np.random.default_rng(rng_seed)
    edge_keys = np.sort(edges[:, 0] * n + edges[:, 1]) if len(edges) else np.zeros(0, dtype=np.int64)

    if n <= 4096:
        rows, cols = np.triu_indices(n, k=1)
        keys = rows * n + cols
        mask = ~np.isin(keys, edge_keys)
        candidates = keys[mask]
        chosen = rng.choice(len(candidates), size=count, replace=False)
        keys = candidates[np.sort(chosen)]
    else:
        seen = set()
        picked = []
        while len(picked) < count:
            batch = max(4 * (count - len(picked)), 1024)
            a = rng.integers(0, n, size=batch)
            b = rng.integers(0, n, size=batch)
            lo, hi = np.minimum(a, b), np.maximum(a, b)
            cand = lo * n + hi
            cand = cand[(lo != hi) & ~np.isin(cand, edge_keys)]
            for key in cand:
                if key not in seen:
                    seen.add(key)
                    picked.append(key)
                    if len(picked) == count:
                        break
        keys = np.array(picked, dtype=np.int64)
    return _as_pairs(np.column_stack([keys // n, keys % n]))


def split_edges(g, ratios=(0.85, 0.05, 0.10), seed=0):
    """Partition undirected edges into train/val/test and sample negatives.

    Sizes are the rounded val/test ratios with the remainder assigned to
    train. Negatives for val and test are drawn jointly so the two sets
    are disjoint, each matching its positive set 1:1.
    """
    ratios = tuple(float(r) for r in ratios)
    if len(ratios) != 3 or any(r < 0 for r in ratios):
        raise SplitError(f"ratios must be three non-negative numbers, got {ratios}")
    if abs(sum(ratios) - 1.0) > 1e-9:
        raise SplitError(f"ratios must sum to 1, got {ratios}")
    edges = g.undirected_edges()
    m = len(edges)
    holds_out = ratios[1] > 0 or ratios[2] > 0
    if holds_out and m < MIN_SPLITTABLE_EDGES:
        raise SplitError(f"refusing to split a graph with only {m} undirected edges")

    n_val = int(round(m * ratios[1]))
    n_test = int(round(m * ratios[2]))
    if n_val + n_test > m:
        raise SplitError("val/test ratios leave no training edges")
    rng = np.random.default_rng([seed, 0])
    perm = rng.permutation(m)
    test_pos = edges[np.sort(perm[:n_test])]
    val_pos = edges[np.sort(perm[n_test : n_test + n_val])]
    train_pos = edges[np.sort(perm[n_test + n_val :])]

    negatives = sample_negative_edges(g, n_val + n_test, [seed, 1])
    return EdgeSplit(
        seed=seed,
        ratios=ratios,
        num_nodes=g.num_nodes,
        train_pos=_as_pairs(train_pos),
        val_pos=_as_pairs(val_pos),
        test_pos=_as_pairs(test_pos),
        val_neg=_as_pairs(negatives[n_test : n_test + n_val]),
        test_neg=_as_pairs(negatives[:n_test]),
    )


def build_train_graph(split, num_nodes=None):
    """Symmetric graph over the training positives, with self-loops re-added."""
    n = split.num_nodes if num_nodes is None else num_nodes
    base = graph_from_edges(n, split.train_pos, symmetrize=True)
    return add_self_loops(base)
