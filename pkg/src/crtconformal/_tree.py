"""Numba kernels for the from-scratch regression forest.

The tree logic lives here: bootstrap resampling, mtry feature subsampling,
axis-aligned splits minimizing the summed child squared error (equivalently
weighted child variance), constant leaves. Randomness comes from an inline
splitmix64 stream seeded per tree, so a forest is a pure function of
(X, y, hyperparameters, seed) regardless of where or when it is built.

Trees are stored structure-of-arrays: node k of tree t has feature[t, k]
(-1 marks a leaf), threshold, left/right child ids, and a leaf value.
"""

from __future__ import annotations

import numpy as np
from numba import njit

_GOLDEN = np.uint64(0x9E3779B97F4A7C15)
_MIX1 = np.uint64(0xBF58476D1CE4E5B9)
_MIX2 = np.uint64(0x94D049BB133111EB)


@njit(cache=True, inline="always")
def _splitmix64(state: np.uint64) -> tuple[np.uint64, np.uint64]:
    state = state + _GOLDEN
    z = state
    z = (z ^ (z >> np.uint64(30))) * _MIX1
    z = (z ^ (z >> np.uint64(27))) * _MIX2
    z = z ^ (z >> np.uint64(31))
    return state, z


@njit(cache=True)
def _build_tree(
    X, y, idx, max_depth, min_leaf, mtry, state,
    node_feature, node_threshold, node_left, node_right, node_value,
):
    # idx holds the bootstrap sample's row numbers; it is partitioned in place
    # as nodes split. Returns (node count, advanced rng state).
    n = idx.shape[0]
    p = X.shape[1]
    feat_pool = np.empty(p, dtype=np.int64)
    buf = np.empty(n, dtype=np.int64)
    # stack entries: (node id, start, end, depth)
    stack = np.empty((2 * n + 2, 4), dtype=np.int64)
    top = 0
    next_node = 1
    stack[top, 0] = 0
    stack[top, 1] = 0
    stack[top, 2] = n
    stack[top, 3] = 0
    top += 1
    while top > 0:
        top -= 1
        node = stack[top, 0]
        start = stack[top, 1]
        end = stack[top, 2]
        depth = stack[top, 3]
        count = end - start
        total = 0.0
        for k in range(start, end):
            total += y[idx[k]]
        node_value[node] = total / count
        node_feature[node] = -1
        if depth >= max_depth or count < 2 * min_leaf:
            continue
        # sample mtry distinct features by partial Fisher-Yates
        for k in range(p):
            feat_pool[k] = k
        m = mtry if mtry < p else p
        for k in range(m):
            state, z = _splitmix64(state)
            j = k + np.int64(z % np.uint64(p - k))
            tmp = feat_pool[k]
            feat_pool[k] = feat_pool[j]
            feat_pool[j] = tmp
        best_score = -np.inf
        best_feature = -1
        best_threshold = 0.0
        for fk in range(m):
            f = feat_pool[fk]
            vals = np.empty(count, dtype=np.float64)
            for k in range(count):
                vals[k] = X[idx[start + k], f]
            order = np.argsort(vals, kind="mergesort")
            left_sum = 0.0
            for pos in range(1, count):
                left_sum += y[idx[start + order[pos - 1]]]
                if pos < min_leaf or count - pos < min_leaf:
                    continue
                lo = vals[order[pos - 1]]
                hi = vals[order[pos]]
                if lo >= hi:
                    continue
                right_sum = total - left_sum
                score = left_sum * left_sum / pos + right_sum * right_sum / (count - pos)
                if score > best_score:
                    best_score = score
                    best_feature = f
                    mid = 0.5 * (lo + hi)
                    best_threshold = lo if mid >= hi else mid
        if best_feature < 0:
            continue
        # partition idx[start:end] into (<= threshold | > threshold), stably
        n_left = 0
        for k in range(start, end):
            if X[idx[k], best_feature] <= best_threshold:
                buf[n_left] = idx[k]
                n_left += 1
        n_right = 0
        for k in range(start, end):
            if X[idx[k], best_feature] > best_threshold:
                buf[n_left + n_right] = idx[k]
                n_right += 1
        for k in range(count):
            idx[start + k] = buf[k]
        left_id = next_node
        right_id = next_node + 1
        next_node += 2
        node_feature[node] = best_feature
        node_threshold[node] = best_threshold
        node_left[node] = left_id
        node_right[node] = right_id
        stack[top, 0] = left_id
        stack[top, 1] = start
        stack[top, 2] = start + n_left
        stack[top, 3] = depth + 1
        top += 1
        stack[top, 0] = right_id
        stack[top, 1] = start + n_left
        stack[top, 2] = end
        stack[top, 3] = depth + 1
        top += 1
    return next_node, state


@njit(cache=True)
def build_forest(X, y, n_trees, max_depth, min_leaf, mtry, seed, cap):
    """Build n_trees CART trees on bootstrap samples; returns stacked node arrays."""
    n = X.shape[0]
    node_feature = np.full((n_trees, cap), -1, dtype=np.int64)
    node_threshold = np.zeros((n_trees, cap), dtype=np.float64)
    node_left = np.zeros((n_trees, cap), dtype=np.int64)
    node_right = np.zeros((n_trees, cap), dtype=np.int64)
    node_value = np.zeros((n_trees, cap), dtype=np.float64)
    n_nodes = np.zeros(n_trees, dtype=np.int64)
    idx = np.empty(n, dtype=np.int64)
    for t in range(n_trees):
        state = (np.uint64(seed) + np.uint64(t) * _GOLDEN) ^ np.uint64(0xD1B54A32D192ED03)
        for k in range(n):
            state, z = _splitmix64(state)
            idx[k] = np.int64(z % np.uint64(n))
        count, state = _build_tree(
            X, y, idx, max_depth, min_leaf, mtry, state,
            node_feature[t], node_threshold[t], node_left[t], node_right[t], node_value[t],
        )
        n_nodes[t] = count
    return node_feature, node_threshold, node_left, node_right, node_value, n_nodes


@njit(cache=True)
def predict_forest(node_feature, node_threshold, node_left, node_right, node_value, X):
    """Mean over trees of the leaf value reached by each row."""
    n_trees = node_feature.shape[0]
    n = X.shape[0]
    out = np.zeros(n, dtype=np.float64)
    for t in range(n_trees):
        for i in range(n):
            node = 0
            while node_feature[t, node] >= 0:
                if X[i, node_feature[t, node]] <= node_threshold[t, node]:
                    node = node_left[t, node]
                else:
                    node = node_right[t, node]
            out[i] += node_value[t, node]
    return out / n_trees
