"""Compiled random forest used as the default utility classifier.

Gini-split CART trees with per-tree bootstrap, sqrt feature subsampling at
each split and unlimited depth. Fitting and prediction happen in one call
because the cross-validation harness never reuses a fitted forest.
"""

import numpy as np
from numba import njit


@njit(cache=True)
def _best_split(X, y, samples, start, end, max_features, feat_order, vals, order_buf):
    n = end - start
    n_total = X.shape[1]
    total1 = 0
    for i in range(start, end):
        total1 += y[samples[i]]

    best_score = -1.0
    best_feat = -1
    best_thr = 0.0
    # partial Fisher-Yates over the features, stopping after max_features non-constant ones
    for j in range(n_total):
        feat_order[j] = j
    visited = 0
    for k in range(n_total):
        if visited >= max_features:
            break
        r = k + np.random.randint(n_total - k)
        tmp = feat_order[k]
        feat_order[k] = feat_order[r]
        feat_order[r] = tmp
        f = feat_order[k]

        for i in range(n):
            vals[i] = X[samples[start + i], f]
        order = np.argsort(vals[:n], kind="mergesort")
        if vals[order[0]] == vals[order[n - 1]]:
            continue
        visited += 1
        for i in range(n):
            order_buf[i] = order[i]

        left1 = 0
        for i in range(n - 1):
            left1 += y[samples[start + order_buf[i]]]
            a = vals[order_buf[i]]
            b = vals[order_buf[i + 1]]
            if a == b:
                continue
            nl = i + 1
            nr = n - nl
            left0 = nl - left1
            right1 = total1 - left1
            right0 = nr - right1
            score = (left0 * left0 + left1 * left1) / nl + (right0 * right0 + right1 * right1) / nr
            if score > best_score + 1e-12:
                best_score = score
                best_feat = f
                thr = a / 2.0 + b / 2.0
                if thr == b:
                    thr = a
                best_thr = thr
    return best_feat, best_thr


@njit(cache=True)
def _grow_tree(X, y, samples, max_features, feat, thr, left, right, value):
    n_samples = samples.shape[0]
    n_features = X.shape[1]
    feat_order = np.empty(n_features, dtype=np.int64)
    vals = np.empty(n_samples, dtype=np.float64)
    order_buf = np.empty(n_samples, dtype=np.int64)
    tmp = np.empty(n_samples, dtype=np.int64)

    stack_start = np.empty(2 * n_samples + 1, dtype=np.int64)
    stack_end = np.empty(2 * n_samples + 1, dtype=np.int64)
    stack_node = np.empty(2 * n_samples + 1, dtype=np.int64)
    stack_start[0] = 0
    stack_end[0] = n_samples
    stack_node[0] = 0
    top = 1
    n_nodes = 1

    while top > 0:
        top -= 1
        start = stack_start[top]
        end = stack_end[top]
        node = stack_node[top]
        n = end - start
        pos = 0
        for i in range(start, end):
            pos += y[samples[i]]
        value[node] = pos / n
        feat[node] = -1
        if n < 2 or pos == 0 or pos == n:
            continue
        f, t = _best_split(X, y, samples, start, end, max_features, feat_order, vals, order_buf)
        if f < 0:
            continue
        # stable partition of samples[start:end] on X[:, f] <= t
        nl = 0
        for i in range(start, end):
            s = samples[i]
            if X[s, f] <= t:
                tmp[nl] = s
                nl += 1
        nr = 0
        for i in range(start, end):
            s = samples[i]
            if X[s, f] > t:
                tmp[nl + nr] = s
                nr += 1
        for i in range(n):
            samples[start + i] = tmp[i]

        feat[node] = f
        thr[node] = t
        left[node] = n_nodes
        right[node] = n_nodes + 1
        stack_start[top] = start
        stack_end[top] = start + nl
        stack_node[top] = n_nodes
        top += 1
        stack_start[top] = start + nl
        stack_end[top] = end
        stack_node[top] = n_nodes + 1
        top += 1
        n_nodes += 2
    return n_nodes


@njit(cache=True)
def forest_fit_predict(X_train, y_train, X_test, n_trees, max_features, bootstrap, seed):
    """Fit a forest on the training rows and return P(y=1) for each test row."""
    np.random.seed(seed)
    n = X_train.shape[0]
    cap = 2 * n + 1
    feat = np.empty(cap, dtype=np.int64)
    thr = np.empty(cap, dtype=np.float64)
    left = np.empty(cap, dtype=np.int64)
    right = np.empty(cap, dtype=np.int64)
    value = np.empty(cap, dtype=np.float64)
    samples = np.empty(n, dtype=np.int64)
    proba = np.zeros(X_test.shape[0], dtype=np.float64)

    for _ in range(n_trees):
        if bootstrap:
            for i in range(n):
                samples[i] = np.random.randint(n)
        else:
            for i in range(n):
                samples[i] = i
        _grow_tree(X_train, y_train, samples, max_features, feat, thr, left, right, value)
        for r in range(X_test.shape[0]):
            node = 0
            while feat[node] >= 0:
                if X_test[r, feat[node]] <= thr[node]:
                    node = left[node]
                else:
                    node = right[node]
            proba[r] += value[node]
    return proba / n_trees
