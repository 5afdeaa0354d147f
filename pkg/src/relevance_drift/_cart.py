"""Compiled CART kernels (Gini, axis-aligned, no pruning).

Trees are stored as flat parallel arrays. Node ``i`` is a leaf when
``feature[i] == -1``; samples with ``x[feature] <= threshold`` go left.
"""

import numpy as np
from numba import njit

LEAF = -1


@njit(cache=True, nogil=True)
def build_tree(X, y, n_classes, max_features, min_leaf, max_depth, seed):
    n, d = X.shape
    np.random.seed(seed)
    cap = 2 * n + 1
    feature = np.full(cap, LEAF, dtype=np.int64)
    threshold = np.zeros(cap, dtype=np.float64)
    left = np.full(cap, -1, dtype=np.int64)
    right = np.full(cap, -1, dtype=np.int64)
    counts = np.zeros((cap, n_classes), dtype=np.float64)
    n_node = np.zeros(cap, dtype=np.int64)

    idx = np.arange(n)
    perm = np.arange(d)
    cL = np.zeros(n_classes, dtype=np.int64)
    cR = np.zeros(n_classes, dtype=np.int64)
    cnode = np.zeros(n_classes, dtype=np.int64)
    stack_node = np.empty(cap, dtype=np.int64)
    stack_lo = np.empty(cap, dtype=np.int64)
    stack_hi = np.empty(cap, dtype=np.int64)
    stack_depth = np.empty(cap, dtype=np.int64)
    stack_node[0] = 0
    stack_lo[0] = 0
    stack_hi[0] = n
    stack_depth[0] = 0
    top = 1
    n_nodes = 1
    chosen = np.empty(d, dtype=np.int64)

    while top > 0:
        top -= 1
        node = stack_node[top]
        lo = stack_lo[top]
        hi = stack_hi[top]
        depth = stack_depth[top]
        m = hi - lo
        n_node[node] = m
        for c in range(n_classes):
            cR[c] = 0
        for j in range(lo, hi):
            cR[y[idx[j]]] += 1
        sq = 0
        n_present = 0
        for c in range(n_classes):
            cnode[c] = cR[c]
            counts[node, c] = cR[c]
            sq += cR[c] * cR[c]
            if cR[c] > 0:
                n_present += 1
        if n_present <= 1 or m < 2 * min_leaf or (max_depth >= 0 and depth >= max_depth):
            continue
        parent_gini = 1.0 - sq / (m * m)

        # partial Fisher-Yates draw of the candidate features
        k = min(max_features, d)
        for j in range(d):
            perm[j] = j
        for j in range(k):
            r = j + np.random.randint(0, d - j)
            tmp = perm[j]
            perm[j] = perm[r]
            perm[r] = tmp
        for j in range(k):
            chosen[j] = perm[j]
        cand = np.sort(chosen[:k])

        best_imp = np.inf
        best_f = -1
        best_thr = 0.0
        vals = np.empty(m, dtype=np.float64)
        for fi in range(k):
            f = cand[fi]
            for j in range(m):
                vals[j] = X[idx[lo + j], f]
            order = np.argsort(vals, kind="mergesort")
            for c in range(n_classes):
                cL[c] = 0
                cR[c] = cnode[c]
            sqL = 0
            sqR = sq
            for i in range(m - 1):
                cls = y[idx[lo + order[i]]]
                sqL += 2 * cL[cls] + 1
                cL[cls] += 1
                sqR -= 2 * cR[cls] - 1
                cR[cls] -= 1
                v0 = vals[order[i]]
                v1 = vals[order[i + 1]]
                if not v0 < v1:
                    continue
                nL = i + 1
                nR = m - nL
                if nL < min_leaf or nR < min_leaf:
                    continue
                imp = (nL - sqL / nL + nR - sqR / nR) / m
                if imp < best_imp:
                    thr = 0.5 * (v0 + v1)
                    if not thr < v1:
                        thr = v0
                    best_imp = imp
                    best_f = f
                    best_thr = thr
        if best_f < 0 or not best_imp < parent_gini - 1e-12:
            continue

        # partition idx[lo:hi] in place, stable on both sides
        buf = idx[lo:hi].copy()
        a = lo
        for j in range(m):
            if X[buf[j], best_f] <= best_thr:
                idx[a] = buf[j]
                a += 1
        mid = a
        for j in range(m):
            if X[buf[j], best_f] > best_thr:
                idx[a] = buf[j]
                a += 1
        feature[node] = best_f
        threshold[node] = best_thr
        left[node] = n_nodes
        right[node] = n_nodes + 1
        n_nodes += 2
        # right pushed first so the left subtree is built first
        stack_node[top] = right[node]
        stack_lo[top] = mid
        stack_hi[top] = hi
        stack_depth[top] = depth + 1
        top += 1
        stack_node[top] = left[node]
        stack_lo[top] = lo
        stack_hi[top] = mid
        stack_depth[top] = depth + 1
        top += 1

    return (
        feature[:n_nodes].copy(),
        threshold[:n_nodes].copy(),
        left[:n_nodes].copy(),
        right[:n_nodes].copy(),
        counts[:n_nodes].copy(),
        n_node[:n_nodes].copy(),
    )


@njit(cache=True, nogil=True)
def apply_tree(feature, threshold, left, right, X):
    out = np.empty(X.shape[0], dtype=np.int64)
    for r in range(X.shape[0]):
        node = 0
        while feature[node] != LEAF:
            if X[r, feature[node]] <= threshold[node]:
                node = left[node]
            else:
                node = right[node]
        out[r] = node
    return out
