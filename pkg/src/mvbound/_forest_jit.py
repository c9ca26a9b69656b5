"""Flat-array decision-tree kernels, compiled with numba.

A tree lives in parallel arrays so the kernels stay nopython-friendly and the
serialized form is trivially exact:

    feature[m]     split feature, -1 marks a leaf
    threshold[m]   split threshold; rows with value <= threshold go left
    left/right[m]  child node ids
    frac[m, K]     weighted class fractions (filled for leaves only)

Randomness (bootstrap draws, feature subsets) comes from an internal
splitmix64-style stream, so training is bit-identical across platforms and
independent of numpy generator internals.
"""

import numpy as np
from numba import njit

_GOLDEN = np.uint64(0x9E3779B97F4A7C15)
_MULT_A = np.uint64(0xBF58476D1CE4E5B9)
_MULT_B = np.uint64(0x94D049BB133111EB)
_SH30 = np.uint64(30)
_SH27 = np.uint64(27)
_SH31 = np.uint64(31)


@njit(cache=True, nogil=True)
def _mix(state):
    state = state + _GOLDEN
    z = state
    z = (z ^ (z >> _SH30)) * _MULT_A
    z = (z ^ (z >> _SH27)) * _MULT_B
    z = z ^ (z >> _SH31)
    return state, z


@njit(cache=True, nogil=True)
def bootstrap_indices(seed, n, w):
    """Resample n row indices with replacement, redrawing while the resample
    carries zero total weight. Exactly replicates the draw grow_tree makes
    first, since both start from the same stream state."""
    state = np.uint64(seed)
    idx = np.empty(n, np.int64)
    while True:
        for i in range(n):
            state, z = _mix(state)
            idx[i] = np.int64(z % np.uint64(n))
        total = 0.0
        for i in range(n):
            total += w[idx[i]]
        if total > 0.0:
            return idx, state


@njit(cache=True, nogil=True)
def grow_tree(X, y0, w, n_classes, mtry, min_split, max_depth, seed, bootstrap):
    """Grow one weighted-Gini tree; returns trimmed node arrays.

    y0 is 0-based. Splits must strictly reduce the weighted impurity and may
    not create a zero-weight child (such a child would have no class
    distribution to speak of), so every leaf ends up with positive weight.
    """
    n, d = X.shape
    if bootstrap:
        idx, state = bootstrap_indices(np.uint64(seed), n, w)
    else:
        idx = np.arange(n)
        state = np.uint64(seed)

    cap = 2 * n + 3
    feature = np.full(cap, -1, np.int64)
    threshold = np.zeros(cap, np.float64)
    left = np.full(cap, -1, np.int64)
    right = np.full(cap, -1, np.int64)
    frac = np.zeros((cap, n_classes), np.float64)

    stack_node = np.empty(cap, np.int64)
    stack_lo = np.empty(cap, np.int64)
    stack_hi = np.empty(cap, np.int64)
    stack_depth = np.empty(cap, np.int64)

    feats = np.arange(d)
    counts = np.empty(n_classes, np.float64)
    left_counts = np.empty(n_classes, np.float64)
    svals = np.empty(n, np.float64)
    buf = np.empty(n, np.int64)

    node_count = 1
    stack_node[0] = 0
    stack_lo[0] = 0
    stack_hi[0] = n
    stack_depth[0] = 0
    sp = 1
    while sp > 0:
        sp -= 1
        node = stack_node[sp]
        lo = stack_lo[sp]
        hi = stack_hi[sp]
        depth = stack_depth[sp]
        seg = hi - lo

        wtot = 0.0
        for c in range(n_classes):
            counts[c] = 0.0
        for t in range(lo, hi):
            i = idx[t]
            counts[y0[i]] += w[i]
            wtot += w[i]

        live = 0
        for c in range(n_classes):
            if counts[c] > 0.0:
                live += 1

        best_f = -1
        best_thr = 0.0
        if seg >= min_split and live > 1 and depth < max_depth:
            # maximizing sum(child_count^2)/child_weight over both children is
            # the same ordering as minimizing the weighted Gini of the split
            parent_proxy = 0.0
            for c in range(n_classes):
                parent_proxy += counts[c] * counts[c]
            parent_proxy /= wtot
            best_proxy = parent_proxy

            take = mtry if mtry < d else d
            for kf in range(take):
                state, z = _mix(state)
                r = kf + np.int64(z % np.uint64(d - kf))
                tmpf = feats[kf]
                feats[kf] = feats[r]
                feats[r] = tmpf
                f = feats[kf]

                for t in range(seg):
                    svals[t] = X[idx[lo + t], f]
                order = np.argsort(svals[:seg])

                for c in range(n_classes):
                    left_counts[c] = 0.0
                wl = 0.0
                for pos in range(seg - 1):
                    i = idx[lo + order[pos]]
                    left_counts[y0[i]] += w[i]
                    wl += w[i]
                    v_here = svals[order[pos]]
                    v_next = svals[order[pos + 1]]
                    if v_next <= v_here:
                        continue
                    wr = wtot - wl
                    if wl <= 0.0 or wr <= 0.0:
                        continue
                    pl = 0.0
                    pr = 0.0
                    for c in range(n_classes):
                        lc = left_counts[c]
                        pl += lc * lc
                        rc = counts[c] - lc
                        pr += rc * rc
                    proxy = pl / wl + pr / wr
                    if proxy > best_proxy:
                        best_proxy = proxy
                        best_f = f
                        thr = v_here + 0.5 * (v_next - v_here)
                        if thr >= v_next:
                            # midpoint rounded onto the neighbor; fall back to
                            # the lower value so the right child stays nonempty
                            thr = v_here
                        best_thr = thr

        if best_f < 0:
            for c in range(n_classes):
                frac[node, c] = counts[c] / wtot
        else:
            nl = 0
            for t in range(lo, hi):
                if X[idx[t], best_f] <= best_thr:
                    buf[nl] = idx[t]
                    nl += 1
            nr = nl
            for t in range(lo, hi):
                if X[idx[t], best_f] > best_thr:
                    buf[nr] = idx[t]
                    nr += 1
            for t in range(seg):
                idx[lo + t] = buf[t]

            lid = node_count
            rid = node_count + 1
            node_count += 2
            feature[node] = best_f
            threshold[node] = best_thr
            left[node] = lid
            right[node] = rid
            stack_node[sp] = rid
            stack_lo[sp] = lo + nl
            stack_hi[sp] = hi
            stack_depth[sp] = depth + 1
            sp += 1
            stack_node[sp] = lid
            stack_lo[sp] = lo
            stack_hi[sp] = lo + nl
            stack_depth[sp] = depth + 1
            sp += 1

    return (
        feature[:node_count].copy(),
        threshold[:node_count].copy(),
        left[:node_count].copy(),
        right[:node_count].copy(),
        frac[:node_count].copy(),
    )


@njit(cache=True, nogil=True)
def add_tree_votes(X, feature, threshold, left, right, frac, out):
    """Route every row to its leaf and add the leaf's class fractions to out."""
    n = X.shape[0]
    k = frac.shape[1]
    for r in range(n):
        node = 0
        while feature[node] >= 0:
            if X[r, feature[node]] <= threshold[node]:
                node = left[node]
            else:
                node = right[node]
        for c in range(k):
            out[r, c] += frac[node, c]
