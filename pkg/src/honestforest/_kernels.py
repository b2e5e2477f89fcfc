"""Compiled inner loops for tree growth and routing.

Trees are stored as flat arrays indexed by node id; ``feature[node] == -1``
marks a leaf. Children always receive larger ids than their parent.
"""

import numpy as np
from numba import njit

# A node whose best criterion is below ZERO_REL * max(y^2) is not split.
ZERO_REL = 1e-20
# A candidate must beat the incumbent by this relative margin; near-ties keep
# the earlier (feature, threshold) regardless of summation order.
TIE_REL = 1e-12


@njit(cache=True, nogil=True)
def _splitmix_next(state):
    state = (state + np.uint64(0x9E3779B97F4A7C15)) & np.uint64(0xFFFFFFFFFFFFFFFF)
    z = state
    z = ((z ^ (z >> np.uint64(30))) * np.uint64(0xBF58476D1CE4E5B9)) & np.uint64(0xFFFFFFFFFFFFFFFF)
    z = ((z ^ (z >> np.uint64(27))) * np.uint64(0x94D049BB133111EB)) & np.uint64(0xFFFFFFFFFFFFFFFF)
    z = z ^ (z >> np.uint64(31))
    return state, z


@njit(cache=True, nogil=True)
def _choose_features(d, k, state, out):
    """Sorted random subset of ``k`` of ``d`` features (partial Fisher-Yates)."""
    perm = np.arange(d)
    for i in range(k):
        state, z = _splitmix_next(state)
        j = i + np.int64(z % np.uint64(d - i))
        tmp = perm[i]
        perm[i] = perm[j]
        perm[j] = tmp
    sel = np.sort(perm[:k])
    for i in range(k):
        out[i] = sel[i]
    return state


@njit(cache=True, nogil=True)
def best_split_segment(X, t, y, seg, feats, min_leaf, min_arm):
    """Exhaustive search over ``feats`` for rows ``seg``.

    Returns ``(feature, threshold, criterion)``; feature is -1 when no
    candidate satisfies the size constraints. Ties (within ``TIE_REL``) keep
    the lowest feature index and then the lowest threshold.
    """
    cnt = seg.size
    best_f = -1
    best_thr = 0.0
    best_crit = -1.0
    if cnt < 2 * min_leaf:
        return best_f, best_thr, best_crit
    nT = 0
    sT = 0.0
    sC = 0.0
    for i in range(cnt):
        r = seg[i]
        if t[r] == 1:
            nT += 1
            sT += y[r]
        else:
            sC += y[r]
    nC = cnt - nT
    if nT < 2 * min_arm or nC < 2 * min_arm:
        return best_f, best_thr, best_crit
    v = np.empty(cnt)
    for fi in range(feats.size):
        f = feats[fi]
        for i in range(cnt):
            v[i] = X[seg[i], f]
        order = np.argsort(v, kind="mergesort")
        lT = 0
        lsT = 0.0
        lsC = 0.0
        for i in range(cnt - 1):
            oi = order[i]
            r = seg[oi]
            if t[r] == 1:
                lT += 1
                lsT += y[r]
            else:
                lsC += y[r]
            vi = v[oi]
            vn = v[order[i + 1]]
            if vi == vn:
                continue
            nL = i + 1
            nR = cnt - nL
            if nL < min_leaf or nR < min_leaf:
                continue
            lC = nL - lT
            rT = nT - lT
            rC = nC - lC
            if lT < min_arm or lC < min_arm or rT < min_arm or rC < min_arm:
                continue
            tauL = lsT / lT - lsC / lC
            tauR = (sT - lsT) / rT - (sC - lsC) / rC
            diff = tauL - tauR
            crit = (nL * nR) / (cnt * cnt) * diff * diff
            if best_f < 0 or crit > best_crit * (1.0 + TIE_REL):
                best_crit = crit
                best_f = f
                thr = 0.5 * (vi + vn)
                if thr >= vn:
                    thr = vi
                best_thr = thr
    return best_f, best_thr, best_crit


@njit(cache=True, nogil=True)
def feature_order(X):
    """Stable per-feature argsort of all rows, shape ``(d, n)``."""
    n, d = X.shape
    order = np.empty((d, n), np.int64)
    for f in range(d):
        order[f] = np.argsort(X[:, f], kind="mergesort")
    return order


@njit(cache=True, nogil=True)
def _best_split_sorted(X, t, y, srt, s, e, feats, min_leaf, min_arm):
    cnt = e - s
    best_f = -1
    best_thr = 0.0
    best_crit = -1.0
    if cnt < 2 * min_leaf:
        return best_f, best_thr, best_crit
    nT = 0
    sT = 0.0
    sC = 0.0
    for i in range(s, e):
        r = srt[0, i]
        if t[r] == 1:
            nT += 1
            sT += y[r]
        else:
            sC += y[r]
    nC = cnt - nT
    if nT < 2 * min_arm or nC < 2 * min_arm:
        return best_f, best_thr, best_crit
    for fi in range(feats.size):
        f = feats[fi]
        lT = 0
        lsT = 0.0
        lsC = 0.0
        for i in range(s, e - 1):
            r = srt[f, i]
            if t[r] == 1:
                lT += 1
                lsT += y[r]
            else:
                lsC += y[r]
            vi = X[r, f]
            vn = X[srt[f, i + 1], f]
            if vi == vn:
                continue
            nL = i + 1 - s
            nR = cnt - nL
            if nL < min_leaf:
                continue
            if nR < min_leaf:
                break
            lC = nL - lT
            rT = nT - lT
            rC = nC - lC
            if lT < min_arm or lC < min_arm or rT < min_arm or rC < min_arm:
                continue
            tauL = lsT / lT - lsC / lC
            tauR = (sT - lsT) / rT - (sC - lsC) / rC
            diff = tauL - tauR
            crit = (nL * nR) / (cnt * cnt) * diff * diff
            if best_f < 0 or crit > best_crit * (1.0 + TIE_REL):
                best_crit = crit
                best_f = f
                thr = 0.5 * (vi + vn)
                if thr >= vn:
                    thr = vi
                best_thr = thr
    return best_f, best_thr, best_crit


@njit(cache=True, nogil=True)
def grow(X, t, y, rows, order, min_leaf, min_arm, max_depth, max_features, rng_state):
    """Grow a partition on ``rows``. ``max_depth < 0`` means unbounded.

    ``order`` is :func:`feature_order` of ``X``; each node keeps one sorted
    segment per feature, partitioned stably when the node splits.
    """
    n, d = X.shape
    m = rows.size
    cap = 2 * m + 1
    feature = np.full(cap, -1, np.int64)
    threshold = np.zeros(cap)
    left = np.full(cap, -1, np.int64)
    right = np.full(cap, -1, np.int64)
    parent = np.full(cap, -1, np.int64)
    depth = np.zeros(cap, np.int64)
    start = np.zeros(cap, np.int64)
    end = np.zeros(cap, np.int64)
    stack = np.empty(cap, np.int64)

    member = np.zeros(n, np.bool_)
    for i in range(m):
        member[rows[i]] = True
    srt = np.empty((d, m), np.int64)
    for f in range(d):
        c = 0
        for i in range(n):
            r = order[f, i]
            if member[r]:
                srt[f, c] = r
                c += 1
    goes_left = np.zeros(n, np.bool_)
    tmp = np.empty(m, np.int64)

    k = d if (max_features <= 0 or max_features >= d) else max_features
    feats = np.empty(k, np.int64)
    if k == d:
        for j in range(d):
            feats[j] = j
    state = np.uint64(rng_state)

    n_nodes = 1
    start[0] = 0
    end[0] = m
    sp = 1
    stack[0] = 0
    while sp > 0:
        sp -= 1
        node = stack[sp]
        s = start[node]
        e = end[node]
        if max_depth >= 0 and depth[node] >= max_depth:
            continue
        if k < d:
            state = _choose_features(d, k, state, feats)
        f, thr, crit = _best_split_sorted(X, t, y, srt, s, e, feats, min_leaf, min_arm)
        if f < 0:
            continue
        ymax2 = 0.0
        for i in range(s, e):
            yy = y[srt[0, i]] * y[srt[0, i]]
            if yy > ymax2:
                ymax2 = yy
        if crit <= ZERO_REL * ymax2:
            continue
        nl = 0
        for i in range(s, e):
            r = srt[0, i]
            gl = X[r, f] <= thr
            goes_left[r] = gl
            if gl:
                nl += 1
        for g in range(d):
            a = 0
            b = 0
            for i in range(s, e):
                r = srt[g, i]
                if goes_left[r]:
                    srt[g, s + a] = r
                    a += 1
                else:
                    tmp[b] = r
                    b += 1
            for i in range(b):
                srt[g, s + a + i] = tmp[i]
        lc = n_nodes
        rc = n_nodes + 1
        n_nodes += 2
        feature[node] = f
        threshold[node] = thr
        left[node] = lc
        right[node] = rc
        parent[lc] = node
        parent[rc] = node
        depth[lc] = depth[node] + 1
        depth[rc] = depth[node] + 1
        start[lc] = s
        end[lc] = s + nl
        start[rc] = s + nl
        end[rc] = e
        stack[sp] = rc
        stack[sp + 1] = lc
        sp += 2
    return (
        feature[:n_nodes].copy(),
        threshold[:n_nodes].copy(),
        left[:n_nodes].copy(),
        right[:n_nodes].copy(),
        parent[:n_nodes].copy(),
        depth[:n_nodes].copy(),
    )


@njit(cache=True, nogil=True)
def apply_rows(X, rows, feature, threshold, left, right):
    out = np.empty(rows.size, np.int64)
    for i in range(rows.size):
        r = rows[i]
        node = 0
        while feature[node] >= 0:
            if X[r, feature[node]] <= threshold[node]:
                node = left[node]
            else:
                node = right[node]
        out[i] = node
    return out


@njit(cache=True, nogil=True)
def apply_all(X, feature, threshold, left, right):
    n = X.shape[0]
    out = np.empty(n, np.int64)
    for r in range(n):
        node = 0
        while feature[node] >= 0:
            if X[r, feature[node]] <= threshold[node]:
                node = left[node]
            else:
                node = right[node]
        out[r] = node
    return out


@njit(cache=True, nogil=True)
def node_arm_stats(X, t, y, rows, feature, threshold, left, right):
    """Treated/control counts and outcome sums of ``rows`` at every node on their paths."""
    n_nodes = feature.size
    nT = np.zeros(n_nodes, np.int64)
    nC = np.zeros(n_nodes, np.int64)
    sT = np.zeros(n_nodes)
    sC = np.zeros(n_nodes)
    for i in range(rows.size):
        r = rows[i]
        node = 0
        while True:
            if t[r] == 1:
                nT[node] += 1
                sT[node] += y[r]
            else:
                nC[node] += 1
                sC[node] += y[r]
            if feature[node] < 0:
                break
            if X[r, feature[node]] <= threshold[node]:
                node = left[node]
            else:
                node = right[node]
    return nT, nC, sT, sC


@njit(cache=True, nogil=True)
def node_values(parent, nT, nC, sT, sC):
    """Per-node SPATE; nodes missing an arm inherit from their parent."""
    n_nodes = parent.size
    value = np.zeros(n_nodes)
    inherited = np.zeros(n_nodes, np.bool_)
    for node in range(n_nodes):
        if nT[node] > 0 and nC[node] > 0:
            value[node] = sT[node] / nT[node] - sC[node] / nC[node]
        else:
            p = parent[node]
            value[node] = value[p]
            inherited[node] = True
    return value, inherited


@njit(cache=True, nogil=True)
def lasso_cd_gram(G, c, lam, penalized, beta, tol, max_iter):
    """Cyclic coordinate descent for ``0.5 b'Gb - c'b + lam * sum_pen |b_j|``.

    ``G``/``c`` are ``Z'Z/n`` and ``Z'y/n`` of a column-scaled design;
    ``beta`` is the warm start and is updated in place. Stops once the KKT
    residual is at most ``tol``. Returns ``(iterations, kkt_residual)``;
    ``iterations == max_iter`` signals non-convergence.
    """
    p = c.size
    grad = c - G @ beta
    it = 0
    while it < max_iter:
        it += 1
        for j in range(p):
            gjj = G[j, j]
            if gjj <= 0.0:
                continue
            old = beta[j]
            rho = grad[j] + gjj * old
            if penalized[j]:
                if rho > lam:
                    new = (rho - lam) / gjj
                elif rho < -lam:
                    new = (rho + lam) / gjj
                else:
                    new = 0.0
            else:
                new = rho / gjj
            delta = new - old
            if delta != 0.0:
                beta[j] = new
                for k in range(p):
                    grad[k] -= G[k, j] * delta
        res = kkt_residual(grad, beta, lam, penalized, G)
        if res <= tol:
            return it, res
    return it, kkt_residual(grad, beta, lam, penalized, G)


@njit(cache=True, nogil=True)
def kkt_residual(grad, beta, lam, penalized, G):
    """Largest violation of the lasso optimality conditions given ``grad = c - G b``."""
    res = 0.0
    for j in range(grad.size):
        if G[j, j] <= 0.0:
            continue
        g = grad[j]
        if not penalized[j]:
            v = abs(g)
        elif beta[j] == 0.0:
            v = abs(g) - lam
            if v < 0.0:
                v = 0.0
        elif beta[j] > 0.0:
            v = abs(g - lam)
        else:
            v = abs(g + lam)
        if v > res:
            res = v
    return res
