"""Compiled CART kernels shared by the classification and regression forests.

Trees are flat arrays.  ``feature[node] == -1`` marks a leaf.  Ordered
features send ``x <= threshold`` left; categorical features (``n_levels > 0``)
send a level left when its bit is set in ``catmask``.  ``left``/``right``
hold node indices local to the tree.

Training rows enter as integer weights (bootstrap multiplicities), so a
row drawn three times is stored once with weight 3.  Ordered features are
pre-encoded as dense value ranks ``R`` with the sorted distinct values in
``U``; split search sorts or bucket-counts ranks instead of floats.

Randomness comes from a splitmix64 stream carried in a one-element uint64
array, so every tree is a pure function of its seed and builds can run on
any thread without touching shared generator state.
"""

import numpy as np
from numba import njit

_GAMMA = np.uint64(0x9E3779B97F4A7C15)
_MIX1 = np.uint64(0xBF58476D1CE4E5B9)
_MIX2 = np.uint64(0x94D049BB133111EB)
_S11 = np.uint64(11)
_S27 = np.uint64(27)
_S30 = np.uint64(30)
_S31 = np.uint64(31)
_ONE = np.uint64(1)

GINI_TOL = 1e-12
REG_RTOL = 1e-10
MAX_EXHAUSTIVE_LEVELS = 12


@njit(cache=True, nogil=True, error_model="numpy")
def _next_u64(state):
    state[0] += _GAMMA
    z = state[0]
    z = (z ^ (z >> _S30)) * _MIX1
    z = (z ^ (z >> _S27)) * _MIX2
    return z ^ (z >> _S31)


@njit(cache=True, nogil=True, error_model="numpy")
def _below(state, n):
    return np.int64((_next_u64(state) >> _S11) % np.uint64(n))


@njit(cache=True, nogil=True, error_model="numpy")
def _gini(counts, total):
    s = 0.0
    for c in range(counts.shape[0]):
        p = counts[c] / total
        s += p * p
    return 1.0 - s


@njit(cache=True, nogil=True, error_model="numpy")
def _weighted_child_gini(left_counts, parent_counts, nl, nr):
    n = nl + nr
    gl = 0.0
    gr = 0.0
    for c in range(left_counts.shape[0]):
        pl = left_counts[c] / nl
        pr = (parent_counts[c] - left_counts[c]) / nr
        gl += pl * pl
        gr += pr * pr
    return (nl / n) * (1.0 - gl) + (nr / n) * (1.0 - gr)


@njit(cache=True, nogil=True, error_model="numpy")
def _midpoint(v, vn):
    thr = 0.5 * (v + vn)
    if thr >= vn:
        thr = v
    return thr


@njit(cache=True, nogil=True, error_model="numpy")
def _score(regression, n_classes, lstat, nl, parent_counts, total_w, total_y, parent_imp):
    """Impurity decrease of a cut whose left side has weight nl and stats lstat."""
    nr = total_w - nl
    if regression:
        sl = lstat[0]
        sr = total_y - sl
        return (sl * sl / nl + sr * sr / nr - total_y * total_y / total_w) / total_w
    if n_classes == 2:
        l1 = lstat[1]
        r1 = parent_counts[1] - l1
        return parent_imp - 2.0 * (l1 * (nl - l1) / nl + r1 * (nr - r1) / nr) / total_w
    return parent_imp - _weighted_child_gini(lstat, parent_counts, nl, nr)


@njit(cache=True, nogil=True, error_model="numpy")
def _ordered_split(R, U, y_cls, y_reg, wt, idx, start, end, f, n_classes, regression,
                   parent_counts, total_w, total_y, parent_imp, tol, hist_w, hist_s, lstat, keys):
    cnt = end - start
    width = 1 if regression else n_classes
    rmin = R[idx[start], f]
    rmax = rmin
    for k in range(start + 1, end):
        r = R[idx[k], f]
        if r < rmin:
            rmin = r
        elif r > rmax:
            rmax = r
    found = False
    best_dec = tol
    best_thr = np.nan
    if rmin == rmax:
        return found, 0.0, best_thr
    lstat[:] = 0.0
    nl = 0.0
    span = rmax - rmin + 1
    if span <= 16 * cnt:
        # Bucket by rank: O(cnt + span), no comparison sort.
        for k in range(start, end):
            s = idx[k]
            r = R[s, f]
            w = wt[s]
            hist_w[r] += w
            if regression:
                hist_s[r, 0] += w * y_reg[s]
            else:
                hist_s[r, y_cls[s]] += w
        prev = -1
        for r in range(rmin, rmax + 1):
            if hist_w[r] == 0.0:
                continue
            if prev >= 0:
                dec = _score(regression, n_classes, lstat, nl, parent_counts, total_w, total_y,
                             parent_imp)
                if dec > best_dec + (tol if found else 0.0):
                    best_dec = dec
                    best_thr = _midpoint(U[f, prev], U[f, r])
                    found = True
            nl += hist_w[r]
            for c in range(width):
                lstat[c] += hist_s[r, c]
                hist_s[r, c] = 0.0
            hist_w[r] = 0.0
            prev = r
    else:
        bits = 1
        while (1 << bits) < cnt:
            bits += 1
        low = (1 << bits) - 1
        for k in range(cnt):
            keys[k] = (R[idx[start + k], f] << bits) | k
        keys[:cnt].sort()
        for k in range(cnt - 1):
            s = idx[start + (keys[k] & low)]
            w = wt[s]
            nl += w
            if regression:
                lstat[0] += w * y_reg[s]
            else:
                lstat[y_cls[s]] += w
            r = keys[k] >> bits
            rn = keys[k + 1] >> bits
            if r < rn:
                dec = _score(regression, n_classes, lstat, nl, parent_counts, total_w, total_y,
                             parent_imp)
                if dec > best_dec + (tol if found else 0.0):
                    best_dec = dec
                    best_thr = _midpoint(U[f, r], U[f, rn])
                    found = True
    return found, best_dec, best_thr


@njit(cache=True, nogil=True, error_model="numpy")
def _categorical_split(X, y_cls, y_reg, wt, idx, start, end, f, k_levels, n_classes,
                       regression, parent_counts, total_w, total_y, parent_imp, tol):
    width = 1 if regression else n_classes
    lvl_stat = np.zeros((k_levels, width))
    lvl_n = np.zeros(k_levels)
    for k in range(start, end):
        s = idx[k]
        w = wt[s]
        code = np.int64(X[s, f])
        lvl_n[code] += w
        if regression:
            lvl_stat[code, 0] += w * y_reg[s]
        else:
            lvl_stat[code, y_cls[s]] += w
    q = 0
    for lv in range(k_levels):
        if lvl_n[lv] > 0:
            q += 1
    best_dec = tol
    best_mask = np.uint64(0)
    found = False
    if q < 2:
        return found, 0.0, best_mask
    present = np.empty(q, np.int64)
    j = 0
    for lv in range(k_levels):
        if lvl_n[lv] > 0:
            present[j] = lv
            j += 1
    acc = np.zeros(width)
    if regression or n_classes == 2 or q > MAX_EXHAUSTIVE_LEVELS:
        # Order levels by mean response (positive-class rate for two
        # classes) and scan the q-1 ordinal cut points.
        col = 1 if (not regression and n_classes == 2) else 0
        key = np.empty(q)
        for j in range(q):
            lv = present[j]
            key[j] = lvl_stat[lv, col] / lvl_n[lv]
        order = np.argsort(key, kind="mergesort")
        nl = 0.0
        mask = np.uint64(0)
        for j in range(q - 1):
            lv = present[order[j]]
            nl += lvl_n[lv]
            for c in range(width):
                acc[c] += lvl_stat[lv, c]
            mask |= _ONE << np.uint64(lv)
            dec = _score(regression, n_classes, acc, nl, parent_counts, total_w, total_y, parent_imp)
            if dec > best_dec + (tol if found else 0.0):
                best_dec = dec
                best_mask = mask
                found = True
    else:
        # Multiclass response with few levels: every bipartition, with the
        # last present level pinned to the right branch.
        for sub in range(1, 1 << (q - 1)):
            nl = 0.0
            acc[:] = 0.0
            mask = np.uint64(0)
            for j in range(q - 1):
                if (sub >> j) & 1:
                    lv = present[j]
                    nl += lvl_n[lv]
                    for c in range(width):
                        acc[c] += lvl_stat[lv, c]
                    mask |= _ONE << np.uint64(lv)
            dec = _score(regression, n_classes, acc, nl, parent_counts, total_w, total_y, parent_imp)
            if dec > best_dec + (tol if found else 0.0):
                best_dec = dec
                best_mask = mask
                found = True
    return found, best_dec, best_mask


@njit(cache=True, nogil=True, error_model="numpy")
def node_stats(y_cls, y_reg, wt, idx, start, end, n_classes, regression):
    """(class weights, total weight, response sum, impurity, pure?) of a node."""
    counts = np.zeros(n_classes)
    total_w = 0.0
    total_y = 0.0
    if regression:
        lo = np.inf
        hi = -np.inf
        for k in range(start, end):
            s = idx[k]
            v = y_reg[s]
            total_w += wt[s]
            total_y += wt[s] * v
            lo = min(lo, v)
            hi = max(hi, v)
        mean = total_y / total_w
        ss = 0.0
        for k in range(start, end):
            d = y_reg[idx[k]] - mean
            ss += wt[idx[k]] * d * d
        return counts, total_w, total_y, ss / total_w, lo == hi
    for k in range(start, end):
        s = idx[k]
        counts[y_cls[s]] += wt[s]
        total_w += wt[s]
    nz = 0
    for c in range(n_classes):
        if counts[c] > 0:
            nz += 1
    return counts, total_w, total_y, _gini(counts, total_w), nz <= 1


@njit(cache=True, nogil=True, error_model="numpy")
def _search(X, R, U, y_cls, y_reg, wt, idx, start, end, candidates, n_levels, n_classes,
            regression, counts, total_w, total_y, imp, hist_w, hist_s, lstat, keys):
    best_f = -1
    best_thr = np.nan
    best_mask = np.uint64(0)
    best_dec = 0.0
    tol = REG_RTOL * imp if regression else GINI_TOL
    for ci in range(candidates.shape[0]):
        f = candidates[ci]
        if n_levels[f] > 0:
            ok, dec, mask = _categorical_split(X, y_cls, y_reg, wt, idx, start, end, f, n_levels[f],
                                               n_classes, regression, counts, total_w, total_y,
                                               imp, tol)
            thr = np.nan
        else:
            ok, dec, thr = _ordered_split(R, U, y_cls, y_reg, wt, idx, start, end, f,
                                          n_classes, regression, counts, total_w, total_y, imp,
                                          tol, hist_w, hist_s, lstat, keys)
            mask = np.uint64(0)
        if ok and (best_f < 0 or dec > best_dec + tol):
            best_f = f
            best_thr = thr
            best_mask = mask
            best_dec = dec
    return best_f, best_thr, best_mask, best_dec


@njit(cache=True, nogil=True, error_model="numpy")
def best_split_node(X, R, U, y_cls, y_reg, wt, idx, start, end, candidates, n_levels,
                    n_classes, regression):
    """Best split over ``candidates`` (ascending) for rows ``idx[start:end]``.

    Returns ``(feature, threshold, catmask, decrease)``; feature is -1 when
    no candidate lowers the impurity.  A later candidate replaces the
    incumbent only when it beats it by more than the tolerance, so exact
    ties keep the lowest feature index and the lowest threshold.
    """
    counts, total_w, total_y, imp, pure = node_stats(y_cls, y_reg, wt, idx, start, end,
                                                     n_classes, regression)
    if pure or end - start < 2:
        return -1, np.nan, np.uint64(0), 0.0
    width = 1 if regression else n_classes
    hist_w = np.zeros(U.shape[1])
    hist_s = np.zeros((U.shape[1], width))
    return _search(X, R, U, y_cls, y_reg, wt, idx, start, end, candidates, n_levels, n_classes,
                   regression, counts, total_w, total_y, imp, hist_w, hist_s, np.zeros(width),
                   np.empty(end - start, np.int64))


@njit(cache=True, nogil=True, error_model="numpy")
def build_tree(X, R, U, y_cls, y_reg, n_classes, n_levels, wt, mtry,
               min_node_size, max_depth, seed, regression):
    """Grow one CART tree on the rows with positive weight ``wt``."""
    n, n_feat = X.shape
    width = 1 if regression else n_classes
    m = 0
    for i in range(n):
        if wt[i] > 0:
            m += 1
    idx = np.empty(m, np.int64)
    j = 0
    for i in range(n):
        if wt[i] > 0:
            idx[j] = i
            j += 1
    cap = 2 * m + 1
    feature = np.full(cap, -1, np.int32)
    threshold = np.full(cap, np.nan)
    catmask = np.zeros(cap, np.uint64)
    left = np.full(cap, -1, np.int32)
    right = np.full(cap, -1, np.int32)
    value = np.zeros((cap, width))
    n_node = np.zeros(cap)
    decrease = np.zeros(cap)

    hist_w = np.zeros(U.shape[1])
    hist_s = np.zeros((U.shape[1], width))
    lstat = np.zeros(width)
    keys = np.empty(m, np.int64)

    state = np.empty(1, np.uint64)
    state[0] = seed
    perm = np.arange(n_feat)
    st_node = np.empty(cap, np.int64)
    st_start = np.empty(cap, np.int64)
    st_end = np.empty(cap, np.int64)
    st_depth = np.empty(cap, np.int64)
    st_node[0] = 0
    st_start[0] = 0
    st_end[0] = m
    st_depth[0] = 0
    sp = 1
    n_nodes = 1
    cand = np.empty(mtry, np.int64)

    while sp > 0:
        sp -= 1
        node = st_node[sp]
        start = st_start[sp]
        end = st_end[sp]
        depth = st_depth[sp]
        counts, total_w, total_y, imp, pure = node_stats(y_cls, y_reg, wt, idx, start, end,
                                                         n_classes, regression)
        if regression:
            value[node, 0] = total_y / total_w
        else:
            for c in range(n_classes):
                value[node, c] = counts[c]
        n_node[node] = total_w
        if pure or total_w <= min_node_size or (max_depth >= 0 and depth >= max_depth):
            continue
        # Partial Fisher-Yates draw of mtry distinct features.
        for j in range(mtry):
            r = j + _below(state, n_feat - j)
            t = perm[j]
            perm[j] = perm[r]
            perm[r] = t
        for j in range(mtry):
            cand[j] = perm[j]
        cand.sort()
        f, thr, mask, dec = _search(X, R, U, y_cls, y_reg, wt, idx, start, end, cand, n_levels,
                                    n_classes, regression, counts, total_w, total_y, imp,
                                    hist_w, hist_s, lstat, keys)
        if f < 0:
            continue
        # Partition idx[start:end] so the left branch comes first.
        i = start
        j = end - 1
        cat = n_levels[f] > 0
        while i <= j:
            x = X[idx[i], f]
            if cat:
                go_left = ((mask >> np.uint64(np.int64(x))) & _ONE) == _ONE
            else:
                go_left = x <= thr
            if go_left:
                i += 1
            else:
                t = idx[i]
                idx[i] = idx[j]
                idx[j] = t
                j -= 1
        mid = i
        feature[node] = f
        threshold[node] = thr
        catmask[node] = mask
        decrease[node] = dec
        lnode = n_nodes
        rnode = n_nodes + 1
        n_nodes += 2
        left[node] = lnode
        right[node] = rnode
        st_node[sp] = rnode
        st_start[sp] = mid
        st_end[sp] = end
        st_depth[sp] = depth + 1
        sp += 1
        st_node[sp] = lnode
        st_start[sp] = start
        st_end[sp] = mid
        st_depth[sp] = depth + 1
        sp += 1

    return (feature[:n_nodes].copy(), threshold[:n_nodes].copy(), catmask[:n_nodes].copy(),
            left[:n_nodes].copy(), right[:n_nodes].copy(), value[:n_nodes].copy(),
            n_node[:n_nodes].copy(), decrease[:n_nodes].copy())


@njit(cache=True, nogil=True, error_model="numpy")
def bootstrap_counts(n, seed):
    """Multiplicity of each row in an n-draw bootstrap sample."""
    state = np.empty(1, np.uint64)
    state[0] = seed
    out = np.zeros(n, np.int64)
    for _ in range(n):
        out[_below(state, n)] += 1
    return out


@njit(cache=True, nogil=True, error_model="numpy")
def _descend(feature, threshold, catmask, left, right, n_levels, base, X, i, f_over, v_over):
    node = base
    while feature[node] >= 0:
        f = feature[node]
        x = v_over if f == f_over else X[i, f]
        if n_levels[f] > 0:
            go_left = ((catmask[node] >> np.uint64(np.int64(x))) & _ONE) == _ONE
        else:
            go_left = x <= threshold[node]
        node = base + (left[node] if go_left else right[node])
    return node


@njit(cache=True, nogil=True, error_model="numpy")
def apply_forest(feature, threshold, catmask, left, right, offsets, n_levels, X):
    """Global leaf index reached by every row in every tree, shape (ntree, n)."""
    ntree = offsets.shape[0] - 1
    n = X.shape[0]
    out = np.empty((ntree, n), np.int64)
    for t in range(ntree):
        base = offsets[t]
        for i in range(n):
            out[t, i] = _descend(feature, threshold, catmask, left, right, n_levels, base, X, i,
                                 -1, 0.0)
    return out


@njit(cache=True, nogil=True, error_model="numpy")
def oob_permutation_importance(feature, threshold, catmask, left, right, offsets, node_vote,
                               n_levels, X, y, inbag, seed):
    """Per-tree drop in OOB accuracy when one feature's OOB values are shuffled.

    Returns an (ntree, n_features) matrix.  Features a tree never splits on
    get an exact zero for that tree.
    """
    ntree = offsets.shape[0] - 1
    n, p = X.shape
    imp = np.zeros((ntree, p))
    state = np.empty(1, np.uint64)
    state[0] = seed
    used = np.zeros(p, np.bool_)
    oob = np.empty(n, np.int64)
    perm = np.empty(n, np.int64)
    on_path = np.zeros((n, p), np.bool_)
    hit = np.zeros(n, np.bool_)
    for t in range(ntree):
        base = offsets[t]
        stop = offsets[t + 1]
        no = 0
        for i in range(n):
            if inbag[t, i] == 0:
                oob[no] = i
                no += 1
        if no == 0:
            continue
        used[:] = False
        for node in range(base, stop):
            if feature[node] >= 0:
                used[feature[node]] = True
        correct = 0
        # Rows whose path never tests f keep their leaf when f is shuffled.
        on_path[:no, :] = False
        for k in range(no):
            i = oob[k]
            node = base
            while feature[node] >= 0:
                f = feature[node]
                on_path[k, f] = True
                x = X[i, f]
                if n_levels[f] > 0:
                    go_left = ((catmask[node] >> np.uint64(np.int64(x))) & _ONE) == _ONE
                else:
                    go_left = x <= threshold[node]
                node = base + (left[node] if go_left else right[node])
            hit[k] = node_vote[node] == y[i]
            if hit[k]:
                correct += 1
        for f in range(p):
            if not used[f]:
                continue
            for k in range(no):
                perm[k] = oob[k]
            for k in range(no - 1, 0, -1):
                r = _below(state, k + 1)
                tmp = perm[k]
                perm[k] = perm[r]
                perm[r] = tmp
            pc = correct
            for k in range(no):
                if not on_path[k, f]:
                    continue
                i = oob[k]
                leaf = _descend(feature, threshold, catmask, left, right, n_levels, base, X, i, f,
                                X[perm[k], f])
                pc += (1 if node_vote[leaf] == y[i] else 0) - (1 if hit[k] else 0)
            imp[t, f] = (correct - pc) / no
    return imp
