"""Hot numeric loops, each with a numba and a pure-numpy implementation.

The numba path is used when numba imports and ``PROTOCOVER_NUMBA`` is not
set to ``0``. Both paths implement the same selection and tie rules, so
they agree exactly on integer outputs and to rounding on float outputs.
"""

import os

import numpy as np

try:
    from numba import njit

    HAS_NUMBA = True
except ImportError:  # pragma: no cover
    HAS_NUMBA = False

USE_NUMBA = HAS_NUMBA and os.environ.get("PROTOCOVER_NUMBA", "1") != "0"

# float64 elements per broadcast block in the numpy distance path
_BLOCK = 1 << 22


def backend():
    return "numba" if USE_NUMBA else "numpy"


# -- pairwise Euclidean distances ---------------------------------------------

def pairwise_distances_np(A, B):
    n, m = A.shape[0], B.shape[0]
    out = np.empty((n, m))
    if n == 0 or m == 0:
        return out
    step = max(1, _BLOCK // max(1, m * A.shape[1]))
    for i in range(0, n, step):
        diff = A[i:i + step, None, :] - B[None, :, :]
        out[i:i + step] = np.sqrt((diff * diff).sum(axis=-1))
    return out


def _pairwise_distances_py(A, B):
    n, d = A.shape
    m = B.shape[0]
    out = np.empty((n, m))
    for i in range(n):
        for j in range(m):
            s = 0.0
            for k in range(d):
                t = A[i, k] - B[j, k]
                s += t * t
            out[i, j] = np.sqrt(s)
    return out


# -- semi-hard negative selection ----------------------------------------------

def select_semihard_np(d_ap, d_cand, valid, margin):
    """Pick one negative column per row.

    Among valid columns with ``d_ap < d < d_ap + margin`` the smallest
    distance wins; if the band is empty the largest valid distance wins.
    Ties go to the lowest column. Rows without any valid column get -1.
    """
    lo = d_ap[:, None]
    band = valid & (d_cand > lo) & (d_cand < lo + margin)
    semi = np.where(band, d_cand, np.inf).argmin(axis=1)
    far = np.where(valid, d_cand, -np.inf).argmax(axis=1)
    out = np.where(band.any(axis=1), semi, far).astype(np.int64)
    out[~valid.any(axis=1)] = -1
    return out


def _select_semihard_py(d_ap, d_cand, valid, margin):
    T, R = d_cand.shape
    out = np.full(T, -1, dtype=np.int64)
    for t in range(T):
        lo = d_ap[t]
        hi = lo + margin
        best = -1
        best_d = np.inf
        far = -1
        far_d = -np.inf
        for r in range(R):
            if not valid[t, r]:
                continue
            x = d_cand[t, r]
            if lo < x < hi and x < best_d:
                best = r
                best_d = x
            if x > far_d:
                far = r
                far_d = x
        out[t] = best if best >= 0 else far
    return out


# -- hinge gradients -------------------------------------------------------------

def triplet_grad_np(A, P, anchors, pos, neg, d_ap, d_an, margin, eps):
    """Gradients of the summed hinges w.r.t. anchor rows ``A`` and target rows ``P``.

    Triplet t compares ``A[anchors[t]]`` against ``P[pos[t]]`` and ``P[neg[t]]``.
    A distance below ``eps`` contributes a zero direction.
    """
    grad_a = np.zeros_like(A)
    grad_p = np.zeros_like(P)
    act = (d_ap + margin - d_an) > 0
    a, p, n = anchors[act], pos[act], neg[act]
    dap, dan = d_ap[act][:, None], d_an[act][:, None]
    with np.errstate(divide="ignore", invalid="ignore"):
        ua = np.where(dap >= eps, (A[a] - P[p]) / dap, 0.0)
        un = np.where(dan >= eps, (A[a] - P[n]) / dan, 0.0)
    np.add.at(grad_a, a, ua - un)
    np.add.at(grad_p, p, -ua)
    np.add.at(grad_p, n, un)
    return grad_a, grad_p, int(act.sum())


def _triplet_grad_py(A, P, anchors, pos, neg, d_ap, d_an, margin, eps):
    grad_a = np.zeros_like(A)
    grad_p = np.zeros_like(P)
    d = A.shape[1]
    active = 0
    for t in range(anchors.shape[0]):
        if d_ap[t] + margin - d_an[t] <= 0:
            continue
        active += 1
        a = anchors[t]
        p = pos[t]
        n = neg[t]
        for k in range(d):
            ua = 0.0 if d_ap[t] < eps else (A[a, k] - P[p, k]) / d_ap[t]
            un = 0.0 if d_an[t] < eps else (A[a, k] - P[n, k]) / d_an[t]
            grad_a[a, k] += ua - un
            grad_p[p, k] -= ua
            grad_p[n, k] += un
    return grad_a, grad_p, active


# -- per-row best column with id tie-break ----------------------------------------

def best_per_row_np(D, keys):
    """Column index of the row minimum; equal distances resolve to the smallest key."""
    if D.shape[1] == 0:
        return np.full(D.shape[0], -1, dtype=np.int64)
    mins = D.min(axis=1, keepdims=True)
    big = np.iinfo(np.int64).max
    k = np.where(D == mins, keys[None, :], big)
    return k.argmin(axis=1).astype(np.int64)


def _best_per_row_py(D, keys):
    n, m = D.shape
    out = np.full(n, -1, dtype=np.int64)
    for i in range(n):
        best = -1
        for j in range(m):
            if best < 0 or D[i, j] < D[i, best] or (D[i, j] == D[i, best] and keys[j] < keys[best]):
                best = j
        out[i] = best
    return out


if HAS_NUMBA:
    pairwise_distances_nb = njit(cache=True)(_pairwise_distances_py)
    select_semihard_nb = njit(cache=True)(_select_semihard_py)
    triplet_grad_nb = njit(cache=True)(_triplet_grad_py)
    best_per_row_nb = njit(cache=True)(_best_per_row_py)
else:  # pragma: no cover
    pairwise_distances_nb = pairwise_distances_np
    select_semihard_nb = select_semihard_np
    triplet_grad_nb = triplet_grad_np
    best_per_row_nb = best_per_row_np


def pairwise_distances(A, B):
    A = np.ascontiguousarray(A, dtype=np.float64)
    B = np.ascontiguousarray(B, dtype=np.float64)
    if USE_NUMBA:
        return pairwise_distances_nb(A, B)
    return pairwise_distances_np(A, B)


def select_semihard(d_ap, d_cand, valid, margin):
    d_ap = np.ascontiguousarray(d_ap, dtype=np.float64)
    d_cand = np.ascontiguousarray(d_cand, dtype=np.float64)
    valid = np.ascontiguousarray(valid, dtype=np.bool_)
    if USE_NUMBA:
        return select_semihard_nb(d_ap, d_cand, valid, float(margin))
    return select_semihard_np(d_ap, d_cand, valid, float(margin))


def triplet_grad(A, P, anchors, pos, neg, d_ap, d_an, margin, eps):
    args = (
        np.ascontiguousarray(A, dtype=np.float64),
        np.ascontiguousarray(P, dtype=np.float64),
        np.ascontiguousarray(anchors, dtype=np.int64),
        np.ascontiguousarray(pos, dtype=np.int64),
        np.ascontiguousarray(neg, dtype=np.int64),
        np.ascontiguousarray(d_ap, dtype=np.float64),
        np.ascontiguousarray(d_an, dtype=np.float64),
        float(margin),
        float(eps),
    )
    if USE_NUMBA:
        return triplet_grad_nb(*args)
    return triplet_grad_np(*args)


def best_per_row(D, keys):
    D = np.ascontiguousarray(D, dtype=np.float64)
    keys = np.ascontiguousarray(keys, dtype=np.int64)
    if USE_NUMBA:
        return best_per_row_nb(D, keys)
    return best_per_row_np(D, keys)
