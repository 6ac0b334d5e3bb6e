"""Numba-compiled kernels: normal-equation assembly and the DTW recurrence.

Compiled without fastmath so results stay reproducible across runs and match
the numpy fallback to summation-order accuracy (DTW is bit-identical: same
operations in the same order).
"""
import math

import numpy as np
from numba import njit

# factor type codes shared with the packing layer:
#   0 pose prior, 1 point prior, 2 relative pose, 3 pose-to-point, 4 point equality

TWO_PI = 2.0 * math.pi


@njit(cache=True)
def _wrap(t):
    r = (t + math.pi) % TWO_PI
    if r == 0.0:
        r = TWO_PI
    return r - math.pi


@njit(cache=True)
def _fill(x, ft, oa, ob, meas, r, ja, jb):
    """Raw residual and Jacobian blocks for one factor; returns (dr, da, db)."""
    if ft == 0:
        pt = x[oa + 2]
        r[0] = x[oa] - meas[0]
        r[1] = x[oa + 1] - meas[1]
        r[2] = _wrap(pt - meas[2])
        c = math.cos(pt)
        s = math.sin(pt)
        ja[0, 0] = c
        ja[0, 1] = -s
        ja[0, 2] = 0.0
        ja[1, 0] = s
        ja[1, 1] = c
        ja[1, 2] = 0.0
        ja[2, 0] = 0.0
        ja[2, 1] = 0.0
        ja[2, 2] = 1.0
        return 3, 3, 0
    if ft == 1:
        r[0] = x[oa] - meas[0]
        r[1] = x[oa + 1] - meas[1]
        ja[0, 0] = 1.0
        ja[0, 1] = 0.0
        ja[1, 0] = 0.0
        ja[1, 1] = 1.0
        return 2, 2, 0
    if ft == 2:
        at = x[oa + 2]
        ca = math.cos(at)
        sa = math.sin(at)
        dx = x[ob] - x[oa]
        dy = x[ob + 1] - x[oa + 1]
        hx = ca * dx + sa * dy
        hy = -sa * dx + ca * dy
        ht = _wrap(x[ob + 2] - at)
        r[0] = hx - meas[0]
        r[1] = hy - meas[1]
        r[2] = _wrap(ht - meas[2])
        ja[0, 0] = -1.0
        ja[0, 1] = 0.0
        ja[0, 2] = hy
        ja[1, 0] = 0.0
        ja[1, 1] = -1.0
        ja[1, 2] = -hx
        ja[2, 0] = 0.0
        ja[2, 1] = 0.0
        ja[2, 2] = -1.0
        ch = math.cos(ht)
        sh = math.sin(ht)
        jb[0, 0] = ch
        jb[0, 1] = -sh
        jb[0, 2] = 0.0
        jb[1, 0] = sh
        jb[1, 1] = ch
        jb[1, 2] = 0.0
        jb[2, 0] = 0.0
        jb[2, 1] = 0.0
        jb[2, 2] = 1.0
        return 3, 3, 3
    if ft == 3:
        pt = x[oa + 2]
        c = math.cos(pt)
        s = math.sin(pt)
        dx = x[ob] - x[oa]
        dy = x[ob + 1] - x[oa + 1]
        hx = c * dx + s * dy
        hy = -s * dx + c * dy
        r[0] = hx - meas[0]
        r[1] = hy - meas[1]
        ja[0, 0] = -1.0
        ja[0, 1] = 0.0
        ja[0, 2] = hy
        ja[1, 0] = 0.0
        ja[1, 1] = -1.0
        ja[1, 2] = -hx
        jb[0, 0] = c
        jb[0, 1] = s
        jb[1, 0] = -s
        jb[1, 1] = c
        return 2, 3, 2
    r[0] = x[oa] - x[ob]
    r[1] = x[oa + 1] - x[ob + 1]
    ja[0, 0] = 1.0
    ja[0, 1] = 0.0
    ja[1, 0] = 0.0
    ja[1, 1] = 1.0
    jb[0, 0] = -1.0
    jb[0, 1] = 0.0
    jb[1, 0] = 0.0
    jb[1, 1] = -1.0
    return 2, 2, 2


@njit(cache=True)
def normal_equations(x, ftype, offa, offb, meas, sqrt_info, dim):
    """Accumulate H = sum J'J, g = sum J'r, cost = sum r'r (whitened)."""
    H = np.zeros((dim, dim))
    g = np.zeros(dim)
    cost = 0.0
    r = np.empty(3)
    ja = np.empty((3, 3))
    jb = np.empty((3, 3))
    wr = np.empty(3)
    wja = np.empty((3, 3))
    wjb = np.empty((3, 3))
    for k in range(ftype.shape[0]):
        dr, da, db = _fill(x, ftype[k], offa[k], offb[k], meas[k], r, ja, jb)
        W = sqrt_info[k]
        for i in range(dr):
            acc = 0.0
            for j in range(dr):
                acc += W[i, j] * r[j]
            wr[i] = acc
            cost += acc * acc
        for i in range(dr):
            for j in range(da):
                acc = 0.0
                for l in range(dr):
                    acc += W[i, l] * ja[l, j]
                wja[i, j] = acc
            for j in range(db):
                acc = 0.0
                for l in range(dr):
                    acc += W[i, l] * jb[l, j]
                wjb[i, j] = acc
        oa = offa[k]
        ob = offb[k]
        for i in range(da):
            gi = 0.0
            for l in range(dr):
                gi += wja[l, i] * wr[l]
            g[oa + i] += gi
            for j in range(da):
                acc = 0.0
                for l in range(dr):
                    acc += wja[l, i] * wja[l, j]
                H[oa + i, oa + j] += acc
            for j in range(db):
                acc = 0.0
                for l in range(dr):
                    acc += wja[l, i] * wjb[l, j]
                H[oa + i, ob + j] += acc
        for i in range(db):
            gi = 0.0
            for l in range(dr):
                gi += wjb[l, i] * wr[l]
            g[ob + i] += gi
            for j in range(db):
                acc = 0.0
                for l in range(dr):
                    acc += wjb[l, i] * wjb[l, j]
                H[ob + i, ob + j] += acc
            for j in range(da):
                acc = 0.0
                for l in range(dr):
                    acc += wjb[l, i] * wja[l, j]
                H[ob + i, oa + j] += acc
    return H, g, cost


@njit(cache=True)
def total_cost(x, ftype, offa, offb, meas, sqrt_info):
    cost = 0.0
    r = np.empty(3)
    ja = np.empty((3, 3))
    jb = np.empty((3, 3))
    for k in range(ftype.shape[0]):
        dr, da, db = _fill(x, ftype[k], offa[k], offb[k], meas[k], r, ja, jb)
        W = sqrt_info[k]
        for i in range(dr):
            acc = 0.0
            for j in range(dr):
                acc += W[i, j] * r[j]
            cost += acc * acc
    return cost


@njit(cache=True)
def dtw_accumulate(a, b):
    """Accumulated-cost DTW; recurrence order (diag, up, left), see numpy twin."""
    n = a.shape[0]
    m = b.shape[0]
    acc = np.full((n + 1, m + 1), np.inf)
    acc[0, 0] = 0.0
    for i in range(1, n + 1):
        for j in range(1, m + 1):
            dx = a[i - 1, 0] - b[j - 1, 0]
            dy = a[i - 1, 1] - b[j - 1, 1]
            d = math.sqrt(dx * dx + dy * dy)
            best = acc[i - 1, j - 1]
            if acc[i - 1, j] < best:
                best = acc[i - 1, j]
            if acc[i, j - 1] < best:
                best = acc[i, j - 1]
            acc[i, j] = d + best
    return acc[n, m]
