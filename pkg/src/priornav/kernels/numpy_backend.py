"""Pure-numpy fallback kernels.

Vectorizes normal-equation assembly per factor type and scatters the blocks
with np.add.at.  The DTW recurrence keeps the exact operation order of the
numba kernel (distance matrix first, then the sequential DP) so both backends
return bit-identical accumulated costs.
"""
import numpy as np

from ..geometry import wrap_angle

_OFF2 = np.arange(2)
_OFF3 = np.arange(3)


def _gather_pose(x, off):
    return x[off[:, None] + _OFF3[None, :]]


def _gather_point(x, off):
    return x[off[:, None] + _OFF2[None, :]]


def _prior_pose(x, offa, offb, meas):
    p = _gather_pose(x, offa)
    r = p - meas[:, :3]
    r[:, 2] = wrap_angle(r[:, 2])
    c, s = np.cos(p[:, 2]), np.sin(p[:, 2])
    ja = np.zeros((len(offa), 3, 3))
    ja[:, 0, 0] = c
    ja[:, 0, 1] = -s
    ja[:, 1, 0] = s
    ja[:, 1, 1] = c
    ja[:, 2, 2] = 1.0
    return r, [(offa, 3, ja)]


def _prior_point(x, offa, offb, meas):
    r = _gather_point(x, offa) - meas[:, :2]
    ja = np.broadcast_to(np.eye(2), (len(offa), 2, 2)).copy()
    return r, [(offa, 2, ja)]


def _between(x, offa, offb, meas):
    a = _gather_pose(x, offa)
    b = _gather_pose(x, offb)
    ca, sa = np.cos(a[:, 2]), np.sin(a[:, 2])
    d = b[:, :2] - a[:, :2]
    hx = ca * d[:, 0] + sa * d[:, 1]
    hy = -sa * d[:, 0] + ca * d[:, 1]
    ht = wrap_angle(b[:, 2] - a[:, 2])
    r = np.stack([hx - meas[:, 0], hy - meas[:, 1], wrap_angle(ht - meas[:, 2])], axis=1)
    n = len(offa)
    ja = np.zeros((n, 3, 3))
    ja[:, 0, 0] = -1.0
    ja[:, 0, 2] = hy
    ja[:, 1, 1] = -1.0
    ja[:, 1, 2] = -hx
    ja[:, 2, 2] = -1.0
    ch, sh = np.cos(ht), np.sin(ht)
    jb = np.zeros((n, 3, 3))
    jb[:, 0, 0] = ch
    jb[:, 0, 1] = -sh
    jb[:, 1, 0] = sh
    jb[:, 1, 1] = ch
    jb[:, 2, 2] = 1.0
    return r, [(offa, 3, ja), (offb, 3, jb)]


def _pose_point(x, offa, offb, meas):
    p = _gather_pose(x, offa)
    q = _gather_point(x, offb)
    c, s = np.cos(p[:, 2]), np.sin(p[:, 2])
    d = q - p[:, :2]
    hx = c * d[:, 0] + s * d[:, 1]
    hy = -s * d[:, 0] + c * d[:, 1]
    r = np.stack([hx - meas[:, 0], hy - meas[:, 1]], axis=1)
    n = len(offa)
    ja = np.zeros((n, 2, 3))
    ja[:, 0, 0] = -1.0
    ja[:, 0, 2] = hy
    ja[:, 1, 1] = -1.0
    ja[:, 1, 2] = -hx
    jb = np.zeros((n, 2, 2))
    jb[:, 0, 0] = c
    jb[:, 0, 1] = s
    jb[:, 1, 0] = -s
    jb[:, 1, 1] = c
    return r, [(offa, 3, ja), (offb, 2, jb)]


def _point_eq(x, offa, offb, meas):
    r = _gather_point(x, offa) - _gather_point(x, offb)
    n = len(offa)
    ja = np.broadcast_to(np.eye(2), (n, 2, 2)).copy()
    jb = np.broadcast_to(-np.eye(2), (n, 2, 2)).copy()
    return r, [(offa, 2, ja), (offb, 2, jb)]


_BUILDERS = {0: _prior_pose, 1: _prior_point, 2: _between, 3: _pose_point, 4: _point_eq}


def _scatter_block(H, offs_i, di, offs_j, dj, blocks):
    rows = offs_i[:, None, None] + _OFF3[:di][None, :, None]
    cols = offs_j[:, None, None] + _OFF3[:dj][None, None, :]
    rows = np.broadcast_to(rows, blocks.shape)
    cols = np.broadcast_to(cols, blocks.shape)
    np.add.at(H, (rows.ravel(), cols.ravel()), blocks.ravel())


def normal_equations(x, ftype, offa, offb, meas, sqrt_info, dim):
    """Accumulate H = sum J'J, g = sum J'r, cost = sum r'r (whitened)."""
    H = np.zeros((dim, dim))
    g = np.zeros(dim)
    cost = 0.0
    for code, build in _BUILDERS.items():
        idx = np.nonzero(ftype == code)[0]
        if idx.size == 0:
            continue
        r, jac_blocks = build(x, offa[idx], offb[idx], meas[idx])
        dr = r.shape[1]
        W = sqrt_info[idx][:, :dr, :dr]
        wr = np.einsum("nij,nj->ni", W, r)
        cost += float(np.sum(wr * wr))
        whitened = [(offs, dv, np.einsum("nij,njk->nik", W, J)) for offs, dv, J in jac_blocks]
        for offs, dv, WJ in whitened:
            gi = np.einsum("nij,ni->nj", WJ, wr)
            cols = offs[:, None] + _OFF3[:dv][None, :]
            np.add.at(g, cols.ravel(), gi.ravel())
            for offs2, dv2, WJ2 in whitened:
                Hb = np.einsum("nki,nkj->nij", WJ, WJ2)
                _scatter_block(H, offs, dv, offs2, dv2, Hb)
    return H, g, cost


def total_cost(x, ftype, offa, offb, meas, sqrt_info):
    cost = 0.0
    for code, build in _BUILDERS.items():
        idx = np.nonzero(ftype == code)[0]
        if idx.size == 0:
            continue
        r, _ = build(x, offa[idx], offb[idx], meas[idx])
        dr = r.shape[1]
        W = sqrt_info[idx][:, :dr, :dr]
        wr = np.einsum("nij,nj->ni", W, r)
        cost += float(np.sum(wr * wr))
    return cost


def dtw_accumulate(a, b):
    """Accumulated-cost DTW; bit-identical twin of the numba kernel."""
    a = np.asarray(a, float)
    b = np.asarray(b, float)
    n, m = a.shape[0], b.shape[0]
    dx = a[:, None, 0] - b[None, :, 0]
    dy = a[:, None, 1] - b[None, :, 1]
    dist = np.sqrt(dx * dx + dy * dy)
    acc = np.full((n + 1, m + 1), np.inf)
    acc[0, 0] = 0.0
    for i in range(1, n + 1):
        row = acc[i]
        prev = acc[i - 1]
        di = dist[i - 1]
        for j in range(1, m + 1):
            best = prev[j - 1]
            if prev[j] < best:
                best = prev[j]
            if row[j - 1] < best:
                best = row[j - 1]
            row[j] = di[j - 1] + best
    return float(acc[n, m])
