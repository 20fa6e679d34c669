# cython: language_level=3, boundscheck=False, wraparound=False, cdivision=True, initializedcheck=False
"""Compiled tile block matching and bilinear warping.

Signatures and results match :mod:`bursthdr._kernels_py`.
"""

import numpy as np
cimport numpy as cnp
from libc.math cimport fabs, floor, INFINITY

cnp.import_array()


def block_match(const double[:, ::1] ref, const double[:, ::1] tgt,
                const double[:, ::1] wref, const double[:, ::1] wtgt,
                const signed char[:, ::1] cref, const signed char[:, ::1] ctgt,
                const long[::1] ty0, const long[::1] tx0,
                const long[::1] tys, const long[::1] txs,
                const long[::1] init_dy, const long[::1] init_dx,
                long radius, double min_valid, double flat_tol):
    cdef Py_ssize_t n = ty0.shape[0]
    cdef Py_ssize_t h = ref.shape[0], w = ref.shape[1]
    cdef Py_ssize_t t, y, x, yy, xx, i, nties
    cdef long side = 2 * radius + 1
    cdef long cy, cx, dy, dx, bcy, bcx, norm2, bnorm2
    cdef double sad, wsum, wt, best, worst, d, res, tol
    cdef Py_ssize_t npix
    out_dy = np.empty(n, dtype=np.int64)
    out_dx = np.empty(n, dtype=np.int64)
    status = np.zeros(n, dtype=np.int8)
    costs = np.full(n, INFINITY)
    buf_np = np.empty(side * side, dtype=np.float64)
    cdef double[::1] buf = buf_np
    cdef double[::1] oc = costs
    cdef long[::1] ody = out_dy
    cdef long[::1] odx = out_dx
    cdef signed char[::1] st = status

    for t in range(n):
        npix = tys[t] * txs[t]
        best = INFINITY
        worst = -INFINITY
        for cy in range(-radius, radius + 1):
            dy = init_dy[t] + cy
            for cx in range(-radius, radius + 1):
                dx = init_dx[t] + cx
                sad = 0.0
                wsum = 0.0
                for y in range(ty0[t], ty0[t] + tys[t]):
                    yy = y + dy
                    if yy < 0 or yy >= h:
                        continue
                    for x in range(tx0[t], tx0[t] + txs[t]):
                        xx = x + dx
                        if xx < 0 or xx >= w:
                            continue
                        wt = wref[y, x] * wtgt[yy, xx]
                        if wt > 0.0:
                            d = ref[y, x] - tgt[yy, xx]
                            if cref[y, x] and ctgt[yy, xx]:
                                res = 0.0
                            elif ctgt[yy, xx]:
                                res = -d if d < 0.0 else 0.0
                            elif cref[y, x]:
                                res = d if d > 0.0 else 0.0
                            else:
                                res = fabs(d)
                            sad += wt * res
                            wsum += wt
                i = (cy + radius) * side + cx + radius
                if wsum < min_valid * npix or wsum <= 0.0:
                    buf[i] = INFINITY
                    continue
                buf[i] = sad / wsum
                if buf[i] < best:
                    best = buf[i]
                if buf[i] > worst:
                    worst = buf[i]
        ody[t] = init_dy[t]
        odx[t] = init_dx[t]
        if best == INFINITY:
            st[t] = 0
            continue
        oc[t] = best
        tol = flat_tol * (1.0 + best)
        if worst - best <= tol:
            st[t] = 2
            continue
        # ties go to the smallest step away from the initial flow
        nties = 0
        bcy = 0
        bcx = 0
        bnorm2 = -1
        for cy in range(-radius, radius + 1):
            for cx in range(-radius, radius + 1):
                i = (cy + radius) * side + cx + radius
                if buf[i] - best > tol:
                    continue
                nties += 1
                norm2 = cy * cy + cx * cx
                if bnorm2 < 0 or norm2 < bnorm2:
                    bcy = cy
                    bcx = cx
                    bnorm2 = norm2
        ody[t] = init_dy[t] + bcy
        odx[t] = init_dx[t] + bcx
        st[t] = 3 if nties > 1 else 1
    return out_dy, out_dx, status, costs


def warp_bilinear(const double[:, :, ::1] planes, const double[:, ::1] fx,
                  const double[:, ::1] fy, const double[:, :, ::1] aux):
    cdef Py_ssize_t c = planes.shape[0], h = planes.shape[1], w = planes.shape[2]
    cdef Py_ssize_t na = aux.shape[0]
    cdef Py_ssize_t k, y, x, i
    cdef double sx, sy, ax, ay, wt, pad
    cdef long x0, y0, xi, yi
    cdef double wts[4]
    cdef long txs[4]
    cdef long tys[4]
    out_np = np.zeros((c, h, w), dtype=np.float64)
    pad_np = np.zeros((h, w), dtype=np.float64)
    aux_np = np.full((na, h, w), INFINITY, dtype=np.float64)
    cdef double[:, :, ::1] out = out_np
    cdef double[:, ::1] pm = pad_np
    cdef double[:, :, ::1] am = aux_np

    for y in range(h):
        for x in range(w):
            sx = x + fx[y, x]
            sy = y + fy[y, x]
            x0 = <long>floor(sx)
            y0 = <long>floor(sy)
            ax = sx - x0
            ay = sy - y0
            wts[0] = (1.0 - ax) * (1.0 - ay); txs[0] = x0;     tys[0] = y0
            wts[1] = ax * (1.0 - ay);         txs[1] = x0 + 1; tys[1] = y0
            wts[2] = (1.0 - ax) * ay;         txs[2] = x0;     tys[2] = y0 + 1
            wts[3] = ax * ay;                 txs[3] = x0 + 1; tys[3] = y0 + 1
            pad = 0.0
            for i in range(4):
                xi = txs[i]
                yi = tys[i]
                wt = wts[i]
                if xi < 0 or xi >= w or yi < 0 or yi >= h:
                    continue
                pad += wt
                if wt > 0.0:
                    for k in range(na):
                        if aux[k, yi, xi] < am[k, y, x]:
                            am[k, y, x] = aux[k, yi, xi]
                    for k in range(c):
                        out[k, y, x] += wt * planes[k, yi, xi]
            pm[y, x] = pad
            for k in range(na):
                if am[k, y, x] == INFINITY:
                    am[k, y, x] = 0.0
    return out_np, pad_np, aux_np
