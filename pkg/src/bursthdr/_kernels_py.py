"""NumPy implementations of the compiled kernels in ``_kernels.pyx``.

Used when the extension is not built or ``BURSTHDR_PURE_PYTHON`` is set.
"""

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view


def block_match(ref, tgt, wref, wtgt, cref, ctgt, ty0, tx0, tys, txs, init_dy, init_dx,
                radius, min_valid, flat_tol):
    """Integer SAD search for every tile.

    Tile ``t`` covers ``ref[ty0:ty0+tys, tx0:tx0+txs]`` and is compared with
    ``tgt`` displaced by ``init + (cy, cx)`` for ``|cy|, |cx| <= radius``.
    Pixel pairs are weighted by ``wref * wtgt``; out-of-frame target pixels
    carry no weight. Samples flagged in ``cref``/``ctgt`` are clipped and
    only bound the true value from below: a clipped target sample costs
    ``max(0, tgt - ref)``, a clipped reference sample ``max(0, ref - tgt)``
    and a pair clipped on both sides costs nothing.

    Returns ``(dy, dx, status, cost)``. ``status`` is 1 for a unique minimum, 3 when several displacements tie for it, 0 for tiles with
    too few valid pixels and 2 for a flat cost surface. Tiles with status 0
    or 2 keep their initial displacement.
    ``cost`` is the best mean weighted SAD (inf for status 0). Costs within
    ``flat_tol * (1 + best)`` of the best count as ties; ties go to the
    smallest offset from the initial displacement, then smaller dy, dx.
    """
    h, w = ref.shape
    n = len(ty0)
    out_dy = np.asarray(init_dy, dtype=np.int64).copy()
    out_dx = np.asarray(init_dx, dtype=np.int64).copy()
    status = np.zeros(n, dtype=np.int8)
    costs = np.full(n, np.inf)
    side = 2 * radius + 1
    cand = np.arange(-radius, radius + 1)
    for t in range(n):
        y0, x0, th, tw = int(ty0[t]), int(tx0[t]), int(tys[t]), int(txs[t])
        iy, ix = int(init_dy[t]), int(init_dx[t])
        # target window covering every candidate position, zero-weight outside the frame
        top, left = y0 + iy - radius, x0 + ix - radius
        wh, ww = th + 2 * radius, tw + 2 * radius
        win = np.zeros((wh, ww))
        wwin = np.zeros((wh, ww))
        cwin = np.zeros((wh, ww), dtype=bool)
        sy0, sy1 = max(top, 0), min(top + wh, h)
        sx0, sx1 = max(left, 0), min(left + ww, w)
        if sy1 > sy0 and sx1 > sx0:
            win[sy0 - top:sy1 - top, sx0 - left:sx1 - left] = tgt[sy0:sy1, sx0:sx1]
            wwin[sy0 - top:sy1 - top, sx0 - left:sx1 - left] = wtgt[sy0:sy1, sx0:sx1]
            cwin[sy0 - top:sy1 - top, sx0 - left:sx1 - left] = ctgt[sy0:sy1, sx0:sx1]
        r = ref[y0:y0 + th, x0:x0 + tw]
        wr = wref[y0:y0 + th, x0:x0 + tw]
        tv = sliding_window_view(win, (th, tw))      # (side, side, th, tw)
        wv = sliding_window_view(wwin, (th, tw)) * wr
        wsum = wv.sum(axis=(2, 3))
        cr = cref[y0:y0 + th, x0:x0 + tw] != 0
        ct = sliding_window_view(cwin, (th, tw))
        d = r - tv
        res = np.where(ct, np.maximum(-d, 0.0), np.where(cr, np.maximum(d, 0.0), np.abs(d)))
        res = np.where(ct & cr, 0.0, res)
        sad = (wv * res).sum(axis=(2, 3))
        ok = (wsum >= min_valid * th * tw) & (wsum > 0)
        if not ok.any():
            continue
        cost = np.where(ok, sad / np.where(ok, wsum, 1.0), np.inf)
        best = cost[ok].min()
        worst = cost[ok].max()
        costs[t] = best
        tol = flat_tol * (1.0 + best)
        if worst - best <= tol:
            status[t] = 2
            continue
        # ties go to the smallest step away from the initial flow (row-major
        # scan, first of equal norms wins: smaller dy, then smaller dx)
        tied = np.argwhere(cost - best <= tol)
        norms = (cand[tied[:, 0]] ** 2 + cand[tied[:, 1]] ** 2)
        cy, cx = cand[tied[int(np.argmin(norms))]]
        out_dy[t], out_dx[t] = iy + cy, ix + cx
        status[t] = 3 if len(tied) > 1 else 1
    return out_dy, out_dx, status, costs


def warp_bilinear(planes, fx, fy, aux):
    """Sample ``planes`` at ``(x + fx, y + fy)`` with zero padding.

    Returns the warped planes, the in-frame share of the bilinear weights,
    and, per ``aux`` channel, the minimum of ``aux`` over in-frame taps with
    positive weight (0 where there are none).
    """
    c, h, w = planes.shape
    yy, xx = np.mgrid[0:h, 0:w]
    sx = xx + fx
    sy = yy + fy
    x0 = np.floor(sx).astype(np.int64)
    y0 = np.floor(sy).astype(np.int64)
    ax = sx - x0
    ay = sy - y0
    taps = (
        ((1.0 - ax) * (1.0 - ay), x0, y0),
        (ax * (1.0 - ay), x0 + 1, y0),
        ((1.0 - ax) * ay, x0, y0 + 1),
        (ax * ay, x0 + 1, y0 + 1),
    )
    out = np.zeros((c, h, w))
    pad = np.zeros((h, w))
    amin = np.full(aux.shape, np.inf)
    for wt, xi, yi in taps:
        inb = (xi >= 0) & (xi < w) & (yi >= 0) & (yi < h)
        xc = np.clip(xi, 0, w - 1)
        yc = np.clip(yi, 0, h - 1)
        wt_in = np.where(inb, wt, 0.0)
        pad += wt_in
        use = inb & (wt > 0)
        amin = np.where(use, np.minimum(amin, aux[:, yc, xc]), amin)
        for k in range(c):
            out[k] += np.where(use, wt * planes[k][yc, xc], 0.0)
    amin[np.isinf(amin)] = 0.0
    return out, pad, amin
