"""Compiled inner loops: SDF ray marching and the segment least-squares solve."""

from __future__ import annotations

import math

import numpy as np
from numba import njit


@njit(cache=True, nogil=True)
def _ray_weight(r, eps, sigma_w, delta):
    a = abs(r)
    if a < eps:
        return 1.0
    if a <= delta:
        return math.exp(-sigma_w * (a - eps) * (a - eps))
    return 0.0


@njit(cache=True, nogil=True)
def accumulate_rays(sx, sy, ux, uy, rho, ox, oy, q, delta, eps, sigma_w,
                    wsum, wdsum, touched):
    """March every ray through the pixel grid and accumulate SDF sums.

    Ray ``i`` starts at ``(sx[i], sy[i])``, points along unit ``(ux[i], uy[i])``
    and is marched to ``rho[i] + delta``. Every crossed pixel whose centre
    lies no more than ``delta`` behind the hit receives ``w`` into ``wsum``,
    ``w * d`` into ``wdsum`` and one count into ``touched``.
    """
    h, w = wsum.shape
    for i in range(rho.size):
        length = rho[i] + delta
        gx0 = (sx[i] - ox) / q + 0.5
        gy0 = (sy[i] - oy) / q + 0.5
        dx = ux[i] * length / q
        dy = uy[i] * length / q
        ix = int(math.floor(gx0))
        iy = int(math.floor(gy0))
        if dx > 0.0:
            step_x = 1
            t_delta_x = 1.0 / dx
            t_max_x = (ix + 1 - gx0) / dx
        elif dx < 0.0:
            step_x = -1
            t_delta_x = -1.0 / dx
            t_max_x = (gx0 - ix) / -dx
        else:
            step_x = 0
            t_delta_x = np.inf
            t_max_x = np.inf
        if dy > 0.0:
            step_y = 1
            t_delta_y = 1.0 / dy
            t_max_y = (iy + 1 - gy0) / dy
        elif dy < 0.0:
            step_y = -1
            t_delta_y = -1.0 / dy
            t_max_y = (gy0 - iy) / -dy
        else:
            step_y = 0
            t_delta_y = np.inf
            t_max_y = np.inf
        while True:
            if 0 <= ix < w and 0 <= iy < h:
                cx = ox + ix * q
                cy = oy + iy * q
                r = rho[i] - ((cx - sx[i]) * ux[i] + (cy - sy[i]) * uy[i])
                if r >= -delta:
                    d = r
                    if d > delta:
                        d = delta
                    elif d < -delta:
                        d = -delta
                    wt = _ray_weight(r, eps, sigma_w, delta)
                    wsum[iy, ix] += wt
                    wdsum[iy, ix] += wt * d
                    touched[iy, ix] += 1.0
            if t_max_x < t_max_y:
                if t_max_x > 1.0:
                    break
                ix += step_x
                t_max_x += t_delta_x
            else:
                if t_max_y > 1.0:
                    break
                iy += step_y
                t_max_y += t_delta_y


@njit(cache=True, nogil=True)
def trace_pixels(gx0, gy0, gx1, gy1):
    """Pixels crossed by a grid-coordinate segment with their entry/exit parameters."""
    dx = gx1 - gx0
    dy = gy1 - gy0
    ix = int(math.floor(gx0))
    iy = int(math.floor(gy0))
    n_max = abs(int(math.floor(gx1)) - ix) + abs(int(math.floor(gy1)) - iy) + 1
    out_i = np.empty(n_max, np.int64)
    out_j = np.empty(n_max, np.int64)
    t_in = np.empty(n_max)
    t_out = np.empty(n_max)
    if dx > 0.0:
        step_x, t_delta_x, t_max_x = 1, 1.0 / dx, (ix + 1 - gx0) / dx
    elif dx < 0.0:
        step_x, t_delta_x, t_max_x = -1, -1.0 / dx, (gx0 - ix) / -dx
    else:
        step_x, t_delta_x, t_max_x = 0, np.inf, np.inf
    if dy > 0.0:
        step_y, t_delta_y, t_max_y = 1, 1.0 / dy, (iy + 1 - gy0) / dy
    elif dy < 0.0:
        step_y, t_delta_y, t_max_y = -1, -1.0 / dy, (gy0 - iy) / -dy
    else:
        step_y, t_delta_y, t_max_y = 0, np.inf, np.inf
    n = 0
    t_prev = 0.0
    while n < n_max:
        out_i[n] = iy
        out_j[n] = ix
        t_in[n] = t_prev
        t_next = min(t_max_x, t_max_y)
        t_out[n] = min(t_next, 1.0)
        n += 1
        if t_next >= 1.0:
            break
        t_prev = t_next
        if t_max_x < t_max_y:
            ix += step_x
            t_max_x += t_delta_x
        else:
            iy += step_y
            t_max_y += t_delta_y
    return out_i[:n], out_j[:n], t_in[:n], t_out[:n]


@njit(cache=True, nogil=True)
def _side(px, py, ax, ay, bx, by):
    return 1.0 if (bx - ax) * (py - ay) - (by - ay) * (px - ax) >= 0.0 else -1.0


@njit(cache=True, nogil=True)
def _residual(px, py, ax, ay, bx, by, s):
    # Point-to-segment distance carrying the sign ``s`` beyond the ends and
    # the cross-product sign inside, so it is continuous at t=0 and t=1.
    # The caller fixes ``s`` per point, which keeps finite differences of
    # nearly collinear points beyond an end from straddling a sign flip.
    vx = bx - ax
    vy = by - ay
    l2 = vx * vx + vy * vy
    wx = px - ax
    wy = py - ay
    t = (wx * vx + wy * vy) / l2
    if t < 0.0:
        return s * math.sqrt(wx * wx + wy * wy)
    if t > 1.0:
        ex = px - bx
        ey = py - by
        return s * math.sqrt(ex * ex + ey * ey)
    return (vx * wy - vy * wx) / math.sqrt(l2)


@njit(cache=True, nogil=True)
def _shrink_residual(x, cx, cy, n):
    d1 = math.sqrt((cx - x[0]) ** 2 + (cy - x[1]) ** 2)
    d2 = math.sqrt((cx - x[2]) ** 2 + (cy - x[3]) ** 2)
    return math.sqrt((d1 + d2) / n)


@njit(cache=True, nogil=True)
def segment_cost(points, x, cx, cy):
    n = points.shape[0]
    r0 = _shrink_residual(x, cx, cy, n)
    total = r0 * r0
    for i in range(n):
        r = _residual(points[i, 0], points[i, 1], x[0], x[1], x[2], x[3], 1.0)
        total += r * r
    return total


@njit(cache=True, nogil=True)
def _residual_row(px, py, x, jrow):
    # Residual and exact gradient w.r.t. (p1x, p1y, p2x, p2y); returns r.
    vx = x[2] - x[0]
    vy = x[3] - x[1]
    l2 = vx * vx + vy * vy
    wx = px - x[0]
    wy = py - x[1]
    t = (wx * vx + wy * vy) / l2
    s = 1.0 if vx * wy - vy * wx >= 0.0 else -1.0
    jrow[0] = 0.0
    jrow[1] = 0.0
    jrow[2] = 0.0
    jrow[3] = 0.0
    if t < 0.0:
        d = math.sqrt(wx * wx + wy * wy)
        jrow[0] = -s * wx / d
        jrow[1] = -s * wy / d
        return s * d
    if t > 1.0:
        ex = px - x[2]
        ey = py - x[3]
        d = math.sqrt(ex * ex + ey * ey)
        jrow[2] = -s * ex / d
        jrow[3] = -s * ey / d
        return s * d
    ln = math.sqrt(l2)
    nx = -vy / ln
    ny = vx / ln
    # Moving p1 shifts the line at parameter t by (1 - t), moving p2 by t.
    jrow[0] = -(1.0 - t) * nx
    jrow[1] = -(1.0 - t) * ny
    jrow[2] = -t * nx
    jrow[3] = -t * ny
    return nx * wx + ny * wy


@njit(cache=True, nogil=True)
def _shrink_row(x, cx, cy, n, jrow):
    d1 = math.sqrt((cx - x[0]) ** 2 + (cy - x[1]) ** 2)
    d2 = math.sqrt((cx - x[2]) ** 2 + (cy - x[3]) ** 2)
    r0 = math.sqrt((d1 + d2) / n)
    jrow[0] = 0.0
    jrow[1] = 0.0
    jrow[2] = 0.0
    jrow[3] = 0.0
    if r0 > 0.0:
        k = 1.0 / (2.0 * n * r0)
        if d1 > 0.0:
            jrow[0] = k * (x[0] - cx) / d1
            jrow[1] = k * (x[1] - cy) / d1
        if d2 > 0.0:
            jrow[2] = k * (x[2] - cx) / d2
            jrow[3] = k * (x[3] - cy) / d2
    return r0


@njit(cache=True, nogil=True)
def residual_jacobian(points, x, cx, cy):
    """Stacked residuals ``[shrink, r_1 .. r_n]`` and their analytic Jacobian."""
    n = points.shape[0]
    r = np.empty(n + 1)
    jac = np.empty((n + 1, 4))
    r[0] = _shrink_row(x, cx, cy, n, jac[0])
    for i in range(n):
        r[i + 1] = _residual_row(points[i, 0], points[i, 1], x, jac[i + 1])
    return r, jac


@njit(cache=True, nogil=True)
def numeric_jacobian(points, x, cx, cy, h):
    """Central-difference Jacobian of the stacked residuals (reference only).

    The side sign of each residual is frozen at ``x`` so nearly collinear
    points beyond an endpoint do not straddle a sign flip.
    """
    n = points.shape[0]
    jac = np.empty((n + 1, 4))
    xp = x.copy()
    xm = x.copy()
    for k in range(4):
        xp[k] = x[k] + h
        xm[k] = x[k] - h
        jac[0, k] = (_shrink_residual(xp, cx, cy, n) - _shrink_residual(xm, cx, cy, n)) / (2.0 * h)
        for i in range(n):
            px = points[i, 0]
            py = points[i, 1]
            s = _side(px, py, x[0], x[1], x[2], x[3])
            jac[i + 1, k] = (_residual(px, py, xp[0], xp[1], xp[2], xp[3], s)
                             - _residual(px, py, xm[0], xm[1], xm[2], xm[3], s)) / (2.0 * h)
        xp[k] = x[k]
        xm[k] = x[k]
    return jac


@njit(cache=True, nogil=True)
def _add_shrink_terms(x, cx, cy, n, jtj, jtr):
    # Half gradient and half Hessian of (|c - p1| + |c - p2|) / n. The
    # Hessian of a distance is (I - u u^T) / d, which is exact and PSD.
    for e in range(2):
        o = 2 * e
        dx = x[o] - cx
        dy = x[o + 1] - cy
        d = math.sqrt(dx * dx + dy * dy)
        if d == 0.0:
            continue
        ux = dx / d
        uy = dy / d
        k = 1.0 / (2.0 * n)
        jtr[o] += k * ux
        jtr[o + 1] += k * uy
        h = k / d
        jtj[o, o] += h * (1.0 - ux * ux)
        jtj[o, o + 1] -= h * ux * uy
        jtj[o + 1, o] -= h * ux * uy
        jtj[o + 1, o + 1] += h * (1.0 - uy * uy)


@njit(cache=True, nogil=True)
def _add_point_terms(px, py, x, jrow, jtj, jtr):
    # A point beyond an end costs |p - p_end|^2, which is quadratic in that
    # endpoint, so it enters with its exact identity Hessian. Interior
    # points use the Gauss-Newton row of the perpendicular residual.
    vx = x[2] - x[0]
    vy = x[3] - x[1]
    t = ((px - x[0]) * vx + (py - x[1]) * vy) / (vx * vx + vy * vy)
    if t < 0.0 or t > 1.0:
        o = 0 if t < 0.0 else 2
        jtr[o] -= px - x[o]
        jtr[o + 1] -= py - x[o + 1]
        jtj[o, o] += 1.0
        jtj[o + 1, o + 1] += 1.0
        return
    r = _residual_row(px, py, x, jrow)
    for a in range(4):
        jtr[a] += jrow[a] * r
        for b in range(4):
            jtj[a, b] += jrow[a] * jrow[b]


@njit(cache=True, nogil=True)
def _normal_equations(points, x, cx, cy, jtj, jtr):
    """Model Hessian (half) and half gradient of the segment cost at ``x``."""
    n = points.shape[0]
    jtj[:, :] = 0.0
    jtr[:] = 0.0
    jrow = np.empty(4)
    _add_shrink_terms(x, cx, cy, n, jtj, jtr)
    for i in range(n):
        _add_point_terms(points[i, 0], points[i, 1], x, jrow, jtj, jtr)


# Points well inside the segment contribute exactly the perpendicular
# residual, whose sums are quadratic in the point coordinates. Those
# "core" points are folded into moments once, so a solver iteration only
# loops over the points near or beyond the endpoints.
CORE_MARGIN = 0.05
CORE_MARGIN_FRACTION = 0.1
# Moment record layout.
_M, _SS, _SH, _SSS, _SSH, _SHH, _SMIN, _SMAX, _HMAX, _UX, _UY, _SA, _SB, _MARGIN = range(14)


@njit(cache=True, nogil=True)
def _build_core(points, x, cx, cy, mom):
    """Split points into a moment-summarized core and an explicit index list.

    The frame is centred on ``(cx, cy)`` with ``s`` along the current
    segment and ``h`` across it. Core points have ``s`` at least a margin
    inside both endpoint projections.
    """
    n = points.shape[0]
    vx = x[2] - x[0]
    vy = x[3] - x[1]
    ln = math.sqrt(vx * vx + vy * vy)
    ux = vx / ln
    uy = vy / ln
    sa = (x[0] - cx) * ux + (x[1] - cy) * uy
    sb = (x[2] - cx) * ux + (x[3] - cy) * uy
    margin = min(CORE_MARGIN, CORE_MARGIN_FRACTION * ln)
    lo = sa + margin
    hi = sb - margin
    explicit = np.empty(n, np.int64)
    k = 0
    mom[:] = 0.0
    mom[_SMIN] = np.inf
    mom[_SMAX] = -np.inf
    for i in range(n):
        qx = points[i, 0] - cx
        qy = points[i, 1] - cy
        si = qx * ux + qy * uy
        if lo <= si <= hi:
            hi_ = -qx * uy + qy * ux
            mom[_M] += 1.0
            mom[_SS] += si
            mom[_SH] += hi_
            mom[_SSS] += si * si
            mom[_SSH] += si * hi_
            mom[_SHH] += hi_ * hi_
            mom[_SMIN] = min(mom[_SMIN], si)
            mom[_SMAX] = max(mom[_SMAX], si)
            mom[_HMAX] = max(mom[_HMAX], abs(hi_))
        else:
            explicit[k] = i
            k += 1
    mom[_UX] = ux
    mom[_UY] = uy
    mom[_SA] = sa
    mom[_SB] = sb
    mom[_MARGIN] = margin
    return explicit[:k]


@njit(cache=True, nogil=True)
def _core_stale(mom, x, cx, cy):
    # True once either endpoint has slid along the frame axis by more than
    # the margin used at build time, so the core can be re-centred.
    ux = mom[_UX]
    uy = mom[_UY]
    sa = (x[0] - cx) * ux + (x[1] - cy) * uy
    sb = (x[2] - cx) * ux + (x[3] - cy) * uy
    return abs(sa - mom[_SA]) > mom[_MARGIN] or abs(sb - mom[_SB]) > mom[_MARGIN]


@njit(cache=True, nogil=True)
def _core_sums(mom, x, cx, cy, out):
    """Residual sums over the core at ``x``; False if some core point may leave the segment.

    ``out`` receives ``[sum r^2, sum r, sum t, sum t^2, sum t r]`` where
    ``r`` is the signed perpendicular residual and ``t`` the segment
    parameter of each core point.
    """
    m = mom[_M]
    out[:] = 0.0
    if m == 0.0:
        return True
    ux = mom[_UX]
    uy = mom[_UY]
    vx = x[2] - x[0]
    vy = x[3] - x[1]
    l2 = vx * vx + vy * vy
    ln = math.sqrt(l2)
    # Direction and normal of the current segment in the (s, h) frame.
    vs = vx * ux + vy * uy
    vh = -vx * uy + vy * ux
    if vs <= 0.0:
        return False
    ns = -vh / ln
    nh = vs / ln
    # Offset from endpoint a to the frame origin, in frame coordinates.
    ax = cx - x[0]
    ay = cy - x[1]
    ds = ax * ux + ay * uy
    dh = -ax * uy + ay * ux
    base = dh * vh
    spread = mom[_HMAX] * abs(vh)
    if (mom[_SMIN] + ds) * vs + base - spread < 0.0:
        return False
    if (mom[_SMAX] + ds) * vs + base + spread > l2:
        return False
    # Moments of w = p - a in the frame.
    w1s = mom[_SS] + m * ds
    w1h = mom[_SH] + m * dh
    w2ss = mom[_SSS] + 2.0 * ds * mom[_SS] + m * ds * ds
    w2sh = mom[_SSH] + ds * mom[_SH] + dh * mom[_SS] + m * ds * dh
    w2hh = mom[_SHH] + 2.0 * dh * mom[_SH] + m * dh * dh
    out[0] = ns * ns * w2ss + 2.0 * ns * nh * w2sh + nh * nh * w2hh
    out[1] = ns * w1s + nh * w1h
    out[2] = (vs * w1s + vh * w1h) / l2
    out[3] = (vs * vs * w2ss + 2.0 * vs * vh * w2sh + vh * vh * w2hh) / (l2 * l2)
    out[4] = (vs * ns * w2ss + (vs * nh + vh * ns) * w2sh + vh * nh * w2hh) / l2
    return True


@njit(cache=True, nogil=True)
def _fast_cost(points, explicit, mom, x, cx, cy, sums):
    # Returns -1.0 when the core is not valid at x.
    if not _core_sums(mom, x, cx, cy, sums):
        return -1.0
    r0 = _shrink_residual(x, cx, cy, points.shape[0])
    total = r0 * r0 + sums[0]
    for k in range(explicit.size):
        i = explicit[k]
        r = _residual(points[i, 0], points[i, 1], x[0], x[1], x[2], x[3], 1.0)
        total += r * r
    return total


@njit(cache=True, nogil=True)
def _fast_normal_equations(points, explicit, mom, x, cx, cy, jtj, jtr, sums):
    # Same result as _normal_equations with the core folded in; False if
    # the core is not valid at x.
    if not _core_sums(mom, x, cx, cy, sums):
        return False
    n = points.shape[0]
    jtj[:, :] = 0.0
    jtr[:] = 0.0
    jrow = np.empty(4)
    _add_shrink_terms(x, cx, cy, n, jtj, jtr)
    for k in range(explicit.size):
        i = explicit[k]
        _add_point_terms(points[i, 0], points[i, 1], x, jrow, jtj, jtr)
    m = mom[_M]
    if m > 0.0:
        vx = x[2] - x[0]
        vy = x[3] - x[1]
        ln = math.sqrt(vx * vx + vy * vy)
        nv = np.array((-vy / ln, vx / ln))
        st = sums[2]
        stt = sums[3]
        c11 = m - 2.0 * st + stt
        c12 = st - stt
        c22 = stt
        g1 = -(sums[1] - sums[4])
        g2 = -sums[4]
        for a in range(2):
            jtr[a] += g1 * nv[a]
            jtr[2 + a] += g2 * nv[a]
            for b in range(2):
                nn = nv[a] * nv[b]
                jtj[a, b] += c11 * nn
                jtj[a, 2 + b] += c12 * nn
                jtj[2 + b, a] += c12 * nn
                jtj[2 + a, 2 + b] += c22 * nn
    return True


LAM0 = 1e-3


@njit(cache=True, nogil=True)
def lm_fit(points, x0, cx, cy, max_iter, xtol, lam0):
    """Damped Newton-type iteration on the endpoint 4-vector.

    The model Hessian is exact for the shrink term and for points beyond
    an end (both have closed-form curvature) and Gauss-Newton for the
    perpendicular residuals of interior points.

    Damping is applied separately to the along-line block (both endpoints
    sliding along the current direction) and the perpendicular block,
    whose curvatures differ by orders of magnitude. Steps are accepted
    only when the cost decreases. Returns
    ``(x, cost, iterations, status)`` with status 0 = step below ``xtol``,
    1 = no further decrease possible, 2 = iteration cap.
    """
    x = x0.copy()
    mom = np.empty(14)
    sums = np.empty(5)
    explicit = _build_core(points, x, cx, cy, mom)
    f = _fast_cost(points, explicit, mom, x, cx, cy, sums)
    if f < 0.0:
        f = segment_cost(points, x, cx, cy)
    lam_a = lam0
    lam_p = 0.0
    jtj = np.empty((4, 4))
    jtr = np.empty(4)
    a = np.empty((4, 4))
    sa = np.zeros((4, 4))
    sp = np.zeros((4, 4))
    for it in range(max_iter):
        if _core_stale(mom, x, cx, cy) or not _fast_normal_equations(points, explicit, mom, x, cx, cy,
                                                                      jtj, jtr, sums):
            explicit = _build_core(points, x, cx, cy, mom)
            _fast_normal_equations(points, explicit, mom, x, cx, cy, jtj, jtr, sums)
        ref = (jtj[0, 0] + jtj[1, 1] + jtj[2, 2] + jtj[3, 3]) / 4.0 + 1e-12
        vx = x[2] - x[0]
        vy = x[3] - x[1]
        vn = math.sqrt(vx * vx + vy * vy)
        ux = vx / vn
        uy = vy / vn
        for blk in range(2):
            o = 2 * blk
            sa[o, o] = ux * ux * ref
            sa[o, o + 1] = ux * uy * ref
            sa[o + 1, o] = ux * uy * ref
            sa[o + 1, o + 1] = uy * uy * ref
            sp[o, o] = uy * uy * ref
            sp[o, o + 1] = -ux * uy * ref
            sp[o + 1, o] = -ux * uy * ref
            sp[o + 1, o + 1] = ux * ux * ref
        accepted = False
        step_norm = 0.0
        for attempt in range(60):
            for p in range(4):
                for s in range(4):
                    a[p, s] = jtj[p, s] + lam_a * sa[p, s] + (lam_p + 1e-12) * sp[p, s]
            step = np.linalg.solve(a, -jtr)
            xn = x + step
            if (xn[2] - xn[0]) ** 2 + (xn[3] - xn[1]) ** 2 > 1e-24:
                fn = _fast_cost(points, explicit, mom, xn, cx, cy, sums)
                if fn < 0.0:
                    fn = segment_cost(points, xn, cx, cy)
                if fn < f:
                    step_norm = math.sqrt(step[0] ** 2 + step[1] ** 2 + step[2] ** 2 + step[3] ** 2)
                    x = xn
                    f = fn
                    lam_a = max(lam_a / 3.0, 1e-9)
                    lam_p = lam_p / 10.0 if lam_p > 1e-9 else 0.0
                    accepted = True
                    break
            # Raise both blocks: a near-singular perpendicular block (few
            # interior points) must not wait for the along-line damping.
            lam_a = min(lam_a * 8.0, 1e10)
            lam_p = max(lam_p * 8.0, 1e-6)
            if lam_p > 1e12:
                break
        if not accepted:
            return x, f, it + 1, 1
        if step_norm < xtol:
            return x, f, it + 1, 0
    return x, f, max_iter, 2


@njit(cache=True, nogil=True)
def centroid_scatter(points):
    """Mean of the rows and the scatter matrix about it (two passes)."""
    n = points.shape[0]
    cx = 0.0
    cy = 0.0
    for i in range(n):
        cx += points[i, 0]
        cy += points[i, 1]
    cx /= n
    cy /= n
    sxx = 0.0
    sxy = 0.0
    syy = 0.0
    for i in range(n):
        dx = points[i, 0] - cx
        dy = points[i, 1] - cy
        sxx += dx * dx
        sxy += dx * dy
        syy += dy * dy
    return np.array((cx, cy)), np.array(((sxx, sxy), (sxy, syy)))


@njit(cache=True, nogil=True)
def segment_distances(points, ax, ay, bx, by):
    n = points.shape[0]
    out = np.empty(n)
    for i in range(n):
        out[i] = abs(_residual(points[i, 0], points[i, 1], ax, ay, bx, by, 1.0))
    return out
