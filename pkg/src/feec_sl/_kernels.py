"""Compiled inner loops: point location, segment walking, line integrals, smoothing.

``geom`` is ``Mesh.kernel_geometry``; ``basis`` is ``DofMap.kernel_basis``:
``(ldof, la, lb, lm, grads)`` where local function ``j`` of element ``t`` is
``lambda_m * (lambda_a grad lambda_b - lambda_b grad lambda_a)`` (no factor
when ``m < 0``) attached to global dof ``ldof[t, j]``.
"""

import math

import numpy as np
from numba import njit

TOL = 1e-12  # barycentric inside tolerance
FAN_TOL = 1e-10
G1 = 0.5 - 0.5 / math.sqrt(3.0)
G2 = 0.5 + 0.5 / math.sqrt(3.0)

OK = 0
OVERFLOW = 1
INVALID_START = 2
OUTSIDE_DOMAIN = 3


@njit(cache=True)
def bary(t, x, y, inv_jac, origin):
    dx = x - origin[t, 0]
    dy = y - origin[t, 1]
    r0 = inv_jac[t, 0, 0] * dx + inv_jac[t, 0, 1] * dy
    r1 = inv_jac[t, 1, 0] * dx + inv_jac[t, 1, 1] * dy
    return (1.0 - r0 - r1, r0, r1)


@njit(cache=True)
def _min3(a):
    return min(a[0], min(a[1], a[2]))


@njit(cache=True)
def locate(x, y, hint, geom, tiebreak):
    inv_jac, origin, nbr, tris, vt_ptr, vt_idx, bseg = geom
    nt = tris.shape[0]
    t = hint if 0 <= hint < nt else 0
    found = -1
    for _ in range(nt + 1):
        lam = bary(t, x, y, inv_jac, origin)
        if _min3(lam) >= -TOL:
            found = t
            break
        k = 0
        if lam[1] < lam[k]:
            k = 1
        if lam[2] < lam[k]:
            k = 2
        nb = nbr[t, k]
        if nb < 0:
            break
        t = nb
    if found < 0:
        for c in range(nt):
            if _min3(bary(c, x, y, inv_jac, origin)) >= -TOL:
                found = c
                break
    if found >= 0 and tiebreak:
        if _min3(bary(found, x, y, inv_jac, origin)) <= TOL:
            best = found
            for j in range(3):
                v = tris[found, j]
                for idx in range(vt_ptr[v], vt_ptr[v + 1]):
                    c = vt_idx[idx]
                    if c < best and _min3(bary(c, x, y, inv_jac, origin)) >= -TOL:
                        best = c
            found = best
    return found


@njit(cache=True)
def locate_many(pts, hints, geom):
    n = pts.shape[0]
    out = np.empty(n, dtype=np.int64)
    prev = 0
    for i in range(n):
        h = hints[i] if hints[i] >= 0 else prev
        out[i] = locate(pts[i, 0], pts[i, 1], h, geom, False)
        if out[i] >= 0:
            prev = out[i]
    return out


@njit(cache=True)
def eval_at(t, lam, coeffs, basis):
    ldof, la, lb, lm, grads = basis
    ux = 0.0
    uy = 0.0
    for j in range(ldof.shape[1]):
        c = coeffs[ldof[t, j]]
        if c == 0.0:
            continue
        a = la[t, j]
        b = lb[t, j]
        m = lm[t, j]
        s = c if m < 0 else c * lam[m]
        ux += s * (lam[a] * grads[t, b, 0] - lam[b] * grads[t, a, 0])
        uy += s * (lam[a] * grads[t, b, 1] - lam[b] * grads[t, a, 1])
    return ux, uy


@njit(cache=True)
def _piece_integral(t, x0, y0, dx, dy, sa, sb, coeffs, basis, inv_jac, origin):
    acc = 0.0
    for g in (G1, G2):
        s = sa + (sb - sa) * g
        lam = bary(t, x0 + s * dx, y0 + s * dy, inv_jac, origin)
        ux, uy = eval_at(t, lam, coeffs, basis)
        acc += 0.5 * (ux * dx + uy * dy)
    return acc * (sb - sa)


@njit(cache=True)
def _exit_param(t, x0, y0, x1, y1, skip, inv_jac, origin):
    """Exit of the segment from element t: ``(tolerant parameter, face, exact crossing)``.

    The tolerant parameter (face reached within TOL) drives the walk; the
    exact crossing is where pieces are cut, so splits do not drift past faces.
    """
    a = bary(t, x0, y0, inv_jac, origin)
    b = bary(t, x1, y1, inv_jac, origin)
    if _min3(b) >= -TOL:
        return 1.0, -1, 1.0
    se = np.inf
    fe = -1
    for k in range(3):
        if k == skip:
            continue
        d = b[k] - a[k]
        if d < 0.0:
            sk = (a[k] + TOL) / (-d)
            if sk < se:
                se = sk
                fe = k
    if se > 1.0:
        se = 1.0
    sx = se
    if fe >= 0:
        sx = min(max(a[fe] / (a[fe] - b[fe]), 0.0), se)
    return se, fe, sx


@njit(cache=True)
def walk(x0, y0, t0, x1, y1, geom, coeffs, basis, integrate, rec_t, rec_s0, rec_s1):
    """Split the segment x0 -> x1 over the elements it crosses, starting in t0.

    Returns ``(status, n_pieces, s_out, integral)``; the segment parameter
    range ``[s_out, 1]`` lies outside the mesh (``s_out = 1`` when never left).
    """
    inv_jac, origin, nbr, tris, vt_ptr, vt_idx, bseg = geom
    nt = tris.shape[0]
    if _min3(bary(t0, x0, y0, inv_jac, origin)) < -TOL:
        return INVALID_START, 0, 0.0, 0.0
    dx = x1 - x0
    dy = y1 - y0
    t = t0
    s = 0.0
    fold = -1
    n = 0
    total = 0.0
    cap = 4 * nt + 8
    s_cut = 0.0  # exact parameter where the last piece ended
    for _ in range(cap):
        se, fe, sx = _exit_param(t, x0, y0, x1, y1, fold, inv_jac, origin)
        if se > s and (fe >= 0 or se >= 1.0):
            sx = max(sx, s_cut)
            if n < rec_t.shape[0]:
                rec_t[n] = t
                rec_s0[n] = s_cut
                rec_s1[n] = sx
            n += 1
            if integrate:
                total += _piece_integral(t, x0, y0, dx, dy, s_cut, sx, coeffs, basis, inv_jac, origin)
            s = se
            s_cut = sx
            if fe < 0 or s >= 1.0:
                return OK, n, 1.0, total
            nb = nbr[t, fe]
            if nb >= 0:
                fold = -1
                for k in range(3):
                    if nbr[nb, k] == t:
                        fold = k
                t = nb
                continue
        # degenerate position (vertex hit, boundary face): search the vertex fans
        px = x0 + s * dx
        py = y0 + s * dy
        best = -1
        best_s = s
        for j in range(3):
            v = tris[t, j]
            for idx in range(vt_ptr[v], vt_ptr[v + 1]):
                c = vt_idx[idx]
                if _min3(bary(c, px, py, inv_jac, origin)) < -FAN_TOL:
                    continue
                sc, fc, _ = _exit_param(c, x0, y0, x1, y1, -1, inv_jac, origin)
                if sc > best_s:
                    best_s = sc
                    best = c
        if best < 0:
            return OK, n, s_cut, total
        t = best
        fold = -1
    return OVERFLOW, n, s_cut, total


@njit(cache=True)
def clamp_to_boundary(x, y, bseg):
    bx = x
    by = y
    bd = np.inf
    for i in range(bseg.shape[0]):
        ax = bseg[i, 0, 0]
        ay = bseg[i, 0, 1]
        ex = bseg[i, 1, 0] - ax
        ey = bseg[i, 1, 1] - ay
        ll = ex * ex + ey * ey
        u = ((x - ax) * ex + (y - ay) * ey) / ll
        if u < 0.0:
            u = 0.0
        elif u > 1.0:
            u = 1.0
        qx = ax + u * ex
        qy = ay + u * ey
        d = (qx - x) ** 2 + (qy - y) ** 2
        if d < bd:
            bd = d
            bx = qx
            by = qy
    return bx, by


@njit(cache=True)
def smooth_at(x, y, t, coeffs, geom, basis, half):
    """Axis-wise averages of the vector proxy over segments of length 2*half centred at (x, y)."""
    dummy_t = np.empty(0, dtype=np.int64)
    dummy_s = np.empty(0)
    out0 = 0.0
    out1 = 0.0
    status = OK
    for dim in range(2):
        ex = 1.0 if dim == 0 else 0.0
        ey = 1.0 - ex
        st1, n1, so1, i_f = walk(x, y, t, x + half * ex, y + half * ey, geom, coeffs, basis, True, dummy_t, dummy_s, dummy_s)
        st2, n2, so2, i_b = walk(x, y, t, x - half * ex, y - half * ey, geom, coeffs, basis, True, dummy_t, dummy_s, dummy_s)
        if st1 != OK:
            status = st1
        if st2 != OK:
            status = st2
        cov = (so1 + so2) * half
        if cov > 1e-14 * half:
            val = (i_f - i_b) / cov
        else:
            inv_jac, origin = geom[0], geom[1]
            lam = bary(t, x, y, inv_jac, origin)
            u = eval_at(t, lam, coeffs, basis)
            val = u[dim]
        if dim == 0:
            out0 = val
        else:
            out1 = val
    return status, out0, out1


@njit(cache=True)
def smooth_many(pts, hints, coeffs, geom, basis, half, clamp):
    """Smoothed velocity at many points; optionally clamp outside points onto the boundary.

    Returns ``(values, elements, status, used_points)``.
    """
    n = pts.shape[0]
    vals = np.empty((n, 2))
    elems = np.empty(n, dtype=np.int64)
    status = np.zeros(n, dtype=np.int64)
    used = pts.copy()
    bseg = geom[6]
    for i in range(n):
        x = pts[i, 0]
        y = pts[i, 1]
        t = locate(x, y, hints[i], geom, False)
        if t < 0 and clamp:
            x, y = clamp_to_boundary(x, y, bseg)
            used[i, 0] = x
            used[i, 1] = y
            t = locate(x, y, hints[i], geom, False)
        elems[i] = t
        if t < 0:
            status[i] = OUTSIDE_DOMAIN
            vals[i, 0] = np.nan
            vals[i, 1] = np.nan
            continue
        st, u0, u1 = smooth_at(x, y, t, coeffs, geom, basis, half)
        status[i] = st
        vals[i, 0] = u0
        vals[i, 1] = u1
    return vals, elems, status, used


@njit(cache=True)
def transported_integrals(starts, ends, hints, coeffs, geom, basis):
    """Line integrals over straight segments starts[j] -> ends[j], with outside bookkeeping.

    Returns ``(inside, outside_len, total_len, outside_seg, status)``; the
    outside portion ``outside_seg[j] = (ax, ay, bx, by)`` is oriented like the segment.
    """
    m = starts.shape[0]
    inside = np.zeros(m)
    out_len = np.zeros(m)
    tot_len = np.zeros(m)
    oseg = np.zeros((m, 4))
    status = np.zeros(m, dtype=np.int64)
    dummy_t = np.empty(0, dtype=np.int64)
    dummy_s = np.empty(0)
    for j in range(m):
        px = starts[j, 0]
        py = starts[j, 1]
        qx = ends[j, 0]
        qy = ends[j, 1]
        L = math.sqrt((qx - px) ** 2 + (qy - py) ** 2)
        tot_len[j] = L
        tp = locate(px, py, hints[j], geom, False)
        if tp >= 0:
            st, n, so, val = walk(px, py, tp, qx, qy, geom, coeffs, basis, True, dummy_t, dummy_s, dummy_s)
            inside[j] = val
            out_len[j] = (1.0 - so) * L
            oseg[j, 0] = px + so * (qx - px)
            oseg[j, 1] = py + so * (qy - py)
            oseg[j, 2] = qx
            oseg[j, 3] = qy
            status[j] = st
            continue
        tq = locate(qx, qy, hints[j], geom, False)
        if tq >= 0:
            st, n, so, val = walk(qx, qy, tq, px, py, geom, coeffs, basis, True, dummy_t, dummy_s, dummy_s)
            inside[j] = -val
            out_len[j] = (1.0 - so) * L
            oseg[j, 0] = px
            oseg[j, 1] = py
            oseg[j, 2] = qx + so * (px - qx)
            oseg[j, 3] = qy + so * (py - qy)
            status[j] = st
            continue
        out_len[j] = L
        oseg[j, 0] = px
        oseg[j, 1] = py
        oseg[j, 2] = qx
        oseg[j, 3] = qy
    return inside, out_len, tot_len, oseg, status


@njit(cache=True)
def eval_many(pts, hints, coeffs, geom, basis):
    n = pts.shape[0]
    vals = np.empty((n, 2))
    elems = np.empty(n, dtype=np.int64)
    inv_jac, origin = geom[0], geom[1]
    prev = 0
    for i in range(n):
        h = hints[i] if hints[i] >= 0 else prev
        t = locate(pts[i, 0], pts[i, 1], h, geom, False)
        elems[i] = t
        if t < 0:
            vals[i, 0] = np.nan
            vals[i, 1] = np.nan
            continue
        prev = t
        lam = bary(t, pts[i, 0], pts[i, 1], inv_jac, origin)
        ux, uy = eval_at(t, lam, coeffs, basis)
        vals[i, 0] = ux
        vals[i, 1] = uy
    return vals, elems


@njit(cache=True)
def clamp_outside(pts, mask, hints, geom):
    """Move masked points that lie outside the mesh onto the nearest boundary point."""
    out = pts.copy()
    bseg = geom[6]
    for i in range(pts.shape[0]):
        if not mask[i]:
            continue
        if locate(pts[i, 0], pts[i, 1], hints[i], geom, False) < 0:
            x, y = clamp_to_boundary(pts[i, 0], pts[i, 1], bseg)
            out[i, 0] = x
            out[i, 1] = y
    return out
