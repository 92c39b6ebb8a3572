"""Hot numeric kernels: projection, DLT, Gauss-Newton, RANSAC, nearest point.

Written once in a numba-compatible NumPy subset and JIT-compiled via
:mod:`widepose.backend` unless ``WIDEPOSE_NUMBA=0``.  Kernels operate on
plain float64 arrays, never raise, and signal failure through status
codes; the wrappers in :mod:`widepose.pnp` and :mod:`widepose.metrics`
translate those into domain exceptions.

All randomness is generated by the callers and passed in as arrays
(e.g. RANSAC sample indices), so results are identical on both backends
up to floating-point round-off and fully seed-deterministic.
"""

from __future__ import annotations

import numpy as np

from .backend import jit_kernel

DEPTH_EPS = 1e-12

REFINE_CONVERGED = 0
REFINE_MAX_ITERS = 1
REFINE_STALLED = 2
REFINE_BAD_START = 3

RANSAC_OK = 0
RANSAC_NO_CONSENSUS = 1


@jit_kernel
def rotvec_to_matrix(w):
    # Rodrigues formula with a series fallback near zero angle.
    out = np.empty((3, 3))
    t2 = w[0] * w[0] + w[1] * w[1] + w[2] * w[2]
    if t2 < 1e-18:
        a = 1.0
        b = 0.5
    else:
        theta = np.sqrt(t2)
        a = np.sin(theta) / theta
        b = (1.0 - np.cos(theta)) / t2
    wx, wy, wz = w[0], w[1], w[2]
    out[0, 0] = 1.0 - b * (wy * wy + wz * wz)
    out[0, 1] = -a * wz + b * wx * wy
    out[0, 2] = a * wy + b * wx * wz
    out[1, 0] = a * wz + b * wx * wy
    out[1, 1] = 1.0 - b * (wx * wx + wz * wz)
    out[1, 2] = -a * wx + b * wy * wz
    out[2, 0] = -a * wy + b * wx * wz
    out[2, 1] = a * wx + b * wy * wz
    out[2, 2] = 1.0 - b * (wx * wx + wy * wy)
    return out


@jit_kernel
def project_points(R, t, pts, fx, fy, cx, cy):
    """Pixel projections and depths; invalid depths yield +inf pixels."""
    n = pts.shape[0]
    uv = np.empty((n, 2))
    z = np.empty(n)
    for i in range(n):
        X = R[0, 0] * pts[i, 0] + R[0, 1] * pts[i, 1] + R[0, 2] * pts[i, 2] + t[0]
        Y = R[1, 0] * pts[i, 0] + R[1, 1] * pts[i, 1] + R[1, 2] * pts[i, 2] + t[1]
        Z = R[2, 0] * pts[i, 0] + R[2, 1] * pts[i, 1] + R[2, 2] * pts[i, 2] + t[2]
        z[i] = Z
        if Z > DEPTH_EPS:
            uv[i, 0] = fx * X / Z + cx
            uv[i, 1] = fy * Y / Z + cy
        else:
            uv[i, 0] = np.inf
            uv[i, 1] = np.inf
    return uv, z


@jit_kernel
def reprojection_errors(R, t, obj, uv_obs, fx, fy, cx, cy):
    """Per-point pixel errors; points at or behind the camera get +inf."""
    n = obj.shape[0]
    err = np.empty(n)
    for i in range(n):
        X = R[0, 0] * obj[i, 0] + R[0, 1] * obj[i, 1] + R[0, 2] * obj[i, 2] + t[0]
        Y = R[1, 0] * obj[i, 0] + R[1, 1] * obj[i, 1] + R[1, 2] * obj[i, 2] + t[1]
        Z = R[2, 0] * obj[i, 0] + R[2, 1] * obj[i, 1] + R[2, 2] * obj[i, 2] + t[2]
        if Z > DEPTH_EPS:
            du = fx * X / Z + cx - uv_obs[i, 0]
            dv = fy * Y / Z + cy - uv_obs[i, 1]
            err[i] = np.sqrt(du * du + dv * dv)
        else:
            err[i] = np.inf
    return err


@jit_kernel
def reprojection_cost(R, t, obj, uv_obs, w, fx, fy, cx, cy):
    """Weighted sum of squared pixel residuals; +inf on invalid depth."""
    n = obj.shape[0]
    total = 0.0
    for i in range(n):
        X = R[0, 0] * obj[i, 0] + R[0, 1] * obj[i, 1] + R[0, 2] * obj[i, 2] + t[0]
        Y = R[1, 0] * obj[i, 0] + R[1, 1] * obj[i, 1] + R[1, 2] * obj[i, 2] + t[1]
        Z = R[2, 0] * obj[i, 0] + R[2, 1] * obj[i, 1] + R[2, 2] * obj[i, 2] + t[2]
        if Z <= DEPTH_EPS:
            return np.inf
        du = fx * X / Z + cx - uv_obs[i, 0]
        dv = fy * Y / Z + cy - uv_obs[i, 1]
        total += w[i] * (du * du + dv * dv)
    return total


@jit_kernel
def dlt_pose(obj, xn):
    """Direct linear transform on >= 6 normalized-coordinate correspondences.

    Returns (R, t, cond) where cond is the design-matrix conditioning
    ratio against its 11th singular value; large values signal that the
    one-dimensional null space is not unique (degenerate configuration).
    """
    n = obj.shape[0]
    A = np.zeros((2 * n, 12))
    for i in range(n):
        X = obj[i, 0]
        Y = obj[i, 1]
        Z = obj[i, 2]
        x = xn[i, 0]
        y = xn[i, 1]
        r = 2 * i
        A[r, 0] = X
        A[r, 1] = Y
        A[r, 2] = Z
        A[r, 3] = 1.0
        A[r, 8] = -x * X
        A[r, 9] = -x * Y
        A[r, 10] = -x * Z
        A[r, 11] = -x
        r += 1
        A[r, 4] = X
        A[r, 5] = Y
        A[r, 6] = Z
        A[r, 7] = 1.0
        A[r, 8] = -y * X
        A[r, 9] = -y * Y
        A[r, 10] = -y * Z
        A[r, 11] = -y
    u, s, vt = np.linalg.svd(A)
    cond = s[0] / max(s[10], 1e-300)
    m = vt[11].copy()
    # choose the sign that puts the majority of the points in front
    zsum = 0.0
    for i in range(n):
        zsum += m[8] * obj[i, 0] + m[9] * obj[i, 1] + m[10] * obj[i, 2] + m[11]
    if zsum < 0.0:
        m = -m
    A3 = np.empty((3, 3))
    for r in range(3):
        for c in range(3):
            A3[r, c] = m[4 * r + c]
    Ua, sa, Vta = np.linalg.svd(A3)
    d = np.linalg.det(np.dot(Ua, Vta))
    D = np.eye(3)
    D[2, 2] = d
    R = np.dot(Ua, np.dot(D, Vta))
    scale = (sa[0] + sa[1] + sa[2]) / 3.0
    t = np.empty(3)
    t[0] = m[3] / scale
    t[1] = m[7] / scale
    t[2] = m[11] / scale
    return R, t, cond


@jit_kernel
def gauss_newton_refine(R0, t0, obj, uv, w, fx, fy, cx, cy, max_iters, tol):
    """Gauss-Newton with Levenberg damping and step halving.

    Minimizes the weighted squared pixel reprojection error over the
    6-dof local parameterization (rotation vector, translation), applied
    multiplicatively so iterates stay on SO(3).  Steps are accepted only
    when the cost strictly decreases and all depths stay positive, so the
    final cost never exceeds the initial one.
    """
    R = R0.copy()
    t = t0.copy()
    n = obj.shape[0]
    cost = reprojection_cost(R, t, obj, uv, w, fx, fy, cx, cy)
    if not np.isfinite(cost):
        return R, t, cost, 0, REFINE_BAD_START

    status = REFINE_MAX_ITERS
    iters = 0
    mu = 0.0
    ju = np.empty(6)
    jv = np.empty(6)
    Rn = R.copy()
    tn = t.copy()

    for _ in range(max_iters):
        H = np.zeros((6, 6))
        g = np.zeros(6)
        for i in range(n):
            X = R[0, 0] * obj[i, 0] + R[0, 1] * obj[i, 1] + R[0, 2] * obj[i, 2] + t[0]
            Y = R[1, 0] * obj[i, 0] + R[1, 1] * obj[i, 1] + R[1, 2] * obj[i, 2] + t[1]
            Z = R[2, 0] * obj[i, 0] + R[2, 1] * obj[i, 1] + R[2, 2] * obj[i, 2] + t[2]
            iz = 1.0 / Z
            ru = fx * X * iz + cx - uv[i, 0]
            rv = fy * Y * iz + cy - uv[i, 1]
            a00 = fx * iz
            a02 = -fx * X * iz * iz
            a11 = fy * iz
            a12 = -fy * Y * iz * iz
            # rows of d(residual)/d(rotvec, translation); camera point
            # perturbed on the left: dP/d(rotvec) = -[P]x
            ju[0] = a02 * Y
            ju[1] = a00 * Z - a02 * X
            ju[2] = -a00 * Y
            ju[3] = a00
            ju[4] = 0.0
            ju[5] = a02
            jv[0] = -a11 * Z + a12 * Y
            jv[1] = -a12 * X
            jv[2] = a11 * X
            jv[3] = 0.0
            jv[4] = a11
            jv[5] = a12
            wi = w[i]
            for p in range(6):
                g[p] += wi * (ju[p] * ru + jv[p] * rv)
                for q in range(p, 6):
                    H[p, q] += wi * (ju[p] * ju[q] + jv[p] * jv[q])
        for p in range(6):
            for q in range(p):
                H[p, q] = H[q, p]

        tr = 0.0
        for p in range(6):
            tr += H[p, p]
        ridge = 1e-12 * (tr / 6.0 + 1.0)

        accepted = False
        converged = False
        new_cost = cost
        applied = 0.0
        mu_try = mu
        for _attempt in range(8):
            Hd = H.copy()
            for p in range(6):
                Hd[p, p] += ridge + mu_try
            delta = np.linalg.solve(Hd, -g)
            dn = np.sqrt(
                delta[0] * delta[0] + delta[1] * delta[1] + delta[2] * delta[2]
                + delta[3] * delta[3] + delta[4] * delta[4] + delta[5] * delta[5]
            )
            if dn < tol and mu_try <= 1e-12:
                converged = True
                break
            step = 1.0
            for _halve in range(10):
                dw = delta[:3] * step
                dR = rotvec_to_matrix(dw)
                Rc = np.dot(dR, R)
                tc = np.dot(dR, t) + delta[3:] * step
                cc = reprojection_cost(Rc, tc, obj, uv, w, fx, fy, cx, cy)
                if cc < cost:
                    accepted = True
                    Rn = Rc
                    tn = tc
                    new_cost = cc
                    applied = dn * step
                    break
                step *= 0.5
            if accepted:
                break
            if mu_try <= 0.0:
                mu_try = max(1e-6 * (tr / 6.0), 1e-12)
            else:
                mu_try *= 10.0
        if converged:
            status = REFINE_CONVERGED
            break
        if not accepted:
            status = REFINE_STALLED
            break
        R = Rn
        t = tn
        cost = new_cost
        mu = mu_try * 0.5
        iters += 1
        if applied < tol:
            status = REFINE_CONVERGED
            break
    return R, t, cost, iters, status


@jit_kernel
def ransac_pnp(obj, uv, xn, w, fx, fy, cx, cy, samples, threshold, confidence,
               min_inliers, hyp_refine_iters, final_refine_iters, tol,
               init_R, init_t, has_init, max_cond):
    """RANSAC loop over pregenerated minimal-sample indices.

    Hypotheses of >= 6 points are solved by DLT and polished with a few
    Gauss-Newton steps; smaller samples are refined from the best pose so
    far (or the supplied initial guess).  Ties on inlier count keep the
    earlier hypothesis.  Returns (R, t, inlier_mask, inlier_count,
    mean_inlier_error, hypotheses_used, status).
    """
    n = obj.shape[0]
    n_hyp = samples.shape[0]
    m = samples.shape[1]
    best_count = 0
    best_R = np.eye(3)
    best_t = np.zeros(3)
    have_best = False
    needed = np.inf
    used = 0
    sw = np.ones(m)

    for h in range(n_hyp):
        used = h + 1
        idx = samples[h]
        sobj = obj[idx]
        suv = uv[idx]
        Rh = np.eye(3)
        th = np.zeros(3)
        ok = True
        if m >= 6:
            sxn = xn[idx]
            Rh, th, cond = dlt_pose(sobj, sxn)
            if not np.isfinite(cond) or cond > max_cond:
                ok = False
        else:
            if have_best:
                Rh = best_R.copy()
                th = best_t.copy()
            elif has_init == 1:
                Rh = init_R.copy()
                th = init_t.copy()
            else:
                ok = False
        if ok:
            Rh, th, _c, _it, _st = gauss_newton_refine(
                Rh, th, sobj, suv, sw, fx, fy, cx, cy, hyp_refine_iters, tol
            )
            errs = reprojection_errors(Rh, th, obj, uv, fx, fy, cx, cy)
            cnt = 0
            for i in range(n):
                if errs[i] <= threshold:
                    cnt += 1
            if cnt > best_count:
                best_count = cnt
                best_R = Rh.copy()
                best_t = th.copy()
                have_best = True
                ratio = cnt / n
                p_good = ratio ** m
                if p_good >= 1.0:
                    needed = 0.0
                elif p_good > 1e-12:
                    needed = np.log(1.0 - confidence) / np.log(1.0 - p_good)
        if have_best and best_count >= min_inliers and used >= needed:
            break

    inl = np.zeros(n, dtype=np.bool_)
    if best_count < min_inliers:
        return best_R, best_t, inl, 0, np.inf, used, RANSAC_NO_CONSENSUS

    errs = reprojection_errors(best_R, best_t, obj, uv, fx, fy, cx, cy)
    sel = np.where(errs <= threshold)[0]
    Rf, tf, _cf, _itf, _stf = gauss_newton_refine(
        best_R, best_t, obj[sel], uv[sel], w[sel], fx, fy, cx, cy, final_refine_iters, tol
    )
    errs2 = reprojection_errors(Rf, tf, obj, uv, fx, fy, cx, cy)
    cnt2 = 0
    for i in range(n):
        if errs2[i] <= threshold:
            cnt2 += 1
    if cnt2 >= min_inliers:
        total = 0.0
        for i in range(n):
            inl[i] = errs2[i] <= threshold
            if inl[i]:
                total += errs2[i]
        return Rf, tf, inl, cnt2, total / cnt2, used, RANSAC_OK
    # refit collapsed the consensus; keep the raw hypothesis pose
    total = 0.0
    for i in range(n):
        inl[i] = errs[i] <= threshold
        if inl[i]:
            total += errs[i]
    return best_R, best_t, inl, best_count, total / best_count, used, RANSAC_OK


@jit_kernel
def mean_nearest_distance(a, b):
    """Mean over rows of `a` of the distance to the nearest row of `b`."""
    n = a.shape[0]
    m = b.shape[0]
    total = 0.0
    for i in range(n):
        best = np.inf
        for j in range(m):
            dx = a[i, 0] - b[j, 0]
            dy = a[i, 1] - b[j, 1]
            dz = a[i, 2] - b[j, 2]
            d = dx * dx + dy * dy + dz * dz
            if d < best:
                best = d
        total += np.sqrt(best)
    return total / n


def warmup() -> None:
    """Run every kernel once on tiny inputs to trigger JIT compilation."""
    rng = np.random.default_rng(0)
    obj = rng.uniform(-0.5, 0.5, size=(8, 3))
    R = np.eye(3)
    t = np.array([0.0, 0.0, 5.0])
    fx = fy = 200.0
    cx = cy = 64.0
    uv, _ = project_points(R, t, obj, fx, fy, cx, cy)
    xn = np.empty_like(uv)
    xn[:, 0] = (uv[:, 0] - cx) / fx
    xn[:, 1] = (uv[:, 1] - cy) / fy
    rotvec_to_matrix(np.array([0.01, 0.02, 0.03]))
    reprojection_errors(R, t, obj, uv, fx, fy, cx, cy)
    w = np.ones(8)
    reprojection_cost(R, t, obj, uv, w, fx, fy, cx, cy)
    dlt_pose(obj, xn)
    gauss_newton_refine(R, t, obj, uv, w, fx, fy, cx, cy, 5, 1e-10)
    samples = np.tile(np.arange(6, dtype=np.int64), (2, 1))
    ransac_pnp(obj, uv, xn, w, fx, fy, cx, cy, samples, 5.0, 0.99,
               4, 5, 10, 1e-10, R, t, 0, 1e12)
    mean_nearest_distance(obj, obj)
