"""Compiled point kernels for the Hosford-Voce model.

Everything here works on principal values. Isotropic elasticity plus an
isotropic yield function keeps the corrected stress coaxial with the trial
stress, so the closest-point projection reduces to the principal stresses and
one hardening increment.
"""
from __future__ import annotations

import math

import numpy as np
from numba import njit

STATUS_ELASTIC = 0
STATUS_PLASTIC = 1
STATUS_FAILED = -1


@njit(cache=True)
def flow_stress(kappa, sigma_y, A, n):
    return sigma_y + A * (1.0 - math.exp(-n * kappa))


@njit(cache=True)
def flow_slope(kappa, A, n):
    return A * n * math.exp(-n * kappa)


@njit(cache=True)
def hosford_value(s1, s2, s3, a):
    d1 = abs(s1 - s2)
    d2 = abs(s2 - s3)
    d3 = abs(s3 - s1)
    scale = max(d1, max(d2, d3))
    if scale == 0.0:
        return 0.0
    F = 0.5 * ((d1 / scale) ** a + (d2 / scale) ** a + (d3 / scale) ** a)
    return scale * F ** (1.0 / a)


@njit(cache=True)
def hosford_derivs(s1, s2, s3, a, grad, hess):
    """Value of the Hosford effective stress; fills gradient and Hessian.

    Differences are scaled by their largest magnitude before raising to the
    power ``a`` so that exponents up to ~100 stay finite.
    """
    d1 = s1 - s2
    d2 = s2 - s3
    d3 = s3 - s1
    scale = max(abs(d1), max(abs(d2), abs(d3)))
    if scale == 0.0:
        for i in range(3):
            grad[i] = 0.0
            for j in range(3):
                hess[i, j] = 0.0
        return 0.0
    x1 = d1 / scale
    x2 = d2 / scale
    x3 = d3 / scale
    ax1 = abs(x1)
    ax2 = abs(x2)
    ax3 = abs(x3)
    F = 0.5 * (ax1 ** a + ax2 ** a + ax3 ** a)
    w1 = math.copysign(ax1 ** (a - 1.0), x1)
    w2 = math.copysign(ax2 ** (a - 1.0), x2)
    w3 = math.copysign(ax3 ** (a - 1.0), x3)
    g0 = w1 - w3
    g1 = w2 - w1
    g2 = w3 - w2
    Fm1 = F ** (1.0 / a - 1.0)
    Fm2 = F ** (1.0 / a - 2.0)
    grad[0] = 0.5 * Fm1 * g0
    grad[1] = 0.5 * Fm1 * g1
    grad[2] = 0.5 * Fm1 * g2
    if a < 2.0:
        # |x|^(a-2) is singular at coincident principal values
        floor = 1e-10
        ax1 = max(ax1, floor)
        ax2 = max(ax2, floor)
        ax3 = max(ax3, floor)
    q1 = ax1 ** (a - 2.0)
    q2 = ax2 ** (a - 2.0)
    q3 = ax3 ** (a - 2.0)
    c1 = (1.0 - a) * 0.25 * Fm2 / scale
    c2 = (a - 1.0) * 0.5 * Fm1 / scale
    hess[0, 0] = c1 * g0 * g0 + c2 * (q1 + q3)
    hess[1, 1] = c1 * g1 * g1 + c2 * (q1 + q2)
    hess[2, 2] = c1 * g2 * g2 + c2 * (q2 + q3)
    hess[0, 1] = c1 * g0 * g1 - c2 * q1
    hess[1, 2] = c1 * g1 * g2 - c2 * q2
    hess[0, 2] = c1 * g0 * g2 - c2 * q3
    hess[1, 0] = hess[0, 1]
    hess[2, 1] = hess[1, 2]
    hess[2, 0] = hess[0, 2]
    return scale * F ** (1.0 / a)


@njit(cache=True)
def _solve_small(Jm, rhs, m):
    """In-place Gaussian elimination with partial pivoting; result in rhs."""
    for k in range(m):
        p = k
        big = abs(Jm[k, k])
        for i in range(k + 1, m):
            if abs(Jm[i, k]) > big:
                big = abs(Jm[i, k])
                p = i
        if big == 0.0:
            return False
        if p != k:
            for j in range(m):
                tmp = Jm[k, j]
                Jm[k, j] = Jm[p, j]
                Jm[p, j] = tmp
            tmp = rhs[k]
            rhs[k] = rhs[p]
            rhs[p] = tmp
        for i in range(k + 1, m):
            f = Jm[i, k] / Jm[k, k]
            if f != 0.0:
                for j in range(k, m):
                    Jm[i, j] -= f * Jm[k, j]
                rhs[i] -= f * rhs[k]
    for k in range(m - 1, -1, -1):
        acc = rhs[k]
        for j in range(k + 1, m):
            acc -= Jm[k, j] * rhs[j]
        rhs[k] = acc / Jm[k, k]
    return True


@njit(cache=True)
def _residual(x, t, dim, Cp, sigma_y, A, n, a, kappa_old, r, Jm, grad, hess, want_jac):
    s1 = x[0]
    s2 = x[1]
    s3 = x[2] if dim == 3 else 0.0
    dk = x[dim]
    phi = hosford_derivs(s1, s2, s3, a, grad, hess)
    kap = kappa_old + dk
    for i in range(dim):
        acc = 0.0
        for j in range(dim):
            acc += Cp[i, j] * grad[j]
        r[i] = x[i] - t[i] + dk * acc
        if want_jac:
            for k in range(dim):
                h = 0.0
                for j in range(dim):
                    h += Cp[i, j] * hess[j, k]
                Jm[i, k] = (1.0 if i == k else 0.0) + dk * h
            Jm[i, dim] = acc
    r[dim] = phi - flow_stress(kap, sigma_y, A, n)
    if want_jac:
        for k in range(dim):
            Jm[dim, k] = grad[k]
        Jm[dim, dim] = -flow_slope(kap, A, n)


@njit(cache=True)
def return_map_principal(t, dim, Cp, sigma_y, A, n, a, kappa_old, tol, maxit,
                         s_out, n_out, dsdt):
    """Closest-point projection in principal space.

    ``t`` holds trial principal stresses (3 entries; the third is ignored and
    taken as zero when ``dim == 2``). ``Cp`` is the elastic operator acting on
    principal strains. On return ``s_out`` holds corrected principal stresses,
    ``n_out`` the flow direction at the corrected stress (all 3 components),
    and ``dsdt`` the derivative of corrected w.r.t. trial principal stresses.

    Returns (status, delta_kappa, iterations).
    """
    grad = np.zeros(3)
    hess = np.zeros((3, 3))
    t3 = t[2] if dim == 3 else 0.0
    phi_tr = hosford_derivs(t[0], t[1], t3, a, grad, hess)
    if phi_tr - flow_stress(kappa_old, sigma_y, A, n) <= 0.0:
        s_out[0] = t[0]
        s_out[1] = t[1]
        s_out[2] = t3
        for i in range(3):
            n_out[i] = grad[i]
        for i in range(dim):
            for j in range(dim):
                dsdt[i, j] = 1.0 if i == j else 0.0
        return STATUS_ELASTIC, 0.0, 0

    m = dim + 1
    x = np.zeros(m)
    xt = np.zeros(m)
    r = np.zeros(m)
    rt = np.zeros(m)
    dx = np.zeros(m)
    Jm = np.zeros((m, m))
    Jd = np.zeros((m, m))
    for i in range(dim):
        x[i] = t[i]
    target = tol * sigma_y
    hits = 0
    it = 0
    ok = False
    while it < maxit:
        _residual(x, t, dim, Cp, sigma_y, A, n, a, kappa_old, r, Jm, grad, hess, True)
        rn = 0.0
        for i in range(m):
            rn += r[i] * r[i]
        if math.sqrt(rn) <= target:
            hits += 1
            # one polishing step after first hit drives the error to roundoff
            if hits >= 2 or math.sqrt(rn) <= 1e-15 * sigma_y:
                ok = True
                break
        for i in range(m):
            dx[i] = -r[i]
        if not _solve_small(Jm, dx, m):
            break
        lam = 1.0
        accepted = False
        for _ in range(40):
            for i in range(m):
                xt[i] = x[i] + lam * dx[i]
            if xt[dim] < 0.0:
                xt[dim] = 0.0
            _residual(xt, t, dim, Cp, sigma_y, A, n, a, kappa_old, rt, Jd, grad, hess, False)
            rtn = 0.0
            for i in range(m):
                rtn += rt[i] * rt[i]
            if rtn <= (1.0 - 1e-4 * lam) * rn or rtn <= (1e-3 * target) ** 2:
                accepted = True
                break
            lam *= 0.5
        for i in range(m):
            x[i] = xt[i]
        it += 1
        if not accepted and math.sqrt(rn) <= target:
            ok = True
            break
    if not ok:
        return STATUS_FAILED, x[dim], it

    _residual(x, t, dim, Cp, sigma_y, A, n, a, kappa_old, r, Jm, grad, hess, True)
    for i in range(dim):
        s_out[i] = x[i]
    s_out[2] = x[2] if dim == 3 else 0.0
    for i in range(3):
        n_out[i] = grad[i]
    col = np.zeros(m)
    for c in range(dim):
        for i in range(m):
            col[i] = 1.0 if i == c else 0.0
            for j in range(m):
                Jd[i, j] = Jm[i, j]
        _solve_small(Jd, col, m)
        for i in range(dim):
            dsdt[i, c] = col[i]
    return STATUS_PLASTIC, x[dim], it


# ---------------------------------------------------------------------------
# 3-D update on Voigt arrays (xx, yy, zz, xy, yz, zx), tensorial shear
# ---------------------------------------------------------------------------

@njit(cache=True)
def _voigt_to_mat(v, M):
    M[0, 0] = v[0]
    M[1, 1] = v[1]
    M[2, 2] = v[2]
    M[0, 1] = v[3]
    M[1, 0] = v[3]
    M[1, 2] = v[4]
    M[2, 1] = v[4]
    M[2, 0] = v[5]
    M[0, 2] = v[5]


@njit(cache=True)
def _spectral_to_voigt(V, vals, out):
    """out = V diag(vals) V^T as a Voigt vector."""
    for (k, i, j) in ((0, 0, 0), (1, 1, 1), (2, 2, 2), (3, 0, 1), (4, 1, 2), (5, 2, 0)):
        acc = 0.0
        for m in range(3):
            acc += V[i, m] * vals[m] * V[j, m]
        out[k] = acc


@njit(cache=True)
def update_3d_batch(strain, eps_p, kappa, E, nu, sigma_y, A, n, a, tol, maxit,
                    stress_out, eps_p_out, kappa_out, status_out, iters_out):
    """Backward-Euler update for a batch of 3-D points (total-strain form)."""
    lam = E * nu / ((1.0 + nu) * (1.0 - 2.0 * nu))
    mu2 = E / (1.0 + nu)
    Cp = np.empty((3, 3))
    for i in range(3):
        for j in range(3):
            Cp[i, j] = lam + (mu2 if i == j else 0.0)
    ee = np.empty(6)
    sig_tr = np.empty(6)
    M = np.empty((3, 3))
    t = np.empty(3)
    s = np.empty(3)
    nv = np.empty(3)
    dsdt = np.empty((3, 3))
    dep = np.empty(6)
    npts = strain.shape[0]
    for p in range(npts):
        for k in range(6):
            ee[k] = strain[p, k] - eps_p[p, k]
        tr = ee[0] + ee[1] + ee[2]
        for k in range(6):
            sig_tr[k] = mu2 * ee[k] + (lam * tr if k < 3 else 0.0)
        _voigt_to_mat(sig_tr, M)
        w, V = np.linalg.eigh(M)
        for i in range(3):
            t[i] = w[i]
        st, dk, its = return_map_principal(t, 3, Cp, sigma_y, A, n, a, kappa[p],
                                           tol, maxit, s, nv, dsdt)
        status_out[p] = st
        iters_out[p] = its
        if st == STATUS_ELASTIC:
            for k in range(6):
                stress_out[p, k] = sig_tr[k]
                eps_p_out[p, k] = eps_p[p, k]
            kappa_out[p] = kappa[p]
            continue
        _spectral_to_voigt(V, s, stress_out[p])
        for i in range(3):
            nv[i] *= dk
        _spectral_to_voigt(V, nv, dep)
        for k in range(6):
            eps_p_out[p, k] = eps_p[p, k] + dep[k]
        kappa_out[p] = kappa[p] + dk


# ---------------------------------------------------------------------------
# Plane-stress update with analytic consistent tangent (finite element kernel)
# ---------------------------------------------------------------------------

@njit(cache=True, inline="always")
def _hosford_ps(s1, s2, a):
    """Hosford value, gradient (3) and in-plane Hessian block for s3 = 0."""
    d1 = s1 - s2
    d2 = s2
    d3 = -s1
    scale = max(abs(d1), max(abs(d2), abs(d3)))
    if scale == 0.0:
        return 0.0, 0.0, 0.0, 0.0, 0.0, 0.0, 0.0
    ax1 = abs(d1) / scale
    ax2 = abs(d2) / scale
    ax3 = abs(d3) / scale
    p1 = ax1 ** (a - 2.0) if ax1 > 0.0 else 0.0
    p2 = ax2 ** (a - 2.0) if ax2 > 0.0 else 0.0
    p3 = ax3 ** (a - 2.0) if ax3 > 0.0 else 0.0
    F = 0.5 * (p1 * ax1 * ax1 + p2 * ax2 * ax2 + p3 * ax3 * ax3)
    w1 = math.copysign(p1 * ax1, d1)
    w2 = math.copysign(p2 * ax2, d2)
    w3 = math.copysign(p3 * ax3, d3)
    g0 = w1 - w3
    g1 = w2 - w1
    g2 = w3 - w2
    Fr = F ** (1.0 / a)
    Fm1 = Fr / F
    c1 = (1.0 - a) * 0.25 * Fm1 / (F * scale)
    c2 = (a - 1.0) * 0.5 * Fm1 / scale
    if a < 2.0:
        floor = 1e-10 ** (a - 2.0)
        p1 = max(p1, floor) if ax1 < 1e-10 else p1
        p2 = max(p2, floor) if ax2 < 1e-10 else p2
        p3 = max(p3, floor) if ax3 < 1e-10 else p3
    h11 = c1 * g0 * g0 + c2 * (p1 + p3)
    h22 = c1 * g1 * g1 + c2 * (p1 + p2)
    h12 = c1 * g0 * g1 - c2 * p1
    half = 0.5 * Fm1
    return scale * Fr, half * g0, half * g1, half * g2, h11, h12, h22


@njit(cache=True)
def plane_stress_return(t1, t2, c0, nu, sigma_y, A, n, a, kappa, tol, maxit, dk0=0.0):
    """Closest-point projection for plane stress in principal axes.

    Unknowns are the in-plane principal stresses and the hardening increment;
    the out-of-plane stress stays zero. Returns (status, s1, s2, dk, n1, n2,
    n3, d11, d12, d21, d22, iterations) where ``d`` is the derivative of the
    corrected w.r.t. the trial principal stresses. A positive ``dk0`` seeds
    the iteration with that hardening increment (used when the caller knows
    the answer at a nearby strain); the seed is dropped if it starts worse
    than the trial state.
    """
    phi, n1, n2, n3, h11, h12, h22 = _hosford_ps(t1, t2, a)
    if phi - flow_stress(kappa, sigma_y, A, n) <= 0.0:
        return STATUS_ELASTIC, t1, t2, 0.0, n1, n2, n3, 1.0, 0.0, 0.0, 1.0, 0
    C11 = c0
    C12 = c0 * nu
    s1 = t1
    s2 = t2
    dk = 0.0
    target = tol * sigma_y
    hits = 0
    it = 0
    ok = False
    # residual at the current iterate
    cn1 = C11 * n1 + C12 * n2
    cn2 = C12 * n1 + C11 * n2
    r1 = 0.0
    r2 = 0.0
    r3 = phi - flow_stress(kappa, sigma_y, A, n)
    rn = abs(r3)
    if dk0 > 0.0:
        ws1 = t1 - dk0 * cn1
        ws2 = t2 - dk0 * cn2
        wphi, wn1, wn2, wn3, wh11, wh12, wh22 = _hosford_ps(ws1, ws2, a)
        wcn1 = C11 * wn1 + C12 * wn2
        wcn2 = C12 * wn1 + C11 * wn2
        q1 = ws1 - t1 + dk0 * wcn1
        q2 = ws2 - t2 + dk0 * wcn2
        q3 = wphi - flow_stress(kappa + dk0, sigma_y, A, n)
        qn = math.sqrt(q1 * q1 + q2 * q2 + q3 * q3)
        if qn < rn:
            s1, s2, dk = ws1, ws2, dk0
            n1, n2, n3, h11, h12, h22 = wn1, wn2, wn3, wh11, wh12, wh22
            cn1, cn2 = wcn1, wcn2
            r1, r2, r3, rn = q1, q2, q3, qn
    while it < maxit:
        if rn <= target:
            hits += 1
            if hits >= 2 or rn <= 1e-15 * sigma_y:
                ok = True
                break
        hk = flow_slope(kappa + dk, A, n)
        # Jacobian [[I + dk C H, C n], [n^T, -h]]
        j11 = 1.0 + dk * (C11 * h11 + C12 * h12)
        j12 = dk * (C11 * h12 + C12 * h22)
        j21 = dk * (C12 * h11 + C11 * h12)
        j22 = 1.0 + dk * (C12 * h12 + C11 * h22)
        j13 = cn1
        j23 = cn2
        j31 = n1
        j32 = n2
        j33 = -hk
        det = (j11 * (j22 * j33 - j23 * j32) - j12 * (j21 * j33 - j23 * j31)
               + j13 * (j21 * j32 - j22 * j31))
        if det == 0.0 or not math.isfinite(det):
            break
        x1 = -(r1 * (j22 * j33 - j23 * j32) - j12 * (r2 * j33 - j23 * r3)
               + j13 * (r2 * j32 - j22 * r3)) / det
        x2 = -(j11 * (r2 * j33 - j23 * r3) - r1 * (j21 * j33 - j23 * j31)
               + j13 * (j21 * r3 - r2 * j31)) / det
        x3 = -(j11 * (j22 * r3 - r2 * j32) - j12 * (j21 * r3 - r2 * j31)
               + r1 * (j21 * j32 - j22 * j31)) / det
        lam = 1.0
        accepted = False
        for _ in range(40):
            ts1 = s1 + lam * x1
            ts2 = s2 + lam * x2
            tdk = dk + lam * x3
            if tdk < 0.0:
                tdk = 0.0
            phi, tn1, tn2, tn3, th11, th12, th22 = _hosford_ps(ts1, ts2, a)
            tcn1 = C11 * tn1 + C12 * tn2
            tcn2 = C12 * tn1 + C11 * tn2
            q1 = ts1 - t1 + tdk * tcn1
            q2 = ts2 - t2 + tdk * tcn2
            q3 = phi - flow_stress(kappa + tdk, sigma_y, A, n)
            qn = math.sqrt(q1 * q1 + q2 * q2 + q3 * q3)
            if qn <= (1.0 - 1e-4 * lam) * rn or qn <= 1e-3 * target:
                accepted = True
                break
            lam *= 0.5
        s1 = ts1
        s2 = ts2
        dk = tdk
        n1, n2, n3, h11, h12, h22 = tn1, tn2, tn3, th11, th12, th22
        cn1 = tcn1
        cn2 = tcn2
        r1, r2, r3 = q1, q2, q3
        prev = rn
        rn = qn
        it += 1
        if not accepted and prev <= target:
            ok = True
            break
    if not ok:
        return STATUS_FAILED, s1, s2, dk, n1, n2, n3, 0.0, 0.0, 0.0, 0.0, it

    # derivative of (s1, s2) w.r.t. (t1, t2): top-left block of J^-1
    hk = flow_slope(kappa + dk, A, n)
    j11 = 1.0 + dk * (C11 * h11 + C12 * h12)
    j12 = dk * (C11 * h12 + C12 * h22)
    j21 = dk * (C12 * h11 + C11 * h12)
    j22 = 1.0 + dk * (C12 * h12 + C11 * h22)
    j13 = cn1
    j23 = cn2
    j31 = n1
    j32 = n2
    j33 = -hk
    det = (j11 * (j22 * j33 - j23 * j32) - j12 * (j21 * j33 - j23 * j31)
           + j13 * (j21 * j32 - j22 * j31))
    d11 = (j22 * j33 - j23 * j32) / det
    d12 = -(j12 * j33 - j13 * j32) / det
    d21 = -(j21 * j33 - j23 * j31) / det
    d22 = (j11 * j33 - j13 * j31) / det
    return STATUS_PLASTIC, s1, s2, dk, n1, n2, n3, d11, d12, d21, d22, it


@njit(cache=True)
def plane_stress_point(exx, eyy, exy, ep, kappa, E, nu, sigma_y, A, n, a, tol, maxit,
                       sig, D, ep_out, dk0=0.0):
    """Plane-stress update for one point.

    Strain is tensorial (exx, eyy, exy); ``ep`` holds plastic strain
    (xx, yy, zz, xy). ``D`` receives d(sig_xx, sig_yy, sig_xy)/d(exx, eyy, exy).
    Returns (status, kappa_new).
    """
    c0 = E / (1.0 - nu * nu)
    mu2 = E / (1.0 + nu)
    ux = exx - ep[0]
    uy = eyy - ep[1]
    uxy = exy - ep[3]
    sxx = c0 * (ux + nu * uy)
    syy = c0 * (nu * ux + uy)
    sxy = mu2 * uxy
    cen = 0.5 * (sxx + syy)
    hd = 0.5 * (sxx - syy)
    rad = math.sqrt(hd * hd + sxy * sxy)
    t1 = cen + rad
    t2 = cen - rad
    st, s1, s2, dk, n1, n2, n3, d11, d12, d21, d22, its = plane_stress_return(
        t1, t2, c0, nu, sigma_y, A, n, a, kappa, tol, maxit, dk0)
    if st == STATUS_ELASTIC:
        sig[0] = sxx
        sig[1] = syy
        sig[2] = sxy
        for i in range(4):
            ep_out[i] = ep[i]
        D[0, 0] = c0
        D[1, 1] = c0
        D[0, 1] = c0 * nu
        D[1, 0] = c0 * nu
        D[0, 2] = 0.0
        D[1, 2] = 0.0
        D[2, 0] = 0.0
        D[2, 1] = 0.0
        D[2, 2] = mu2
        return st, kappa
    if st == STATUS_FAILED:
        return st, kappa

    psi = 0.5 * math.atan2(sxy, hd)
    c = math.cos(psi)
    sn = math.sin(psi)
    cc = c * c
    ss = sn * sn
    cs = c * sn
    sig[0] = s1 * cc + s2 * ss
    sig[1] = s1 * ss + s2 * cc
    sig[2] = (s1 - s2) * cs
    ep_out[0] = ep[0] + dk * (n1 * cc + n2 * ss)
    ep_out[1] = ep[1] + dk * (n1 * ss + n2 * cc)
    ep_out[2] = ep[2] + dk * n3
    ep_out[3] = ep[3] + dk * (n1 - n2) * cs

    # D = R^T diag-block(d, rho) R Ce, with R rotating tensorial Voigt vectors
    # into the trial principal frame; rho carries the spin of the frame.
    dt = t1 - t2
    if abs(dt) > 1e-8 * max(abs(t1), abs(t2), sigma_y):
        rho = (s1 - s2) / dt
    else:
        rho = d11 - d12
    # rows of R: (cc, ss, 2cs), (ss, cc, -2cs), (-cs, cs, cc - ss)
    # M = R Ce (3x3); Ce = [[c0, c0 nu, 0], [c0 nu, c0, 0], [0, 0, mu2]]
    cn = c0 * nu
    m11 = cc * c0 + ss * cn
    m12 = cc * cn + ss * c0
    m13 = 2.0 * cs * mu2
    m21 = ss * c0 + cc * cn
    m22 = ss * cn + cc * c0
    m23 = -2.0 * cs * mu2
    m31 = -cs * c0 + cs * cn
    m32 = -cs * cn + cs * c0
    m33 = (cc - ss) * mu2
    # P = diag-block applied to M
    p11 = d11 * m11 + d12 * m21
    p12 = d11 * m12 + d12 * m22
    p13 = d11 * m13 + d12 * m23
    p21 = d21 * m11 + d22 * m21
    p22 = d21 * m12 + d22 * m22
    p23 = d21 * m13 + d22 * m23
    p31 = rho * m31
    p32 = rho * m32
    p33 = rho * m33
    # inverse rotation rows: (cc, ss, -2cs), (ss, cc, 2cs), (cs, -cs, cc - ss)
    D[0, 0] = cc * p11 + ss * p21 - 2.0 * cs * p31
    D[0, 1] = cc * p12 + ss * p22 - 2.0 * cs * p32
    D[0, 2] = cc * p13 + ss * p23 - 2.0 * cs * p33
    D[1, 0] = ss * p11 + cc * p21 + 2.0 * cs * p31
    D[1, 1] = ss * p12 + cc * p22 + 2.0 * cs * p32
    D[1, 2] = ss * p13 + cc * p23 + 2.0 * cs * p33
    D[2, 0] = cs * p11 - cs * p21 + (cc - ss) * p31
    D[2, 1] = cs * p12 - cs * p22 + (cc - ss) * p32
    D[2, 2] = cs * p13 - cs * p23 + (cc - ss) * p33
    return st, kappa + dk


@njit(cache=True)
def plane_stress_batch(strain3, ep4, kappa, E, nu, sigma_y, A, n, a, tol, maxit,
                       sig_out, D_out, ep_out, kappa_out, status_out):
    npts = strain3.shape[0]
    for p in range(npts):
        st, kn = plane_stress_point(strain3[p, 0], strain3[p, 1], strain3[p, 2], ep4[p],
                                    kappa[p], E, nu, sigma_y, A, n, a, tol, maxit,
                                    sig_out[p], D_out[p], ep_out[p])
        status_out[p] = st
        kappa_out[p] = kn
