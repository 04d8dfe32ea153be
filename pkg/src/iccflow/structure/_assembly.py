"""Compiled element loop for the plane-stress finite element model."""
from __future__ import annotations

import numpy as np
from numba import njit

from ..material._kernels import STATUS_FAILED, plane_stress_point


@njit(cache=True)
def assemble(u, edofs, Bm, wdet, ep_c, kappa_c,
             E, nu, sigma_y, A, n, a, tol, maxit, kmap, want_k,
             f_out, k_out, strain_t, ep_t, kappa_t, dk_seed):
    """Internal force, tangent and trial history for displacement ``u``.

    Parameters
    ----------
    u : (n_dof,) trial displacement
    edofs : (n_elem, 8) element dof numbers
    Bm : (n_elem, 4, 3, 8) engineering-strain B matrices per Gauss point
    wdet : (n_elem, 4) weight * detJ * thickness
    ep_c, kappa_c : committed plastic strain (xx, yy, zz, xy) and kappa
    kmap : (n_elem, 64) positions of element stiffness entries in ``k_out``
    dk_seed : (n_elem, 4) last plastic hardening increment per Gauss point,
        used to seed the local iteration and updated in place

    Returns the number of Gauss points whose local update failed.
    """
    n_elem = edofs.shape[0]
    for i in range(f_out.shape[0]):
        f_out[i] = 0.0
    if want_k:
        for i in range(k_out.shape[0]):
            k_out[i] = 0.0
    ue = np.empty(8)
    sig = np.empty(3)
    D = np.empty((3, 3))
    DB = np.empty((3, 8))
    fails = 0
    for e in range(n_elem):
        for k in range(8):
            ue[k] = u[edofs[e, k]]
        for g in range(4):
            exx = 0.0
            eyy = 0.0
            gxy = 0.0
            for k in range(8):
                exx += Bm[e, g, 0, k] * ue[k]
                eyy += Bm[e, g, 1, k] * ue[k]
                gxy += Bm[e, g, 2, k] * ue[k]
            strain_t[e, g, 0] = exx
            strain_t[e, g, 1] = eyy
            strain_t[e, g, 2] = 0.5 * gxy
            st, kn = plane_stress_point(exx, eyy, 0.5 * gxy, ep_c[e, g], kappa_c[e, g],
                                        E, nu, sigma_y, A, n, a, tol, maxit,
                                        sig, D, ep_t[e, g], dk_seed[e, g])
            if st == STATUS_FAILED:
                fails += 1
                continue
            kappa_t[e, g] = kn
            if kn > kappa_c[e, g]:
                dk_seed[e, g] = kn - kappa_c[e, g]
            w = wdet[e, g]
            for k in range(8):
                f_out[edofs[e, k]] += w * (Bm[e, g, 0, k] * sig[0] + Bm[e, g, 1, k] * sig[1]
                                           + Bm[e, g, 2, k] * sig[2])
            if want_k:
                # tangent w.r.t. engineering shear strain halves the shear column
                for r in range(3):
                    for k in range(8):
                        DB[r, k] = (D[r, 0] * Bm[e, g, 0, k] + D[r, 1] * Bm[e, g, 1, k]
                                    + 0.5 * D[r, 2] * Bm[e, g, 2, k])
                for k1 in range(8):
                    for k2 in range(8):
                        val = (Bm[e, g, 0, k1] * DB[0, k2] + Bm[e, g, 1, k1] * DB[1, k2]
                               + Bm[e, g, 2, k1] * DB[2, k2])
                        k_out[kmap[e, k1 * 8 + k2]] += w * val
    return fails
