# cython: boundscheck=False, wraparound=False, cdivision=True, language_level=3
"""Compiled kernels for the lifted convex objective (see _kernels_py for
the layout contract). Loops are fused to avoid per-call numpy overhead,
which dominates at desk-scale problem sizes."""

import numpy as np

BACKEND_NAME = "cython"


def predict(const double[:, ::1] X, const double[:, ::1] M, const double[:, ::1] W):
    cdef Py_ssize_t G = M.shape[0], n = M.shape[1], d = X.shape[1]
    cdef Py_ssize_t g, t, k
    cdef double z, m
    out_arr = np.zeros(n)
    cdef double[::1] out = out_arr
    for g in range(G):
        for t in range(n):
            m = M[g, t]
            if m != 0.0:
                z = 0.0
                for k in range(d):
                    z += X[t, k] * W[g, k]
                out[t] += m * z
    return out_arr


def smooth_value(const double[:, ::1] X, const double[::1] y, const double[:, ::1] M,
                 const double[:, ::1] C1, const double[:, ::1] C2, const double[:, ::1] W,
                 double rho):
    cdef Py_ssize_t G = M.shape[0], n = M.shape[1], d = X.shape[1]
    cdef Py_ssize_t g, t, k
    cdef double z, v, fit = 0.0, hinge = 0.0, max_viol = 0.0, r
    yhat_arr = np.zeros(n)
    cdef double[::1] yhat = yhat_arr
    for g in range(G):
        for t in range(n):
            z = 0.0
            for k in range(d):
                z += X[t, k] * W[g, k]
            if M[g, t] != 0.0:
                yhat[t] += M[g, t] * z
            v = C1[g, t] * z
            if v > 0.0:
                hinge += v
                if v > max_viol:
                    max_viol = v
            if C2[g, t] != 0.0:
                v = C2[g, t] * z
                if v > 0.0:
                    hinge += v
                    if v > max_viol:
                        max_viol = v
    for t in range(n):
        r = yhat[t] - y[t]
        fit += r * r
    return 0.5 * fit, hinge, max_viol


def smooth_grad(const double[:, ::1] X, const double[::1] y, const double[:, ::1] M,
                const double[:, ::1] C1, const double[:, ::1] C2, const double[:, ::1] W,
                double rho):
    cdef Py_ssize_t G = M.shape[0], n = M.shape[1], d = X.shape[1]
    cdef Py_ssize_t g, t, k
    cdef double z, c
    resid_arr = np.zeros(n)
    cdef double[::1] resid = resid_arr
    grad_arr = np.zeros((G, d))
    cdef double[:, ::1] grad = grad_arr
    for g in range(G):
        for t in range(n):
            if M[g, t] != 0.0:
                z = 0.0
                for k in range(d):
                    z += X[t, k] * W[g, k]
                resid[t] += M[g, t] * z
    for t in range(n):
        resid[t] -= y[t]
    for g in range(G):
        for t in range(n):
            c = M[g, t] * resid[t]
            if rho != 0.0:
                z = 0.0
                for k in range(d):
                    z += X[t, k] * W[g, k]
                if C1[g, t] * z > 0.0:
                    c += rho * C1[g, t]
                if C2[g, t] != 0.0 and C2[g, t] * z > 0.0:
                    c += rho * C2[g, t]
            if c != 0.0:
                for k in range(d):
                    grad[g, k] += c * X[t, k]
    return grad_arr


def project_rows(const double[:, ::1] Ball, const long long[::1] boff,
                 const double[:, ::1] planes, const double[:, ::1] edges,
                 double[:, ::1] V, const long long[::1] rows):
    """In-place exact cone projection of the listed V rows (d <= 3).

    Candidates: apex, single-plane projections, edge-line projections;
    the feasible candidate closest to the input wins. Group g's signed
    unit constraint rows are Ball[boff[g]:boff[g+1]]; candidate planes
    and edge directions are shared by all groups. Feasible input rows
    are left untouched.
    """
    cdef Py_ssize_t d = V.shape[1]
    cdef Py_ssize_t nP = planes.shape[0], nE = edges.shape[0]
    cdef Py_ssize_t ri, g, b0, b1, i, k
    cdef double nw2, tol, mn, dp, dist, best_dist, t
    cdef double w[3]
    cdef double c[3]
    cdef double best[3]
    for ri in range(rows.shape[0]):
        g = rows[ri]
        b0 = boff[g]; b1 = boff[g + 1]
        if b1 == b0:
            continue
        nw2 = 0.0
        for k in range(d):
            w[k] = V[g, k]
            nw2 += w[k] * w[k]
        tol = 1e-11
        if nw2 > 1.0:
            tol *= nw2 ** 0.5
        # already feasible?
        mn = 0.0
        for i in range(b0, b1):
            dp = 0.0
            for k in range(d):
                dp += Ball[i, k] * w[k]
            if dp < mn:
                mn = dp
        if mn >= -tol:
            continue
        # apex candidate
        best_dist = nw2
        for k in range(d):
            best[k] = 0.0
        # plane candidates: c = w - (p.w) p
        for i in range(nP):
            dp = 0.0
            for k in range(d):
                dp += planes[i, k] * w[k]
            dist = dp * dp
            if dist >= best_dist:
                continue
            for k in range(d):
                c[k] = w[k] - dp * planes[i, k]
            if _cand_feasible(Ball, b0, b1, c, d, tol):
                best_dist = dist
                for k in range(d):
                    best[k] = c[k]
        # edge candidates: c = (e.w) e
        for i in range(nE):
            t = 0.0
            for k in range(d):
                t += edges[i, k] * w[k]
            dist = nw2 - t * t
            if dist >= best_dist:
                continue
            for k in range(d):
                c[k] = t * edges[i, k]
            if _cand_feasible(Ball, b0, b1, c, d, tol):
                best_dist = dist
                for k in range(d):
                    best[k] = c[k]
        for k in range(d):
            V[g, k] = best[k]


cdef inline bint _cand_feasible(const double[:, ::1] Ball, Py_ssize_t b0,
                                Py_ssize_t b1, double* c, Py_ssize_t d,
                                double tol) noexcept:
    cdef Py_ssize_t i, k
    cdef double dp
    for i in range(b0, b1):
        dp = 0.0
        for k in range(d):
            dp += Ball[i, k] * c[k]
        if dp < -tol:
            return False
    return True
