"""Exact Euclidean projection onto small polyhedral cones {w : B w >= 0}.

Two routes:

* d <= 3: candidate enumeration over the cone's faces. The projection of
  w onto the cone lies on a face whose affine hull is the nullspace of
  the active rows, so it equals one of: w itself, a single-plane
  projection w - (n.w) n, a line projection (e.w) e with e the cross
  direction of two plane normals (d = 3 only), or the apex 0. Evaluating
  every candidate and keeping the feasible one closest to w is exact and
  fast, and vectorizes over candidates.

* d > 3: the dual nonnegative least-squares problem
  min_{lam >= 0} ||B^T lam + w|| solved by Lawson-Hanson active sets,
  with the projection recovered as w + B^T lam.

Both routes are deterministic.
"""

from __future__ import annotations

import numpy as np

FEAS_TOL = 1e-11


class ConeGeometry:
    """Preprocessed cone data: unit constraint rows, deduplicated facet
    normals, and (for d = 3) the candidate edge directions."""

    __slots__ = ("B", "planes", "edges", "d")

    def __init__(self, B: np.ndarray):
        B = np.asarray(B, dtype=np.float64)
        norms = np.linalg.norm(B, axis=1)
        B = B[norms > 0.0] / norms[norms > 0.0, None]
        self.B = np.ascontiguousarray(B)
        self.d = B.shape[1] if B.ndim == 2 else 0

        # one projection plane per distinct row direction (sign canonical)
        seen = {}
        planes = []
        for row in B:
            canon = row if row[np.argmax(np.abs(row) > 0)] > 0 else -row
            key = canon.tobytes()
            if key not in seen:
                seen[key] = True
                planes.append(canon)
        self.planes = np.ascontiguousarray(np.array(planes) if planes
                                           else np.zeros((0, self.d)))

        edges = []
        if self.d == 3 and len(planes) >= 2:
            P = self.planes
            for a in range(len(P)):
                cr = np.cross(P[a], P[a + 1:])
                ln = np.linalg.norm(cr, axis=1)
                for v, l in zip(cr, ln):
                    if l > 1e-12:
                        edges.append(v / l)
        self.edges = np.ascontiguousarray(np.array(edges) if edges
                                          else np.zeros((0, self.d)))


def project_small(geom: ConeGeometry, w: np.ndarray) -> np.ndarray:
    """Candidate-enumeration projection (exact for d <= 3)."""
    B = geom.B
    if B.shape[0] == 0:
        return w.copy()
    tol = FEAS_TOL * max(1.0, float(np.linalg.norm(w)))
    if float((B @ w).min()) >= -tol:
        return w.copy()
    cands = [np.zeros_like(w)]
    if geom.planes.shape[0]:
        cands.append(w[None, :] - (geom.planes @ w)[:, None] * geom.planes)
    if geom.edges.shape[0]:
        cands.append((geom.edges @ w)[:, None] * geom.edges)
    C = np.vstack([c if c.ndim == 2 else c[None, :] for c in cands])
    feas = (B @ C.T).min(axis=0) >= -tol
    C = C[feas]
    dist = np.sum((C - w[None, :]) ** 2, axis=1)
    return C[int(np.argmin(dist))].copy()


def nnls(A: np.ndarray, b: np.ndarray, max_iter: int | None = None) -> np.ndarray:
    """min_{x >= 0} ||A x - b||_2 by Lawson-Hanson active sets."""
    m, k = A.shape
    if max_iter is None:
        max_iter = 3 * k + 30
    x = np.zeros(k)
    passive = np.zeros(k, dtype=bool)
    resid = b.copy()
    w = A.T @ resid
    scale = float(np.abs(A).sum(axis=0).max(initial=0.0)) * max(
        1.0, float(np.abs(b).max(initial=0.0))
    )
    tol = 1e-13 * max(scale, 1.0)

    for _ in range(max_iter):
        w_masked = np.where(passive, -np.inf, w)
        j = int(np.argmax(w_masked))
        if w_masked[j] <= tol:
            break
        passive[j] = True
        while True:
            idx = np.nonzero(passive)[0]
            z = np.zeros(k)
            z[idx], *_ = np.linalg.lstsq(A[:, idx], b, rcond=None)
            if z[idx].min(initial=np.inf) > 0.0:
                x = z
                break
            neg = passive & (z <= 0.0)
            denom = x[neg] - z[neg]
            safe = denom > 0.0
            if not np.any(safe):
                passive = x > 0.0
                break
            alpha = float(np.min(x[neg][safe] / denom[safe]))
            x = x + alpha * (z - x)
            passive = x > tol * 1e-2
            x[~passive] = 0.0
            if not passive.any():
                break
        resid = b - A @ x
        w = A.T @ resid
    return x


def project_lh(B: np.ndarray, w: np.ndarray) -> np.ndarray:
    """Dual-NNLS projection of w onto {u : B u >= 0} (any dimension)."""
    lam = nnls(B.T, -w)
    u = w + B.T @ lam
    # a cone contains 0; never return something farther than the origin
    if u @ u - 2.0 * (u @ w) > 0.0:
        return np.zeros_like(w)
    return u


def project_cone(B: np.ndarray, w: np.ndarray, geom: ConeGeometry | None = None) -> np.ndarray:
    """Projection of w onto {u : B u >= 0}, choosing the route by dimension."""
    w = np.asarray(w, dtype=np.float64)
    if w.shape[0] <= 3:
        return project_small(geom if geom is not None else ConeGeometry(B), w)
    return project_lh(np.asarray(B, dtype=np.float64), w)
