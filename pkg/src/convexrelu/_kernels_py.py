"""Pure-numpy reference kernels for the lifted convex objective.

Array layout shared with the compiled backend: ``W`` stacks one d-vector
per group (G x d); ``M``, ``C1``, ``C2`` are (G x n) coefficient matrices
such that, with ``Z = W @ X.T``,

* prediction      = sum over groups of ``M * Z`` (column sums),
* cone violations = positive parts of ``C1 * Z`` and ``C2 * Z``.

Reductions use numpy's pairwise summation, so results are reproducible
run to run.
"""

from __future__ import annotations

import numpy as np

BACKEND_NAME = "python"


def predict(X, M, W):
    Z = W @ X.T
    return np.einsum("gn,gn->n", M, Z)


def smooth_value(X, y, M, C1, C2, W, rho):
    """Value of the smooth part: (data fit, hinge penalty sum, max violation)."""
    Z = W @ X.T
    resid = np.einsum("gn,gn->n", M, Z) - y
    fit = 0.5 * float(resid @ resid)
    V1 = C1 * Z
    V2 = C2 * Z
    hinge = float(np.sum(V1, where=V1 > 0.0, initial=0.0)
                  + np.sum(V2, where=V2 > 0.0, initial=0.0))
    max_viol = float(max(V1.max(initial=0.0), V2.max(initial=0.0), 0.0))
    return fit, hinge, max_viol


def smooth_grad(X, y, M, C1, C2, W, rho):
    """Gradient of fit + rho * hinge w.r.t. W; zero slope at exact kinks."""
    Z = W @ X.T
    resid = np.einsum("gn,gn->n", M, Z) - y
    coeff = M * resid[None, :]
    if rho != 0.0:
        coeff = coeff + rho * (C1 * (C1 * Z > 0.0) + C2 * (C2 * Z > 0.0))
    return coeff @ X


def project_rows(Ball, boff, planes, edges, V, rows):
    """In-place exact cone projection of the listed V rows (d <= 3).

    Same layout contract as the compiled kernel: group g's signed unit
    constraint rows are Ball[boff[g]:boff[g+1]]; the candidate planes and
    edge directions are shared by every group. Feasible rows pass through.
    """
    for g in rows:
        B = Ball[boff[g]:boff[g + 1]]
        if B.shape[0] == 0:
            continue
        w = V[g]
        tol = 1e-11 * max(1.0, float(np.linalg.norm(w)))
        if float((B @ w).min()) >= -tol:
            continue
        cands = [np.zeros_like(w)]
        if planes.shape[0]:
            cands.append(w[None, :] - (planes @ w)[:, None] * planes)
        if edges.shape[0]:
            cands.append((edges @ w)[:, None] * edges)
        C = np.vstack([c if c.ndim == 2 else c[None, :] for c in cands])
        feas = (B @ C.T).min(axis=0) >= -tol
        C = C[feas]
        dist = np.sum((C - w[None, :]) ** 2, axis=1)
        V[g] = C[int(np.argmin(dist))]
