"""The lifted convex program equivalent to parallel three-layer ReLU training.

Groups index one d-dimensional coefficient vector each, over (first-layer
arrangement i, neuron slot j, second-layer arrangement l, activation sign
+/-, primed/unprimed side). With masks d1 = first_layer[i][j] and
d2 = second_layer[l], the group's design block applied to a vector v is
the elementwise-masked product d2 * d1 * (X v); n x n diagonal matrices
are never materialized. The training objective is

    0.5 * || sum_g side_g * block_g(w_g) - y ||^2  +  beta * sum_g ||w_g||_2

subject to, per group (sigma = +1 for "plus", -1 for "minus"):

    sigma * (2 d1 - 1) * (X w_g) >= 0        (first-layer cone)
    (2 d2 - 1) * d1 * (X w_g)    >= 0        (second-layer cone)

The penalized form replaces the cones by rho times the sum of hinge
(positive-part) violations, and coincides with the constrained value at
every feasible point.
"""

from __future__ import annotations

import hashlib
import json
from dataclasses import dataclass

import numpy as np

from . import backend
from .arrangements import ArrangementPlan
from .dataio import Dataset

__all__ = [
    "GroupId",
    "ConvexModel",
    "ConvexPoint",
    "FeasibilityReport",
    "build_model",
    "predict",
    "objective_constrained",
    "objective_penalized",
    "grad_smooth",
    "group_norms",
    "project_onto_cones",
]

SIDES = ("unprimed", "primed")
SIGNS = ("plus", "minus")


@dataclass(frozen=True)
class GroupId:
    """Index of one coefficient group in the lifted model."""

    i: int
    j: int
    l: int
    sign: str  # "plus" | "minus"
    side: str  # "unprimed" | "primed"

    def key(self) -> str:
        return f"{self.side}:{self.sign}:{self.l}:{self.i}:{self.j}"

    @classmethod
    def from_key(cls, key: str) -> "GroupId":
        side, sign, l, i, j = key.split(":")
        return cls(i=int(i), j=int(j), l=int(l), sign=sign, side=side)


@dataclass
class FeasibilityReport:
    """Cone-violation summary: max over all constraint rows, raw and
    relative to the corresponding row norm of X."""

    max_abs: float
    max_rel: float
    first_layer_max: float
    second_layer_max: float

    def feasible(self, tol: float) -> bool:
        return self.max_abs <= tol


class ConvexModel:
    """Immutable bundle of dataset, plan, regularization weight, and the
    precomputed group-coefficient matrices used by the kernels."""

    def __init__(self, ds: Dataset, plan: ArrangementPlan, beta: float):
        if plan.n != ds.n:
            raise ValueError(f"plan is for n={plan.n} but dataset has n={ds.n}")
        if not (np.isfinite(beta) and beta > 0):
            raise ValueError("beta must be a positive finite number")
        self.ds = ds
        self.plan = plan
        self.beta = float(beta)
        self.n, self.d = ds.n, ds.d
        self.m1, self.P1, self.P2 = plan.m1, plan.P1, plan.P2

        # fixed group order: lexicographic in (side, sign, l, i, j)
        self.groups = [
            GroupId(i=i, j=j, l=l, sign=sign, side=side)
            for side in SIDES
            for sign in SIGNS
            for l in range(self.P2)
            for i in range(self.P1)
            for j in range(self.m1)
        ]
        self.G = len(self.groups)
        self._row_of = {g: r for r, g in enumerate(self.groups)}

        d1 = np.empty((self.G, self.n))
        d2 = np.empty((self.G, self.n))
        side_sign = np.empty(self.G)
        act_sign = np.empty(self.G)
        for r, g in enumerate(self.groups):
            d1[r] = plan.first_layer[g.i][g.j].bits
            d2[r] = plan.second_layer[g.l].bits
            side_sign[r] = 1.0 if g.side == "primed" else -1.0
            act_sign[r] = 1.0 if g.sign == "plus" else -1.0
        self._d1 = d1
        self._M = np.ascontiguousarray(side_sign[:, None] * d1 * d2)
        self._C1 = np.ascontiguousarray(-act_sign[:, None] * (2.0 * d1 - 1.0))
        self._C2 = np.ascontiguousarray(-(2.0 * d2 - 1.0) * d1)
        # one prediction block per distinct (i, j, l) triple, for dual norms
        self._Mabs = np.ascontiguousarray(
            d1[: self.G // 4] * d2[: self.G // 4]
        )
        self._x_row_norms = np.linalg.norm(ds.X, axis=1)
        self.plan_sha256 = hashlib.sha256(plan.to_json().encode()).hexdigest()

    def row(self, g: GroupId) -> int:
        return self._row_of[g]

    def block_apply(self, g: GroupId, v: np.ndarray) -> np.ndarray:
        """The group's design block times v: d2 * d1 * (X v)."""
        return np.abs(self._M[self._row_of[g]]) * (self.ds.X @ v)

    def cone_rows(self, g: GroupId):
        """Constraint rows (B, with feasibility B w >= 0) for one group.

        Zero rows (masked-out second-layer constraints) are dropped.
        """
        r = self._row_of[g]
        B1 = -self._C1[r][:, None] * self.ds.X
        B2 = -self._C2[r][:, None] * self.ds.X
        B2 = B2[np.abs(self._C2[r]) > 0.0]
        return np.vstack([B1, B2])

    def describe(self) -> dict:
        return {
            "n": self.n,
            "d": self.d,
            "m1": self.m1,
            "P1": self.P1,
            "P2": self.P2,
            "groups": self.G,
            "beta": self.beta,
            "dataset": self.ds.name,
            "plan_sha256": self.plan_sha256,
        }


class ConvexPoint:
    """One coefficient vector per group, stored as a (G, d) array whose
    rows follow the owning model's group order."""

    def __init__(self, model: ConvexModel, W: np.ndarray):
        W = np.ascontiguousarray(np.asarray(W, dtype=np.float64))
        if W.shape != (model.G, model.d):
            raise ValueError(f"expected coefficient array {(model.G, model.d)}, got {W.shape}")
        if not np.all(np.isfinite(W)):
            raise ValueError("coefficients contain non-finite entries")
        self.model = model
        self.W = W

    @classmethod
    def zeros(cls, model: ConvexModel) -> "ConvexPoint":
        return cls(model, np.zeros((model.G, model.d)))

    @classmethod
    def from_coeffs(cls, model: ConvexModel, coeffs: dict) -> "ConvexPoint":
        W = np.zeros((model.G, model.d))
        for g, v in coeffs.items():
            W[model.row(g)] = v
        return cls(model, W)

    def coeff(self, g: GroupId) -> np.ndarray:
        return self.W[self.model.row(g)]

    def as_dict(self) -> dict:
        return {g: self.W[r].copy() for r, g in enumerate(self.model.groups)}

    def copy(self) -> "ConvexPoint":
        return ConvexPoint(self.model, self.W.copy())

    def __add__(self, other: "ConvexPoint") -> "ConvexPoint":
        self._check_same(other)
        return ConvexPoint(self.model, self.W + other.W)

    def __sub__(self, other: "ConvexPoint") -> "ConvexPoint":
        self._check_same(other)
        return ConvexPoint(self.model, self.W - other.W)

    def __rmul__(self, a: float) -> "ConvexPoint":
        return ConvexPoint(self.model, float(a) * self.W)

    def _check_same(self, other):
        if other.model is not self.model:
            raise ValueError("points belong to different models")

    def to_json(self) -> str:
        doc = {
            "plan_sha256": self.model.plan_sha256,
            "beta": self.model.beta,
            "groups": {g.key(): self.W[r].tolist() for r, g in enumerate(self.model.groups)},
        }
        return json.dumps(doc, indent=1, sort_keys=True)

    @classmethod
    def from_json(cls, model: ConvexModel, text: str) -> "ConvexPoint":
        doc = json.loads(text)
        if doc.get("plan_sha256") not in (None, model.plan_sha256):
            raise ValueError("solution was produced for a different plan")
        W = np.zeros((model.G, model.d))
        for key, vals in doc["groups"].items():
            W[model.row(GroupId.from_key(key))] = vals
        return cls(model, W)


def build_model(ds: Dataset, plan: ArrangementPlan, beta: float) -> ConvexModel:
    return ConvexModel(ds, plan, beta)


def _owned(model: ConvexModel, p: ConvexPoint) -> np.ndarray:
    if p.model is not model:
        raise ValueError("point does not belong to this model")
    return p.W


def predict(model: ConvexModel, p: ConvexPoint) -> np.ndarray:
    """Model output: sum over groups of side * d2 * d1 * (X w_g). Linear in p."""
    return backend.predict(model.ds.X, model._M, _owned(model, p))


def group_norms(model: ConvexModel, p: ConvexPoint) -> np.ndarray:
    return np.linalg.norm(_owned(model, p), axis=1)


def _feasibility(model: ConvexModel, W: np.ndarray) -> FeasibilityReport:
    Z = W @ model.ds.X.T
    V1 = np.maximum(model._C1 * Z, 0.0)
    V2 = np.maximum(model._C2 * Z, 0.0)
    rn = np.maximum(model._x_row_norms, np.finfo(float).tiny)
    return FeasibilityReport(
        max_abs=float(max(V1.max(initial=0.0), V2.max(initial=0.0))),
        max_rel=float(max((V1 / rn).max(initial=0.0), (V2 / rn).max(initial=0.0))),
        first_layer_max=float(V1.max(initial=0.0)),
        second_layer_max=float(V2.max(initial=0.0)),
    )


def objective_constrained(model: ConvexModel, p: ConvexPoint):
    """Group-lasso objective value plus a cone-violation report.

    The value ignores the constraints; feasibility is judged from the
    report (max over all cone rows of the positive part).
    """
    W = _owned(model, p)
    fit, _, _ = backend.smooth_value(model.ds.X, model.ds.y, model._M,
                                     model._C1, model._C2, W, 0.0)
    value = fit + model.beta * float(np.sum(np.linalg.norm(W, axis=1)))
    return value, _feasibility(model, W)


def objective_penalized(model: ConvexModel, p: ConvexPoint, rho: float) -> float:
    """Penalized objective: fit + rho * (hinge violations) + beta * group norms."""
    if rho < 0:
        raise ValueError("rho must be >= 0")
    W = _owned(model, p)
    fit, hinge, _ = backend.smooth_value(model.ds.X, model.ds.y, model._M,
                                         model._C1, model._C2, W, rho)
    return fit + rho * hinge + model.beta * float(np.sum(np.linalg.norm(W, axis=1)))


def grad_smooth(model: ConvexModel, p: ConvexPoint, rho: float) -> ConvexPoint:
    """Gradient of the smooth part (fit + rho * hinge) as a point-shaped array.

    The hinge subgradient is taken as 0 at exactly-zero violations.
    """
    if rho < 0:
        raise ValueError("rho must be >= 0")
    W = _owned(model, p)
    grad = backend.smooth_grad(model.ds.X, model.ds.y, model._M,
                               model._C1, model._C2, W, rho)
    return ConvexPoint(model, grad)


class _ConePack:
    """Flattened cone geometry shared with the projection kernel.

    Every group's constraint rows are signed unit rows of X, so the
    candidate facet planes and (for d = 3) edge directions are the same
    for all groups and are stored once; only the signed feasibility rows
    ``Ball[boff[g]:boff[g+1]]`` are per group.
    """

    __slots__ = ("Ball", "boff", "planes", "edges")

    def __init__(self, model: "ConvexModel"):
        X = model.ds.X
        row_norms = np.linalg.norm(X, axis=1)
        nz = row_norms > 0.0
        Xhat = X[nz] / row_norms[nz, None]
        d = model.d

        canon = Xhat.copy()
        for row in canon:
            lead = row[np.argmax(np.abs(row) > 0)]
            if lead < 0:
                row *= -1.0
        self.planes = np.ascontiguousarray(np.unique(canon, axis=0)
                                           if canon.size else np.zeros((0, d)))

        edges = np.zeros((0, d))
        if d == 3 and self.planes.shape[0] >= 2:
            P = self.planes
            ii, jj = np.triu_indices(P.shape[0], k=1)
            cr = np.cross(P[ii], P[jj])
            ln = np.linalg.norm(cr, axis=1)
            keep = ln > 1e-12
            edges = cr[keep] / ln[keep, None]
        self.edges = np.ascontiguousarray(edges)

        blocks = []
        boff = [0]
        for g in model.groups:
            r = model.row(g)
            c1 = -model._C1[r][nz]  # sigma * (2 d1 - 1) on surviving rows
            c2 = -model._C2[r][nz]
            rows = [c1[:, None] * Xhat, (c2[c2 != 0.0])[:, None] * Xhat[c2 != 0.0]]
            blocks.append(np.vstack(rows))
            boff.append(boff[-1] + blocks[-1].shape[0])
        self.Ball = np.ascontiguousarray(np.vstack(blocks) if blocks else np.zeros((0, d)))
        self.boff = np.asarray(boff, dtype=np.int64)


def _cone_pack(model: ConvexModel) -> _ConePack:
    pack = getattr(model, "_cone_pack_cache", None)
    if pack is None:
        pack = _ConePack(model)
        model._cone_pack_cache = pack
    return pack


def _project_rows_inplace(model: ConvexModel, W: np.ndarray, rows: np.ndarray) -> None:
    """Project the listed coefficient rows onto their cones, in place.

    Rows that are already feasible are left untouched, so callers may
    pass a superset of the violating rows.
    """
    if len(rows) == 0:
        return
    pack = _cone_pack(model)
    if model.d <= 3:
        backend.project_rows(pack.Ball, pack.boff, pack.planes, pack.edges,
                             W, np.asarray(rows, dtype=np.int64))
    else:
        from ._coneproj import project_lh

        for r in rows:
            B = pack.Ball[pack.boff[r]:pack.boff[r + 1]]
            W[r] = project_lh(B, W[r])


def violations_by_group(model: ConvexModel, W: np.ndarray) -> np.ndarray:
    """Max cone violation of each coefficient row."""
    Z = W @ model.ds.X.T
    return np.maximum(
        np.maximum(model._C1 * Z, 0.0).max(axis=1),
        np.maximum(model._C2 * Z, 0.0).max(axis=1),
    )


def project_onto_cones(model: ConvexModel, p: ConvexPoint, skip_tol: float = 0.0) -> ConvexPoint:
    """Euclidean projection of every group vector onto its cone.

    Exact per group (face-candidate enumeration for d <= 3, dual
    nonnegative least squares above), deterministic. Groups already
    feasible to within ``skip_tol`` are left untouched.
    """
    W = _owned(model, p).copy()
    viol = violations_by_group(model, W)
    _project_rows_inplace(model, W, np.nonzero(viol > skip_tol)[0])
    return ConvexPoint(model, W)
