"""ReLU activation sign patterns (mask vectors) and arrangement plans.

A mask vector is the 0/1 pattern ``1[X w >= 0]`` recording which samples
activate a ReLU for a given weight direction; ties at exactly zero count
as active. Plans collect the first-layer mask grid and the second-layer
masks that define the lifted convex model, either by random sampling or
by exact enumeration at small scale.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field

import numpy as np

__all__ = [
    "MaskVector",
    "ArrangementPlan",
    "ScaleGuardError",
    "first_layer_pattern",
    "second_layer_pattern",
    "sample_plan",
    "exact_plan",
    "enumerate_first_layer",
    "count_bound_first",
    "count_bound_second",
]

# enumerate_first_layer refuses beyond this scale; sampling has no limit
ENUM_MAX_N = 25
ENUM_MAX_D = 3
ENUM_MAX_PATTERNS = 200_000


class ScaleGuardError(RuntimeError):
    """Raised when exact enumeration is requested beyond desk scale."""


def first_layer_pattern(X: np.ndarray, u: np.ndarray) -> np.ndarray:
    """Boolean activation pattern 1[X u >= 0]."""
    return np.asarray(X) @ np.asarray(u) >= 0.0


def second_layer_pattern(X: np.ndarray, U1: np.ndarray, u2: np.ndarray) -> np.ndarray:
    """Boolean pattern of the second ReLU layer, 1[relu(X U1) u2 >= 0]."""
    return np.maximum(np.asarray(X) @ np.asarray(U1), 0.0) @ np.asarray(u2) >= 0.0


@dataclass
class MaskVector:
    """Diagonal 0/1 mask, stored as its boolean diagonal plus a witness.

    ``witness`` is the weight vector (first layer) or the stacked
    ``[U1; u2]`` array of shape (d+1, m1) (second layer) that realizes
    the pattern; it may be absent for hand-built masks.
    """

    bits: np.ndarray
    witness: np.ndarray | None = None

    def __post_init__(self):
        bits = np.ascontiguousarray(np.asarray(self.bits, dtype=bool))
        if bits.ndim != 1:
            raise ValueError("mask bits must be a 1-d boolean vector")
        bits.flags.writeable = False
        object.__setattr__(self, "bits", bits)

    @property
    def n(self) -> int:
        return self.bits.shape[0]

    def key(self) -> bytes:
        return np.packbits(self.bits).tobytes()

    def to_bitstring(self) -> str:
        return "".join("1" if b else "0" for b in self.bits)

    @classmethod
    def from_bitstring(cls, s: str, witness=None) -> "MaskVector":
        return cls(bits=np.array([c == "1" for c in s], dtype=bool), witness=witness)


@dataclass
class ArrangementPlan:
    """Masks defining a lifted convex model.

    ``first_layer[i][j]`` is the mask used by neuron slot j under
    arrangement index i (a dense P1 x m1 grid); ``second_layer[l]`` is the
    l-th second-layer mask. Masks are deduplicated: within each first-layer
    column and within the second layer no two masks compare equal.
    """

    m1: int
    first_layer: list  # P1 rows, each a list of m1 MaskVector
    second_layer: list  # P2 MaskVector
    mode: str = "sampled"
    seed: int | None = None

    def __post_init__(self):
        if self.m1 < 1:
            raise ValueError("m1 must be >= 1")
        if self.mode not in ("sampled", "exact"):
            raise ValueError(f"unknown plan mode {self.mode!r}")
        if not self.first_layer or not self.second_layer:
            raise ValueError("plan needs at least one mask per layer")
        if any(len(row) != self.m1 for row in self.first_layer):
            raise ValueError("first_layer grid is not rectangular with m1 columns")
        n = self.first_layer[0][0].n
        for row in self.first_layer:
            for m in row:
                if m.n != n:
                    raise ValueError("inconsistent mask lengths in first layer")
        for m in self.second_layer:
            if m.n != n:
                raise ValueError("inconsistent mask lengths in second layer")
        for j in range(self.m1):
            keys = [row[j].key() for row in self.first_layer]
            if len(set(keys)) != len(keys):
                raise ValueError(f"duplicate masks in first-layer column {j}")
        keys = [m.key() for m in self.second_layer]
        if len(set(keys)) != len(keys):
            raise ValueError("duplicate masks in second layer")

    @property
    def n(self) -> int:
        return self.first_layer[0][0].n

    @property
    def P1(self) -> int:
        return len(self.first_layer)

    @property
    def P2(self) -> int:
        return len(self.second_layer)

    def to_json(self) -> str:
        def wit(w):
            return None if w is None else np.asarray(w).tolist()

        doc = {
            "n": self.n,
            "m1": self.m1,
            "P1": self.P1,
            "P2": self.P2,
            "mode": self.mode,
            "seed": self.seed,
            "first_layer": [[m.to_bitstring() for m in row] for row in self.first_layer],
            "first_layer_witnesses": [[wit(m.witness) for m in row] for row in self.first_layer],
            "second_layer": [m.to_bitstring() for m in self.second_layer],
            "second_layer_witnesses": [wit(m.witness) for m in self.second_layer],
        }
        return json.dumps(doc, indent=1, sort_keys=True)

    @classmethod
    def from_json(cls, text: str) -> "ArrangementPlan":
        doc = json.loads(text)

        def unwit(w):
            return None if w is None else np.asarray(w, dtype=np.float64)

        first = [
            [MaskVector.from_bitstring(s, unwit(w)) for s, w in zip(row, wrow)]
            for row, wrow in zip(doc["first_layer"], doc["first_layer_witnesses"])
        ]
        second = [
            MaskVector.from_bitstring(s, unwit(w))
            for s, w in zip(doc["second_layer"], doc["second_layer_witnesses"])
        ]
        return cls(m1=doc["m1"], first_layer=first, second_layer=second,
                   mode=doc["mode"], seed=doc["seed"])


def _dedup(masks: list) -> list:
    seen = set()
    out = []
    for m in masks:
        k = m.key()
        if k not in seen:
            seen.add(k)
            out.append(m)
    return out


def sample_plan(ds, m1: int, P1_target: int, P2_target: int, seed: int) -> ArrangementPlan:
    """Sample an arrangement plan from random Gaussian witnesses.

    First-layer masks are ``1[X u >= 0]`` with u ~ N(0, I_d), drawn
    ``P1_target`` times per neuron column; second-layer masks come from
    fresh random (U1, u2) pairs. Duplicates are removed per column, so the
    realized P1/P2 may fall below the targets (the grid is truncated to
    the shortest column to stay dense). Deterministic per seed.
    """
    if min(m1, P1_target, P2_target) < 1:
        raise ValueError("m1 and sampling targets must be >= 1")
    rng = np.random.default_rng(seed)
    X = ds.X
    d = ds.d

    columns = []
    for j in range(m1):
        col = []
        for _ in range(P1_target):
            u = rng.standard_normal(d)
            col.append(MaskVector(first_layer_pattern(X, u), witness=u))
        columns.append(_dedup(col))
    P1 = min(len(col) for col in columns)
    first = [[columns[j][i] for j in range(m1)] for i in range(P1)]

    second = []
    for _ in range(P2_target):
        U1 = rng.standard_normal((d, m1))
        u2 = rng.standard_normal(m1)
        witness = np.vstack([U1, u2[None, :]])
        second.append(MaskVector(second_layer_pattern(X, U1, u2), witness=witness))
    second = _dedup(second)

    return ArrangementPlan(m1=m1, first_layer=first, second_layer=second,
                           mode="sampled", seed=seed)


def exact_plan(ds, m1: int, P2_target: int, seed: int) -> ArrangementPlan:
    """Plan with the exact first-layer mask set and sampled second layer.

    Every neuron column carries the full enumerated pattern set (second-layer
    enumeration is out of reach in general, so that layer is always sampled).
    """
    masks = enumerate_first_layer(ds)
    first = [[m for _ in range(m1)] for m in masks]
    rng = np.random.default_rng(seed)
    X, d = ds.X, ds.d
    second = []
    for _ in range(max(P2_target, 1)):
        U1 = rng.standard_normal((d, m1))
        u2 = rng.standard_normal(m1)
        witness = np.vstack([U1, u2[None, :]])
        second.append(MaskVector(second_layer_pattern(X, U1, u2), witness=witness))
    second = _dedup(second)
    return ArrangementPlan(m1=m1, first_layer=first, second_layer=second,
                           mode="exact", seed=seed)


def count_bound_first(n: int, r: int) -> int:
    """Upper bound 2 * sum_{k<r} C(n-1, k) on distinct first-layer patterns.

    Exact integer arithmetic (Python ints never overflow).
    """
    if not 1 <= r <= n:
        raise ValueError(f"need 1 <= r <= n, got r={r}, n={n}")
    return 2 * sum(math.comb(n - 1, k) for k in range(r))


def count_bound_second(n: int, r: int, m1: int) -> int:
    """Upper bound on second-layer patterns: bound(n, m1*r) * (2 * bound(n, r))**m1.

    Valid under the standing assumption m1 * r <= n.
    """
    if m1 < 1:
        raise ValueError("m1 must be >= 1")
    if m1 * r > n:
        raise ValueError(
            f"bound requires m1*r <= n, got m1*r = {m1 * r} > n = {n}"
        )
    p2_prime = count_bound_first(n, m1 * r)
    p1_bound = count_bound_first(n, r)
    return p2_prime * (2 * p1_bound) ** m1


def _sweep_1d(X: np.ndarray) -> list:
    out = []
    for w in (np.array([1.0]), np.array([-1.0])):
        out.append(MaskVector(first_layer_pattern(X, w), witness=w.copy()))
    return _dedup(out)


def _sweep_2d(X: np.ndarray) -> list:
    # boundaries of the sign cells are the directions orthogonal to the rows
    nz = X[np.linalg.norm(X, axis=1) > 0.0]
    if nz.shape[0] == 0:
        w = np.array([1.0, 0.0])
        return [MaskVector(first_layer_pattern(X, w), witness=w)]
    ang = np.arctan2(nz[:, 1], nz[:, 0])
    crit = np.concatenate([ang + np.pi / 2, ang - np.pi / 2])
    crit = np.mod(crit, 2 * np.pi)
    crit = np.unique(crit)
    # merge numerically coincident boundary angles
    keep = [crit[0]]
    for a in crit[1:]:
        if a - keep[-1] > 1e-12:
            keep.append(a)
    out = []
    k = len(keep)
    for idx in range(k):
        lo = keep[idx]
        hi = keep[(idx + 1) % k] + (2 * np.pi if idx == k - 1 else 0.0)
        mid = 0.5 * (lo + hi)
        w = np.array([np.cos(mid), np.sin(mid)])
        out.append(MaskVector(first_layer_pattern(X, w), witness=w))
    return _dedup(out)


def _enumerate_lp(X: np.ndarray) -> list:
    """Sign-prefix recursion over rows with LP feasibility tests.

    A cell survives iff some w satisfies s_t * (x_t . w) >= 1 for every
    processed nonzero row; the LP witness doubles as the stored generic
    weight vector for the pattern.
    """
    from scipy.optimize import linprog

    n, d = X.shape
    nz_idx = [t for t in range(n) if np.linalg.norm(X[t]) > 0.0]
    if not nz_idx:
        w = np.zeros(d)
        w[0] = 1.0
        return [MaskVector(first_layer_pattern(X, w), witness=w)]

    c = np.zeros(d)
    bounds = [(None, None)] * d

    def feasible(signed_rows: np.ndarray):
        # s_t * x_t . w >= 1  <=>  -s_t * x_t . w <= -1
        res = linprog(c, A_ub=-signed_rows, b_ub=-np.ones(signed_rows.shape[0]),
                      bounds=bounds, method="highs")
        return res.x if res.status == 0 else None

    # each cell: (list of +-1 signs over processed nonzero rows, witness)
    first = X[nz_idx[0]]
    cells = []
    for s in (1.0, -1.0):
        w = feasible((s * first)[None, :])
        if w is not None:
            cells.append(([s], w))
    for t in nz_idx[1:]:
        row = X[t]
        new_cells = []
        for signs, w in cells:
            val = row @ w
            lead = 1.0 if val > 0 else -1.0
            new_cells.append((signs + [lead], w))
            flipped = np.array(signs + [-lead])
            mat = X[nz_idx[: len(signs) + 1]] * flipped[:, None]
            w2 = feasible(mat)
            if w2 is not None:
                new_cells.append((signs + [-lead], w2))
        cells = new_cells
        if len(cells) > ENUM_MAX_PATTERNS:
            raise ScaleGuardError(
                f"enumeration exceeded {ENUM_MAX_PATTERNS} cells; sample instead"
            )
    return _dedup(
        [MaskVector(first_layer_pattern(X, w), witness=w) for _, w in cells]
    )


def enumerate_first_layer(ds) -> list:
    """Exactly enumerate the distinct first-layer patterns of generic weights.

    Patterns with a sample exactly on the separating hyperplane are
    excluded (each returned mask comes with a strictly interior witness),
    matching the open-cell count that the binomial-sum bound counts. Rows
    that are identically zero are active in every pattern. Intended for
    desk scale; beyond the guard, refuse and point the caller at
    ``sample_plan``.
    """
    X = ds.X
    n, d = X.shape
    if n > ENUM_MAX_N and d > ENUM_MAX_D:
        raise ScaleGuardError(
            f"exact enumeration guarded to n <= {ENUM_MAX_N} or d <= {ENUM_MAX_D} "
            f"(got n={n}, d={d}); use sample_plan instead"
        )
    if d == 1:
        return _sweep_1d(X)
    if d == 2:
        return _sweep_2d(X)
    return _enumerate_lp(X)
