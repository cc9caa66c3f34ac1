"""Parallel three-layer ReLU networks: the original non-convex side.

A network is a sum of K sub-networks relu(relu(X W1) w2) w3 with matrix
first layer (d x m1), vector second layer (m1,) and scalar output weight.
This module provides the forward pass and regularized objective, the
norm-balancing rescaling that equates weight decay with an l1 penalty on
output weights, the map from a solution of the lifted convex program back
to network weights, the reverse lifting of a network into the convex
variable space, and a minibatch SGD baseline trainer.
"""

from __future__ import annotations

import json
import time
from dataclasses import dataclass, field

import numpy as np

from .convex_model import ConvexModel, ConvexPoint, GroupId

__all__ = [
    "SubNetwork",
    "NetworkParams",
    "LiftReport",
    "SgdDivergenceError",
    "random_params",
    "forward",
    "objective",
    "balance",
    "reconstruct",
    "lift_to_convex",
    "sgd_train",
]


class SgdDivergenceError(RuntimeError):
    def __init__(self, epoch: int):
        super().__init__(f"training loss became non-finite at epoch {epoch}")
        self.epoch = epoch


@dataclass
class SubNetwork:
    W1: np.ndarray  # (d, m1)
    w2: np.ndarray  # (m1,)
    w3: float

    def __post_init__(self):
        W1 = np.ascontiguousarray(np.asarray(self.W1, dtype=np.float64))
        w2 = np.ascontiguousarray(np.asarray(self.w2, dtype=np.float64))
        if W1.ndim != 2 or w2.ndim != 1 or W1.shape[1] != w2.shape[0]:
            raise ValueError("W1 must be (d, m1) and w2 (m1,)")
        object.__setattr__(self, "W1", W1)
        object.__setattr__(self, "w2", w2)
        object.__setattr__(self, "w3", float(self.w3))
        if not (np.all(np.isfinite(W1)) and np.all(np.isfinite(w2))
                and np.isfinite(self.w3)):
            raise ValueError("sub-network weights contain non-finite entries")


@dataclass
class NetworkParams:
    """K sub-networks sharing (d, m1).

    ``feasible_form=True`` additionally asserts the unit Frobenius-ball
    constraint ||W1||_F <= 1 per sub-network.
    """

    subnets: list
    feasible_form: bool = False

    def __post_init__(self):
        if self.subnets:
            d, m1 = self.subnets[0].W1.shape
            for s in self.subnets:
                if s.W1.shape != (d, m1):
                    raise ValueError("sub-networks disagree on (d, m1)")
        if self.feasible_form:
            for k, s in enumerate(self.subnets):
                if np.linalg.norm(s.W1) > 1.0 + 1e-9:
                    raise ValueError(
                        f"sub-network {k} violates ||W1||_F <= 1 "
                        f"({np.linalg.norm(s.W1):.3g})"
                    )

    @property
    def K(self) -> int:
        return len(self.subnets)

    def to_json(self) -> str:
        doc = {
            "feasible_form": self.feasible_form,
            "subnets": [
                {
                    "W1": {"shape": list(s.W1.shape), "values": s.W1.ravel().tolist()},
                    "w2": s.w2.tolist(),
                    "w3": s.w3,
                }
                for s in self.subnets
            ],
        }
        return json.dumps(doc, indent=1)

    @classmethod
    def from_json(cls, text: str) -> "NetworkParams":
        doc = json.loads(text)
        subnets = [
            SubNetwork(
                W1=np.asarray(rec["W1"]["values"]).reshape(rec["W1"]["shape"]),
                w2=np.asarray(rec["w2"]),
                w3=rec["w3"],
            )
            for rec in doc["subnets"]
        ]
        return cls(subnets=subnets, feasible_form=doc.get("feasible_form", False))


def random_params(d: int, m1: int, K: int, rng) -> NetworkParams:
    """Standard-normal init scaled by 1/sqrt(fan-in) per layer."""
    if isinstance(rng, (int, np.integer)):
        rng = np.random.default_rng(rng)
    subnets = []
    for _ in range(K):
        W1 = rng.standard_normal((d, m1)) / np.sqrt(d)
        w2 = rng.standard_normal(m1) / np.sqrt(m1)
        w3 = float(rng.standard_normal())
        subnets.append(SubNetwork(W1=W1, w2=w2, w3=w3))
    return NetworkParams(subnets=subnets)


def forward(params: NetworkParams, X: np.ndarray) -> np.ndarray:
    """Network output: sum_k relu(relu(X W1_k) w2_k) * w3_k."""
    X = np.asarray(X)
    out = np.zeros(X.shape[0])
    for s in params.subnets:
        if X.shape[1] != s.W1.shape[0]:
            raise ValueError(f"X has {X.shape[1]} columns, sub-network expects {s.W1.shape[0]}")
        z2 = np.maximum(X @ s.W1, 0.0) @ s.w2
        out += np.maximum(z2, 0.0) * s.w3
    return out


def objective(params: NetworkParams, ds, beta: float) -> float:
    """0.5 ||f(X) - y||^2 + (beta/2) sum_k (||w2_k||^2 + w3_k^2).

    First-layer norms are constrained, not regularized.
    """
    resid = forward(params, ds.X) - ds.y
    reg = sum(float(s.w2 @ s.w2) + s.w3 ** 2 for s in params.subnets)
    return 0.5 * float(resid @ resid) + 0.5 * beta * reg


def balance(params: NetworkParams) -> NetworkParams:
    """Rescale (w2, w3) per sub-network so that ||w2|| = |w3|.

    Uses alpha = sqrt(|w3| / ||w2||): the forward output is unchanged by
    positive homogeneity of relu, and the weight-decay term
    (||w2||^2 + w3^2)/2 drops to its minimum ||w2|| * |w3| over rescalings.
    Sub-networks with w3 = 0 or w2 = 0 pass through unchanged.
    """
    out = []
    for s in params.subnets:
        nw2 = float(np.linalg.norm(s.w2))
        if s.w3 != 0.0 and nw2 > 0.0:
            alpha = np.sqrt(abs(s.w3) / nw2)
            out.append(SubNetwork(W1=s.W1.copy(), w2=alpha * s.w2, w3=s.w3 / alpha))
        else:
            out.append(SubNetwork(W1=s.W1.copy(), w2=s.w2.copy(), w3=s.w3))
    return NetworkParams(subnets=out, feasible_form=params.feasible_form)


# quadrant order for reconstruction: (sign, side, output-weight sign)
_QUADRANTS = (
    ("plus", "unprimed", -1.0),
    ("minus", "unprimed", -1.0),
    ("plus", "primed", 1.0),
    ("minus", "primed", 1.0),
)


def reconstruct(model: ConvexModel, p: ConvexPoint, drop_tol: float | None = None) -> NetworkParams:
    """Build network weights from a point of the lifted convex program.

    One candidate sub-network per (sign, side) quadrant and (i, l) pair:
    column j of W1 is (+-) w_ijl / sqrt(||w_ijl||), the whole matrix scaled
    by 1 / sqrt(sum_j ||w_ijl||); w2 holds sqrt(||w_ijl||); the output
    weight is -sqrt(sum_j ||w_ijl||) on the unprimed side and +sqrt on the
    primed side. Quadrant groups with total norm <= drop_tol are omitted
    (default drop_tol: 1e-10 times the largest group norm). At a
    cone-feasible point the result reproduces the convex model's output
    and objective exactly.
    """
    norms = np.linalg.norm(p.W, axis=1)
    if drop_tol is None:
        drop_tol = 1e-10 * float(norms.max(initial=0.0))
    subnets = []
    for sign, side, w3_sign in _QUADRANTS:
        flip = 1.0 if sign == "plus" else -1.0
        for l in range(model.P2):
            for i in range(model.P1):
                rows = [model.row(GroupId(i=i, j=j, l=l, sign=sign, side=side))
                        for j in range(model.m1)]
                total = float(norms[rows].sum())
                if total <= drop_tol:
                    continue
                W1 = np.zeros((model.d, model.m1))
                w2 = np.zeros(model.m1)
                for j, r in enumerate(rows):
                    nrm = norms[r]
                    if nrm > 0.0:
                        W1[:, j] = flip * p.W[r] / np.sqrt(nrm * total)
                        w2[j] = np.sqrt(nrm)
                subnets.append(SubNetwork(W1=W1, w2=w2, w3=w3_sign * np.sqrt(total)))
    return NetworkParams(subnets=subnets, feasible_form=True)


@dataclass
class LiftReport:
    """What happened while lifting a network into the convex variables."""

    placed: int = 0
    merged_groups: int = 0
    skipped_zero: int = 0
    unmatched: list = field(default_factory=list)

    def clean(self) -> bool:
        return not self.unmatched


def _forced_bits(values: np.ndarray) -> tuple:
    """(must_be_one, must_be_zero) row sets; entries within noise of zero
    are free, so any mask agreeing on the strict rows is compatible."""
    atol = 1e-12 * max(1.0, float(np.abs(values).max(initial=0.0)))
    return values > atol, values < -atol


def _match_column(plan_col, one, zero):
    for idx, m in enumerate(plan_col):
        if np.all(m.bits[one]) and not np.any(m.bits[zero]):
            return idx
    return None


def _match_second(masks, one, zero):
    best, best_ones = None, None
    for idx, m in enumerate(masks):
        if np.all(m.bits[one]) and not np.any(m.bits[zero]):
            ones = int(m.bits.sum())
            if best is None or ones < best_ones:
                best, best_ones = idx, ones
    return best


def _nearest(masks_bits: np.ndarray, target: np.ndarray) -> int:
    return int(np.sum(masks_bits != target[None, :], axis=1).argmin())


def lift_to_convex(model: ConvexModel, params: NetworkParams, match: str = "exact"):
    """Place a network's neurons into the convex model's group variables.

    Per sub-network with w3 != 0, the realized activation patterns
    1[X w1_j >= 0] and 1[relu(X W1) w2 >= 0] are matched against the
    plan's masks (rows whose pre-activation is exactly zero match either
    bit; every strictly signed row must agree). Neuron j then contributes
    w_g = |w3| * w2_j * w1_j to group (i, j, l) on the side given by
    sign(w3) and the activation sign given by sign(w2_j). Sub-networks
    with no matching mask are reported, not silently dropped; with
    ``match="nearest"`` the Hamming-closest mask is used instead and the
    objective-equality contract is void.

    Returns (point, report). When the report is clean and the params are
    in reconstruction-normalized form, the lifted point reproduces the
    network's output and objective exactly.
    """
    if match not in ("exact", "nearest"):
        raise ValueError("match must be 'exact' or 'nearest'")
    X = model.ds.X
    W = np.zeros((model.G, model.d))
    occupied = np.zeros(model.G, dtype=bool)
    report = LiftReport()
    second_bits = np.array([m.bits for m in model.plan.second_layer])

    for k, s in enumerate(params.subnets):
        if s.w3 == 0.0:
            report.skipped_zero += 1
            continue
        side = "primed" if s.w3 > 0 else "unprimed"
        z1 = X @ s.W1
        z2 = np.maximum(z1, 0.0) @ s.w2

        one2, zero2 = _forced_bits(z2)
        if match == "exact":
            l_hat = _match_second(model.plan.second_layer, one2, zero2)
        else:
            l_hat = _nearest(second_bits, z2 >= 0.0)
        if l_hat is None:
            report.unmatched.append({"subnet": k, "reason": "second-layer pattern not in plan"})
            continue

        placements = []
        failed = None
        for j in range(model.m1):
            if s.w2[j] == 0.0 or not np.any(s.W1[:, j]):
                continue
            one1, zero1 = _forced_bits(z1[:, j])
            col = [row[j] for row in model.plan.first_layer]
            if match == "exact":
                i_hat = _match_column(col, one1, zero1)
            else:
                col_bits = np.array([m.bits for m in col])
                i_hat = _nearest(col_bits, z1[:, j] >= 0.0)
            if i_hat is None:
                failed = f"first-layer pattern of neuron {j} not in plan"
                break
            sign = "plus" if s.w2[j] > 0 else "minus"
            g = GroupId(i=i_hat, j=j, l=l_hat, sign=sign, side=side)
            placements.append((g, abs(s.w3) * s.w2[j] * s.W1[:, j]))
        if failed is not None:
            report.unmatched.append({"subnet": k, "reason": failed})
            continue

        for g, vec in placements:
            r = model.row(g)
            if occupied[r]:
                report.merged_groups += 1
            occupied[r] = True
            W[r] += vec
        report.placed += 1

    return ConvexPoint(model, W), report


def sgd_train(ds, m1: int, K: int, beta: float, lr: float, batch: int,
              epochs: int, seed: int, projection: bool = False):
    """Minibatch SGD baseline on the regularized training objective.

    The per-step loss is the squared error summed over the batch plus the
    weight-decay term scaled by batch/n, so one epoch totals one full
    gradient. ``projection=True`` rescales any W1 with Frobenius norm
    above 1 back onto the unit ball after every step. Deterministic per
    seed. Returns (params, trace) with one trace record per epoch; the
    trace's feasibility column reports the worst Frobenius-ball excess.
    """
    n = ds.n
    if not 1 <= batch <= n:
        raise ValueError(f"batch must be in [1, {n}]")
    rng = np.random.default_rng(seed)
    params = random_params(ds.d, m1, K, rng)
    X, y = ds.X, ds.y

    def theta_excess():
        return max(0.0, max(float(np.linalg.norm(s.W1)) for s in params.subnets) - 1.0)

    t0 = time.perf_counter()
    trace = [{
        "iter": 0, "stage": 0, "rho": 0.0,
        "objective": objective(params, ds, beta),
        "feasibility": theta_excess(),
        "elapsed_s": 0.0,
    }]

    for epoch in range(1, epochs + 1):
        order = rng.permutation(n)
        for start in range(0, n, batch):
            idx = order[start:start + batch]
            Xb, yb = X[idx], y[idx]
            reg_scale = beta * len(idx) / n

            # forward pass, shared across subnets
            acts = []
            out = np.zeros(len(idx))
            for s in params.subnets:
                z1 = Xb @ s.W1
                a1 = np.maximum(z1, 0.0)
                z2 = a1 @ s.w2
                a2 = np.maximum(z2, 0.0)
                out += a2 * s.w3
                acts.append((z1, a1, z2, a2))
            resid = out - yb

            for s, (z1, a1, z2, a2) in zip(params.subnets, acts):
                g_w3 = float(resid @ a2) + reg_scale * s.w3
                dz2 = resid * s.w3 * (z2 > 0.0)
                g_w2 = a1.T @ dz2 + reg_scale * s.w2
                dz1 = np.outer(dz2, s.w2) * (z1 > 0.0)
                g_W1 = Xb.T @ dz1
                s.W1 = s.W1 - lr * g_W1
                s.w2 = s.w2 - lr * g_w2
                s.w3 = s.w3 - lr * g_w3
                if projection:
                    nrm = float(np.linalg.norm(s.W1))
                    if nrm > 1.0:
                        s.W1 = s.W1 / nrm

        obj = objective(params, ds, beta)
        if not np.isfinite(obj):
            raise SgdDivergenceError(epoch)
        trace.append({
            "iter": epoch, "stage": 0, "rho": 0.0,
            "objective": obj,
            "feasibility": theta_excess(),
            "elapsed_s": time.perf_counter() - t0,
        })

    return params, trace
