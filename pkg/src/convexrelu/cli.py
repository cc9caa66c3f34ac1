"""Batch command-line front end.

Subcommands: synth, plan, train-convex, train-sgd, reconstruct, certify,
compare. Every run writes its artifacts plus the exact configuration into
the output directory; summaries carry sha256 hashes of their inputs so
runs are content-addressed. Plots are not rendered here; traces are
emitted as JSON lines for external plotting.
"""

from __future__ import annotations

import argparse
import hashlib
import json
import sys
import time
from pathlib import Path

import numpy as np

from . import backend
from .arrangements import ArrangementPlan, exact_plan, sample_plan
from .convex_model import ConvexPoint, build_model, objective_constrained, predict
from .dataio import Dataset, DataFormatError, load_csv, save_csv, synth_teacher
from .network import NetworkParams, forward, lift_to_convex, objective, reconstruct, sgd_train
from .solver import SolveConfig, certify, solve

USAGE_ERROR = 2
RUNTIME_ERROR = 1


class UsageError(ValueError):
    pass


def _sha256(data: bytes) -> str:
    return hashlib.sha256(data).hexdigest()


def _write(path: Path, text: str) -> None:
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_text(text)


def _write_json(path: Path, doc) -> None:
    _write(path, json.dumps(doc, indent=1, sort_keys=True))


def _write_trace(path: Path, records) -> None:
    _write(path, "".join(json.dumps(r, sort_keys=True) + "\n" for r in records))


def _load_dataset(cfg: dict) -> tuple:
    """Return (dataset, input_hashes) from a csv path or synth spec."""
    hashes = {}
    if cfg.get("data"):
        path = Path(cfg["data"])
        if not path.exists():
            raise UsageError(f"dataset file not found: {path}")
        hashes["data_sha256"] = _sha256(path.read_bytes())
        ds = load_csv(path, label_column=cfg.get("label_column", "last"))
    elif cfg.get("synth"):
        n, d, m1t, kt = cfg["synth"]
        if cfg.get("seed") is None:
            raise UsageError("--seed is required for synthetic data")
        ds = synth_teacher(n, d, m1t, kt, seed=cfg["seed"])
    else:
        raise UsageError("provide --data CSV or --synth N,D,M1,K")

    X, y = ds.X, ds.y
    if cfg.get("normalize_features"):
        mu = X.mean(axis=0)
        sd = X.std(axis=0)
        sd[sd == 0.0] = 1.0
        X = (X - mu) / sd
    if cfg.get("center_labels"):
        y = y - y.mean()
    if cfg.get("normalize_features") or cfg.get("center_labels"):
        ds = Dataset(X=X, y=y, name=ds.name)
    return ds, hashes


def _build_plan(ds, cfg: dict):
    if cfg.get("plan"):
        path = Path(cfg["plan"])
        if not path.exists():
            raise UsageError(f"plan file not found: {path}")
        return ArrangementPlan.from_json(path.read_text())
    if cfg.get("seed") is None:
        raise UsageError("--seed is required to build a plan")
    if cfg.get("plan_mode", "sampled") == "exact":
        return exact_plan(ds, m1=cfg["m1"], P2_target=cfg.get("p2_target", 32),
                          seed=cfg["seed"])
    return sample_plan(ds, m1=cfg["m1"], P1_target=cfg.get("p1_target", 64),
                       P2_target=cfg.get("p2_target", 32), seed=cfg["seed"])


def _solve_config(cfg: dict) -> SolveConfig:
    kw = {}
    if cfg.get("rho_schedule"):
        kw["rho_schedule"] = tuple(float(r) for r in cfg["rho_schedule"].split(","))
    for key in ("max_iter", "refine_max_iter"):
        if cfg.get(key) is not None:
            kw[key] = int(cfg[key])
    for key in ("tol_rel", "tol_feas", "target_gap"):
        if cfg.get(key) is not None:
            kw[key] = float(cfg[key])
    if cfg.get("step_rule"):
        kw["step_rule"] = cfg["step_rule"]
    if cfg.get("no_refine"):
        kw["refine"] = False
    return SolveConfig(**kw)


def _split(ds, fraction: float, seed: int):
    """Deterministic train/test split (last `fraction` of a seeded shuffle)."""
    rng = np.random.default_rng(seed)
    order = rng.permutation(ds.n)
    n_test = max(1, int(round(fraction * ds.n)))
    test, train = order[:n_test], order[n_test:]
    return (Dataset(X=ds.X[train], y=ds.y[train], name=ds.name + "-train"),
            Dataset(X=ds.X[test], y=ds.y[test], name=ds.name + "-test"))


def _test_errors(y_true: np.ndarray, y_pred: np.ndarray) -> dict:
    out = {"test_mse": float(np.mean((y_pred - y_true) ** 2))}
    labels = np.unique(y_true)
    if labels.size <= 2:
        nearest = labels[np.argmin(np.abs(y_pred[:, None] - labels[None, :]), axis=1)]
        out["test_class_error"] = float(np.mean(nearest != y_true))
    return out


def cmd_synth(cfg: dict, out: Path) -> dict:
    if cfg.get("seed") is None:
        raise UsageError("--seed is required for synth")
    ds = synth_teacher(cfg["n"], cfg["d"], cfg["teacher_m1"], cfg["teacher_k"],
                       seed=cfg["seed"])
    save_csv(ds, out / "dataset.csv")
    return {"dataset": ds.name, "n": ds.n, "d": ds.d,
            "dataset_sha256": _sha256((out / "dataset.csv").read_bytes())}


def cmd_plan(cfg: dict, out: Path) -> dict:
    ds, hashes = _load_dataset(cfg)
    plan = _build_plan(ds, cfg)
    text = plan.to_json()
    _write(out / "plan.json", text)
    return {**hashes, "plan_sha256": _sha256(text.encode()),
            "P1": plan.P1, "P2": plan.P2, "m1": plan.m1, "mode": plan.mode}


def cmd_train_convex(cfg: dict, out: Path) -> dict:
    ds, hashes = _load_dataset(cfg)
    t0 = time.perf_counter()
    plan = _build_plan(ds, cfg)
    model = build_model(ds, plan, beta=cfg["beta"])
    solution = solve(model, _solve_config(cfg))
    t_solve = time.perf_counter() - t0

    net = reconstruct(model, solution.point)
    _write(out / "plan.json", plan.to_json())
    _write(out / "solution.json", solution.point.to_json())
    _write_json(out / "certificate.json", solution.certificate.to_dict())
    _write_trace(out / "trace.jsonl", solution.trace)
    _write(out / "reconstructed-network.json", net.to_json())

    summary = {
        **hashes,
        "plan_sha256": model.plan_sha256,
        "model": model.describe(),
        "convex_objective": solution.objective,
        "network_objective": objective(net, ds, cfg["beta"]),
        "network_subnets": net.K,
        "gap": solution.certificate.gap,
        "lower_bound": solution.certificate.lower_bound,
        "feasibility_max": solution.report.max_abs,
        "feasibility_rel": solution.report.max_rel,
        "iterations": len(solution.trace),
        "backend": backend.backend_name(),
        "timings": {"solve_s": t_solve},
    }
    _write_json(out / "summary.json", summary)
    return summary


def cmd_train_sgd(cfg: dict, out: Path) -> dict:
    ds, hashes = _load_dataset(cfg)
    if cfg.get("seed") is None:
        raise UsageError("--seed is required for train-sgd")
    t0 = time.perf_counter()
    params, trace = sgd_train(ds, m1=cfg["m1"], K=cfg["k"], beta=cfg["beta"],
                              lr=cfg["lr"], batch=cfg["batch"], epochs=cfg["epochs"],
                              seed=cfg["seed"], projection=cfg.get("projection", False))
    _write(out / "network.json", params.to_json())
    _write_trace(out / "trace.jsonl", trace)
    summary = {
        **hashes,
        "final_objective": trace[-1]["objective"],
        "epochs": cfg["epochs"],
        "timings": {"train_s": time.perf_counter() - t0},
    }
    _write_json(out / "summary.json", summary)
    return summary


def _load_model_point(cfg: dict):
    ds, hashes = _load_dataset(cfg)
    if not cfg.get("plan"):
        raise UsageError("--plan is required here")
    plan = _build_plan(ds, cfg)
    model = build_model(ds, plan, beta=cfg["beta"])
    sol_path = Path(cfg.get("solution") or "")
    if not sol_path.exists():
        raise UsageError(f"solution file not found: {sol_path}")
    hashes["solution_sha256"] = _sha256(sol_path.read_bytes())
    point = ConvexPoint.from_json(model, sol_path.read_text())
    return ds, model, point, hashes


def cmd_reconstruct(cfg: dict, out: Path) -> dict:
    ds, model, point, hashes = _load_model_point(cfg)
    net = reconstruct(model, point, drop_tol=cfg.get("drop_tol"))
    _write(out / "reconstructed-network.json", net.to_json())
    return {**hashes, "network_subnets": net.K,
            "network_objective": objective(net, ds, cfg["beta"])}


def cmd_certify(cfg: dict, out: Path) -> dict:
    ds, model, point, hashes = _load_model_point(cfg)
    cert = certify(model, point)
    _write_json(out / "certificate.json", cert.to_dict())
    return {**hashes, **{k: v for k, v in cert.to_dict().items() if k != "scaled_dual"}}


def cmd_compare(cfg: dict, out: Path) -> dict:
    ds_full, hashes = _load_dataset(cfg)
    if cfg.get("seed") is None:
        raise UsageError("--seed is required for compare")
    if cfg.get("holdout"):
        ds, ds_test = _split(ds_full, cfg.get("split_fraction", 0.2), cfg["seed"])
    else:
        ds, ds_test = ds_full, None

    rows = []
    combined = []
    warnings = []

    t0 = time.perf_counter()
    plan = _build_plan(ds, cfg)
    model = build_model(ds, plan, beta=cfg["beta"])
    solution = solve(model, _solve_config(cfg))
    net = reconstruct(model, solution.point)
    t_convex = time.perf_counter() - t0
    row = {"method": "convex", "train_objective": solution.objective,
           "gap": solution.certificate.gap, "wall_clock_s": t_convex,
           "subnets": net.K}
    if ds_test is not None:
        row.update(_test_errors(ds_test.y, forward(net, ds_test.X)))
    rows.append(row)
    combined += [{**r, "method": "convex"} for r in solution.trace]

    if cfg["k"] < net.K:
        warnings.append(
            f"K={cfg['k']} is smaller than the reconstructed architecture "
            f"({net.K} sub-networks); SGD searches a smaller model"
        )

    for trial in range(cfg.get("sgd_seeds", 5)):
        seed = cfg["seed"] + trial
        t0 = time.perf_counter()
        params, trace = sgd_train(ds, m1=cfg["m1"], K=cfg["k"], beta=cfg["beta"],
                                  lr=cfg["lr"], batch=cfg["batch"],
                                  epochs=cfg["epochs"], seed=seed,
                                  projection=cfg.get("projection", False))
        row = {"method": f"sgd-seed{seed}", "train_objective": trace[-1]["objective"],
               "wall_clock_s": time.perf_counter() - t0}
        if ds_test is not None:
            row.update(_test_errors(ds_test.y, forward(params, ds_test.X)))
        rows.append(row)
        combined += [{**r, "method": f"sgd-seed{seed}"} for r in trace]

    _write(out / "plan.json", plan.to_json())
    _write_json(out / "comparison.json", {"rows": rows, "warnings": warnings})
    _write_trace(out / "trace.jsonl", combined)

    sgd_objs = [r["train_objective"] for r in rows if r["method"].startswith("sgd")]
    summary = {
        **hashes,
        "plan_sha256": model.plan_sha256,
        "convex_objective": solution.objective,
        "sgd_best": min(sgd_objs),
        "sgd_worst": max(sgd_objs),
        "warnings": warnings,
        "rows": rows,
        "timings": {"total_s": sum(r["wall_clock_s"] for r in rows)},
    }
    _write_json(out / "summary.json", summary)
    for w in warnings:
        print(f"warning: {w}", file=sys.stderr)
    return summary


def _parser() -> argparse.ArgumentParser:
    top = argparse.ArgumentParser(
        prog="convexrelu",
        description="Train parallel three-layer ReLU networks to global "
                    "optimality via an equivalent convex program.",
    )
    sub = top.add_subparsers(dest="command", required=True)

    def add_common(p):
        p.add_argument("--out", default=".", help="output directory")
        p.add_argument("--config", help="JSON config file; overrides flags")
        p.add_argument("--seed", type=int, default=None)

    def add_dataset(p):
        p.add_argument("--data", help="CSV dataset (labels in last column)")
        p.add_argument("--label-column", default="last", dest="label_column")
        p.add_argument("--synth", help="N,D,M1,K teacher spec for synthetic data")
        p.add_argument("--center-labels", action="store_true", dest="center_labels")
        p.add_argument("--normalize-features", action="store_true",
                       dest="normalize_features")

    def add_plan(p):
        p.add_argument("--plan", help="existing plan.json to reuse")
        p.add_argument("--plan-mode", choices=("exact", "sampled"),
                       default="sampled", dest="plan_mode")
        p.add_argument("--m1", type=int, default=4)
        p.add_argument("--p1-target", type=int, default=64, dest="p1_target")
        p.add_argument("--p2-target", type=int, default=32, dest="p2_target")

    def add_solver(p):
        p.add_argument("--beta", type=float, default=0.01)
        p.add_argument("--rho-schedule", dest="rho_schedule")
        p.add_argument("--max-iter", type=int, dest="max_iter")
        p.add_argument("--refine-max-iter", type=int, dest="refine_max_iter")
        p.add_argument("--tol-rel", type=float, dest="tol_rel")
        p.add_argument("--tol-feas", type=float, dest="tol_feas")
        p.add_argument("--target-gap", type=float, dest="target_gap")
        p.add_argument("--step-rule", choices=("fixed", "backtracking"),
                       dest="step_rule")
        p.add_argument("--no-refine", action="store_true", dest="no_refine")

    def add_sgd(p):
        p.add_argument("--k", type=int, default=10)
        p.add_argument("--lr", type=float, default=0.03)
        p.add_argument("--batch", type=int, default=5)
        p.add_argument("--epochs", type=int, default=2000)
        p.add_argument("--projection", action="store_true")

    p = sub.add_parser("synth", help="generate a teacher-network dataset")
    add_common(p)
    p.add_argument("--n", type=int, required=True)
    p.add_argument("--d", type=int, required=True)
    p.add_argument("--teacher-m1", type=int, default=3, dest="teacher_m1")
    p.add_argument("--teacher-k", type=int, default=5, dest="teacher_k")

    p = sub.add_parser("plan", help="build an arrangement plan")
    add_common(p); add_dataset(p); add_plan(p)

    p = sub.add_parser("train-convex", help="solve the convex program")
    add_common(p); add_dataset(p); add_plan(p); add_solver(p)

    p = sub.add_parser("train-sgd", help="train the network baseline with SGD")
    add_common(p); add_dataset(p)
    p.add_argument("--m1", type=int, default=4)
    p.add_argument("--beta", type=float, default=0.01)
    add_sgd(p)

    p = sub.add_parser("reconstruct", help="map a convex solution to network weights")
    add_common(p); add_dataset(p); add_plan(p)
    p.add_argument("--beta", type=float, default=0.01)
    p.add_argument("--solution", required=True)
    p.add_argument("--drop-tol", type=float, dest="drop_tol")

    p = sub.add_parser("certify", help="duality certificate for a solution")
    add_common(p); add_dataset(p); add_plan(p)
    p.add_argument("--beta", type=float, default=0.01)
    p.add_argument("--solution", required=True)

    p = sub.add_parser("compare", help="convex solve vs SGD trials")
    add_common(p); add_dataset(p); add_plan(p); add_solver(p); add_sgd(p)
    p.add_argument("--sgd-seeds", type=int, default=5, dest="sgd_seeds")
    p.add_argument("--holdout", action="store_true",
                   help="hold out a test split (80/20 by default)")
    p.add_argument("--split-fraction", type=float, default=0.2,
                   dest="split_fraction")

    return top


_COMMANDS = {
    "synth": cmd_synth,
    "plan": cmd_plan,
    "train-convex": cmd_train_convex,
    "train-sgd": cmd_train_sgd,
    "reconstruct": cmd_reconstruct,
    "certify": cmd_certify,
    "compare": cmd_compare,
}


def _config_from_args(args: argparse.Namespace) -> dict:
    cfg = {k: v for k, v in vars(args).items() if k not in ("command", "config")}
    if args.config:
        path = Path(args.config)
        if not path.exists():
            raise UsageError(f"config file not found: {path}")
        cfg.update(json.loads(path.read_text()))
    if isinstance(cfg.get("synth"), str):
        parts = [int(v) for v in cfg["synth"].split(",")]
        if len(parts) != 4:
            raise UsageError("--synth expects N,D,M1,K")
        cfg["synth"] = parts
    return cfg


def main(argv=None) -> int:
    args = _parser().parse_args(argv)
    try:
        cfg = _config_from_args(args)
        out = Path(cfg.get("out") or ".")
        out.mkdir(parents=True, exist_ok=True)
        _write_json(out / "config.json", {"command": args.command,
                                          **{k: v for k, v in cfg.items() if k != "out"}})
        result = _COMMANDS[args.command](cfg, out)
        print(json.dumps(result, indent=1, sort_keys=True, default=str))
        return 0
    except (ValueError, FileNotFoundError) as exc:  # bad input or config
        print(json.dumps({"error": {"type": type(exc).__name__, "message": str(exc)}}),
              file=sys.stderr)
        return USAGE_ERROR
    except Exception as exc:  # runtime failure: machine-readable, nonzero exit
        print(json.dumps({"error": {"type": type(exc).__name__, "message": str(exc)}}),
              file=sys.stderr)
        return RUNTIME_ERROR


if __name__ == "__main__":
    sys.exit(main())
