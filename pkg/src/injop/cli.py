"""Command-line driver.

Subcommands: certify, lift, invert, truncate, demo.  Every run writes its
outputs under --out-dir with fixed names (report.json, trace.csv,
result.csv, network.json as applicable).  Exit codes: 0 success, 2 for a
mathematically meaningful negative (counterexample found, iteration
diverged or failed to converge), 1 for faults, 64 for usage errors.
Reports are byte-identical across repeated runs with the same flags.
"""

from __future__ import annotations

import argparse
import glob
import os
import sys
from dataclasses import dataclass
from typing import List, Optional

import numpy as np

from . import serialize
from .atlas import build_atlas, global_invert
from .certify import (
    VERDICT_CERTIFIED,
    VERDICT_COUNTEREXAMPLE,
    certify_bijective_activation,
    certify_relu_dss,
)
from .errors import DivergenceError, InjopError, UsageError
from .finite_rank import FiniteRankNetwork, truncate_kernel
from .funcspace import BasisSpec, Grid, GridFunction
from .nonlin import NonlinearIntegralOperator, VolterraKernel, invert_banach
from .reduction import lift_to_injective


@dataclass
class RunConfig:
    command: str
    net: Optional[str] = None
    op: Optional[str] = None
    target: Optional[str] = None
    anchors: Optional[str] = None
    mode: str = "relu"
    method: str = "banach"
    trials: int = 1000
    seed: int = 0
    tol: float = 1e-8
    grid_size: int = 512
    rank: int = 8
    alpha: float = 0.1
    out_dir: str = "."
    demo_name: Optional[str] = None


class _Parser(argparse.ArgumentParser):
    """argparse that reports usage problems as exceptions, not exits."""

    def error(self, message):
        raise UsageError(f"{self.format_usage().rstrip()}\nerror: {message}")


def _build_parser() -> _Parser:
    parser = _Parser(prog="injop", description=__doc__, add_help=True)
    sub = parser.add_subparsers(dest="command")

    def common(p, *, tol=False, grid=True):
        p.add_argument("--seed", type=int, default=0)
        p.add_argument("--out-dir", default=".")
        if tol:
            p.add_argument("--tol", type=float, default=1e-8)
        if grid:
            p.add_argument("--grid-size", type=int, default=512)

    p = sub.add_parser("certify", help="layerwise injectivity certification")
    p.add_argument("--net", required=True)
    p.add_argument("--mode", choices=["relu", "bijective"], default="relu")
    p.add_argument("--trials", type=int, default=1000)
    common(p)

    p = sub.add_parser("lift", help="lift a network to an injective one")
    p.add_argument("--net", required=True)
    p.add_argument("--mode", choices=["relu", "bijective"], default="relu")
    p.add_argument("--alpha", type=float, default=0.1)
    common(p)

    p = sub.add_parser("invert", help="invert a nonlinear integral operator")
    p.add_argument("--op", required=True)
    p.add_argument("--target", required=True)
    p.add_argument("--method", choices=["banach", "atlas"], default="banach")
    p.add_argument("--anchors")
    common(p, tol=True)

    p = sub.add_parser("truncate", help="finite-rank truncation of a kernel table")
    p.add_argument("--op", required=True)
    p.add_argument("--rank", type=int, default=8)
    common(p)

    p = sub.add_parser("demo", help="self-checking end-to-end example")
    p.add_argument("demo_name", nargs="?", default="volterra")
    common(p, tol=True)

    return parser


def parse_config(argv: List[str]) -> RunConfig:
    parser = _build_parser()
    if not argv:
        raise UsageError(parser.format_usage().rstrip())
    ns = parser.parse_args(argv)
    if ns.command is None:
        raise UsageError(parser.format_usage().rstrip())
    cfg = RunConfig(command=ns.command)
    for name in vars(ns):
        if name == "command":
            continue
        setattr(cfg, name, getattr(ns, name))
    return cfg


def _report_path(cfg: RunConfig, name: str) -> str:
    os.makedirs(cfg.out_dir, exist_ok=True)
    return os.path.join(cfg.out_dir, name)


def _run_certify(cfg: RunConfig) -> int:
    net = serialize.load_network(cfg.net)
    grid = Grid(net.basis.interval[0], net.basis.interval[1], cfg.grid_size)
    layer_reports = []
    for layer in net.layers:
        if layer.activation.kind == "relu":
            if cfg.mode != "relu":
                raise ValueError(
                    "bijective mode cannot certify relu layers; rerun with --mode relu"
                )
            rep = certify_relu_dss(layer, grid, trials=cfg.trials, seed=cfg.seed)
        else:
            rep = certify_bijective_activation(layer)
        layer_reports.append(rep)
    if any(r.verdict == VERDICT_COUNTEREXAMPLE for r in layer_reports):
        verdict = VERDICT_COUNTEREXAMPLE
    elif all(r.verdict == VERDICT_CERTIFIED for r in layer_reports):
        verdict = VERDICT_CERTIFIED
    else:
        verdict = "NoCounterexampleFound"
    report = {
        "command": "certify",
        "mode": cfg.mode,
        "trials": cfg.trials,
        "seed": cfg.seed,
        "verdict": verdict,
        "layers": [serialize.cert_report_to_obj(r) for r in layer_reports],
    }
    serialize.write_json(report, _report_path(cfg, "report.json"))
    return 2 if verdict == VERDICT_COUNTEREXAMPLE else 0


def _run_lift(cfg: RunConfig) -> int:
    net = serialize.load_network(cfg.net)
    mode = "relu" if cfg.mode == "relu" else "injective"
    result = lift_to_injective(net, mode=mode, alpha=cfg.alpha, seed=cfg.seed)
    serialize.save_network(result.network, _report_path(cfg, "network.json"))
    report = {
        "command": "lift",
        "mode": mode,
        "alpha": cfg.alpha,
        "seed": cfg.seed,
        "eps0": result.eps0,
        "closeness_bound_factor": 5.0 * result.eps0,
        "order_in": result.n,
        "order_out": result.n_total,
        "reduction_kind": result.reduction.kind,
        "row_orthonormality_defect": result.reduction.row_orthonormality_defect(),
    }
    serialize.write_json(report, _report_path(cfg, "report.json"))
    return 0


def _invert_outputs(cfg: RunConfig, u, trace, extra=None) -> dict:
    serialize.write_grid_function_csv(u, _report_path(cfg, "result.csv"))
    serialize.write_trace_csv(trace, _report_path(cfg, "trace.csv"))
    report = {
        "command": cfg.command,
        "method": cfg.method,
        "tol": cfg.tol,
        "seed": cfg.seed,
        "converged": trace.converged,
        "iterations": trace.iterations,
        "residual_L2": trace.residuals_l2[-1] if trace.residuals_l2 else None,
        "residual_H1": trace.residuals_h1[-1] if trace.residuals_h1 else None,
    }
    if extra:
        report.update(extra)
    return report


def _run_invert(cfg: RunConfig) -> int:
    fallback_grid = Grid(0.0, 1.0, cfg.grid_size)
    obj = serialize.read_json(cfg.op)
    op = serialize.operator_from_obj(obj, None if "grid" in obj else fallback_grid)
    z = serialize.read_grid_function_csv(cfg.target, op.grid)
    if cfg.method == "banach":
        try:
            u, trace = invert_banach(op, z, tol=cfg.tol, max_iter=200)
        except DivergenceError as err:
            report = _invert_outputs(
                cfg,
                GridFunction(op.grid, np.zeros((op.channels, op.grid.size))),
                err.trace,
                {"outcome": "Diverged", "detail": str(err)},
            )
            serialize.write_json(report, _report_path(cfg, "report.json"))
            return 2
        report = _invert_outputs(
            cfg, u, trace, {"outcome": "Converged" if trace.converged else "MaxIterationsExceeded"}
        )
        serialize.write_json(report, _report_path(cfg, "report.json"))
        return 0 if trace.converged else 2
    # atlas route
    if not cfg.anchors:
        raise UsageError("--method atlas requires --anchors DIR")
    if os.path.isfile(os.path.join(cfg.anchors, "atlas.json")):
        atlas = serialize.load_atlas(cfg.anchors, op)
    else:
        paths = sorted(glob.glob(os.path.join(cfg.anchors, "*.csv")))
        if not paths:
            raise UsageError(f"no anchor CSV files under {cfg.anchors}")
        inputs = [serialize.read_grid_function_csv(p, op.grid) for p in paths]
        atlas = build_atlas(op, inputs)
    try:
        u, trace = global_invert(atlas, op, z, tol=cfg.tol, max_iter=200)
    except DivergenceError as err:
        report = _invert_outputs(
            cfg,
            GridFunction(op.grid, np.zeros((op.channels, op.grid.size))),
            err.trace,
            {"outcome": "OutOfBasin", "detail": str(err)},
        )
        serialize.write_json(report, _report_path(cfg, "report.json"))
        return 2
    extra = {
        "outcome": "Converged" if trace.converged else "MaxIterationsExceeded",
        "cell": trace.meta.get("cell"),
        "anchor": trace.meta.get("anchor"),
        "fallback": trace.meta.get("fallback"),
    }
    report = _invert_outputs(cfg, u, trace, extra)
    serialize.write_json(report, _report_path(cfg, "report.json"))
    return 0 if trace.converged else 2


def _run_truncate(cfg: RunConfig) -> int:
    obj = serialize.read_json(cfg.op)
    kobj = obj.get("kernel", obj)
    if kobj.get("kind") != "linear_table":
        raise UsageError("truncate expects a linear_table kernel file")
    if "grid" in obj:
        grid = serialize.grid_from_obj(obj["grid"])
    else:
        grid = Grid(0.0, 1.0, cfg.grid_size)
    table = kobj["table"]
    if isinstance(table, (int, float)):
        value = float(table)
        kernel = lambda x, y: np.full(np.broadcast_shapes(np.shape(x), np.shape(y)), value)
    else:
        arr = np.asarray(table, dtype=float)
        kernel = lambda x, y: arr
    basis = BasisSpec("fourier", (grid.a, grid.b))
    result = truncate_kernel(kernel, grid, basis, cfg.rank)
    net = FiniteRankNetwork([result.layer])
    serialize.save_network(net, _report_path(cfg, "network.json"))
    report = {
        "command": "truncate",
        "rank": cfg.rank,
        "hs_tail": result.hs_tail,
        "tail_clamped": result.tail_clamped,
    }
    serialize.write_json(report, _report_path(cfg, "report.json"))
    return 0


def _run_demo(cfg: RunConfig) -> int:
    if cfg.demo_name != "volterra":
        raise UsageError(f"unknown demo {cfg.demo_name!r}; available: volterra")
    grid = Grid(0.0, 1.0, cfg.grid_size)
    op = NonlinearIntegralOperator(grid, VolterraKernel(1.0, "none"), w=1.0)
    z = GridFunction.from_callable(grid, lambda x: 1.0 + x)
    u, trace = invert_banach(op, z, tol=cfg.tol, max_iter=200)
    # F(u) = u(x) + integral of u over [0, x]; the target 1 + x comes from
    # the constant function 1, and the causal trapezoid integrates constants
    # exactly, so the discrete answer matches the closed form.
    max_err = float(np.max(np.abs(u.values - 1.0)))
    report = _invert_outputs(
        cfg, u, trace, {"demo": "volterra", "max_error_vs_closed_form": max_err}
    )
    report["method"] = "banach"
    serialize.write_json(report, _report_path(cfg, "report.json"))
    return 0 if trace.converged and max_err <= 1e-6 else 2


_HANDLERS = {
    "certify": _run_certify,
    "lift": _run_lift,
    "invert": _run_invert,
    "truncate": _run_truncate,
    "demo": _run_demo,
}


def run(cfg: RunConfig) -> int:
    return _HANDLERS[cfg.command](cfg)


def main(argv: Optional[List[str]] = None) -> int:
    args = list(sys.argv[1:]) if argv is None else list(argv)
    try:
        cfg = parse_config(args)
    except UsageError as err:
        print(str(err), file=sys.stderr)
        return 64
    except SystemExit as err:  # argparse --help
        return int(err.code or 0)
    try:
        return run(cfg)
    except UsageError as err:
        print(str(err), file=sys.stderr)
        return 64
    except InjopError as err:
        print(f"{type(err).__name__}: {err}", file=sys.stderr)
        return 1
    except Exception as err:  # faults are distinct from negatives
        print(f"{type(err).__name__}: {err}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
