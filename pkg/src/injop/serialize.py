"""Text serialization: canonical JSON and CSV writers plus their readers.

Every float is printed with 17 significant digits, so writing the same
object twice yields byte-identical files and numeric round trips are
bit-exact.  Dictionaries keep insertion order; nothing here depends on the
platform.
"""

from __future__ import annotations

import json
import math
import os
from typing import Any, Dict, List, Optional, Sequence

import numpy as np

from .atlas import Atlas, build_atlas
from .certify import CertReport
from .errors import DimensionError, UsageError
from .finite_rank import Activation, FiniteRankLayer, FiniteRankNetwork
from .funcspace import BasisSpec, Grid, GridFunction, SpectralCoeffs
from .nonlin import (
    InversionTrace,
    KernelBase,
    LinearTableKernel,
    NonlinearIntegralOperator,
    SigmoidSumKernel,
    SoftmaxAttentionKernel,
    VolterraKernel,
    WireKernel,
)


def format_float(x: float) -> str:
    """17-significant-digit decimal form; round-trips any finite double."""
    x = float(x)
    if not math.isfinite(x):
        raise ValueError(f"cannot serialize non-finite value {x!r}")
    return f"{x:.17g}"


def canonical_json(obj: Any) -> str:
    """Deterministic JSON text with floats via :func:`format_float`."""
    pieces: List[str] = []
    _write_json(obj, pieces)
    return "".join(pieces)


def _write_json(obj: Any, out: List[str]):
    if isinstance(obj, dict):
        out.append("{")
        for i, (key, val) in enumerate(obj.items()):
            if i:
                out.append(",")
            out.append(json.dumps(str(key)))
            out.append(":")
            _write_json(val, out)
        out.append("}")
    elif isinstance(obj, (list, tuple)) or isinstance(obj, np.ndarray):
        out.append("[")
        seq = obj.tolist() if isinstance(obj, np.ndarray) else obj
        for i, val in enumerate(seq):
            if i:
                out.append(",")
            _write_json(val, out)
        out.append("]")
    elif isinstance(obj, bool) or isinstance(obj, np.bool_):
        out.append("true" if obj else "false")
    elif isinstance(obj, (int, np.integer)):
        out.append(str(int(obj)))
    elif isinstance(obj, (float, np.floating)):
        out.append(format_float(obj))
    elif isinstance(obj, str):
        out.append(json.dumps(obj))
    elif obj is None:
        out.append("null")
    else:
        raise TypeError(f"cannot serialize {type(obj).__name__}")


def write_json(obj: Any, path: str):
    with open(path, "w") as f:
        f.write(canonical_json(obj))
        f.write("\n")


def read_json(path: str) -> Any:
    with open(path) as f:
        return json.load(f)


# ---------------------------------------------------------------------------
# finite-rank networks

def basis_to_obj(basis: BasisSpec) -> Dict[str, Any]:
    return {"kind": basis.kind, "interval": [basis.interval[0], basis.interval[1]]}


def basis_from_obj(obj: Dict[str, Any]) -> BasisSpec:
    return BasisSpec(obj["kind"], tuple(float(t) for t in obj["interval"]))


def _activation_to_obj(act: Activation) -> Dict[str, Any]:
    out: Dict[str, Any] = {"kind": act.kind}
    if act.a is not None:
        out["a"] = float(act.a)
    return out


def _activation_from_obj(obj: Dict[str, Any]) -> Activation:
    a = obj.get("a")
    return Activation(obj["kind"], None if a is None else float(a))


def network_to_obj(net: FiniteRankNetwork) -> Dict[str, Any]:
    layers = []
    for layer in net.layers:
        layers.append(
            {
                "d_in": layer.d_in,
                "d_out": layer.d_out,
                "activation": _activation_to_obj(layer.activation),
                "C": layer.c,
                "bias": layer.bias.coeffs,
            }
        )
    return {"basis": basis_to_obj(net.basis), "N": net.n, "layers": layers}


def network_from_obj(obj: Dict[str, Any]) -> FiniteRankNetwork:
    basis = basis_from_obj(obj["basis"])
    n = int(obj["N"])
    layers = []
    for lobj in obj["layers"]:
        d_in = int(lobj["d_in"])
        d_out = int(lobj["d_out"])
        c = np.asarray(lobj["C"], dtype=float)
        bias = SpectralCoeffs(basis, n, np.asarray(lobj["bias"], dtype=float))
        layers.append(
            FiniteRankLayer(
                d_in=d_in,
                d_out=d_out,
                n=n,
                c=c,
                bias=bias,
                activation=_activation_from_obj(lobj["activation"]),
            )
        )
    return FiniteRankNetwork(layers)


def save_network(net: FiniteRankNetwork, path: str):
    write_json(network_to_obj(net), path)


def load_network(path: str) -> FiniteRankNetwork:
    return network_from_obj(read_json(path))


# ---------------------------------------------------------------------------
# certification reports

def cert_report_to_obj(report: CertReport) -> Dict[str, Any]:
    obj: Dict[str, Any] = {
        "verdict": report.verdict,
        "sigma_min": float(report.sigma_min),
        "sigma_max": float(report.sigma_max),
        "trials": int(report.trials),
    }
    if report.seed is not None:
        obj["seed"] = int(report.seed)
    if report.witness is not None:
        v1, v2 = report.witness
        obj["witness"] = {"v1": v1.coeffs, "v2": v2.coeffs}
    obj["bijective_on_span"] = bool(report.bijective_on_span)
    return obj


# ---------------------------------------------------------------------------
# grid functions as CSV

def write_grid_function_csv(f: GridFunction, path: str):
    """Header x,ch0,ch1,...; one row per node; 17 significant digits."""
    header = "x," + ",".join(f"ch{c}" for c in range(f.channels))
    lines = [header]
    for i, x in enumerate(f.grid.nodes):
        cells = [format_float(x)] + [format_float(v) for v in f.values[:, i]]
        lines.append(",".join(cells))
    with open(path, "w") as fh:
        fh.write("\n".join(lines))
        fh.write("\n")


def read_grid_function_csv(path: str, grid: Optional[Grid] = None) -> GridFunction:
    """Rebuild a grid function; the grid is inferred from the x column
    unless one is supplied (then the nodes must agree)."""
    with open(path) as fh:
        lines = [ln.strip() for ln in fh if ln.strip()]
    if not lines or not lines[0].startswith("x"):
        raise UsageError(f"{path}: expected a grid-function CSV with an x,ch0,... header")
    rows = [[float(tok) for tok in ln.split(",")] for ln in lines[1:]]
    data = np.asarray(rows, dtype=float)
    if data.ndim != 2 or data.shape[1] < 2:
        raise UsageError(f"{path}: need at least one channel column")
    xs = data[:, 0]
    if grid is None:
        grid = Grid(float(xs[0]), float(xs[-1]), len(xs))
    if len(xs) != grid.size or not np.allclose(xs, grid.nodes, atol=1e-9):
        raise DimensionError(f"{path}: node column does not match the expected grid")
    return GridFunction(grid, data[:, 1:].T.copy())


# ---------------------------------------------------------------------------
# inversion traces as CSV

TRACE_HEADER = "iteration,residual_L2,residual_H1,ratio"


def write_trace_csv(trace: InversionTrace, path: str):
    lines = [TRACE_HEADER]
    for it, rl2, rh1, ratio in trace.rows():
        cells = [str(it), format_float(rl2), format_float(rh1)]
        cells.append("" if ratio is None else format_float(ratio))
        lines.append(",".join(cells))
    with open(path, "w") as fh:
        fh.write("\n".join(lines))
        fh.write("\n")


# ---------------------------------------------------------------------------
# nonlinear operators

def _table_param_to_obj(p) -> Any:
    if callable(p):
        raise TypeError("callable kernel parameters cannot be serialized; tabulate first")
    arr = np.asarray(p, dtype=float)
    if arr.ndim == 0:
        return float(arr)
    return arr


def kernel_to_obj(kernel: KernelBase) -> Dict[str, Any]:
    if isinstance(kernel, SigmoidSumKernel):
        return {
            "kind": "sigmoid_sum",
            "signature": ["x", "y", kernel.signature],
            "terms": [
                {
                    "c": _table_param_to_obj(c),
                    "a": _table_param_to_obj(a),
                    "b": _table_param_to_obj(b),
                }
                for c, a, b in kernel.terms
            ],
        }
    if isinstance(kernel, WireKernel):
        return {
            "kind": "wire",
            "signature": ["x", "y", kernel.signature],
            "omega": float(kernel.omega),
            "terms": [
                {
                    "c": _table_param_to_obj(c),
                    "a": _table_param_to_obj(a),
                    "b": _table_param_to_obj(b),
                }
                for c, a, b in kernel.terms
            ],
        }
    if isinstance(kernel, VolterraKernel):
        sig = ["x", "y"] if kernel.nonlinearity == "none" else ["x", "y", "u(y)"]
        return {
            "kind": "volterra",
            "signature": sig,
            "base": _table_param_to_obj(kernel.base),
            "nonlinearity": kernel.nonlinearity,
        }
    if isinstance(kernel, SoftmaxAttentionKernel):
        return {
            "kind": "softmax_attention",
            "signature": ["x", "y", "u(x)", "u(y)"],
            "A": kernel.a_mat,
            "B": kernel.b_mat,
        }
    if isinstance(kernel, LinearTableKernel):
        return {
            "kind": "linear_table",
            "signature": ["x", "y"],
            "table": _table_param_to_obj(kernel._table),
        }
    raise TypeError(f"cannot serialize kernel of type {type(kernel).__name__}")


def kernel_from_obj(obj: Dict[str, Any]) -> KernelBase:
    kind = obj["kind"]
    if kind in ("sigmoid_sum", "wire"):
        sig = obj.get("signature", ["x", "y", "u(x)"])
        signature = "u(y)" if "u(y)" in sig else "u(x)"
        terms = [
            (_param_from_obj(t["c"]), _param_from_obj(t["a"]), _param_from_obj(t["b"]))
            for t in obj["terms"]
        ]
        if kind == "wire":
            return WireKernel(float(obj["omega"]), terms, signature)
        return SigmoidSumKernel(terms, signature)
    if kind == "volterra":
        return VolterraKernel(
            base=_param_from_obj(obj.get("base", 1.0)),
            nonlinearity=obj.get("nonlinearity", "none"),
        )
    if kind == "softmax_attention":
        return SoftmaxAttentionKernel(np.asarray(obj["A"], dtype=float), np.asarray(obj["B"], dtype=float))
    if kind == "linear_table":
        return LinearTableKernel(_param_from_obj(obj["table"]))
    raise UsageError(f"unknown kernel kind {kind!r}")


def _param_from_obj(p):
    if isinstance(p, (int, float)):
        return float(p)
    arr = np.asarray(p, dtype=float)
    # A dense table is only valid on the grid it was tabulated for; keep it
    # as an array and let broadcasting catch shape mismatches.
    return lambda x, y: arr


def grid_to_obj(grid: Grid) -> Dict[str, Any]:
    return {"a": grid.a, "b": grid.b, "size": grid.size}


def grid_from_obj(obj: Dict[str, Any]) -> Grid:
    return Grid(float(obj["a"]), float(obj["b"]), int(obj["size"]))


def operator_to_obj(op: NonlinearIntegralOperator) -> Dict[str, Any]:
    obj: Dict[str, Any] = {
        "grid": grid_to_obj(op.grid),
        "w": op.w_values,
        "kernel": kernel_to_obj(op.kernel),
    }
    if op.bias is not None:
        obj["bias"] = op.bias.values
    return obj


def operator_from_obj(obj: Dict[str, Any], grid: Optional[Grid] = None) -> NonlinearIntegralOperator:
    file_grid = grid_from_obj(obj["grid"]) if "grid" in obj else None
    if grid is None:
        grid = file_grid
    if grid is None:
        raise UsageError("operator file names no grid and none was supplied")
    if file_grid is not None and not grid.matches(file_grid):
        raise DimensionError("requested grid disagrees with the grid stored in the operator file")
    kernel = kernel_from_obj(obj["kernel"])
    w = obj.get("w", 1.0)
    w = float(w) if isinstance(w, (int, float)) else np.asarray(w, dtype=float)
    bias = None
    if obj.get("bias") is not None:
        bias = GridFunction(grid, np.asarray(obj["bias"], dtype=float))
    return NonlinearIntegralOperator(grid, kernel, w=w, bias=bias)


def save_operator(op: NonlinearIntegralOperator, path: str):
    write_json(operator_to_obj(op), path)


def load_operator(path: str, grid: Optional[Grid] = None) -> NonlinearIntegralOperator:
    return operator_from_obj(read_json(path), grid)


# ---------------------------------------------------------------------------
# atlases (anchor inputs as CSV files; factorizations rebuilt on load)

def save_atlas(atlas: Atlas, dirpath: str):
    os.makedirs(dirpath, exist_ok=True)
    names = []
    for anchor in atlas.anchors:
        name = f"anchor_{anchor.index:03d}.csv"
        write_grid_function_csv(anchor.v, os.path.join(dirpath, name))
        names.append(name)
    obj = {
        "ell0": atlas.ell0,
        "eps1": atlas.eps1,
        "probe_indices": [int(i) for i in atlas.probe_idx],
        "anchors": names,
        "cell_map": [
            {"cell": list(key), "anchor": idx} for key, idx in sorted(atlas.cell_map.items())
        ],
        "constants": atlas.constants,
    }
    write_json(obj, os.path.join(dirpath, "atlas.json"))


def load_atlas(dirpath: str, op: NonlinearIntegralOperator) -> Atlas:
    obj = read_json(os.path.join(dirpath, "atlas.json"))
    inputs = [
        read_grid_function_csv(os.path.join(dirpath, name), op.grid)
        for name in obj["anchors"]
    ]
    atlas = build_atlas(op, inputs, ell0=int(obj["ell0"]), eps1=float(obj["eps1"]))
    return atlas
