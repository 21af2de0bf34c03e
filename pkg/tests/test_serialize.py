"""File formats: canonical JSON, grid CSV, traces, and round trips."""

import os

import numpy as np
import pytest
from numpy.testing import assert_allclose

from injop.errors import UsageError
from injop.finite_rank import Activation, FiniteRankLayer, FiniteRankNetwork
from injop.funcspace import BasisSpec, Grid, GridFunction, SpectralCoeffs
from injop.nonlin import (
    InversionTrace,
    NonlinearIntegralOperator,
    SigmoidSumKernel,
    SoftmaxAttentionKernel,
    VolterraKernel,
    WireKernel,
    invert_banach,
)
from injop.atlas import build_atlas
from injop.serialize import (
    TRACE_HEADER,
    canonical_json,
    format_float,
    kernel_from_obj,
    kernel_to_obj,
    load_atlas,
    load_network,
    load_operator,
    read_grid_function_csv,
    read_json,
    save_atlas,
    save_network,
    save_operator,
    write_grid_function_csv,
    write_json,
    write_trace_csv,
)

BASIS = BasisSpec("fourier", (0.0, 1.0))


class TestFloats:
    def test_round_trip_precision(self):
        for x in (0.1, 1.0 / 3.0, -2.5e-300, 7.1e17, 0.0):
            assert float(format_float(x)) == x

    def test_non_finite_rejected(self):
        for bad in (np.inf, -np.inf, np.nan):
            with pytest.raises(ValueError):
                format_float(bad)

    def test_canonical_json_stable(self):
        obj = {"b": 1.5, "a": [1.0 / 3.0, 2]}
        assert canonical_json(obj) == canonical_json(obj)
        assert "0.33333333333333331" in canonical_json(obj)


def random_network(rng, n=3):
    hidden = FiniteRankLayer(
        d_in=1, d_out=2, n=n,
        c=rng.standard_normal((n, n, 2, 1)),
        bias=SpectralCoeffs(BASIS, n, rng.standard_normal((2, n))),
        activation=Activation("leaky_relu", 0.3),
    )
    final = FiniteRankLayer(
        d_in=2, d_out=1, n=n,
        c=rng.standard_normal((n, n, 1, 2)),
        bias=SpectralCoeffs(BASIS, n, rng.standard_normal((1, n))),
    )
    return FiniteRankNetwork([hidden, final])


class TestNetworkFiles:
    def test_round_trip_bit_exact(self, tmp_path):
        rng = np.random.default_rng(81)
        net = random_network(rng)
        path = str(tmp_path / "net.json")
        save_network(net, path)
        back = load_network(path)
        assert len(back.layers) == 2
        for a, b in zip(net.layers, back.layers):
            assert np.array_equal(a.c, b.c)
            assert np.array_equal(a.bias.coeffs, b.bias.coeffs)
            assert a.activation == b.activation
        path2 = str(tmp_path / "net2.json")
        save_network(back, path2)
        with open(path, "rb") as fh1, open(path2, "rb") as fh2:
            assert fh1.read() == fh2.read()

    def test_file_ends_with_newline(self, tmp_path):
        path = str(tmp_path / "net.json")
        save_network(random_network(np.random.default_rng(0)), path)
        with open(path, "rb") as fh:
            assert fh.read().endswith(b"\n")


class TestGridCsv:
    def test_round_trip(self, tmp_path):
        g = Grid(0.0, 1.0, 65)
        rng = np.random.default_rng(82)
        f = GridFunction(g, rng.standard_normal((2, 65)))
        path = str(tmp_path / "f.csv")
        write_grid_function_csv(f, path)
        with open(path) as fh:
            assert fh.readline().strip() == "x,ch0,ch1"
        back = read_grid_function_csv(path)
        assert back.grid.size == 65
        assert_allclose(back.values, f.values, atol=0)

    def test_grid_cross_check(self, tmp_path):
        g = Grid(0.0, 1.0, 33)
        f = GridFunction(g, np.zeros(33))
        path = str(tmp_path / "f.csv")
        write_grid_function_csv(f, path)
        read_grid_function_csv(path, grid=g)
        with pytest.raises(Exception):
            read_grid_function_csv(path, grid=Grid(0.0, 1.0, 32))

    def test_bad_header_is_usage_error(self, tmp_path):
        path = str(tmp_path / "bad.csv")
        with open(path, "w") as fh:
            fh.write("time,value\n0,1\n")
        with pytest.raises(UsageError):
            read_grid_function_csv(path)


class TestTraceCsv:
    def test_layout(self, tmp_path):
        trace = InversionTrace(
            residuals_l2=[1.0, 0.5, 0.25],
            residuals_h1=[2.0, 1.0, 0.5],
            ratios=[0.5, 0.5],
            converged=True,
            iterations=3,
        )
        path = str(tmp_path / "trace.csv")
        write_trace_csv(trace, path)
        lines = open(path).read().splitlines()
        assert lines[0] == TRACE_HEADER
        assert len(lines) == 4
        first = lines[1].split(",")
        assert first[0] == "1" and first[3] == ""
        assert float(lines[2].split(",")[3]) == 0.5


class TestKernels:
    @pytest.mark.parametrize("kernel", [
        SigmoidSumKernel([(0.4, 1.0, -0.2)], signature="u(y)"),
        SigmoidSumKernel([(0.2, 2.0, 0.0), (0.1, -1.0, 0.5)], signature="u(x)"),
        WireKernel(3.0, [(0.5, 1.0, 0.1)], signature="u(y)"),
        VolterraKernel(base=2.0, nonlinearity="sigmoid"),
        VolterraKernel(),
        SoftmaxAttentionKernel([[1.0, 0.2], [0.0, 1.0]], [[1.0, 0.0], [0.3, 1.0]]),
    ])
    def test_kernel_object_round_trip(self, kernel):
        obj = kernel_to_obj(kernel)
        back = kernel_from_obj(obj)
        assert canonical_json(kernel_to_obj(back)) == canonical_json(obj)
        assert back.kind == kernel.kind

    def test_callable_table_rejected(self):
        from injop.nonlin import LinearTableKernel

        with pytest.raises(TypeError):
            kernel_to_obj(LinearTableKernel(lambda x, y: x + y))

    def test_dense_table_round_trip(self, tmp_path):
        from injop.nonlin import LinearTableKernel

        g = Grid(0.0, 1.0, 17)
        rng = np.random.default_rng(83)
        table = rng.standard_normal((17, 17))
        op = NonlinearIntegralOperator(g, LinearTableKernel(table), w=1.5)
        path = str(tmp_path / "op.json")
        save_operator(op, path)
        back = load_operator(path)
        u = GridFunction(g, rng.standard_normal(17))
        assert_allclose(back.apply(u).values, op.apply(u).values, atol=0)


class TestOperatorFiles:
    def test_round_trip_with_bias_and_field(self, tmp_path):
        g = Grid(0.0, 1.0, 33)
        rng = np.random.default_rng(84)
        kern = SigmoidSumKernel([(0.3, 1.0, 0.0)], signature="u(y)")
        op = NonlinearIntegralOperator(
            g, kern,
            w=1.0 + 0.1 * np.sin(2 * np.pi * g.nodes),
            bias=GridFunction(g, rng.standard_normal(33)),
        )
        path = str(tmp_path / "op.json")
        save_operator(op, path)
        back = load_operator(path)
        u = GridFunction(g, rng.standard_normal(33))
        assert_allclose(back.apply(u).values, op.apply(u).values, atol=0)

    def test_grid_mismatch_detected(self, tmp_path):
        g = Grid(0.0, 1.0, 33)
        op = NonlinearIntegralOperator(g, VolterraKernel())
        path = str(tmp_path / "op.json")
        save_operator(op, path)
        with pytest.raises(Exception):
            load_operator(path, grid=Grid(0.0, 1.0, 65))


class TestAtlasFiles:
    def test_save_and_reload(self, tmp_path):
        g = Grid(0.0, 1.0, 65)
        kern = SigmoidSumKernel([(0.4, 1.0, 0.0)], signature="u(y)")
        op = NonlinearIntegralOperator(g, kern)
        training = [
            GridFunction(g, np.zeros(65)),
            GridFunction(g, np.full(65, 1.5)),
        ]
        atlas = build_atlas(op, training, ell0=3, eps1=0.25)
        d = str(tmp_path / "atlas")
        save_atlas(atlas, d)
        assert os.path.exists(os.path.join(d, "atlas.json"))
        meta = read_json(os.path.join(d, "atlas.json"))
        assert meta["ell0"] == 3
        back = load_atlas(d, op)
        assert len(back.anchors) == len(atlas.anchors)
        assert back.cell_map == atlas.cell_map
        for a, b in zip(atlas.anchors, back.anchors):
            assert_allclose(b.v.values, a.v.values, atol=1e-15)
