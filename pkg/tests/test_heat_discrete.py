"""Tests for discrete Laplacians and heat kernels."""

import asyncio

import numpy as np
import pytest

from delone_heat.config import get_settings
from delone_heat.exceptions import InvalidInputError, InvalidWeightError, KrylovConvergenceError, WindowTooSmallError
from delone_heat.exports import read_csv_rows
from delone_heat.geometry.neighbors import build_max_relation, voronoi_weights
from delone_heat.geometry.pointset import Window, generate_lattice
from delone_heat.geometry.tiling import voronoi_cells_2d
from delone_heat.heat.discrete import (
    BoundaryMode,
    KernelMethod,
    assemble,
    heat_kernel,
    heat_kernels_concurrently,
    propagate,
    truncation_certificate,
    truncation_discrepancy,
    write_kernels,
    write_operator,
)
from delone_heat.heat.oracles import z2_kernel


def _id_at(ps, x, y):
    _, row = ps.tree.query([x, y])
    return int(ps.ids[int(row)])


@pytest.fixture(scope="module")
def z2():
    """Nearest-neighbor graph of the square lattice on [-10, 10]^2."""
    ps = generate_lattice("square", 1.0, Window.centered(10.0))
    return build_max_relation(ps, 0.5)


@pytest.fixture
def weighted_op(jittered_lattice, jittered_voronoi):
    p = jittered_lattice.params
    ts = voronoi_cells_2d(jittered_lattice, p, 2.0 * p.R)
    h, b = voronoi_weights(ts, jittered_voronoi, exponent=1.0)
    return assemble(jittered_voronoi, boundary="neumann", h=h, b=b)


class TestAssembly:
    """Form matrices and boundary treatment."""

    def test_neumann_rows_sum_to_zero(self, axis_relation):
        op = assemble(axis_relation, Window.centered(3.0), BoundaryMode.NEUMANN)
        assert op.n == 49
        assert np.allclose(np.asarray(op.form.sum(axis=1)).ravel(), 0.0)

    def test_dirichlet_keeps_full_degree(self, axis_relation):
        op = assemble(axis_relation, Window.centered(3.0), BoundaryMode.DIRICHLET)
        assert np.allclose(op.form.diagonal(), 4.0)

    def test_operator_is_symmetric(self, weighted_op):
        diff = weighted_op.symmetric - weighted_op.symmetric.T
        assert abs(diff).max() < 1e-12
        assert weighted_op.weighted

    def test_empty_window(self, axis_relation):
        with pytest.raises(WindowTooSmallError):
            assemble(axis_relation, Window(center=(100.0, 100.0), half_width=1.0))

    def test_missing_vertex_measure(self, axis_relation):
        with pytest.raises(InvalidWeightError):
            assemble(axis_relation, Window.centered(2.0), h={0: 1.0})

    def test_nonpositive_edge_weight(self, axis_relation):
        b = {pair: 1.0 for pair in axis_relation.pairs}
        b[min(b)] = -1.0
        with pytest.raises(InvalidWeightError):
            assemble(axis_relation, b=b)

    def test_operator_csv(self, tmp_path, axis_relation):
        op = assemble(axis_relation, Window.centered(1.0))
        path = tmp_path / "operator.csv"
        write_operator(op, path)
        rows = read_csv_rows(path)
        # 9 diagonal entries and 12 edges in the 3 x 3 block
        assert len(rows) == 21


class TestMarkovProperties:
    """Conservation, positivity and symmetry of the semigroup."""

    @pytest.mark.parametrize("t", [0.5, 2.0, 8.0])
    def test_neumann_conserves_constants(self, weighted_op, t):
        ones = np.ones(weighted_op.n)
        assert np.allclose(propagate(weighted_op, ones, t), 1.0, atol=1e-10)

    def test_dirichlet_is_sub_markovian(self, axis_relation):
        op = assemble(axis_relation, Window.centered(3.0), BoundaryMode.DIRICHLET)
        out = propagate(op, np.ones(op.n), 3.0)
        assert np.all(out >= -1e-12)
        assert np.all(out <= 1.0 + 1e-12)
        assert out.min() < 0.9

    def test_zero_time_is_identity(self, weighted_op):
        u = np.linspace(0.0, 1.0, weighted_op.n)
        assert np.allclose(propagate(weighted_op, u, 0.0), u)

    def test_kernel_integrates_to_one(self, weighted_op):
        x = int(weighted_op.ids[weighted_op.n // 2])
        targets = [int(i) for i in weighted_op.ids]
        k = heat_kernel(weighted_op, x, targets, [1.0, 4.0])
        assert np.allclose(k.values @ weighted_op.h, 1.0, atol=1e-10)
        assert np.all(k.values >= -1e-14)

    def test_kernel_is_symmetric(self, weighted_op):
        x, y = int(weighted_op.ids[10]), int(weighted_op.ids[-10])
        forward = heat_kernel(weighted_op, x, [y], [3.0]).value(y, 3.0)
        backward = heat_kernel(weighted_op, y, [x], [3.0]).value(x, 3.0)
        assert forward == pytest.approx(backward, rel=1e-8)


class TestSolvers:
    """Agreement between solvers and with the closed form on Z^2."""

    @pytest.mark.parametrize("t", [1.0, 2.0, 4.0])
    def test_matches_bessel_product(self, z2, t):
        ps = z2.pointset
        op = assemble(z2)
        origin = _id_at(ps, 0, 0)
        offsets = [(0, 0), (1, 0), (2, 1), (3, 3)]
        targets = [_id_at(ps, m, n) for m, n in offsets]
        k = heat_kernel(op, origin, targets, [t], method=KernelMethod.DENSE_EIG)
        expected = [z2_kernel(t, m, n) for m, n in offsets]
        assert np.allclose(k.values[0], expected, rtol=1e-6, atol=1e-13)

    def test_expm_multiply_matches_bessel_far_out(self, z2):
        ps = z2.pointset
        op = assemble(z2)
        target = _id_at(ps, 6, 5)
        k = heat_kernel(op, _id_at(ps, 0, 0), [target], [1.0], method="expm_multiply")
        assert k.value(target, 1.0) == pytest.approx(z2_kernel(1.0, 6, 5), rel=1e-6)

    @pytest.mark.parametrize("method", [KernelMethod.KRYLOV, KernelMethod.EXPM_MULTIPLY])
    def test_solvers_agree_with_dense(self, weighted_op, method):
        x = int(weighted_op.ids[weighted_op.n // 3])
        targets = [int(i) for i in weighted_op.ids[::7]]
        dense = heat_kernel(weighted_op, x, targets, [0.5, 2.0, 6.0], method=KernelMethod.DENSE_EIG)
        other = heat_kernel(weighted_op, x, targets, [0.5, 2.0, 6.0], method=method)
        assert other.method is method
        assert np.allclose(other.values, dense.values, rtol=1e-7, atol=1e-11)

    def test_auto_picks_dense_for_small_windows(self, axis_relation):
        op = assemble(axis_relation)
        assert heat_kernel(op, 0, [0], [1.0]).method is KernelMethod.DENSE_EIG

    def test_krylov_iteration_cap(self, z2, monkeypatch):
        monkeypatch.setattr(get_settings(), "krylov_max_iter", 3)
        op = assemble(z2)
        with pytest.raises(KrylovConvergenceError) as info:
            heat_kernel(op, _id_at(z2.pointset, 0, 0), [0], [5.0], method=KernelMethod.KRYLOV)
        assert info.value.exit_code == 3

    def test_nonpositive_time(self, axis_relation):
        op = assemble(axis_relation)
        with pytest.raises(InvalidInputError):
            heat_kernel(op, 0, [0], [0.0])
        with pytest.raises(InvalidInputError):
            propagate(op, np.ones(op.n), -1.0)

    def test_target_outside_window(self, axis_relation):
        op = assemble(axis_relation, Window.centered(2.0))
        with pytest.raises(InvalidInputError):
            heat_kernel(op, _id_at(axis_relation.pointset, 0, 0), [0], [1.0])


class TestTruncation:
    """Dirichlet against Neumann on a kernel window."""

    def test_certificate_grows_with_time(self, axis_relation):
        ps = axis_relation.pointset
        window = Window.centered(4.0)
        origin = _id_at(ps, 0, 0)
        targets = [origin, _id_at(ps, 1, 1)]
        gaps = truncation_discrepancy(axis_relation, origin, targets, [0.5, 20.0], window=window)
        assert gaps.shape == (2, 2)
        assert gaps[0].max() < 1e-4
        assert gaps[1].max() > 1e-2

    def test_certificate_is_largest_gap(self, axis_relation):
        ps = axis_relation.pointset
        origin = _id_at(ps, 0, 0)
        window = Window.centered(4.0)
        gaps = truncation_discrepancy(axis_relation, origin, [origin], [1.0, 3.0], window=window)
        cert = truncation_certificate(axis_relation, origin, [origin], [1.0, 3.0], window=window)
        assert cert == pytest.approx(float(gaps.max()))

    def test_dirichlet_below_neumann(self, axis_relation):
        ps = axis_relation.pointset
        window = Window.centered(3.0)
        origin = _id_at(ps, 0, 0)
        pd = heat_kernel(assemble(axis_relation, window, "dirichlet"), origin, [origin], [5.0])
        pn = heat_kernel(assemble(axis_relation, window, "neumann"), origin, [origin], [5.0])
        assert pd.values[0, 0] < pn.values[0, 0]


class TestConcurrentKernels:
    """Several sources at once."""

    def test_results_sorted_and_identical(self, axis_relation):
        op = assemble(axis_relation)
        sources = [int(i) for i in op.ids[[40, 5, 90]]]
        targets = {s: [s, int(op.ids[0])] for s in sources}
        results = asyncio.run(heat_kernels_concurrently(op, sources, targets, [1.0, 2.0], max_workers=2))
        assert [k.source for k in results] == sorted(sources)
        for k in results:
            single = heat_kernel(op, k.source, targets[k.source], [1.0, 2.0])
            assert np.allclose(k.values, single.values, rtol=1e-12, atol=1e-15)

    def test_kernel_csv(self, tmp_path, axis_relation):
        op = assemble(axis_relation)
        samples = [heat_kernel(op, 0, [0, 1], [1.0, 2.0]), heat_kernel(op, 1, [1], [1.0, 2.0])]
        path = tmp_path / "heat.csv"
        extra = [{"d": float(i), "certificate": 0.0} for i in range(6)]
        write_kernels(samples, path, extra=extra)
        rows = read_csv_rows(path)
        assert len(rows) == 6
        assert list(rows[0]) == ["x_id", "y_id", "t", "p", "mode", "certificate", "d"]
        assert rows[0]["mode"] == "neumann"
        assert float(rows[-1]["d"]) == 5.0
