"""Tests for the volume doubling, Poincaré and Gaussian envelope checks."""

import math

import numpy as np
import pytest

from delone_heat.analysis import (
    DiscreteBallSpace,
    EnvelopeSample,
    MetricBallSpace,
    SpaceTag,
    admit,
    envelope_samples_discrete,
    envelope_samples_metric,
    gaussian_envelope_fit,
    poincare_scan,
    sample_centers,
    volume_doubling_scan,
    write_scatter,
)
from delone_heat.exceptions import InsufficientSamplesError, InvalidInputError, WindowTooSmallError
from delone_heat.exports import read_csv_rows
from delone_heat.geometry.neighbors import build_max_relation, ingest_relation
from delone_heat.geometry.pointset import PointSet, Window, generate_lattice
from delone_heat.graphs import CombinatorialGraph, EdgePoint, MetricGraph
from delone_heat.heat.discrete import assemble, heat_kernel
from delone_heat.heat.metric import assemble_fem, mesh, metric_heat_kernel


def _origin(rel):
    _, row = rel.pointset.tree.query([0.0, 0.0])
    return int(rel.pointset.ids[int(row)])


def _synthetic(b=0.25, amplitude=0.3, wobble=0.0):
    samples = []
    for d in range(5):
        for t in (5.0, 6.0, 7.0, 8.0, 9.0):
            mu = 4.0 * t
            scale = math.exp(wobble * math.sin(3.0 * d + t))
            p = scale * amplitude * math.exp(-b * d * d / t) / mu
            samples.append(EnvelopeSample(x=0, y=d, t=t, p=p, d=float(d), mu=mu))
    return samples


class TestVolumeDoubling:
    """Ratios of ball measures."""

    def test_square_lattice_ratios(self, axis_relation):
        space = DiscreteBallSpace(CombinatorialGraph(axis_relation))
        report = volume_doubling_scan(space, [_origin(axis_relation)], [1.0, 2.0], L=4.0)
        assert [r["ratio"] for r in report.ratios] == pytest.approx([13 / 5, 41 / 13])
        assert report.max_ratio == pytest.approx(41 / 13)
        assert report.nu_hat == pytest.approx(math.log2(41 / 13))
        assert report.passed
        assert report.excluded == 0

    def test_truncated_balls_are_excluded(self, axis_relation):
        space = DiscreteBallSpace(CombinatorialGraph(axis_relation))
        report = volume_doubling_scan(space, [_origin(axis_relation)], [1.0, 2.0, 4.0], L=8.0)
        assert report.excluded == 1
        assert len(report.ratios) == 2

    def test_all_truncated(self, axis_relation):
        space = DiscreteBallSpace(CombinatorialGraph(axis_relation))
        with pytest.raises(WindowTooSmallError):
            volume_doubling_scan(space, [0], [1.0], L=2.0)

    def test_radius_above_half_scale(self, axis_relation):
        space = DiscreteBallSpace(CombinatorialGraph(axis_relation))
        with pytest.raises(InvalidInputError):
            volume_doubling_scan(space, [0], [3.0], L=4.0)

    def test_metric_ratios(self, axis_relation):
        space = MetricBallSpace(MetricGraph(axis_relation), delta_max=0.25)
        report = volume_doubling_scan(space, [_origin(axis_relation)], [0.5, 1.0], L=2.0)
        # B_0.5 is a cross of length 2, B_1 the four full edges, B_2 adds 12 edges
        assert [r["mu_s"] for r in report.ratios] == pytest.approx([2.0, 4.0])
        assert report.ratios[1]["mu_2s"] == pytest.approx(16.0)
        assert report.space is SpaceTag.METRIC

    def test_centers_sampled_deterministically(self):
        ids = list(range(100))
        assert sample_centers(ids, 10, seed=3) == sample_centers(ids, 10, seed=3)
        assert sample_centers(ids[:4], 10, seed=3) == ids[:4]
        with pytest.raises(WindowTooSmallError):
            sample_centers([], 3, seed=0)


class TestPoincare:
    """Neumann spectral gaps of balls."""

    def test_star_ball(self, axis_relation):
        space = DiscreteBallSpace(CombinatorialGraph(axis_relation))
        report = poincare_scan(space, [_origin(axis_relation)], [1.0, 2.0])
        first = report.balls[0]
        assert first["size"] == 5
        assert first["lambda1"] == pytest.approx(1.0)
        assert first["c_P"] == pytest.approx(1.0)
        assert report.max_residual < 1e-8
        assert report.passed

    def test_disconnected_ball_excluded(self, square_lattice):
        rel = ingest_relation(square_lattice, [], 1.0)
        space = DiscreteBallSpace(CombinatorialGraph(rel))
        report = poincare_scan(space, [_origin(rel)], [1.0])
        assert report.excluded_disconnected == 1
        assert not report.passed

    def test_metric_star(self, axis_relation):
        space = MetricBallSpace(MetricGraph(axis_relation), delta_max=0.05)
        report = poincare_scan(space, [_origin(axis_relation)], [1.0])
        ball = report.balls[0]
        assert ball["lambda1"] == pytest.approx(math.pi**2 / 4.0, rel=1e-2)
        assert report.max_residual < 1e-8

    def test_combinatorial_center_must_be_vertex(self, axis_relation):
        space = DiscreteBallSpace(CombinatorialGraph(axis_relation))
        with pytest.raises(InvalidInputError):
            poincare_scan(space, [EdgePoint(0, 0.5)], [1.0])


class TestAdmission:
    """Regime filter for envelope samples."""

    def test_discrete_regime(self):
        assert admit(EnvelopeSample(0, 1, 3.0, 0.1, 2.0, 10.0), SpaceTag.DISCRETE, None, 1e-6)
        assert not admit(EnvelopeSample(0, 1, 2.0, 0.1, 2.0, 10.0), SpaceTag.DISCRETE, None, 1e-6)
        assert not admit(EnvelopeSample(0, 1, 0.8, 0.1, 0.0, 10.0), SpaceTag.DISCRETE, None, 1e-6)

    def test_metric_regime(self):
        assert admit(EnvelopeSample(0, 1, 0.02, 0.1, 2.0, 10.0), SpaceTag.METRIC, 0.1, 1e-6)
        assert not admit(EnvelopeSample(0, 1, 0.005, 0.1, 2.0, 10.0), SpaceTag.METRIC, 0.1, 1e-6)

    def test_rejections(self):
        base = {"x": 0, "y": 1, "t": 5.0, "d": 1.0, "mu": 10.0}
        assert not admit(EnvelopeSample(p=0.0, **base), SpaceTag.DISCRETE, None, 1e-6)
        assert not admit(EnvelopeSample(p=0.1, truncated=True, **base), SpaceTag.DISCRETE, None, 1e-6)
        assert not admit(EnvelopeSample(p=0.1, certificate=1e-3, **base), SpaceTag.DISCRETE, None, 1e-6)
        assert admit(EnvelopeSample(p=0.1, certificate=1e-9, **base), SpaceTag.DISCRETE, None, 1e-6)


class TestEnvelopeFit:
    """Least-squares Gaussian envelope."""

    def test_exact_gaussian(self):
        fit = gaussian_envelope_fit(_synthetic(), SpaceTag.DISCRETE)
        assert fit.b == pytest.approx(0.25)
        assert fit.c1 == pytest.approx(0.3)
        assert fit.c3 == pytest.approx(0.3)
        assert fit.spread == pytest.approx(0.0, abs=1e-9)
        assert fit.admitted == 25
        assert fit.passed

    def test_scattered_samples_are_enveloped(self):
        fit = gaussian_envelope_fit(_synthetic(wobble=0.2), SpaceTag.DISCRETE, max_spread=1.0)
        assert fit.envelope_holds
        assert fit.c1 < fit.c3
        assert 0.0 < fit.spread < 1.0
        assert fit.passed

    def test_spread_limit(self):
        fit = gaussian_envelope_fit(_synthetic(wobble=0.2), SpaceTag.DISCRETE, max_spread=0.01)
        assert fit.envelope_holds
        assert not fit.passed

    def test_distinct_slopes(self):
        fit = gaussian_envelope_fit(_synthetic(wobble=0.2), SpaceTag.DISCRETE, distinct_slopes=True)
        assert fit.distinct_slopes
        assert fit.envelope_holds
        assert fit.to_dict()["c2"] == fit.c2

    def test_growing_envelope_fails(self):
        fit = gaussian_envelope_fit(_synthetic(b=-0.25), SpaceTag.DISCRETE)
        assert fit.c2 < 0
        assert not fit.passed

    def test_too_few_samples(self):
        with pytest.raises(InsufficientSamplesError):
            gaussian_envelope_fit(_synthetic()[:5], SpaceTag.DISCRETE, min_samples=10)

    def test_scatter_csv(self, tmp_path):
        fit = gaussian_envelope_fit(_synthetic(), SpaceTag.DISCRETE)
        path = tmp_path / "ge_scatter_discrete.csv"
        write_scatter(fit, path)
        rows = read_csv_rows(path)
        assert len(rows) == 25
        assert set(rows[0]) == {"x_id", "y_id", "t", "X", "Y"}


class TestEnvelopeSamples:
    """Distances and ball measures attached to kernel values."""

    def test_discrete_samples(self, axis_relation):
        graph = CombinatorialGraph(axis_relation)
        origin = _origin(axis_relation)
        op = assemble(axis_relation)
        targets = axis_relation.neighbors(origin)
        kernel = heat_kernel(op, origin, targets, [2.0, 4.0])
        samples = envelope_samples_discrete(graph, [kernel], {origin: 1e-9})
        assert len(samples) == 8
        assert all(s.d == 1.0 for s in samples)
        assert samples[0].mu == 5.0
        assert samples[-1].mu == 13.0
        assert all(s.certificate == 1e-9 for s in samples)
        assert [s.p for s in samples] == [row["p"] for row in kernel.rows()]

    def test_gaussian_bounds_on_the_square_lattice(self):
        ps = generate_lattice("square", 1.0, Window.centered(10.0))
        rel = build_max_relation(ps, 0.5)
        graph = CombinatorialGraph(rel)
        origin = _origin(rel)
        targets = [y for y in rel.pointset.ids if 0 < abs(ps.point(int(y))).sum() <= 4]
        kernel = heat_kernel(assemble(rel), origin, [int(y) for y in targets], [5.0, 6.0, 8.0])
        fit = gaussian_envelope_fit(envelope_samples_discrete(graph, [kernel]), SpaceTag.DISCRETE)
        assert fit.c2 > 0
        assert fit.passed

    def test_metric_samples_follow_kernel_rows(self):
        coords = np.array([[0.0, 0.0], [1.0, 0.0], [0.0, 1.0], [-1.0, 0.0]])
        ps = PointSet(coords=coords, window=Window.centered(2.0))
        mg = MetricGraph(ingest_relation(ps, [(0, 1), (0, 2), (0, 3)], 1.0))
        gm = mesh(mg, 0.25)
        kernel = metric_heat_kernel(assemble_fem(gm), 0, [1, 2, 5, 8], [0.1, 0.3])
        samples = envelope_samples_metric(gm, [kernel])
        assert [(s.y, s.t, s.p) for s in samples] == [(r["y_id"], r["t"], r["p"]) for r in kernel.rows()]
        assert samples[0].d == pytest.approx(1.0)
        assert all(s.regime for s in samples)
