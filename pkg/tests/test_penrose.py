"""Tests for the pentagrid Penrose generator."""

import math

import numpy as np
import pytest

from delone_heat.exceptions import InvalidInputError
from delone_heat.geometry.neighbors import ingest_relation
from delone_heat.geometry.penrose import (
    generate_penrose,
    is_generic,
    normalize_offsets,
    penrose_edge_pairs,
    pentagrid_rhombi,
    vertex_position,
)
from delone_heat.geometry.pointset import Window, generate_lattice

THIN_DIAGONAL = 2.0 * math.sin(math.pi / 10.0)


@pytest.fixture(scope="module")
def patch():
    return generate_penrose(6.0, None, seed=5)


class TestOffsets:
    """Pentagrid offsets."""

    def test_normalized_to_sum_zero(self):
        gamma = normalize_offsets([0.1, 0.2, 0.3, 0.4, 0.5])
        assert gamma.sum() == pytest.approx(0.0, abs=1e-15)
        assert gamma[0] == pytest.approx(-0.2)

    def test_wrong_length_rejected(self):
        with pytest.raises(InvalidInputError):
            normalize_offsets([0.1, 0.2])

    def test_zero_offsets_not_generic(self):
        assert not is_generic(np.zeros(5), 3.0)

    def test_zero_offsets_are_redrawn(self):
        ps = generate_penrose(3.0, [0.0] * 5, seed=2)
        assert ps.provenance["redraws"] >= 1
        assert is_generic(np.asarray(ps.provenance["offsets"]), 3.0)

    def test_nonpositive_radius(self):
        with pytest.raises(InvalidInputError):
            generate_penrose(0.0, None, seed=1)


class TestPatch:
    """Geometry of a generated patch."""

    def test_deterministic(self, patch):
        again = generate_penrose(6.0, None, seed=5)
        assert np.array_equal(again.coords, patch.coords)

    def test_offsets_recorded(self, patch):
        assert sum(patch.provenance["offsets"]) == pytest.approx(0.0, abs=1e-12)
        assert patch.provenance["generator"] == "penrose"

    def test_min_distance_is_thin_rhombus_diagonal(self, patch):
        dist, _ = patch.tree.query(patch.coords, k=2)
        assert dist[:, 1].min() == pytest.approx(THIN_DIAGONAL, rel=1e-9)

    def test_points_cover_the_window(self, patch):
        grid = generate_lattice("square", 0.25, Window.centered(5.0)).coords
        gaps, _ = patch.tree.query(grid)
        assert gaps.max() < 1.0

    def test_rhombi_have_unit_edges(self):
        gamma = normalize_offsets([0.13, 0.41, 0.07, 0.29, 0.55])
        rhombi = pentagrid_rhombi(gamma, 2.0)
        assert rhombi
        for rh in rhombi[:50]:
            pts = [vertex_position(v) for v in rh.vertices]
            sides = [np.linalg.norm(pts[i] - pts[(i + 1) % 4]) for i in range(4)]
            assert np.allclose(sides, 1.0)


class TestEdgePairs:
    """Rhombus edges as an ingested neighbor relation."""

    def test_edges_have_unit_length(self, patch):
        pairs = penrose_edge_pairs(patch)
        lengths = [np.linalg.norm(patch.point(a) - patch.point(b)) for a, b in pairs]
        assert np.allclose(lengths, 1.0, atol=1e-9)

    def test_interior_degrees(self, patch):
        rel = ingest_relation(patch, penrose_edge_pairs(patch), 1.0 + 1e-9)
        degrees = {rel.degree(i) for i in rel.interior_ids(1.5)}
        assert min(degrees) >= 3
        assert max(degrees) <= 7

    def test_requires_penrose_provenance(self, square_lattice):
        with pytest.raises(InvalidInputError):
            penrose_edge_pairs(square_lattice)
