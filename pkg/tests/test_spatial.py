import math

import numpy as np
import pytest

from povnet.errors import EmptyUnitError, InvalidCoordinateError
from povnet.spatial import (
    EARTH_RADIUS_KM,
    Level,
    SpatialHierarchy,
    haversine_km,
    pairwise_distance_matrix,
)


# ── haversine ────────────────────────────────────────────────────────


def test_haversine_identity():
    assert haversine_km((14.0, -17.0), (14.0, -17.0)) == 0.0


def test_haversine_antipodal_on_equator():
    # half the circumference, analytically pi * R
    assert haversine_km((0.0, 0.0), (0.0, 180.0)) == pytest.approx(
        math.pi * EARTH_RADIUS_KM, abs=1e-6
    )


def test_haversine_fixed_pair():
    # frozen from an independent great-circle calculator (Vincenty sphere
    # formula at 40-digit precision, R = 6371.0)
    d = haversine_km((14.6937, -17.4441), (14.7886, -16.9246))
    assert d == pytest.approx(56.85230134985199, abs=1e-6)


def test_haversine_symmetry_random():
    rng = np.random.default_rng(42)
    for _ in range(500):
        a = (rng.uniform(-90, 90), rng.uniform(-180, 180))
        b = (rng.uniform(-90, 90), rng.uniform(-180, 180))
        assert abs(haversine_km(a, b) - haversine_km(b, a)) < 1e-9


def test_haversine_triangle_inequality_random():
    rng = np.random.default_rng(7)
    for _ in range(1000):
        pts = [(rng.uniform(-90, 90), rng.uniform(-180, 180)) for _ in range(3)]
        ab = haversine_km(pts[0], pts[1])
        bc = haversine_km(pts[1], pts[2])
        ac = haversine_km(pts[0], pts[2])
        assert ac <= ab + bc + 1e-6


@pytest.mark.parametrize("bad", [(91.0, 0.0), (-91.0, 0.0), (0.0, 181.0),
                                 (0.0, -180.5), (float("nan"), 0.0),
                                 (0.0, float("inf"))])
def test_haversine_rejects_bad_coordinates(bad):
    with pytest.raises(InvalidCoordinateError):
        haversine_km(bad, (0.0, 0.0))
    with pytest.raises(InvalidCoordinateError):
        haversine_km((0.0, 0.0), bad)


# ── centroids ────────────────────────────────────────────────────────


def test_centroid_singleton_region():
    h = SpatialHierarchy.from_site_rows([("S1", "A1", "R1", 15.0, -16.0)])
    assert h.unit_centroid(Level.REGION, "R1") == (15.0, -16.0)


def test_centroid_midpoint():
    h = SpatialHierarchy.from_site_rows([
        ("S1", "A1", "R1", 10.0, -10.0),
        ("S2", "A1", "R1", 12.0, -14.0),
    ])
    assert h.unit_centroid(Level.REGION, "R1") == pytest.approx((11.0, -12.0))


def test_centroid_three_sites_mean():
    h = SpatialHierarchy.from_site_rows([
        ("S1", "A1", "R1", 10.0, -10.0),
        ("S2", "A1", "R1", 11.0, -11.0),
        ("S3", "A1", "R1", 15.0, -18.0),
    ])
    assert h.unit_centroid(Level.REGION, "R1") == pytest.approx((12.0, -13.0))


def test_centroid_identical_points_exact():
    h = SpatialHierarchy.from_site_rows([
        (f"S{i}", "A1", "R1", 13.25, -15.75) for i in range(1, 6)
    ])
    assert h.unit_centroid(Level.REGION, "R1") == (13.25, -15.75)


def test_centroid_site_is_own_coordinates(h_two_regions):
    assert h_two_regions.unit_centroid(Level.SITE, "S3") == (15.0, -16.0)


def test_centroid_empty_unit_errors(h_two_regions):
    # white-box: fabricate a region with no contained sites
    h_two_regions._units[Level.REGION]["R9"] = h_two_regions.unit(Level.REGION, "R1")
    with pytest.raises(EmptyUnitError):
        h_two_regions.unit_centroid(Level.REGION, "R9")


def test_centroid_override(h_two_regions):
    h_two_regions.set_centroid_override(Level.REGION, "R1", (14.5, -17.5))
    assert h_two_regions.unit_centroid(Level.REGION, "R1") == (14.5, -17.5)


# ── hierarchy bookkeeping ────────────────────────────────────────────


def test_site_counts(h_nested):
    assert h_nested.site_count(Level.REGION, "R1") == 4
    assert h_nested.site_count(Level.REGION, "R2") == 1
    assert h_nested.site_count(Level.ARRONDISSEMENT, "A1") == 2
    assert h_nested.site_count(Level.SITE, "S1") == 1
    # region count equals sum over its arrondissements
    assert (h_nested.site_count(Level.ARRONDISSEMENT, "A1")
            + h_nested.site_count(Level.ARRONDISSEMENT, "A2")) == 4


def test_ordering_is_lexicographic(h_nested):
    assert h_nested.ids(Level.SITE) == ("S1", "S2", "S3", "S4", "S5")
    assert h_nested.ids(Level.ARRONDISSEMENT) == ("A1", "A2", "A3")
    assert [h_nested.index_of(Level.ARRONDISSEMENT, a) for a in ("A1", "A2", "A3")] == [0, 1, 2]


def test_parent_index(h_nested):
    np.testing.assert_array_equal(
        h_nested.parent_index(Level.SITE, Level.REGION), [0, 0, 0, 0, 1]
    )
    np.testing.assert_array_equal(
        h_nested.parent_index(Level.ARRONDISSEMENT, Level.REGION), [0, 0, 1]
    )


def test_duplicate_site_rejected():
    with pytest.raises(ValueError, match="S1"):
        SpatialHierarchy.from_site_rows([
            ("S1", "A1", "R1", 10.0, -10.0),
            ("S1", "A2", "R1", 11.0, -11.0),
        ])


def test_arrondissement_in_two_regions_rejected():
    with pytest.raises(ValueError, match="A1"):
        SpatialHierarchy.from_site_rows([
            ("S1", "A1", "R1", 10.0, -10.0),
            ("S2", "A1", "R2", 11.0, -11.0),
        ])


# ── distance matrix ──────────────────────────────────────────────────


def test_distance_matrix_single_unit():
    h = SpatialHierarchy.from_site_rows([("S1", "A1", "R1", 15.0, -16.0)])
    d = pairwise_distance_matrix(h, Level.REGION)
    assert d.shape == (1, 1)
    assert d[0, 0] == 0.0


def test_distance_matrix_two_units(h_two_regions):
    d = pairwise_distance_matrix(h_two_regions, Level.REGION)
    expected = haversine_km(
        h_two_regions.unit_centroid(Level.REGION, "R1"),
        h_two_regions.unit_centroid(Level.REGION, "R2"),
    )
    assert d[0, 1] == pytest.approx(expected, abs=1e-12)
    assert d[1, 0] == d[0, 1]


def test_distance_matrix_matches_elementwise(h_nested):
    d = pairwise_distance_matrix(h_nested, Level.ARRONDISSEMENT)
    ids = h_nested.ids(Level.ARRONDISSEMENT)
    for i, a in enumerate(ids):
        for j, b in enumerate(ids):
            expected = haversine_km(
                h_nested.unit_centroid(Level.ARRONDISSEMENT, a),
                h_nested.unit_centroid(Level.ARRONDISSEMENT, b),
            )
            assert d[i, j] == pytest.approx(expected, abs=1e-12)


def test_distance_matrix_diagonal_exactly_zero(h_nested):
    for level in (Level.SITE, Level.ARRONDISSEMENT, Level.REGION):
        d = pairwise_distance_matrix(h_nested, level)
        assert np.all(np.diag(d) == 0.0)
