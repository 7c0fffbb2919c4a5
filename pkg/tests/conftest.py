import pytest

from povnet.spatial import SpatialHierarchy


def hierarchy_from(rows):
    return SpatialHierarchy.from_site_rows(rows)


@pytest.fixture
def h_two_regions():
    """2 regions, 1 arrondissement each, 2 sites each."""
    return hierarchy_from([
        ("S1", "A1", "R1", 14.0, -17.0),
        ("S2", "A1", "R1", 14.2, -17.2),
        ("S3", "A2", "R2", 15.0, -16.0),
        ("S4", "A2", "R2", 15.2, -16.2),
    ])


@pytest.fixture
def h_nested():
    """1 region with 2 arrondissements (2 + 2 sites) and a second region
    with 1 arrondissement of 1 site; exercises uneven site counts."""
    return hierarchy_from([
        ("S1", "A1", "R1", 14.0, -17.0),
        ("S2", "A1", "R1", 14.1, -17.1),
        ("S3", "A2", "R1", 14.5, -16.5),
        ("S4", "A2", "R1", 14.6, -16.6),
        ("S5", "A3", "R2", 15.5, -15.5),
    ])
