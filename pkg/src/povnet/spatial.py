"""Spatial units, containment hierarchy, centroids, and great-circle distances.

The hierarchy has three levels (site -> arrondissement -> region). Every
matrix row/column assignment in the package comes from the deterministic
per-level ordering defined here (lexicographic on unit id).
"""

from __future__ import annotations

import enum
import math
from dataclasses import dataclass

import numpy as np

from .errors import EmptyUnitError, InvalidCoordinateError

EARTH_RADIUS_KM = 6371.0


class Level(enum.Enum):
    SITE = "site"
    ARRONDISSEMENT = "arrondissement"
    REGION = "region"

    @property
    def rank(self) -> int:
        """0 = finest (site), 2 = coarsest (region)."""
        return _RANK[self]

    def coarser_than(self, other: "Level") -> bool:
        return self.rank > other.rank

    @classmethod
    def parse(cls, name: str) -> "Level":
        try:
            return cls(name.strip().lower())
        except ValueError:
            raise ValueError(f"unknown spatial level {name!r}") from None


_RANK = {Level.SITE: 0, Level.ARRONDISSEMENT: 1, Level.REGION: 2}
LEVELS = (Level.SITE, Level.ARRONDISSEMENT, Level.REGION)


def _check_coordinate(lat: float, lon: float) -> None:
    if not (math.isfinite(lat) and math.isfinite(lon)):
        raise InvalidCoordinateError(f"non-finite coordinate ({lat}, {lon})")
    if not -90.0 <= lat <= 90.0:
        raise InvalidCoordinateError(f"latitude {lat} outside [-90, 90]")
    if not -180.0 <= lon <= 180.0:
        raise InvalidCoordinateError(f"longitude {lon} outside [-180, 180]")


def haversine_km(a: tuple[float, float], b: tuple[float, float]) -> float:
    """Great-circle distance in km between two (lat, lon) points.

    Uses the haversine formula on a sphere of mean radius 6371.0 km.
    Symmetric, nonnegative, and zero for identical points.
    """
    _check_coordinate(*a)
    _check_coordinate(*b)
    lat1, lon1 = math.radians(a[0]), math.radians(a[1])
    lat2, lon2 = math.radians(b[0]), math.radians(b[1])
    dlat = lat2 - lat1
    dlon = lon2 - lon1
    s = math.sin(dlat / 2.0) ** 2 + math.cos(lat1) * math.cos(lat2) * math.sin(dlon / 2.0) ** 2
    return 2.0 * EARTH_RADIUS_KM * math.asin(min(1.0, math.sqrt(s)))


@dataclass(frozen=True)
class SpatialUnit:
    """One node of the hierarchy: a site, arrondissement, or region."""

    id: str
    level: Level
    parent: str | None
    centroid: tuple[float, float]
    population: int | None = None


class SpatialHierarchy:
    """Site -> arrondissement -> region containment with derived geometry.

    Construct with :meth:`from_site_rows`; each row places one site. Coarse
    units (arrondissements, regions) are implied by the site rows and get
    centroids equal to the unweighted mean of their sites' coordinates,
    unless an explicit override is registered (e.g. from boundary polygons).

    Per-level unit ordering is lexicographic on id, giving every unit a
    stable integer index used for matrix rows/columns.
    """

    def __init__(self) -> None:
        self._units: dict[Level, dict[str, SpatialUnit]] = {lv: {} for lv in LEVELS}
        self._site_coords: dict[Level, dict[str, list[tuple[float, float]]]] = {
            Level.ARRONDISSEMENT: {},
            Level.REGION: {},
        }
        self._overrides: dict[tuple[Level, str], tuple[float, float]] = {}
        self._ids: dict[Level, tuple[str, ...]] = {}
        self._index: dict[Level, dict[str, int]] = {}

    @classmethod
    def from_site_rows(cls, rows) -> "SpatialHierarchy":
        """Build from (site_id, arrondissement_id, region_id, lat, lon) rows.

        Raises ValueError on duplicate site ids, a site mapped to two
        arrondissements, or an arrondissement mapped to two regions;
        InvalidCoordinateError on out-of-range coordinates.
        """
        h = cls()
        arr_region: dict[str, str] = {}
        for site_id, arr_id, region_id, lat, lon in rows:
            _check_coordinate(lat, lon)
            if site_id in h._units[Level.SITE]:
                raise ValueError(f"duplicate site id {site_id!r}")
            if arr_id in arr_region and arr_region[arr_id] != region_id:
                raise ValueError(
                    f"arrondissement {arr_id!r} mapped to two regions "
                    f"({arr_region[arr_id]!r} and {region_id!r})"
                )
            arr_region[arr_id] = region_id
            h._units[Level.SITE][site_id] = SpatialUnit(
                site_id, Level.SITE, arr_id, (lat, lon)
            )
            h._site_coords[Level.ARRONDISSEMENT].setdefault(arr_id, []).append((lat, lon))
            h._site_coords[Level.REGION].setdefault(region_id, []).append((lat, lon))
        if not h._units[Level.SITE]:
            raise ValueError("hierarchy has no sites")
        for arr_id, region_id in arr_region.items():
            h._units[Level.ARRONDISSEMENT][arr_id] = SpatialUnit(
                arr_id, Level.ARRONDISSEMENT, region_id,
                _mean_coordinate(h._site_coords[Level.ARRONDISSEMENT][arr_id]),
            )
        for region_id, coords in h._site_coords[Level.REGION].items():
            h._units[Level.REGION][region_id] = SpatialUnit(
                region_id, Level.REGION, None, _mean_coordinate(coords)
            )
        h._freeze()
        return h

    def _freeze(self) -> None:
        for lv in LEVELS:
            ids = tuple(sorted(self._units[lv]))
            self._ids[lv] = ids
            self._index[lv] = {u: i for i, u in enumerate(ids)}

    # ── lookup ───────────────────────────────────────────────────────

    def ids(self, level: Level) -> tuple[str, ...]:
        return self._ids[level]

    def n(self, level: Level) -> int:
        return len(self._ids[level])

    def has(self, level: Level, unit_id: str) -> bool:
        return unit_id in self._units[level]

    def unit(self, level: Level, unit_id: str) -> SpatialUnit:
        try:
            return self._units[level][unit_id]
        except KeyError:
            raise KeyError(f"unknown {level.value} id {unit_id!r}") from None

    def index_of(self, level: Level, unit_id: str) -> int:
        return self._index[level][unit_id]

    def parent_id(self, level: Level, unit_id: str, target: Level | None = None) -> str:
        """Id of the ancestor of `unit_id` at `target` (default: next coarser)."""
        unit = self.unit(level, unit_id)
        if target is None:
            target = LEVELS[level.rank + 1]
        if not target.coarser_than(level):
            raise ValueError(f"{target.value} is not coarser than {level.value}")
        cur = unit
        while cur.level is not target:
            cur = self.unit(LEVELS[cur.level.rank + 1], cur.parent)
        return cur.id

    def site_count(self, level: Level, unit_id: str) -> int:
        if level is Level.SITE:
            self.unit(level, unit_id)
            return 1
        return len(self._site_coords[level].get(unit_id, ()))

    def site_counts(self, level: Level) -> np.ndarray:
        """Contained-site counts in index order (all ones at site level)."""
        return np.array([self.site_count(level, u) for u in self.ids(level)], dtype=np.int64)

    def parent_index(self, fine: Level, coarse: Level) -> np.ndarray:
        """Integer map: index at `fine` level -> index of its ancestor at `coarse`."""
        if not coarse.coarser_than(fine):
            raise ValueError(f"{coarse.value} is not coarser than {fine.value}")
        cidx = self._index[coarse]
        return np.array(
            [cidx[self.parent_id(fine, u, coarse)] for u in self.ids(fine)],
            dtype=np.intp,
        )

    # ── geometry ─────────────────────────────────────────────────────

    def set_centroid_override(self, level: Level, unit_id: str, centroid: tuple[float, float]) -> None:
        """Replace a derived centroid (e.g. with a boundary-polygon centroid)."""
        _check_coordinate(*centroid)
        self.unit(level, unit_id)
        self._overrides[(level, unit_id)] = (float(centroid[0]), float(centroid[1]))

    def unit_centroid(self, level: Level, unit_id: str) -> tuple[float, float]:
        """Centroid of a unit: its own coordinates for a site, otherwise the
        arithmetic mean of its sites' coordinates (or a registered override)."""
        override = self._overrides.get((level, unit_id))
        if override is not None:
            return override
        unit = self.unit(level, unit_id)
        if level is Level.SITE:
            return unit.centroid
        coords = self._site_coords[level].get(unit_id)
        if not coords:
            raise EmptyUnitError(f"{level.value} {unit_id!r} contains no sites")
        return _mean_coordinate(coords)

    def centroids(self, level: Level) -> np.ndarray:
        """(n, 2) array of (lat, lon) in index order."""
        return np.array([self.unit_centroid(level, u) for u in self.ids(level)])


def _mean_coordinate(coords) -> tuple[float, float]:
    lats = [c[0] for c in coords]
    lons = [c[1] for c in coords]
    return (math.fsum(lats) / len(lats), math.fsum(lons) / len(lons))


def pairwise_distance_matrix(h: SpatialHierarchy, level: Level) -> np.ndarray:
    """Symmetric matrix of great-circle km between unit centroids.

    Diagonal is exactly zero; D[i, j] = haversine of centroids i and j.
    """
    cents = h.centroids(level)
    n = len(cents)
    d = np.zeros((n, n), dtype=np.float64)
    for i in range(n):
        for j in range(i + 1, n):
            v = haversine_km((cents[i, 0], cents[i, 1]), (cents[j, 0], cents[j, 1]))
            d[i, j] = v
            d[j, i] = v
    return d
