"""GeoJSON emission, reading, and structural validation.

Prediction maps become a FeatureCollection: polygon features when a
boundary file supplies geometry (matched on the "unit_id" property, or
the feature "id"), otherwise Point features at unit centroids. Flow maps
are a LineString layer between unit centroids with a "volume" property.

Validation checks RFC 7946 object shapes: type fields, coordinate arity
and finiteness, and closed linear rings. It is structural only; no
topology checks.
"""

from __future__ import annotations

import json
import math
import warnings
from pathlib import Path

from .errors import ParseError
from .flows import FlowMatrix
from .model import PovertyPrediction
from .spatial import Level, SpatialHierarchy

GEOMETRY_TYPES = (
    "Point", "MultiPoint", "LineString", "MultiLineString",
    "Polygon", "MultiPolygon", "GeometryCollection",
)


def prediction_collection(
    preds: list[PovertyPrediction],
    h: SpatialHierarchy,
    boundaries: dict | None = None,
) -> dict:
    """FeatureCollection with {unit_id, level, H, A, MPI, clamped} properties.

    With boundaries, emits the boundary geometry per matched unit;
    boundary features whose unit id is missing from the predictions are
    emitted without prediction properties (with a warning). Without
    boundaries, each prediction becomes a Point at the unit centroid.
    """
    features = []
    if boundaries is not None:
        by_unit = {p.unit_id: p for p in preds}
        for feature in boundaries.get("features", []):
            unit_id = feature.get("properties", {}).get("unit_id", feature.get("id"))
            pred = by_unit.get(unit_id)
            props = {"unit_id": unit_id}
            if pred is None:
                warnings.warn(f"boundary feature {unit_id!r} has no prediction",
                              stacklevel=2)
            else:
                props.update(_prediction_properties(pred))
            features.append({
                "type": "Feature",
                "geometry": feature["geometry"],
                "properties": props,
            })
    else:
        for p in sorted(preds, key=lambda q: q.unit_id):
            lat, lon = h.unit_centroid(p.level, p.unit_id)
            features.append({
                "type": "Feature",
                "geometry": {"type": "Point", "coordinates": [lon, lat]},
                "properties": {"unit_id": p.unit_id, **_prediction_properties(p)},
            })
    return {"type": "FeatureCollection", "features": features}


def _prediction_properties(p: PovertyPrediction) -> dict:
    return {
        "level": p.level.value,
        "feature_value": p.feature_value,
        "H": p.H,
        "A": p.A,
        "MPI": p.MPI,
        "clamped": p.clamped,
    }


def flow_collection(m: FlowMatrix, h: SpatialHierarchy, min_volume: float = 0.0) -> dict:
    """LineString per ordered unit pair with positive flow (self-flows
    excluded), carrying a "volume" property."""
    features = []
    cents = {u: h.unit_centroid(m.level, u) for u in m.ids}
    for i, from_id in enumerate(m.ids):
        for j, to_id in enumerate(m.ids):
            if i == j:
                continue
            volume = m.values[i, j]
            if volume <= min_volume:
                continue
            (lat1, lon1), (lat2, lon2) = cents[from_id], cents[to_id]
            features.append({
                "type": "Feature",
                "geometry": {
                    "type": "LineString",
                    "coordinates": [[lon1, lat1], [lon2, lat2]],
                },
                "properties": {
                    "from_id": from_id,
                    "to_id": to_id,
                    "volume": float(volume),
                },
            })
    return {"type": "FeatureCollection", "features": features}


def filter_features(doc: dict, unit_ids) -> dict:
    """Sub-collection of features whose unit id is in `unit_ids`."""
    wanted = set(unit_ids)
    return {
        "type": "FeatureCollection",
        "features": [
            f for f in doc.get("features", [])
            if f.get("properties", {}).get("unit_id", f.get("id")) in wanted
        ],
    }


def boundary_centroid_overrides(h: SpatialHierarchy, level: Level, boundaries: dict) -> int:
    """Register polygon centroids from a boundary file as unit-centroid
    overrides; returns how many units were overridden."""
    count = 0
    for feature in boundaries.get("features", []):
        unit_id = feature.get("properties", {}).get("unit_id", feature.get("id"))
        if unit_id is None or not h.has(level, unit_id):
            continue
        geom = feature.get("geometry") or {}
        ring = None
        if geom.get("type") == "Polygon":
            ring = geom["coordinates"][0]
        elif geom.get("type") == "MultiPolygon" and geom["coordinates"]:
            # largest outer ring by vertex count
            ring = max((poly[0] for poly in geom["coordinates"]), key=len)
        if ring:
            lon, lat = polygon_centroid(ring)
            h.set_centroid_override(level, unit_id, (lat, lon))
            count += 1
    return count


def polygon_centroid(ring) -> tuple[float, float]:
    """Area-weighted planar centroid (x=lon, y=lat) of a closed ring.

    Falls back to the vertex mean for degenerate (zero-area) rings.
    """
    area2 = 0.0
    cx = 0.0
    cy = 0.0
    for (x1, y1), (x2, y2) in zip(ring[:-1], ring[1:]):
        cross = x1 * y2 - x2 * y1
        area2 += cross
        cx += (x1 + x2) * cross
        cy += (y1 + y2) * cross
    if abs(area2) < 1e-12:
        xs = [p[0] for p in ring[:-1]]
        ys = [p[1] for p in ring[:-1]]
        return (sum(xs) / len(xs), sum(ys) / len(ys))
    return (cx / (3.0 * area2), cy / (3.0 * area2))


# ── validation and IO ────────────────────────────────────────────────


class GeoJSONValidationError(ParseError):
    pass


def validate(doc) -> None:
    """Structural GeoJSON validation; raises GeoJSONValidationError."""
    if not isinstance(doc, dict):
        raise GeoJSONValidationError("document is not a JSON object")
    t = doc.get("type")
    if t == "FeatureCollection":
        features = doc.get("features")
        if not isinstance(features, list):
            raise GeoJSONValidationError("FeatureCollection without a features list")
        for i, f in enumerate(features):
            try:
                _validate_feature(f)
            except GeoJSONValidationError as e:
                raise GeoJSONValidationError(f"feature {i}: {e}") from None
    elif t == "Feature":
        _validate_feature(doc)
    elif t in GEOMETRY_TYPES:
        _validate_geometry(doc)
    else:
        raise GeoJSONValidationError(f"unknown GeoJSON type {t!r}")


def _validate_feature(f) -> None:
    if not isinstance(f, dict) or f.get("type") != "Feature":
        raise GeoJSONValidationError("not a Feature object")
    if "properties" not in f:
        raise GeoJSONValidationError("Feature without properties member")
    geom = f.get("geometry")
    if geom is not None:
        _validate_geometry(geom)


def _validate_geometry(geom) -> None:
    if not isinstance(geom, dict):
        raise GeoJSONValidationError("geometry is not an object")
    t = geom.get("type")
    if t == "GeometryCollection":
        for g in geom.get("geometries", []):
            _validate_geometry(g)
        return
    if t not in GEOMETRY_TYPES:
        raise GeoJSONValidationError(f"unknown geometry type {t!r}")
    coords = geom.get("coordinates")
    if t == "Point":
        _validate_position(coords)
    elif t in ("MultiPoint", "LineString"):
        _each(coords, _validate_position, minimum=2 if t == "LineString" else 0)
    elif t == "MultiLineString":
        _each(coords, lambda c: _each(c, _validate_position, minimum=2))
    elif t == "Polygon":
        _each(coords, _validate_ring)
    elif t == "MultiPolygon":
        _each(coords, lambda poly: _each(poly, _validate_ring))


def _each(items, check, minimum: int = 0) -> None:
    if not isinstance(items, list) or len(items) < minimum:
        raise GeoJSONValidationError("bad coordinate nesting")
    for item in items:
        check(item)


def _validate_position(pos) -> None:
    if (not isinstance(pos, list) or not 2 <= len(pos) <= 3
            or not all(isinstance(v, (int, float)) and not isinstance(v, bool)
                       and math.isfinite(v) for v in pos)):
        raise GeoJSONValidationError(f"bad position {pos!r}")


def _validate_ring(ring) -> None:
    _each(ring, _validate_position, minimum=4)
    if ring[0] != ring[-1]:
        raise GeoJSONValidationError("linear ring is not closed")


def dumps(doc) -> str:
    return json.dumps(doc, indent=2, sort_keys=True) + "\n"


def write(doc, path) -> None:
    validate(doc)
    Path(path).write_text(dumps(doc), encoding="utf-8")


def loads(text: str) -> dict:
    doc = json.loads(text)
    validate(doc)
    return doc


def load(path) -> dict:
    return loads(Path(path).read_text(encoding="utf-8"))
