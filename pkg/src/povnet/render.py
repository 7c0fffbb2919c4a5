"""Map and figure rendering.

Two output paths:
  - hand-written SVG choropleths (deterministic byte output, no library
    rendering involved), driven by a ChoroplethSpec;
  - matplotlib PNG report figures (model fit scatter, single-unit
    influence view, sample-share bars, point/polygon maps, flow network)
    written next to the delimited outputs.

PNG metadata is stripped so reruns are byte-identical.
"""

from __future__ import annotations

from dataclasses import dataclass
from pathlib import Path

import matplotlib

matplotlib.use("Agg")

import matplotlib.pyplot as plt  # noqa: E402
import numpy as np  # noqa: E402

from .behavior import SampleShareRow  # noqa: E402
from .flows import FlowMatrix  # noqa: E402
from .model import PovertyModelPair, PovertyPrediction  # noqa: E402
from .spatial import SpatialHierarchy  # noqa: E402
from .stats import InfluenceReport  # noqa: E402

DPI = 150

plt.rcParams.update({
    "figure.dpi": 100,
    "savefig.dpi": DPI,
    "font.size": 9,
    "axes.spines.top": False,
    "axes.spines.right": False,
    "axes.grid": True,
    "grid.alpha": 0.25,
    "grid.linewidth": 0.5,
})


def save_png(fig, path) -> None:
    # Software tag carries the matplotlib version; drop it for stable bytes
    fig.savefig(path, format="png", metadata={"Software": None}, bbox_inches="tight")
    plt.close(fig)


# ── SVG choropleth ───────────────────────────────────────────────────


@dataclass
class ChoroplethSpec:
    value_field: str = "MPI"
    classes: int = 5
    scheme: str = "quantile"          # or "equal"
    low_color: str = "#fee5d9"
    high_color: str = "#a50f15"
    missing_color: str = "#d9d9d9"


def class_breaks(values, n_classes: int, scheme: str) -> list[float]:
    """Strictly increasing interior break points (at most n_classes - 1).

    quantile: linear-interpolated quantiles at k/n_classes;
    equal: equal-width intervals over [min, max]. Duplicate breaks are
    collapsed, so constant data yields zero breaks (a single class).
    """
    vals = sorted(values)
    if not vals or n_classes < 2 or vals[0] == vals[-1]:
        return []
    breaks = []
    for k in range(1, n_classes):
        if scheme == "quantile":
            b = float(np.quantile(vals, k / n_classes))
        elif scheme == "equal":
            b = vals[0] + (vals[-1] - vals[0]) * k / n_classes
        else:
            raise ValueError(f"unknown class scheme {scheme!r}")
        if not breaks or b > breaks[-1]:
            breaks.append(b)
    return breaks


def _hex_to_rgb(color: str) -> tuple[int, int, int]:
    c = color.lstrip("#")
    return tuple(int(c[i:i + 2], 16) for i in (0, 2, 4))


def color_ramp(low: str, high: str, n: int) -> list[str]:
    """n colors linearly interpolated in RGB between the endpoints."""
    lo = _hex_to_rgb(low)
    hi = _hex_to_rgb(high)
    if n == 1:
        return [high]
    out = []
    for k in range(n):
        t = k / (n - 1)
        rgb = tuple(round(lo[i] + (hi[i] - lo[i]) * t) for i in range(3))
        out.append("#{:02x}{:02x}{:02x}".format(*rgb))
    return out


def _class_of(value: float, breaks: list[float]) -> int:
    k = 0
    for b in breaks:
        if value > b:
            k += 1
    return k


def write_svg_choropleth(doc: dict, spec: ChoroplethSpec, path=None) -> str:
    """Render a GeoJSON FeatureCollection to an SVG choropleth.

    Polygon features become filled paths; point features degrade to
    circles. One class per interval between breaks, colored along the
    ramp; features lacking the value field use the missing color. A
    legend lists the class bounds. Output is deterministic.
    """
    features = doc.get("features", [])
    values = [
        f["properties"][spec.value_field]
        for f in features
        if f.get("properties", {}).get(spec.value_field) is not None
    ]
    breaks = class_breaks(values, spec.classes, spec.scheme)
    colors = color_ramp(spec.low_color, spec.high_color, len(breaks) + 1)

    positions = []
    for f in features:
        _collect_positions(f.get("geometry") or {}, positions)
    if positions:
        xs = [p[0] for p in positions]
        ys = [p[1] for p in positions]
        x0, x1 = min(xs), max(xs)
        y0, y1 = min(ys), max(ys)
    else:
        x0 = y0 = 0.0
        x1 = y1 = 1.0
    span = max(x1 - x0, y1 - y0) or 1.0
    scale = 640.0 / span
    pad = 20.0

    def project(lon, lat):
        # equirectangular; SVG y grows downward
        return ((lon - x0) * scale + pad, (y1 - lat) * scale + pad)

    width = (x1 - x0) * scale + 2 * pad + 150  # room for the legend
    height = max((y1 - y0) * scale + 2 * pad, 40.0 + 18.0 * (len(breaks) + 1))

    parts = [
        f'<svg xmlns="http://www.w3.org/2000/svg" viewBox="0 0 {width:.1f} {height:.1f}" '
        f'width="{width:.0f}" height="{height:.0f}">',
        f'<!-- choropleth of {spec.value_field}; {spec.scheme} classes -->',
    ]
    for f in features:
        geom = f.get("geometry") or {}
        value = f.get("properties", {}).get(spec.value_field)
        fill = spec.missing_color if value is None else colors[_class_of(value, breaks)]
        unit = f.get("properties", {}).get("unit_id", "")
        parts.extend(_geometry_svg(geom, project, fill, unit))
    # legend
    lx = (x1 - x0) * scale + 2 * pad
    parts.append('<g font-family="sans-serif" font-size="11">')
    parts.append(f'<text x="{lx:.1f}" y="16">{spec.value_field}</text>')
    bounds = ["min"] + [f"{b:.4g}" for b in breaks] + ["max"]
    for k, color in enumerate(colors):
        y = 26.0 + 18.0 * k
        parts.append(
            f'<rect x="{lx:.1f}" y="{y:.1f}" width="14" height="14" fill="{color}" '
            f'stroke="#555" stroke-width="0.5"/>'
        )
        parts.append(
            f'<text x="{lx + 20:.1f}" y="{y + 11:.1f}">{bounds[k]} &#8211; {bounds[k + 1]}</text>'
        )
    parts.append("</g>")
    parts.append("</svg>")
    text = "\n".join(parts) + "\n"
    if path is not None:
        Path(path).write_text(text, encoding="utf-8")
    return text


def _collect_positions(geom: dict, out: list) -> None:
    t = geom.get("type")
    coords = geom.get("coordinates")
    if t == "Point":
        out.append(coords)
    elif t in ("MultiPoint", "LineString"):
        out.extend(coords)
    elif t in ("MultiLineString", "Polygon"):
        for part in coords:
            out.extend(part)
    elif t == "MultiPolygon":
        for poly in coords:
            for ring in poly:
                out.extend(ring)


def _geometry_svg(geom: dict, project, fill: str, unit: str) -> list[str]:
    t = geom.get("type")
    if t == "Polygon":
        return [_polygon_path(geom["coordinates"], project, fill, unit)]
    if t == "MultiPolygon":
        return [
            _polygon_path(poly, project, fill, unit)
            for poly in geom["coordinates"]
        ]
    if t == "Point":
        x, y = project(*geom["coordinates"][:2])
        return [
            f'<circle cx="{x:.2f}" cy="{y:.2f}" r="6" fill="{fill}" '
            f'stroke="#333" stroke-width="0.6"><title>{unit}</title></circle>'
        ]
    if t == "LineString":
        pts = " ".join(
            "{:.2f},{:.2f}".format(*project(*p[:2])) for p in geom["coordinates"]
        )
        return [f'<polyline points="{pts}" fill="none" stroke="{fill}" stroke-width="1"/>']
    return []


def _polygon_path(rings, project, fill: str, unit: str) -> str:
    ds = []
    for ring in rings:
        pts = ["{:.2f} {:.2f}".format(*project(*p[:2])) for p in ring]
        ds.append("M " + " L ".join(pts) + " Z")
    return (
        f'<path d="{" ".join(ds)}" fill="{fill}" fill-rule="evenodd" '
        f'stroke="#333" stroke-width="0.6"><title>{unit}</title></path>'
    )


# ── matplotlib report figures ────────────────────────────────────────


def fig_model_fit(feature_values, H, A, models: PovertyModelPair, path) -> None:
    """Three panels: H, A, and MPI against the feature, with the fitted
    lines and the composed MPI curve."""
    xs = np.asarray(feature_values, dtype=float)
    grid = np.linspace(xs.min(), xs.max(), 200)
    fig, axes = plt.subplots(1, 3, figsize=(10.5, 3.2))
    for ax, y, m, label in (
        (axes[0], H, models.h_model, "H (headcount %)"),
        (axes[1], A, models.a_model, "A (intensity %)"),
    ):
        ax.scatter(xs, y, s=18, color="#4c72b0", zorder=3)
        ax.plot(grid, m.slope * grid + m.intercept, color="#c44e52", lw=1.2)
        ax.set_xlabel(models.feature)
        ax.set_ylabel(label)
        ax.set_title(f"slope {m.slope:.4g}, r$^2$ {m.r_squared:.2f}", fontsize=9)
    mpi_obs = (np.asarray(H) / 100.0) * (np.asarray(A) / 100.0)
    h_line = np.clip(models.h_model.slope * grid + models.h_model.intercept, 0, 100)
    a_line = np.clip(models.a_model.slope * grid + models.a_model.intercept, 0, 100)
    axes[2].scatter(xs, mpi_obs, s=18, color="#4c72b0", zorder=3)
    axes[2].plot(grid, (h_line / 100.0) * (a_line / 100.0), color="#c44e52", lw=1.2)
    axes[2].set_xlabel(models.feature)
    axes[2].set_ylabel("MPI")
    axes[2].set_title("composed index", fontsize=9)
    fig.tight_layout()
    save_png(fig, path)


def fig_influence(feature_values, target_values, labels,
                  report: InfluenceReport, target_name: str,
                  feature_name: str, path) -> None:
    """Scatter with the most influential unit highlighted and the
    with/without correlations annotated."""
    xs = np.asarray(feature_values, dtype=float)
    ys = np.asarray(target_values, dtype=float)
    rows = {row.excluded: row for row in report.rows}
    worst = max(
        (r for r in report.rows if r.delta is not None),
        key=lambda r: abs(r.delta),
        default=None,
    )
    fig, ax = plt.subplots(figsize=(4.6, 3.6))
    for x, y, label in zip(xs, ys, labels):
        row = rows.get(label)
        hot = worst is not None and label == worst.excluded
        ax.scatter(x, y, s=34 if hot else 18,
                   color="#c44e52" if hot else "#4c72b0", zorder=3)
        if hot:
            ax.annotate(label, (x, y), textcoords="offset points", xytext=(5, 4),
                        fontsize=8)
    title = f"r = {report.r_with:.2f}"
    if worst is not None:
        title += f"; without {worst.excluded}: r = {worst.r_without:.2f}"
    ax.set_title(title, fontsize=9)
    ax.set_xlabel(feature_name)
    ax.set_ylabel(target_name)
    fig.tight_layout()
    save_png(fig, path)


def fig_sample_share(rows: list[SampleShareRow], path) -> None:
    """Grouped bars: per-region retained-user share vs site share (vs
    population share when available)."""
    regions = [r.region for r in rows]
    series = [("users", [r.user_share for r in rows], "#4c72b0"),
              ("sites", [r.site_share for r in rows], "#55a868")]
    if rows and rows[0].population_share is not None:
        series.append(("population", [r.population_share for r in rows], "#c44e52"))
    x = np.arange(len(regions))
    w = 0.8 / len(series)
    fig, ax = plt.subplots(figsize=(max(4.0, 0.55 * len(regions)), 3.2))
    for k, (name, vals, color) in enumerate(series):
        ax.bar(x + (k - (len(series) - 1) / 2) * w, vals, width=w, label=name, color=color)
    ax.set_xticks(x)
    ax.set_xticklabels(regions, rotation=60, ha="right", fontsize=7)
    ax.set_ylabel("share")
    ax.legend(fontsize=8)
    fig.tight_layout()
    save_png(fig, path)


def fig_prediction_map(preds: list[PovertyPrediction], h: SpatialHierarchy,
                       path, value: str = "MPI") -> None:
    """Point map of unit centroids colored by the predicted value."""
    preds = sorted(preds, key=lambda p: p.unit_id)
    lats, lons, vals = [], [], []
    for p in preds:
        lat, lon = h.unit_centroid(p.level, p.unit_id)
        lats.append(lat)
        lons.append(lon)
        vals.append(getattr(p, value))
    fig, ax = plt.subplots(figsize=(5.2, 4.2))
    sc = ax.scatter(lons, lats, c=vals, cmap="Reds", s=60,
                    edgecolors="#333", linewidths=0.4, zorder=3)
    fig.colorbar(sc, ax=ax, label=value, shrink=0.85)
    ax.set_xlabel("longitude")
    ax.set_ylabel("latitude")
    ax.set_title(f"predicted {value} ({preds[0].level.value} level)" if preds else value,
                 fontsize=9)
    ax.set_aspect("equal")
    fig.tight_layout()
    save_png(fig, path)


def fig_flow_network(m: FlowMatrix, h: SpatialHierarchy, path,
                     mpi_by_unit: dict[str, float] | None = None,
                     max_edges: int = 400) -> None:
    """Unit centroids sized by total activity and linked by lines whose
    width scales with pair volume (largest pairs only)."""
    cents = {u: h.unit_centroid(m.level, u) for u in m.ids}
    v = m.values.astype(float)
    sym = v + v.T
    pairs = [
        (sym[i, j], m.ids[i], m.ids[j])
        for i in range(m.n) for j in range(i + 1, m.n)
        if sym[i, j] > 0
    ]
    pairs.sort(reverse=True)
    pairs = pairs[:max_edges]
    fig, ax = plt.subplots(figsize=(5.6, 4.4))
    if pairs:
        vmax = pairs[0][0]
        for volume, a, b in pairs:
            (lat1, lon1), (lat2, lon2) = cents[a], cents[b]
            ax.plot([lon1, lon2], [lat1, lat2], color="#777777",
                    lw=0.3 + 2.7 * volume / vmax, alpha=0.6, zorder=2)
    totals = v.sum(axis=1) + v.sum(axis=0)
    sizes = 20 + 180 * totals / totals.max() if totals.max() > 0 else np.full(m.n, 20.0)
    colors = (
        [mpi_by_unit.get(u, float("nan")) for u in m.ids] if mpi_by_unit else "#4c72b0"
    )
    sc = ax.scatter([cents[u][1] for u in m.ids], [cents[u][0] for u in m.ids],
                    s=sizes, c=colors, cmap="Reds" if mpi_by_unit else None,
                    edgecolors="#333", linewidths=0.4, zorder=3)
    if mpi_by_unit:
        fig.colorbar(sc, ax=ax, label="MPI", shrink=0.85)
    ax.set_xlabel("longitude")
    ax.set_ylabel("latitude")
    ax.set_aspect("equal")
    fig.tight_layout()
    save_png(fig, path)
