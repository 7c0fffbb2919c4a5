"""Deterministic synthetic-world generator with planted ground truth.

Emits exactly the ingest file formats (hierarchy, flows, poverty, user
log, behavioral indicators) plus a truth.json recording every planted
parameter, so each downstream stage has a known answer.

Randomness comes from counter-based Philox streams keyed by (seed,
stream id), one stream per generation concern, so per-entity draws are
reproducible regardless of generation order and the whole file set is
byte-identical for a fixed (seed, spec).

Flow volumes follow a gravity form: each ordered site pair (u, v) in
regions (i, j) draws Poisson with mean rate * exp(s_i + s_j) / d_ij,
where s is the planted per-region attractiveness and d the distance
between region centroids; summing over the n_i * n_j site pairs gives
the region-pair mean rate * n_i * n_j * exp(s_i + s_j) / d_ij. Same-
region pairs (d_ii = 0) use a separate within-region rate. Poverty is
linearly linked to s with configurable noise, and one behavioral
indicator is linearly linked to poverty.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field
from datetime import date, datetime, timedelta
from pathlib import Path

import numpy as np

from .ingest import INDICATOR_NAMES
from .spatial import Level, SpatialHierarchy, pairwise_distance_matrix
from . import ingest

# bounding box for generated coordinates (a country-sized patch of West
# Africa; geographic realism only, no semantic weight)
LAT_RANGE = (12.3, 16.7)
LON_RANGE = (-17.6, -11.3)

_STREAM_GEOMETRY = 1
_STREAM_FLOWS = 2
_STREAM_POVERTY = 3
_STREAM_USERS = 4
_STREAM_BEHAVIOR = 5


@dataclass
class WorldSpec:
    """Parameters of a synthetic world; identical spec + seed gives
    byte-identical output files."""

    seed: int = 0
    regions: int = 5
    arr_per_region: tuple[int, int] = (2, 4)
    sites_per_arr: tuple[int, int] = (2, 5)
    attractiveness: list[float] | None = None  # default: linspace(-1.2, 1.8)
    flow_rate: float = 40.0          # cross-region gravity rate
    within_rate: float = 2.0         # same-region per-site-pair Poisson mean
    hour_spread: int = 3             # max records a pair's volume is split into
    poverty_link_h: tuple[float, float] = (-16.0, 55.0)   # slope, intercept
    poverty_link_a: tuple[float, float] = (-8.0, 52.0)
    poverty_noise_sd: float = 0.0
    users: int = 200
    retained_fraction: float = 0.7
    behavior_link: dict = field(
        default_factory=lambda: {"pct_initiated_conversation": (-0.6, 0.75)}
    )
    behavior_noise_sd: float = 0.02
    year: int = 2013

    def __post_init__(self) -> None:
        if self.regions < 1 or self.arr_per_region[0] < 1 or self.sites_per_arr[0] < 1:
            raise ValueError("counts must be >= 1")
        if self.arr_per_region[0] > self.arr_per_region[1]:
            raise ValueError("arr_per_region range is inverted")
        if self.sites_per_arr[0] > self.sites_per_arr[1]:
            raise ValueError("sites_per_arr range is inverted")
        if self.poverty_noise_sd < 0 or self.behavior_noise_sd < 0:
            raise ValueError("noise sd must be >= 0")
        if self.users < 0 or not 0.0 <= self.retained_fraction <= 1.0:
            raise ValueError("bad user parameters")
        if self.hour_spread < 1:
            raise ValueError("hour_spread must be >= 1")

    def attractiveness_values(self) -> np.ndarray:
        if self.attractiveness is not None:
            if len(self.attractiveness) != self.regions:
                raise ValueError("attractiveness length != region count")
            return np.asarray(self.attractiveness, dtype=np.float64)
        if self.regions == 1:
            return np.array([0.0])
        return np.linspace(-1.2, 1.8, self.regions)


def _rng(spec: WorldSpec, stream: int) -> np.random.Generator:
    key = (spec.seed % 2**64) * 2**64 + stream
    return np.random.Generator(np.random.Philox(key=key))


def _year_hours(year: int) -> int:
    return ((date(year + 1, 1, 1) - date(year, 1, 1)).days) * 24


def _hour_strings(year: int) -> np.ndarray:
    start = datetime(year, 1, 1)
    n = _year_hours(year)
    return np.array(
        [ingest.format_hour(start + timedelta(hours=k)) for k in range(n)],
        dtype="U13",
    )


# ── world geometry ───────────────────────────────────────────────────


def gen_world(spec: WorldSpec) -> str:
    """hierarchy.csv content: regions on a jittered grid, arrondissement
    centers scattered around their region, sites around their
    arrondissement."""
    rng = _rng(spec, _STREAM_GEOMETRY)
    R = spec.regions
    grid = math.ceil(math.sqrt(R))
    lat0, lat1 = LAT_RANGE
    lon0, lon1 = LON_RANGE
    lines = [ingest.HIERARCHY_HEADER]
    arr_seq = 0
    site_seq = 0
    arr_width = max(3, len(str(R * spec.arr_per_region[1])))
    site_width = max(4, len(str(R * spec.arr_per_region[1] * spec.sites_per_arr[1])))
    for r in range(R):
        region_id = f"R{r + 1:02d}"
        gi, gj = divmod(r, grid)
        jit = rng.uniform(-0.25, 0.25, size=2)
        rlat = lat0 + (gi + 0.5 + jit[0]) / grid * (lat1 - lat0)
        rlon = lon0 + (gj + 0.5 + jit[1]) / grid * (lon1 - lon0)
        n_arr = int(rng.integers(spec.arr_per_region[0], spec.arr_per_region[1] + 1))
        for _ in range(n_arr):
            arr_seq += 1
            arr_id = f"A{arr_seq:0{arr_width}d}"
            alat = float(np.clip(rlat + rng.normal(0, 0.22), lat0, lat1))
            alon = float(np.clip(rlon + rng.normal(0, 0.22), lon0, lon1))
            n_sites = int(rng.integers(spec.sites_per_arr[0], spec.sites_per_arr[1] + 1))
            for _ in range(n_sites):
                site_seq += 1
                site_id = f"S{site_seq:0{site_width}d}"
                slat = round(float(np.clip(alat + rng.normal(0, 0.06), lat0, lat1)), 6)
                slon = round(float(np.clip(alon + rng.normal(0, 0.06), lon0, lon1)), 6)
                lines.append(f"{site_id},{arr_id},{region_id},{slat!r},{slon!r}")
    return "\n".join(lines) + "\n"


# ── flows ────────────────────────────────────────────────────────────


def pair_mean_matrix(spec: WorldSpec, h: SpatialHierarchy) -> np.ndarray:
    """Analytic per-site-pair Poisson mean (the quantity gen_flows draws from)."""
    s = spec.attractiveness_values()
    reg_of_site = h.parent_index(Level.SITE, Level.REGION)
    d_region = pairwise_distance_matrix(h, Level.REGION)
    e = np.exp(s)[reg_of_site]
    ee = np.outer(e, e)
    d_pairs = d_region[np.ix_(reg_of_site, reg_of_site)]
    same_region = d_pairs == 0.0
    with np.errstate(divide="ignore"):
        mean = np.where(same_region, spec.within_rate * ee,
                        spec.flow_rate * ee / np.where(same_region, 1.0, d_pairs))
    return mean


def gen_flows(spec: WorldSpec, h: SpatialHierarchy) -> str:
    """flows.csv content: Poisson volumes per ordered site pair, split
    over random hours of the year, calls/texts split binomially."""
    rng = _rng(spec, _STREAM_FLOWS)
    mean = pair_mean_matrix(spec, h)
    volumes = rng.poisson(mean)
    iu, iv = np.nonzero(volumes)
    if len(iu) == 0:
        return ingest.FLOWS_HEADER + "\n"
    vol = volumes[iu, iv].astype(np.int64)

    # split each pair's volume over up to hour_spread records
    k = np.minimum(vol, spec.hour_spread)
    rec_pair = np.repeat(np.arange(len(vol)), k)
    offsets = np.cumsum(k) - k
    pos = np.arange(k.sum()) - offsets[rec_pair]
    base = vol // k
    rem = vol % k
    part = base[rec_pair] + (pos < rem[rec_pair])

    hours = rng.integers(0, _year_hours(spec.year), size=len(part))
    calls = rng.binomial(part, 0.7)
    texts = part - calls

    from_idx = iu[rec_pair]
    to_idx = iv[rec_pair]
    order = np.lexsort((to_idx, from_idx, hours))

    site_ids = np.array(h.ids(Level.SITE))
    hour_str = _hour_strings(spec.year)
    cols = (
        hour_str[hours[order]].tolist(),
        site_ids[from_idx[order]].tolist(),
        site_ids[to_idx[order]].tolist(),
        calls[order].tolist(),
        texts[order].tolist(),
    )
    lines = [ingest.FLOWS_HEADER]
    lines.extend(f"{hr},{fu},{tu},{c},{t}" for hr, fu, tu, c, t in zip(*cols))
    return "\n".join(lines) + "\n"


# ── ground truth: poverty, user log, behavior ────────────────────────


def gen_poverty(spec: WorldSpec, h: SpatialHierarchy) -> tuple[str, dict]:
    rng = _rng(spec, _STREAM_POVERTY)
    s = spec.attractiveness_values()
    regions = h.ids(Level.REGION)
    sh, ih = spec.poverty_link_h
    sa, ia = spec.poverty_link_a
    lines = [ingest.POVERTY_HEADER]
    truth = {}
    for r, region in enumerate(regions):
        H = round(float(np.clip(sh * s[r] + ih + rng.normal(0, spec.poverty_noise_sd), 0, 100)), 4)
        A = round(float(np.clip(sa * s[r] + ia + rng.normal(0, spec.poverty_noise_sd), 0, 100)), 4)
        mpi = (H / 100.0) * (A / 100.0)
        lines.append(f"{region},Name{region},{H!r},{A!r},{mpi!r}")
        truth[region] = {"H": H, "A": A, "MPI": mpi, "s": float(s[r])}
    return "\n".join(lines) + "\n", truth


def gen_users(spec: WorldSpec, h: SpatialHierarchy) -> tuple[str, dict]:
    """userlog.csv content plus planted per-user truth.

    Retained-designed users call at night from their home arrondissement
    on well over half the days with >= 97% home share; the rest either
    call on too few days or split their nights between two units.
    """
    rng = _rng(spec, _STREAM_USERS)
    arrs = h.ids(Level.ARRONDISSEMENT)
    year_days = (date(spec.year + 1, 1, 1) - date(spec.year, 1, 1)).days
    day0 = date(spec.year, 1, 1)
    night_hours = (20, 21, 22, 23)
    lines = [ingest.USERLOG_HEADER]
    homes = {}
    designed = {}
    rows = []
    width = max(6, len(str(spec.users)))
    for u in range(spec.users):
        user = f"U{u + 1:0{width}d}"
        home = arrs[int(rng.integers(0, len(arrs)))]
        homes[user] = home
        retained = bool(rng.random() < spec.retained_fraction)
        designed[user] = retained
        if retained:
            n_days = int(rng.integers(int(year_days * 0.6), year_days + 1))
            p_home = 0.97 + 0.03 * rng.random()
        elif rng.random() < 0.5:
            n_days = int(rng.integers(10, int(year_days * 0.38)))  # insufficient
            p_home = 0.99
        else:
            n_days = int(rng.integers(int(year_days * 0.55), int(year_days * 0.8)))
            p_home = 0.5  # ambiguous: nights split between two units
        other = arrs[int(rng.integers(0, len(arrs)))]
        if other == home:
            other = arrs[(arrs.index(home) + 1) % len(arrs)]
        days = rng.choice(year_days, size=n_days, replace=False)
        for dd in days:
            daystr = (day0 + timedelta(days=int(dd))).isoformat()
            n_calls = 1 + int(rng.random() < 0.35)
            for _ in range(n_calls):
                hh = night_hours[int(rng.integers(0, 4))]
                arr = home if rng.random() < p_home else other
                rows.append(f"{user},{daystr}T{hh:02d},{arr}")
        # a little daytime traffic so the night filter is exercised
        for _ in range(2):
            dd = int(rng.integers(0, year_days))
            daystr = (day0 + timedelta(days=dd)).isoformat()
            hh = int(rng.integers(8, 19))
            rows.append(f"{user},{daystr}T{hh:02d},{home}")
    rows.sort()
    lines.extend(rows)
    return "\n".join(lines) + "\n", {"homes": homes, "designed_retained": designed}


def gen_behavior(spec: WorldSpec, h: SpatialHierarchy,
                 poverty_truth: dict, homes: dict) -> str:
    """behavior.csv content: 12 monthly rows per user; linked indicators
    follow slope * (H_home / 100) + intercept + noise, the rest are
    stable per-indicator baselines plus noise."""
    rng = _rng(spec, _STREAM_BEHAVIOR)
    base = {
        name: 0.1 + 0.8 * ((i * 7919) % 33) / 33.0
        for i, name in enumerate(INDICATOR_NAMES)
    }
    lines = [ingest.BEHAVIOR_HEADER]
    for user in sorted(homes):
        region = h.parent_id(Level.ARRONDISSEMENT, homes[user], Level.REGION)
        hfrac = poverty_truth[region]["H"] / 100.0
        for month in range(1, 13):
            vals = []
            for name in INDICATOR_NAMES:
                link = spec.behavior_link.get(name)
                if link is not None:
                    v = link[0] * hfrac + link[1]
                else:
                    v = base[name]
                v += rng.normal(0, spec.behavior_noise_sd)
                vals.append(repr(round(float(np.clip(v, 0.0, 1.0)), 6)))
            lines.append(f"{user},{month}," + ",".join(vals))
    return "\n".join(lines) + "\n"


def gen_ground_truth(spec: WorldSpec, h: SpatialHierarchy) -> tuple[str, str, str, dict]:
    """poverty.csv, userlog.csv, behavior.csv contents plus the truth record."""
    poverty_text, poverty_truth = gen_poverty(spec, h)
    userlog_text, user_truth = gen_users(spec, h)
    behavior_text = gen_behavior(spec, h, poverty_truth, user_truth["homes"])
    truth = {
        "seed": spec.seed,
        "poverty": poverty_truth,
        "poverty_link_h": list(spec.poverty_link_h),
        "poverty_link_a": list(spec.poverty_link_a),
        "behavior_link": {k: list(v) for k, v in spec.behavior_link.items()},
        **user_truth,
    }
    return poverty_text, userlog_text, behavior_text, truth


def gen_all(spec: WorldSpec, outdir) -> dict[str, Path]:
    """Write the full synthetic file set into outdir; returns the paths."""
    outdir = Path(outdir)
    outdir.mkdir(parents=True, exist_ok=True)
    hierarchy_text = gen_world(spec)
    h = ingest.parse_hierarchy(hierarchy_text.splitlines())
    flows_text = gen_flows(spec, h)
    poverty_text, userlog_text, behavior_text, truth = gen_ground_truth(spec, h)
    paths = {}
    for name, text in (
        ("hierarchy.csv", hierarchy_text),
        ("flows.csv", flows_text),
        ("poverty.csv", poverty_text),
        ("userlog.csv", userlog_text),
        ("behavior.csv", behavior_text),
    ):
        path = outdir / name
        path.write_text(text, encoding="utf-8")
        paths[name] = path
    truth_path = outdir / "truth.json"
    truth_path.write_text(json.dumps(truth, indent=2, sort_keys=True) + "\n", encoding="utf-8")
    paths["truth.json"] = truth_path
    return paths
