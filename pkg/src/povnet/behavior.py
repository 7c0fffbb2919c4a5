"""Night-call home localization, behavioral-indicator aggregation, and
indicator-vs-poverty ranking.

A user's home arrondissement is the one they call from most often during
the night window (hours 20-23 by default). Users are kept only when both
thresholds hold strictly: night calls on more than half the days of the
year (d > 0.5) and more than 95% of night calls from the modal unit
(c > 0.95). Exactly-at-threshold users are excluded.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Iterable

from .errors import ReferentialError, UndefinedStatisticError
from .ingest import (
    INDICATOR_INDEX,
    INDICATOR_NAMES,
    N_INDICATORS,
    BehaviorRecord,
    PovertyRecord,
    UserCallEvent,
)
from .metrics import NodeScores
from .spatial import Level, SpatialHierarchy
from .stats import (
    DEFAULT_INFLUENCE_THRESHOLD,
    CorrelationResult,
    loo_influence,
    pearson,
)

DEFAULT_NIGHT_HOURS = (20, 21, 22, 23)
DEFAULT_MIN_DAY_FRACTION = 0.5
DEFAULT_MIN_MODAL_SHARE = 0.95


@dataclass(frozen=True)
class HomeAssignment:
    user: str
    d: float                 # fraction of days with >= 1 night call
    a: str | None            # modal night arrondissement
    c: float                 # fraction of night calls from a
    home_region: str | None
    retained: bool


@dataclass(frozen=True)
class UserIndicatorProfile:
    user: str
    values: tuple[float, ...]  # median over available months, one per indicator


@dataclass
class IndicatorTable:
    """Median-of-user-medians per unit; units without retained users are absent."""

    level: Level
    values: dict[str, tuple[float, ...]]
    user_count: dict[str, int]

    def scores_for(self, indicator: str) -> NodeScores:
        idx = INDICATOR_INDEX[indicator]
        return NodeScores(
            self.level, indicator,
            {unit: vals[idx] for unit, vals in self.values.items()},
        )


def localize_users(
    events: Iterable[UserCallEvent],
    h: SpatialHierarchy,
    year_days: int = 365,
    night_hours: tuple[int, ...] = DEFAULT_NIGHT_HOURS,
    min_day_fraction: float = DEFAULT_MIN_DAY_FRACTION,
    min_modal_share: float = DEFAULT_MIN_MODAL_SHARE,
) -> list[HomeAssignment]:
    """Derive per-user home assignments from night-window calls.

    d = (#distinct dates with >= 1 night call) / year_days;
    a = arrondissement with the most night calls (ties break to the
    lexicographically smallest id); c = night calls from a / all night
    calls. Users with zero night calls get d = 0 and are not retained.
    """
    if year_days not in (365, 366):
        raise ValueError(f"year_days must be 365 or 366, got {year_days}")
    window = frozenset(night_hours)
    days: dict[str, set] = {}
    counts: dict[str, dict[str, int]] = {}
    seen: set[str] = set()
    for ev in events:
        if not h.has(Level.ARRONDISSEMENT, ev.arrondissement):
            raise ReferentialError(f"unknown arrondissement id {ev.arrondissement!r}")
        seen.add(ev.user)
        if ev.hour.hour not in window:
            continue
        days.setdefault(ev.user, set()).add(ev.hour.date())
        per_arr = counts.setdefault(ev.user, {})
        per_arr[ev.arrondissement] = per_arr.get(ev.arrondissement, 0) + 1

    assignments = []
    for user in sorted(seen):
        per_arr = counts.get(user)
        if not per_arr:
            assignments.append(HomeAssignment(user, 0.0, None, 0.0, None, False))
            continue
        total = sum(per_arr.values())
        # max count, ties to smallest id
        a = min(per_arr, key=lambda k: (-per_arr[k], k))
        c = per_arr[a] / total
        d = len(days[user]) / year_days
        retained = d > min_day_fraction and c > min_modal_share
        region = h.parent_id(Level.ARRONDISSEMENT, a, Level.REGION)
        assignments.append(HomeAssignment(user, d, a, c, region, retained))
    return assignments


@dataclass(frozen=True)
class SampleShareRow:
    region: str
    user_share: float
    site_share: float
    population_share: float | None


def sample_share_report(
    assignments: list[HomeAssignment],
    h: SpatialHierarchy,
    population_shares: dict[str, float] | None = None,
) -> list[SampleShareRow]:
    """Per-region share of retained users vs. share of sites (and,
    optionally, of population). Each share column sums to 1."""
    retained = [a for a in assignments if a.retained]
    if not retained:
        raise ValueError("no retained users")
    user_counts = {r: 0 for r in h.ids(Level.REGION)}
    for a in retained:
        user_counts[a.home_region] += 1
    n_users = len(retained)
    n_sites = h.n(Level.SITE)
    rows = []
    for region in h.ids(Level.REGION):
        pop = population_shares.get(region) if population_shares else None
        rows.append(
            SampleShareRow(
                region,
                user_counts[region] / n_users,
                h.site_count(Level.REGION, region) / n_sites,
                pop,
            )
        )
    return rows


def _median(values: list[float]) -> float:
    s = sorted(values)
    n = len(s)
    mid = n // 2
    if n % 2 == 1:
        return s[mid]
    return (s[mid - 1] + s[mid]) / 2.0


def aggregate_user_medians(records: Iterable[BehaviorRecord]) -> list[UserIndicatorProfile]:
    """Per user, the median over available monthly rows of each indicator."""
    monthly: dict[str, list[tuple[float, ...]]] = {}
    for rec in records:
        monthly.setdefault(rec.user, []).append(rec.indicators)
    profiles = []
    for user in sorted(monthly):
        rows = monthly[user]
        values = tuple(_median([row[k] for row in rows]) for k in range(N_INDICATORS))
        profiles.append(UserIndicatorProfile(user, values))
    return profiles


def unit_indicator_medians(
    profiles: list[UserIndicatorProfile],
    assignments: list[HomeAssignment],
    h: SpatialHierarchy,
    level: Level = Level.REGION,
) -> IndicatorTable:
    """Median across retained users' profile values, per unit at `level`.

    Users are placed by home arrondissement (or its region); profiles
    without a retained assignment are ignored, as are retained users
    without a behavior profile.
    """
    if level not in (Level.ARRONDISSEMENT, Level.REGION):
        raise ValueError("indicator medians are defined at arrondissement or region level")
    home: dict[str, str] = {}
    for a in assignments:
        if not a.retained:
            continue
        home[a.user] = a.a if level is Level.ARRONDISSEMENT else a.home_region
    grouped: dict[str, list[tuple[float, ...]]] = {}
    for p in profiles:
        unit = home.get(p.user)
        if unit is not None:
            grouped.setdefault(unit, []).append(p.values)
    values = {}
    user_count = {}
    for unit in sorted(grouped):
        rows = grouped[unit]
        values[unit] = tuple(_median([row[k] for row in rows]) for k in range(N_INDICATORS))
        user_count[unit] = len(rows)
    return IndicatorTable(level, values, user_count)


def region_indicator_medians(
    profiles: list[UserIndicatorProfile],
    assignments: list[HomeAssignment],
    h: SpatialHierarchy,
) -> IndicatorTable:
    return unit_indicator_medians(profiles, assignments, h, Level.REGION)


@dataclass(frozen=True)
class IndicatorRank:
    indicator: str
    result: CorrelationResult | None  # None when constant across units
    loo_max_delta: float | None
    flagged: bool

    @property
    def undefined(self) -> bool:
        return self.result is None


def rank_indicators(
    table: IndicatorTable,
    poverty: list[PovertyRecord],
    threshold: float = DEFAULT_INFLUENCE_THRESHOLD,
) -> list[IndicatorRank]:
    """Correlate each indicator's per-unit medians with MPI and sort by
    |r| descending. Also reports each indicator's worst leave-one-out
    delta, flagging indicators dominated by a single unit."""
    mpi = {p.region: p.MPI for p in poverty}
    units = sorted(u for u in table.values if u in mpi)
    if len(units) < 3:
        raise ValueError(f"only {len(units)} units joined with poverty data")
    y = [mpi[u] for u in units]
    ranks = []
    for k, name in enumerate(INDICATOR_NAMES):
        x = [table.values[u][k] for u in units]
        try:
            res = pearson(x, y)
        except UndefinedStatisticError:
            ranks.append(IndicatorRank(name, None, None, False))
            continue
        loo_max = None
        flagged = False
        if len(units) >= 4:
            report = loo_influence(x, y, units, threshold=threshold)
            loo_max = report.max_abs_delta()
            flagged = loo_max > threshold
        ranks.append(IndicatorRank(name, res, loo_max, flagged))
    ranks.sort(key=lambda r: (-(abs(r.result.r) if r.result else -1.0), r.indicator))
    return ranks


# ── serialization ────────────────────────────────────────────────────

HOMES_HEADER = "user_id,d,a,c,home_region,retained"
RANKING_HEADER = "indicator,r,p_value,n,loo_max_delta,flagged"


def write_homes_csv(assignments: list[HomeAssignment], path) -> None:
    with open(path, "w", encoding="utf-8") as out:
        out.write(HOMES_HEADER + "\n")
        for a in sorted(assignments, key=lambda x: x.user):
            out.write(
                f"{a.user},{a.d!r},{a.a or ''},{a.c!r},{a.home_region or ''},"
                f"{'true' if a.retained else 'false'}\n"
            )


def write_indicator_table_csv(table: IndicatorTable, path) -> None:
    id_col = "region_id" if table.level is Level.REGION else "arrondissement_id"
    with open(path, "w", encoding="utf-8") as out:
        out.write(f"{id_col},user_count," + ",".join(INDICATOR_NAMES) + "\n")
        for unit in sorted(table.values):
            vals = ",".join(repr(v) for v in table.values[unit])
            out.write(f"{unit},{table.user_count[unit]},{vals}\n")


def write_ranking_csv(ranks: list[IndicatorRank], path) -> None:
    with open(path, "w", encoding="utf-8") as out:
        out.write(RANKING_HEADER + "\n")
        for r in ranks:
            if r.result is None:
                out.write(f"{r.indicator},,,,,false\n")
                continue
            loo = "" if r.loo_max_delta is None else repr(r.loo_max_delta)
            out.write(
                f"{r.indicator},{r.result.r!r},{r.result.p_value!r},{r.result.n},"
                f"{loo},{'true' if r.flagged else 'false'}\n"
            )


def write_sample_share_csv(rows: list[SampleShareRow], path) -> None:
    with open(path, "w", encoding="utf-8") as out:
        out.write("region_id,user_share,site_share,population_share\n")
        for r in rows:
            pop = "" if r.population_share is None else repr(r.population_share)
            out.write(f"{r.region},{r.user_share!r},{r.site_share!r},{pop}\n")
