"""Streaming CSV parsers and writers for every pipeline file format.

All files are UTF-8 CSV with a single header line; lines starting with '#'
are ignored. Parsers are single-pass generators (O(1) memory per record for
flows and user logs) and report the line number and field of the first
malformed value. Referential checks against the hierarchy are deferred to
the consumers so files can be parsed independently.

Formats:
  flows.csv      hour,from_site,to_site,calls,texts   (hour = YYYY-MM-DDTHH)
  hierarchy.csv  site_id,arrondissement_id,region_id,lat,lon
  poverty.csv    region_id,name,H,A,MPI
  userlog.csv    user_id,hour,arrondissement_id
  behavior.csv   user_id,month,<33 canonical indicator names>
"""

from __future__ import annotations

import csv
import io
import warnings
from datetime import datetime
from typing import Iterable, Iterator, NamedTuple

from .errors import InvalidCoordinateError, ParseError
from .spatial import SpatialHierarchy

# Canonical behavioral indicator columns: 14 calling/texting, 6 mobility,
# 13 social. Values are opaque reals except pct_initiated_conversation,
# which is a fraction in [0, 1].
INDICATOR_NAMES: tuple[str, ...] = (
    # calling / texting
    "calls_per_day",
    "texts_per_day",
    "pct_initiated_conversation",
    "pct_initiated_interactions",
    "pct_nocturnal_interactions",
    "conversations_per_day",
    "mean_conversation_length",
    "mean_intertime_calls",
    "mean_intertime_texts",
    "pct_call_activity",
    "response_delay_text",
    "response_rate_text",
    "mean_texts_per_conversation",
    "pct_weekend_interactions",
    # mobility
    "radius_of_gyration",
    "number_of_places",
    "entropy_of_places",
    "pct_time_at_home",
    "travel_distance_per_day",
    "frequent_locations_count",
    # social
    "number_of_contacts",
    "entropy_of_contacts",
    "interactions_per_contact",
    "pct_interactions_top_contact",
    "balance_of_contacts",
    "contacts_churn_rate",
    "pct_active_days",
    "reciprocity_of_contacts",
    "new_contacts_per_month",
    "pct_contacts_within_home",
    "mean_contacts_per_day",
    "pct_repeat_contacts",
    "clustering_of_contacts",
)
INDICATOR_INDEX = {name: i for i, name in enumerate(INDICATOR_NAMES)}
N_INDICATORS = len(INDICATOR_NAMES)
assert N_INDICATORS == 33

FLOWS_HEADER = "hour,from_site,to_site,calls,texts"
HIERARCHY_HEADER = "site_id,arrondissement_id,region_id,lat,lon"
POVERTY_HEADER = "region_id,name,H,A,MPI"
USERLOG_HEADER = "user_id,hour,arrondissement_id"
BEHAVIOR_HEADER = "user_id,month," + ",".join(INDICATOR_NAMES)


class FlowRecord(NamedTuple):
    hour: datetime
    from_site: str
    to_site: str
    calls: int
    texts: int

    @property
    def volume(self) -> int:
        return self.calls + self.texts


class PovertyRecord(NamedTuple):
    region: str
    name: str
    H: float
    A: float
    MPI: float


class UserCallEvent(NamedTuple):
    user: str
    hour: datetime
    arrondissement: str


class BehaviorRecord(NamedTuple):
    user: str
    month: int
    indicators: tuple[float, ...]

    def value(self, name: str) -> float:
        return self.indicators[INDICATOR_INDEX[name]]


def _rows(lines: Iterable[str], expected_header: str, name: str):
    """Yield (line_number, fields) for data rows after validating the header."""
    reader = csv.reader(_strip_comments(lines))
    header = None
    for fields in reader:
        if header is None:
            header = ",".join(fields)
            if header != expected_header:
                raise ParseError(
                    f"bad {name} header: expected {expected_header!r}, got {header!r}",
                    line=reader.line_num,
                )
            continue
        if not fields:
            continue
        yield reader.line_num, fields


def _strip_comments(lines: Iterable[str]) -> Iterator[str]:
    for line in lines:
        if line.startswith("#") or not line.strip():
            continue
        yield line


def parse_hour(text: str, line: int | None = None) -> datetime:
    """Parse 'YYYY-MM-DDTHH' into a datetime truncated to the hour.

    Memoized: a year of hourly data has under 9000 distinct stamps, so
    the cache stays small while skipping most datetime construction.
    """
    cached = _HOUR_CACHE.get(text)
    if cached is not None:
        return cached
    try:
        if len(text) != 13 or text[4] != "-" or text[7] != "-" or text[10] != "T":
            raise ValueError
        value = datetime(int(text[:4]), int(text[5:7]), int(text[8:10]), int(text[11:13]))
    except ValueError:
        raise ParseError(f"malformed hour timestamp {text!r}", line=line, field="hour") from None
    if len(_HOUR_CACHE) < 200_000:
        _HOUR_CACHE[text] = value
    return value


_HOUR_CACHE: dict[str, datetime] = {}


def format_hour(hour: datetime) -> str:
    return f"{hour.year:04d}-{hour.month:02d}-{hour.day:02d}T{hour.hour:02d}"


def _int_field(text: str, line: int, field: str, minimum: int | None = None) -> int:
    try:
        value = int(text)
    except ValueError:
        raise ParseError(f"non-integer value {text!r}", line=line, field=field) from None
    if minimum is not None and value < minimum:
        raise ParseError(f"value {value} below minimum {minimum}", line=line, field=field)
    return value


def _float_field(text: str, line: int, field: str) -> float:
    try:
        return float(text)
    except ValueError:
        raise ParseError(f"non-numeric value {text!r}", line=line, field=field) from None


# ── flows ────────────────────────────────────────────────────────────


def parse_flows(lines: Iterable[str]) -> Iterator[FlowRecord]:
    for line_num, f in _rows(lines, FLOWS_HEADER, "flows"):
        if len(f) != 5:
            raise ParseError(f"expected 5 fields, got {len(f)}", line=line_num, field="row")
        yield FlowRecord(
            parse_hour(f[0], line_num),
            f[1],
            f[2],
            _int_field(f[3], line_num, "calls", minimum=0),
            _int_field(f[4], line_num, "texts", minimum=0),
        )


def write_flows(records: Iterable[FlowRecord], out) -> None:
    out.write(FLOWS_HEADER + "\n")
    for r in records:
        out.write(f"{format_hour(r.hour)},{r.from_site},{r.to_site},{r.calls},{r.texts}\n")


# ── hierarchy ────────────────────────────────────────────────────────


def parse_hierarchy(lines: Iterable[str]) -> SpatialHierarchy:
    rows = []
    for line_num, f in _rows(lines, HIERARCHY_HEADER, "hierarchy"):
        if len(f) != 5:
            raise ParseError(f"expected 5 fields, got {len(f)}", line=line_num, field="row")
        lat = _float_field(f[3], line_num, "lat")
        lon = _float_field(f[4], line_num, "lon")
        rows.append((f[0], f[1], f[2], lat, lon))
    try:
        return SpatialHierarchy.from_site_rows(rows)
    except InvalidCoordinateError as e:
        raise ParseError(str(e), field="lat/lon") from e
    except ValueError as e:
        raise ParseError(str(e)) from e


def write_hierarchy(h: SpatialHierarchy, out) -> None:
    from .spatial import Level

    out.write(HIERARCHY_HEADER + "\n")
    for site_id in h.ids(Level.SITE):
        site = h.unit(Level.SITE, site_id)
        arr = site.parent
        region = h.unit(Level.ARRONDISSEMENT, arr).parent
        lat, lon = site.centroid
        out.write(f"{site_id},{arr},{region},{lat!r},{lon!r}\n")


# ── poverty ──────────────────────────────────────────────────────────

#: Published H/A/MPI triples are rounded; allow this much product slack.
MPI_CONSISTENCY_TOL = 0.01


def parse_poverty(lines: Iterable[str]) -> list[PovertyRecord]:
    records = []
    for line_num, f in _rows(lines, POVERTY_HEADER, "poverty"):
        if len(f) != 5:
            raise ParseError(f"expected 5 fields, got {len(f)}", line=line_num, field="row")
        H = _float_field(f[2], line_num, "H")
        A = _float_field(f[3], line_num, "A")
        mpi = _float_field(f[4], line_num, "MPI")
        if not 0.0 <= H <= 100.0:
            raise ParseError(f"H={H} outside [0, 100]", line=line_num, field="H")
        if not 0.0 <= A <= 100.0:
            raise ParseError(f"A={A} outside [0, 100]", line=line_num, field="A")
        if not 0.0 <= mpi <= 1.0:
            raise ParseError(f"MPI={mpi} outside [0, 1]", line=line_num, field="MPI")
        if abs(mpi - (H / 100.0) * (A / 100.0)) > MPI_CONSISTENCY_TOL:
            warnings.warn(
                f"region {f[0]}: MPI={mpi} differs from (H/100)*(A/100)="
                f"{(H / 100.0) * (A / 100.0):.4f} by more than {MPI_CONSISTENCY_TOL}",
                stacklevel=2,
            )
        records.append(PovertyRecord(f[0], f[1], H, A, mpi))
    return records


def write_poverty(records: Iterable[PovertyRecord], out) -> None:
    writer = csv.writer(out, lineterminator="\n")
    writer.writerow(POVERTY_HEADER.split(","))
    for r in records:
        writer.writerow([r.region, r.name, repr(r.H), repr(r.A), repr(r.MPI)])


# ── user call log ────────────────────────────────────────────────────


def parse_user_log(lines: Iterable[str]) -> Iterator[UserCallEvent]:
    for line_num, f in _rows(lines, USERLOG_HEADER, "userlog"):
        if len(f) != 3:
            raise ParseError(f"expected 3 fields, got {len(f)}", line=line_num, field="row")
        yield UserCallEvent(f[0], parse_hour(f[1], line_num), f[2])


def write_user_log(events: Iterable[UserCallEvent], out) -> None:
    out.write(USERLOG_HEADER + "\n")
    for e in events:
        out.write(f"{e.user},{format_hour(e.hour)},{e.arrondissement}\n")


# ── behavioral indicators ────────────────────────────────────────────


def parse_behavior(lines: Iterable[str]) -> Iterator[BehaviorRecord]:
    for line_num, f in _rows(lines, BEHAVIOR_HEADER, "behavior"):
        if len(f) != 2 + N_INDICATORS:
            raise ParseError(
                f"expected {2 + N_INDICATORS} fields (user, month, {N_INDICATORS} "
                f"indicators), got {len(f)}",
                line=line_num,
                field="row",
            )
        month = _int_field(f[1], line_num, "month")
        if not 1 <= month <= 12:
            raise ParseError(f"month {month} outside [1, 12]", line=line_num, field="month")
        values = tuple(
            _float_field(v, line_num, INDICATOR_NAMES[i]) for i, v in enumerate(f[2:])
        )
        yield BehaviorRecord(f[0], month, values)


def write_behavior(records: Iterable[BehaviorRecord], out) -> None:
    out.write(BEHAVIOR_HEADER + "\n")
    for r in records:
        out.write(f"{r.user},{r.month}," + ",".join(repr(v) for v in r.indicators) + "\n")


# ── helpers ──────────────────────────────────────────────────────────


def parse_file(path, parser):
    """Apply a parser to a file path, materializing the result."""
    with open(path, "r", encoding="utf-8", newline="") as fh:
        result = parser(fh)
        if isinstance(result, Iterator):
            return list(result)
        return result


def to_text(writer, records) -> str:
    buf = io.StringIO()
    writer(records, buf)
    return buf.getvalue()
