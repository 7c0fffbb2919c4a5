import io
from datetime import datetime

import pytest

from povnet import ingest
from povnet.errors import ParseError
from povnet.ingest import (
    BEHAVIOR_HEADER,
    INDICATOR_NAMES,
    FlowRecord,
    PovertyRecord,
    UserCallEvent,
)
from povnet.spatial import Level


# ── flows ────────────────────────────────────────────────────────────


def test_parse_flows_single_line():
    lines = ["hour,from_site,to_site,calls,texts", "2013-01-07T13,S0001,S0002,5,3"]
    [rec] = list(ingest.parse_flows(lines))
    assert rec == FlowRecord(datetime(2013, 1, 7, 13), "S0001", "S0002", 5, 3)
    assert rec.volume == 8


def test_parse_flows_negative_count():
    lines = ["hour,from_site,to_site,calls,texts", "2013-01-07T13,S0001,S0002,-1,0"]
    with pytest.raises(ParseError) as exc:
        list(ingest.parse_flows(lines))
    assert exc.value.line == 2
    assert exc.value.field == "calls"


def test_parse_flows_three_line_fixture():
    text = (
        "hour,from_site,to_site,calls,texts\n"
        "# a comment line\n"
        "2013-01-07T13,S1,S2,5,3\n"
        "2013-01-07T14,S2,S1,0,2\n"
        "2013-12-31T23,S1,S1,7,0\n"
    )
    recs = list(ingest.parse_flows(io.StringIO(text)))
    assert [r.volume for r in recs] == [8, 2, 7]
    assert recs[2].hour == datetime(2013, 12, 31, 23)
    assert recs[2].from_site == recs[2].to_site == "S1"


@pytest.mark.parametrize("stamp", ["2013-13-01T00", "2013-02-30T10", "2013-01-07 13",
                                   "2013-01-07T24", "20130107T13"])
def test_parse_flows_malformed_timestamp(stamp):
    lines = ["hour,from_site,to_site,calls,texts", f"{stamp},S1,S2,1,1"]
    with pytest.raises(ParseError):
        list(ingest.parse_flows(lines))


def test_parse_flows_bad_header():
    with pytest.raises(ParseError, match="header"):
        list(ingest.parse_flows(["hour,from,to,calls,texts", "x"]))


def test_flows_round_trip():
    recs = [
        FlowRecord(datetime(2013, 1, 7, 13), "S0001", "S0002", 5, 3),
        FlowRecord(datetime(2013, 6, 1, 0), "S0002", "S0001", 0, 0),
    ]
    buf = io.StringIO()
    ingest.write_flows(recs, buf)
    assert list(ingest.parse_flows(io.StringIO(buf.getvalue()))) == recs


def test_parse_flows_is_streaming():
    # generator: nothing consumed until iterated, one record per line
    def lines():
        yield "hour,from_site,to_site,calls,texts"
        yield "2013-01-07T13,S1,S2,1,0"
        raise AssertionError("second data line should not be pulled")

    it = ingest.parse_flows(lines())
    assert next(it).from_site == "S1"


# ── hierarchy ────────────────────────────────────────────────────────


def test_parse_hierarchy_single_row():
    lines = ["site_id,arrondissement_id,region_id,lat,lon", "S1,A1,R1,14.5,-16.5"]
    h = ingest.parse_hierarchy(lines)
    assert h.n(Level.SITE) == h.n(Level.ARRONDISSEMENT) == h.n(Level.REGION) == 1
    assert h.site_count(Level.REGION, "R1") == 1


def test_parse_hierarchy_counts():
    lines = ["site_id,arrondissement_id,region_id,lat,lon",
             "S1,A1,R1,14.0,-16.0",
             "S2,A1,R1,14.1,-16.1",
             "S3,A2,R1,14.2,-16.2",
             "S4,A2,R1,14.3,-16.3"]
    h = ingest.parse_hierarchy(lines)
    assert h.site_count(Level.REGION, "R1") == 4
    assert h.site_count(Level.ARRONDISSEMENT, "A1") == 2
    assert h.site_count(Level.ARRONDISSEMENT, "A2") == 2


def test_parse_hierarchy_duplicate_site():
    lines = ["site_id,arrondissement_id,region_id,lat,lon",
             "S1,A1,R1,14.0,-16.0",
             "S1,A1,R1,14.1,-16.1"]
    with pytest.raises(ParseError, match="S1"):
        ingest.parse_hierarchy(lines)


def test_parse_hierarchy_bad_coordinates():
    lines = ["site_id,arrondissement_id,region_id,lat,lon", "S1,A1,R1,95.0,-16.0"]
    with pytest.raises(ParseError):
        ingest.parse_hierarchy(lines)


def test_hierarchy_round_trip(h_nested):
    text = ingest.to_text(ingest.write_hierarchy, h_nested)
    h2 = ingest.parse_hierarchy(io.StringIO(text))
    assert h2.ids(Level.SITE) == h_nested.ids(Level.SITE)
    assert h2.unit_centroid(Level.SITE, "S3") == h_nested.unit_centroid(Level.SITE, "S3")
    assert ingest.to_text(ingest.write_hierarchy, h2) == text


# ── poverty ──────────────────────────────────────────────────────────


def test_parse_poverty_exact_product():
    lines = ["region_id,name,H,A,MPI", "R01,Dakar,10.0,40.0,0.04"]
    [rec] = ingest.parse_poverty(lines)
    assert rec == PovertyRecord("R01", "Dakar", 10.0, 40.0, 0.04)


def test_parse_poverty_within_rounding_tolerance():
    lines = ["region_id,name,H,A,MPI", "R02,X,47.0,58.0,0.273"]
    import warnings
    with warnings.catch_warnings():
        warnings.simplefilter("error")  # 0.47*0.58 = 0.2726: no warning expected
        [rec] = ingest.parse_poverty(lines)
    assert rec.MPI == 0.273


def test_parse_poverty_inconsistent_mpi_warns():
    lines = ["region_id,name,H,A,MPI", "R02,X,47.0,58.0,0.5"]
    with pytest.warns(UserWarning, match="differs"):
        [rec] = ingest.parse_poverty(lines)
    assert rec.MPI == 0.5  # accepted, only warned


def test_parse_poverty_range_error():
    lines = ["region_id,name,H,A,MPI", "R03,Y,120,50,0.6"]
    with pytest.raises(ParseError) as exc:
        ingest.parse_poverty(lines)
    assert exc.value.field == "H"


def test_parse_poverty_mpi_range():
    lines = ["region_id,name,H,A,MPI", "R03,Y,50,50,1.5"]
    with pytest.raises(ParseError):
        ingest.parse_poverty(lines)


def test_poverty_round_trip():
    recs = [PovertyRecord("R01", "Dakar", 10.5, 40.25, 0.0425625),
            PovertyRecord("R02", "Thies", 47.0, 58.0, 0.273)]
    buf = io.StringIO()
    ingest.write_poverty(recs, buf)
    assert ingest.parse_poverty(io.StringIO(buf.getvalue())) == recs


# ── user log ─────────────────────────────────────────────────────────


def test_parse_user_log():
    lines = ["user_id,hour,arrondissement_id", "U1,2013-03-02T21,A017"]
    [ev] = list(ingest.parse_user_log(lines))
    assert ev == UserCallEvent("U1", datetime(2013, 3, 2, 21), "A017")


def test_user_log_round_trip():
    recs = [UserCallEvent("U1", datetime(2013, 3, 2, 21), "A017"),
            UserCallEvent("U2", datetime(2013, 3, 3, 8), "A001")]
    buf = io.StringIO()
    ingest.write_user_log(recs, buf)
    assert list(ingest.parse_user_log(io.StringIO(buf.getvalue()))) == recs


# ── behavior ─────────────────────────────────────────────────────────


def test_indicator_names_shape():
    assert len(INDICATOR_NAMES) == 33
    assert len(set(INDICATOR_NAMES)) == 33
    assert "pct_initiated_conversation" in INDICATOR_NAMES


def test_parse_behavior_row():
    values = [str(0.01 * k) for k in range(33)]
    lines = [BEHAVIOR_HEADER, "U1,3," + ",".join(values)]
    [rec] = list(ingest.parse_behavior(lines))
    assert rec.user == "U1"
    assert rec.month == 3
    assert rec.value("calls_per_day") == 0.0
    assert rec.value("pct_initiated_conversation") == pytest.approx(0.02)


def test_parse_behavior_arity_error():
    values = [str(0.01 * k) for k in range(32)]  # one short
    lines = [BEHAVIOR_HEADER, "U1,3," + ",".join(values)]
    with pytest.raises(ParseError, match="35 fields"):
        list(ingest.parse_behavior(lines))


def test_parse_behavior_bad_month():
    values = ["0.1"] * 33
    lines = [BEHAVIOR_HEADER, "U1,13," + ",".join(values)]
    with pytest.raises(ParseError) as exc:
        list(ingest.parse_behavior(lines))
    assert exc.value.field == "month"


def test_behavior_two_user_fixture_round_trip():
    recs = [
        ingest.BehaviorRecord("U1", 1, tuple(0.1 * k for k in range(33))),
        ingest.BehaviorRecord("U2", 12, tuple(0.25 for _ in range(33))),
    ]
    buf = io.StringIO()
    ingest.write_behavior(recs, buf)
    assert list(ingest.parse_behavior(io.StringIO(buf.getvalue()))) == recs
