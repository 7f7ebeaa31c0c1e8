import math

import pytest

from source.ingest import (
    IngestError,
    build_release_cdf,
    daily_case_counts,
    decode_bytes,
    distribution_file,
    fit_inputs,
    fit_triangular,
    interval_label,
    parse_trip_log,
    release_offsets,
    route_time_summary,
)
from source.stochastics import TriangularDist, parse_distribution

HEADER = "pickup_ts,dropoff_ts,from,to,cart_type\n"

LOG = HEADER + (
    "2023-06-05T10:00:00,2023-06-05T10:10:00,MD,CCSA,surgical\n"
    "2023-06-05T10:20:00,2023-06-05T10:32:00,MD,CCSA,surgical\n"
    "2023-06-05T10:25:00,2023-06-05T10:31:00,SCSA,CSSD,surgical\n"
    "2023-06-05T11:00:00,2023-06-05T10:59:00,MD,CCSA,surgical\n"
    "2023-06-05T12:00:00,2023-06-05T12:05:00,DOCK,MD,linen\n"
    "2023-06-05T23:00:00,2023-06-05T23:15:00,CSSD,MD,case_cart\n"
)


def test_parse_trip_log_counts_outliers_and_filters():
    log = parse_trip_log(LOG, surgical_only=True)
    assert len(log) == 4
    assert log.outliers == 1
    assert log.filtered == 1
    assert log.total == 6
    first = log.rows[0]
    assert first.line == 2
    assert first.travel_minutes == pytest.approx(10.0)
    assert first.cart_state == "clean"
    assert first.route == "MD-CCSA"


def test_max_minutes_marks_long_trips_as_outliers():
    log = parse_trip_log(LOG, max_minutes=11.0)
    assert log.outliers == 3
    assert all(row.travel_minutes <= 11.0 for row in log)


def test_malformed_timestamp_reports_line():
    text = HEADER + "2023-06-05T10:00:00,2023-06-05T10:10:00,MD,CCSA,surgical\nnot-a-time,2023-06-05T10:10:00,MD,CCSA,surgical\n"
    with pytest.raises(IngestError) as info:
        parse_trip_log(text)
    assert info.value.line == 3
    assert "pickup" in str(info.value)


def test_missing_columns():
    with pytest.raises(IngestError, match="missing columns"):
        parse_trip_log("start,end\n1,2\n")
    with pytest.raises(IngestError):
        parse_trip_log("")


def test_decode_bytes_handles_bom_and_legacy_encodings():
    assert decode_bytes(("\ufeff" + HEADER).encode("utf-8")) == HEADER
    legacy = (HEADER + "2023-06-05T10:00:00,2023-06-05T10:10:00,MD,CCSA,Хирургическая тележка операционного блока\n").encode("windows-1251")
    text = decode_bytes(legacy, "log.csv")
    assert text.startswith("pickup_ts,dropoff_ts,from,to,cart_type")
    assert decode_bytes(b"") == ""


def test_business_day_starts_at_8am():
    log = parse_trip_log(HEADER + "2023-06-06T07:30:00,2023-06-06T07:40:00,MD,CCSA,surgical\n")
    assert str(log.rows[0].business_day.date()) == "2023-06-05"


def test_interval_labels():
    assert interval_label(21, 24) == "9pm-12am"
    assert interval_label(0, 3) == "12am-3am"
    assert interval_label(12, 15) == "12pm-3pm"


def test_route_time_summary():
    log = parse_trip_log(LOG)
    summary = route_time_summary(log.rows)
    row = summary[(summary.route == "MD-CCSA") & (summary.interval == "9am-12pm")].iloc[0]
    assert row.n == 2
    assert row["mean"] == pytest.approx(11.0)
    assert row.sd == pytest.approx(math.sqrt(2.0))
    assert row.cv == pytest.approx(math.sqrt(2.0) / 11.0)
    single = summary[summary.route == "CSSD-MD"].iloc[0]
    assert single.interval == "9pm-12am"
    assert math.isnan(single.sd)


def test_fit_triangular_nearest_mean():
    assert fit_triangular([60, 75, 68, 67, 69, 70, 66]) == TriangularDist(60, 68, 75)


def test_fit_triangular_tie_goes_to_smaller_value():
    # среднее 5.0 ровно посередине между 4 и 6
    assert fit_triangular([2, 4, 6, 8]) == TriangularDist(2, 4, 8)


def test_fit_triangular_mle_picks_observed_value():
    fit = fit_triangular([60, 75, 68, 67, 69, 70, 66], mode="mle")
    assert fit.a == 60 and fit.b == 75
    assert fit.m in {66.0, 67.0, 68.0, 69.0, 70.0}


def test_fit_triangular_rejects_degenerate_input():
    with pytest.raises(ValueError):
        fit_triangular([5, 6])
    with pytest.raises(ValueError):
        fit_triangular([5, 5, 5])
    with pytest.raises(ValueError):
        fit_triangular([1, 2, 3], mode="median")


def test_build_release_cdf():
    cdf = build_release_cdf([10, 40, 45, 100])
    assert cdf.points == ((0.25, 0.0), (0.75, 30.0), (0.75, 60.0), (1.0, 90.0))
    with pytest.raises(ValueError):
        build_release_cdf([])
    with pytest.raises(ValueError):
        build_release_cdf([1440.0])


def test_release_offsets_and_daily_counts():
    log = parse_trip_log(LOG)
    offsets = release_offsets(log.rows)
    assert offsets == {"mon": [151.0]}
    counts = daily_case_counts(log.rows)
    assert counts == {"mon": [2]}


def test_fit_inputs_writes_loadable_literals():
    lines = [HEADER.strip()]
    for day, clean in ((5, 3), (12, 5), (19, 4)):
        for i in range(clean):
            lines.append(f"2023-06-{day:02d}T09:{10 + i:02d}:00,2023-06-{day:02d}T09:{20 + i:02d}:00,MD,CCSA,surgical")
        lines.append(f"2023-06-{day:02d}T13:00:00,2023-06-{day:02d}T13:07:00,SCSA,CSSD,surgical")
    rows = parse_trip_log("\n".join(lines) + "\n").rows
    case_counts, release = fit_inputs(rows)
    assert case_counts == {"mon": TriangularDist(3, 4, 5)}
    assert release["mon"].points[-1] == (1.0, 300.0)
    assert len(release["mon"].points) == 11
    text = distribution_file(case_counts, release)
    assert 'mon = "TRIA(3,4,5)"' in text
    assert parse_distribution(release["mon"].literal()) == release["mon"]
