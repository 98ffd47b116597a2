import io
import json

import numpy as np
import pytest

from gridcast import ingest
from gridcast.poi_categories import CATEGORY_OF_INDUSTRY, _GROUPS


def events_csv(rows):
    return io.StringIO("timestamp,category,lat,lon\n" + "".join(r + "\n" for r in rows))


class TestParseEvents:
    def test_valid_rows(self):
        res = ingest.parse_events(events_csv([
            "2020-01-01T00:30:00Z,burglary,39.30,-76.61",
            "2020-01-01T13:00:00Z,assault,39.31,-76.60",
            "2020-01-02T02:15:00+00:00,robbery,39.29,-76.62",
        ]))
        assert len(res.records) == 3
        assert res.n_malformed == 0 and res.n_unknown_category == 0
        assert res.records[0].category == "burglary"
        assert res.records[0].timestamp == 1577838600
        assert res.records[1].lat == pytest.approx(39.31)

    def test_unknown_category_skipped_not_malformed(self):
        res = ingest.parse_events(events_csv([
            "2020-01-01T00:30:00Z,burglary,39.30,-76.61",
            "2020-01-01T01:30:00Z,arson,39.30,-76.61",
        ]))
        assert len(res.records) == 1
        assert res.n_unknown_category == 1
        assert res.n_malformed == 0

    def test_bad_row_threshold_rejects_file(self):
        rows = ["2020-01-01T00:30:00Z,burglary,39.30,-76.61"] * 8 + ["garbage,x", "also,bad,row"]
        with pytest.raises(ValueError, match="malformed"):
            ingest.parse_events(events_csv(rows))

    def test_under_threshold_keeps_going(self):
        rows = ["2020-01-01T00:30:00Z,burglary,39.30,-76.61"] * 19 + ["not-a-time,burglary,1,2"]
        res = ingest.parse_events(events_csv(rows))
        assert len(res.records) == 19
        assert res.n_malformed == 1

    def test_missing_header_rejected(self):
        with pytest.raises(ValueError, match="header"):
            ingest.parse_events(io.StringIO("2020-01-01T00:00:00Z,burglary,1,2\n"))

    def test_span_filter_end_exclusive(self):
        span = (ingest.parse_utc("2020-01-01T00:00:00Z"), ingest.parse_utc("2020-01-02T00:00:00Z"))
        res = ingest.parse_events(events_csv([
            "2019-12-31T23:59:59Z,robbery,1,2",
            "2020-01-01T00:00:00Z,robbery,1,2",
            "2020-01-02T00:00:00Z,robbery,1,2",
        ]), span=span)
        assert len(res.records) == 1
        assert res.n_out_of_span == 2

    def test_order_preserved(self):
        res = ingest.parse_events(events_csv([
            "2020-01-03T00:00:00Z,mvt,1,2",
            "2020-01-01T00:00:00Z,homicide,1,2",
        ]))
        assert [r.category for r in res.records] == ["mvt", "homicide"]


class TestCategoryMapping:
    def test_known_strings(self):
        assert ingest.map_top_category("Restaurants and Other Eating Places").id == 9
        assert ingest.map_top_category("Postal Service").id == 4
        assert ingest.map_top_category("Grocery Stores").id == 3
        assert ingest.map_top_category("Justice, Public Order, and Safety Activities").id == 10

    def test_duplicate_industry_resolved_to_transportation(self):
        assert CATEGORY_OF_INDUSTRY["Freight Transportation Arrangement"] == 4

    def test_lookup_total_and_collision_free(self):
        seen = {}
        for cat_id, names in _GROUPS.items():
            for name in names:
                assert name not in seen, f"{name} in {seen.get(name)} and {cat_id}"
                seen[name] = cat_id
                assert ingest.map_top_category(name, mode="strict").id == cat_id

    def test_lenient_fallback(self):
        cat = ingest.map_top_category("Nonexistent Category")
        assert cat.id == 11
        assert cat.name == "Other Services"

    def test_strict_mode_raises_with_string(self):
        with pytest.raises(ValueError, match="Nonexistent Category"):
            ingest.map_top_category("Nonexistent Category", mode="strict")


class TestPoiVisits:
    def visit_row(self, hours, week="2020-01-06"):
        return f'p1,Grocery Stores,39.3,-76.6,{week},"{json.dumps(hours)}"'

    def csv_of(self, rows):
        return io.StringIO(
            "poi_id,top_category,lat,lon,week_start,hourly_visits\n"
            + "".join(r + "\n" for r in rows))

    def test_parse_and_expand(self):
        res = ingest.parse_poi_visits(self.csv_of([self.visit_row([1] * 168)]))
        assert res.n_malformed == 0
        rec = res.records[0]
        assert len(rec.hourly_visits) == 168
        origin = ingest.parse_utc_date("2020-01-06")
        blocks = ingest.visits_to_halfday_blocks(rec, origin)
        assert blocks == [(k, 12) for k in range(14)]

    def test_wrong_length_array_is_malformed(self):
        res = ingest.parse_poi_visits(self.csv_of(
            [self.visit_row([1] * 167)] + [self.visit_row([0] * 168)] * 9))
        assert res.n_malformed == 1
        assert len(res.records) == 9

    def test_negative_count_is_malformed(self):
        hours = [0] * 168
        hours[5] = -2
        res = ingest.parse_poi_visits(self.csv_of(
            [self.visit_row(hours)] + [self.visit_row([0] * 168)] * 9))
        assert res.n_malformed == 1

    def test_expansion_matches_per_hour_oracle(self):
        rng = np.random.default_rng(11)
        hours = [int(v) for v in rng.integers(0, 40, size=168)]
        rec = ingest.PoiVisitRecord("p", "c", 0.0, 0.0,
                                    ingest.parse_utc_date("2020-01-20"), tuple(hours))
        origin = ingest.parse_utc_date("2020-01-06")
        got = dict(ingest.visits_to_halfday_blocks(rec, origin))
        oracle = {}
        for h, v in enumerate(hours):
            ts = rec.week_start + h * 3600
            b = (ts - origin) // ingest.SECONDS_PER_BLOCK
            oracle[b] = oracle.get(b, 0) + v
        assert got == oracle
        assert sum(got.values()) == sum(hours)

    def test_conservation_over_random_weeks(self):
        rng = np.random.default_rng(12)
        origin = ingest.parse_utc_date("2020-01-06")
        for _ in range(25):
            hours = tuple(int(v) for v in rng.integers(0, 100, size=168))
            week = origin + int(rng.integers(0, 40)) * ingest.SECONDS_PER_BLOCK
            rec = ingest.PoiVisitRecord("p", "c", 0.0, 0.0, week, hours)
            blocks = ingest.visits_to_halfday_blocks(rec, origin)
            assert len(blocks) == 14
            assert sum(v for _, v in blocks) == sum(hours)

    def test_misaligned_week_rejected(self):
        rec = ingest.PoiVisitRecord("p", "c", 0.0, 0.0,
                                    ingest.parse_utc_date("2020-01-06") + 3600, (0,) * 168)
        with pytest.raises(ValueError, match="misaligned"):
            ingest.visits_to_halfday_blocks(rec, ingest.parse_utc_date("2020-01-06"))

    def test_week_before_origin_rejected(self):
        rec = ingest.PoiVisitRecord("p", "c", 0.0, 0.0,
                                    ingest.parse_utc_date("2020-01-06"), (0,) * 168)
        with pytest.raises(ValueError, match="precedes"):
            ingest.visits_to_halfday_blocks(rec, ingest.parse_utc_date("2020-01-13"))


class TestPeopleToPoiRatio:
    def test_baltimore_like_stats(self):
        # frozen: 2930 / (28218 / 210) = 21.805, reported as 21.78 (0.5% tolerance)
        ratio = ingest.people_to_poi_ratio(ingest.CityStats(210.0, 2930.0, 28218))
        assert ratio == pytest.approx(21.78, rel=5e-3)

    def test_chicago_like_stats(self):
        # frozen: 4581 / (95049 / 591) = 28.484, reported as 28.46
        ratio = ingest.people_to_poi_ratio(ingest.CityStats(591.0, 4581.0, 95049))
        assert ratio == pytest.approx(28.46, rel=5e-3)

    def test_poi_density_one(self):
        assert ingest.people_to_poi_ratio(ingest.CityStats(50.0, 1234.0, 50)) == pytest.approx(1234.0)

    def test_area_scale_invariance(self):
        r1 = ingest.people_to_poi_ratio(ingest.CityStats(100.0, 3000.0, 5000))
        r2 = ingest.people_to_poi_ratio(ingest.CityStats(300.0, 3000.0, 15000))
        assert r1 == pytest.approx(r2)

    def test_zero_pois_rejected(self):
        with pytest.raises(ValueError):
            ingest.people_to_poi_ratio(ingest.CityStats(100.0, 3000.0, 0))


def bg_feature(coords, props):
    return {"type": "Feature",
            "geometry": {"type": "Polygon", "coordinates": [coords]},
            "properties": props}


SQUARE = [[0, 0], [1, 0], [1, 1], [0, 1], [0, 0]]
BOWTIE = [[0, 0], [1, 1], [1, 0], [0, 1], [0, 0]]


class TestBlockGroups:
    def write(self, tmp_path, features):
        path = tmp_path / "bg.geojson"
        path.write_text(json.dumps({"type": "FeatureCollection", "features": features}))
        return path

    def test_valid_features(self, tmp_path):
        props = {k: 50.0 for k in ingest.SOCIODEMO_KEYS}
        props["median_household_income"] = 52000.0
        props["median_age_male"] = 34.0
        path = self.write(tmp_path, [bg_feature(SQUARE, props)] * 2)
        res = ingest.parse_block_groups(path, year=2020)
        assert len(res.records) == 2
        assert res.records[0].year == 2020
        assert res.records[0].values["median_household_income"] == 52000.0
        assert len(res.records[0].values) == 26

    def test_missing_property_absent(self, tmp_path):
        props = {k: 10.0 for k in ingest.SOCIODEMO_KEYS if k != "median_household_income"}
        path = self.write(tmp_path, [bg_feature(SQUARE, props)])
        res = ingest.parse_block_groups(path, year=2019)
        assert "median_household_income" not in res.records[0].values

    def test_self_intersecting_polygon_skipped(self, tmp_path):
        props = {k: 10.0 for k in ingest.SOCIODEMO_KEYS}
        path = self.write(tmp_path, [bg_feature(BOWTIE, props), bg_feature(SQUARE, props)])
        res = ingest.parse_block_groups(path, year=2020)
        assert len(res.records) == 1
        assert res.n_invalid_geometry == 1

    def test_out_of_range_percentage_becomes_nan(self, tmp_path):
        import math

        props = {k: 10.0 for k in ingest.SOCIODEMO_KEYS}
        props["pct_female"] = 140.0
        props["median_household_income"] = 1e6  # medians are not range-checked
        path = self.write(tmp_path, [bg_feature(SQUARE, props)])
        res = ingest.parse_block_groups(path, year=2020)
        assert math.isnan(res.records[0].values["pct_female"])
        assert res.records[0].values["median_household_income"] == 1e6
        assert res.n_out_of_range == 1

    def test_unknown_format_version_rejected(self, tmp_path):
        path = tmp_path / "bg.geojson"
        path.write_text(json.dumps(
            {"type": "FeatureCollection", "format_version": 99, "features": []}))
        with pytest.raises(ValueError, match="format_version"):
            ingest.parse_block_groups(path, year=2020)


class TestBlockClock:
    def test_five_year_span_block_count(self):
        clock = ingest.BlockClock.for_local_span("2019-01-01", "2023-12-26")
        assert clock.n_blocks == 3640

    def test_single_day_two_blocks(self):
        clock = ingest.BlockClock.for_local_span("2020-03-01", "2020-03-02")
        assert clock.n_blocks == 2

    def test_empty_span_rejected(self):
        with pytest.raises(ValueError):
            ingest.BlockClock.for_local_span("2020-01-02", "2020-01-02")

    def test_block_of_respects_local_offset(self):
        # local time = UTC - 5h: local 2020-06-01 00:00 is 05:00 UTC
        clock = ingest.BlockClock.for_local_span("2020-06-01", "2020-06-03", utc_offset_s=-5 * 3600)
        t0 = ingest.parse_utc("2020-06-01T05:00:00Z")
        assert clock.block_of(t0) == 0
        assert clock.block_of(t0 - 1) is None
        assert clock.block_of(ingest.parse_utc("2020-06-01T16:59:59Z")) == 0
        assert clock.block_of(ingest.parse_utc("2020-06-01T17:00:00Z")) == 1
        assert clock.block_of(ingest.parse_utc("2020-06-03T04:59:59Z")) == 3
        assert clock.block_of(ingest.parse_utc("2020-06-03T05:00:00Z")) is None

    def test_night_day_parity(self):
        clock = ingest.BlockClock.for_local_span("2020-06-01", "2020-06-03")
        assert clock.is_night_block(0) and not clock.is_night_block(1)

    def test_local_year_boundary(self):
        clock = ingest.BlockClock.for_local_span("2019-12-31", "2020-01-02", utc_offset_s=-5 * 3600)
        assert clock.local_year_of_block(0) == 2019
        assert clock.local_year_of_block(1) == 2019
        assert clock.local_year_of_block(2) == 2020

    def test_span_end_exclusive(self):
        clock = ingest.BlockClock.for_local_span("2020-01-01", "2020-01-03")
        start, end = clock.span()
        assert end - start == 4 * ingest.SECONDS_PER_BLOCK
        assert clock.block_of(end) is None
        assert clock.block_of(end - 1) == 3
