"""Readers for the three raw inputs, plus the half-day block clock.

Events arrive as CSV (`timestamp,category,lat,lon`), venue visits as CSV with
a quoted JSON array of 168 hourly counts, demographics as GeoJSON features
carrying the 26 named variables. Timestamps are normalized to UTC seconds on
ingest; alignment of 12-hour blocks to local midnight/noon happens through
the clock's configured UTC offset.
"""

from __future__ import annotations

import csv
import json
import math
from dataclasses import dataclass
from datetime import date, datetime, timezone
from typing import NamedTuple

from . import geo
from .poi_categories import CATEGORY_NAMES, CATEGORY_OF_INDUSTRY

EVENT_CATEGORIES = ("burglary", "mvt", "assault", "homicide", "robbery")
PROPERTY_CATEGORIES = frozenset(("burglary", "mvt"))
VIOLENT_CATEGORIES = frozenset(("assault", "homicide", "robbery"))

SECONDS_PER_HOUR = 3600
SECONDS_PER_BLOCK = 12 * SECONDS_PER_HOUR
HOURS_PER_WEEK = 168
BLOCKS_PER_WEEK = 14

# channel order for the demographic block of the feature tensor
SOCIODEMO_KEYS = (
    "pct_female",
    "median_age_male",
    "median_age_female",
    "pct_white",
    "pct_black",
    "pct_native_american",
    "pct_asian",
    "pct_pacific_islander",
    "pct_other_race",
    "pct_employed",
    "pct_unemployed",
    "pct_armed_forces",
    "pct_not_in_labor_force",
    "median_household_income",
    "pct_no_schooling",
    "pct_high_school",
    "pct_bachelors",
    "pct_professional_degree",
    "pct_male_never_married",
    "pct_male_married",
    "pct_male_widowed",
    "pct_male_divorced",
    "pct_female_never_married",
    "pct_female_married",
    "pct_female_widowed",
    "pct_female_divorced",
)
PERCENT_KEYS = frozenset(k for k in SOCIODEMO_KEYS if k.startswith("pct_"))


def parse_utc(text):
    """ISO-8601 timestamp to integer UTC seconds; naive times are taken as UTC."""
    dt = datetime.fromisoformat(text.strip().replace("Z", "+00:00"))
    if dt.tzinfo is None:
        dt = dt.replace(tzinfo=timezone.utc)
    return int(dt.timestamp())


def parse_utc_date(text):
    """Date or timestamp string to UTC seconds at the instant it names."""
    text = text.strip()
    if len(text) == 10:
        d = date.fromisoformat(text)
        return int(datetime(d.year, d.month, d.day, tzinfo=timezone.utc).timestamp())
    return parse_utc(text)


class EventRecord(NamedTuple):
    timestamp: int
    category: str
    lat: float
    lon: float


class PoiVisitRecord(NamedTuple):
    poi_id: str
    top_category: str
    lat: float
    lon: float
    week_start: int
    hourly_visits: tuple


class PoiCategory(NamedTuple):
    id: int
    name: str


class BlockGroupRecord(NamedTuple):
    geometry: object
    year: int
    values: dict


class CityStats(NamedTuple):
    area_km2: float
    population_density_per_km2: float
    poi_count: int


@dataclass
class EventParseResult:
    records: list
    n_malformed: int = 0
    n_unknown_category: int = 0
    n_out_of_span: int = 0


@dataclass
class PoiVisitParseResult:
    records: list
    n_malformed: int = 0


@dataclass
class BlockGroupParseResult:
    records: list
    n_invalid_geometry: int = 0
    n_out_of_range: int = 0


EVENT_HEADER = ["timestamp", "category", "lat", "lon"]
VISIT_HEADER = ["poi_id", "top_category", "lat", "lon", "week_start", "hourly_visits"]


def _check_header(got, want, what):
    if got != want:
        raise ValueError(f"{what}: expected header {','.join(want)!r}, got "
                         f"{None if got is None else ','.join(got)!r}")


def parse_events(stream, span=None, max_bad_fraction=0.1):
    """Read the event CSV.

    Malformed rows (bad timestamp/coordinates/field count) are skipped and
    counted; more than `max_bad_fraction` of them rejects the whole file.
    Rows with a well-formed but unrecognized category are skipped under a
    separate count, as are rows outside the optional [start, end) UTC-second
    `span`.
    """
    reader = csv.reader(stream)
    header = next(reader, None)
    _check_header(header, EVENT_HEADER, "events")
    res = EventParseResult(records=[])
    n_rows = 0
    for row in reader:
        if not row:
            continue
        n_rows += 1
        if len(row) != 4:
            res.n_malformed += 1
            continue
        try:
            ts = parse_utc(row[0])
            lat = float(row[2])
            lon = float(row[3])
        except (ValueError, OverflowError):
            res.n_malformed += 1
            continue
        category = row[1].strip()
        if category not in EVENT_CATEGORIES:
            res.n_unknown_category += 1
            continue
        if span is not None and not (span[0] <= ts < span[1]):
            res.n_out_of_span += 1
            continue
        res.records.append(EventRecord(ts, category, lat, lon))
    if n_rows and res.n_malformed / n_rows > max_bad_fraction:
        raise ValueError(
            f"events: {res.n_malformed} of {n_rows} rows malformed, "
            f"over the {max_bad_fraction:.0%} threshold")
    return res


def map_top_category(top_category, mode="lenient"):
    """Venue industry string to one of the 11 footfall categories.

    Unknown strings map to category 11 in lenient mode (the taxonomy is not
    exhaustive over the full industry vocabulary) and raise in strict mode.
    """
    cat_id = CATEGORY_OF_INDUSTRY.get(top_category)
    if cat_id is None:
        if mode == "strict":
            raise ValueError(f"unknown venue category {top_category!r}")
        if mode != "lenient":
            raise ValueError(f"mode must be 'strict' or 'lenient', got {mode!r}")
        cat_id = 11
    return PoiCategory(cat_id, CATEGORY_NAMES[cat_id])


def parse_poi_visits(stream, max_bad_fraction=0.1):
    """Read the venue visit CSV; `hourly_visits` is one quoted JSON array of 168 counts."""
    reader = csv.reader(stream)
    header = next(reader, None)
    _check_header(header, VISIT_HEADER, "poi visits")
    res = PoiVisitParseResult(records=[])
    n_rows = 0
    for row in reader:
        if not row:
            continue
        n_rows += 1
        if len(row) != 6:
            res.n_malformed += 1
            continue
        try:
            lat = float(row[2])
            lon = float(row[3])
            week_start = parse_utc_date(row[4])
            hours = json.loads(row[5])
        except (ValueError, OverflowError):
            res.n_malformed += 1
            continue
        if (not isinstance(hours, list) or len(hours) != HOURS_PER_WEEK
                or any(not isinstance(h, int) or h < 0 for h in hours)):
            res.n_malformed += 1
            continue
        res.records.append(PoiVisitRecord(row[0], row[1], lat, lon, week_start, tuple(hours)))
    if n_rows and res.n_malformed / n_rows > max_bad_fraction:
        raise ValueError(
            f"poi visits: {res.n_malformed} of {n_rows} rows malformed, "
            f"over the {max_bad_fraction:.0%} threshold")
    return res


def visits_to_halfday_blocks(rec, block_origin):
    """Fold one weekly record into 14 (block_index, visits) pairs.

    The week must start on a block boundary relative to `block_origin`;
    the total count is conserved exactly.
    """
    offset = rec.week_start - block_origin
    if offset < 0:
        raise ValueError(f"week_start precedes the block origin by {-offset} s")
    if offset % SECONDS_PER_BLOCK != 0:
        raise ValueError(
            f"week_start misaligned: {offset} s from origin is not a multiple "
            f"of {SECONDS_PER_BLOCK}")
    first_block = offset // SECONDS_PER_BLOCK
    return [(first_block + k, sum(rec.hourly_visits[12 * k:12 * k + 12]))
            for k in range(BLOCKS_PER_WEEK)]


def people_to_poi_ratio(stats):
    """People per venue: population density over venue density."""
    if stats.area_km2 <= 0 or stats.population_density_per_km2 <= 0 or stats.poi_count <= 0:
        raise ValueError(f"city stats must be strictly positive, got {stats}")
    return stats.population_density_per_km2 / (stats.poi_count / stats.area_km2)


def parse_block_groups(path, year):
    """Read the demographic GeoJSON for one vintage year.

    Features with invalid or empty geometry are skipped and counted. A
    percentage outside [0, 100] becomes NaN (counted); a missing property
    is simply absent from the record's value dict.
    """
    res = BlockGroupParseResult(records=[])
    for geom, props in geo.load_geojson_features(path):
        if geom.is_empty or not geom.is_valid:
            res.n_invalid_geometry += 1
            continue
        values = {}
        for key in SOCIODEMO_KEYS:
            if key not in props:
                continue
            try:
                v = float(props[key])
            except (TypeError, ValueError):
                v = math.nan
                res.n_out_of_range += 1
            if key in PERCENT_KEYS and not (0.0 <= v <= 100.0):
                v = math.nan
                res.n_out_of_range += 1
            values[key] = v
        res.records.append(BlockGroupRecord(geom, year, values))
    return res


@dataclass(frozen=True)
class BlockClock:
    """Maps UTC timestamps to half-day block indices.

    Blocks are 12 hours long, starting at local midnight and noon; local
    time is UTC + `utc_offset_s`. Block 0 starts at `origin_utc`.
    """

    origin_utc: int
    n_blocks: int
    utc_offset_s: int = 0

    @classmethod
    def for_local_span(cls, start_date, end_date, utc_offset_s=0):
        """Clock covering local calendar days [start_date, end_date), two blocks per day."""
        d0 = date.fromisoformat(start_date)
        d1 = date.fromisoformat(end_date)
        days = (d1 - d0).days
        if days <= 0:
            raise ValueError(f"empty span {start_date}..{end_date}")
        midnight_utc = int(datetime(d0.year, d0.month, d0.day,
                                    tzinfo=timezone.utc).timestamp()) - utc_offset_s
        return cls(origin_utc=midnight_utc, n_blocks=2 * days, utc_offset_s=utc_offset_s)

    def block_of(self, timestamp):
        """Block index containing the UTC-second timestamp, or None outside the span."""
        i = (timestamp - self.origin_utc) // SECONDS_PER_BLOCK
        return int(i) if 0 <= i < self.n_blocks else None

    def block_start(self, block_index):
        return self.origin_utc + block_index * SECONDS_PER_BLOCK

    def span(self):
        """(start, end) UTC seconds, end-exclusive."""
        return self.origin_utc, self.origin_utc + self.n_blocks * SECONDS_PER_BLOCK

    def local_year_of_block(self, block_index):
        local = self.block_start(block_index) + self.utc_offset_s
        return datetime.fromtimestamp(local, tz=timezone.utc).year

    def is_night_block(self, block_index):
        """True for the 00:00-12:00 local block of each day."""
        return block_index % 2 == 0
