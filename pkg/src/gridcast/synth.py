"""Synthetic city generator for desk-scale end-to-end runs.

Plants a known risk surface: a flat base rate plus isotropic Gaussian
hotspots, modulated by a day/night cycle. Events are Poisson draws from that
surface. POIs and their visit volumes follow the same latent surface with a
strength set by the coupling coefficient, so mobility features carry real
signal about event risk; demographics are smooth functions of the surface.
All four output files use the ingest formats verbatim and are byte-stable
per seed.
"""

from __future__ import annotations

import csv
import json
import math
import os
from dataclasses import dataclass
from datetime import date, timedelta, datetime, timezone

import numpy as np
from shapely.geometry import shape as shapely_shape

from . import geo
from . import ingest

# wide industry rotation so multi-venue cells get nonzero diversity
POI_INDUSTRIES = (
    "Restaurants and Other Eating Places",      # category 9
    "Grocery Stores",                           # category 3
    "Elementary and Secondary Schools",         # category 6
    "Offices of Physicians",                    # category 7
    "Gasoline Stations",                        # category 3
    "Museums, Historical Sites, and Similar Institutions",  # category 8
    "Personal Care Services",                   # category 11
    "Child Day Care Services",                  # category 7
)

EVENT_WEIGHTS = {
    "burglary": 0.28,
    "mvt": 0.22,
    "assault": 0.22,
    "robbery": 0.22,
    "homicide": 0.06,
}


@dataclass(frozen=True)
class SynthConfig:
    seed: int = 0
    n_rows: int = 16
    n_cols: int = 16
    n_hotspots: int = 3
    hotspot_peak: float = 5.0    # extra expected events/cell/block at the peak
    hotspot_radius: float = 3.6  # gaussian sigma in cell units
    base_rate: float = 0.04     # background expected events/cell/block
    day_night_ratio: float = 1.5
    coupling: float = 0.7       # how strongly mobility follows the risk surface
    span_days: int = 365
    start_date: str = "2021-01-04"
    n_pois: int = 140
    visit_scale: float = 1.2    # mean visits per venue per busy hour
    n_block_group_rows: int = 4
    origin_lat: float = 39.05
    origin_lon: float = -76.65


def validate(config):
    if config.n_rows < 1 or config.n_cols < 1:
        raise ValueError("grid extent must be positive")
    if config.n_hotspots < 0:
        raise ValueError("n_hotspots must be non-negative")
    if config.hotspot_peak < 0 or config.base_rate < 0:
        raise ValueError("intensities must be non-negative")
    if not 0.0 <= config.coupling <= 1.0:
        raise ValueError(f"coupling {config.coupling} outside [0, 1]")
    if config.day_night_ratio <= 0:
        raise ValueError("day_night_ratio must be positive")
    if config.span_days < 1:
        raise ValueError("span_days must be >= 1")
    if config.n_pois < 0:
        raise ValueError("n_pois must be non-negative")
    if config.n_block_group_rows < 1:
        raise ValueError("n_block_group_rows must be >= 1")


def _rng(config, stream):
    return np.random.default_rng(np.random.SeedSequence((config.seed, stream)))


def clock_for(config):
    d0 = date.fromisoformat(config.start_date)
    d1 = d0 + timedelta(days=config.span_days)
    return ingest.BlockClock.for_local_span(d0.isoformat(), d1.isoformat())


def boundary_ring(config):
    """Closed lon/lat ring of the rectangular city, sized in exact cells."""
    side = geo.DEFAULT_CELL_SIDE_M
    dlat = config.n_rows * side / geo.METERS_PER_DEG_LAT
    centroid_lat = config.origin_lat + dlat / 2.0
    dlon = config.n_cols * side / geo.lon_scale_m(centroid_lat)
    lon0, lat0 = config.origin_lon, config.origin_lat
    return [
        [lon0, lat0],
        [lon0 + dlon, lat0],
        [lon0 + dlon, lat0 + dlat],
        [lon0, lat0 + dlat],
        [lon0, lat0],
    ]


def grid_for(config):
    ring = boundary_ring(config)
    boundary = shapely_shape({"type": "Polygon", "coordinates": [ring]})
    return geo.grid_spec_for_boundary(boundary)


def hotspot_field(config):
    """Latent risk surface in [0, 1]; peaks exactly at 1 when hotspots exist."""
    rows = np.arange(config.n_rows, dtype=np.float64)[:, None]
    cols = np.arange(config.n_cols, dtype=np.float64)[None, :]
    field = np.zeros((config.n_rows, config.n_cols))
    if config.n_hotspots == 0:
        return field, np.empty((0, 2))
    rng = _rng(config, 0)
    lo_r, hi_r = 1.5, config.n_rows - 2.5
    lo_c, hi_c = 1.5, config.n_cols - 2.5
    centers = np.column_stack([
        rng.uniform(min(lo_r, hi_r), max(lo_r, hi_r), size=config.n_hotspots),
        rng.uniform(min(lo_c, hi_c), max(lo_c, hi_c), size=config.n_hotspots),
    ])
    s2 = 2.0 * config.hotspot_radius ** 2
    for cr, cc in centers:
        field += np.exp(-((rows - cr) ** 2 + (cols - cc) ** 2) / s2)
    peak = field.max()
    if peak > 0:
        field /= peak
    return field, centers


def _block_multipliers(config, n_blocks):
    """Per-block diurnal factor; a day+night pair averages exactly 1."""
    r = config.day_night_ratio
    day = 2.0 * r / (1.0 + r)
    night = 2.0 / (1.0 + r)
    blocks = np.arange(n_blocks)
    return np.where(blocks % 2 == 1, day, night)  # block 0 starts at midnight


def ground_truth_rates(config):
    """Analytic expected event counts, shape (n_blocks, n_rows, n_cols)."""
    validate(config)
    field, _ = hotspot_field(config)
    lam = config.base_rate + config.hotspot_peak * field
    mult = _block_multipliers(config, clock_for(config).n_blocks)
    return mult[:, None, None] * lam[None, :, :]


def _point_in_cell(spec, row, col, u, v):
    x = (col + u) * spec.cell_side_m
    y = (row + v) * spec.cell_side_m
    lon, lat = geo.unproject(x, y, spec)
    return float(lon), float(lat)


def _utc_iso(seconds):
    dt = datetime.fromtimestamp(seconds, tz=timezone.utc)
    return dt.strftime("%Y-%m-%dT%H:%M:%SZ")


def _write_events(path, config, spec, clock):
    rates = ground_truth_rates(config)
    rng = _rng(config, 1)
    names = list(EVENT_WEIGHTS)
    weights = np.array([EVENT_WEIGHTS[k] for k in names])
    weights = weights / weights.sum()
    with open(f"{path}.tmp", "w", encoding="utf-8", newline="") as f:
        writer = csv.writer(f)
        writer.writerow(ingest.EVENT_HEADER)
        for b in range(clock.n_blocks):
            counts = rng.poisson(rates[b])
            t0 = clock.block_start(b)
            for r in range(config.n_rows):
                for c in range(config.n_cols):
                    for _ in range(counts[r, c]):
                        ts = t0 + int(rng.integers(0, ingest.SECONDS_PER_BLOCK))
                        u, v = rng.random(), rng.random()
                        lon, lat = _point_in_cell(spec, r, c, u, v)
                        cat = names[int(rng.choice(len(names), p=weights))]
                        writer.writerow([_utc_iso(ts), cat,
                                         f"{lat:.6f}", f"{lon:.6f}"])
    os.replace(f"{path}.tmp", path)


def _place_pois(config, field):
    """POI cells drawn with probability (1 - coupling) + coupling * field."""
    rng = _rng(config, 2)
    w = (1.0 - config.coupling) + config.coupling * field.reshape(-1)
    total = w.sum()
    if total == 0:
        w = np.ones_like(w)
        total = w.sum()
    cells = rng.choice(w.size, size=config.n_pois, p=w / total)
    offsets = rng.random((config.n_pois, 2))
    return cells, offsets


def _write_poi_visits(path, config, spec, field):
    cells, offsets = _place_pois(config, field)
    rng = _rng(config, 3)
    n_weeks = math.ceil(config.span_days / 7)
    d0 = date.fromisoformat(config.start_date)
    hours = np.arange(ingest.HOURS_PER_WEEK) % 24
    busy = ((hours >= 8) & (hours < 20)).astype(np.float64)
    profile = 0.2 + 0.8 * busy  # quiet nights, busy days
    with open(f"{path}.tmp", "w", encoding="utf-8", newline="") as f:
        writer = csv.writer(f)
        writer.writerow(ingest.VISIT_HEADER)
        for p in range(config.n_pois):
            row, col = divmod(int(cells[p]), config.n_cols)
            lon, lat = _point_in_cell(spec, row, col, offsets[p, 1], offsets[p, 0])
            industry = POI_INDUSTRIES[p % len(POI_INDUSTRIES)]
            rate = config.visit_scale * (1.0 + config.coupling * field[row, col])
            for w in range(n_weeks):
                week_start = (d0 + timedelta(days=7 * w)).isoformat()
                visits = rng.poisson(rate * profile)
                writer.writerow([
                    f"poi{p:04d}", industry, f"{lat:.6f}", f"{lon:.6f}",
                    week_start, json.dumps(visits.tolist(), separators=(",", ":")),
                ])
    os.replace(f"{path}.tmp", path)


def _demographics(config, tile_field, rng):
    """The full variable set; a few track the risk surface, the rest jitter."""
    phi = float(tile_field)
    values = {
        "pct_female": 50.0 + rng.uniform(-2, 2),
        "median_age_male": 36.0 + rng.uniform(-4, 4),
        "median_age_female": 38.0 + rng.uniform(-4, 4),
        "pct_white": 55.0 + rng.uniform(-10, 10),
        "pct_black": 25.0 + rng.uniform(-8, 8),
        "pct_native_american": 0.5 + rng.uniform(0, 0.5),
        "pct_asian": 6.0 + rng.uniform(-2, 2),
        "pct_pacific_islander": 0.2 + rng.uniform(0, 0.3),
        "pct_other_race": 8.0 + rng.uniform(-3, 3),
        "pct_employed": 60.0 - 8.0 * phi + rng.uniform(-2, 2),
        "pct_unemployed": 4.0 + 10.0 * phi + rng.uniform(-1, 1),
        "pct_armed_forces": 0.4 + rng.uniform(0, 0.4),
        "pct_not_in_labor_force": 30.0 + rng.uniform(-4, 4),
        "median_household_income": 82000.0 - 41000.0 * phi + rng.uniform(-3000, 3000),
        "pct_no_schooling": 1.5 + 6.0 * phi + rng.uniform(-0.5, 0.5),
        "pct_high_school": 28.0 + rng.uniform(-5, 5),
        "pct_bachelors": 24.0 - 10.0 * phi + rng.uniform(-3, 3),
        "pct_professional_degree": 3.0 + rng.uniform(-1, 1),
        "pct_male_never_married": 38.0 + rng.uniform(-5, 5),
        "pct_male_married": 44.0 + rng.uniform(-5, 5),
        "pct_male_widowed": 2.5 + rng.uniform(0, 1),
        "pct_male_divorced": 9.0 + rng.uniform(-2, 2),
        "pct_female_never_married": 33.0 + rng.uniform(-5, 5),
        "pct_female_married": 42.0 + rng.uniform(-5, 5),
        "pct_female_widowed": 8.0 + rng.uniform(-2, 2),
        "pct_female_divorced": 11.0 + rng.uniform(-2, 2),
    }
    for key in values:
        if key in ingest.PERCENT_KEYS:
            values[key] = min(100.0, max(0.0, values[key]))
        values[key] = round(values[key], 3)
    return values


def _write_block_groups(path, config, field):
    rng = _rng(config, 4)
    ring = boundary_ring(config)
    lon0, lat0 = ring[0]
    dlon = ring[1][0] - lon0
    dlat = ring[2][1] - lat0
    g = config.n_block_group_rows
    row_edges = np.linspace(0, config.n_rows, g + 1).astype(int)
    col_edges = np.linspace(0, config.n_cols, g + 1).astype(int)
    features = []
    for i in range(g):
        for j in range(g):
            r0, r1 = row_edges[i], row_edges[i + 1]
            c0, c1 = col_edges[j], col_edges[j + 1]
            tile_phi = field[r0:r1, c0:c1].mean() if (r1 > r0 and c1 > c0) else 0.0
            lat_a = lat0 + dlat * r0 / config.n_rows
            lat_b = lat0 + dlat * r1 / config.n_rows
            lon_a = lon0 + dlon * c0 / config.n_cols
            lon_b = lon0 + dlon * c1 / config.n_cols
            ring_ij = [[lon_a, lat_a], [lon_b, lat_a], [lon_b, lat_b],
                       [lon_a, lat_b], [lon_a, lat_a]]
            features.append({
                "type": "Feature",
                "properties": _demographics(config, tile_phi, rng),
                "geometry": {"type": "Polygon", "coordinates": [ring_ij]},
            })
    doc = {"type": "FeatureCollection", "features": features}
    with open(f"{path}.tmp", "w", encoding="utf-8") as f:
        json.dump(doc, f, sort_keys=True, separators=(",", ":"))
        f.write("\n")
    os.replace(f"{path}.tmp", path)


def _write_boundary(path, config):
    doc = {
        "type": "FeatureCollection",
        "features": [{
            "type": "Feature",
            "properties": {"name": "synthetic city"},
            "geometry": {"type": "Polygon", "coordinates": [boundary_ring(config)]},
        }],
    }
    with open(f"{path}.tmp", "w", encoding="utf-8") as f:
        json.dump(doc, f, sort_keys=True, separators=(",", ":"))
        f.write("\n")
    os.replace(f"{path}.tmp", path)


def generate(config, out_dir):
    """Write the four input files; returns their paths keyed by role."""
    validate(config)
    os.makedirs(out_dir, exist_ok=True)
    spec = grid_for(config)
    clock = clock_for(config)
    field, _ = hotspot_field(config)
    paths = {
        "boundary": os.path.join(out_dir, "boundary.geojson"),
        "block_groups": os.path.join(out_dir, "block_groups.geojson"),
        "events": os.path.join(out_dir, "events.csv"),
        "poi_visits": os.path.join(out_dir, "poi_visits.csv"),
    }
    _write_boundary(paths["boundary"], config)
    _write_block_groups(paths["block_groups"], config, field)
    _write_events(paths["events"], config, spec, clock)
    _write_poi_visits(paths["poi_visits"], config, spec, field)
    return paths
