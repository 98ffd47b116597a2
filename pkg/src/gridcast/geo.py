"""Local grid geometry: equirectangular projection, cell indexing, masks.

A city is covered by an axis-aligned grid of square cells anchored at the
southwest corner of the boundary's bounding box. Coordinates are projected
with a local equirectangular approximation, good to well under a cell side
at city scale. All polygon predicates are delegated to shapely; nothing
else in the package touches geometry libraries.
"""

from __future__ import annotations

import json
import math
import os
from typing import NamedTuple

import numpy as np
from shapely.geometry import box, shape
from shapely.ops import unary_union

METERS_PER_DEG_LAT = 110574.0
METERS_PER_DEG_LON_EQUATOR = 111320.0

# side of a square cell with 0.2 km^2 area
DEFAULT_CELL_SIDE_M = 447.2136

GRID_FORMAT_VERSION = 1


class CellIndex(NamedTuple):
    row: int
    col: int


class GridSpec(NamedTuple):
    """Grid frame: SW anchor in lon/lat, cell side in meters, grid shape.

    `centroid_lat` fixes the longitude scale so projection is stable no
    matter which points are later projected.
    """

    origin_lon: float
    origin_lat: float
    cell_side_m: float
    n_rows: int
    n_cols: int
    centroid_lat: float

    def to_dict(self):
        return {
            "origin_lon": self.origin_lon,
            "origin_lat": self.origin_lat,
            "cell_side_m": self.cell_side_m,
            "n_rows": self.n_rows,
            "n_cols": self.n_cols,
            "centroid_lat": self.centroid_lat,
        }

    @classmethod
    def from_dict(cls, d):
        return cls(
            origin_lon=float(d["origin_lon"]),
            origin_lat=float(d["origin_lat"]),
            cell_side_m=float(d["cell_side_m"]),
            n_rows=int(d["n_rows"]),
            n_cols=int(d["n_cols"]),
            centroid_lat=float(d["centroid_lat"]),
        )


def lon_scale_m(centroid_lat):
    """Meters per degree of longitude at the reference latitude."""
    return METERS_PER_DEG_LON_EQUATOR * math.cos(math.radians(centroid_lat))


def project(lon, lat, spec):
    """Lon/lat (scalars or arrays) to meters east/north of the grid origin."""
    x = (np.asarray(lon, dtype=np.float64) - spec.origin_lon) * lon_scale_m(spec.centroid_lat)
    y = (np.asarray(lat, dtype=np.float64) - spec.origin_lat) * METERS_PER_DEG_LAT
    return x, y


def unproject(x, y, spec):
    lon = spec.origin_lon + np.asarray(x, dtype=np.float64) / lon_scale_m(spec.centroid_lat)
    lat = spec.origin_lat + np.asarray(y, dtype=np.float64) / METERS_PER_DEG_LAT
    return lon, lat


def cell_of(lon, lat, spec):
    """Cell containing the point, or None if it falls off the grid.

    Floor convention: a point exactly on a cell's north or east edge belongs
    to the next cell, so points on the grid's outer max edges are outside.
    """
    x, y = project(lon, lat, spec)
    if x < 0 or y < 0:
        return None
    row = int(math.floor(y / spec.cell_side_m))
    col = int(math.floor(x / spec.cell_side_m))
    if row >= spec.n_rows or col >= spec.n_cols:
        return None
    return CellIndex(row, col)


def cells_of(lons, lats, spec):
    """Vectorized cell assignment.

    Returns (rows, cols, inside) where `inside` marks points on the grid;
    rows/cols are only meaningful where inside is True.
    """
    x, y = project(np.asarray(lons), np.asarray(lats), spec)
    rows = np.floor(y / spec.cell_side_m).astype(np.int64)
    cols = np.floor(x / spec.cell_side_m).astype(np.int64)
    inside = (x >= 0) & (y >= 0) & (rows < spec.n_rows) & (cols < spec.n_cols)
    return rows, cols, inside


def chebyshev_neighbors(row, col, n_rows, n_cols):
    """The up-to-8 cells within Chebyshev distance 1, clipped to the grid."""
    out = []
    for dr in (-1, 0, 1):
        for dc in (-1, 0, 1):
            if dr == 0 and dc == 0:
                continue
            r, c = row + dr, col + dc
            if 0 <= r < n_rows and 0 <= c < n_cols:
                out.append(CellIndex(r, c))
    return out


def grid_spec_for_boundary(boundary, cell_side_m=DEFAULT_CELL_SIDE_M):
    """Size a grid to cover `boundary` (a shapely polygonal geometry).

    The SW corner of the bounding box anchors the grid; row/col counts are
    the ceiling of extent over cell side, with a small tolerance so exact
    multiples do not gain a spurious extra row.
    """
    if cell_side_m <= 0:
        raise ValueError(f"cell_side_m must be positive, got {cell_side_m}")
    min_lon, min_lat, max_lon, max_lat = boundary.bounds
    if not (max_lon > min_lon and max_lat > min_lat):
        raise ValueError("boundary has no area")
    centroid_lat = float(boundary.centroid.y)
    x_extent = (max_lon - min_lon) * lon_scale_m(centroid_lat)
    y_extent = (max_lat - min_lat) * METERS_PER_DEG_LAT
    n_rows = int(math.ceil(y_extent / cell_side_m - 1e-9))
    n_cols = int(math.ceil(x_extent / cell_side_m - 1e-9))
    return GridSpec(
        origin_lon=float(min_lon),
        origin_lat=float(min_lat),
        cell_side_m=float(cell_side_m),
        n_rows=max(n_rows, 1),
        n_cols=max(n_cols, 1),
        centroid_lat=centroid_lat,
    )


def cell_polygon(spec, row, col):
    """The cell's footprint as a lon/lat shapely box."""
    x0 = col * spec.cell_side_m
    y0 = row * spec.cell_side_m
    lon0, lat0 = unproject(x0, y0, spec)
    lon1, lat1 = unproject(x0 + spec.cell_side_m, y0 + spec.cell_side_m, spec)
    return box(float(lon0), float(lat0), float(lon1), float(lat1))


def build_mask(spec, city, water_geoms=(), block_groups=()):
    """Boolean (n_rows, n_cols) array, True where a cell is modeled.

    A cell is dropped when it misses the city boundary entirely, lies fully
    under water, or touches no block group (no demographic support).
    """
    water_union = unary_union(list(water_geoms)) if water_geoms else None
    bg_union = unary_union(list(block_groups)) if block_groups else None
    mask = np.zeros((spec.n_rows, spec.n_cols), dtype=bool)
    for r in range(spec.n_rows):
        for c in range(spec.n_cols):
            poly = cell_polygon(spec, r, c)
            if not poly.intersects(city):
                continue
            if water_union is not None and poly.covered_by(water_union):
                continue
            if bg_union is not None and not poly.intersects(bg_union):
                continue
            mask[r, c] = True
    return mask


def _check_doc_version(doc, path):
    # GeoJSON proper has no version marker; ours may carry one
    version = doc.get("format_version") if isinstance(doc, dict) else None
    if version is not None and version != GRID_FORMAT_VERSION:
        raise ValueError(f"{path}: unsupported format_version {version!r}")


def load_geojson_geometry(path):
    """Union of all geometries in a GeoJSON file (FeatureCollection, Feature, or bare geometry)."""
    with open(path) as f:
        doc = json.load(f)
    _check_doc_version(doc, path)
    return _geometry_of(doc, path)


def _geometry_of(doc, origin):
    t = doc.get("type")
    if t == "FeatureCollection":
        feats = doc.get("features", [])
        if not feats:
            raise ValueError(f"{origin}: empty FeatureCollection")
        return unary_union([shape(ft["geometry"]) for ft in feats])
    if t == "Feature":
        return shape(doc["geometry"])
    if t in ("Polygon", "MultiPolygon", "Point", "LineString",
             "MultiPoint", "MultiLineString", "GeometryCollection"):
        return shape(doc)
    raise ValueError(f"{origin}: unrecognized GeoJSON type {t!r}")


def load_geojson_features(path):
    """List of (shapely geometry, properties dict) from a FeatureCollection."""
    with open(path) as f:
        doc = json.load(f)
    _check_doc_version(doc, path)
    if doc.get("type") != "FeatureCollection":
        raise ValueError(f"{path}: expected a FeatureCollection")
    out = []
    for ft in doc.get("features", []):
        out.append((shape(ft["geometry"]), ft.get("properties") or {}))
    return out


def save_grid(path, spec, mask):
    """Grid spec plus validity mask as versioned JSON (atomic write)."""
    mask = np.asarray(mask, dtype=bool)
    if mask.shape != (spec.n_rows, spec.n_cols):
        raise ValueError(f"mask shape {mask.shape} does not match grid "
                         f"({spec.n_rows}, {spec.n_cols})")
    doc = {
        "format_version": GRID_FORMAT_VERSION,
        "grid": spec.to_dict(),
        "mask_rows": ["".join("1" if v else "0" for v in row) for row in mask],
    }
    tmp = f"{path}.tmp"
    with open(tmp, "w") as f:
        json.dump(doc, f, indent=1, sort_keys=True)
        f.write("\n")
    os.replace(tmp, path)


def load_grid(path):
    with open(path) as f:
        doc = json.load(f)
    version = doc.get("format_version")
    if version != GRID_FORMAT_VERSION:
        raise ValueError(f"{path}: unsupported grid format_version {version!r}")
    spec = GridSpec.from_dict(doc["grid"])
    rows = doc["mask_rows"]
    if len(rows) != spec.n_rows or any(len(r) != spec.n_cols for r in rows):
        raise ValueError(f"{path}: mask does not match grid shape")
    mask = np.array([[ch == "1" for ch in row] for row in rows], dtype=bool)
    return spec, mask
