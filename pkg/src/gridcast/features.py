"""Per-cell, per-half-day feature channels and 39-channel frame assembly.

Channel layout (fixed): 0 event occurrence (binary), 1-11 footfall by venue
category, 12 venue-mix diversity, 13-38 the 26 demographic variables in
`ingest.SOCIODEMO_KEYS` order. Masked cells hold NaN in every channel; no
value is ever fabricated for them.
"""

from __future__ import annotations

import os
import struct
from dataclasses import dataclass, replace

import numpy as np

from . import geo, ingest
from .poi_categories import N_CATEGORIES

N_CHANNELS = 39
CH_CRIME = 0
CH_FOOTFALL = slice(1, 12)
CH_DIVERSITY = 12
CH_SOCIO = slice(13, 39)

FEATURE_SETS = {
    "C": (0,),
    "CM": tuple(range(0, 13)),
    "CS": (0,) + tuple(range(13, 39)),
    "CMS": tuple(range(N_CHANNELS)),
}


@dataclass
class FrameStack:
    """Contiguous stack of frames: (n_blocks, n_rows, n_cols, n_channels) float32."""

    data: np.ndarray
    mask: np.ndarray  # (n_rows, n_cols) bool, True = modeled cell
    normalized: bool = False

    @property
    def n_blocks(self):
        return self.data.shape[0]

    @property
    def n_channels(self):
        return self.data.shape[3]


@dataclass
class NormalizationStats:
    channel_min: np.ndarray
    channel_max: np.ndarray


def shannon_diversity(category_counts):
    """Entropy (nats) of the category mix; zero when nothing is present."""
    counts = np.asarray(category_counts, dtype=np.float64)
    if np.any(counts < 0):
        raise ValueError("category counts must be non-negative")
    total = counts.sum()
    if total == 0:
        return 0.0
    p = counts[counts > 0] / total
    return float(-(p * np.log(p)).sum())


def diversity_grid(active_counts):
    """Vectorized entropy over a (11, n_rows, n_cols) active-venue count array."""
    counts = np.asarray(active_counts, dtype=np.float64)
    total = counts.sum(axis=0)
    with np.errstate(divide="ignore", invalid="ignore"):
        p = np.where(total > 0, counts / np.where(total > 0, total, 1.0), 0.0)
        h = np.where(p > 0, -p * np.log(np.where(p > 0, p, 1.0)), 0.0).sum(axis=0)
    return h


def _masked(matrix, mask):
    out = np.asarray(matrix, dtype=np.float64)
    out[~mask] = np.nan
    return out


def crime_channel(events, spec, mask, block_index, clock, categories=None):
    """Binary occurrence matrix for one block; NaN at masked cells.

    `categories` restricts the event types that count (defaults to all five).
    """
    cats = frozenset(categories) if categories is not None else frozenset(ingest.EVENT_CATEGORIES)
    if not cats:
        raise ValueError("categories must be non-empty")
    grid = np.zeros((spec.n_rows, spec.n_cols))
    for ev in events:
        if ev.category not in cats or clock.block_of(ev.timestamp) != block_index:
            continue
        cell = geo.cell_of(ev.lon, ev.lat, spec)
        if cell is not None and mask[cell.row, cell.col]:
            grid[cell.row, cell.col] = 1.0
    return _masked(grid, mask)


def footfall_channels(visits, spec, mask, block_index, block_origin, category_mode="lenient"):
    """(11, n_rows, n_cols) visit totals for one block, by venue category."""
    grids = np.zeros((N_CATEGORIES, spec.n_rows, spec.n_cols))
    for rec in visits:
        cell = geo.cell_of(rec.lon, rec.lat, spec)
        if cell is None or not mask[cell.row, cell.col]:
            continue
        cat = ingest.map_top_category(rec.top_category, category_mode).id
        for b, v in ingest.visits_to_halfday_blocks(rec, block_origin):
            if b == block_index and v:
                grids[cat - 1, cell.row, cell.col] += v
    return np.stack([_masked(g, mask) for g in grids])


def sociodemo_channels(block_groups, spec, mask):
    """(26, n_rows, n_cols) unweighted means over block groups touching each cell.

    A group missing a variable simply does not contribute to that variable's
    mean; a cell touched by no group gets NaN everywhere (those cells are
    normally mask-excluded upstream).
    """
    n_vars = len(ingest.SOCIODEMO_KEYS)
    values = np.full((len(block_groups), n_vars), np.nan)
    for gi, rec in enumerate(block_groups):
        for ki, key in enumerate(ingest.SOCIODEMO_KEYS):
            if key in rec.values:
                values[gi, ki] = rec.values[key]
    out = np.full((n_vars, spec.n_rows, spec.n_cols), np.nan)
    for r in range(spec.n_rows):
        for c in range(spec.n_cols):
            if not mask[r, c]:
                continue
            poly = geo.cell_polygon(spec, r, c)
            rows = [gi for gi, rec in enumerate(block_groups) if rec.geometry.intersects(poly)]
            if not rows:
                continue
            vals = values[rows]
            n_present = (~np.isnan(vals)).sum(axis=0)
            total = np.nansum(vals, axis=0)
            out[:, r, c] = np.where(n_present > 0, total / np.maximum(n_present, 1), np.nan)
    return out


def assemble_frames(crime, footfall, diversity, socio, mask):
    """Stack the four channel groups into (n_blocks, n_rows, n_cols, 39).

    All inputs must agree on block count and grid shape; the channel split
    must be exactly 1 + 11 + 1 + 26.
    """
    crime = np.asarray(crime)
    footfall = np.asarray(footfall)
    diversity = np.asarray(diversity)
    socio = np.asarray(socio)
    n_blocks, n_rows, n_cols = crime.shape
    if footfall.shape != (n_blocks, N_CATEGORIES, n_rows, n_cols):
        raise ValueError(f"footfall shape {footfall.shape} does not match "
                         f"({n_blocks}, {N_CATEGORIES}, {n_rows}, {n_cols})")
    if diversity.shape != crime.shape:
        raise ValueError(f"diversity shape {diversity.shape} != {crime.shape}")
    if socio.shape != (n_blocks, len(ingest.SOCIODEMO_KEYS), n_rows, n_cols):
        raise ValueError(f"demographics shape {socio.shape} is wrong")
    data = np.empty((n_blocks, n_rows, n_cols, N_CHANNELS), dtype=np.float32)
    data[..., CH_CRIME] = crime
    data[..., CH_FOOTFALL] = np.moveaxis(footfall, 1, -1)
    data[..., CH_DIVERSITY] = diversity
    data[..., CH_SOCIO] = np.moveaxis(socio, 1, -1)
    data[:, ~mask, :] = np.nan
    return FrameStack(data=data, mask=np.asarray(mask, dtype=bool))


def build_frames(events, visits, block_groups_by_year, spec, mask, clock,
                 categories=None, category_mode="lenient"):
    """Full pipeline from parsed records to a 39-channel FrameStack."""
    cats = frozenset(categories) if categories is not None else frozenset(ingest.EVENT_CATEGORIES)
    if not cats:
        raise ValueError("categories must be non-empty")
    n_blocks = clock.n_blocks
    shape = (spec.n_rows, spec.n_cols)

    crime = np.zeros((n_blocks,) + shape)
    if events:
        lons = np.array([ev.lon for ev in events])
        lats = np.array([ev.lat for ev in events])
        rows, cols, inside = geo.cells_of(lons, lats, spec)
        for ev, r, c, ok in zip(events, rows, cols, inside):
            if not ok or ev.category not in cats or not mask[r, c]:
                continue
            b = clock.block_of(ev.timestamp)
            if b is not None:
                crime[b, r, c] = 1.0

    footfall = np.zeros((n_blocks, N_CATEGORIES) + shape)
    active = np.zeros((n_blocks, N_CATEGORIES) + shape)
    for rec in visits:
        cell = geo.cell_of(rec.lon, rec.lat, spec)
        if cell is None or not mask[cell.row, cell.col]:
            continue
        cat = ingest.map_top_category(rec.top_category, category_mode).id - 1
        for b, v in ingest.visits_to_halfday_blocks(rec, clock.origin_utc):
            if 0 <= b < n_blocks and v:
                footfall[b, cat, cell.row, cell.col] += v
                active[b, cat, cell.row, cell.col] += 1
    diversity = np.stack([diversity_grid(active[b]) for b in range(n_blocks)])

    socio = np.empty((n_blocks, len(ingest.SOCIODEMO_KEYS)) + shape)
    if block_groups_by_year:
        vintages = sorted(block_groups_by_year)
        per_year = {}
        for b in range(n_blocks):
            year = clock.local_year_of_block(b)
            eligible = [y for y in vintages if y <= year]
            vintage = eligible[-1] if eligible else vintages[0]
            if vintage not in per_year:
                per_year[vintage] = sociodemo_channels(block_groups_by_year[vintage], spec, mask)
            socio[b] = per_year[vintage]
    else:
        socio[:] = np.nan

    return assemble_frames(crime, footfall, diversity, socio, mask)


def select_features(stack, feature_set):
    """Subset channels for an ablation: C, CM, CS, or CMS."""
    if feature_set not in FEATURE_SETS:
        raise ValueError(f"unknown feature set {feature_set!r}; "
                         f"expected one of {sorted(FEATURE_SETS)}")
    idx = list(FEATURE_SETS[feature_set])
    return replace(stack, data=np.ascontiguousarray(stack.data[..., idx]))


def fit_minmax(stack, n_train_blocks):
    """Per-channel min/max over the first `n_train_blocks` frames, NaN-blind."""
    if not 0 < n_train_blocks <= stack.n_blocks:
        raise ValueError(f"n_train_blocks {n_train_blocks} outside (0, {stack.n_blocks}]")
    train = stack.data[:n_train_blocks].astype(np.float64)
    flat = train.reshape(-1, stack.n_channels)
    with np.errstate(all="ignore"):
        lo = np.nanmin(flat, axis=0)
        hi = np.nanmax(flat, axis=0)
    # a channel that is NaN everywhere (fully masked grid column) normalizes to 0
    lo = np.where(np.isnan(lo), 0.0, lo)
    hi = np.where(np.isnan(hi), 0.0, hi)
    return NormalizationStats(channel_min=lo, channel_max=hi)


def apply_minmax(stack, stats):
    """Map each channel through (v - min) / (max - min); constant channels go to 0.

    Values above the training max extrapolate past 1 on purpose. Already
    normalized stacks are returned unchanged, so a second application cannot
    squash the data twice.
    """
    if stack.normalized:
        return stack
    if stats.channel_min.shape != (stack.n_channels,):
        raise ValueError("stats do not match the stack's channel count")
    span = stats.channel_max - stats.channel_min
    safe = np.where(span > 0, span, 1.0)
    data = (stack.data.astype(np.float64) - stats.channel_min) / safe
    data = np.where(span > 0, data, 0.0)
    data[:, ~stack.mask, :] = np.nan
    return FrameStack(data=data.astype(np.float32), mask=stack.mask, normalized=True)


FRAME_MAGIC = b"GCFR"
FRAME_FORMAT_VERSION = 1


def save_frames(path, stack):
    """Binary frame file: header, mask bitmap, little-endian float32 data. Atomic."""
    n_blocks, n_rows, n_cols, n_ch = stack.data.shape
    bits = np.packbits(stack.mask.reshape(-1).astype(np.uint8), bitorder="little")
    tmp = f"{path}.tmp"
    with open(tmp, "wb") as f:
        f.write(FRAME_MAGIC)
        f.write(struct.pack("<IIIIIB", FRAME_FORMAT_VERSION, n_blocks, n_rows, n_cols,
                            n_ch, 1 if stack.normalized else 0))
        f.write(bits.tobytes())
        f.write(np.ascontiguousarray(stack.data, dtype="<f4").tobytes())
    os.replace(tmp, path)


def load_frames(path):
    with open(path, "rb") as f:
        if f.read(4) != FRAME_MAGIC:
            raise ValueError(f"{path}: not a frame file")
        version, n_blocks, n_rows, n_cols, n_ch, norm = struct.unpack("<IIIIIB", f.read(21))
        if version != FRAME_FORMAT_VERSION:
            raise ValueError(f"{path}: unsupported frame format_version {version}")
        n_cells = n_rows * n_cols
        bits = np.frombuffer(f.read((n_cells + 7) // 8), dtype=np.uint8)
        mask = np.unpackbits(bits, count=n_cells, bitorder="little").astype(bool)
        mask = mask.reshape(n_rows, n_cols)
        payload = f.read(4 * n_blocks * n_cells * n_ch)
        if len(payload) != 4 * n_blocks * n_cells * n_ch:
            raise ValueError(f"{path}: truncated frame data")
        data = np.frombuffer(payload, dtype="<f4").astype(np.float32)
        data = data.reshape(n_blocks, n_rows, n_cols, n_ch)
    return FrameStack(data=data, mask=mask, normalized=bool(norm))
