"""Leakage-safe sequence datasets over a frame stack.

A window is T consecutive input frames plus the next frame as target. The
split is chronological (first 90% of windows), and the last T training
windows are deleted so no frame serves as training input and test target at
once. Each window then yields up to k M x M subgrid samples, drawn without
replacement from the valid anchors and kept only when the target patch has
enough positive cells. Samples stay symbolic (block, row, col) until
materialized against the frame stack.
"""

from __future__ import annotations

import json
import math
import os
from dataclasses import dataclass, replace
from typing import NamedTuple

import numpy as np

SPLIT_FORMAT_VERSION = 1

# look-back presets, calendar days to half-day blocks
LOOKBACK_BLOCKS = {1: 2, 2: 4, 7: 14, 14: 28}


class Window(NamedTuple):
    first_input: int
    target_block: int


class SampleRef(NamedTuple):
    target_block: int
    row0: int
    col0: int


@dataclass
class SequenceSample:
    inputs: np.ndarray  # (T, M, M, C) float64, masked cells zero-filled
    target: np.ndarray  # (M, M) float64 in {0, 1}
    valid: np.ndarray   # (M, M) bool, False where the grid mask excludes the cell
    anchor: SampleRef


@dataclass
class DatasetSplit:
    train: list
    test: list
    look_back: int
    subgrid: int = 16
    k_subgrids: int = 5
    min_positive: int = 2
    seed: int = 0
    ratio: float = 0.9
    filter_scope: str = "target"


def sliding_windows(n_frames, look_back):
    """All (input range, target) windows: exactly n_frames - look_back of them."""
    if look_back < 1:
        raise ValueError(f"look_back must be >= 1, got {look_back}")
    if n_frames <= look_back:
        raise ValueError(f"need more than {look_back} frames, got {n_frames}")
    return [Window(k, k + look_back) for k in range(n_frames - look_back)]


def chrono_split_and_trim(windows, look_back, ratio=0.9):
    """First floor(ratio * W) windows to train, rest to test, then drop the
    last `look_back` train windows so the split shares no frames."""
    if not 0.0 < ratio < 1.0:
        raise ValueError(f"ratio must be in (0, 1), got {ratio}")
    n_train = int(math.floor(ratio * len(windows)))
    if n_train <= look_back:
        raise ValueError(
            f"training candidate of {n_train} windows cannot absorb a "
            f"{look_back}-window trim")
    return list(windows[:n_train - look_back]), list(windows[n_train:])


def count_positive_cells(frames, window, ref, subgrid, scope):
    """Positive crime cells in the sample's target patch (or whole sequence)."""
    r0, c0, m = ref.row0, ref.col0, subgrid
    target = frames.data[window.target_block, r0:r0 + m, c0:c0 + m, 0]
    n = int(np.sum(target == 1))
    if scope == "sequence":
        inputs = frames.data[window.first_input:window.target_block,
                             r0:r0 + m, c0:c0 + m, 0]
        n += int(np.sum(inputs == 1))
    elif scope != "target":
        raise ValueError(f"filter_scope must be 'target' or 'sequence', got {scope!r}")
    return n


def sample_subgrids(window, frames, subgrid=16, k=5, min_positive=2,
                    rng_seed=0, filter_scope="target"):
    """Up to k retained SampleRefs for one window, deterministic per seed."""
    n_rows, n_cols = frames.data.shape[1:3]
    if n_rows < subgrid or n_cols < subgrid:
        raise ValueError(f"grid {n_rows}x{n_cols} smaller than subgrid {subgrid}")
    anchor_rows = n_rows - subgrid + 1
    anchor_cols = n_cols - subgrid + 1
    total = anchor_rows * anchor_cols
    rng = np.random.default_rng(rng_seed)
    draws = rng.choice(total, size=min(k, total), replace=False)
    out = []
    for a in draws:
        ref = SampleRef(window.target_block, int(a // anchor_cols), int(a % anchor_cols))
        if count_positive_cells(frames, window, ref, subgrid, filter_scope) >= min_positive:
            out.append(ref)
    return out


def _window_seed(seed, window):
    return np.random.SeedSequence((seed, window.target_block))


def build_dataset(frames, look_back, subgrid=16, k=5, min_positive=2, seed=0,
                  ratio=0.9, filter_scope="target", train_cap=None, test_cap=None):
    """Windows -> split -> per-window subgrid sampling -> optional caps."""
    windows = sliding_windows(frames.n_blocks, look_back)
    train_w, test_w = chrono_split_and_trim(windows, look_back, ratio)
    split = DatasetSplit(
        train=[ref for w in train_w for ref in sample_subgrids(
            w, frames, subgrid, k, min_positive, _window_seed(seed, w), filter_scope)],
        test=[ref for w in test_w for ref in sample_subgrids(
            w, frames, subgrid, k, min_positive, _window_seed(seed, w), filter_scope)],
        look_back=look_back, subgrid=subgrid, k_subgrids=k,
        min_positive=min_positive, seed=seed, ratio=ratio, filter_scope=filter_scope)
    if train_cap is not None or test_cap is not None:
        split = cap_dataset(split,
                            train_cap if train_cap is not None else len(split.train),
                            test_cap if test_cap is not None else len(split.test))
    return split


def cap_dataset(split, train_cap, test_cap):
    """Keep the chronologically first train_cap / test_cap samples."""
    if train_cap > len(split.train):
        raise ValueError(f"train cap {train_cap} exceeds {len(split.train)} samples")
    if test_cap > len(split.test):
        raise ValueError(f"test cap {test_cap} exceeds {len(split.test)} samples")
    return replace(split, train=split.train[:train_cap], test=split.test[:test_cap])


def materialize_sample(frames, ref, look_back, subgrid):
    """Concrete arrays for one sample; masked cells are zero-filled in the
    inputs and excluded via `valid` everywhere downstream."""
    tb, r0, c0 = ref
    if tb - look_back < 0 or tb >= frames.n_blocks:
        raise ValueError(f"window ending at block {tb} does not fit the stack")
    m = subgrid
    inputs = frames.data[tb - look_back:tb, r0:r0 + m, c0:c0 + m, :].astype(np.float64)
    target = frames.data[tb, r0:r0 + m, c0:c0 + m, 0].astype(np.float64)
    valid = frames.mask[r0:r0 + m, c0:c0 + m]
    inputs = np.nan_to_num(inputs, nan=0.0)
    target = np.nan_to_num(target, nan=0.0)
    return SequenceSample(inputs=inputs, target=target, valid=valid, anchor=ref)


def materialize_batch(frames, refs, look_back, subgrid):
    """(X, y, valid) arrays: (n, T, M, M, C), (n, M, M), (n, M, M)."""
    samples = [materialize_sample(frames, r, look_back, subgrid) for r in refs]
    x = np.stack([s.inputs for s in samples])
    y = np.stack([s.target for s in samples])
    valid = np.stack([s.valid for s in samples])
    return x, y, valid


def frames_used(refs, look_back):
    used = set()
    for ref in refs:
        used.update(range(ref.target_block - look_back, ref.target_block + 1))
    return used


def check_no_leakage(split):
    """True when no frame index serves both sides of the split."""
    return not (frames_used(split.train, split.look_back)
                & frames_used(split.test, split.look_back))


def save_split_index(path, split):
    doc = {
        "format_version": SPLIT_FORMAT_VERSION,
        "look_back": split.look_back,
        "subgrid": split.subgrid,
        "k_subgrids": split.k_subgrids,
        "min_positive": split.min_positive,
        "seed": split.seed,
        "ratio": split.ratio,
        "filter_scope": split.filter_scope,
        "train": [list(r) for r in split.train],
        "test": [list(r) for r in split.test],
    }
    tmp = f"{path}.tmp"
    with open(tmp, "w") as f:
        json.dump(doc, f)
        f.write("\n")
    os.replace(tmp, path)


def load_split_index(path):
    with open(path) as f:
        doc = json.load(f)
    if doc.get("format_version") != SPLIT_FORMAT_VERSION:
        raise ValueError(f"{path}: unsupported split format_version "
                         f"{doc.get('format_version')!r}")
    return DatasetSplit(
        train=[SampleRef(*r) for r in doc["train"]],
        test=[SampleRef(*r) for r in doc["test"]],
        look_back=doc["look_back"], subgrid=doc["subgrid"],
        k_subgrids=doc["k_subgrids"], min_positive=doc["min_positive"],
        seed=doc["seed"], ratio=doc["ratio"], filter_scope=doc["filter_scope"])
