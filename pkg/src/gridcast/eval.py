"""Confusion statistics and metrics, with the nearest-neighbor relaxation.

A predicted-positive cell whose truth is 0 still counts as a near hit when
any of its 8 neighbors (Chebyshev distance 1) holds a true positive; those
cells form the fp_nn bucket and drive the _nn metric variants. Masked cells
are excluded from counting and from the neighborhood lookup.
"""

from __future__ import annotations

import json
import os
from dataclasses import dataclass

import numpy as np

METRIC_NAMES = ("recall", "precision", "f1", "recall_nn", "precision_nn", "f1_nn")


@dataclass(frozen=True)
class ConfusionNN:
    tp: int
    tn: int
    fn: int
    fp: int
    fp_nn: int

    def __add__(self, other):
        return ConfusionNN(self.tp + other.tp, self.tn + other.tn,
                           self.fn + other.fn, self.fp + other.fp,
                           self.fp_nn + other.fp_nn)

    @property
    def n_cells(self):
        return self.tp + self.tn + self.fn + self.fp + self.fp_nn


@dataclass(frozen=True)
class MetricBundle:
    values: dict        # metric name -> float
    degenerate: tuple   # metric names whose denominator was zero


def _neighbor_any(a):
    """8-neighbor dilation without wraparound."""
    h, w = a.shape
    padded = np.zeros((h + 2, w + 2), dtype=bool)
    padded[1:-1, 1:-1] = a
    out = np.zeros((h, w), dtype=bool)
    for dr in (-1, 0, 1):
        for dc in (-1, 0, 1):
            if dr == 0 and dc == 0:
                continue
            out |= padded[1 + dr:1 + dr + h, 1 + dc:1 + dc + w]
    return out


def classify_cells(truth, pred, mask=None):
    """Split one frame's unmasked cells into tp / tn / fn / fp / fp_nn."""
    truth = np.asarray(truth)
    pred = np.asarray(pred)
    if truth.shape != pred.shape or truth.ndim != 2:
        raise ValueError(f"shape mismatch: truth {truth.shape}, pred {pred.shape}")
    if mask is None:
        mask = np.ones(truth.shape, dtype=bool)
    else:
        mask = np.asarray(mask, dtype=bool)
        if mask.shape != truth.shape:
            raise ValueError(f"mask shape {mask.shape} != {truth.shape}")
    t = truth == 1
    p = pred == 1
    if not np.all((truth[mask] == 0) | t[mask]) or not np.all((pred[mask] == 0) | p[mask]):
        raise ValueError("truth and pred must be binary on unmasked cells")
    near = _neighbor_any(t & mask)
    tp = int(np.count_nonzero(p & t & mask))
    tn = int(np.count_nonzero(~p & ~t & mask))
    fn = int(np.count_nonzero(~p & t & mask))
    fp_nn = int(np.count_nonzero(p & ~t & near & mask))
    fp = int(np.count_nonzero(p & ~t & ~near & mask))
    return ConfusionNN(tp=tp, tn=tn, fn=fn, fp=fp, fp_nn=fp_nn)


def classify_batch(truths, preds, mask=None):
    """Sum of per-frame confusions over the leading axis."""
    truths = np.asarray(truths)
    preds = np.asarray(preds)
    if truths.shape != preds.shape or truths.ndim != 3:
        raise ValueError(f"expected matching (n, H, W), got {truths.shape} and {preds.shape}")
    total = ConfusionNN(0, 0, 0, 0, 0)
    for k in range(truths.shape[0]):
        total = total + classify_cells(truths[k], preds[k], mask)
    return total


def _ratio(num, den, name, degenerate):
    if den == 0:
        degenerate.append(name)
        return 0.0
    return num / den


def metrics(conf):
    """Standard and NN metric values; zero denominators yield 0 and a flag."""
    degenerate = []
    recall = _ratio(conf.tp, conf.tp + conf.fn, "recall", degenerate)
    precision = _ratio(conf.tp, conf.tp + conf.fp + conf.fp_nn, "precision", degenerate)
    f1 = _ratio(2 * precision * recall, precision + recall, "f1", degenerate)
    hits = conf.tp + conf.fp_nn
    recall_nn = _ratio(hits, hits + conf.fn, "recall_nn", degenerate)
    precision_nn = _ratio(hits, hits + conf.fp, "precision_nn", degenerate)
    f1_nn = _ratio(2 * precision_nn * recall_nn, precision_nn + recall_nn,
                   "f1_nn", degenerate)
    values = {"recall": recall, "precision": precision, "f1": f1,
              "recall_nn": recall_nn, "precision_nn": precision_nn, "f1_nn": f1_nn}
    return MetricBundle(values=values, degenerate=tuple(degenerate))


def sweep_thresholds(prob_maps, truths, mask, thresholds):
    """Metrics per threshold, confusions summed over all frames.

    Recall and recall_nn are non-increasing across an ascending sweep:
    raising the threshold can only retract predicted positives.
    """
    prob_maps = np.asarray(prob_maps)
    truths = np.asarray(truths)
    for tau in thresholds:
        if not 0.0 < tau < 1.0:
            raise ValueError(f"threshold {tau} outside (0, 1)")
    rows = []
    for tau in thresholds:
        preds = (prob_maps >= tau).astype(np.int8)
        conf = classify_batch(truths, preds, mask)
        rows.append((float(tau), metrics(conf)))
    return rows


def aggregate_seeds(per_seed):
    """Mean and population std per metric over >= 2 per-seed value dicts."""
    if len(per_seed) < 2:
        raise ValueError(f"need at least 2 seed reports, got {len(per_seed)}")
    seeds = sorted(per_seed)
    keys = set(per_seed[seeds[0]])
    for s in seeds[1:]:
        if set(per_seed[s]) != keys:
            raise ValueError(f"seed {s} reports different metrics")
    mean = {}
    std = {}
    for k in sorted(keys):
        vals = np.array([per_seed[s][k] for s in seeds], dtype=np.float64)
        mean[k] = float(vals.mean())
        std[k] = float(vals.std())  # population: ddof 0
    return {"seeds": seeds, "mean": mean, "std": std}


def ablation_diff(report_a, report_b):
    """Signed percentage-point differences (a - b) * 100 per shared metric."""
    if set(report_a) != set(report_b):
        raise ValueError("reports cover different metrics")
    return {k: (report_a[k] - report_b[k]) * 100.0 for k in report_a}


# ------------------------------------------------------------------ reports

def save_metrics_csv(path, per_seed):
    """Long-form rows: metric,seed,value; metric order fixed, seeds ascending."""
    tmp = f"{path}.tmp"
    with open(tmp, "w", encoding="utf-8") as f:
        f.write("metric,seed,value\n")
        for name in METRIC_NAMES:
            for seed in sorted(per_seed):
                f.write(f"{name},{seed},{per_seed[seed][name]!r}\n")
    os.replace(tmp, path)


def load_metrics_csv(path):
    per_seed = {}
    with open(path, encoding="utf-8") as f:
        header = f.readline().strip()
        if header != "metric,seed,value":
            raise ValueError(f"{path}: unexpected header {header!r}")
        for line in f:
            name, seed, value = line.strip().split(",")
            per_seed.setdefault(int(seed), {})[name] = float(value)
    return per_seed


def save_summary_json(path, summary):
    tmp = f"{path}.tmp"
    with open(tmp, "w", encoding="utf-8") as f:
        json.dump(summary, f, sort_keys=True, indent=2)
        f.write("\n")
    os.replace(tmp, path)


def save_ablation_csv(path, diffs_by_label):
    """Metric rows x comparison columns, values in percentage points."""
    labels = list(diffs_by_label)
    tmp = f"{path}.tmp"
    with open(tmp, "w", encoding="utf-8") as f:
        f.write("metric," + ",".join(labels) + "\n")
        for name in METRIC_NAMES:
            cells = ",".join(repr(diffs_by_label[lab][name]) for lab in labels)
            f.write(f"{name},{cells}\n")
    os.replace(tmp, path)
