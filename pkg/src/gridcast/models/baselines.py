"""Per-cell baselines: logistic regression and a random forest.

Both ignore spatial context entirely. Each grid cell becomes one row whose
features are that cell's own history over the look-back window, flattened
time-major. A single binary model serves every cell.
"""

from __future__ import annotations

import json
import os
from dataclasses import dataclass, field

import numpy as np

from .. import sequence


def cell_rows(stack, refs, look_back, subgrid, keep_only_valid=True):
    """Flatten samples into per-cell rows of shape (rows, T*C).

    keep_only_valid drops masked cells (training); with it off, rows stay in
    sample-major, row-major cell order so predictions reshape to (n, M, M).
    """
    x, y, valid = sequence.materialize_batch(stack, refs, look_back, subgrid)
    n, t_steps, m, _, c = x.shape
    feats = x.transpose(0, 2, 3, 1, 4).reshape(n * m * m, t_steps * c)
    labels = y.reshape(-1)
    if keep_only_valid:
        keep = valid.reshape(-1)
        return feats[keep], labels[keep], valid
    return feats, labels, valid


def balanced_weights(y):
    """Row weights n/(2*n_pos) and n/(2*n_neg); both classes must appear."""
    y = np.asarray(y)
    n_pos = int((y == 1).sum())
    n_neg = int((y == 0).sum())
    if n_pos == 0 or n_neg == 0:
        raise ValueError("training labels contain a single class")
    n = n_pos + n_neg
    return np.where(y == 1, n / (2.0 * n_pos), n / (2.0 * n_neg))


# ---------------------------------------------------------------- logistic

def _sigmoid(t):
    out = np.empty_like(t, dtype=np.float64)
    pos = t >= 0
    out[pos] = 1.0 / (1.0 + np.exp(-t[pos]))
    e = np.exp(t[~pos])
    out[~pos] = e / (1.0 + e)
    return out


@dataclass
class LogisticModel:
    weights: np.ndarray
    bias: float
    feat_mean: np.ndarray
    feat_scale: np.ndarray
    n_iters: int
    grad_norm: float


def fit_logistic(x, y, max_iters=400, tol=1e-6):
    """Full-batch gradient descent on class-weighted BCE.

    Features are standardized internally; the step size is 1/L with L the
    smoothness constant estimated by power iteration, so descent is monotone.
    Stops early once the gradient norm drops below tol.
    """
    x = np.asarray(x, dtype=np.float64)
    y = np.asarray(y, dtype=np.float64)
    if x.ndim != 2 or x.shape[0] != y.shape[0]:
        raise ValueError(f"bad design matrix {x.shape} for {y.shape[0]} labels")
    w = balanced_weights(y)
    mu = x.mean(axis=0)
    sd = x.std(axis=0)
    sd = np.where(sd == 0, 1.0, sd)
    z = (x - mu) / sd
    w_sum = w.sum()

    # Lipschitz bound: lambda_max(Z' W Z) / (4 * sum w), via power iteration
    zw = z * np.sqrt(w)[:, None]
    v = np.full(z.shape[1], 1.0 / np.sqrt(z.shape[1]))
    lam = 1.0
    for _ in range(50):
        v = zw.T @ (zw @ v)
        lam = np.linalg.norm(v)
        if lam == 0:
            break
        v = v / lam
    # the bias column contributes at most sum(w) to the quadratic form
    step = 1.0 / max((lam + w_sum) / (4.0 * w_sum), 1e-12)

    theta = np.zeros(z.shape[1])
    bias = 0.0
    grad_norm = np.inf
    it = 0
    for it in range(1, max_iters + 1):
        p = _sigmoid(z @ theta + bias)
        r = w * (p - y) / w_sum
        g_theta = z.T @ r
        g_bias = r.sum()
        grad_norm = float(np.sqrt(g_theta @ g_theta + g_bias * g_bias))
        if grad_norm < tol:
            break
        theta -= step * g_theta
        bias -= step * g_bias
    return LogisticModel(theta, float(bias), mu, sd, it, grad_norm)


def predict_logistic(model, x):
    z = (np.asarray(x, dtype=np.float64) - model.feat_mean) / model.feat_scale
    return _sigmoid(z @ model.weights + model.bias)


# ------------------------------------------------------------------ forest

@dataclass
class ForestConfig:
    n_trees: int = 100
    max_features: object = "sqrt"  # "sqrt", "all", or an int
    bootstrap: bool = True
    max_samples: object = None  # None, a fraction, or a count per tree
    seed: int = 0


@dataclass
class ForestModel:
    n_features: int
    trees: list = field(default_factory=list)  # packed node arrays per tree


def _entropy(w_pos, w_neg):
    """Weighted binary entropy in nats, elementwise-safe at the ends."""
    tot = np.asarray(w_pos + w_neg, dtype=np.float64)
    p = np.divide(w_pos, tot, out=np.zeros_like(tot), where=tot > 0)
    t1 = np.where(p > 0, -p * np.log(np.where(p > 0, p, 1.0)), 0.0)
    q = 1.0 - p
    t2 = np.where(q > 0, -q * np.log(np.where(q > 0, q, 1.0)), 0.0)
    return t1 + t2


def _best_split(x, idx, yn, wn, feats):
    """Best (feature, threshold) by weighted entropy gain over `feats`.

    Ties break toward the lowest feature index, then the lowest threshold.
    Returns None when no candidate threshold improves on the parent.
    """
    w_total = wn.sum()
    wp_total = wn[yn == 1].sum()
    h_parent = float(_entropy(wp_total, w_total - wp_total))
    best_gain = 1e-12
    best = None
    for f in feats:
        v = x[idx, f]
        order = np.argsort(v, kind="stable")
        vs = v[order]
        ws = wn[order]
        wy = ws * yn[order]
        cut = vs[:-1] < vs[1:]
        if not cut.any():
            continue
        wl = np.cumsum(ws)[:-1][cut]
        wlp = np.cumsum(wy)[:-1][cut]
        wr = w_total - wl
        wrp = wp_total - wlp
        gain = h_parent - (wl / w_total) * _entropy(wlp, wl - wlp) \
            - (wr / w_total) * _entropy(wrp, wr - wrp)
        j = int(np.argmax(gain))  # thresholds ascend, so first max = lowest
        if gain[j] > best_gain:
            best_gain = float(gain[j])
            thr = 0.5 * (vs[:-1][cut][j] + vs[1:][cut][j])
            best = (int(f), float(thr))
    return best


def _grow_tree(x, y, w, row_idx, rng, n_candidates):
    feature = []
    threshold = []
    left = []
    right = []
    vote = []

    def new_node():
        feature.append(-1)
        threshold.append(0.0)
        left.append(-1)
        right.append(-1)
        vote.append(0)
        return len(feature) - 1

    d = x.shape[1]
    stack = [(new_node(), row_idx)]
    while stack:
        nid, idx = stack.pop()
        yn = y[idx]
        wn = w[idx]
        wp = wn[yn == 1].sum()
        vote[nid] = 1 if wp > wn.sum() - wp else 0
        if idx.size <= 2 or (yn == yn[0]).all():
            continue
        feats = np.sort(rng.choice(d, size=n_candidates, replace=False))
        found = _best_split(x, idx, yn, wn, feats)
        if found is None:
            continue
        f, thr = found
        go_left = x[idx, f] <= thr
        lid = new_node()
        rid = new_node()
        feature[nid] = f
        threshold[nid] = thr
        left[nid] = lid
        right[nid] = rid
        stack.append((rid, idx[~go_left]))
        stack.append((lid, idx[go_left]))
    return {
        "feature": np.asarray(feature, dtype=np.int64),
        "threshold": np.asarray(threshold, dtype=np.float64),
        "left": np.asarray(left, dtype=np.int64),
        "right": np.asarray(right, dtype=np.int64),
        "vote": np.asarray(vote, dtype=np.int8),
    }


def _n_candidates(max_features, d):
    if max_features == "sqrt":
        return min(d, int(np.ceil(np.sqrt(d))))
    if max_features == "all":
        return d
    k = int(max_features)
    if not 1 <= k <= d:
        raise ValueError(f"max_features {k} outside [1, {d}]")
    return k


def fit_forest(x, y, config=None):
    """Bootstrap forest of entropy trees; leaves are pure or hold <= 2 rows."""
    config = config or ForestConfig()
    x = np.asarray(x, dtype=np.float64)
    y = np.asarray(y)
    n, d = x.shape
    w = balanced_weights(y)
    if config.max_samples is None:
        n_draw = n
    elif isinstance(config.max_samples, float):
        if not 0.0 < config.max_samples <= 1.0:
            raise ValueError(f"max_samples fraction {config.max_samples} outside (0, 1]")
        n_draw = max(1, int(config.max_samples * n))
    else:
        n_draw = min(int(config.max_samples), n)
    k = _n_candidates(config.max_features, d)
    model = ForestModel(n_features=d)
    for t in range(config.n_trees):
        rng = np.random.default_rng(config.seed + t)
        if config.bootstrap:
            row_idx = rng.integers(0, n, size=n_draw)
        elif n_draw < n:
            row_idx = rng.choice(n, size=n_draw, replace=False)
        else:
            row_idx = np.arange(n)
        model.trees.append(_grow_tree(x, y, w, row_idx, rng, k))
    return model


def _tree_votes(tree, x):
    n = x.shape[0]
    ptr = np.zeros(n, dtype=np.int64)
    feature = tree["feature"]
    threshold = tree["threshold"]
    left = tree["left"]
    right = tree["right"]
    while True:
        feat = feature[ptr]
        internal = feat >= 0
        if not internal.any():
            break
        vals = x[np.arange(n), np.where(internal, feat, 0)]
        go_left = vals <= threshold[ptr]
        nxt = np.where(go_left, left[ptr], right[ptr])
        ptr = np.where(internal, nxt, ptr)
    return tree["vote"][ptr]


def predict_forest(model, x):
    """Probability = fraction of trees voting the positive class."""
    x = np.asarray(x, dtype=np.float64)
    if x.shape[1] != model.n_features:
        raise ValueError(f"expected {model.n_features} features, got {x.shape[1]}")
    votes = np.zeros(x.shape[0], dtype=np.float64)
    for tree in model.trees:
        votes += _tree_votes(tree, x)
    return votes / len(model.trees)


FOREST_FORMAT_VERSION = 1


def save_forest(path, model):
    doc = {
        "format_version": FOREST_FORMAT_VERSION,
        "n_features": model.n_features,
        "trees": [{key: tree[key].tolist() for key in
                   ("feature", "threshold", "left", "right", "vote")}
                  for tree in model.trees],
    }
    tmp = f"{path}.tmp"
    with open(tmp, "w", encoding="utf-8") as f:
        json.dump(doc, f, sort_keys=True, separators=(",", ":"))
        f.write("\n")
    os.replace(tmp, path)


def load_forest(path):
    with open(path, encoding="utf-8") as f:
        doc = json.load(f)
    if doc.get("format_version") != FOREST_FORMAT_VERSION:
        raise ValueError(f"{path}: unsupported forest format {doc.get('format_version')}")
    model = ForestModel(n_features=int(doc["n_features"]))
    for tree in doc["trees"]:
        model.trees.append({
            "feature": np.asarray(tree["feature"], dtype=np.int64),
            "threshold": np.asarray(tree["threshold"], dtype=np.float64),
            "left": np.asarray(tree["left"], dtype=np.int64),
            "right": np.asarray(tree["right"], dtype=np.int64),
            "vote": np.asarray(tree["vote"], dtype=np.int8),
        })
    return model


def save_logistic(path, model):
    doc = {
        "format_version": 1,
        "weights": model.weights.tolist(),
        "bias": model.bias,
        "feat_mean": model.feat_mean.tolist(),
        "feat_scale": model.feat_scale.tolist(),
        "n_iters": model.n_iters,
        "grad_norm": model.grad_norm,
    }
    tmp = f"{path}.tmp"
    with open(tmp, "w", encoding="utf-8") as f:
        json.dump(doc, f, sort_keys=True, separators=(",", ":"))
        f.write("\n")
    os.replace(tmp, path)


def load_logistic(path):
    with open(path, encoding="utf-8") as f:
        doc = json.load(f)
    if doc.get("format_version") != 1:
        raise ValueError(f"{path}: unsupported model format {doc.get('format_version')}")
    return LogisticModel(
        weights=np.asarray(doc["weights"], dtype=np.float64),
        bias=float(doc["bias"]),
        feat_mean=np.asarray(doc["feat_mean"], dtype=np.float64),
        feat_scale=np.asarray(doc["feat_scale"], dtype=np.float64),
        n_iters=int(doc["n_iters"]),
        grad_norm=float(doc["grad_norm"]),
    )
