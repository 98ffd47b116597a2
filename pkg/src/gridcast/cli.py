"""Batch entry points: synth, rasterize, train, evaluate, ablate.

One declarative config file (ini-style key = value sections) drives a run;
a handful of flags override the common knobs. Every command writes its
outputs atomically and is byte-reproducible given the same config and
inputs. Summaries go to stdout as JSON, diagnostics to stderr.
"""

from __future__ import annotations

import argparse
import configparser
import dataclasses
import json
import math
import os
import sys
import typing
from dataclasses import dataclass

import numpy as np

from . import eval as evaluation
from . import features, geo, ingest, sequence, synth
from . import models

LOOKBACK_BLOCKS = {1: 2, 2: 4, 7: 14, 14: 28}
CRIME_SUBSETS = ("all", "violent", "property")
MODEL_NAMES = ("convlstm", "lstm", "logreg", "rf")
FEATURE_ORDER = ("C", "CM", "CS", "CMS")


class UsageError(ValueError):
    """Bad flags or config values; maps to exit code 2."""


@dataclass
class RunConfig:
    # inputs
    events: str = ""
    poi_visits: str = ""
    block_groups: str = ""
    boundary: str = ""
    block_group_year: int = 2020
    # grid / clock
    cell_area_km2: float = 0.2
    utc_offset_hours: float = 0.0
    start_date: str = ""
    end_date: str = ""
    # dataset
    lookback_days: int = 2
    split_ratio: float = 0.9
    subgrid: int = 16
    k_subgrids: int = 5
    min_positive: int = 2
    train_cap: int | None = None
    test_cap: int | None = None
    crimes: str = "all"
    # training
    model: str = "convlstm"
    feature_set: str = "CMS"
    seeds: tuple = (0,)
    hidden: int = 28
    lr: float = 1e-5
    batch_size: int = 55
    epochs: int = 200
    dropout: float = 0.8
    rf_trees: int = 100
    rf_max_samples: float | None = None
    logreg_max_iters: int = 400
    # evaluation
    threshold: float = 0.5

    @property
    def look_back(self):
        return LOOKBACK_BLOCKS[self.lookback_days]

    @property
    def categories(self):
        if self.crimes == "violent":
            return ingest.VIOLENT_CATEGORIES
        if self.crimes == "property":
            return ingest.PROPERTY_CATEGORIES
        return frozenset(ingest.EVENT_CATEGORIES)


def validate_run_config(config):
    if config.lookback_days not in LOOKBACK_BLOCKS:
        raise UsageError(f"lookback_days must be one of "
                         f"{sorted(LOOKBACK_BLOCKS)}, got {config.lookback_days}")
    if config.crimes not in CRIME_SUBSETS:
        raise UsageError(f"crimes must be one of {CRIME_SUBSETS}, got {config.crimes!r}")
    if config.feature_set not in features.FEATURE_SETS:
        raise UsageError(f"features must be one of {FEATURE_ORDER}, "
                         f"got {config.feature_set!r}")
    if config.model not in MODEL_NAMES:
        raise UsageError(f"model must be one of {MODEL_NAMES}, got {config.model!r}")
    if not 0.0 < config.threshold < 1.0:
        raise UsageError(f"threshold must lie in (0, 1), got {config.threshold}")
    if not config.seeds:
        raise UsageError("at least one seed is required")
    if len(set(config.seeds)) != len(config.seeds):
        raise UsageError(f"duplicate seeds in {config.seeds}")
    if not 0.0 < config.split_ratio < 1.0:
        raise UsageError(f"split_ratio must lie in (0, 1), got {config.split_ratio}")
    if config.cell_area_km2 <= 0:
        raise UsageError(f"cell_area_km2 must be positive, got {config.cell_area_km2}")
    if config.epochs < 1 or config.batch_size < 1:
        raise UsageError("epochs and batch_size must be >= 1")
    if not 0.0 <= config.dropout < 1.0:
        raise UsageError(f"dropout must lie in [0, 1), got {config.dropout}")


def _parse_seeds(text):
    try:
        return tuple(int(s) for s in text.replace(" ", "").split(",") if s)
    except ValueError:
        raise UsageError(f"seeds must be comma-separated integers, got {text!r}")


def _read_ini(path):
    cp = configparser.ConfigParser(inline_comment_prefixes=("#",))
    try:
        with open(path, encoding="utf-8") as f:
            cp.read_file(f)
    except OSError as e:
        raise UsageError(f"cannot read config {path}: {e.strerror}")
    except configparser.Error as e:
        raise UsageError(f"malformed config {path}: {e}")
    return cp


def _get(cp, section, key, cast, default):
    if not cp.has_option(section, key):
        return default
    raw = cp.get(section, key).strip()
    if raw == "":
        return default
    try:
        return cast(raw)
    except ValueError:
        raise UsageError(f"config [{section}] {key}: cannot parse {raw!r}")


def load_run_config(path, overrides=None):
    cp = _read_ini(path)
    base = os.path.dirname(os.path.abspath(path))
    rel = lambda p: os.path.normpath(os.path.join(base, p))
    config = RunConfig(
        events=_get(cp, "inputs", "events", rel, ""),
        poi_visits=_get(cp, "inputs", "poi_visits", rel, ""),
        block_groups=_get(cp, "inputs", "block_groups", rel, ""),
        boundary=_get(cp, "inputs", "boundary", rel, ""),
        block_group_year=_get(cp, "inputs", "block_group_year", int, 2020),
        cell_area_km2=_get(cp, "grid", "cell_area_km2", float, 0.2),
        utc_offset_hours=_get(cp, "grid", "utc_offset_hours", float, 0.0),
        start_date=_get(cp, "clock", "start_date", str, ""),
        end_date=_get(cp, "clock", "end_date", str, ""),
        lookback_days=_get(cp, "dataset", "lookback_days", int, 2),
        split_ratio=_get(cp, "dataset", "split_ratio", float, 0.9),
        subgrid=_get(cp, "dataset", "subgrid", int, 16),
        k_subgrids=_get(cp, "dataset", "k_subgrids", int, 5),
        min_positive=_get(cp, "dataset", "min_positive", int, 2),
        train_cap=_get(cp, "dataset", "train_cap", int, None),
        test_cap=_get(cp, "dataset", "test_cap", int, None),
        crimes=_get(cp, "dataset", "crimes", str, "all"),
        model=_get(cp, "train", "model", str, "convlstm"),
        feature_set=_get(cp, "train", "features", str, "CMS"),
        seeds=_get(cp, "train", "seeds", _parse_seeds, (0,)),
        hidden=_get(cp, "train", "hidden", int, 28),
        lr=_get(cp, "train", "lr", float, 1e-5),
        batch_size=_get(cp, "train", "batch_size", int, 55),
        epochs=_get(cp, "train", "epochs", int, 200),
        dropout=_get(cp, "train", "dropout", float, 0.8),
        rf_trees=_get(cp, "train", "rf_trees", int, 100),
        rf_max_samples=_get(cp, "train", "rf_max_samples", float, None),
        logreg_max_iters=_get(cp, "train", "logreg_max_iters", int, 400),
        threshold=_get(cp, "eval", "threshold", float, 0.5),
    )
    for key, value in (overrides or {}).items():
        if value is not None:
            config = dataclasses.replace(config, **{key: value})
    validate_run_config(config)
    return config


def _overrides(args):
    out = {
        "model": args.model,
        "feature_set": args.features,
        "lookback_days": args.lookback_days,
        "crimes": args.crimes,
        "threshold": args.threshold,
    }
    if args.seeds is not None:
        out["seeds"] = _parse_seeds(args.seeds)
    elif args.seed is not None:
        out["seeds"] = (args.seed,)
    return out


def _print_json(doc):
    print(json.dumps(doc, sort_keys=True, indent=2))


def _cell_side_m(config):
    # quantized to 0.1 mm so the default area reproduces the stock cell side
    return round(math.sqrt(config.cell_area_km2 * 1e6), 4)


# ----------------------------------------------------------------- commands

def cmd_synth(args):
    kwargs = {}
    if args.config:
        cp = _read_ini(args.config)
        if cp.has_section("synth"):
            casts = typing.get_type_hints(synth.SynthConfig)
            for key in cp.options("synth"):
                if key not in casts:
                    raise UsageError(f"config [synth] has unknown key {key!r}")
                kwargs[key] = _get(cp, "synth", key, casts[key], None)
    if args.seed is not None:
        kwargs["seed"] = args.seed
    try:
        config = synth.SynthConfig(**{k: v for k, v in kwargs.items() if v is not None})
        synth.validate(config)
    except ValueError as e:
        raise UsageError(str(e))
    paths = synth.generate(config, args.out)
    _print_json({"command": "synth", "seed": config.seed,
                 "files": {k: os.path.basename(v) for k, v in paths.items()}})
    return 0


def _load_inputs(config):
    for role in ("events", "poi_visits", "block_groups", "boundary"):
        path = getattr(config, role)
        if not path:
            raise UsageError(f"config is missing [inputs] {role}")
        if not os.path.exists(path):
            raise FileNotFoundError(f"{role} file not found: {path}")
    if not config.start_date or not config.end_date:
        raise UsageError("config is missing [clock] start_date / end_date")
    boundary = geo.load_geojson_geometry(config.boundary)
    spec = geo.grid_spec_for_boundary(boundary, _cell_side_m(config))
    groups = ingest.parse_block_groups(config.block_groups, config.block_group_year)
    mask = geo.build_mask(spec, boundary,
                          block_groups=[g.geometry for g in groups.records])
    if not mask.any():
        raise ValueError("grid mask is empty: no cell intersects the boundary "
                         "and a block group")
    clock = ingest.BlockClock.for_local_span(
        config.start_date, config.end_date,
        utc_offset_s=int(round(config.utc_offset_hours * 3600)))
    with open(config.events, encoding="utf-8") as f:
        events = ingest.parse_events(f, span=clock.span())
    with open(config.poi_visits, encoding="utf-8") as f:
        visits = ingest.parse_poi_visits(f)
    return boundary, spec, mask, clock, events, visits, groups


def cmd_rasterize(args):
    config = load_run_config(args.config, _overrides(args))
    _, spec, mask, clock, events, visits, groups = _load_inputs(config)
    stack = features.build_frames(
        events.records, visits.records, {config.block_group_year: groups.records},
        spec, mask, clock, categories=config.categories)

    crime = stack.data[..., features.CH_CRIME]
    n_valid = int(mask.sum()) * stack.n_blocks
    n_positive = int(np.nansum(crime == 1.0))

    # normalization must see training frames only; fall back to the whole
    # span when it is too short to ever produce a split
    n_windows = stack.n_blocks - config.look_back
    n_norm = int(math.floor(config.split_ratio * n_windows)) if n_windows > 0 else 0
    if n_norm < 1:
        n_norm = stack.n_blocks
    stats = features.fit_minmax(stack, n_norm)
    stack = features.apply_minmax(stack, stats)

    os.makedirs(args.out, exist_ok=True)
    features.save_frames(os.path.join(args.out, "frames.bin"), stack)
    geo.save_grid(os.path.join(args.out, "grid.json"), spec, mask)
    norm_doc = {"channel_min": [repr(v) for v in stats.channel_min],
                "channel_max": [repr(v) for v in stats.channel_max],
                "n_frames_fitted": n_norm}
    evaluation.save_summary_json(os.path.join(args.out, "normalization.json"), norm_doc)

    _print_json({
        "command": "rasterize",
        "frames": stack.n_blocks,
        "grid": [spec.n_rows, spec.n_cols],
        "valid_cells": int(mask.sum()),
        "positive_cell_rate": n_positive / n_valid if n_valid else 0.0,
        "skipped_rows": {
            "events_malformed": events.n_malformed,
            "events_unknown_category": events.n_unknown_category,
            "events_out_of_span": events.n_out_of_span,
            "visits_malformed": visits.n_malformed,
        },
    })
    return 0


def _load_frames(out_dir):
    path = os.path.join(out_dir, "frames.bin")
    if not os.path.exists(path):
        raise FileNotFoundError(f"frame file not found: {path} (run rasterize first)")
    return features.load_frames(path)


def _dataset(config, stack, seed):
    return sequence.build_dataset(
        stack, config.look_back, subgrid=config.subgrid, k=config.k_subgrids,
        min_positive=config.min_positive, seed=seed, ratio=config.split_ratio,
        train_cap=config.train_cap, test_cap=config.test_cap)


def _checkpoint_path(out_dir, config, seed):
    ext = "ckpt" if config.model in ("convlstm", "lstm") else "json"
    name = f"{config.model}_{config.feature_set.lower()}_seed{seed}.{ext}"
    return os.path.join(out_dir, name)


def _build_net(config, n_channels, seed):
    if config.model == "convlstm":
        return models.ConvLstmNet(
            c_in=n_channels, c_hid=config.hidden,
            spatial=(config.subgrid, config.subgrid),
            p_drop=config.dropout, seed=seed)
    return models.LstmNet(
        d_in=config.subgrid * config.subgrid * n_channels, d_hid=config.hidden,
        spatial=(config.subgrid, config.subgrid), seed=seed)


def _rf_max_samples(config):
    value = config.rf_max_samples
    if value is None:
        return None
    return value if 0 < value <= 1 else int(value)


def _train_one(config, stack, split, seed, out_dir):
    """Fit one model for one seed; returns the checkpoint path."""
    path = _checkpoint_path(out_dir, config, seed)
    if config.model in ("convlstm", "lstm"):
        net = _build_net(config, stack.n_channels, seed)
        train_config = models.TrainConfig(lr=config.lr, batch_size=config.batch_size,
                                          epochs=config.epochs, seed=seed)
        trace = models.train_net(net, stack, split.train, config.look_back,
                                 config.subgrid, train_config)
        models.save_net(path, net)
        models.save_loss_trace(
            os.path.join(out_dir, f"loss_{config.model}_"
                         f"{config.feature_set.lower()}_seed{seed}.csv"), trace)
    else:
        x, y, _ = models.cell_rows(stack, split.train, config.look_back, config.subgrid)
        if config.model == "logreg":
            model = models.fit_logistic(x, y, max_iters=config.logreg_max_iters)
            models.save_logistic(path, model)
        else:
            forest_config = models.ForestConfig(
                n_trees=config.rf_trees, max_samples=_rf_max_samples(config), seed=seed)
            model = models.fit_forest(x, y, forest_config)
            models.save_forest(path, model)
    return path


def _predict_one(config, stack, split, seed, out_dir):
    """Test-set probability maps (n, M, M) from a stored checkpoint."""
    path = _checkpoint_path(out_dir, config, seed)
    if not os.path.exists(path):
        raise FileNotFoundError(f"checkpoint not found: {path} (run train first)")
    if config.model in ("convlstm", "lstm"):
        net = _build_net(config, stack.n_channels, seed)
        models.load_net(path, net)
        return models.predict_net(net, stack, split.test, config.look_back,
                                  config.subgrid)
    x, _, _ = models.cell_rows(stack, split.test, config.look_back, config.subgrid,
                               keep_only_valid=False)
    if config.model == "logreg":
        probs = models.predict_logistic(models.load_logistic(path), x)
    else:
        probs = models.predict_forest(models.load_forest(path), x)
    return probs.reshape(len(split.test), config.subgrid, config.subgrid)


def cmd_train(args):
    config = load_run_config(args.config, _overrides(args))
    stack = features.select_features(_load_frames(args.out), config.feature_set)
    written = []
    for seed in config.seeds:
        split = _dataset(config, stack, seed)
        if not split.train:
            raise ValueError(f"seed {seed}: no training samples survive filtering")
        try:
            written.append(_train_one(config, stack, split, seed, args.out))
        except (RuntimeError, ValueError) as e:
            raise RuntimeError(f"seed {seed}: {e}")
    _print_json({"command": "train", "model": config.model,
                 "features": config.feature_set, "seeds": list(config.seeds),
                 "checkpoints": [os.path.basename(p) for p in written]})
    return 0


def _evaluate_seeds(config, stack, out_dir):
    per_seed = {}
    for seed in config.seeds:
        split = _dataset(config, stack, seed)
        if not split.test:
            raise ValueError(f"seed {seed}: no test samples survive filtering")
        probs = _predict_one(config, stack, split, seed, out_dir)
        preds = models.predict_binary(probs, config.threshold)
        _, truths, valids = sequence.materialize_batch(
            stack, split.test, config.look_back, config.subgrid)
        total = evaluation.ConfusionNN(0, 0, 0, 0, 0)
        for k in range(len(split.test)):
            total = total + evaluation.classify_cells(truths[k], preds[k], valids[k])
        per_seed[seed] = evaluation.metrics(total).values
    return per_seed


def _summary_doc(config, per_seed):
    doc = {"model": config.model, "features": config.feature_set,
           "threshold": config.threshold, "per_seed":
           {str(s): per_seed[s] for s in sorted(per_seed)}}
    if len(per_seed) >= 2:
        agg = evaluation.aggregate_seeds(per_seed)
        doc["mean"] = agg["mean"]
        doc["std"] = agg["std"]
    else:
        only = next(iter(per_seed.values()))
        doc["mean"] = dict(only)
    return doc


def cmd_evaluate(args):
    config = load_run_config(args.config, _overrides(args))
    stack = features.select_features(_load_frames(args.out), config.feature_set)
    per_seed = _evaluate_seeds(config, stack, args.out)
    tag = f"{config.model}_{config.feature_set.lower()}"
    evaluation.save_metrics_csv(os.path.join(args.out, f"metrics_{tag}.csv"), per_seed)
    doc = _summary_doc(config, per_seed)
    evaluation.save_summary_json(os.path.join(args.out, f"summary_{tag}.json"), doc)
    _print_json({"command": "evaluate", **doc})
    return 0


def cmd_ablate(args):
    config = load_run_config(args.config, _overrides(args))
    full = _load_frames(args.out)
    means = {}
    for fs in FEATURE_ORDER:
        fs_config = dataclasses.replace(config, feature_set=fs)
        stack = features.select_features(full, fs)
        for seed in fs_config.seeds:
            split = _dataset(fs_config, stack, seed)
            if not split.train:
                raise ValueError(f"seed {seed}: no training samples survive filtering")
            try:
                _train_one(fs_config, stack, split, seed, args.out)
            except (RuntimeError, ValueError) as e:
                raise RuntimeError(f"seed {seed}: {e}")
        per_seed = _evaluate_seeds(fs_config, stack, args.out)
        tag = f"{fs_config.model}_{fs.lower()}"
        evaluation.save_metrics_csv(os.path.join(args.out, f"metrics_{tag}.csv"),
                                    per_seed)
        means[fs] = _summary_doc(fs_config, per_seed)["mean"]

    metrics_path = os.path.join(args.out, f"ablation_{config.model}_metrics.csv")
    tmp = f"{metrics_path}.tmp"
    with open(tmp, "w", encoding="utf-8") as f:
        f.write("feature_set," + ",".join(evaluation.METRIC_NAMES) + "\n")
        for fs in FEATURE_ORDER:
            row = ",".join(repr(means[fs][m]) for m in evaluation.METRIC_NAMES)
            f.write(f"{fs},{row}\n")
    os.replace(tmp, metrics_path)

    diffs = {f"cms_minus_{fs.lower()}": evaluation.ablation_diff(means["CMS"], means[fs])
             for fs in ("C", "CM", "CS")}
    evaluation.save_ablation_csv(
        os.path.join(args.out, f"ablation_{config.model}_diffs.csv"), diffs)
    _print_json({"command": "ablate", "model": config.model,
                 "seeds": list(config.seeds), "mean": means})
    return 0


# -------------------------------------------------------------------- wiring

def _add_common(sub, config_required=True):
    sub.add_argument("--config", required=config_required,
                     help="ini-style run configuration")
    sub.add_argument("--out", required=True, help="output directory")
    sub.add_argument("--seed", type=int, default=None, help="single seed override")
    sub.add_argument("--seeds", default=None, help="comma-separated seed list")
    sub.add_argument("--model", choices=MODEL_NAMES, default=None)
    sub.add_argument("--features", choices=FEATURE_ORDER, default=None)
    sub.add_argument("--lookback-days", dest="lookback_days", type=int, default=None)
    sub.add_argument("--crimes", choices=CRIME_SUBSETS, default=None)
    sub.add_argument("--threshold", type=float, default=None)


def build_parser():
    parser = argparse.ArgumentParser(
        prog="gridcast",
        description="Rasterize urban event data and forecast next-half-day "
                    "occupancy on a square grid.")
    subs = parser.add_subparsers(dest="command", required=True)

    p = subs.add_parser("synth", help="generate a synthetic city")
    p.add_argument("--config", default=None, help="optional ini file with a [synth] section")
    p.add_argument("--out", required=True, help="output directory")
    p.add_argument("--seed", type=int, default=None)
    p.set_defaults(func=cmd_synth)

    for name, func in (("rasterize", cmd_rasterize), ("train", cmd_train),
                       ("evaluate", cmd_evaluate), ("ablate", cmd_ablate)):
        p = subs.add_parser(name)
        _add_common(p)
        p.set_defaults(func=func)
    return parser


def main(argv=None):
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as e:
        return int(e.code or 0)
    try:
        return args.func(args)
    except UsageError as e:
        print(f"gridcast: {e}", file=sys.stderr)
        return 2
    except (ValueError, OSError, RuntimeError) as e:
        print(f"gridcast: {e}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
