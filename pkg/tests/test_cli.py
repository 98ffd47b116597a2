import json
import os
from types import SimpleNamespace

import numpy as np
import pytest

from gridcast import cli, eval as evaluation, features

BASE_CONFIG = """\
[inputs]
events = city/events.csv
poi_visits = city/poi_visits.csv
block_groups = city/block_groups.geojson
boundary = city/boundary.geojson
block_group_year = 2021

[clock]
start_date = 2021-01-04
end_date = 2021-03-15

[synth]
seed = 0
n_rows = 8
n_cols = 8
span_days = 70
n_pois = 40
n_block_group_rows = 2

[dataset]
lookback_days = 1
subgrid = 8

[train]
model = logreg
seeds = 0
hidden = 6
lr = 0.01
batch_size = 32
epochs = 3
rf_trees = 10

[eval]
threshold = 0.5
"""


def read_bytes(path):
    with open(path, "rb") as f:
        return f.read()


def last_json(capsys):
    text = capsys.readouterr().out
    decoder = json.JSONDecoder()
    pos, doc = 0, None
    while pos < len(text):
        if text[pos] in " \t\r\n":
            pos += 1
            continue
        doc, pos = decoder.raw_decode(text, pos)
    return doc


@pytest.fixture(scope="module")
def city(tmp_path_factory):
    root = tmp_path_factory.mktemp("cli_city")
    ini = root / "run.ini"
    ini.write_text(BASE_CONFIG)
    assert cli.main(["synth", "--config", str(ini), "--out", str(root / "city")]) == 0
    run = root / "run"
    assert cli.main(["rasterize", "--config", str(ini), "--out", str(run)]) == 0
    return SimpleNamespace(root=root, ini=str(ini), run=str(run))


class TestConfigParsing:
    def write(self, tmp_path, text=BASE_CONFIG):
        p = tmp_path / "c.ini"
        p.write_text(text)
        return str(p)

    def test_defaults_fill_missing_sections(self, tmp_path):
        p = self.write(tmp_path, "[train]\nseeds = 3,9\n")
        config = cli.load_run_config(p)
        assert config.seeds == (3, 9)
        assert config.lookback_days == 2
        assert config.look_back == 4
        assert config.model == "convlstm"
        assert config.threshold == 0.5

    def test_paths_resolve_relative_to_config(self, tmp_path):
        p = self.write(tmp_path)
        config = cli.load_run_config(p)
        assert config.events == str(tmp_path / "city" / "events.csv")

    def test_lookback_mapping(self, tmp_path):
        for days, blocks in ((1, 2), (2, 4), (7, 14), (14, 28)):
            config = cli.load_run_config(
                self.write(tmp_path, f"[dataset]\nlookback_days = {days}\n"))
            assert config.look_back == blocks

    def test_bad_enumerations_rejected(self, tmp_path):
        cases = [
            "[dataset]\nlookback_days = 3\n",
            "[dataset]\ncrimes = arson\n",
            "[train]\nmodel = gru\n",
            "[train]\nfeatures = CMX\n",
            "[eval]\nthreshold = 1.0\n",
            "[train]\nseeds = 1,1\n",
        ]
        for text in cases:
            with pytest.raises(cli.UsageError):
                cli.load_run_config(self.write(tmp_path, text))

    def test_flag_overrides_win(self, tmp_path):
        p = self.write(tmp_path)
        config = cli.load_run_config(p, {"model": "rf", "seeds": (7,)})
        assert config.model == "rf"
        assert config.seeds == (7,)

    def test_crime_subsets(self, tmp_path):
        p = self.write(tmp_path, "[dataset]\ncrimes = violent\n")
        config = cli.load_run_config(p)
        assert config.categories == frozenset(("assault", "homicide", "robbery"))


class TestSynthCommand:
    def test_missing_out_is_usage_error(self):
        assert cli.main(["synth"]) == 2

    def test_same_seed_identical_trees(self, tmp_path, capsys):
        for d in ("a", "b"):
            assert cli.main(["synth", "--out", str(tmp_path / d), "--seed", "5"]) == 0
        capsys.readouterr()
        names = sorted(os.listdir(tmp_path / "a"))
        assert names == sorted(os.listdir(tmp_path / "b"))
        for name in names:
            assert read_bytes(tmp_path / "a" / name) == read_bytes(tmp_path / "b" / name)

    def test_unknown_synth_key_rejected(self, tmp_path):
        ini = tmp_path / "c.ini"
        ini.write_text("[synth]\nwarp_factor = 9\n")
        assert cli.main(["synth", "--config", str(ini), "--out", str(tmp_path / "x")]) == 2


class TestRasterize:
    def test_summary_and_artifacts(self, city, capsys):
        out = str(city.root / "r2")
        assert cli.main(["rasterize", "--config", city.ini, "--out", out]) == 0
        doc = last_json(capsys)
        assert doc["frames"] == 140
        assert doc["grid"] == [8, 8]
        assert doc["valid_cells"] == 64
        for name in ("frames.bin", "grid.json", "normalization.json"):
            assert os.path.exists(os.path.join(out, name))

    def test_positive_rate_matches_recount(self, city, capsys):
        assert cli.main(["rasterize", "--config", city.ini,
                         "--out", str(city.root / "r3")]) == 0
        doc = last_json(capsys)
        stack = features.load_frames(str(city.root / "r3" / "frames.bin"))
        crime = stack.data[..., 0]
        recount = float(np.nansum(crime == 1.0)) / (stack.mask.sum() * stack.n_blocks)
        assert doc["positive_cell_rate"] == pytest.approx(recount, abs=1e-12)

    def test_one_day_span_gives_two_frames(self, city, tmp_path, capsys):
        text = BASE_CONFIG.replace("end_date = 2021-03-15", "end_date = 2021-01-05")
        ini = city.root / "oneday.ini"
        ini.write_text(text)
        assert cli.main(["rasterize", "--config", str(ini),
                         "--out", str(tmp_path / "r")]) == 0
        assert last_json(capsys)["frames"] == 2

    def test_idempotent_bytes(self, city, tmp_path):
        out = tmp_path / "twice"
        for _ in range(2):
            assert cli.main(["rasterize", "--config", city.ini, "--out", str(out)]) == 0
        assert read_bytes(out / "frames.bin") == read_bytes(city.root / "run" / "frames.bin")

    def test_unreadable_inputs_fail(self, city, tmp_path):
        text = BASE_CONFIG.replace("events = city/events.csv",
                                   "events = city/does_not_exist.csv")
        ini = city.root / "bad.ini"
        ini.write_text(text)
        assert cli.main(["rasterize", "--config", str(ini),
                         "--out", str(tmp_path / "r")]) == 1


class TestTrainEvaluate:
    def test_logreg_round_trip(self, city, capsys):
        assert cli.main(["train", "--config", city.ini, "--out", city.run]) == 0
        assert os.path.exists(os.path.join(city.run, "logreg_cms_seed0.json"))
        assert cli.main(["evaluate", "--config", city.ini, "--out", city.run]) == 0
        doc = last_json(capsys)
        assert set(doc["mean"]) == set(evaluation.METRIC_NAMES)
        per_seed = evaluation.load_metrics_csv(
            os.path.join(city.run, "metrics_logreg_cms.csv"))
        assert set(per_seed) == {0}
        assert per_seed[0] == pytest.approx(doc["per_seed"]["0"])

    def test_evaluate_twice_identical_reports(self, city):
        assert cli.main(["train", "--config", city.ini, "--out", city.run]) == 0
        assert cli.main(["evaluate", "--config", city.ini, "--out", city.run]) == 0
        first = read_bytes(os.path.join(city.run, "metrics_logreg_cms.csv"))
        first_sum = read_bytes(os.path.join(city.run, "summary_logreg_cms.json"))
        assert cli.main(["evaluate", "--config", city.ini, "--out", city.run]) == 0
        assert read_bytes(os.path.join(city.run, "metrics_logreg_cms.csv")) == first
        assert read_bytes(os.path.join(city.run, "summary_logreg_cms.json")) == first_sum

    def test_two_seeds_report_mean_and_std(self, city, capsys):
        args = ["--config", city.ini, "--out", city.run, "--model", "rf",
                "--seeds", "0,1"]
        assert cli.main(["train"] + args) == 0
        assert cli.main(["evaluate"] + args) == 0
        doc = last_json(capsys)
        assert set(doc["per_seed"]) == {"0", "1"}
        assert set(doc["std"]) == set(evaluation.METRIC_NAMES)
        for name in evaluation.METRIC_NAMES:
            assert doc["std"][name] >= 0.0

    def test_lstm_trains_and_evaluates(self, city, capsys):
        args = ["--config", city.ini, "--out", city.run, "--model", "lstm"]
        assert cli.main(["train"] + args) == 0
        assert cli.main(["evaluate"] + args) == 0
        doc = last_json(capsys)
        assert 0.0 <= doc["mean"]["f1"] <= 1.0
        assert os.path.exists(os.path.join(city.run, "loss_lstm_cms_seed0.csv"))

    def test_training_failure_names_seed(self, city, tmp_path, capsys):
        # an event-free city leaves one label class; the run must say which
        # seed fell over
        text = BASE_CONFIG.replace("seed = 0", "seed = 0\nbase_rate = 0\nhotspot_peak = 0")
        text = text.replace("subgrid = 8", "subgrid = 8\nmin_positive = 0")
        ini = city.root / "flat.ini"
        ini.write_text(text)
        assert cli.main(["synth", "--config", str(ini),
                         "--out", str(tmp_path / "city")]) == 0
        run_ini = tmp_path / "run.ini"
        run_ini.write_text(text.replace("city/", str(tmp_path / "city") + "/"))
        assert cli.main(["rasterize", "--config", str(run_ini),
                         "--out", str(tmp_path / "run")]) == 0
        capsys.readouterr()
        code = cli.main(["train", "--config", str(run_ini),
                         "--out", str(tmp_path / "run")])
        err = capsys.readouterr().err
        assert code == 1
        assert "seed 0" in err

    def test_missing_checkpoint_fails_cleanly(self, city, capsys):
        code = cli.main(["evaluate", "--config", city.ini, "--out", city.run,
                         "--model", "rf", "--seeds", "99"])
        err = capsys.readouterr().err
        assert code == 1
        assert "checkpoint" in err


class TestAblate:
    def test_emits_both_tables(self, city, capsys):
        assert cli.main(["ablate", "--config", city.ini, "--out", city.run]) == 0
        capsys.readouterr()
        with open(os.path.join(city.run, "ablation_logreg_metrics.csv")) as f:
            rows = [line.strip().split(",") for line in f]
        assert rows[0] == ["feature_set"] + list(evaluation.METRIC_NAMES)
        assert [r[0] for r in rows[1:]] == ["C", "CM", "CS", "CMS"]
        assert all(len(r) == 7 for r in rows[1:])
        with open(os.path.join(city.run, "ablation_logreg_diffs.csv")) as f:
            rows = [line.strip().split(",") for line in f]
        assert rows[0] == ["metric", "cms_minus_c", "cms_minus_cm", "cms_minus_cs"]
        assert [r[0] for r in rows[1:]] == list(evaluation.METRIC_NAMES)

    def test_idempotent_bytes(self, city):
        path = os.path.join(city.run, "ablation_logreg_diffs.csv")
        first = read_bytes(path)
        assert cli.main(["ablate", "--config", city.ini, "--out", city.run]) == 0
        assert read_bytes(path) == first


class TestExitCodes:
    def test_unknown_command(self):
        assert cli.main(["frobnicate"]) == 2

    def test_bad_flag_value(self, city):
        assert cli.main(["train", "--config", city.ini, "--out", city.run,
                         "--model", "gru"]) == 2

    def test_bad_lookback_flag(self, city):
        assert cli.main(["train", "--config", city.ini, "--out", city.run,
                         "--lookback-days", "3"]) == 2

    def test_missing_config_file(self, tmp_path):
        assert cli.main(["rasterize", "--config", str(tmp_path / "nope.ini"),
                         "--out", str(tmp_path)]) == 2
