import csv

import numpy as np
import pytest

from transferhub.cli import forecast, main
from transferhub.dataset import load_csv
from transferhub.evaluation import crps_gaussian, nrmse
from transferhub.experiment import ConfigError, parse_config
from transferhub.serialization import load_model

MINIMAL = """
n_parks = 2
n_days = 10
folds = 2
days_grid = 7
seasons = winter
methods = di,gbrt
samples_per_day = 24
mlp_widen = 1
mlp_lr = 0.1
mlp_epochs = 5
gbrt_lr = 0.2
gbrt_depth = 2
gbrt_estimators = 20
"""


def write_config(tmp_path, name="c.cfg", extra="", out="out"):
    path = tmp_path / name
    path.write_text(MINIMAL + extra + f"out_dir = {out}\n")
    return path


def read_csv(path):
    with open(path, newline="") as fh:
        return list(csv.DictReader(fh))


class TestRun:
    def test_minimal_row_count(self, tmp_path):
        assert main(["run", str(write_config(tmp_path))]) == 0
        rows = read_csv(tmp_path / "out" / "errors.csv")
        # one cell (winter, 7 days) x 2 target parks x 2 methods
        assert len(rows) == 4
        assert {(r["park"], r["method"]) for r in rows} == {
            (p, m) for p in ("wind_000", "wind_001") for m in ("di", "gbrt")}
        assert (tmp_path / "out" / "summary.csv").exists()

    def test_deterministic(self, tmp_path):
        main(["run", str(write_config(tmp_path, "a.cfg", out="a"))])
        main(["run", str(write_config(tmp_path, "b.cfg", out="b"))])
        for name in ("errors.csv", "summary.csv"):
            assert (tmp_path / "a" / name).read_bytes() == (tmp_path / "b" / name).read_bytes()

    def test_unknown_method(self, tmp_path, capsys):
        cfg = tmp_path / "c.cfg"
        cfg.write_text("methods = di,frobnicate\n")
        assert main(["run", str(cfg)]) == 2
        assert "frobnicate" in capsys.readouterr().err

    def test_unknown_key(self):
        with pytest.raises(ConfigError, match="colour"):
            parse_config("colour = blue\n")

    def test_bad_value(self):
        with pytest.raises(ConfigError, match="n_parks"):
            parse_config("n_parks = many\n")

    def test_requires_clean_out_dir(self, tmp_path, capsys):
        cfg = write_config(tmp_path)
        assert main(["run", str(cfg)]) == 0
        assert main(["run", str(cfg)]) == 2
        assert "out_dir" in capsys.readouterr().err
        assert main(["run", str(cfg), "--force"]) == 0

    def test_missing_config(self, tmp_path, capsys):
        assert main(["run", str(tmp_path / "absent.cfg")]) == 2
        assert "absent.cfg" in capsys.readouterr().err

    def test_stagewise_hub_matches_monolithic(self, tmp_path):
        assert main(["synth-gen", "--n-parks", "2", "--n-days", "10", "--samples-per-day", "24",
                     "--out", str(tmp_path / "hub")]) == 0
        main(["run", str(write_config(tmp_path, "mono.cfg", out="mono"))])
        main(["run", str(write_config(tmp_path, "stage.cfg", extra="hub_dir = hub\n", out="stage"))])
        assert (tmp_path / "mono" / "errors.csv").read_bytes() == (tmp_path / "stage" / "errors.csv").read_bytes()


@pytest.fixture(scope="module")
def stages(tmp_path_factory):
    """synth-gen -> train-hub on a tiny hub; the last park doubles as the target."""
    root = tmp_path_factory.mktemp("stages")
    cfg = root / "train.cfg"
    cfg.write_text(MINIMAL + "belm_hidden = 20\nbelm_activations = relu\n")
    assert main(["synth-gen", "--n-parks", "3", "--n-days", "20", "--samples-per-day", "24",
                 "--out", str(root / "hub")]) == 0
    assert main(["train-hub", str(root / "hub"), "--out", str(root / "models"), "--config", str(cfg)]) == 0
    return root


class TestStages:
    def test_manifest(self, stages):
        rows = read_csv(stages / "models" / "manifest.csv")
        assert [(r["park_id"], r["kind"]) for r in rows] == [
            (f"wind_00{i}", k) for i in range(3) for k in ("mlp", "belm")]

    def test_select_marks_one_each(self, stages):
        out = stages / "sel.csv"
        assert main(["select", str(stages / "models"), str(stages / "hub" / "wind_002.csv"),
                     "--out", str(out)]) == 0
        rows = read_csv(out)
        assert len(rows) == 3
        assert sum(int(r["selected_by_evidence"]) for r in rows) == 1
        assert sum(int(r["selected_by_nrmse"]) for r in rows) == 1

    @pytest.mark.parametrize("strategy", ["di", "dili", "online", "wd"])
    def test_adapt_forecast_evaluate(self, stages, strategy, capsys):
        target = stages / "hub" / "wind_002.csv"
        model, preds = stages / f"{strategy}.json", stages / f"{strategy}_pred.csv"
        log_path = stages / f"{strategy}_log.csv"
        assert main(["adapt", str(stages / "models"), str(target), "--strategy", strategy,
                     "--out", str(model), "--log", str(log_path)]) == 0
        assert main(["forecast", str(model), str(target), "--out", str(preds)]) == 0
        header = read_csv(preds)[0].keys()
        probabilistic = strategy in ("dili", "online")
        assert list(header) == ["timestamp", "horizon", "mu"] + (["sigma2"] if probabilistic else [])
        capsys.readouterr()
        assert main(["evaluate", str(preds), str(target)]) == 0
        lines = dict(line.split(",") for line in capsys.readouterr().out.strip().splitlines()[1:])
        ds = load_csv(target)
        mu, s2 = forecast(load_model(model), ds)
        assert abs(float(lines["nrmse"]) - nrmse(ds.power, mu)) < 1e-12
        if probabilistic:
            ref = np.mean(crps_gaussian(mu, np.sqrt(s2), ds.power))
            assert abs(float(lines["crps"]) - ref) < 1e-12
        chosen = [r for r in read_csv(log_path) if r["chosen"] == "1"]
        assert len(chosen) == 1

    def test_missing_model_named(self, stages, tmp_path, capsys):
        assert main(["forecast", str(tmp_path / "ghost.json"), str(stages / "hub" / "wind_000.csv"),
                     "--out", str(tmp_path / "p.csv")]) == 1
        assert "ghost.json" in capsys.readouterr().err

    def test_missing_manifest_named(self, stages, tmp_path, capsys):
        assert main(["select", str(tmp_path / "empty"), str(stages / "hub" / "wind_000.csv")]) == 1
        assert "manifest.csv" in capsys.readouterr().err

    def test_missing_hub_named(self, tmp_path, capsys):
        assert main(["train-hub", str(tmp_path / "nohub"), "--out", str(tmp_path / "m")]) == 1
        assert "hub.csv" in capsys.readouterr().err


class TestReport:
    def test_single_method_ranks_one(self, tmp_path, capsys):
        summary = tmp_path / "summary.csv"
        summary.write_text("dataset,days,method,mean_rank,verdict\nwind,7,gbrt,1.0,o\nwind,14,gbrt,1.0,o\n")
        assert main(["report", str(summary)]) == 0
        out = capsys.readouterr().out
        table = [line for line in out.splitlines() if line.startswith("gbrt")]
        assert table and table[0].split()[1:] == ["1.00", "1.00"]

    def test_markers(self, tmp_path, capsys):
        summary = tmp_path / "summary.csv"
        summary.write_text("dataset,days,method,mean_rank,verdict\n"
                           "wind,7,di,1.2,v\nwind,7,bt,2.5,^\nwind,7,gbrt,2.3,o\n")
        main(["report", str(summary)])
        out = capsys.readouterr().out
        assert "1.20 ∨" in out and "2.50 ∧" in out

    def test_missing_summary(self, tmp_path, capsys):
        assert main(["report", str(tmp_path / "summary.csv")]) == 1
        assert "summary.csv" in capsys.readouterr().err
