import json
import os

import numpy as np
import numpy.testing as npt
import pytest

from proxmsm.cli import main
from proxmsm.dgm import simulate
from proxmsm.io import atomic_write, read_dataset, write_dataset
from proxmsm.core import InputError


class TestIo:
    def test_round_trip_exact(self, tmp_path):
        data = simulate(n=250, seed=4)
        write_dataset(data, tmp_path / "d.csv", tmp_path / "d.json")
        assert read_dataset(tmp_path / "d.csv", tmp_path / "d.json").equals(data)

    def test_atomic_write_leaves_no_temp(self, tmp_path):
        atomic_write(tmp_path / "out.txt", "hello\n")
        assert os.listdir(tmp_path) == ["out.txt"]
        assert (tmp_path / "out.txt").read_text() == "hello\n"

    def test_ragged_row(self, tmp_path):
        data = simulate(n=5, seed=0)
        write_dataset(data, tmp_path / "d.csv", tmp_path / "d.json")
        with open(tmp_path / "d.csv", "a") as fh:
            fh.write("1,2\n")
        with pytest.raises(InputError, match="expected"):
            read_dataset(tmp_path / "d.csv", tmp_path / "d.json")

    def test_unknown_role_map_key(self, tmp_path):
        data = simulate(n=5, seed=0)
        write_dataset(data, tmp_path / "d.csv", tmp_path / "d.json")
        spec = json.loads((tmp_path / "d.json").read_text())
        spec["weights"] = "w"
        (tmp_path / "d.json").write_text(json.dumps(spec))
        with pytest.raises(InputError, match="unknown role map keys"):
            read_dataset(tmp_path / "d.csv", tmp_path / "d.json")


class TestCli:
    def test_simulate_deterministic(self, tmp_path):
        for name in ("a", "b"):
            assert main(["simulate", "--n", "300", "--seed", "2", "--out", str(tmp_path / f"{name}.csv")]) == 0
        assert (tmp_path / "a.csv").read_bytes() == (tmp_path / "b.csv").read_bytes()
        assert (tmp_path / "a.roles.json").is_file()

    def test_fit_report(self, tmp_path, capsys):
        csv = tmp_path / "d.csv"
        main(["simulate", "--n", "4000", "--seed", "7", "--out", str(csv)])
        code = main(["fit", "--data", str(csv), "--roles", str(tmp_path / "d.roles.json"),
                     "--estimator", "por", "--out", str(tmp_path / "r.json")])
        assert code == 0
        report = json.loads((tmp_path / "r.json").read_text())
        assert report["estimator"] == "POR"
        assert 0.8 < report["beta_hat"][1] < 1.2

    def test_missing_role_map(self, tmp_path, capsys):
        main(["simulate", "--n", "50", "--out", str(tmp_path / "d.csv")])
        assert main(["fit", "--data", str(tmp_path / "d.csv"), "--roles", str(tmp_path / "nope.json")]) == 1
        assert "role map not found" in capsys.readouterr().err

    def test_usage_error_is_input_error(self):
        with pytest.raises(SystemExit) as exc:
            main(["fit", "--estimator", "tmle"])
        assert exc.value.code == 1

    def test_mc_markdown(self, tmp_path):
        out = tmp_path / "t.md"
        assert main(["mc", "--n", "800", "--B", "2", "--estimators", "POR,PDR", "--format", "md",
                     "--workers", "1", "--out", str(out)]) == 0
        lines = out.read_text().splitlines()
        assert lines[0].startswith("| Estimator | Bias")
        assert [ln.split("|")[1].strip() for ln in lines[2:]] == ["POR", "PDR"]

    def test_mc_unknown_variant(self):
        assert main(["mc", "--n", "100", "--B", "1", "--estimators", "XYZ", "--workers", "1"]) == 1

    def test_oracle_complete_and_incomplete(self, tmp_path, capsys):
        assert main(["oracle", "--seed", "3", "--save-world", str(tmp_path / "w.json"),
                     "--out", str(tmp_path / "r.json")]) == 0
        assert json.loads((tmp_path / "r.json").read_text())["max_discrepancy"] < 1e-10
        assert main(["oracle", "--world", str(tmp_path / "w.json")]) == 0
        assert main(["oracle", "--d-u", "3"]) == 1
        assert "not complete" in capsys.readouterr().err
