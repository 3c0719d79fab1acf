import csv
import json
import time

import numpy as np
import pytest

from scgt.cli import SIM_COLUMNS, feasible_size, main
from scgt.design import build_base_matrix, load_design


def _rows(path):
    with open(path) as fh:
        return list(csv.DictReader(fh))


class TestSizes:
    def test_rounding(self):
        base = build_base_matrix(6, 40)
        assert feasible_size(0.38, 20000, base) == (7605, 20000)
        assert feasible_size(0.3, 2010, base) == (585, 2000)


class TestCommands:
    def test_design(self, tmp_path):
        assert main(["design", "--deltas", "0.3", "--p", "400", "--set", "omega=3", "--set", "lambda=10",
                     "--output", str(tmp_path / "d")]) == 0
        d = load_design(tmp_path / "d.csv")
        assert (d.n, d.p) == (120, 400)

    def test_simulate_sidecar_and_columns(self, tmp_path, capsys):
        args = ["simulate", "--deltas", "[0.5]", "--p", "400", "--seeds", "2", "--set", "omega=3",
                "--set", "lambda=10", "--output", str(tmp_path / "s")]
        assert main(args) == 0
        rows = _rows(tmp_path / "s_summary.csv")
        assert list(rows[0]) == SIM_COLUMNS
        assert rows[0]["n_seeds"] == "2" and float(rows[0]["correlation_std"]) >= 0
        side = json.loads((tmp_path / "s.json").read_text())
        assert side["points"][0]["n"] == 204 and side["config"]["seeds"] == [0, 1]
        trade = _rows(tmp_path / "s_tradeoff.csv")
        assert len(trade) == 9 and {"fpr_mean", "fnr_mean"} <= set(trade[0])

    def test_rerun_is_bit_identical(self, tmp_path):
        base = ["simulate", "--deltas", "0.4", "--p", "400", "--set", "omega=3", "--set", "lambda=10",
                "--set", "sigma2=0.01"]
        main(base + ["--output", str(tmp_path / "a")])
        main(base + ["--output", str(tmp_path / "b")])
        assert (tmp_path / "a_summary.csv").read_bytes() == (tmp_path / "b_summary.csv").read_bytes()

    def test_iid_same_as_trivial_sc(self, tmp_path):
        common = ["se", "--deltas", "[0.45, 0.5]", "--output"]
        main(common + [str(tmp_path / "i"), "--design", "iid"])
        main(common + [str(tmp_path / "t"), "--set", "omega=1", "--set", "lambda=1"])
        a, b = _rows(tmp_path / "i_se.csv"), _rows(tmp_path / "t_se.csv")
        assert [r["mse"] for r in a] == [r["mse"] for r in b]

    def test_se_and_potential(self, tmp_path):
        assert main(["se", "--deltas", "[0.3, 0.38]", "--output", str(tmp_path / "e")]) == 0
        rows = _rows(tmp_path / "e_se.csv")
        assert float(rows[1]["mse"]) == 0.0
        with pytest.warns(UserWarning, match="duplicate"):
            assert main(["potential", "--deltas", "[0.02, 0.05, 0.02]", "--pi", "0.1", "--set", "sigma2=1e-60",
                         "--output", str(tmp_path / "u")]) == 0
        pot = _rows(tmp_path / "u_potential.csv")
        assert len(pot) == 2 and all(float(r["argmin_grid"]) == 0.0 for r in pot)
        assert len(_rows(tmp_path / "u_curves.csv")) == 1000

    def test_pooled_se(self, tmp_path):
        assert main(["se", "--set", "task=pooled", "--pi", "[0.5, 0.5]", "--set", "omega=2",
                     "--set", "lambda=3", "--deltas", "0.8", "--output", str(tmp_path / "c")]) == 0
        assert float(_rows(tmp_path / "c_se.csv")[0]["correlation"]) > 0.99

    def test_baseline_caps_p(self, tmp_path):
        with pytest.warns(UserWarning, match="p_cap"):
            assert main(["baseline", "--deltas", "0.3", "--p", "800", "--set", "p_cap=400",
                         "--design", "iid", "--output", str(tmp_path / "b")]) == 0
        assert _rows(tmp_path / "b_summary.csv")[0]["p"] == "400"

    def test_se_sweep_runtime(self, tmp_path):
        deltas = json.dumps([round(x, 4) for x in np.linspace(0.2, 0.6, 100)])
        t0 = time.perf_counter()
        assert main(["se", "--deltas", deltas, "--output", str(tmp_path / "sw")]) == 0
        assert time.perf_counter() - t0 < 60
        assert len(_rows(tmp_path / "sw_se.csv")) == 100

    def test_no_temp_files_left(self, tmp_path):
        main(["se", "--deltas", "0.3", "--output", str(tmp_path / "x")])
        assert not [p for p in tmp_path.iterdir() if p.name.endswith(".tmp")]


class TestErrors:
    @pytest.mark.parametrize("args", [
        ["simulate", "--p", "400"],
        ["simulate", "--deltas", "0.3", "--set", "nonsense=1"],
        ["simulate", "--deltas", "0.3", "--set", "pi=2"],
        ["simulate", "--deltas", "0.3", "--set", "noise_scaling=loud"],
        ["simulate", "--deltas", "0.3", "--set", "broken"],
        ["bogus"],
    ])
    def test_usage_errors(self, args, capsys):
        assert main(args) == 2

    def test_bad_config_file(self, tmp_path):
        cfg = tmp_path / "c.json"
        cfg.write_text("[1, 2]")
        assert main(["se", "--config", str(cfg)]) == 2
        cfg.write_text(json.dumps({"deltas": [0.3], "p": 400, "output": str(tmp_path / "o")}))
        assert main(["se", "--config", str(cfg)]) == 0

    def test_numerical_failure_exit_code(self, tmp_path, monkeypatch):
        from scgt import cli
        from scgt.amp import AmpDivergenceError

        def boom(*a, **k):
            raise AmpDivergenceError(3)

        monkeypatch.setattr(cli, "run_sc_amp_qgt", boom)
        assert main(["simulate", "--deltas", "0.5", "--p", "400", "--set", "omega=3", "--set", "lambda=10",
                     "--output", str(tmp_path / "z")]) == 3
