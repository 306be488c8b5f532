"""
Tests for the command-line interface
"""
import json

import pandas as pd
import pytest

from app.main import run
from core.reporting import ESTIMATE_COLUMNS
from models.schemas import AnomalySpec, WrongYearRule
from tests.conftest import small_config


class TestCli:
    """End-to-end runs of the subcommands on temporary files"""

    @pytest.fixture(autouse=True)
    def _workspace(self, tmp_path):
        self.tmp = tmp_path
        self.config = tmp_path / "synth.json"
        self.config.write_text(small_config().model_dump_json())
        self.panel = tmp_path / "panel.csv"
        self.calendar = tmp_path / "calendar.json"
        assert self._synth(self.panel, self.calendar) == 0

    def _synth(self, panel, calendar, *extra) -> int:
        return run(["synth", "--config", str(self.config), "--out-panel", str(panel),
                    "--out-calendar", str(calendar), *extra])

    def _panel_args(self, panel=None):
        return ["--panel", str(panel or self.panel), "--calendar", str(self.calendar)]

    def test_synth_is_deterministic(self):
        """Test that two synth runs write identical files"""
        again = self.tmp / "again.csv"
        self._synth(again, self.tmp / "again.json")

        assert again.read_bytes() == self.panel.read_bytes()
        assert json.loads(self.calendar.read_text())[0]["event_id"] == "E2005"

    def test_validate_exit_codes(self):
        """Test that a clean panel validates and an injected one fails"""
        report = self.tmp / "report.json"
        assert run(["validate", *self._panel_args(), "--out-json", str(report),
                    "--out-text", str(self.tmp / "report.txt")]) == 0
        assert json.loads(report.read_text())["findings"]

        anomalies = self.tmp / "anomalies.json"
        anomalies.write_text(AnomalySpec(
            wrong_year_rules=[WrongYearRule(event_id="E2005", wrong_year=2006, share=0.2)], seed=3
        ).model_dump_json())
        corrupted = self.tmp / "corrupted.csv"
        assert self._synth(corrupted, self.calendar, "--anomalies", str(anomalies)) == 0

        assert run(["validate", *self._panel_args(corrupted), "--out-json", str(report),
                    "--out-text", str(self.tmp / "report.txt")]) == 1
        assert "event_year.wrong_year" in (self.tmp / "report.txt").read_text()

    def test_estimate_csv(self):
        """Test the estimate table layout"""
        out = self.tmp / "estimates.csv"

        assert run(["estimate", *self._panel_args(), "--bandwidth", "0.1", "--out-csv", str(out)]) == 0

        frame = pd.read_csv(out)
        assert list(frame.columns) == ESTIMATE_COLUMNS
        assert "treated_x_time_+3_x_below" in set(frame["name"])
        assert (frame["bandwidth"] == 0.1).all()

    def test_sweep_and_curve(self):
        """Test that sweep, curve and rdgap write one block per request"""
        sweep = self.tmp / "sweep.csv"
        curve = self.tmp / "curve.csv"
        gaps = self.tmp / "gaps.csv"

        assert run(["sweep", *self._panel_args(), "--bandwidths", "0.05,0.10", "--out-csv", str(sweep)]) == 0
        assert run(["curve", *self._panel_args(), "--bandwidth", "0.05", "--points", "3", "--range", "0.05",
                    "--out-csv", str(curve)]) == 0
        assert run(["rdgap", *self._panel_args(), "--bandwidth", "0.10", "--out-csv", str(gaps)]) == 0

        assert sorted(pd.read_csv(sweep)["bandwidth"].unique()) == [0.05, 0.10]
        assert len(pd.read_csv(curve)) == 3 * 8
        assert list(pd.read_csv(gaps).columns) == ["time", "left", "right", "tau_rd", "std_error"]

    def test_miscoding(self):
        """Test the miscoding command on a panel without miscoding"""
        out = self.tmp / "miscoding.csv"

        assert run(["miscoding", *self._panel_args(), "--poly-order", "2", "--out-csv", str(out)]) == 0
        assert run(["miscoding", *self._panel_args(), "--strict", "--out-csv", str(out)]) == 2

    def test_monte_carlo_outputs(self):
        """Test that each scenario writes replications and a summary headed by the seed"""
        config = self.tmp / "mc.json"
        config.write_text(json.dumps({"params": {"n": 200, "seed": 1}, "S": 20, "scenarios": [424.1, 450.8]}))
        out_dir = self.tmp / "mc"

        assert run(["mc", "--config", str(config), "--out-dir", str(out_dir)]) == 0

        for limit in ("424.1", "450.8"):
            summary = (out_dir / f"summary_{limit}.csv").read_text()
            assert summary.startswith("# seed=1 n=200 S=20")
            replications = pd.read_csv(out_dir / f"replications_{limit}.csv", comment="#")
            assert len(replications) == 20 * 3

    def test_monte_carlo_sweep(self):
        """Test the sample-size sweep output"""
        config = self.tmp / "mc.json"
        config.write_text(json.dumps({"params": {"seed": 4}, "S": 10, "n_grid": [100, 200]}))
        out = self.tmp / "sweep.csv"

        assert run(["mc-sweep", "--config", str(config), "--out-csv", str(out)]) == 0

        assert out.read_text().startswith("# seed=4")
        assert len(pd.read_csv(out, comment="#")) == 2 * 3

    def test_bad_input(self):
        """Test that malformed inputs exit with status 2"""
        bad = self.tmp / "bad.csv"
        bad.write_text("reported_amount,limit\nabc,417\n")
        broken_json = self.tmp / "broken.json"
        broken_json.write_text("{not json")

        assert run(["validate", *self._panel_args(bad)]) == 2
        assert run(["mc", "--config", str(broken_json), "--out-dir", str(self.tmp / "mc")]) == 2
