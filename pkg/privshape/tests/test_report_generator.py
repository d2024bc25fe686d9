import asyncio
import json
import tempfile
import unittest
from pathlib import Path

import pandas as pd

from privshape.auditor import audit_run
from privshape.controller import run_receding_horizon
from privshape.harness import ExperimentMatrix, run_matrix
from privshape.metrics import score
from privshape.models import EwhModel, ScenarioConfig
from privshape.report_generator import ReportGenerator, get_report_generator
from privshape.synthetic import generate_synthetic_profile
from privshape.theory import run_theory_checks

BUNDLE = generate_synthetic_profile(23618, days=8)


def build_scenario(**overrides) -> ScenarioConfig:
    fields = dict(name="report", history_window=24, days=1, horizon=4)
    fields.update(overrides)
    return ScenarioConfig(**fields)


def build_template() -> ScenarioConfig:
    return build_scenario(name="matrix")


class FilterTests(unittest.TestCase):
    def test_number_filters(self):
        self.assertEqual(ReportGenerator.bits(0.81127812), "0.811")
        self.assertEqual(ReportGenerator.bits(None), "n/a")
        self.assertEqual(ReportGenerator.cents(12.0), "12.000")
        self.assertEqual(ReportGenerator.pct(-3.25), "-3.250%")
        self.assertEqual(ReportGenerator.pct(None), "")

    def test_markdown_table(self):
        frame = pd.DataFrame({"mu=0": [0.5, float("nan")]}, index=pd.Index(["a", "b"], name="system"))
        self.assertEqual(
            ReportGenerator.markdown_table(frame), "| system | mu=0 |\n|---|---|\n| a | 0.500 |\n| b |  |"
        )

    def test_singleton(self):
        self.assertIs(get_report_generator(), get_report_generator())


class WriteRunTests(unittest.TestCase):
    def test_written_trajectories_reproduce_the_scores(self):
        scenario = build_scenario(ewh=EwhModel(), step_load=True)
        outcome = run_receding_horizon(scenario, BUNDLE)
        audit = audit_run(outcome, scenario, BUNDLE)
        with tempfile.TemporaryDirectory() as tmp:
            written = asyncio.run(get_report_generator().write_run(outcome, tmp, audit))
            self.assertEqual(set(written), {"trajectories", "breakdown", "run", "dispatch", "summary"})

            frame = pd.read_csv(written["trajectories"], index_col="timestamp", float_precision="round_trip")
            self.assertEqual(frame["y"].tolist(), outcome.y.tolist())
            self.assertEqual(frame["ewh.t_low"].tolist(), outcome.trajectories["ewh.t_low"].tolist())
            again = score(frame["x"].to_numpy(), frame["y"].to_numpy(), outcome.binning, scenario.score_smoothing)
            self.assertEqual(again.iid_mi, outcome.report.iid_mi)
            self.assertEqual(again.markov_mi, outcome.report.markov_mi)

            record = json.loads(Path(written["run"]).read_text(encoding="utf-8"))
            self.assertEqual(record["report"]["name"], "report")
            self.assertEqual(record["start_index"], 24)
            self.assertIn("audit", record)
            self.assertIn("## Audit", Path(written["summary"]).read_text(encoding="utf-8"))


class WriteMatrixTests(unittest.TestCase):
    def test_tables_reports_and_cell_files(self):
        matrix = ExperimentMatrix(
            template=build_template(), systems=("ESS",), mu_values=(0.0,), cost_modes=(True,), parallelism=1
        )
        result = asyncio.run(run_matrix(matrix, bundles={"house-23618-like": BUNDLE}))
        with tempfile.TemporaryDirectory() as tmp:
            written = asyncio.run(get_report_generator().write_matrix(result, tmp))
            reports = pd.read_csv(written["reports"])
            self.assertEqual(reports["cell"].tolist(), [r.cell.name for r in result.results])
            cost = pd.read_csv(written["cost_table"], index_col="system", dtype=str, keep_default_na=False)
            self.assertEqual(cost.loc["house-23618-like passthrough", "basis"], result.cost_table.iloc[0]["basis"])
            for cell in result.results:
                self.assertTrue((Path(tmp) / "cells" / cell.cell.name / "trajectories.csv").exists())
            summary = Path(written["summary"]).read_text(encoding="utf-8")
            self.assertIn("2 cells, 0 failed", summary)


class WriteTheoryTests(unittest.TestCase):
    def test_theory_files(self):
        report = run_theory_checks(k=2000, seed=4)
        with tempfile.TemporaryDirectory() as tmp:
            written = asyncio.run(get_report_generator().write_theory(report, tmp))
            frame = pd.read_csv(written["csv"], float_precision="round_trip")
            values = dict(zip(frame["check"], frame["value"]))
            self.assertEqual(values["y*_th (kW)"], report.y_star_th)
            self.assertEqual(values["g1"] + values["g2"] + values["g3"], 2000 - 2)
            text = Path(written["summary"]).read_text(encoding="utf-8")
            self.assertIn("Separation between ESS and FTL leakage holds: **yes**", text)


if __name__ == "__main__":
    unittest.main()
