"""Run, matrix and theory report files."""

import json
import logging
from datetime import datetime
from pathlib import Path
from typing import Dict, List, Optional, Union

import aiofiles
import pandas as pd
from jinja2 import Environment, FileSystemLoader

from .auditor import AuditReport
from .config import settings
from .controller import RunOutcome
from .harness import MatrixResult
from .theory import TheoryReport

logger = logging.getLogger(__name__)

# Singleton instance for ReportGenerator
_report_generator_instance = None

FULL_PRECISION = "%.17g"


class ReportGenerator:
    """Writes CSV tables and markdown summaries."""

    def __init__(self):
        templates_path = Path(__file__).parent / "templates"
        self.env = Environment(
            loader=FileSystemLoader(str(templates_path)),
            autoescape=False,
            trim_blocks=True,
            lstrip_blocks=True,
            keep_trailing_newline=True,
        )
        self.env.filters["bits"] = self.bits
        self.env.filters["cents"] = self.cents
        self.env.filters["pct"] = self.pct
        self.env.filters["markdown_table"] = self.markdown_table

    @staticmethod
    def bits(value: Optional[float]) -> str:
        """Bits to 3 decimals."""
        return "n/a" if value is None or pd.isna(value) else f"{value:.3f}"

    @staticmethod
    def cents(value: Optional[float]) -> str:
        return "n/a" if value is None else f"{value:.3f}"

    @staticmethod
    def pct(value: Optional[float]) -> str:
        return "" if value is None else f"{value:+.3f}%"

    @staticmethod
    def markdown_table(frame: pd.DataFrame) -> str:
        header = [frame.index.name or ""] + [str(c) for c in frame.columns]
        lines = ["| " + " | ".join(header) + " |", "|" + "---|" * len(header)]
        for label, row in frame.iterrows():
            cells = [str(label)] + [
                f"{v:.3f}" if isinstance(v, float) and not pd.isna(v) else ("" if pd.isna(v) else str(v))
                for v in row
            ]
            lines.append("| " + " | ".join(cells) + " |")
        return "\n".join(lines)

    @staticmethod
    async def _write(path: Path, text: str) -> str:
        path.parent.mkdir(parents=True, exist_ok=True)
        async with aiofiles.open(path, "w", encoding="utf-8") as f:
            await f.write(text)
        return str(path)

    async def write_run(
        self,
        outcome: RunOutcome,
        directory: Union[str, Path],
        audit: Optional[AuditReport] = None,
    ) -> Dict[str, str]:
        """
        Committed profiles (x, y, S per device, temperatures, stored energy),
        the objective breakdown and a JSON record of the report and binning.
        """
        directory = Path(directory)
        written = {
            "trajectories": await self._write(
                directory / "trajectories.csv", outcome.trajectories.to_csv(float_format=FULL_PRECISION)
            ),
            "breakdown": await self._write(
                directory / "breakdown.csv", outcome.breakdown.to_csv(float_format=FULL_PRECISION)
            ),
        }
        record = {
            "report": outcome.report.model_dump(mode="json"),
            "binning": outcome.binning.model_dump(mode="json"),
            "start_index": outcome.start_index,
            "initial_states": outcome.initial_states,
        }
        if audit is not None:
            record["audit"] = audit.model_dump(mode="json")
        written["run"] = await self._write(directory / "run.json", json.dumps(record, indent=2))
        if outcome.dispatch is not None:
            written["dispatch"] = await self._write(
                directory / "dispatch.json", outcome.dispatch.model_dump_json(indent=2)
            )
        summary = self.env.get_template("run.md.j2").render(
            report=outcome.report,
            audit=audit,
            generated_at=datetime.now().strftime("%Y-%m-%d %H:%M"),
        )
        written["summary"] = await self._write(directory / "summary.md", summary)
        return written

    async def write_matrix(self, result: MatrixResult, directory: Optional[Union[str, Path]] = None) -> Dict[str, str]:
        """Summary tables, one report row per cell, and per-cell run files."""
        directory = Path(directory or settings.OUTPUT_DIR)
        reports = pd.DataFrame(
            [
                dict(cell=r.cell.name, row=r.cell.row, error=r.error or "", **(r.report.model_dump() if r.report else {}))
                for r in result.results
            ]
        ).drop(columns=["categories"], errors="ignore")
        written = {
            "privacy_table": await self._write(
                directory / "privacy_table.csv", result.privacy_table.to_csv(float_format="%.3f")
            ),
            "cost_table": await self._write(directory / "cost_table.csv", result.cost_table.to_csv()),
            "reports": await self._write(
                directory / "reports.csv", reports.to_csv(index=False, float_format=FULL_PRECISION)
            ),
        }
        for cell in result.results:
            if cell.outcome is not None:
                await self.write_run(cell.outcome, directory / "cells" / cell.cell.name, cell.audit)

        summary = self.env.get_template("matrix.md.j2").render(
            result=result,
            failures=result.failures,
            generated_at=datetime.now().strftime("%Y-%m-%d %H:%M"),
        )
        written["summary"] = await self._write(directory / "summary.md", summary)
        logger.info(f"[Report] matrix files written to {directory}")
        return written

    async def write_theory(self, report: TheoryReport, directory: Optional[Union[str, Path]] = None) -> Dict[str, str]:
        """Markdown report of the ideal-regime checks plus a flat CSV of the headline numbers."""
        directory = Path(directory or settings.OUTPUT_DIR)
        rows: List[Dict[str, object]] = [
            {"check": "y*_ess (kW)", "value": report.y_star_ess},
            {"check": "y*_th (kW)", "value": report.y_star_th},
            {"check": "P(X > y*_th)", "value": report.leakage.exceedance},
            {"check": "H(X) (bits)", "value": report.leakage.entropy_x},
            {"check": "ideal ESS MI (bits)", "value": report.sampled.ess_mi},
            {"check": "ideal FTL exact MI (bits)", "value": report.leakage.exact},
            {"check": "ideal FTL predicted MI (bits)", "value": report.leakage.predicted},
            {"check": "ideal FTL sampled MI (bits)", "value": report.sampled.ftl_sampled_mi},
            {"check": "g1", "value": report.sampled.counts.g1},
            {"check": "g2", "value": report.sampled.counts.g2},
            {"check": "g3", "value": report.sampled.counts.g3},
            {"check": "Markov FTL prediction (bits)", "value": report.sampled.markov_prediction},
            {"check": "Markov FTL sampled MI (bits)", "value": report.sampled.markov_sampled_mi},
        ]
        csv = pd.DataFrame(rows).to_csv(index=False, float_format=FULL_PRECISION)
        markdown = self.env.get_template("theory.md.j2").render(
            report=report,
            generated_at=datetime.now().strftime("%Y-%m-%d %H:%M"),
        )
        return {
            "csv": await self._write(directory / "theory.csv", csv),
            "summary": await self._write(directory / "theory.md", markdown),
        }


def get_report_generator() -> "ReportGenerator":
    """Get or create the singleton ReportGenerator instance."""
    global _report_generator_instance
    if _report_generator_instance is None:
        _report_generator_instance = ReportGenerator()
    return _report_generator_instance
