"""Scenario matrices: cell expansion, concurrent execution and summary tables."""

import asyncio
import logging
import math
import time
from pathlib import Path
from typing import Dict, List, Optional, Tuple, Union

import numpy as np
import pandas as pd
from pydantic import BaseModel, ConfigDict, Field

from .auditor import AuditReport, audit_run
from .config import settings
from .controller import RunOutcome, run_receding_horizon
from .exceptions import ScenarioError
from .ingest import ingest_profiles
from .models import ErhModel, EssModel, EwhModel, ProfileBundle, RunReport, ScenarioConfig
from .synthetic import generate_synthetic_profile

logger = logging.getLogger(__name__)

SYSTEMS = {
    "None": (),
    "ESS": ("ess",),
    "EWH": ("ewh",),
    "ERH": ("erh",),
    "EWH+ERH": ("ewh", "erh"),
}
OVERSIZED_TANK_LITRES = 255.0


class MatrixCell(BaseModel):
    """One fully resolved run of a matrix."""
    model_config = ConfigDict(frozen=True)

    index: int
    name: str
    system: str
    archetype: str
    scenario: ScenarioConfig
    row: str                      # summary-table row label
    is_baseline: bool = False
    basis: Optional[str] = None   # name of the cell whose cost is this cell's basis


class ExperimentMatrix(BaseModel):
    """Axes of a scenario matrix over a template scenario."""
    model_config = ConfigDict(frozen=True, extra="forbid")

    template: ScenarioConfig = Field(default_factory=ScenarioConfig)
    mu_values: Tuple[float, ...] = (0.0, 5.0, 10.0)
    cost_modes: Tuple[bool, ...] = (True, False)
    systems: Tuple[str, ...] = ("ESS", "EWH", "EWH+ERH")
    step_load_modes: Tuple[bool, ...] = (False,)
    archetypes: Tuple[str, ...] = ("house-23618-like",)
    tank_litres: Tuple[Optional[float], ...] = (None,)
    master_seed: int = 23618
    parallelism: int = Field(default_factory=lambda: settings.PARALLELISM, ge=1)

    def cells(self) -> List[MatrixCell]:
        """
        Cells in a fixed order, baselines included. ESS rows take their cost
        basis from a passthrough cell; FTL rows from their own mu = 0,
        cost-blind cell (the comfort-only run).
        """
        for system in self.systems:
            if system not in SYSTEMS:
                raise ScenarioError(f"Unknown system {system!r}; choose from {sorted(SYSTEMS)}")
        specs: List[dict] = []
        for archetype in self.archetypes:
            passthrough = f"{archetype}-none"
            if any(SYSTEMS[s] == ("ess",) for s in self.systems) or "None" in self.systems:
                specs.append(dict(
                    name=passthrough, system="None", archetype=archetype, mu=0.0, cost=True,
                    step=False, tank=None, row=f"{archetype} passthrough", is_baseline=True, basis=None,
                ))
            for system in self.systems:
                if system == "None":
                    continue
                kinds = SYSTEMS[system]
                step_modes = self.step_load_modes if kinds == ("ewh",) else (False,)
                tanks = self.tank_litres if "ewh" in kinds else (None,)
                for step in step_modes:
                    for tank in tanks:
                        suffix = ("-step" if step else "") + (f"-tank{tank:g}" if tank else "")
                        for cost in self.cost_modes:
                            mode = "cost" if cost else "nocost"
                            row = f"{archetype} {system} {mode}{suffix}"
                            comfort_only = f"{archetype}-{system.lower()}-nocost{suffix}-mu0"
                            for mu in self.mu_values:
                                name = f"{archetype}-{system.lower()}-{mode}{suffix}-mu{mu:g}"
                                if kinds == ("ess",):
                                    basis, baseline = passthrough, False
                                else:
                                    baseline = name == comfort_only
                                    basis = None if baseline else comfort_only
                                specs.append(dict(
                                    name=name, system=system, archetype=archetype, mu=mu, cost=cost,
                                    step=step, tank=tank, row=row, is_baseline=baseline, basis=basis,
                                ))
            # comfort-only bases that the axes do not produce on their own
            present = {s["name"] for s in specs}
            for spec in list(specs):
                basis = spec["basis"]
                if basis is not None and basis not in present:
                    specs.append(dict(spec, name=basis, mu=0.0, cost=False, is_baseline=True, basis=None,
                                      row=spec["row"].replace(" cost", " nocost")))
                    present.add(basis)

        cells = []
        for index, spec in enumerate(specs):
            cells.append(MatrixCell(
                index=index,
                name=spec["name"],
                system=spec["system"],
                archetype=spec["archetype"],
                scenario=self._scenario(index, spec),
                row=spec["row"],
                is_baseline=spec["is_baseline"],
                basis=spec["basis"],
            ))
        return cells

    def _scenario(self, index: int, spec: dict) -> ScenarioConfig:
        template = self.template
        kinds = SYSTEMS[spec["system"]]
        ewh = None
        if "ewh" in kinds:
            ewh = template.ewh or EwhModel()
            if spec["tank"]:
                ewh = ewh.with_volume(spec["tank"])
        return template.model_copy(update={
            "name": spec["name"],
            "mu": spec["mu"],
            "include_energy_cost": spec["cost"],
            "step_load": spec["step"],
            "archetype": spec["archetype"],
            "seed": cell_seed(self.master_seed, index),
            "ess": (template.ess or EssModel()) if "ess" in kinds else None,
            "ewh": ewh,
            "erh": (template.erh or ErhModel()) if "erh" in kinds else None,
        })


def cell_seed(master_seed: int, index: int) -> int:
    """Counter-based per-cell seed."""
    return int(np.random.SeedSequence([master_seed, index]).generate_state(1)[0])


def required_days(scenario: ScenarioConfig) -> int:
    """Profile length covering history, the run and the last horizon's lookahead."""
    hours = scenario.history_window + scenario.days * 24 + scenario.horizon - 1
    return math.ceil(hours / 24)


class CellResult(BaseModel):
    """Outcome of one cell; `error` is set when the cell failed or its audit found violations."""
    model_config = ConfigDict(arbitrary_types_allowed=True)

    cell: MatrixCell
    report: Optional[RunReport] = None
    error: Optional[str] = None
    audit: Optional[AuditReport] = None
    outcome: Optional[RunOutcome] = Field(default=None, exclude=True)
    elapsed: float = 0.0

    @property
    def ok(self) -> bool:
        return self.error is None and self.report is not None


class MatrixResult(BaseModel):
    """All cells of a matrix, in cell order, with the two summary tables."""
    model_config = ConfigDict(arbitrary_types_allowed=True)

    results: List[CellResult]
    privacy_table: pd.DataFrame
    cost_table: pd.DataFrame

    @property
    def failures(self) -> List[CellResult]:
        return [r for r in self.results if not r.ok]

    @property
    def ok(self) -> bool:
        return not self.failures

    def reports(self) -> List[RunReport]:
        return [r.report for r in self.results if r.report is not None]


def load_bundle(scenario: ScenarioConfig, seed: int, base_dir: Optional[Union[str, Path]] = None) -> ProfileBundle:
    """Profiles of a scenario: its CSV inputs, or a synthetic month of its archetype."""
    if scenario.inputs.sensitive is not None:
        return ingest_profiles(
            scenario.inputs,
            require_draws=scenario.ewh is not None,
            require_weather=scenario.erh is not None,
            base_dir=base_dir,
        )
    return generate_synthetic_profile(seed, required_days(scenario), scenario.archetype)


def run_cell(cell: MatrixCell, bundle: ProfileBundle) -> CellResult:
    """Run and audit one cell (blocking)."""
    started = time.monotonic()
    outcome = run_receding_horizon(cell.scenario, bundle, cell.name)
    audit = audit_run(outcome, cell.scenario, bundle)
    report = outcome.report.model_copy(update={"is_baseline": cell.is_baseline})
    error = None
    if not audit.ok:
        error = f"audit found {len(audit.findings)} violations: {', '.join(audit.checks())}"
        logger.error(f"[Cell {cell.name}] {error}")
    return CellResult(
        cell=cell, report=report, error=error, audit=audit, outcome=outcome, elapsed=time.monotonic() - started
    )


async def run_matrix(
    matrix: ExperimentMatrix,
    bundles: Optional[Dict[str, ProfileBundle]] = None,
    base_dir: Optional[Union[str, Path]] = None,
) -> MatrixResult:
    """
    Execute every cell, at most `matrix.parallelism` at a time.

    Cells share one profile bundle per archetype so paired comparisons see
    the same load. A failed or timed-out cell is recorded and the rest
    still run.
    """
    cells = matrix.cells()
    bundles = dict(bundles or {})
    for archetype in matrix.archetypes:
        if archetype not in bundles:
            template = matrix.template.model_copy(update={"archetype": archetype})
            bundles[archetype] = load_bundle(template, matrix.master_seed, base_dir)

    semaphore = asyncio.Semaphore(matrix.parallelism)
    logger.info(f"[Matrix] {len(cells)} cells, parallelism {matrix.parallelism}")

    async def run_single_cell(cell: MatrixCell) -> CellResult:
        async with semaphore:
            logger.info(f"[Cell {cell.name}] started")
            try:
                result = await asyncio.wait_for(
                    asyncio.to_thread(run_cell, cell, bundles[cell.archetype]),
                    timeout=settings.CELL_TIMEOUT,
                )
                logger.info(f"[Cell {cell.name}] completed in {result.elapsed:.2f}s")
                return result
            except asyncio.TimeoutError:
                logger.error(f"[Cell {cell.name}] timed out after {settings.CELL_TIMEOUT} seconds")
                return CellResult(cell=cell, error=f"timed out after {settings.CELL_TIMEOUT} s")
            except Exception as e:
                # one broken cell must not take the matrix down
                logger.error(f"[Cell {cell.name}] failed: {e}", exc_info=e)
                return CellResult(cell=cell, error=f"{type(e).__name__}: {e}")

    tasks = [run_single_cell(cell) for cell in cells]
    if settings.ENABLE_PARALLEL_CELLS:
        gathered = await asyncio.gather(*tasks, return_exceptions=True)
    else:
        gathered = [await task for task in tasks]

    results: List[CellResult] = []
    for cell, item in zip(cells, gathered):
        if isinstance(item, BaseException):
            logger.error(f"[Cell {cell.name}] task failed unexpectedly: {item}", exc_info=item)
            results.append(CellResult(cell=cell, error=str(item)))
        else:
            results.append(item)

    apply_cost_deltas(results)
    failed = [r.cell.name for r in results if not r.ok]
    if failed:
        logger.warning(f"[Matrix] failed cells: {', '.join(failed)}")
    return MatrixResult(
        results=results,
        privacy_table=privacy_table(results, matrix.mu_values),
        cost_table=cost_table(results, matrix.mu_values),
    )


def cost_delta_pct(cost: float, basis: float) -> Optional[float]:
    if basis == 0:
        return None
    return (cost - basis) / basis * 100.0


def apply_cost_deltas(results: List[CellResult]) -> None:
    """Non-baseline cells get their % cost delta against their basis cell."""
    by_name = {r.cell.name: r for r in results}
    for result in results:
        basis = by_name.get(result.cell.basis) if result.cell.basis else None
        if result.report is None or basis is None or basis.report is None:
            continue
        delta = cost_delta_pct(result.report.average_daily_cost_cents, basis.report.average_daily_cost_cents)
        result.report = result.report.model_copy(update={"cost_delta_pct": delta})


def _mu_label(mu: float) -> str:
    return f"mu={mu:g}"


def privacy_table(results: List[CellResult], mu_values: Tuple[float, ...]) -> pd.DataFrame:
    """Rows system x cost mode, columns mu x {IID MI, Markov MI}, bits."""
    rows: Dict[str, Dict[str, float]] = {}
    for result in results:
        if result.cell.system == "None":
            continue
        row = rows.setdefault(result.cell.row, {})
        mu = _mu_label(result.cell.scenario.mu)
        row[f"{mu} IID MI"] = result.report.iid_mi if result.report else np.nan
        row[f"{mu} Markov MI"] = result.report.markov_mi if result.report else np.nan
    columns = [f"{_mu_label(mu)} {kind}" for mu in mu_values for kind in ("IID MI", "Markov MI")]
    frame = pd.DataFrame.from_dict(rows, orient="index").reindex(columns=columns)
    frame.index.name = "system"
    return frame.round(3)


def cost_table(results: List[CellResult], mu_values: Tuple[float, ...]) -> pd.DataFrame:
    """
    Average daily cost: absolute cents in basis cells, % delta elsewhere.
    Entries are strings so the two kinds stay distinguishable.
    """
    rows: Dict[str, Dict[str, str]] = {}
    for result in results:
        row = rows.setdefault(result.cell.row, {})
        column = "basis" if result.cell.system == "None" else _mu_label(result.cell.scenario.mu)
        report = result.report
        if report is None:
            row[column] = "failed"
        elif result.cell.is_baseline:
            row[column] = f"{report.average_daily_cost_cents:.3f}"
        elif report.cost_delta_pct is not None:
            row[column] = f"{report.cost_delta_pct:+.3f}%"
        else:
            row[column] = ""
    columns = ["basis"] + [_mu_label(mu) for mu in mu_values]
    frame = pd.DataFrame.from_dict(rows, orient="index").reindex(columns=columns).fillna("")
    frame.index.name = "system"
    return frame
