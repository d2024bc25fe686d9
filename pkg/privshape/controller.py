"""Receding-horizon HEMS: assembles, solves and commits one horizon program per step."""

import logging
import time
from collections import deque
from typing import Deque, Dict, List, Optional, Sequence, Tuple

import numpy as np
import pandas as pd
from pydantic import BaseModel, ConfigDict, Field

from .config import settings
from .core import energy_cost
from .devices import BaseDevice, Commitment, Controls, DeviceBlock, DeviceState, HorizonForecast, build_devices
from .dispatch import dispatch_5min, upsample
from .exceptions import PrivShapeError, ProfileError, ScenarioError
from .metrics import score
from .models import (
    BinningScheme,
    ControlStepResult,
    DispatchPlan,
    LoadProfile,
    ObjectiveBreakdown,
    ProfileBundle,
    ProfileRole,
    RunReport,
    ScenarioConfig,
    SolverStatus,
)
from .objective import HistogramConstants, MiApproxProgram, build_mi_program, update_constants
from .optimizer import ProgramBuilder, QuadraticProgram, solve_miqp, solve_qp

logger = logging.getLogger(__name__)

BOUND_SNAP = 1e-6  # largest solver-noise breach of [Y^min, Y^max] repaired at commit
SNAP_ATTEMPTS = 8
COMFORT_TOLERANCE = 1e-6
USABLE_STATUSES = (SolverStatus.OPTIMAL, SolverStatus.NODE_LIMIT)
FINE_ROLES = {
    "draws": ProfileRole.HOT_WATER_DRAW,
    "outdoor_temp": ProfileRole.OUTDOOR_TEMP,
    "irradiance": ProfileRole.IRRADIANCE,
}


class HorizonProgram(BaseModel):
    """An assembled horizon program with handles to its variable blocks."""
    model_config = ConfigDict(arbitrary_types_allowed=True)

    qp: QuadraticProgram
    y: np.ndarray
    z: Optional[np.ndarray] = None
    comfort: Dict[str, np.ndarray] = Field(default_factory=dict)
    blocks: Dict[str, DeviceBlock] = Field(default_factory=dict)
    mi: Optional[MiApproxProgram] = None
    cost_weights: np.ndarray


class RunOutcome(BaseModel):
    """Everything one receding-horizon run produces."""
    model_config = ConfigDict(arbitrary_types_allowed=True)

    report: RunReport
    steps: List[ControlStepResult]
    trajectories: pd.DataFrame
    breakdown: pd.DataFrame
    binning: BinningScheme
    start_index: int
    initial_states: Dict[str, Dict[str, float]] = Field(default_factory=dict)
    dispatch: Optional[DispatchPlan] = None

    @property
    def x(self) -> np.ndarray:
        return self.trajectories["x"].to_numpy()

    @property
    def y(self) -> np.ndarray:
        return self.trajectories["y"].to_numpy()


def _state_dict(state: DeviceState) -> Dict[str, float]:
    return state.model_dump(exclude_none=True)


def build_horizon_program(
    devices: Sequence[BaseDevice],
    states: Dict[str, DeviceState],
    forecast: HorizonForecast,
    scenario: ScenarioConfig,
    constants: Optional[HistogramConstants],
    binning: BinningScheme,
) -> HorizonProgram:
    """
    Assemble
        (1/H) sum_t c_t y_t dt + mu * I~(X_w; Y_w) + rho * ||z_comf||^2
    over the device constraint sets, with y_t = x_t + S_t as equality rows.
    """
    horizon = forecast.horizon
    builder = ProgramBuilder()
    y = builder.add_variables("y", horizon, binning.y_edges[0], binning.y_edges[-1])

    shared: Dict[str, np.ndarray] = {}
    blocks: Dict[str, DeviceBlock] = {}
    comfort: Dict[str, np.ndarray] = {}
    for device in devices:
        slack = None
        if device.has_comfort:
            slack = builder.add_variables(f"{device.kind}.z_comf", horizon, 0.0, np.inf)
            comfort[device.kind] = slack
        blocks[device.kind] = device.add_constraints(builder, forecast, states[device.kind], slack, shared)

    for t in range(horizon):
        cols, values = [y[t]], [1.0]
        for block in blocks.values():
            for indices, coefficient in block.power:
                cols.append(indices[t])
                values.append(-coefficient)
        builder.add_equality(cols, values, float(forecast.x[t]))

    cost_weights = forecast.prices * forecast.step_hours / horizon
    builder.add_linear(y, cost_weights)

    mi, z = None, None
    if scenario.mu > 0:
        mi = build_mi_program(forecast.x, constants, binning, scenario.link_gap)
        z = mi.add_to(builder, y, scenario.mu)

    for slack in comfort.values():
        builder.add_quadratic(slack, slack, np.full(slack.size, 2.0 * scenario.rho))

    return HorizonProgram(
        qp=builder.build(),
        y=y,
        z=z,
        comfort=comfort,
        blocks=blocks,
        mi=mi,
        cost_weights=cost_weights,
    )


def objective_breakdown(program: HorizonProgram, x: np.ndarray, scenario: ScenarioConfig) -> ObjectiveBreakdown:
    """Cost, privacy (unconvexified surrogate) and comfort terms at a solved point."""
    privacy = 0.0
    if program.mi is not None:
        privacy = scenario.mu * program.mi.quadratic_value(x[program.z])
    comfort = sum(float(np.sum(x[slack] ** 2)) for slack in program.comfort.values())
    return ObjectiveBreakdown(
        cost_term=float(program.cost_weights @ x[program.y]),
        privacy_term=privacy,
        comfort_term=scenario.rho * comfort,
    )


def objective_is_trivial(scenario: ScenarioConfig, devices: Sequence[BaseDevice]) -> bool:
    """No cost, no privacy weight and no comfort band: every feasible plan is optimal."""
    return scenario.mu == 0 and not scenario.include_energy_cost and not any(d.has_comfort for d in devices)


def _solve(
    program: HorizonProgram,
    devices: Sequence[BaseDevice],
    states: Dict[str, DeviceState],
    forecast: HorizonForecast,
    scenario: ScenarioConfig,
) -> Tuple[SolverStatus, Optional[np.ndarray], float, int, int]:
    if not program.qp.binaries:
        solution = solve_qp(program.qp)
        return solution.status, solution.x, 0.0, 0, solution.iterations

    def heuristic(relaxed: np.ndarray) -> Optional[np.ndarray]:
        candidate = relaxed
        for device in devices:
            repaired = device.repair(candidate, program.blocks[device.kind], states[device.kind], forecast)
            if repaired is not None:
                candidate = repaired
        return None if candidate is relaxed else candidate

    solution = solve_miqp(program.qp, node_limit=scenario.node_limit, heuristic=heuristic)
    return solution.status, solution.x, solution.gap, solution.nodes, solution.iterations


def _snap_to_bounds(
    x: float,
    devices: Sequence[BaseDevice],
    controls: Dict[str, Controls],
    commitments: Dict[str, Commitment],
    states: Dict[str, DeviceState],
    forecast: HorizonForecast,
    shared_state: DeviceState,
    y_min: float,
    y_max: float,
) -> bool:
    """
    Shift device power so that y = x + s lies in [y_min, y_max] when the
    solver left it outside by at most BOUND_SNAP. Returns False if y is
    still outside.
    """
    for attempt in range(SNAP_ATTEMPTS):
        y = x + sum(commitments[d.kind].power_kw for d in devices)
        if y_min <= y <= y_max:
            return True
        shift = (y_min - y) if y < y_min else (y_max - y)
        if abs(shift) > BOUND_SNAP:
            return False
        if shift > 0:
            candidates = [d for d in devices if commitments[d.kind].power_kw < 0]
        else:
            candidates = [d for d in devices if commitments[d.kind].power_kw > 0]
        if not candidates:
            return False
        device = candidates[0]
        margin = (attempt + 1) * 4 * np.spacing(max(abs(y), 1.0))
        controls[device.kind] = device.shift_power(controls[device.kind], shift + np.sign(shift) * margin)
        commitments[device.kind] = device.settle(
            controls[device.kind], states[device.kind], forecast, shared_state
        )
    y = x + sum(commitments[d.kind].power_kw for d in devices)
    return y_min <= y <= y_max


def _dispatch_hour(
    devices: Sequence[BaseDevice],
    controls: Dict[str, Controls],
    states: Dict[str, DeviceState],
    forecast: HorizonForecast,
    hour: int,
) -> DispatchPlan:
    """Realize the first hour's thermal duties with 5-minute slots."""
    models = {d.kind: d.model for d in devices}
    duties: Dict[str, List[float]] = {}
    state: Dict[str, float] = {}
    if "ewh" in models:
        duties["ewh.u_low"] = [controls["ewh"].get("u_low", 0.0)]
        duties["ewh.u_up"] = [controls["ewh"].get("u_up", 0.0)]
        state.update(t_low=states["ewh"].t_low, t_up=states["ewh"].t_up)
    if "erh" in models:
        duties["erh.u"] = [controls["erh"].get("u", 0.0)]
        state["t_in"] = states["erh"].t_in
    return dispatch_5min(
        duties,
        state,
        ewh=models.get("ewh"),
        erh=models.get("erh"),
        draws=forecast.fine.get("draws"),
        outdoor_temp=forecast.fine.get("outdoor_temp"),
        irradiance=forecast.fine.get("irradiance"),
        first_hour=hour,
        slot_seconds=settings.DISPATCH_STEP_SECONDS,
    )


def _plan_step(
    step: int,
    devices: Sequence[BaseDevice],
    states: Dict[str, DeviceState],
    forecast: HorizonForecast,
    scenario: ScenarioConfig,
    constants: Optional[HistogramConstants],
    binning: BinningScheme,
    label: str = "",
) -> Tuple[ControlStepResult, Optional[DispatchPlan]]:
    x_now = float(forecast.x[0])
    y_min, y_max = binning.y_edges[0], binning.y_edges[-1]
    shared_state = DeviceState(t_in=states["erh"].t_in) if "erh" in states else DeviceState()
    result = ControlStepResult(step=step, x=x_now, y=x_now)
    commitments: Dict[str, Commitment] = {}
    controls: Dict[str, Controls] = {}
    dispatch: Optional[DispatchPlan] = None

    usable = False
    if devices and not objective_is_trivial(scenario, devices):
        try:
            program = build_horizon_program(devices, states, forecast, scenario, constants, binning)
            status, solution, gap, nodes, iterations = _solve(program, devices, states, forecast, scenario)
            result.status, result.gap, result.nodes, result.iterations = status, gap, nodes, iterations
            if program.mi is not None:
                result.projection_magnitude = program.mi.projection_magnitude
            usable = status in USABLE_STATUSES and solution is not None
            if usable:
                result.breakdown = objective_breakdown(program, solution, scenario)
                result.plan = {"x": forecast.x.tolist(), "y": solution[program.y].tolist()}
                for device in devices:
                    block = program.blocks[device.kind]
                    result.plan[f"{device.kind}.s"] = block.power_values(solution).tolist()
                    controls[device.kind] = device.first_step(solution, block)
                    commitments[device.kind] = device.settle(
                        controls[device.kind], states[device.kind], forecast, shared_state
                    )
        except (PrivShapeError, np.linalg.LinAlgError, RuntimeError) as e:
            logger.error(f"[Run {label}] step {step} failed: {e}", exc_info=e)
            usable = False
            result.status = SolverStatus.INFEASIBLE

        if usable and scenario.step_load and any(d.has_comfort for d in devices):
            dispatch = _dispatch_hour(devices, controls, states, forecast, step)
            achieved = {element: values[0] for element, values in dispatch.achieved_duty.items()}
            for device in devices:
                if not device.has_comfort:
                    continue
                fine_controls = {
                    name.split(".", 1)[1]: duty for name, duty in achieved.items() if name.startswith(device.kind)
                }
                final = DeviceState(**{
                    key: value for key, value in dispatch.final_state.items()
                    if key in _state_dict(states[device.kind])
                })
                controls[device.kind] = fine_controls
                commitments[device.kind] = device.settle(
                    fine_controls, states[device.kind], forecast, shared_state, next_state=final
                )

        if usable and not _snap_to_bounds(
            x_now, devices, controls, commitments, states, forecast, shared_state, y_min, y_max
        ):
            logger.warning(f"[Run {label}] step {step} grid load outside [{y_min}, {y_max}] after commit")
            usable = False
            dispatch = None

        if not usable:
            logger.warning(f"[Run {label}] step {step} solver status {result.status.value}, passthrough")
            result.fallback = True

    if not usable:
        commitments = {d.kind: d.idle(states[d.kind], forecast, shared_state) for d in devices}

    s = 0.0
    for device in devices:
        commitment = commitments[device.kind]
        s += commitment.power_kw
        result.device_power[device.kind] = commitment.power_kw
        for name, value in commitment.decisions.items():
            result.decisions[f"{device.kind}.{name}"] = value
        result.next_state[device.kind] = _state_dict(commitment.state)
        result.warnings.extend(commitment.warnings)
        result.comfort_slack = max(result.comfort_slack, device.comfort_slack(commitment.state))
    result.s = s
    result.y = x_now + s
    for warning in result.warnings:
        logger.warning(f"[Run {label}] step {step}: {warning}")
    return result, dispatch


def plan_step_ess(
    states: Dict[str, DeviceState],
    forecast: HorizonForecast,
    scenario: ScenarioConfig,
    constants: Optional[HistogramConstants],
    binning: BinningScheme,
    step: int = 0,
) -> ControlStepResult:
    """One ESS step: tariff cost plus weighted MI surrogate over the ESS constraint set."""
    if scenario.ess is None or scenario.has_ftl:
        raise ScenarioError(f"plan_step_ess needs an ESS-only scenario, got {scenario.system_label}")
    result, _ = _plan_step(step, build_devices([scenario.ess]), states, forecast, scenario, constants, binning)
    return result


def plan_step_ftl(
    states: Dict[str, DeviceState],
    forecast: HorizonForecast,
    scenario: ScenarioConfig,
    constants: Optional[HistogramConstants],
    binning: BinningScheme,
    step: int = 0,
) -> ControlStepResult:
    """One FTL step: cost, MI surrogate and comfort over the EWH and/or ERH constraint sets."""
    if scenario.ess is not None or not scenario.has_ftl:
        raise ScenarioError(f"plan_step_ftl needs an EWH and/or ERH scenario, got {scenario.system_label}")
    models = [m for m in (scenario.ewh, scenario.erh) if m is not None]
    result, _ = _plan_step(step, build_devices(models), states, forecast, scenario, constants, binning)
    return result


def _check_inputs(scenario: ScenarioConfig, bundle: ProfileBundle, steps: int) -> int:
    """Validate coverage of history, run and lookahead; returns the run's start index."""
    grid = bundle.grid
    if grid.step_seconds != 3600:
        raise ProfileError(f"Control runs on an hourly grid, got {grid.step_seconds} s")
    if scenario.ewh is not None and bundle.hot_water_draw is None:
        raise ProfileError("EWH configured but no hot-water draw profile given")
    if scenario.erh is not None and bundle.outdoor_temp is None:
        raise ProfileError("ERH configured but no outdoor temperature profile given")
    start = scenario.history_window
    needed = start + steps + scenario.horizon - 1
    if grid.count < needed:
        raise ProfileError(
            f"Profiles hold {grid.count} hours; history, run and lookahead need {needed}"
        )
    return start


def fine_series(bundle: ProfileBundle, key: str, hourly: Optional[LoadProfile], index: int) -> Optional[np.ndarray]:
    """First-hour series at 300 s from the bundle, or spread from the hourly value."""
    role = FINE_ROLES[key]
    slots = 3600 // settings.DISPATCH_STEP_SECONDS
    fine = bundle.fine.get(role)
    if fine is not None:
        if fine.grid.step_seconds != settings.DISPATCH_STEP_SECONDS:
            raise ProfileError(
                f"{role.value} companion has {fine.grid.step_seconds} s steps, "
                f"dispatch runs at {settings.DISPATCH_STEP_SECONDS} s"
            )
        return np.array(fine.values[index * slots:(index + 1) * slots])
    if hourly is None:
        return None
    return upsample(hourly.values[index:index + 1], slots, total=(role == ProfileRole.HOT_WATER_DRAW))


def horizon_forecast(
    bundle: ProfileBundle,
    scenario: ScenarioConfig,
    index: int,
    x_max: float,
    rng: Optional[np.random.Generator] = None,
) -> HorizonForecast:
    """Perfect-foresight forecast starting at `index`; optional noise beyond the current step."""
    horizon = scenario.horizon
    x = np.array(bundle.sensitive.values[index:index + horizon])
    if scenario.forecast_noise_std > 0 and rng is not None:
        x[1:] = np.clip(x[1:] + rng.normal(0.0, scenario.forecast_noise_std, horizon - 1), 0.0, x_max)
    prices = scenario.tariff.prices(bundle.grid.subgrid(index, horizon))
    prices = prices * scenario.cost_scale if scenario.include_energy_cost else np.zeros(horizon)

    def window(profile: Optional[LoadProfile]) -> Optional[np.ndarray]:
        return None if profile is None else np.array(profile.values[index:index + horizon])

    fine = {}
    if scenario.step_load:
        for key, hourly in (
            ("draws", bundle.hot_water_draw),
            ("outdoor_temp", bundle.outdoor_temp),
            ("irradiance", bundle.irradiance),
        ):
            series = fine_series(bundle, key, hourly, index)
            if series is not None:
                fine[key] = series
    return HorizonForecast(
        x=x,
        prices=prices,
        draws=window(bundle.hot_water_draw),
        outdoor_temp=window(bundle.outdoor_temp),
        irradiance=window(bundle.irradiance),
        step_seconds=bundle.grid.step_seconds,
        fine=fine,
    )


def run_receding_horizon(
    scenario: ScenarioConfig,
    bundle: ProfileBundle,
    name: Optional[str] = None,
) -> RunOutcome:
    """
    Plan, commit the first step, advance; repeat for scenario.days.

    The run starts after `history_window` hours, which seed the histogram
    window with y := x. Each committed (x, y) pair then enters the window.
    """
    label = name or scenario.name
    steps = scenario.days * 24
    start = _check_inputs(scenario, bundle, steps)
    devices = build_devices(scenario.devices)
    if scenario.step_load and scenario.has_ftl:
        peak = float(np.max(bundle.sensitive.values)) + sum(
            d.model.power_kw for d in devices if d.has_comfort
        )
        if peak > scenario.binning.y_max:
            raise ScenarioError(
                f"Step-load dispatch can reach {peak:.2f} kW, above Y max {scenario.binning.y_max}"
            )
    binning = scenario.binning.resolve(bundle.sensitive.values)
    x_max = binning.x_edges[-1]
    rng = np.random.default_rng(scenario.seed)
    states = {d.kind: d.initial_state() for d in devices}
    initial_states = {kind: _state_dict(state) for kind, state in states.items()}

    seed = bundle.sensitive.values[start - scenario.history_window:start]
    history_x: Deque[float] = deque(seed.tolist(), maxlen=scenario.history_window)
    history_y: Deque[float] = deque(seed.tolist(), maxlen=scenario.history_window)

    if devices and objective_is_trivial(scenario, devices):
        logger.info(f"[Run {label}] objective is identically zero; committing passthrough")

    logger.info(
        f"[Run {label}] {scenario.system_label}, mu={scenario.mu}, "
        f"cost={'on' if scenario.include_energy_cost else 'off'}, {steps} steps"
    )
    started = time.monotonic()
    results: List[ControlStepResult] = []
    dispatch: Optional[DispatchPlan] = None
    for step in range(steps):
        index = start + step
        forecast = horizon_forecast(bundle, scenario, index, x_max, rng)
        constants = None
        if scenario.mu > 0:
            constants = update_constants(
                history_x, history_y, binning, scenario.smoothing, scenario.history_window
            )
        result, hour_plan = _plan_step(step, devices, states, forecast, scenario, constants, binning, label)
        results.append(result)
        if hour_plan is not None:
            if dispatch is None:
                dispatch = DispatchPlan(slots_per_hour=hour_plan.slots_per_hour)
            dispatch.extend(hour_plan)

        states = {kind: DeviceState(**fields) for kind, fields in result.next_state.items()}
        history_x.append(result.x)
        history_y.append(result.y)
        if (step + 1) % 24 == 0:
            logger.debug(f"[Run {label}] day {(step + 1) // 24}/{scenario.days} done")

    elapsed = time.monotonic() - started
    outcome = _summarize(scenario, bundle, label, devices, results, binning, start, initial_states, dispatch)
    logger.info(
        f"[Run {label}] done in {elapsed:.1f}s: IID MI {outcome.report.iid_mi:.3f} bits, "
        f"Markov MI {outcome.report.markov_mi:.3f} bits, {outcome.report.solver_failures} fallback step(s)"
    )
    return outcome


def _summarize(
    scenario: ScenarioConfig,
    bundle: ProfileBundle,
    label: str,
    devices: Sequence[BaseDevice],
    results: List[ControlStepResult],
    binning: BinningScheme,
    start: int,
    initial_states: Dict[str, Dict[str, float]],
    dispatch: Optional[DispatchPlan],
) -> RunOutcome:
    steps = len(results)
    grid = bundle.grid.subgrid(start, steps)
    x = np.array([r.x for r in results])
    y = np.array([r.y for r in results])

    columns: Dict[str, List[float]] = {"x": x.tolist(), "y": y.tolist(), "s": [r.s for r in results]}
    for device in devices:
        columns[f"{device.kind}.s"] = [r.device_power[device.kind] for r in results]
    for key in (results[0].decisions if results else {}):
        columns[key] = [r.decisions.get(key, np.nan) for r in results]
    columns["comfort_slack"] = [r.comfort_slack for r in results]
    columns["status"] = [r.status.value for r in results]
    columns["fallback"] = [r.fallback for r in results]
    trajectories = pd.DataFrame(columns, index=pd.Index(grid.timestamps(), name="timestamp"))

    breakdown = pd.DataFrame(
        {
            "step": [r.step for r in results],
            "cost_term": [r.breakdown.cost_term for r in results],
            "privacy_term": [r.breakdown.privacy_term for r in results],
            "comfort_term": [r.breakdown.comfort_term for r in results],
            "total": [r.breakdown.total for r in results],
            "status": [r.status.value for r in results],
            "gap": [r.gap for r in results],
            "nodes": [r.nodes for r in results],
            "iterations": [r.iterations for r in results],
        },
        index=trajectories.index,
    )

    days = steps * grid.step_hours / 24.0
    y_profile = LoadProfile(grid=grid, values=y, role=ProfileRole.GRID)
    total_cost = energy_cost(y_profile, scenario.tariff)
    scores = score(x, y, binning, scenario.score_smoothing)
    slacks = np.array([r.comfort_slack for r in results])
    gaps = [r.gap for r in results if np.isfinite(r.gap)]

    if scenario.has_ftl:
        ftl_energy = sum(
            float(np.sum(trajectories[f"{d.kind}.s"])) * grid.step_hours for d in devices if d.has_comfort
        )
        equivalent_storage = ftl_energy / days
    else:
        equivalent_storage = scenario.ess.capacity_kwh if scenario.ess is not None else 0.0

    report = RunReport(
        name=label,
        system=scenario.system_label,
        mu=scenario.mu,
        include_energy_cost=scenario.include_energy_cost,
        step_load=scenario.step_load,
        archetype=scenario.archetype,
        steps=steps,
        days=days,
        iid_mi=scores.iid_mi,
        markov_mi=scores.markov_mi,
        entropy_x=scores.entropy_x,
        total_cost_cents=total_cost,
        average_daily_cost_cents=total_cost / days,
        comfort_violation_count=int(np.sum(slacks > COMFORT_TOLERANCE)),
        comfort_violation_max=float(np.max(slacks, initial=0.0)),
        solver_failures=sum(r.fallback for r in results),
        mean_iterations=float(np.mean([r.iterations for r in results])) if results else 0.0,
        max_gap=max(gaps, default=0.0),
        total_nodes=sum(r.nodes for r in results),
        projection_magnitude=max((r.projection_magnitude for r in results), default=0.0),
        equivalent_storage_kwh=equivalent_storage,
        dispatch_deviations=dispatch.deviation_count() if dispatch is not None else 0,
        dispatch_violations=len(dispatch.violations) if dispatch is not None else 0,
        categories={d.kind: d.category.value for d in devices},
    )
    return RunOutcome(
        report=report,
        steps=results,
        trajectories=trajectories,
        breakdown=breakdown,
        binning=binning,
        start_index=start,
        initial_states=initial_states,
        dispatch=dispatch,
    )
