"""Independent re-check of committed trajectories and dispatch traces."""

import logging
from typing import Dict, List, Optional, Tuple

import numpy as np
import pandas as pd
from pydantic import BaseModel, Field

from .controller import FINE_ROLES, RunOutcome, fine_series
from .devices import ASSEMBLY_ORDER
from .devices.erh import erh_step
from .devices.ess import ess_step
from .devices.ewh import ewh_step
from .dispatch import BREACH_TOLERANCE, ERH_ELEMENT, EWH_ELEMENTS, ewh_breach, slot_targets
from .models import ProfileBundle, ScenarioConfig

logger = logging.getLogger(__name__)

BOUND_TOLERANCE = 1e-6
REPLAY_TOLERANCE = 1e-9


class AuditFinding(BaseModel):
    """One failed check."""
    resolution: int  # seconds
    step: int
    slot: Optional[int] = None
    check: str
    magnitude: float = 0.0


class AuditReport(BaseModel):
    """Outcome of auditing one run."""
    findings: List[AuditFinding] = Field(default_factory=list)
    checked_steps: int = 0
    checked_slots: int = 0

    @property
    def ok(self) -> bool:
        return not self.findings

    def checks(self) -> List[str]:
        return sorted({f.check for f in self.findings})

    def add(self, resolution: int, step: int, check: str, magnitude: float = 0.0, slot: Optional[int] = None) -> None:
        self.findings.append(
            AuditFinding(resolution=resolution, step=step, slot=slot, check=check, magnitude=float(magnitude))
        )


def _column(trajectories: pd.DataFrame, name: str) -> Optional[np.ndarray]:
    return trajectories[name].to_numpy(dtype=float) if name in trajectories else None


def audit_hourly(outcome: RunOutcome, scenario: ScenarioConfig, bundle: ProfileBundle) -> AuditReport:
    """Balance, bounds and dynamics of the committed hourly trajectory."""
    report = AuditReport()
    frame = outcome.trajectories
    x, y = outcome.x, outcome.y
    steps = x.size
    report.checked_steps = steps
    start = outcome.start_index
    y_min, y_max = outcome.binning.y_edges[0], outcome.binning.y_edges[-1]

    device_power = [
        (kind, frame[f"{kind}.s"].to_numpy(dtype=float)) for kind in ASSEMBLY_ORDER if kind in scenario.device_kinds
    ]
    for t in range(steps):
        s = 0.0
        for _, power in device_power:
            s += power[t]
        if y[t] != x[t] + s:
            report.add(3600, t, "y == x + s", abs(y[t] - (x[t] + s)))
        if y[t] < y_min - BOUND_TOLERANCE or y[t] > y_max + BOUND_TOLERANCE:
            report.add(3600, t, "y_min <= y <= y_max", max(y_min - y[t], y[t] - y_max))

    for kind, power in device_power:
        if kind == "ess":
            continue
        for t in np.flatnonzero(power < 0):
            report.add(3600, int(t), f"{kind}.s >= 0", -power[t])
    if scenario.ess is None:
        for t in np.flatnonzero(y < x):
            report.add(3600, int(t), "y >= x", x[t] - y[t])

    if scenario.ess is not None:
        _audit_ess(report, outcome, scenario)
    if scenario.ewh is not None:
        _audit_ewh(report, outcome, scenario, bundle, start)
    if scenario.erh is not None and not scenario.step_load:
        _audit_erh(report, outcome, scenario, bundle, start)
    return report


def _audit_ess(report: AuditReport, outcome: RunOutcome, scenario: ScenarioConfig) -> None:
    model = scenario.ess
    frame = outcome.trajectories
    pc, pd_, energy = _column(frame, "ess.pc"), _column(frame, "ess.pd"), _column(frame, "ess.energy")
    previous = outcome.initial_states["ess"]["energy"]
    dt = 1.0
    for t in range(pc.size):
        if pc[t] > 0 and pd_[t] > 0:
            report.add(3600, t, "ess.pc * ess.pd == 0", min(pc[t], pd_[t]))
        if pc[t] < -BOUND_TOLERANCE or pc[t] > model.charge_power_kw + BOUND_TOLERANCE:
            report.add(3600, t, "0 <= ess.pc <= P_c", max(-pc[t], pc[t] - model.charge_power_kw))
        if pd_[t] < -BOUND_TOLERANCE or pd_[t] > model.discharge_power_kw + BOUND_TOLERANCE:
            report.add(3600, t, "0 <= ess.pd <= P_d", max(-pd_[t], pd_[t] - model.discharge_power_kw))
        if energy[t] < -BOUND_TOLERANCE or energy[t] > model.capacity_kwh + BOUND_TOLERANCE:
            report.add(3600, t, "0 <= ess.energy <= E_max", max(-energy[t], energy[t] - model.capacity_kwh))
        expected = ess_step(model, previous, pc[t], pd_[t], dt)
        if abs(expected - energy[t]) > BOUND_TOLERANCE:
            report.add(3600, t, "ess.energy dynamics", abs(expected - energy[t]))
        previous = energy[t]
        if abs((pc[t] - pd_[t]) - frame["ess.s"].iloc[t]) > BOUND_TOLERANCE:
            report.add(3600, t, "ess.s == pc - pd", abs((pc[t] - pd_[t]) - frame["ess.s"].iloc[t]))


def _audit_ewh(
    report: AuditReport, outcome: RunOutcome, scenario: ScenarioConfig, bundle: ProfileBundle, start: int
) -> None:
    model = scenario.ewh
    frame = outcome.trajectories
    u_low, u_up = _column(frame, "ewh.u_low"), _column(frame, "ewh.u_up")
    t_low, t_up = _column(frame, "ewh.t_low"), _column(frame, "ewh.t_up")
    t_in = _column(frame, "erh.t_in")
    previous = outcome.initial_states["ewh"]
    previous_in = outcome.initial_states.get("erh", {}).get("t_in")
    for t in range(u_low.size):
        for name, duty in (("ewh.u_low", u_low[t]), ("ewh.u_up", u_up[t])):
            if duty < -BOUND_TOLERANCE or duty > 1 + BOUND_TOLERANCE:
                report.add(3600, t, f"0 <= {name} <= 1", max(-duty, duty - 1))
        if u_low[t] + u_up[t] > 1 + BOUND_TOLERANCE:
            report.add(3600, t, "ewh.u_low + ewh.u_up <= 1", u_low[t] + u_up[t] - 1)
        if t_up[t] > model.abs_max_temp + BOUND_TOLERANCE:
            report.add(3600, t, "ewh.t_up <= abs_max", t_up[t] - model.abs_max_temp)
        if t_up[t] < model.abs_min_temp - BOUND_TOLERANCE:
            report.add(3600, t, "ewh.t_up >= abs_min", model.abs_min_temp - t_up[t])
        if t_low[t] > t_up[t] + BOUND_TOLERANCE:
            report.add(3600, t, "ewh.t_low <= ewh.t_up", t_low[t] - t_up[t])

        if not scenario.step_load:
            t_air = previous_in if previous_in is not None else model.ambient_temp
            draw = float(bundle.hot_water_draw.values[start + t])
            result = ewh_step(model, previous["t_low"], previous["t_up"], t_air, draw, u_low[t], u_up[t], 3600)
            error = max(abs(result.t_low - t_low[t]), abs(result.t_up - t_up[t]))
            if error > BOUND_TOLERANCE:
                report.add(3600, t, "ewh dynamics", error)
        previous = {"t_low": t_low[t], "t_up": t_up[t]}
        if t_in is not None:
            previous_in = t_in[t]


def _audit_erh(
    report: AuditReport, outcome: RunOutcome, scenario: ScenarioConfig, bundle: ProfileBundle, start: int
) -> None:
    model = scenario.erh
    frame = outcome.trajectories
    duty, t_in = _column(frame, "erh.u"), _column(frame, "erh.t_in")
    previous = outcome.initial_states["erh"]["t_in"]
    for t in range(duty.size):
        if duty[t] < -BOUND_TOLERANCE or duty[t] > 1 + BOUND_TOLERANCE:
            report.add(3600, t, "0 <= erh.u <= 1", max(-duty[t], duty[t] - 1))
        irradiance = float(bundle.irradiance.values[start + t]) if bundle.irradiance is not None else 0.0
        expected = erh_step(model, previous, float(bundle.outdoor_temp.values[start + t]), irradiance, duty[t], 3600)
        if abs(expected - t_in[t]) > BOUND_TOLERANCE:
            report.add(3600, t, "erh dynamics", abs(expected - t_in[t]))
        previous = t_in[t]


def _hour_start_state(outcome: RunOutcome, hour: int) -> Dict[str, float]:
    if hour == 0:
        state: Dict[str, float] = {}
        for fields in outcome.initial_states.values():
            state.update(fields)
        return state
    row = outcome.trajectories.iloc[hour - 1]
    return {
        key: float(row[column])
        for key, column in (("t_low", "ewh.t_low"), ("t_up", "ewh.t_up"), ("t_in", "erh.t_in"))
        if column in row
    }


def audit_dispatch(outcome: RunOutcome, scenario: ScenarioConfig, bundle: ProfileBundle) -> AuditReport:
    """
    Replay the 5-minute statuses and re-derive where constraints forced a
    deviation. A slot must be flagged exactly when the element the hourly
    targets call for would breach a bound or the node ordering.
    """
    report = AuditReport()
    plan = outcome.dispatch
    if plan is None:
        return report
    ewh, erh = scenario.ewh, scenario.erh
    slots = plan.slots_per_hour
    slot_seconds = 3600 // slots
    flagged = {tuple(entry) for entry in plan.flagged_slots}
    violated = {(v.hour, v.slot) for v in plan.violations}
    detected: List[Tuple[int, int]] = []
    trace_position = 0

    for position, hour in enumerate(plan.hours):
        index = outcome.start_index + hour
        inputs = {
            key: fine_series(bundle, key, bundle.hourly(role), index) for key, role in FINE_ROLES.items()
        }
        draws = inputs["draws"] if inputs["draws"] is not None else np.zeros(slots)
        irradiance = inputs["irradiance"] if inputs["irradiance"] is not None else np.zeros(slots)
        state = _hour_start_state(outcome, hour)
        t_low, t_up, t_in = state.get("t_low"), state.get("t_up"), state.get("t_in")

        statuses = {element: plan.statuses[element][position] for element in plan.statuses}
        requested = {element: plan.requested_duty[element][position] for element in plan.statuses}
        remaining = slot_targets(requested, slots)
        hour_flagged = False

        for slot in range(slots):
            report.checked_slots += 1
            t_air = t_in if t_in is not None else (ewh.ambient_temp if ewh is not None else 0.0)
            if erh is not None:
                on = statuses[ERH_ELEMENT][slot]
                t_in = erh_step(erh, t_in, float(inputs["outdoor_temp"][slot]), float(irradiance[slot]), float(on), slot_seconds)
                if abs(t_in - plan.temperatures["erh.t_in"][trace_position + slot]) > REPLAY_TOLERANCE:
                    report.add(300, hour, "erh.t_in replay", slot=slot)
            if ewh is None:
                continue

            on_elements = [e for e in EWH_ELEMENTS if statuses[e][slot]]
            if len(on_elements) > 1:
                report.add(300, hour, "one EWH element per slot", slot=slot)
            scheduled = [e for e in EWH_ELEMENTS if remaining[e] > 0]
            preferred = scheduled[0] if scheduled else None
            probe = ewh_step(
                ewh, t_low, t_up, t_air, float(draws[slot]),
                float(preferred == "ewh.u_low"), float(preferred == "ewh.u_up"), slot_seconds,
            )
            _, impending = ewh_breach(ewh, probe.t_low, probe.t_up)
            if impending > BREACH_TOLERANCE:
                detected.append((hour, slot))
                hour_flagged = True
            for e in on_elements:
                remaining[e] = max(remaining[e] - 1, 0)

            result = ewh_step(
                ewh, t_low, t_up, t_air, float(draws[slot]),
                float(statuses["ewh.u_low"][slot]), float(statuses["ewh.u_up"][slot]), slot_seconds,
            )
            t_low, t_up = result.t_low, result.t_up
            if max(
                abs(t_low - plan.temperatures["ewh.t_low"][trace_position + slot]),
                abs(t_up - plan.temperatures["ewh.t_up"][trace_position + slot]),
            ) > REPLAY_TOLERANCE:
                report.add(300, hour, "ewh replay", slot=slot)
            bound, magnitude = ewh_breach(ewh, t_low, t_up)
            if magnitude > BREACH_TOLERANCE and (hour, slot) not in violated:
                report.add(300, hour, f"unreported {bound} breach", magnitude, slot=slot)

        trace_position += slots
        for element, on in statuses.items():
            deviation = abs(sum(on) / slots - requested[element])
            if not hour_flagged and deviation > 1.0 / slots + REPLAY_TOLERANCE:
                report.add(300, hour, f"{element} duty within one slot", deviation)

    if set(detected) != flagged:
        for hour, slot in sorted(set(detected) ^ flagged):
            report.add(300, hour, "flagged slots match impending breaches", slot=slot)
    return report


def audit_run(outcome: RunOutcome, scenario: ScenarioConfig, bundle: ProfileBundle) -> AuditReport:
    """Both resolutions; findings are logged as warnings."""
    hourly = audit_hourly(outcome, scenario, bundle)
    fine = audit_dispatch(outcome, scenario, bundle)
    report = AuditReport(
        findings=hourly.findings + fine.findings,
        checked_steps=hourly.checked_steps,
        checked_slots=fine.checked_slots,
    )
    if report.ok:
        logger.info(
            f"[Audit {outcome.report.name}] {report.checked_steps} steps and {report.checked_slots} slots clean"
        )
    else:
        logger.warning(
            f"[Audit {outcome.report.name}] {len(report.findings)} finding(s): {', '.join(report.checks())}"
        )
    return report
