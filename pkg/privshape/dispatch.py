"""Secondary controller: realizes hourly duty cycles as 5-minute on/off slots."""

import logging
from typing import Dict, List, Optional, Sequence, Tuple

import numpy as np

from .devices.erh import erh_step
from .devices.ewh import ewh_step
from .models import DispatchPlan, DispatchViolation, ErhModel, EwhModel

logger = logging.getLogger(__name__)

BREACH_TOLERANCE = 1e-6

# upper element first: it raises T_up before the lower node catches up
EWH_ELEMENTS = ("ewh.u_up", "ewh.u_low")
ERH_ELEMENT = "erh.u"


def slot_targets(duties: Dict[str, float], slots: int) -> Dict[str, int]:
    """On-slot counts nearest to each duty; the two EWH elements share one hour."""
    targets = {element: int(round(duty * slots)) for element, duty in duties.items()}
    if all(element in targets for element in EWH_ELEMENTS):
        first, second = EWH_ELEMENTS
        targets[second] = min(targets[second], slots - targets[first])
    return {element: min(max(count, 0), slots) for element, count in targets.items()}


def upsample(hourly: Sequence[float], slots: int, total: bool = False) -> np.ndarray:
    """Hourly values on the slot grid; `total` spreads per-hour totals (draw litres) evenly."""
    values = np.repeat(np.asarray(hourly, dtype=float), slots)
    return values / slots if total else values


def ewh_breach(model: EwhModel, t_low: float, t_up: float) -> Tuple[str, float]:
    """Largest bound or ordering breach of an EWH state, as (bound, magnitude)."""
    candidates = [
        ("t_up<=abs_max", t_up - model.abs_max_temp),
        ("t_up>=abs_min", model.abs_min_temp - t_up),
        ("t_low<=t_up", t_low - t_up),
    ]
    bound, magnitude = max(candidates, key=lambda item: item[1])
    return bound, max(magnitude, 0.0)


def dispatch_5min(
    duties: Dict[str, Sequence[float]],
    state: Dict[str, float],
    ewh: Optional[EwhModel] = None,
    erh: Optional[ErhModel] = None,
    draws: Optional[Sequence[float]] = None,
    outdoor_temp: Optional[Sequence[float]] = None,
    irradiance: Optional[Sequence[float]] = None,
    first_hour: int = 0,
    slot_seconds: int = 300,
) -> DispatchPlan:
    """
    Greedy front-loaded slot assignment.

    Each element is switched on in the earliest slots until its on-time
    reaches duty * slots. When the scheduled action would push the EWH past
    its absolute bounds or invert the node ordering in the next slot, the
    element is deferred (or the other element, or an early slot, is used)
    and the slot is flagged. A breach no action can avoid is recorded as a
    violation.

    Args:
        duties: element -> hourly duty ("ewh.u_low", "ewh.u_up", "erh.u")
        state: "t_low", "t_up", "t_in" at the start of the first hour
        draws: litres per slot
        outdoor_temp, irradiance: per slot
        first_hour: label of the first hour in the plan
    """
    slots = 3600 // slot_seconds
    hours = len(next(iter(duties.values()))) if duties else 0
    total_slots = hours * slots
    draws = np.zeros(total_slots) if draws is None else np.asarray(draws, dtype=float)
    outdoor = None if outdoor_temp is None else np.asarray(outdoor_temp, dtype=float)
    irr = np.zeros(total_slots) if irradiance is None else np.asarray(irradiance, dtype=float)
    for label, series in (("draws", draws), ("irradiance", irr), ("outdoor_temp", outdoor)):
        if series is not None and series.size < total_slots:
            raise ValueError(f"{label} cover {series.size} slots, {total_slots} needed")
    if erh is not None and outdoor is None:
        raise ValueError("ERH dispatch needs an outdoor temperature per slot")

    t_low, t_up, t_in = state.get("t_low"), state.get("t_up"), state.get("t_in")
    plan = DispatchPlan(slots_per_hour=slots, initial_state=dict(state))
    elements = [e for e in EWH_ELEMENTS if ewh is not None] + ([ERH_ELEMENT] if erh is not None else [])
    for element in elements:
        plan.statuses[element] = []
        plan.requested_duty[element] = []
        plan.achieved_duty[element] = []
    traces: Dict[str, List[float]] = {}

    for h in range(hours):
        hour = first_hour + h
        requested = {element: float(duties[element][h]) for element in elements}
        remaining = slot_targets(requested, slots)
        on: Dict[str, List[bool]] = {element: [] for element in elements}

        for slot in range(slots):
            idx = h * slots + slot
            t_air = t_in if t_in is not None else (ewh.ambient_temp if ewh is not None else 0.0)

            if erh is not None:
                erh_on = remaining[ERH_ELEMENT] > 0
                on[ERH_ELEMENT].append(erh_on)
                remaining[ERH_ELEMENT] -= int(erh_on)
                t_in = erh_step(erh, t_in, float(outdoor[idx]), float(irr[idx]), float(erh_on), slot_seconds)
                traces.setdefault("erh.t_in", []).append(t_in)

            if ewh is not None:
                def simulate(element: Optional[str]):
                    result = ewh_step(
                        ewh, t_low, t_up, t_air, float(draws[idx]),
                        1.0 if element == "ewh.u_low" else 0.0,
                        1.0 if element == "ewh.u_up" else 0.0,
                        slot_seconds,
                    )
                    bound, magnitude = ewh_breach(ewh, result.t_low, result.t_up)
                    return element, result, bound, magnitude

                scheduled = [e for e in EWH_ELEMENTS if remaining[e] > 0]
                preferred = simulate(scheduled[0] if scheduled else None)
                choice = preferred
                if preferred[3] > BREACH_TOLERANCE:
                    plan.flagged_slots.append((hour, slot))
                    # defer the scheduled element, then try the other or an early slot
                    options = [simulate(e) for e in scheduled[1:]] + [simulate(None)]
                    options += [simulate(e) for e in reversed(EWH_ELEMENTS) if e not in scheduled]
                    safe = [option for option in options if option[3] <= BREACH_TOLERANCE]
                    if safe:
                        choice = safe[0]
                    else:
                        choice = min([preferred] + options, key=lambda option: option[3])
                        plan.violations.append(
                            DispatchViolation(hour=hour, slot=slot, bound=choice[2], magnitude=choice[3])
                        )
                        logger.warning(
                            f"[Dispatch] hour {hour} slot {slot}: unavoidable {choice[2]} breach of {choice[3]:.4f} °C"
                        )
                element, result, _, _ = choice
                for e in EWH_ELEMENTS:
                    on[e].append(e == element)
                    if e == element and remaining[e] > 0:
                        remaining[e] -= 1
                t_low, t_up = result.t_low, result.t_up
                traces.setdefault("ewh.t_low", []).append(t_low)
                traces.setdefault("ewh.t_up", []).append(t_up)

        plan.hours.append(hour)
        for element in elements:
            plan.statuses[element].append(on[element])
            plan.requested_duty[element].append(requested[element])
            plan.achieved_duty[element].append(sum(on[element]) / slots)

    plan.temperatures = traces
    plan.final_state = {
        key: value for key, value in (("t_low", t_low), ("t_up", t_up), ("t_in", t_in)) if value is not None
    }
    if plan.flagged_slots:
        logger.debug(f"[Dispatch] {len(plan.flagged_slots)} constraint-forced slot(s) in hours {first_hour}..")
    return plan
