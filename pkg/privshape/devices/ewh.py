"""Two-node electric water heater."""

import logging
from typing import Dict, Optional, Sequence, Union

import numpy as np
from pydantic import BaseModel

from ..exceptions import DeviceModelError
from ..models import EwhModel
from ..optimizer import ProgramBuilder
from .base import BaseDevice, Commitment, Controls, DeviceBlock, DeviceState, HorizonForecast

logger = logging.getLogger(__name__)

ORDER_TOLERANCE = 1e-9


class EwhCoefficients(BaseModel):
    """
    One step of the node equations as an affine map:
        T_low' = low_low T_low + low_air T_air + low_u U_low + low_0
        T_up'  = up_low T_low + up_up T_up + up_air T_air + up_u U_up
    """
    low_low: float
    low_air: float
    low_u: float
    low_0: float
    up_low: float
    up_up: float
    up_air: float
    up_u: float


class EwhStepResult(BaseModel):
    t_low: float
    t_up: float
    clamped: bool = False
    ordering_violated: bool = False
    draw_clipped: bool = False


def clip_draw(model: EwhModel, draw_litres: float) -> float:
    """Draws beyond one node's volume per step are clipped."""
    if draw_litres > model.node_volume_litres:
        logger.warning(
            f"Hot-water draw {draw_litres:.1f} L exceeds node volume {model.node_volume_litres:.1f} L; clipped"
        )
        return model.node_volume_litres
    return draw_litres


def ewh_coefficients(model: EwhModel, draw_litres: float, dt_seconds: float) -> EwhCoefficients:
    """
    Node-equation coefficients for a step with a given (already clipped) draw.

    `draw_litres` is the volume drawn during this step, not a rate, so the
    mixing term carries no dt factor; sub-hourly draws are the per-slot
    volumes that sum to the hourly draw.
    """
    cp = model.water_heat_capacity
    loss_low = dt_seconds * model.ua_low / model.capacitance_low
    loss_up = dt_seconds * model.ua_up / model.capacitance_up
    mix_low = draw_litres * cp / model.capacitance_low
    mix_up = draw_litres * cp / model.capacitance_up
    upper_from_low = model.upper_node_base == "low"
    return EwhCoefficients(
        low_low=1.0 - loss_low - mix_low,
        low_air=loss_low,
        low_u=dt_seconds * model.power_kw / model.capacitance_low,
        low_0=mix_low * model.mains_temp,
        up_low=(1.0 if upper_from_low else 0.0) + mix_up,
        up_up=(0.0 if upper_from_low else 1.0) - loss_up - mix_up,
        up_air=loss_up,
        up_u=dt_seconds * model.power_kw / model.capacitance_up,
    )


def ewh_step(
    model: EwhModel,
    t_low: float,
    t_up: float,
    t_air: float,
    draw_litres: float,
    u_low: float,
    u_up: float,
    dt_seconds: float,
    clamp: bool = False,
) -> EwhStepResult:
    """
    Advance both nodes one step.

    With clamp=True (simulation) temperatures are held within
    [mains_temp, abs_max_temp] and the clamp is reported; the ordering
    T_low <= T_up is reported, never enforced.
    """
    inputs = (t_low, t_up, t_air, draw_litres, u_low, u_up, dt_seconds)
    if not all(np.isfinite(inputs)):
        raise DeviceModelError(f"Non-finite EWH input: {inputs}")
    if draw_litres < 0:
        raise DeviceModelError(f"Negative hot-water draw {draw_litres}")
    draw = clip_draw(model, draw_litres)
    k = ewh_coefficients(model, draw, dt_seconds)
    new_low = k.low_low * t_low + k.low_air * t_air + k.low_u * u_low + k.low_0
    new_up = k.up_low * t_low + k.up_up * t_up + k.up_air * t_air + k.up_u * u_up

    clamped = False
    if clamp:
        low_c = min(max(new_low, model.mains_temp), model.abs_max_temp)
        up_c = min(max(new_up, model.mains_temp), model.abs_max_temp)
        clamped = (low_c, up_c) != (new_low, new_up)
        new_low, new_up = low_c, up_c
    return EwhStepResult(
        t_low=new_low,
        t_up=new_up,
        clamped=clamped,
        ordering_violated=new_low > new_up + ORDER_TOLERANCE,
        draw_clipped=draw != draw_litres,
    )


def ewh_constraints(
    builder: ProgramBuilder,
    model: EwhModel,
    draws: Sequence[float],
    indoor: Union[Sequence[float], np.ndarray],
    state: DeviceState,
    comfort: Optional[np.ndarray],
    dt_seconds: float,
    indoor_is_variable: bool = False,
) -> DeviceBlock:
    """
    Node dynamics, T_up bounds, node ordering, duty limits and comfort hinges.

    `indoor` is either a forecast (°C per step) or, with
    indoor_is_variable=True, indices of indoor-temperature variables.
    S_t = P (U_low + U_up) in kW.
    """
    if model.abs_min_temp > model.abs_max_temp:
        raise DeviceModelError("EWH abs_min_temp exceeds abs_max_temp")
    horizon = len(draws)
    t_low = builder.add_variables("ewh.t_low", horizon + 1, -np.inf, np.inf)
    t_up = builder.add_variables(
        "ewh.t_up", horizon + 1,
        lb=np.r_[-np.inf, np.full(horizon, model.abs_min_temp)],
        ub=np.r_[np.inf, np.full(horizon, model.abs_max_temp)],
    )
    u_low = builder.add_variables("ewh.u_low", horizon, 0.0, 1.0)
    u_up = builder.add_variables("ewh.u_up", horizon, 0.0, 1.0)
    builder.add_equality([t_low[0]], [1.0], state.t_low)
    builder.add_equality([t_up[0]], [1.0], state.t_up)

    for t in range(horizon):
        k = ewh_coefficients(model, clip_draw(model, float(draws[t])), dt_seconds)
        if indoor_is_variable:
            air_cols, air_rhs_low, air_rhs_up = [int(indoor[t])], 0.0, 0.0
        else:
            air_cols, air_rhs_low, air_rhs_up = [], k.low_air * float(indoor[t]), k.up_air * float(indoor[t])
        builder.add_equality(
            [t_low[t + 1], t_low[t], u_low[t]] + air_cols,
            [1.0, -k.low_low, -k.low_u] + ([-k.low_air] if air_cols else []),
            k.low_0 + air_rhs_low,
        )
        builder.add_equality(
            [t_up[t + 1], t_low[t], t_up[t], u_up[t]] + air_cols,
            [1.0, -k.up_low, -k.up_up, -k.up_u] + ([-k.up_air] if air_cols else []),
            air_rhs_up,
        )
        builder.add_inequality([t_low[t + 1], t_up[t + 1]], [1.0, -1.0], 0.0)
        builder.add_inequality([u_low[t], u_up[t]], [1.0, 1.0], 1.0)
        if comfort is not None:
            builder.add_inequality([t_low[t + 1], comfort[t]], [-1.0, -1.0], -(model.set_point - model.deadband))
            builder.add_inequality([t_up[t + 1], comfort[t]], [1.0, -1.0], model.set_point + model.deadband)

    return DeviceBlock(
        kind="ewh",
        variables={"t_low": t_low, "t_up": t_up, "u_low": u_low, "u_up": u_up},
        power=[(u_low, model.power_kw), (u_up, model.power_kw)],
    )


def ewh_comfort_slack(model: EwhModel, t_low: float, t_up: float) -> float:
    """Slack implied by the lower-node (too cold) and upper-node (too hot) hinges."""
    return max(
        0.0,
        (model.set_point - model.deadband) - t_low,
        t_up - (model.set_point + model.deadband),
    )


class EwhDevice(BaseDevice):
    """Water heater: a flexible thermal load that can only add to the grid load."""

    kind = "ewh"
    display_name = "Electric Water Heater"
    has_comfort = True

    def initial_state(self) -> DeviceState:
        return DeviceState(t_low=self.model.set_point, t_up=self.model.set_point)

    def comfort_slack(self, state: DeviceState) -> float:
        return ewh_comfort_slack(self.model, state.t_low, state.t_up)

    def indoor_forecast(self, forecast: HorizonForecast) -> np.ndarray:
        return np.full(forecast.horizon, self.model.ambient_temp)

    def add_constraints(
        self,
        builder: ProgramBuilder,
        forecast: HorizonForecast,
        state: DeviceState,
        comfort: Optional[np.ndarray],
        shared: Dict[str, np.ndarray],
    ) -> DeviceBlock:
        draws = forecast.draws if forecast.draws is not None else np.zeros(forecast.horizon)
        if "t_in" in shared:
            return ewh_constraints(
                builder, self.model, draws, shared["t_in"][:-1], state, comfort,
                forecast.step_seconds, indoor_is_variable=True,
            )
        return ewh_constraints(
            builder, self.model, draws, self.indoor_forecast(forecast), state, comfort, forecast.step_seconds,
        )

    @staticmethod
    def _duties(u_low: float, u_up: float) -> Controls:
        u_low = min(max(u_low, 0.0), 1.0)
        u_up = min(max(u_up, 0.0), 1.0)
        total = u_low + u_up
        if total > 1.0:
            u_low, u_up = u_low / total, u_up / total
        return {"u_low": u_low if u_low >= 1e-12 else 0.0, "u_up": u_up if u_up >= 1e-12 else 0.0}

    def first_step(self, x: np.ndarray, block: DeviceBlock) -> Controls:
        return self._duties(float(x[block.variables["u_low"][0]]), float(x[block.variables["u_up"][0]]))

    def shift_power(self, controls: Controls, delta_kw: float) -> Controls:
        u_low, u_up = controls.get("u_low", 0.0), controls.get("u_up", 0.0)
        total = u_low + u_up
        target = total + delta_kw / self.model.power_kw
        if total <= 0.0:
            return self._duties(target, 0.0)
        factor = max(target, 0.0) / total
        return self._duties(u_low * factor, u_up * factor)

    def settle(
        self,
        controls: Controls,
        state: DeviceState,
        forecast: HorizonForecast,
        shared_state: DeviceState,
        next_state: Optional[DeviceState] = None,
    ) -> Commitment:
        u_low, u_up = controls.get("u_low", 0.0), controls.get("u_up", 0.0)
        warnings = []
        if next_state is not None:
            t_low, t_up = next_state.t_low, next_state.t_up
        else:
            t_air = shared_state.t_in if shared_state.t_in is not None else self.model.ambient_temp
            draw = float(forecast.draws[0]) if forecast.draws is not None else 0.0
            result = ewh_step(self.model, state.t_low, state.t_up, t_air, draw, u_low, u_up, forecast.step_seconds)
            t_low, t_up = result.t_low, result.t_up
        if t_low > t_up + ORDER_TOLERANCE:
            warnings.append(f"EWH node ordering violated ({t_low:.4f} > {t_up:.4f})")
        return Commitment(
            power_kw=self.model.power_kw * (u_low + u_up),
            decisions={"u_low": u_low, "u_up": u_up, "t_low": t_low, "t_up": t_up},
            state=DeviceState(t_low=t_low, t_up=t_up),
            warnings=warnings,
        )
