"""Resistance space heater with a learned first-order indoor-temperature model."""

from typing import Dict, Optional, Sequence

import numpy as np

from ..exceptions import DeviceModelError
from ..models import ErhModel
from ..optimizer import ProgramBuilder
from .base import BaseDevice, Commitment, Controls, DeviceBlock, DeviceState, HorizonForecast, hinge


def erh_step(
    model: ErhModel,
    t_in: float,
    t_out: float,
    irradiance: float,
    duty: float,
    dt_seconds: float = 3600.0,
) -> float:
    """
    Indoor temperature after one step:
        T' = T + r (g1 (T_out - T) + g2 U P + g3 irr),  r = dt / 3600

    The coefficients were fitted on hourly data, so sub-hourly steps scale
    every increment by r.
    """
    inputs = (t_in, t_out, irradiance, duty, dt_seconds)
    if not all(np.isfinite(inputs)):
        raise DeviceModelError(f"Non-finite ERH input: {inputs}")
    r = dt_seconds / 3600.0
    return t_in + r * (
        model.gamma1 * (t_out - t_in)
        + model.gamma2 * duty * model.power_kw
        + model.gamma3 * irradiance
    )


def erh_steady_state(model: ErhModel, t_out: float, irradiance: float = 0.0, duty: float = 1.0) -> float:
    """Fixed point of erh_step for constant inputs."""
    if model.gamma1 <= 0:
        raise DeviceModelError("ERH steady state needs gamma1 > 0")
    return t_out + (model.gamma2 * duty * model.power_kw + model.gamma3 * irradiance) / model.gamma1


def erh_constraints(
    builder: ProgramBuilder,
    model: ErhModel,
    outdoor: Sequence[float],
    irradiance: Sequence[float],
    state: DeviceState,
    comfort: Optional[np.ndarray],
    dt_seconds: float = 3600.0,
) -> DeviceBlock:
    """
    Indoor dynamics, duty bounds and weighted comfort hinges on T_in[t+1].

    S_t = P U_t in kW.
    """
    horizon = len(outdoor)
    if len(irradiance) != horizon:
        raise DeviceModelError(f"Irradiance forecast has {len(irradiance)} steps, expected {horizon}")
    r = dt_seconds / 3600.0
    weight = model.comfort_weight
    t_in = builder.add_variables("erh.t_in", horizon + 1, -np.inf, np.inf)
    duty = builder.add_variables("erh.u", horizon, 0.0, 1.0)
    builder.add_equality([t_in[0]], [1.0], state.t_in)
    for t in range(horizon):
        builder.add_equality(
            [t_in[t + 1], t_in[t], duty[t]],
            [1.0, -(1.0 - r * model.gamma1), -r * model.gamma2 * model.power_kw],
            r * (model.gamma1 * float(outdoor[t]) + model.gamma3 * float(irradiance[t])),
        )
        if comfort is not None:
            builder.add_inequality(
                [t_in[t + 1], comfort[t]], [-weight, -1.0], -weight * (model.set_point - model.deadband)
            )
            builder.add_inequality(
                [t_in[t + 1], comfort[t]], [weight, -1.0], weight * (model.set_point + model.deadband)
            )
    return DeviceBlock(
        kind="erh",
        variables={"t_in": t_in, "u": duty},
        power=[(duty, model.power_kw)],
    )


class ErhDevice(BaseDevice):
    """Space heater: a flexible thermal load whose indoor temperature other devices may see."""

    kind = "erh"
    display_name = "Electric Resistance Heater"
    has_comfort = True

    def initial_state(self) -> DeviceState:
        return DeviceState(t_in=self.model.set_point)

    def comfort_slack(self, state: DeviceState) -> float:
        return hinge(state.t_in, self.model.set_point, self.model.deadband, self.model.comfort_weight)

    def add_constraints(
        self,
        builder: ProgramBuilder,
        forecast: HorizonForecast,
        state: DeviceState,
        comfort: Optional[np.ndarray],
        shared: Dict[str, np.ndarray],
    ) -> DeviceBlock:
        if forecast.outdoor_temp is None:
            raise DeviceModelError("ERH needs an outdoor temperature forecast")
        irradiance = forecast.irradiance if forecast.irradiance is not None else np.zeros(forecast.horizon)
        block = erh_constraints(
            builder, self.model, forecast.outdoor_temp, irradiance, state, comfort, forecast.step_seconds,
        )
        shared["t_in"] = block.variables["t_in"]
        return block

    def first_step(self, x: np.ndarray, block: DeviceBlock) -> Controls:
        duty = float(np.clip(x[block.variables["u"][0]], 0.0, 1.0))
        return {"u": duty if duty >= 1e-12 else 0.0}

    def shift_power(self, controls: Controls, delta_kw: float) -> Controls:
        duty = controls.get("u", 0.0) + delta_kw / self.model.power_kw
        return {"u": min(max(duty, 0.0), 1.0)}

    def settle(
        self,
        controls: Controls,
        state: DeviceState,
        forecast: HorizonForecast,
        shared_state: DeviceState,
        next_state: Optional[DeviceState] = None,
    ) -> Commitment:
        duty = controls.get("u", 0.0)
        if next_state is not None:
            t_in = next_state.t_in
        else:
            irradiance = float(forecast.irradiance[0]) if forecast.irradiance is not None else 0.0
            t_in = erh_step(
                self.model, state.t_in, float(forecast.outdoor_temp[0]), irradiance, duty, forecast.step_seconds
            )
        return Commitment(
            power_kw=self.model.power_kw * duty,
            decisions={"u": duty, "t_in": t_in},
            state=DeviceState(t_in=t_in),
        )
