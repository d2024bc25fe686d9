"""Battery energy storage."""

from typing import Dict, Optional

import numpy as np

from ..exceptions import DeviceModelError
from ..models import EssModel
from ..optimizer import ProgramBuilder
from .base import BaseDevice, Commitment, Controls, DeviceBlock, DeviceState, HorizonForecast

ENERGY_TOLERANCE = 1e-6


def ess_step(model: EssModel, energy: float, charge_kw: float, discharge_kw: float, dt_hours: float) -> float:
    """Stored energy after one step: E + dt (eta_c P_c - k_d P_d)."""
    values = (energy, charge_kw, discharge_kw, dt_hours)
    if not all(np.isfinite(values)):
        raise DeviceModelError(f"Non-finite ESS input: {values}")
    return energy + dt_hours * (model.charge_efficiency * charge_kw - model.discharge_coefficient * discharge_kw)


def ess_constraints(
    builder: ProgramBuilder,
    model: EssModel,
    horizon: int,
    dt_hours: float,
    energy: float,
) -> DeviceBlock:
    """
    Charge/discharge gated by a binary per step, energy bounds and dynamics.

    S_t = P_c,t - P_d,t.
    """
    pc = builder.add_variables("ess.pc", horizon, 0.0, model.charge_power_kw)
    pd = builder.add_variables("ess.pd", horizon, 0.0, model.discharge_power_kw)
    gate = builder.add_variables("ess.b", horizon, 0.0, 1.0, binary=True)
    stored = builder.add_variables(
        "ess.energy", horizon + 1,
        lb=np.r_[-np.inf, np.zeros(horizon)],
        ub=np.r_[np.inf, np.full(horizon, model.capacity_kwh)],
    )
    builder.add_equality([stored[0]], [1.0], energy)
    for t in range(horizon):
        builder.add_inequality([pc[t], gate[t]], [1.0, -model.charge_power_kw], 0.0)
        builder.add_inequality([pd[t], gate[t]], [1.0, model.discharge_power_kw], model.discharge_power_kw)
        builder.add_equality(
            [stored[t + 1], stored[t], pc[t], pd[t]],
            [1.0, -1.0, -dt_hours * model.charge_efficiency, dt_hours * model.discharge_coefficient],
            0.0,
        )
    return DeviceBlock(
        kind="ess",
        variables={"pc": pc, "pd": pd, "b": gate, "energy": stored},
        power=[(pc, 1.0), (pd, -1.0)],
        binaries=tuple(gate.tolist()),
    )


class EssDevice(BaseDevice):
    """Battery that can both add to and subtract from the grid load."""

    kind = "ess"
    display_name = "Energy Storage System"
    can_discharge = True

    def initial_state(self) -> DeviceState:
        return DeviceState(energy=self.model.initial_energy)

    def add_constraints(
        self,
        builder: ProgramBuilder,
        forecast: HorizonForecast,
        state: DeviceState,
        comfort: Optional[np.ndarray],
        shared: Dict[str, np.ndarray],
    ) -> DeviceBlock:
        return ess_constraints(builder, self.model, forecast.horizon, forecast.step_hours, state.energy)

    def _net(self, net_kw: float) -> Controls:
        charge = min(max(net_kw, 0.0), self.model.charge_power_kw)
        discharge = min(max(-net_kw, 0.0), self.model.discharge_power_kw)
        # solver noise around an idle step
        if charge < 1e-12:
            charge = 0.0
        if discharge < 1e-12:
            discharge = 0.0
        return {"pc": charge, "pd": discharge}

    def first_step(self, x: np.ndarray, block: DeviceBlock) -> Controls:
        # complementary powers: keep only the net flow
        charge = float(np.clip(x[block.variables["pc"][0]], 0.0, self.model.charge_power_kw))
        discharge = float(np.clip(x[block.variables["pd"][0]], 0.0, self.model.discharge_power_kw))
        return self._net(charge - discharge)

    def shift_power(self, controls: Controls, delta_kw: float) -> Controls:
        return self._net(controls.get("pc", 0.0) - controls.get("pd", 0.0) + delta_kw)

    def settle(
        self,
        controls: Controls,
        state: DeviceState,
        forecast: HorizonForecast,
        shared_state: DeviceState,
        next_state: Optional[DeviceState] = None,
    ) -> Commitment:
        charge, discharge = controls.get("pc", 0.0), controls.get("pd", 0.0)
        if next_state is not None:
            new_energy = next_state.energy
        else:
            new_energy = ess_step(self.model, state.energy, charge, discharge, forecast.step_hours)
        warnings = []
        if new_energy < -ENERGY_TOLERANCE or new_energy > self.model.capacity_kwh + ENERGY_TOLERANCE:
            warnings.append(f"ESS energy {new_energy:.6f} kWh outside [0, {self.model.capacity_kwh}]")
        return Commitment(
            power_kw=charge - discharge,
            decisions={"pc": charge, "pd": discharge, "b": 1.0 if charge > 0 else 0.0, "energy": new_energy},
            state=DeviceState(energy=new_energy),
            warnings=warnings,
        )

    def repair(
        self,
        x: np.ndarray,
        block: DeviceBlock,
        state: DeviceState,
        forecast: HorizonForecast,
    ) -> Optional[np.ndarray]:
        """Replace simultaneous charge/discharge by the net flow and re-run the dynamics."""
        candidate = x.copy()
        pc, pd = block.variables["pc"], block.variables["pd"]
        gate, stored = block.variables["b"], block.variables["energy"]
        net = np.clip(x[pc], 0.0, None) - np.clip(x[pd], 0.0, None)
        candidate[pc] = np.clip(net, 0.0, self.model.charge_power_kw)
        candidate[pd] = np.clip(-net, 0.0, self.model.discharge_power_kw)
        candidate[gate] = (net > 0).astype(float)
        energy = state.energy
        candidate[stored[0]] = energy
        for t in range(forecast.horizon):
            energy = ess_step(self.model, energy, candidate[pc[t]], candidate[pd[t]], forecast.step_hours)
            candidate[stored[t + 1]] = energy
        return candidate
