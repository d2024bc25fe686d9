"""Base device class."""

from abc import ABC, abstractmethod
from typing import Any, Dict, List, Optional, Tuple

import numpy as np
from pydantic import BaseModel, ConfigDict, Field

from ..models import PrivacyCategory
from ..optimizer import ProgramBuilder


class DeviceState(BaseModel):
    """Physical state carried between control steps."""
    energy: Optional[float] = None   # ESS, kWh
    t_low: Optional[float] = None    # EWH lower node, °C
    t_up: Optional[float] = None     # EWH upper node, °C
    t_in: Optional[float] = None     # indoor air, °C


class HorizonForecast(BaseModel):
    """Inputs over the prediction horizon, one entry per control step."""
    model_config = ConfigDict(arbitrary_types_allowed=True)

    x: np.ndarray
    prices: np.ndarray            # objective currency per kWh
    draws: Optional[np.ndarray] = None       # litres per step
    outdoor_temp: Optional[np.ndarray] = None
    irradiance: Optional[np.ndarray] = None
    step_seconds: int = 3600
    fine: Dict[str, np.ndarray] = Field(default_factory=dict)  # first-hour series at the dispatch step

    @property
    def horizon(self) -> int:
        return self.x.size

    @property
    def step_hours(self) -> float:
        return self.step_seconds / 3600.0


class DeviceBlock(BaseModel):
    """Handles to one device's variables inside a ProgramBuilder."""
    model_config = ConfigDict(arbitrary_types_allowed=True)

    kind: str
    variables: Dict[str, np.ndarray] = Field(default_factory=dict)
    power: List[Tuple[np.ndarray, float]] = Field(default_factory=list)  # S_t = sum coef * x[idx[t]]
    binaries: Tuple[int, ...] = ()

    def power_values(self, x: np.ndarray) -> np.ndarray:
        total = np.zeros(self.power[0][0].size) if self.power else np.zeros(0)
        for indices, coefficient in self.power:
            total = total + coefficient * x[indices]
        return total

    def values(self, name: str, x: np.ndarray) -> np.ndarray:
        return x[self.variables[name]]


Controls = Dict[str, float]


class Commitment(BaseModel):
    """First-step decisions of one device and the state they lead to."""
    power_kw: float
    decisions: Dict[str, float] = Field(default_factory=dict)
    state: DeviceState
    warnings: List[str] = Field(default_factory=list)


def hinge(temperature: float, set_point: float, deadband: float, weight: float = 1.0) -> float:
    """Comfort slack implied by one temperature: weighted distance outside the band."""
    return max(
        0.0,
        weight * ((set_point - deadband) - temperature),
        weight * (temperature - (set_point + deadband)),
    )


class BaseDevice(ABC):
    """Base class for all controllable devices."""

    kind: str = "base"
    display_name: str = "Base Device"
    can_discharge: bool = False
    has_comfort: bool = False

    def __init__(self, model: Any):
        self.model = model

    @property
    def category(self) -> PrivacyCategory:
        return self.model.category

    @abstractmethod
    def initial_state(self) -> DeviceState:
        """State at the start of a run."""

    @abstractmethod
    def add_constraints(
        self,
        builder: ProgramBuilder,
        forecast: HorizonForecast,
        state: DeviceState,
        comfort: Optional[np.ndarray],
        shared: Dict[str, np.ndarray],
    ) -> DeviceBlock:
        """
        Add the device's variables and rows to `builder`.

        Args:
            builder: program under assembly
            forecast: horizon inputs
            state: current device state (fixes the first stored value)
            comfort: comfort slack variable indices, one per step, if any
            shared: variable blocks published by devices added earlier

        Returns:
            DeviceBlock with S-coupling terms
        """

    @abstractmethod
    def first_step(self, x: np.ndarray, block: DeviceBlock) -> Controls:
        """Controls of the first horizon step, cleaned of solver noise."""

    @abstractmethod
    def settle(
        self,
        controls: Controls,
        state: DeviceState,
        forecast: HorizonForecast,
        shared_state: DeviceState,
        next_state: Optional[DeviceState] = None,
    ) -> Commitment:
        """
        Apply `controls` for one step. Missing controls count as zero.

        `next_state` replaces the device's own step when the state comes
        from a finer simulation.
        """

    @abstractmethod
    def shift_power(self, controls: Controls, delta_kw: float) -> Controls:
        """Controls whose power differs from `controls` by `delta_kw` (as far as limits allow)."""

    def commit(
        self,
        x: np.ndarray,
        block: DeviceBlock,
        state: DeviceState,
        forecast: HorizonForecast,
        shared_state: DeviceState,
    ) -> Commitment:
        """Turn the solved first step into device decisions and the next state."""
        return self.settle(self.first_step(x, block), state, forecast, shared_state)

    def idle(self, state: DeviceState, forecast: HorizonForecast, shared_state: DeviceState) -> Commitment:
        """Zero-power commitment used when a step falls back to passthrough."""
        return self.settle({}, state, forecast, shared_state)

    def comfort_slack(self, state: DeviceState) -> float:
        """Comfort slack implied by a realized state; 0 for devices without comfort bands."""
        return 0.0

    def repair(
        self, x: np.ndarray, block: DeviceBlock, state: DeviceState, forecast: HorizonForecast
    ) -> Optional[np.ndarray]:
        """Integral candidate built from a fractional relaxation; None if not applicable."""
        return None
