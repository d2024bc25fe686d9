"""Pydantic models for privshape."""

from datetime import datetime, timedelta
from enum import Enum
from typing import Any, Dict, List, Literal, Optional, Tuple

import numpy as np
import pandas as pd
from pydantic import BaseModel, ConfigDict, Field, field_validator, model_validator

from .exceptions import DeviceModelError, ProfileError


class ProfileRole(str, Enum):
    """What a profile's values measure."""
    SENSITIVE = "sensitive"          # X, kW
    GRID = "grid"                    # Y, kW
    DEVICE = "device"                # S, kW
    THERMAL_DEMAND = "thermal_demand"  # D_th, kW
    IRRADIANCE = "irradiance"
    OUTDOOR_TEMP = "outdoor_temp"    # °C
    HOT_WATER_DRAW = "hot_water_draw"  # litres per step


POWER_ROLES = frozenset({
    ProfileRole.SENSITIVE,
    ProfileRole.GRID,
    ProfileRole.DEVICE,
    ProfileRole.THERMAL_DEMAND,
})


class PrivacyCategory(str, Enum):
    """How much a flexible load's own usage reveals about the household."""
    NOT_SENSITIVE = "not_sensitive"
    TIME_OF_USE_SENSITIVE = "time_of_use_sensitive"
    SENSITIVE = "sensitive"


class SolverStatus(str, Enum):
    """Outcome of a QP or MIQP solve."""
    OPTIMAL = "optimal"
    INFEASIBLE = "infeasible"
    ITERATION_LIMIT = "iteration-limit"
    NODE_LIMIT = "node-limit"


class TimeGrid(BaseModel):
    """Uniform time grid."""
    model_config = ConfigDict(frozen=True)

    start: datetime
    step_seconds: int = Field(gt=0)
    count: int = Field(ge=1)

    @field_validator("step_seconds")
    @classmethod
    def _step_aligns_with_hour(cls, value: int) -> int:
        if 3600 % value != 0 and value % 3600 != 0:
            raise ValueError(f"step_seconds={value} must divide 3600 or be a multiple of it")
        return value

    @property
    def step_hours(self) -> float:
        return self.step_seconds / 3600.0

    @property
    def end(self) -> datetime:
        """Timestamp one step past the last sample."""
        return self.start + timedelta(seconds=self.step_seconds * self.count)

    def timestamps(self) -> pd.DatetimeIndex:
        return pd.date_range(self.start, periods=self.count, freq=f"{self.step_seconds}s")

    def hours_of_day(self) -> np.ndarray:
        return self.timestamps().hour.to_numpy()

    def subgrid(self, offset: int, count: int) -> "TimeGrid":
        """Grid of `count` steps starting `offset` steps into this one."""
        if offset < 0 or count < 1 or offset + count > self.count:
            raise ProfileError(
                f"Sub-grid [{offset}, {offset + count}) outside grid of {self.count} steps"
            )
        return TimeGrid(
            start=self.start + timedelta(seconds=self.step_seconds * offset),
            step_seconds=self.step_seconds,
            count=count,
        )


class LoadProfile(BaseModel):
    """Timestamped series on a uniform grid. Values are read-only."""
    model_config = ConfigDict(frozen=True, arbitrary_types_allowed=True)

    grid: TimeGrid
    values: np.ndarray
    role: ProfileRole

    @field_validator("values", mode="before")
    @classmethod
    def _as_readonly_array(cls, value: Any) -> np.ndarray:
        array = np.array(value, dtype=float).reshape(-1)
        array.setflags(write=False)
        return array

    @model_validator(mode="after")
    def _check_values(self) -> "LoadProfile":
        if self.values.shape[0] != self.grid.count:
            raise ProfileError(
                f"{self.role.value} profile has {self.values.shape[0]} values for {self.grid.count} steps"
            )
        bad = np.flatnonzero(~np.isfinite(self.values))
        if bad.size:
            raise ProfileError(f"{self.role.value} profile has a non-finite value at step {bad[0]}")
        if self.role in (ProfileRole.SENSITIVE, ProfileRole.HOT_WATER_DRAW):
            negative = np.flatnonzero(self.values < 0)
            if negative.size:
                raise ProfileError(
                    f"{self.role.value} profile is negative at step {negative[0]} ({self.values[negative[0]]})"
                )
        return self

    def __len__(self) -> int:
        return self.grid.count

    def slice(self, offset: int, count: int) -> "LoadProfile":
        return LoadProfile(
            grid=self.grid.subgrid(offset, count),
            values=self.values[offset:offset + count],
            role=self.role,
        )

    def with_role(self, role: ProfileRole) -> "LoadProfile":
        return LoadProfile(grid=self.grid, values=self.values, role=role)

    def to_series(self) -> pd.Series:
        return pd.Series(self.values, index=self.grid.timestamps(), name=self.role.value)


class Tariff(BaseModel):
    """Two-tier time-of-use tariff, prices in cents/kWh."""
    model_config = ConfigDict(frozen=True, extra="forbid")

    peak_price: float = 24.6
    offpeak_price: float = 13.15
    peak_hours: Tuple[int, ...] = tuple(range(6, 22))

    @field_validator("peak_hours", mode="after")
    @classmethod
    def _normalize_hours(cls, value: Tuple[int, ...]) -> Tuple[int, ...]:
        hours = tuple(sorted(set(value)))
        if any(h < 0 or h > 23 for h in hours):
            raise ValueError("peak_hours must be within 0..23")
        return hours

    @model_validator(mode="after")
    def _check_prices(self) -> "Tariff":
        if not self.peak_price >= self.offpeak_price >= 0:
            raise ValueError("Tariff requires peak_price >= offpeak_price >= 0")
        return self

    def price_at_hour(self, hour: int) -> float:
        return self.peak_price if hour in self.peak_hours else self.offpeak_price

    def prices(self, grid: TimeGrid) -> np.ndarray:
        """Price per step of `grid`, cents/kWh."""
        peak = np.isin(grid.hours_of_day(), self.peak_hours)
        return np.where(peak, self.peak_price, self.offpeak_price).astype(float)


class BinningScheme(BaseModel):
    """Bin edges for X and Y. Bins are half-open, the last one closed."""
    model_config = ConfigDict(frozen=True)

    x_edges: Tuple[float, ...]
    y_edges: Tuple[float, ...]

    @field_validator("x_edges", "y_edges")
    @classmethod
    def _ascending(cls, value: Tuple[float, ...]) -> Tuple[float, ...]:
        if len(value) < 2:
            raise ValueError("a binning axis needs at least two edges")
        if any(b <= a for a, b in zip(value, value[1:])):
            raise ValueError("bin edges must be strictly ascending")
        return value

    @property
    def m(self) -> int:
        return len(self.x_edges) - 1

    @property
    def n(self) -> int:
        return len(self.y_edges) - 1

    def edges(self, axis: str) -> np.ndarray:
        if axis == "x":
            return np.asarray(self.x_edges)
        if axis == "y":
            return np.asarray(self.y_edges)
        raise ValueError(f"Unknown binning axis: {axis}")

    @classmethod
    def uniform(
        cls, x_max: float, m: int = 24, y_min: float = 0.0, y_max: float = 12.0, n: int = 24
    ) -> "BinningScheme":
        if x_max <= 0:
            raise ProfileError(f"Cannot bin X over [0, {x_max}]")
        return cls(
            x_edges=tuple(np.linspace(0.0, x_max, m + 1).tolist()),
            y_edges=tuple(np.linspace(y_min, y_max, n + 1).tolist()),
        )


class BinningConfig(BaseModel):
    """
    Scenario-level binning request. X's upper edge defaults to the maximum
    of the whole profile handed to `resolve`, so every step maps to a bin.
    """
    model_config = ConfigDict(frozen=True, extra="forbid")

    x_bins: int = Field(default=24, ge=1)
    y_bins: int = Field(default=24, ge=1)
    y_min: float = 0.0
    y_max: float = 12.0
    x_max: Optional[float] = None

    def resolve(self, x_values: np.ndarray) -> BinningScheme:
        x_max = self.x_max if self.x_max is not None else float(np.max(x_values))
        return BinningScheme.uniform(x_max, self.x_bins, self.y_min, self.y_max, self.y_bins)


class EssModel(BaseModel):
    """Battery parameters."""
    model_config = ConfigDict(frozen=True, extra="forbid")

    kind: Literal["ess"] = "ess"
    category: PrivacyCategory = PrivacyCategory.NOT_SENSITIVE
    capacity_kwh: float = Field(default=6.29, ge=0)
    charge_power_kw: float = Field(default=5.5, ge=0)
    discharge_power_kw: float = Field(default=5.5, ge=0)
    charge_efficiency: float = Field(default=0.96, gt=0, le=1)
    discharge_efficiency: float = Field(default=0.96, gt=0, le=1)
    initial_soc: float = Field(default=0.5, ge=0, le=1)
    # multiply: stored energy falls by eta_d * P_d; divide: by P_d / eta_d
    discharge_convention: Literal["multiply", "divide"] = "multiply"

    @property
    def initial_energy(self) -> float:
        return self.initial_soc * self.capacity_kwh

    @property
    def round_trip_loss(self) -> float:
        return 1.0 - self.charge_efficiency * self.discharge_efficiency

    @property
    def discharge_coefficient(self) -> float:
        """Stored-energy decrement per kWh discharged."""
        if self.discharge_convention == "divide":
            return 1.0 / self.discharge_efficiency
        return self.discharge_efficiency


class EwhModel(BaseModel):
    """Two-node electric water heater parameters."""
    model_config = ConfigDict(frozen=True, extra="forbid")

    kind: Literal["ewh"] = "ewh"
    category: PrivacyCategory = PrivacyCategory.NOT_SENSITIVE
    equivalent_storage_kwh: float = 6.29
    power_kw: float = Field(default=5.5, ge=0)
    capacitance_low: float = Field(default=356.15, gt=0)  # kJ/K
    capacitance_up: float = Field(default=356.15, gt=0)   # kJ/K
    ua_low: float = Field(default=5.82e-4, ge=0)          # kW/K
    ua_up: float = Field(default=5.82e-4, ge=0)           # kW/K
    water_heat_capacity: float = Field(default=4.19, gt=0)  # kJ/(litre K)
    mains_temp: float = 10.0
    set_point: float = 75.0
    abs_min_temp: float = 50.0
    abs_max_temp: float = 90.0
    deadband: float = Field(default=1.0, ge=0)
    ambient_temp: float = 20.0  # indoor air when no space heater is modelled
    upper_node_base: Literal["low", "up"] = "low"

    @model_validator(mode="after")
    def _check_bounds(self) -> "EwhModel":
        if self.abs_min_temp > self.abs_max_temp:
            raise DeviceModelError(
                f"EWH abs_min_temp {self.abs_min_temp} exceeds abs_max_temp {self.abs_max_temp}"
            )
        return self

    @property
    def node_volume_litres(self) -> float:
        return self.capacitance_low / self.water_heat_capacity

    @property
    def volume_litres(self) -> float:
        return (self.capacitance_low + self.capacitance_up) / self.water_heat_capacity

    def with_volume(self, litres: float) -> "EwhModel":
        """Same heater with a tank of `litres`, split evenly between the nodes."""
        node_capacitance = litres / 2.0 * self.water_heat_capacity
        return self.model_copy(update={
            "capacitance_low": node_capacitance,
            "capacitance_up": node_capacitance,
        })


class ErhModel(BaseModel):
    """Resistance space heater with a learned first-order indoor model."""
    model_config = ConfigDict(frozen=True, extra="forbid")

    kind: Literal["erh"] = "erh"
    category: PrivacyCategory = PrivacyCategory.NOT_SENSITIVE
    equivalent_storage_kwh: float = 32.63
    power_kw: float = Field(default=4.5, ge=0)
    gamma1: float = 1.50e-2
    gamma2: float = 1.86e-1
    gamma3: float = 3.45e-1
    set_point: float = 22.0
    deadband: float = Field(default=1.0, ge=0)
    comfort_weight: float = Field(default=10.0, ge=0)


class InputPaths(BaseModel):
    """CSV inputs; a missing sensitive path means a synthetic profile is generated."""
    model_config = ConfigDict(frozen=True, extra="forbid")

    sensitive: Optional[str] = None
    hot_water_draw: Optional[str] = None
    outdoor_temp: Optional[str] = None
    irradiance: Optional[str] = None


class ScenarioConfig(BaseModel):
    """One experiment: devices, tariff, weights and inputs."""
    model_config = ConfigDict(frozen=True, extra="forbid")

    name: str = "scenario"
    horizon: int = Field(default=24, ge=2)  # W+1
    mu: float = Field(default=0.0, ge=0)
    rho: float = Field(default=10.0, ge=0)
    include_energy_cost: bool = True
    cost_scale: float = Field(default=0.01, gt=0)  # cents -> objective currency
    history_window: int = Field(default=168, ge=1)
    smoothing: float = Field(default=0.0583, gt=0)
    score_smoothing: float = Field(default=0.0, ge=0)
    link_gap: float = Field(default=1e-6, ge=0)
    seed: int = 23618
    days: int = Field(default=30, ge=1)
    archetype: str = "house-23618-like"
    step_load: bool = False
    forecast_noise_std: float = Field(default=0.0, ge=0)
    node_limit: int = Field(default=64, ge=1)

    tariff: Tariff = Field(default_factory=Tariff)
    binning: BinningConfig = Field(default_factory=BinningConfig)
    inputs: InputPaths = Field(default_factory=InputPaths)

    ess: Optional[EssModel] = None
    ewh: Optional[EwhModel] = None
    erh: Optional[ErhModel] = None

    @property
    def devices(self) -> List[BaseModel]:
        return [d for d in (self.ess, self.ewh, self.erh) if d is not None]

    @property
    def device_kinds(self) -> Tuple[str, ...]:
        return tuple(d.kind for d in self.devices)

    @property
    def has_ftl(self) -> bool:
        return self.ewh is not None or self.erh is not None

    @property
    def system_label(self) -> str:
        kinds = self.device_kinds
        return "+".join(k.upper() for k in kinds) if kinds else "None"


class MiReport(BaseModel):
    """Offline privacy scores of one (x, y) pair."""
    iid_mi: float
    markov_mi: float
    entropy_x: float
    sample_count: int


class ObjectiveBreakdown(BaseModel):
    """Terms of the horizon objective at the solved plan."""
    cost_term: float = 0.0
    privacy_term: float = 0.0
    comfort_term: float = 0.0

    @property
    def total(self) -> float:
        return self.cost_term + self.privacy_term + self.comfort_term


class ControlStepResult(BaseModel):
    """Committed first-step decisions of one receding-horizon solve."""
    model_config = ConfigDict(arbitrary_types_allowed=True)

    step: int
    x: float
    s: float = 0.0  # total device power, kW
    y: float
    device_power: Dict[str, float] = Field(default_factory=dict)  # kind -> S, kW
    decisions: Dict[str, float] = Field(default_factory=dict)
    comfort_slack: float = 0.0
    plan: Dict[str, List[float]] = Field(default_factory=dict)
    breakdown: ObjectiveBreakdown = Field(default_factory=ObjectiveBreakdown)
    status: SolverStatus = SolverStatus.OPTIMAL
    gap: float = 0.0
    nodes: int = 0
    iterations: int = 0
    projection_magnitude: float = 0.0
    fallback: bool = False
    next_state: Dict[str, Dict[str, float]] = Field(default_factory=dict)  # kind -> state fields
    warnings: List[str] = Field(default_factory=list)


class DispatchViolation(BaseModel):
    """Bound breach the 5-minute dispatcher could not avoid."""
    hour: int
    slot: int
    bound: str
    magnitude: float


class DispatchPlan(BaseModel):
    """5-minute on/off schedule realizing hourly duties."""
    slots_per_hour: int = 12
    hours: List[int] = Field(default_factory=list)
    statuses: Dict[str, List[List[bool]]] = Field(default_factory=dict)  # element -> hour -> slots
    requested_duty: Dict[str, List[float]] = Field(default_factory=dict)
    achieved_duty: Dict[str, List[float]] = Field(default_factory=dict)
    flagged_slots: List[Tuple[int, int]] = Field(default_factory=list)  # (hour, slot)
    violations: List[DispatchViolation] = Field(default_factory=list)
    temperatures: Dict[str, List[float]] = Field(default_factory=dict)  # value after each slot
    initial_state: Dict[str, float] = Field(default_factory=dict)
    final_state: Dict[str, float] = Field(default_factory=dict)

    def deviation_count(self) -> int:
        return len(self.flagged_slots)

    def extend(self, other: "DispatchPlan") -> None:
        """Append the hours of a later plan."""
        if not self.hours:
            self.initial_state = dict(other.initial_state)
        self.hours.extend(other.hours)
        for target, source in (
            (self.statuses, other.statuses),
            (self.requested_duty, other.requested_duty),
            (self.achieved_duty, other.achieved_duty),
            (self.temperatures, other.temperatures),
        ):
            for key, values in source.items():
                target.setdefault(key, []).extend(values)
        self.flagged_slots.extend(other.flagged_slots)
        self.violations.extend(other.violations)
        self.final_state = dict(other.final_state)


class ProfileBundle(BaseModel):
    """
    Aligned hourly inputs of one household, plus optional 300 s companions
    for the dispatch layer. Companions share the sensitive profile's grid.
    """
    model_config = ConfigDict(frozen=True, arbitrary_types_allowed=True)

    sensitive: LoadProfile
    hot_water_draw: Optional[LoadProfile] = None
    outdoor_temp: Optional[LoadProfile] = None
    irradiance: Optional[LoadProfile] = None
    fine: Dict[ProfileRole, LoadProfile] = Field(default_factory=dict)

    @model_validator(mode="after")
    def _check_alignment(self) -> "ProfileBundle":
        grid = self.sensitive.grid
        for profile in (self.hot_water_draw, self.outdoor_temp, self.irradiance):
            if profile is not None and profile.grid != grid:
                raise ProfileError(f"{profile.role.value} profile is not aligned with the sensitive load")
        for role, profile in self.fine.items():
            if profile.grid.start != grid.start or profile.grid.end != grid.end:
                raise ProfileError(f"300 s {role.value} profile does not span the hourly grid")
        return self

    @property
    def grid(self) -> TimeGrid:
        return self.sensitive.grid

    def hourly(self, role: ProfileRole) -> Optional[LoadProfile]:
        return {
            ProfileRole.SENSITIVE: self.sensitive,
            ProfileRole.HOT_WATER_DRAW: self.hot_water_draw,
            ProfileRole.OUTDOOR_TEMP: self.outdoor_temp,
            ProfileRole.IRRADIANCE: self.irradiance,
        }.get(role)


class RunReport(BaseModel):
    """Summary row of one receding-horizon run."""
    name: str
    system: str
    mu: float
    include_energy_cost: bool
    step_load: bool = False
    archetype: str = ""
    steps: int = 0
    days: float = 0.0
    iid_mi: float = 0.0
    markov_mi: float = 0.0
    entropy_x: float = 0.0
    total_cost_cents: float = 0.0
    average_daily_cost_cents: float = 0.0
    cost_delta_pct: Optional[float] = None
    is_baseline: bool = False
    comfort_violation_count: int = 0
    comfort_violation_max: float = 0.0
    solver_failures: int = 0
    mean_iterations: float = 0.0
    max_gap: float = 0.0
    total_nodes: int = 0
    projection_magnitude: float = 0.0
    equivalent_storage_kwh: float = 0.0
    dispatch_deviations: int = 0
    dispatch_violations: int = 0
    categories: Dict[str, str] = Field(default_factory=dict)
