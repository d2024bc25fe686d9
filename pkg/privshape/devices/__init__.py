"""Controllable devices package."""

from typing import List

from pydantic import BaseModel

from .base import BaseDevice, Commitment, Controls, DeviceBlock, DeviceState, HorizonForecast, hinge
from .erh import ErhDevice, erh_constraints, erh_steady_state, erh_step
from .ess import EssDevice, ess_constraints, ess_step
from .ewh import EwhDevice, ewh_coefficients, ewh_comfort_slack, ewh_constraints, ewh_step

# Registry of all device kinds
ALL_DEVICES = {
    "ess": EssDevice,
    "ewh": EwhDevice,
    "erh": ErhDevice,
}

# ERH publishes its indoor temperature for the EWH, so it is assembled first
ASSEMBLY_ORDER = ("ess", "erh", "ewh")


def build_devices(models: List[BaseModel]) -> List[BaseDevice]:
    """Device instances for the given parameter models, in assembly order."""
    by_kind = {model.kind: model for model in models}
    return [ALL_DEVICES[kind](by_kind[kind]) for kind in ASSEMBLY_ORDER if kind in by_kind]


__all__ = [
    "ALL_DEVICES",
    "ASSEMBLY_ORDER",
    "BaseDevice",
    "Commitment",
    "Controls",
    "DeviceBlock",
    "DeviceState",
    "ErhDevice",
    "EssDevice",
    "EwhDevice",
    "HorizonForecast",
    "build_devices",
    "erh_constraints",
    "erh_steady_state",
    "erh_step",
    "ess_constraints",
    "ess_step",
    "ewh_coefficients",
    "ewh_comfort_slack",
    "ewh_constraints",
    "ewh_step",
    "hinge",
]
