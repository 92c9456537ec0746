"""Locomotion environments: shared pipeline plus point-mass and planar biped."""

from .base import (
    CONTROL_DT,
    SIM_DT,
    CompositionError,
    LocomotionEnv,
    ObservationLayout,
    ReferenceFrame,
    RobotConfig,
    SimulationFault,
    StepResult,
    compose_observation,
    pd_torque,
    update_reference_frame,
)
from .biped import BipedEnv
from .pointmass import PointMassEnv

ENVIRONMENTS = {"pointmass": PointMassEnv, "biped": BipedEnv}


def make_env(name: str, **kwargs) -> LocomotionEnv:
    if name not in ENVIRONMENTS:
        raise ValueError(f"unknown environment {name!r}; choose from {sorted(ENVIRONMENTS)}")
    return ENVIRONMENTS[name](**kwargs)


__all__ = [
    "CONTROL_DT", "SIM_DT", "CompositionError", "LocomotionEnv", "ObservationLayout",
    "ReferenceFrame", "RobotConfig", "SimulationFault", "StepResult", "compose_observation",
    "pd_torque", "update_reference_frame", "BipedEnv", "PointMassEnv", "ENVIRONMENTS", "make_env",
]
