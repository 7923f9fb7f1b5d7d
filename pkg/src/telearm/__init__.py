"""Two-location teleoperation and learning-from-demonstration for a 6-DOF arm."""

from . import calibration, dmp, evaluation, gateway, host, kinematics, planner, protocol

__all__ = [
    "calibration",
    "dmp",
    "evaluation",
    "gateway",
    "host",
    "kinematics",
    "planner",
    "protocol",
]
