"""Toolkit for a single-actuator, two-joint finger exoskeleton linkage.

Modules: ``geometry`` (parameters and loop closures), ``kinematics``
(pose solvers), ``differential`` (Jacobians and statics), ``linkopt``
(link-length search and sensitivity), ``controlsim`` (actuator control
simulation), ``rendering`` (haptic rendering strategies) and ``cli``.
"""

__version__ = "0.1.0"

from .errors import *  # noqa: F401,F403
from .geometry import (FingerPose, MeasuredState, MechanismGeometry, MechanismState, PassiveState,  # noqa: F401
                       load_geometry)
