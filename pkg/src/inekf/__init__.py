"""Contact-aided invariant extended Kalman filtering for legged robots.

The filter state lives on SE_K(3): orientation, velocity, position and the
world positions of the feet in contact (or of landmarks).  Submodules:

``liegroup``      SO(3) and SE_K(3) primitives
``state``         filter belief and error-frame switching
``dynamics``      IMU propagation and transition matrices
``correction``    invariant measurement updates
``contacts``      contact and landmark augmentation / marginalization
``kinematics``    leg forward kinematics
``qekf``          quaternion EKF baseline
``sim``           synthetic walks and Monte Carlo driver
``analysis``      error conversions and metrics
``filters``       record-stream filter runners
``cli``           command-line harness
"""

from .filters import FILTER_KINDS, FilterSettings, InvariantFilter, QekfFilter, make_filter
from .liegroup import SEK3, adjoint, compose, exp_sek3, gamma, inverse, log_sek3, skew
from .sim import TrajectorySpec, generate

__version__ = "0.1.0"

__all__ = [
    "FILTER_KINDS",
    "FilterSettings",
    "InvariantFilter",
    "QekfFilter",
    "make_filter",
    "SEK3",
    "adjoint",
    "compose",
    "exp_sek3",
    "gamma",
    "inverse",
    "log_sek3",
    "skew",
    "TrajectorySpec",
    "generate",
]
