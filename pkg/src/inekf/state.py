"""Filter belief: group mean, IMU biases, covariance and point registry.

The covariance is ordered ``(xi_R, xi_v, xi_p, xi_d1 ... xi_dK, zeta_g, zeta_a)``
with dimension ``9 + 3K + 6``.  The bias error is ``zeta = theta_hat - theta``.
Tracked points (contacts or landmarks) occupy group columns ``2 ..`` in
registry order; removing a point compacts the columns to the left.
"""

from __future__ import annotations

import enum
from dataclasses import dataclass, field, replace

import numpy as np
from numpy.typing import ArrayLike, NDArray

from .liegroup import SEK3, adjoint, compose, inverse, log_sek3

__all__ = [
    "ErrorFrame",
    "Convention",
    "PointKind",
    "BiasVector",
    "FilterBelief",
    "UnknownPointError",
    "DuplicatePointError",
    "new_belief",
    "invariant_error",
    "switch_error_frame",
    "frame_jacobian",
    "symmetrize",
    "check_psd",
    "validate",
    "PSD_TOL",
]

PSD_TOL = 1e-9


class ErrorFrame(enum.Enum):
    RIGHT = "right"
    LEFT = "left"

    def flipped(self) -> "ErrorFrame":
        return ErrorFrame.LEFT if self is ErrorFrame.RIGHT else ErrorFrame.RIGHT


class Convention(enum.Enum):
    WORLD = "world"
    ROBO = "robo"


class PointKind(enum.Enum):
    CONTACT = "contact"
    LANDMARK = "landmark"


class UnknownPointError(KeyError):
    pass


class DuplicatePointError(ValueError):
    pass


@dataclass(frozen=True)
class BiasVector:
    """Gyroscope bias ``bg`` (rad/s) and accelerometer bias ``ba`` (m/s^2)."""

    bg: NDArray = field(default_factory=lambda: np.zeros(3))
    ba: NDArray = field(default_factory=lambda: np.zeros(3))

    def __post_init__(self):
        bg = np.array(self.bg, dtype=float).reshape(3)
        ba = np.array(self.ba, dtype=float).reshape(3)
        if not (np.all(np.isfinite(bg)) and np.all(np.isfinite(ba))):
            raise ValueError("bias entries must be finite")
        object.__setattr__(self, "bg", bg)
        object.__setattr__(self, "ba", ba)

    @property
    def vector(self) -> NDArray:
        return np.concatenate([self.bg, self.ba])

    @classmethod
    def from_vector(cls, theta: ArrayLike) -> "BiasVector":
        theta = np.asarray(theta, dtype=float)
        return cls(theta[:3], theta[3:6])


@dataclass(frozen=True, eq=False)
class FilterBelief:
    """Mean, bias and covariance of an invariant filter.

    ``X`` holds columns ``(v, p, d_1, ..., d_K)``.  For robo-centric beliefs
    ``X`` is the inverse of the world-centric state, so ``R`` is the
    world-to-body rotation, column 0 is ``-v`` in the body frame, column 1 is
    the world origin in the body frame and so on.
    """

    X: SEK3
    theta: BiasVector
    P: NDArray
    error_frame: ErrorFrame = ErrorFrame.RIGHT
    convention: Convention = Convention.WORLD
    registry: tuple = ()

    @property
    def K(self) -> int:
        """Number of tracked points."""
        return self.X.K - 2

    @property
    def dim(self) -> int:
        return 15 + 3 * self.K

    @property
    def R(self) -> NDArray:
        return self.X.R

    @property
    def v(self) -> NDArray:
        return self.X.cols[0]

    @property
    def p(self) -> NDArray:
        return self.X.cols[1]

    @property
    def points(self) -> NDArray:
        return self.X.cols[2:]

    def point_ids(self, kind: PointKind | None = None) -> list:
        return [pid for k, pid in self.registry if kind is None or k is kind]

    def has_point(self, pid, kind: PointKind = PointKind.CONTACT) -> bool:
        return (kind, pid) in self.registry

    def point_index(self, pid, kind: PointKind = PointKind.CONTACT) -> int:
        """Position of a point among the tracked points (0-based)."""
        try:
            return self.registry.index((kind, pid))
        except ValueError:
            raise UnknownPointError(f"{kind.value} {pid!r} is not tracked") from None

    def point(self, pid, kind: PointKind = PointKind.CONTACT) -> NDArray:
        return self.X.cols[2 + self.point_index(pid, kind)]

    def replace(self, **changes) -> "FilterBelief":
        return replace(self, **changes)


def symmetrize(P: NDArray) -> NDArray:
    return 0.5 * (P + P.T)


def check_psd(P: NDArray, tol: float = PSD_TOL) -> None:
    """Raise ``ValueError`` if ``P`` is not symmetric PSD within ``tol``."""
    if P.ndim != 2 or P.shape[0] != P.shape[1]:
        raise ValueError(f"covariance must be square, got {P.shape}")
    if not np.all(np.isfinite(P)):
        raise ValueError("covariance has non-finite entries")
    scale = max(1.0, float(np.abs(P).max()))
    if np.abs(P - P.T).max() > tol * scale:
        raise ValueError("covariance is not symmetric")
    lam = np.linalg.eigvalsh(symmetrize(P))[0]
    if lam < -tol * scale:
        raise ValueError(f"covariance is not PSD (min eigenvalue {lam:.3e})")


def validate(belief: FilterBelief, tol: float = PSD_TOL) -> None:
    """Check every belief invariant; used by tests and debug runs."""
    n = belief.dim
    if belief.P.shape != (n, n):
        raise ValueError(f"P has shape {belief.P.shape}, expected {(n, n)}")
    if len(belief.registry) != belief.K or len(set(belief.registry)) != belief.K:
        raise ValueError("registry does not match tracked columns")
    R = belief.R
    if np.abs(R.T @ R - np.eye(3)).max() > 1e-9 or abs(np.linalg.det(R) - 1.0) > 1e-9:
        raise ValueError("rotation is not orthonormal")
    check_psd(belief.P, tol)


def new_belief(
    R0: ArrayLike,
    v0: ArrayLike,
    p0: ArrayLike,
    theta0: BiasVector | ArrayLike | None,
    P0: ArrayLike,
    error_frame: ErrorFrame = ErrorFrame.RIGHT,
    convention: Convention = Convention.WORLD,
) -> FilterBelief:
    """Build a belief with no tracked points.

    ``R0, v0, p0`` are taken as the stored columns verbatim, so a robo-centric
    caller passes the already-inverted quantities.

    Raises
    ------
    ValueError
        If ``P0`` is not 15x15 symmetric positive semidefinite.
    """
    if theta0 is None:
        theta0 = BiasVector()
    elif not isinstance(theta0, BiasVector):
        theta0 = BiasVector.from_vector(theta0)
    P0 = np.array(P0, dtype=float)
    if P0.shape != (15, 15):
        raise ValueError(f"P0 must be 15x15 for a belief without points, got {P0.shape}")
    check_psd(P0)
    X = SEK3(R0, np.vstack([np.asarray(v0, float), np.asarray(p0, float)]))
    b = FilterBelief(X, theta0, symmetrize(P0), ErrorFrame(error_frame), Convention(convention), ())
    validate(b)
    return b


def invariant_error(belief: FilterBelief, X_true: SEK3, theta_true: BiasVector):
    """Invariant error of the mean against a reference state.

    Returns ``(xi, zeta)`` where ``xi = log(X_hat X^-1)`` for right-frame
    beliefs, ``log(X^-1 X_hat)`` for left-frame ones, and
    ``zeta = theta_hat - theta``.
    """
    if X_true.K != belief.X.K:
        raise ValueError("reference state has a different number of columns")
    if belief.error_frame is ErrorFrame.RIGHT:
        eta = compose(belief.X, inverse(X_true))
    else:
        eta = compose(inverse(X_true), belief.X)
    return log_sek3(eta), belief.theta.vector - theta_true.vector


def frame_jacobian(X: SEK3, to_right: bool) -> NDArray:
    """``blockdiag(Ad_X^{+-1}, I_6)`` mapping left to right coordinates or back."""
    n = X.dim
    J = np.eye(n + 6)
    J[:n, :n] = adjoint(X) if to_right else adjoint(inverse(X))
    return J


def switch_error_frame(belief: FilterBelief) -> FilterBelief:
    """Map the covariance between left- and right-invariant coordinates.

    Uses ``xi_r = Ad_X xi_l``; the mean is untouched and the tag flips.
    """
    J = frame_jacobian(belief.X, belief.error_frame is ErrorFrame.LEFT)
    P = symmetrize(J @ belief.P @ J.T)
    return replace(belief, P=P, error_frame=belief.error_frame.flipped())
