"""Invariant measurement updates.

An observation is right-invariant when ``Y = X^-1 b + V`` and left-invariant
when ``Y = X b + V``.  Only the first three rows of ``X Y - b`` (or
``X^-1 Y - b``) carry information, so every observation block reduces to a
3-vector innovation ``z`` with ``z ~= -H xi + noise``, and the update is

    right:  X+ = exp(K_xi z) X,   theta+ = theta + K_zeta z
    left:   X+ = X exp(K_xi z),   theta+ = theta + K_zeta z

with ``K = P H^T S^-1`` and a Joseph-form covariance update.  Several blocks
(e.g. two feet on the ground) are stacked into one batched update.
"""

from __future__ import annotations

import enum
from dataclasses import dataclass, replace
from typing import Sequence

import numpy as np
from numpy.typing import ArrayLike, NDArray
from scipy.stats import chi2

from .kinematics import KinematicsModel, position_jacobian
from .liegroup import compose, exp_sek3, skew
from .state import (
    Convention,
    ErrorFrame,
    FilterBelief,
    PointKind,
    BiasVector,
    switch_error_frame,
    symmetrize,
)

__all__ = [
    "ObservationKind",
    "InvariantObservation",
    "UpdateRejected",
    "MAX_CONDITION",
    "fk_position_observation",
    "fk_observation",
    "build_observation",
    "stack_observations",
    "innovation",
    "update",
    "update_right",
    "update_left",
    "update_sequential",
]

MAX_CONDITION = 1e12


class ObservationKind(enum.Enum):
    LANDMARK_RELATIVE = "landmark_relative"
    LANDMARK_ABSOLUTE = "landmark_absolute"
    MAGNETOMETER = "magnetometer"
    GPS = "gps"


class UpdateRejected(RuntimeError):
    """The innovation covariance was singular, ill-conditioned or gated out."""


@dataclass(frozen=True, eq=False)
class InvariantObservation:
    """Stacked invariant observation.

    Attributes
    ----------
    Y, b : ndarray, shape (m, 3 + ncols)
        Measured and constant vectors, one row per 3-dimensional block.  The
        trailing entries weight the state columns ``(v, p, points...)``.
    N : ndarray, shape (3m, 3m)
        Noise covariance of the reduced innovation (already rotated into the
        filter frame).
    form : ErrorFrame
        ``RIGHT`` for ``Y = X^-1 b + V``, ``LEFT`` for ``Y = X b + V``.
    H : ndarray, shape (3m, dim)
        Linearization over ``[xi; zeta]`` with ``z ~= -H xi``.
    """

    Y: NDArray
    b: NDArray
    N: NDArray
    form: ErrorFrame
    H: NDArray

    @property
    def m(self) -> int:
        return self.Y.shape[0]


def _jacobian_from_b(b: NDArray, form: ErrorFrame, dim: int) -> NDArray:
    """Rows of ``H`` implied by ``b`` (right: ``-Pi hat(xi) b``, left: ``+``)."""
    sign = -1.0 if form is ErrorFrame.RIGHT else 1.0
    H = np.zeros((3, dim))
    H[:, 0:3] = skew(-sign * b[:3])
    r = np.arange(3)
    for j, w in enumerate(b[3:]):
        if w != 0.0:
            H[r, 3 + 3 * j + r] = sign * w
    return H


def _observation(belief, Ys, bs, covs, form) -> InvariantObservation:
    """Assemble an observation from per-block vectors and sensor-frame covariances."""
    R = belief.R
    m = len(Ys)
    H = np.vstack([_jacobian_from_b(b, form, belief.dim) for b in bs])
    N = np.zeros((3 * m, 3 * m))
    for i, C in enumerate(covs):
        N[3 * i : 3 * i + 3, 3 * i : 3 * i + 3] = (
            R @ C @ R.T if form is ErrorFrame.RIGHT else R.T @ C @ R
        )
    return InvariantObservation(np.array(Ys, float), np.array(bs, float), symmetrize(N), form, H)


def _column_vector(belief: FilterBelief, weights: dict, top: ArrayLike) -> NDArray:
    vec = np.zeros(3 + belief.X.K)
    vec[:3] = top
    for col, w in weights.items():
        vec[3 + col] = w
    return vec


def fk_position_observation(
    belief: FilterBelief,
    alpha_meas: ArrayLike,
    contact_id,
    kin: KinematicsModel,
    encoder_cov: ArrayLike | float = 0.0,
) -> InvariantObservation:
    """Forward-kinematic contact position observation for one contact.

    World-centric beliefs get the right-invariant form with
    ``H = [0 0 -I I 0 0]``; robo-centric beliefs the left-invariant form with
    ``H = [0 0 I -I]``.

    Parameters
    ----------
    encoder_cov : float or (M, M) array
        Encoder noise covariance; a scalar means ``var * I``.

    Raises
    ------
    UnknownPointError
        If ``contact_id`` is not a tracked contact.
    """
    return fk_observation(belief, [(contact_id, alpha_meas, kin)], encoder_cov)


def fk_observation(belief: FilterBelief, measurements: Sequence, encoder_cov=0.0) -> InvariantObservation:
    """Batched FK observation for ``[(contact_id, alpha, kin), ...]``."""
    form = ErrorFrame.RIGHT if belief.convention is Convention.WORLD else ErrorFrame.LEFT
    Ys, bs, covs = [], [], []
    for cid, alpha, kin in measurements:
        j = 2 + belief.point_index(cid, PointKind.CONTACT)
        alpha = np.asarray(alpha, float)
        hp, Jp = position_jacobian(kin, alpha)
        C = np.asarray(encoder_cov, float)
        C = C * np.eye(alpha.size) if C.ndim == 0 else C
        b = _column_vector(belief, {1: 1.0, j: -1.0}, np.zeros(3))
        Y = b.copy()
        Y[:3] = hp
        Ys.append(Y)
        bs.append(b)
        covs.append(Jp @ C @ Jp.T)
    return _observation(belief, Ys, bs, covs, form)


def build_observation(kind: ObservationKind, payload: dict, belief: FilterBelief) -> InvariantObservation:
    """Observation builders for landmarks, magnetometer and GPS.

    Parameters
    ----------
    kind : ObservationKind
    payload : dict
        ``y``: measured 3-vector (body frame, or world frame for GPS);
        ``cov``: its 3x3 covariance (default zero);
        ``id``: landmark id (relative landmark);
        ``l``: known world landmark position (absolute landmark);
        ``m``: known world field (magnetometer).
    belief : FilterBelief

    Raises
    ------
    UnknownPointError
        Relative landmark with an id that is not tracked.
    KeyError
        A required prior is missing from ``payload``.
    """
    y = np.asarray(payload["y"], float)
    cov = np.asarray(payload.get("cov", np.zeros((3, 3))), float)
    world = belief.convention is Convention.WORLD
    if kind is ObservationKind.LANDMARK_RELATIVE:
        j = 2 + belief.point_index(payload["id"], PointKind.LANDMARK)
        b = _column_vector(belief, {1: 1.0, j: -1.0}, np.zeros(3))
        form = ErrorFrame.RIGHT if world else ErrorFrame.LEFT
    elif kind is ObservationKind.LANDMARK_ABSOLUTE:
        b = _column_vector(belief, {1: 1.0}, payload["l"])
        form = ErrorFrame.RIGHT if world else ErrorFrame.LEFT
    elif kind is ObservationKind.MAGNETOMETER:
        b = _column_vector(belief, {}, payload["m"])
        form = ErrorFrame.RIGHT if world else ErrorFrame.LEFT
    elif kind is ObservationKind.GPS:
        b = _column_vector(belief, {1: 1.0}, np.zeros(3))
        form = ErrorFrame.LEFT if world else ErrorFrame.RIGHT
    else:
        raise ValueError(f"unknown observation kind {kind!r}")
    Y = b.copy()
    Y[:3] = y
    return _observation(belief, [Y], [b], [cov], form)


def stack_observations(obs: Sequence[InvariantObservation]) -> InvariantObservation:
    """Concatenate observations of the same form into one batched observation."""
    forms = {o.form for o in obs}
    if len(forms) != 1:
        raise ValueError("cannot stack observations of different forms")
    m = sum(o.m for o in obs)
    N = np.zeros((3 * m, 3 * m))
    i = 0
    for o in obs:
        k = 3 * o.m
        N[i : i + k, i : i + k] = o.N
        i += k
    return InvariantObservation(
        np.vstack([o.Y for o in obs]),
        np.vstack([o.b for o in obs]),
        N,
        forms.pop(),
        np.vstack([o.H for o in obs]),
    )


def innovation(belief: FilterBelief, obs: InvariantObservation) -> NDArray:
    """Reduced innovation ``Pi (X Y - b)`` (right) or ``Pi (X^-1 Y - b)`` (left)."""
    R = belief.R
    cols = belief.X.cols
    Y, b = obs.Y, obs.b
    if obs.form is ErrorFrame.RIGHT:
        z = Y[:, :3] @ R.T + Y[:, 3:] @ cols - b[:, :3]
    else:
        z = (Y[:, :3] - Y[:, 3:] @ cols) @ R - b[:, :3]
    return z.ravel()


def _gain(P, H, N, gate, z):
    PHt = P @ H.T
    S = H @ PHt + N
    S = 0.5 * (S + S.T)
    lam, V = np.linalg.eigh(S)
    if not (lam[0] > 0.0) or lam[-1] > MAX_CONDITION * lam[0]:
        raise UpdateRejected(f"innovation covariance ill-conditioned (eigenvalues {lam[0]:.3e}..{lam[-1]:.3e})")
    if gate is not None:
        u = V.T @ z
        d2 = u @ (u / lam)
        if d2 > chi2.ppf(gate, z.size):
            raise UpdateRejected(f"innovation gated out (Mahalanobis^2 {d2:.2f})")
    # K = P H^T S^-1 with S^-1 = V diag(1/lam) V^T
    return (PHt @ V) / lam @ V.T


def _apply(belief: FilterBelief, obs: InvariantObservation, gate) -> FilterBelief:
    z = innovation(belief, obs)
    P, H, N = belief.P, obs.H, obs.N
    K = _gain(P, H, N, gate, z)
    delta = K @ z
    n = belief.X.dim
    E = exp_sek3(delta[:n])
    X = compose(E, belief.X) if obs.form is ErrorFrame.RIGHT else compose(belief.X, E)
    theta = BiasVector.from_vector(belief.theta.vector + delta[n:])
    IKH = -(K @ H)
    IKH.flat[:: IKH.shape[0] + 1] += 1.0
    P = IKH @ P @ IKH.T + K @ N @ K.T
    return replace(belief, X=X, theta=theta, P=symmetrize(P))


def _update_in(frame: ErrorFrame, belief, obs, gate):
    if obs.form is not frame:
        raise ValueError(f"observation is {obs.form.value}-invariant, expected {frame.value}")
    if belief.error_frame is frame:
        return _apply(belief, obs, gate)
    return switch_error_frame(_apply(switch_error_frame(belief), obs, gate))


def update_right(belief: FilterBelief, obs: InvariantObservation, gate: float | None = None) -> FilterBelief:
    """Right-invariant update ``X+ = exp(K_xi z) X``.

    A left-frame belief is switched to right-invariant coordinates for the
    update and back afterwards.

    Parameters
    ----------
    gate : float, optional
        Chi-square acceptance probability (e.g. 0.997).  Off by default.

    Raises
    ------
    UpdateRejected
        Innovation covariance not positive definite, condition number above
        1e12, or gated out.  The caller keeps its old belief.
    """
    return _update_in(ErrorFrame.RIGHT, belief, obs, gate)


def update_left(belief: FilterBelief, obs: InvariantObservation, gate: float | None = None) -> FilterBelief:
    """Left-invariant update ``X+ = X exp(K_xi z)``; see :func:`update_right`."""
    return _update_in(ErrorFrame.LEFT, belief, obs, gate)


def update(belief: FilterBelief, obs: InvariantObservation, gate: float | None = None) -> FilterBelief:
    """Dispatch on the observation form."""
    if obs.form is ErrorFrame.RIGHT:
        return update_right(belief, obs, gate)
    return update_left(belief, obs, gate)


def update_sequential(belief: FilterBelief, obs: InvariantObservation) -> FilterBelief:
    """Apply the blocks of a batched observation one after another.

    The measurement rows are re-linearized against the current belief each
    time, which only matters when a block moves a column referenced by a
    later block's noise (it does not for FK).
    """
    for i in range(obs.m):
        sl = slice(3 * i, 3 * i + 3)
        one = InvariantObservation(obs.Y[i : i + 1], obs.b[i : i + 1], obs.N[sl, sl], obs.form, obs.H[sl])
        belief = update(belief, one)
    return belief
