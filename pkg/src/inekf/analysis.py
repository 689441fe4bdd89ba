"""Error conversions and experiment metrics.

First-order maps between the right-invariant error, the decoupled QEKF error
and a Euclidean error ``(dphi, dv, dp)`` with ``dphi = phi - phi_hat`` in
exponential coordinates; conversion between world- and robo-centric beliefs;
and the convergence and point-cloud statistics used by the experiments.
"""

from __future__ import annotations

from dataclasses import replace

import numpy as np
from numpy.typing import ArrayLike, NDArray

from .dynamics import GRAVITY, ImuSample, propagate_mean, phi_right, robo_world_flip
from .liegroup import SEK3, gamma, skew, so3_log
from .state import BiasVector, Convention, ErrorFrame, FilterBelief, switch_error_frame

__all__ = [
    "euclidean_jacobian",
    "right_invariant_to_euclidean",
    "qekf_to_invariant_matrix",
    "qekf_error_to_invariant",
    "invariant_to_qekf_error",
    "world_to_robocentric",
    "robocentric_to_world",
    "roll_pitch",
    "tilt_errors",
    "body_velocity_error",
    "time_to_converge",
    "ring_ratio",
    "observability_matrix",
    "fk_observability_matrix",
    "numerical_rank",
]

_GAMMA1_GUARD = np.pi - 1e-3


def euclidean_jacobian(X: SEK3) -> NDArray:
    """``J`` with ``(dphi, dv, dp) = J (xi_R, xi_v, xi_p)`` to first order."""
    phi = so3_log(X.R)
    if np.linalg.norm(phi) >= _GAMMA1_GUARD:
        raise ValueError("orientation too close to pi for the Euclidean error map")
    J = np.zeros((9, 9))
    J[0:3, 0:3] = -np.linalg.solve(gamma(1, phi), np.eye(3))
    J[3:6, 0:3] = skew(X.cols[0])
    J[3:6, 3:6] = -np.eye(3)
    J[6:9, 0:3] = skew(X.cols[1])
    J[6:9, 6:9] = -np.eye(3)
    return J


def right_invariant_to_euclidean(belief: FilterBelief) -> NDArray:
    """Covariance of ``(dphi, dv, dp)`` from a world-centric right-frame belief.

    Raises
    ------
    ValueError
        Left-frame or robo-centric belief, or orientation angle near pi.
    """
    if belief.error_frame is not ErrorFrame.RIGHT or belief.convention is not Convention.WORLD:
        raise ValueError("expected a world-centric right-invariant belief")
    J = euclidean_jacobian(belief.X)
    return J @ belief.P[:9, :9] @ J.T


def qekf_to_invariant_matrix(X: SEK3) -> NDArray:
    """Linear map ``T`` with ``xi = T (dtheta, dv, dp, dd...)``.

    ``xi_R = R_hat dtheta`` and every column ``c`` gets
    ``xi_c = -dc + skew(c_hat) xi_R``.
    """
    n = X.dim
    T = np.zeros((n, n))
    R = X.R
    T[0:3, 0:3] = R
    for i, c in enumerate(X.cols):
        s = slice(3 + 3 * i, 6 + 3 * i)
        T[s, 0:3] = skew(c) @ R
        T[s, s] = -np.eye(3)
    return T


def qekf_error_to_invariant(qekf_errors: ArrayLike, belief: FilterBelief | SEK3) -> NDArray:
    """Right-invariant error from decoupled errors ``(dtheta, dv, dp, dd...)``.

    ``dtheta`` follows ``exp(dtheta) = R^T R_hat`` and the vector errors are
    ``true - estimate``; ``belief`` supplies the estimate.
    """
    X = belief.X if isinstance(belief, FilterBelief) else belief
    return qekf_to_invariant_matrix(X) @ np.asarray(qekf_errors, float)


def invariant_to_qekf_error(xi: ArrayLike, belief: FilterBelief | SEK3) -> NDArray:
    """Inverse of :func:`qekf_error_to_invariant`."""
    X = belief.X if isinstance(belief, FilterBelief) else belief
    return np.linalg.solve(qekf_to_invariant_matrix(X), np.asarray(xi, float))


def world_to_robocentric(belief: FilterBelief, keep_frame: bool = False) -> FilterBelief:
    """Express a world-centric belief in the robo-centric convention.

    The mean is inverted.  Right-invariant errors of one convention are
    negated left-invariant errors of the other, so by default the frame tag
    swaps; ``keep_frame=True`` also applies the adjoint so the tag is kept.
    """
    if belief.convention is not Convention.WORLD:
        raise ValueError("belief is already robo-centric")
    out = robo_world_flip(belief, Convention.ROBO)
    return switch_error_frame(out) if keep_frame else out


def robocentric_to_world(belief: FilterBelief, keep_frame: bool = False) -> FilterBelief:
    if belief.convention is not Convention.ROBO:
        raise ValueError("belief is already world-centric")
    out = robo_world_flip(belief, Convention.WORLD)
    return switch_error_frame(out) if keep_frame else out


def roll_pitch(R: NDArray) -> tuple[float, float]:
    """Roll and pitch of ``R = Rz(yaw) Ry(pitch) Rx(roll)``; independent of yaw."""
    pitch = np.arcsin(np.clip(-R[2, 0], -1.0, 1.0))
    roll = np.arctan2(R[2, 1], R[2, 2])
    return float(roll), float(pitch)


def _wrap(a):
    return (a + np.pi) % (2 * np.pi) - np.pi


def tilt_errors(R_hat: NDArray, R: NDArray) -> NDArray:
    """Absolute roll and pitch errors (rad)."""
    r1, p1 = roll_pitch(R_hat)
    r0, p0 = roll_pitch(R)
    return np.abs(_wrap(np.array([r1 - r0, p1 - p0])))


def body_velocity_error(R_hat, v_hat, R, v) -> float:
    """Norm of the velocity error with each velocity in its own body frame."""
    return float(np.linalg.norm(R_hat.T @ v_hat - R.T @ v))


def time_to_converge(t: ArrayLike, ok: ArrayLike, hold: float = 0.2) -> float:
    """First time from which ``ok`` stays true for at least ``hold`` seconds.

    Returns ``inf`` if it never does.  A run that is within thresholds from
    its first sample to its last counts as converged at ``t[0]`` even if it
    is shorter than ``hold``.
    """
    t = np.asarray(t, float)
    ok = np.asarray(ok, bool)
    start = None
    for ti, oi in zip(t, ok):
        if oi:
            if start is None:
                start = ti
            if ti - start >= hold - 1e-12:
                return float(start - t[0])
        else:
            start = None
    if start is not None and start == t[0]:
        return 0.0
    return float("inf")


def ring_ratio(xy: ArrayLike, center: ArrayLike = (0.0, 0.0)) -> float:
    """Radial standard deviation over tangential arc spread of a 2-D cloud.

    Points are taken in polar coordinates about ``center``.  The tangential
    spread is the mean radius times the circular standard deviation of the
    bearing, so a thin ring gives a small ratio and a compact blob a ratio of
    order one.
    """
    d = np.asarray(xy, float) - np.asarray(center, float)
    r = np.hypot(d[:, 0], d[:, 1])
    ang = np.arctan2(d[:, 1], d[:, 0])
    Rbar = np.hypot(np.mean(np.cos(ang)), np.mean(np.sin(ang)))
    circ_std = np.sqrt(-2.0 * np.log(max(Rbar, 1e-300)))
    return float(np.std(r) / (np.mean(r) * circ_std))


def observability_matrix(H: NDArray, Phis) -> NDArray:
    """Stack ``H, H Phi_1, H Phi_2 Phi_1, ...`` (one block per transition plus one)."""
    H = np.asarray(H, float)
    blocks = [H]
    M = np.eye(H.shape[1])
    for Phi in Phis:
        M = Phi @ M
        blocks.append(H @ M)
    return np.vstack(blocks)


def fk_observability_matrix(
    belief: FilterBelief, imus: list[ImuSample], g: ArrayLike = GRAVITY
) -> NDArray:
    """Bias-free observability matrix of the single-contact FK filter.

    ``belief`` must be world-centric with one tracked contact.  The mean is
    propagated through ``imus`` and the right-invariant transition matrices
    (bias blocks dropped) are stacked under ``H = [0 0 -I I]``.
    """
    if belief.convention is not Convention.WORLD or belief.X.K != 3:
        raise ValueError("expected a world-centric belief with one tracked point")
    n = belief.X.dim
    H = np.zeros((3, n))
    H[:, 6:9] = -np.eye(3)
    H[:, 9:12] = np.eye(3)
    zero = BiasVector()
    b = replace(belief, theta=zero)
    Phis = []
    for imu in imus:
        nb = propagate_mean(b, imu, g)
        Phis.append(phi_right(nb.X, b.X, imu, zero, g)[:n, :n])
        b = nb
    return observability_matrix(H, Phis)


def numerical_rank(M: ArrayLike, gap: float = 1e6) -> tuple[int, float]:
    """Rank at the largest relative drop in singular values.

    Returns ``(rank, ratio)`` where ``ratio`` is the drop ``s[r-1] / s[r]``
    (``inf`` when the trailing values are exactly zero).  A matrix whose
    largest drop is below ``gap`` is reported as full rank.
    """
    s = np.linalg.svd(np.asarray(M, float), compute_uv=False)
    if s.size == 0 or s[0] == 0.0:
        return 0, float("inf")
    with np.errstate(divide="ignore"):
        ratios = s[:-1] / s[1:]
    if ratios.size == 0:
        return int(s.size), float("inf")
    k = int(np.argmax(ratios))
    if ratios[k] < gap:
        return int(s.size), float(ratios[k])
    return k + 1, float(ratios[k])
