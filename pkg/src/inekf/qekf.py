"""Quaternion EKF baseline with decoupled error states.

Errors are defined as::

    exp(dtheta) = R^T R_hat,   dv = v - v_hat,   dp = p - p_hat,
    dd = d - d_hat,            zeta = theta_hat - theta   (biases)

so the true rotation is ``R = R_hat exp(-dtheta)``.  The error-state Jacobians
below follow from these definitions; unlike the invariant filter they depend
on the current estimate.

Quaternions are Hamilton, scalar first, ``q = (w, x, y, z)``, and represent
the body-to-world rotation ``R(q)``.
"""

from __future__ import annotations

from dataclasses import dataclass, replace
from typing import Sequence

import numpy as np
from numpy.typing import ArrayLike, NDArray
from scipy.linalg import cho_factor, cho_solve, expm

from .dynamics import GRAVITY, ImuSample, NoiseParams, _zoh
from .kinematics import KinematicsModel, position_jacobian
from .liegroup import skew, so3_log
from .state import DuplicatePointError, UnknownPointError, check_psd, symmetrize
from .correction import MAX_CONDITION, UpdateRejected

__all__ = [
    "QekfBelief",
    "quat_mul",
    "quat_conj",
    "quat_exp",
    "quat_to_rot",
    "rot_to_quat",
    "new_qekf_belief",
    "qekf_a_matrix",
    "qekf_transition",
    "qekf_predict",
    "qekf_observation",
    "qekf_update",
    "qekf_add_contact",
    "qekf_remove_contact",
    "qekf_error",
]


def quat_mul(q: NDArray, r: NDArray) -> NDArray:
    w1, x1, y1, z1 = q
    w2, x2, y2, z2 = r
    return np.array(
        [
            w1 * w2 - x1 * x2 - y1 * y2 - z1 * z2,
            w1 * x2 + x1 * w2 + y1 * z2 - z1 * y2,
            w1 * y2 - x1 * z2 + y1 * w2 + z1 * x2,
            w1 * z2 + x1 * y2 - y1 * x2 + z1 * w2,
        ]
    )


def quat_conj(q: NDArray) -> NDArray:
    return np.array([q[0], -q[1], -q[2], -q[3]])


def quat_exp(phi: ArrayLike) -> NDArray:
    """Unit quaternion of the rotation vector ``phi``."""
    phi = np.asarray(phi, float)
    half = 0.5 * np.linalg.norm(phi)
    # sin(x)/x series below 1e-4 keeps full precision
    k = 0.5 * (1.0 - half * half / 6.0) if half < 1e-4 else np.sin(half) / (2.0 * half)
    return np.concatenate([[np.cos(half)], k * phi])


def quat_to_rot(q: NDArray) -> NDArray:
    w, x, y, z = q
    return np.array(
        [
            [1 - 2 * (y * y + z * z), 2 * (x * y - w * z), 2 * (x * z + w * y)],
            [2 * (x * y + w * z), 1 - 2 * (x * x + z * z), 2 * (y * z - w * x)],
            [2 * (x * z - w * y), 2 * (y * z + w * x), 1 - 2 * (x * x + y * y)],
        ]
    )


def rot_to_quat(R: NDArray) -> NDArray:
    """Quaternion with non-negative scalar part (Shepperd's method)."""
    tr = np.trace(R)
    cands = [tr, R[0, 0], R[1, 1], R[2, 2]]
    i = int(np.argmax(cands))
    if i == 0:
        s = 2.0 * np.sqrt(1.0 + tr)
        q = [0.25 * s, (R[2, 1] - R[1, 2]) / s, (R[0, 2] - R[2, 0]) / s, (R[1, 0] - R[0, 1]) / s]
    elif i == 1:
        s = 2.0 * np.sqrt(1.0 + R[0, 0] - R[1, 1] - R[2, 2])
        q = [(R[2, 1] - R[1, 2]) / s, 0.25 * s, (R[0, 1] + R[1, 0]) / s, (R[0, 2] + R[2, 0]) / s]
    elif i == 2:
        s = 2.0 * np.sqrt(1.0 - R[0, 0] + R[1, 1] - R[2, 2])
        q = [(R[0, 2] - R[2, 0]) / s, (R[0, 1] + R[1, 0]) / s, 0.25 * s, (R[1, 2] + R[2, 1]) / s]
    else:
        s = 2.0 * np.sqrt(1.0 - R[0, 0] - R[1, 1] + R[2, 2])
        q = [(R[1, 0] - R[0, 1]) / s, (R[0, 2] + R[2, 0]) / s, (R[1, 2] + R[2, 1]) / s, 0.25 * s]
    q = np.asarray(q)
    q /= np.linalg.norm(q)
    return -q if q[0] < 0 else q


@dataclass(frozen=True, eq=False)
class QekfBelief:
    """Mean and covariance of the quaternion EKF.

    ``P`` is ordered ``(dtheta, dv, dp, dd_1..dd_K, zeta_g, zeta_a)``.
    """

    q: NDArray
    v: NDArray
    p: NDArray
    d: NDArray
    bg: NDArray
    ba: NDArray
    P: NDArray
    registry: tuple = ()

    @property
    def R(self) -> NDArray:
        return quat_to_rot(self.q)

    @property
    def K(self) -> int:
        return self.d.shape[0]

    @property
    def dim(self) -> int:
        return 15 + 3 * self.K

    def point_index(self, cid) -> int:
        try:
            return self.registry.index(cid)
        except ValueError:
            raise UnknownPointError(f"contact {cid!r} is not tracked") from None


def new_qekf_belief(R0, v0, p0, bg0, ba0, P0) -> QekfBelief:
    P0 = np.array(P0, float)
    if P0.shape != (15, 15):
        raise ValueError(f"P0 must be 15x15, got {P0.shape}")
    check_psd(P0)
    return QekfBelief(
        rot_to_quat(np.asarray(R0, float)),
        np.array(v0, float),
        np.array(p0, float),
        np.zeros((0, 3)),
        np.array(bg0, float),
        np.array(ba0, float),
        symmetrize(P0),
    )


def qekf_a_matrix(belief: QekfBelief, imu: ImuSample) -> NDArray:
    """Continuous error dynamics, linearized at the current estimate."""
    w = imu.w_meas - belief.bg
    a = imu.a_meas - belief.ba
    R = belief.R
    n = belief.dim
    b = n - 6
    A = np.zeros((n, n))
    A[0:3, 0:3] = -skew(w)
    A[0:3, b : b + 3] = -np.eye(3)
    A[3:6, 0:3] = R @ skew(a)
    A[3:6, b + 3 : b + 6] = R
    A[6:9, 3:6] = np.eye(3)
    return A


def qekf_transition(belief: QekfBelief, imu: ImuSample, first_order: bool = False) -> NDArray:
    """``expm(A dt)`` with ``A`` frozen over the step (or ``I + A dt``)."""
    A = qekf_a_matrix(belief, imu)
    if first_order:
        return np.eye(A.shape[0]) + A * imu.dt
    return expm(A * imu.dt)


def _qekf_noise(belief: QekfBelief, noise: NoiseParams) -> NDArray:
    diag = [noise.gyro**2] * 3 + [noise.accel**2] * 3 + [0.0] * 3
    diag += [noise.contact**2] * (3 * belief.K)
    diag += [noise.gyro_bias**2] * 3 + [noise.accel_bias**2] * 3
    return np.diag(diag)


def qekf_predict(
    belief: QekfBelief,
    imu: ImuSample,
    noise: NoiseParams,
    g: ArrayLike = GRAVITY,
    first_order: bool = False,
) -> QekfBelief:
    """Zero-order-hold mean propagation plus linearized covariance propagation."""
    w = imu.w_meas - belief.bg
    a = imu.a_meas - belief.ba
    _, v1, p1 = _zoh(belief.R, belief.v, belief.p, w, a, imu.dt, np.asarray(g, float))
    q1 = quat_mul(belief.q, quat_exp(w * imu.dt))
    q1 /= np.linalg.norm(q1)
    Phi = qekf_transition(belief, imu, first_order)
    Q = _qekf_noise(belief, noise)
    P = Phi @ (belief.P + Q * imu.dt) @ Phi.T
    return replace(belief, q=q1, v=v1, p=p1, P=symmetrize(P))


def qekf_observation(belief: QekfBelief, measurements: Sequence, encoder_cov=0.0):
    """Residual, Jacobian and noise for ``[(contact_id, alpha, kin), ...]``."""
    R = belief.R
    zs, Hs, Ns = [], [], []
    for cid, alpha, kin in measurements:
        j = belief.point_index(cid)
        alpha = np.asarray(alpha, float)
        y_hat = R.T @ (belief.d[j] - belief.p)
        H = np.zeros((3, belief.dim))
        H[:, 0:3] = -skew(y_hat)
        H[:, 6:9] = -R.T
        H[:, 9 + 3 * j : 12 + 3 * j] = R.T
        h, Jp = position_jacobian(kin, alpha)
        C = np.asarray(encoder_cov, float)
        C = C * np.eye(alpha.size) if C.ndim == 0 else C
        zs.append(h - y_hat)
        Hs.append(H)
        Ns.append(Jp @ C @ Jp.T)
    m = len(zs)
    N = np.zeros((3 * m, 3 * m))
    for i, Ni in enumerate(Ns):
        N[3 * i : 3 * i + 3, 3 * i : 3 * i + 3] = Ni
    return np.concatenate(zs), np.vstack(Hs), N


def qekf_update(
    belief: QekfBelief,
    alpha_meas,
    contact_id=None,
    kin: KinematicsModel | None = None,
    noise: NoiseParams | None = None,
    measurements: Sequence | None = None,
) -> QekfBelief:
    """Standard EKF correction with forward-kinematic contact positions.

    Pass either a single ``(alpha_meas, contact_id, kin)`` or a batch through
    ``measurements=[(contact_id, alpha, kin), ...]``.  Orientation is
    corrected multiplicatively, everything else additively.

    Raises
    ------
    UpdateRejected
        If the innovation covariance is not safely positive definite.
    """
    noise = noise or NoiseParams()
    if measurements is None:
        measurements = [(contact_id, alpha_meas, kin)]
    z, H, N = qekf_observation(belief, measurements, noise.encoder**2)
    P = belief.P
    S = H @ P @ H.T + N
    S = 0.5 * (S + S.T)
    lam = np.linalg.eigvalsh(S)
    if not (lam[0] > 0.0) or lam[-1] > MAX_CONDITION * lam[0]:
        raise UpdateRejected("innovation covariance ill-conditioned")
    K = cho_solve(cho_factor(S), H @ P).T
    dx = K @ z
    n = belief.dim
    q = quat_mul(belief.q, quat_exp(-dx[0:3]))
    q /= np.linalg.norm(q)
    d = belief.d + dx[9 : n - 6].reshape(-1, 3)
    IKH = np.eye(n) - K @ H
    P = IKH @ P @ IKH.T + K @ N @ K.T
    return replace(
        belief,
        q=q,
        v=belief.v + dx[3:6],
        p=belief.p + dx[6:9],
        d=d,
        bg=belief.bg - dx[n - 6 : n - 3],
        ba=belief.ba - dx[n - 3 :],
        P=symmetrize(P),
    )


def qekf_add_contact(
    belief: QekfBelief, contact_id, alpha_meas, kin: KinematicsModel, encoder_cov=0.0
) -> QekfBelief:
    """Augment with ``d = p + R h_p(alpha)``.

    Linearizing ``d = p + R (h - J w)`` with ``R = R_hat exp(-dtheta)`` gives
    ``dd = dp + R_hat skew(h) dtheta - R_hat J w``.
    """
    if contact_id in belief.registry:
        raise DuplicatePointError(f"contact {contact_id!r} is already tracked")
    alpha = np.asarray(alpha_meas, float)
    R = belief.R
    h, Jp = position_jacobian(kin, alpha)
    C = np.asarray(encoder_cov, float)
    C = C * np.eye(alpha.size) if C.ndim == 0 else C
    n = belief.dim
    nb = n - 6
    F = np.zeros((3, n))
    F[:, 0:3] = R @ skew(h)
    F[:, 6:9] = np.eye(3)
    P = belief.P
    cross = F @ P
    Pn = np.empty((n + 3, n + 3))
    Pn[:nb, :nb] = P[:nb, :nb]
    Pn[:nb, nb + 3 :] = P[:nb, nb:]
    Pn[nb + 3 :, :nb] = P[nb:, :nb]
    Pn[nb + 3 :, nb + 3 :] = P[nb:, nb:]
    Pn[nb : nb + 3, :nb] = cross[:, :nb]
    Pn[nb : nb + 3, nb + 3 :] = cross[:, nb:]
    Pn[:nb, nb : nb + 3] = cross[:, :nb].T
    Pn[nb + 3 :, nb : nb + 3] = cross[:, nb:].T
    G = R @ Jp
    Pn[nb : nb + 3, nb : nb + 3] = symmetrize(cross @ F.T + G @ C @ G.T)
    d = np.vstack([belief.d, belief.p + R @ h])
    return replace(belief, d=d, P=Pn, registry=belief.registry + (contact_id,))


def qekf_remove_contact(belief: QekfBelief, contact_id) -> QekfBelief:
    j = belief.point_index(contact_id)
    i0 = 9 + 3 * j
    keep = np.r_[0:i0, i0 + 3 : belief.dim]
    return replace(
        belief,
        d=np.delete(belief.d, j, axis=0),
        P=belief.P[np.ix_(keep, keep)],
        registry=belief.registry[:j] + belief.registry[j + 1 :],
    )


def qekf_error(belief: QekfBelief, R, v, p, d=None) -> NDArray:
    """Decoupled error ``(dtheta, dv, dp, dd...)`` of the estimate against truth."""
    parts = [so3_log(np.asarray(R).T @ belief.R), v - belief.v, p - belief.p]
    if d is not None and len(d):
        parts.append((np.asarray(d) - belief.d).ravel())
    return np.concatenate(parts)
