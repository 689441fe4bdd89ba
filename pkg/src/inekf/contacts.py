"""Contact and landmark lifecycle: augmentation and marginalization.

A new point is initialized from a body-frame relative position ``h`` (forward
kinematics for contacts) as ``d = p + R h`` in world-centric form and
``d = p - h`` in robo-centric form.  The covariance grows as
``F P F^T + G C G^T`` where ``F`` copies the rows the new point error depends
on and ``G C G^T`` carries the measurement noise of ``h``.  The choice of
``F`` and ``G`` depends on the error frame and convention.

Removing a point deletes its column and its rows/columns of ``P``; the
remaining points shift left.
"""

from __future__ import annotations

from dataclasses import dataclass, field, replace

import numpy as np
from numpy.typing import ArrayLike, NDArray

from .kinematics import KinematicsModel, position_jacobian
from .liegroup import SEK3, skew
from .state import (
    Convention,
    DuplicatePointError,
    ErrorFrame,
    FilterBelief,
    PointKind,
    symmetrize,
)

__all__ = [
    "add_point",
    "remove_point",
    "add_contact",
    "remove_contact",
    "add_landmark",
    "augmentation_maps",
    "ContactDebouncer",
]


def augmentation_maps(belief: FilterBelief, h: ArrayLike) -> tuple[NDArray, NDArray]:
    """Rows ``F_new`` (3 x dim) and rotation ``G`` (3 x 3) for a new point.

    The new point error is ``xi_d = F_new [xi; zeta] + G n`` where ``n`` is the
    body-frame noise on ``h``.
    """
    h = np.asarray(h, float)
    F = np.zeros((3, belief.dim))
    F[:, 6:9] = np.eye(3)
    world = belief.convention is Convention.WORLD
    right = belief.error_frame is ErrorFrame.RIGHT
    if world == right:
        # world/right: xi_d = xi_p + R n ;  robo/left: xi_d = xi_p - R^T n
        G = belief.R if world else -belief.R.T
    else:
        # world/left and robo/right: xi_d = xi_p - skew(h) xi_R +- n
        F[:, 0:3] = -skew(h)
        G = np.eye(3) if world else -np.eye(3)
    return F, G


def add_point(
    belief: FilterBelief,
    pid,
    kind: PointKind,
    h: ArrayLike,
    cov_h: ArrayLike | None = None,
) -> FilterBelief:
    """Append a point measured at body-frame offset ``h`` with covariance ``cov_h``.

    Raises
    ------
    DuplicatePointError
        If ``(kind, pid)`` is already tracked.
    """
    if belief.has_point(pid, kind):
        raise DuplicatePointError(f"{kind.value} {pid!r} is already tracked")
    h = np.asarray(h, float)
    C = np.zeros((3, 3)) if cov_h is None else np.asarray(cov_h, float)
    if belief.convention is Convention.WORLD:
        d = belief.p + belief.R @ h
    else:
        d = belief.p - h
    F, G = augmentation_maps(belief, h)

    P = belief.P
    n = belief.dim
    nb = n - 6
    cross = F @ P  # 3 x n
    Pn = np.empty((n + 3, n + 3))
    # keep existing entries bit-for-bit: [xi | new | zeta]
    Pn[:nb, :nb] = P[:nb, :nb]
    Pn[:nb, nb + 3 :] = P[:nb, nb:]
    Pn[nb + 3 :, :nb] = P[nb:, :nb]
    Pn[nb + 3 :, nb + 3 :] = P[nb:, nb:]
    Pn[nb : nb + 3, :nb] = cross[:, :nb]
    Pn[nb : nb + 3, nb + 3 :] = cross[:, nb:]
    Pn[:nb, nb : nb + 3] = cross[:, :nb].T
    Pn[nb + 3 :, nb : nb + 3] = cross[:, nb:].T
    Pn[nb : nb + 3, nb : nb + 3] = symmetrize(cross @ F.T + G @ C @ G.T)

    X = SEK3(belief.R, np.vstack([belief.X.cols, d]))
    return replace(belief, X=X, P=Pn, registry=belief.registry + ((kind, pid),))


def remove_point(belief: FilterBelief, pid, kind: PointKind) -> FilterBelief:
    """Marginalize a point: drop its column and covariance rows/columns.

    Raises
    ------
    UnknownPointError
        If the point is not tracked.
    """
    j = belief.point_index(pid, kind)
    i0 = 9 + 3 * j
    keep = np.r_[0:i0, i0 + 3 : belief.dim]
    P = belief.P[np.ix_(keep, keep)]
    cols = np.delete(belief.X.cols, 2 + j, axis=0)
    reg = belief.registry[:j] + belief.registry[j + 1 :]
    return replace(belief, X=SEK3(belief.R, cols), P=P, registry=reg)


def add_contact(
    belief: FilterBelief,
    contact_id,
    alpha_meas: ArrayLike,
    kin: KinematicsModel,
    encoder_cov: ArrayLike | float = 0.0,
) -> FilterBelief:
    """Start tracking a contact point from the current encoder reading.

    The contact is placed at ``p + R h_p(alpha)`` with covariance picked up
    from the position (and, in some frames, orientation) error plus the
    encoder noise mapped through ``J_p``.
    """
    alpha = np.asarray(alpha_meas, float)
    h, Jp = position_jacobian(kin, alpha)
    C = np.asarray(encoder_cov, float)
    C = C * np.eye(alpha.size) if C.ndim == 0 else C
    return add_point(belief, contact_id, PointKind.CONTACT, h, Jp @ C @ Jp.T)


def remove_contact(belief: FilterBelief, contact_id) -> FilterBelief:
    return remove_point(belief, contact_id, PointKind.CONTACT)


def add_landmark(belief: FilterBelief, landmark_id, y_body: ArrayLike, cov: ArrayLike | None = None) -> FilterBelief:
    """Start tracking a static landmark observed at body-frame position ``y_body``."""
    return add_point(belief, landmark_id, PointKind.LANDMARK, y_body, cov)


@dataclass
class ContactDebouncer:
    """Edge detector for binary contact flags.

    A contact state changes only after ``n_confirm`` consecutive flags agree on
    the new value.  ``feed`` returns ``"add"``, ``"remove"`` or ``None``.
    """

    n_confirm: int = 2
    _state: dict = field(default_factory=dict)
    _run: dict = field(default_factory=dict)

    def feed(self, cid, flag: bool):
        flag = bool(flag)
        state = self._state.get(cid, False)
        last, count = self._run.get(cid, (None, 0))
        count = count + 1 if flag == last else 1
        self._run[cid] = (flag, count)
        if flag != state and count >= self.n_confirm:
            self._state[cid] = flag
            return "add" if flag else "remove"
        return None

    def state(self, cid) -> bool:
        return self._state.get(cid, False)

    def raw(self, cid) -> bool:
        """Most recent raw flag."""
        return self._run.get(cid, (False, 0))[0] or False
