"""Filters that consume a stream of sensor records.

Each IMU record is held over the interval up to the next timestamp: when a
record arrives at time ``t`` the belief is first propagated from the current
time to ``t`` with the held sample, then the record is applied.  Gaps longer
than ``MAX_DT`` are skipped with a warning rather than integrated.

Contact flags go through a debouncer.  A newly confirmed contact is added
from the next encoder record; a tracked contact is corrected by every
encoder record whose latest raw flag for that leg is true, and removed once
the debouncer confirms lift-off.
"""

from __future__ import annotations

import logging
import math
from dataclasses import dataclass, field, replace

import numpy as np
from numpy.typing import NDArray

from . import contacts as _contacts
from .analysis import qekf_to_invariant_matrix, right_invariant_to_euclidean
from .correction import ObservationKind, UpdateRejected, build_observation, fk_observation, update
from .dynamics import GRAVITY, MAX_DT, ImuSample, NoiseParams, propagate, robo_world_flip
from .kinematics import SerialLeg, default_leg
from .liegroup import SEK3, gamma, orthonormalize, so3_log
from .logio import ContactRecord, EncoderRecord, GpsRecord, ImuRecord, LandmarkRecord, MagRecord
from .qekf import (
    QekfBelief,
    new_qekf_belief,
    qekf_add_contact,
    qekf_predict,
    qekf_remove_contact,
    qekf_update,
    quat_to_rot,
)
from .state import Convention, ErrorFrame, FilterBelief, PointKind, new_belief, switch_error_frame

__all__ = [
    "FILTER_KINDS",
    "FilterSettings",
    "Estimates",
    "InvariantFilter",
    "QekfFilter",
    "make_filter",
    "euclidean_covariance",
]

log = logging.getLogger(__name__)

FILTER_KINDS = ("inekf-right", "inekf-left", "inekf-robocentric", "qekf")


@dataclass(frozen=True)
class FilterSettings:
    """Noise model, prior and sensor setup shared by all filters.

    Initial standard deviations are in decoupled coordinates (orientation
    error in the body frame, additive velocity and position); invariant
    filters map them through the first-order error conversion so every filter
    starts from the same uncertainty.
    """

    noise: NoiseParams = field(default_factory=NoiseParams)
    init_std_orientation: float = math.radians(30.0)
    init_std_velocity: float = 1.0
    init_std_position: float = 0.1
    init_std_gyro_bias: float = 0.005
    init_std_accel_bias: float = 0.05
    estimate_bias: bool = True
    gravity: tuple = tuple(GRAVITY)
    leg_lengths: tuple = (0.12, 0.35, 0.40)
    hip_offset: tuple = (0.0, 0.1, -0.05)
    gate: float | None = None
    n_confirm: int = 2
    reortho_every: int = 256
    landmark_noise: float = 0.05
    landmark_priors: tuple = ()  # ((id, (x, y, z)), ...)
    gps_noise: float = 0.5
    mag_field: tuple | None = None
    mag_noise: float = 0.01

    def legs(self) -> list[SerialLeg]:
        return [default_leg(1, self.leg_lengths, self.hip_offset), default_leg(-1, self.leg_lengths, self.hip_offset)]

    def filter_noise(self) -> NoiseParams:
        return self.noise if self.estimate_bias else self.noise.without_bias()

    def P0(self) -> NDArray:
        """Initial covariance in decoupled coordinates ``(dtheta, dv, dp, zeta)``."""
        bg = self.init_std_gyro_bias if self.estimate_bias else 0.0
        ba = self.init_std_accel_bias if self.estimate_bias else 0.0
        std = [self.init_std_orientation] * 3 + [self.init_std_velocity] * 3 + [self.init_std_position] * 3
        std += [bg] * 3 + [ba] * 3
        return np.diag(np.square(std))


@dataclass
class Estimates:
    """Filter output at each distinct record timestamp."""

    t: NDArray
    R: NDArray
    v: NDArray
    p: NDArray
    bg: NDArray
    ba: NDArray
    P_diag: NDArray | None = None


def euclidean_covariance(belief) -> NDArray:
    """9x9 covariance of ``(dphi, dv, dp)`` for any filter belief."""
    if isinstance(belief, QekfBelief):
        R = belief.R
        M = np.eye(9)
        M[0:3, 0:3] = -np.linalg.solve(gamma(1, so3_log(R)), R)
        return M @ belief.P[:9, :9] @ M.T
    b = belief
    if b.convention is Convention.ROBO:
        b = robo_world_flip(b, Convention.WORLD)
    if b.error_frame is ErrorFrame.LEFT:
        b = switch_error_frame(b)
    return right_invariant_to_euclidean(b)


class _Runner:
    def __init__(self, settings: FilterSettings):
        self.settings = settings
        self.noise = settings.filter_noise()
        self.g = np.asarray(settings.gravity, float)
        self.legs = settings.legs()
        self._splits = np.cumsum([leg.n_joints for leg in self.legs])[:-1]
        self._n_joints = sum(leg.n_joints for leg in self.legs)
        self.debouncer = _contacts.ContactDebouncer(settings.n_confirm)
        self.time: float | None = None
        self.held: ImuRecord | None = None
        self.pending: set = set()
        self.steps = 0
        self.rejected = 0
        self.skipped = 0

    # -- hooks for subclasses --
    def _propagate(self, imu: ImuSample): ...
    def _fk_update(self, meas: list): ...
    def _add_contact(self, cid, alpha): ...
    def _remove_contact(self, cid): ...
    def _tracked(self, cid) -> bool: ...
    def _reorthonormalize(self): ...
    def _aux(self, rec): ...
    def _snapshot(self): ...

    def _advance(self, t: float):
        dt = t - self.time
        if self.held is not None and dt > 0.0:
            if dt > MAX_DT:
                log.warning("t=%.9f: IMU gap of %.3f s skipped", t, dt)
                self.skipped += 1
            else:
                self._propagate(ImuSample(self.held.w, self.held.a, dt))
                self.steps += 1
                if self.settings.reortho_every and self.steps % self.settings.reortho_every == 0:
                    self._reorthonormalize()
        self.time = t

    def process(self, rec) -> None:
        """Apply one record."""
        if self.time is None:
            self.time = rec.t
        elif rec.t < self.time:
            raise ValueError(f"record at t={rec.t} is older than the filter time {self.time}")
        else:
            self._advance(rec.t)

        if isinstance(rec, ImuRecord):
            self.held = rec
        elif isinstance(rec, ContactRecord):
            ev = self.debouncer.feed(rec.id, rec.flag)
            if ev == "add":
                self.pending.add(rec.id)
            elif ev == "remove":
                self.pending.discard(rec.id)
                if self._tracked(rec.id):
                    self._remove_contact(rec.id)
        elif isinstance(rec, EncoderRecord):
            self._encoders(rec)
        else:
            self._aux(rec)

    def _encoders(self, rec: EncoderRecord):
        if rec.alpha.size != self._n_joints:
            raise ValueError(f"t={rec.t}: expected {self._n_joints} joint angles, got {rec.alpha.size}")
        alphas = np.split(rec.alpha, self._splits)
        meas = [
            (cid, alphas[cid], self.legs[cid])
            for cid in range(len(self.legs))
            if self._tracked(cid) and self.debouncer.raw(cid)
        ]
        if meas:
            try:
                self._fk_update(meas)
            except UpdateRejected as e:
                self.rejected += 1
                log.warning("t=%.9f: FK update rejected: %s", rec.t, e)
        for cid in sorted(self.pending):
            if not (isinstance(cid, (int, np.integer)) and 0 <= cid < len(self.legs)):
                log.warning("contact id %r has no leg model; ignored", cid)
            else:
                self._add_contact(cid, alphas[cid])
        self.pending.clear()

    def run(self, records, keep_history: bool = True, keep_cov: bool = False) -> Estimates | None:
        """Process ``records`` in order.

        With ``keep_history`` a snapshot is taken after the last record of
        every distinct timestamp.
        """
        ts, rows, covs = [], [], []
        n = len(records)
        for i, rec in enumerate(records):
            self.process(rec)
            if keep_history and (i + 1 == n or records[i + 1].t != rec.t):
                ts.append(rec.t)
                R, v, p, bg, ba = self._snapshot()
                rows.append((R, v, p, bg, ba))
                if keep_cov:
                    covs.append(np.diag(euclidean_covariance(self.belief)))
        if not keep_history:
            return None
        if not rows:
            e = np.empty((0, 3))
            return Estimates(np.empty(0), np.empty((0, 3, 3)), e, e, e, e)
        R, v, p, bg, ba = (np.array(x) for x in zip(*rows))
        return Estimates(np.array(ts), R, v, p, bg, ba, np.array(covs) if keep_cov else None)


class InvariantFilter(_Runner):
    """Contact-aided invariant EKF.

    Parameters
    ----------
    belief : FilterBelief
        Initial belief; its error frame and convention select the variant.
    settings : FilterSettings
    """

    def __init__(self, belief: FilterBelief, settings: FilterSettings | None = None):
        super().__init__(settings or FilterSettings())
        self.belief = belief
        s = self.settings
        self._priors = {int(i): np.asarray(l, float) for i, l in s.landmark_priors}

    def _propagate(self, imu):
        self.belief = propagate(self.belief, imu, self.noise, self.g)

    def _update(self, obs):
        self.belief = update(self.belief, obs, self.settings.gate)

    def _fk_update(self, meas):
        self._update(fk_observation(self.belief, meas, self.noise.encoder**2))

    def _add_contact(self, cid, alpha):
        self.belief = _contacts.add_contact(self.belief, cid, alpha, self.legs[cid], self.noise.encoder**2)

    def _remove_contact(self, cid):
        self.belief = _contacts.remove_contact(self.belief, cid)

    def _tracked(self, cid):
        return self.belief.has_point(cid, PointKind.CONTACT)

    def _reorthonormalize(self):
        X = self.belief.X
        self.belief = replace(self.belief, X=SEK3(orthonormalize(X.R), X.cols))

    def _aux(self, rec):
        s = self.settings
        b = self.belief
        try:
            if isinstance(rec, LandmarkRecord):
                cov = s.landmark_noise**2 * np.eye(3)
                if rec.id in self._priors:
                    obs = build_observation(
                        ObservationKind.LANDMARK_ABSOLUTE, {"y": rec.y, "cov": cov, "l": self._priors[rec.id]}, b
                    )
                    self._update(obs)
                elif b.has_point(rec.id, PointKind.LANDMARK):
                    obs = build_observation(ObservationKind.LANDMARK_RELATIVE, {"y": rec.y, "cov": cov, "id": rec.id}, b)
                    self._update(obs)
                else:
                    self.belief = _contacts.add_landmark(b, rec.id, rec.y, cov)
            elif isinstance(rec, GpsRecord):
                self._update(build_observation(ObservationKind.GPS, {"y": rec.y, "cov": s.gps_noise**2 * np.eye(3)}, b))
            elif isinstance(rec, MagRecord):
                if s.mag_field is None:
                    log.warning("t=%.9f: MAG record without a configured field; ignored", rec.t)
                    return
                obs = build_observation(
                    ObservationKind.MAGNETOMETER, {"y": rec.y, "cov": s.mag_noise**2 * np.eye(3), "m": s.mag_field}, b
                )
                self._update(obs)
        except UpdateRejected as e:
            self.rejected += 1
            log.warning("t=%.9f: update rejected: %s", rec.t, e)

    def _snapshot(self):
        b = self.belief
        if b.convention is Convention.ROBO:
            R = b.R.T
            v, p = -R @ b.v, -R @ b.p
        else:
            R, v, p = b.R, b.v, b.p
        return R, v, p, b.theta.bg, b.theta.ba


class QekfFilter(_Runner):
    """Quaternion EKF baseline; only IMU, contact and encoder records are used."""

    def __init__(self, belief: QekfBelief, settings: FilterSettings | None = None, first_order: bool = False):
        super().__init__(settings or FilterSettings())
        self.belief = belief
        self.first_order = first_order
        self._warned = False

    def _propagate(self, imu):
        self.belief = qekf_predict(self.belief, imu, self.noise, self.g, self.first_order)

    def _fk_update(self, meas):
        self.belief = qekf_update(self.belief, None, noise=self.noise, measurements=meas)

    def _add_contact(self, cid, alpha):
        self.belief = qekf_add_contact(self.belief, cid, alpha, self.legs[cid], self.noise.encoder**2)

    def _remove_contact(self, cid):
        self.belief = qekf_remove_contact(self.belief, cid)

    def _tracked(self, cid):
        return cid in self.belief.registry

    def _reorthonormalize(self):
        pass  # the quaternion is renormalized every step

    def _aux(self, rec):
        if not self._warned:
            log.warning("quaternion EKF ignores %s records", type(rec).__name__)
            self._warned = True

    def _snapshot(self):
        b = self.belief
        return quat_to_rot(b.q), b.v, b.p, b.bg, b.ba


def make_filter(kind: str, R0, v0, p0, settings: FilterSettings | None = None, bias0=None):
    """Build a filter of the given kind from an initial world-frame estimate.

    Raises
    ------
    ValueError
        Unknown ``kind``.
    """
    settings = settings or FilterSettings()
    R0 = np.asarray(R0, float)
    v0 = np.asarray(v0, float)
    p0 = np.asarray(p0, float)
    bias0 = np.zeros(6) if bias0 is None else np.asarray(bias0, float)
    P0 = settings.P0()
    if kind == "qekf":
        return QekfFilter(new_qekf_belief(R0, v0, p0, bias0[:3], bias0[3:], P0), settings)
    if kind not in FILTER_KINDS:
        raise ValueError(f"unknown filter {kind!r}; choose from {', '.join(FILTER_KINDS)}")
    X0 = SEK3(R0, np.vstack([v0, p0]))
    T = np.eye(15)
    T[:9, :9] = qekf_to_invariant_matrix(X0)
    b = new_belief(R0, v0, p0, bias0, T @ P0 @ T.T, ErrorFrame.RIGHT, Convention.WORLD)
    if kind == "inekf-left":
        b = switch_error_frame(b)
    elif kind == "inekf-robocentric":
        b = robo_world_flip(b, Convention.ROBO)
    return InvariantFilter(b, settings)
