"""Synthetic legged-locomotion data and Monte-Carlo experiments.

The body follows a smooth analytic trajectory: forward speed ramps between
two values with a quintic smoothstep, and small sinusoidal sway, bob, roll,
pitch and yaw at the step frequency excite the IMU.  IMU samples are the
analytic body rates and specific forces at the middle of each sample
interval, and the ground truth is the zero-order-hold integration of those
samples, so truth and filter share the same discretization.

Two legs alternate.  Each foot is fixed in the world during stance and
follows a cycloidal arc during swing; joint angles come from damped
least-squares inverse kinematics against the true body pose.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field, replace
from typing import Callable, Sequence

import numpy as np
from numpy.typing import NDArray

from .dynamics import GRAVITY, NoiseParams, _zoh
from .kinematics import SerialLeg, default_leg, inverse_kinematics
from .liegroup import SEK3, exp_sek3, gamma, skew
from .logio import (
    ContactRecord,
    EncoderRecord,
    GpsRecord,
    ImuRecord,
    LandmarkRecord,
    MagRecord,
    Truth,
)

__all__ = [
    "TrajectorySpec",
    "SensorLog",
    "fig4_preset",
    "static_preset",
    "convergence_preset",
    "make_legs",
    "generate",
    "euler_to_rot",
    "rot_to_euler",
    "substream",
    "uniform_init",
    "RunMetrics",
    "monte_carlo",
    "covariance_samples",
    "qekf_position_samples",
]


@dataclass(frozen=True)
class TrajectorySpec:
    """Parameters of a synthetic walk.

    ``stance_fraction`` is the fraction of each foot's gait cycle
    (two steps) spent on the ground; 0.5 alternates single contacts exactly
    and 1.0 keeps both feet planted for the whole run.
    """

    duration: float = 10.0
    imu_rate: float = 200.0
    encoder_rate: float = 200.0
    step_period: float = 0.4
    stance_fraction: float = 0.6
    speed_start: float = 0.0
    speed_end: float = 0.3
    ramp_start: float = 0.5
    ramp_duration: float = 2.0
    heading: float = 0.0
    body_height: float = 0.7
    step_height: float = 0.06
    stance_width: float = 0.05
    sway: float = 0.02
    bob: float = 0.01
    roll_amp: float = 0.03
    pitch_amp: float = 0.03
    yaw_amp: float = 0.02
    leg_lengths: tuple = (0.12, 0.35, 0.40)
    hip_offset: tuple = (0.0, 0.1, -0.05)
    noise: NoiseParams = field(default_factory=NoiseParams)
    bias_gyro: tuple = (0.0, 0.0, 0.0)
    bias_accel: tuple = (0.0, 0.0, 0.0)
    slip: float = 0.0
    gravity: tuple = tuple(GRAVITY)
    landmarks: tuple = ()
    landmark_rate: float = 0.0
    landmark_range: float = 5.0
    landmark_noise: float = 0.05
    gps_rate: float = 0.0
    gps_noise: float = 0.5
    mag_rate: float = 0.0
    mag_field: tuple = (0.2, 0.0, -0.4)
    mag_noise: float = 0.01
    seed: int = 0

    def __post_init__(self):
        if not (self.imu_rate > 0 and self.encoder_rate > 0):
            raise ValueError("rates must be positive")
        if not (0.0 < self.stance_fraction <= 1.0):
            raise ValueError("stance_fraction must be in (0, 1]")
        if self.duration <= 0 or self.step_period <= 0:
            raise ValueError("duration and step_period must be positive")
        ratio = self.imu_rate / self.encoder_rate
        if abs(ratio - round(ratio)) > 1e-9:
            raise ValueError("imu_rate must be an integer multiple of encoder_rate")


def fig4_preset(**overrides) -> TrajectorySpec:
    """Short walk accelerating from rest to 0.3 m/s, no IMU bias."""
    base = dict(
        duration=3.0,
        speed_start=0.0,
        speed_end=0.3,
        ramp_start=0.2,
        ramp_duration=1.0,
        noise=NoiseParams().without_bias(),
    )
    base.update(overrides)
    return TrajectorySpec(**base)


def convergence_preset(**overrides) -> TrajectorySpec:
    """Walk used for the convergence comparison: 6 s at 100 Hz, no IMU bias.

    Long enough for the quaternion EKF to settle in most runs, coarse enough
    for a few hundred filter runs to finish in about a minute.
    """
    base = dict(duration=6.0, imu_rate=100.0, encoder_rate=100.0, seed=1)
    base.update(overrides)
    return fig4_preset(**base)


def static_preset(**overrides) -> TrajectorySpec:
    """Standing still on both feet with no body motion."""
    base = dict(
        speed_start=0.0,
        speed_end=0.0,
        stance_fraction=1.0,
        sway=0.0,
        bob=0.0,
        roll_amp=0.0,
        pitch_amp=0.0,
        yaw_amp=0.0,
    )
    base.update(overrides)
    return TrajectorySpec(**base)


def make_legs(spec_or_lengths=None, hip=None) -> list[SerialLeg]:
    """Left and right legs (contact ids 0 and 1)."""
    if isinstance(spec_or_lengths, TrajectorySpec):
        lengths, hip = spec_or_lengths.leg_lengths, spec_or_lengths.hip_offset
    else:
        lengths = spec_or_lengths or (0.12, 0.35, 0.40)
        hip = hip or (0.0, 0.1, -0.05)
    return [default_leg(1, lengths, hip), default_leg(-1, lengths, hip)]


def euler_to_rot(yaw: float, pitch: float, roll: float) -> NDArray:
    """``Rz(yaw) Ry(pitch) Rx(roll)``."""
    cy, sy = math.cos(yaw), math.sin(yaw)
    cp, sp = math.cos(pitch), math.sin(pitch)
    cr, sr = math.cos(roll), math.sin(roll)
    return np.array(
        [
            [cy * cp, cy * sp * sr - sy * cr, cy * sp * cr + sy * sr],
            [sy * cp, sy * sp * sr + cy * cr, sy * sp * cr - cy * sr],
            [-sp, cp * sr, cp * cr],
        ]
    )


def rot_to_euler(R: NDArray) -> tuple[float, float, float]:
    """Inverse of :func:`euler_to_rot`: ``(yaw, pitch, roll)``."""
    pitch = math.asin(max(-1.0, min(1.0, -R[2, 0])))
    return math.atan2(R[1, 0], R[0, 0]), pitch, math.atan2(R[2, 1], R[2, 2])


def substream(seed: int, channel: int, run: int = 0) -> np.random.Generator:
    """Independent counter-based generator for one noise channel."""
    ss = np.random.SeedSequence([seed & 0xFFFFFFFFFFFFFFFF, channel, run])
    return np.random.Generator(np.random.Philox(ss))


_CH_GYRO, _CH_ACCEL, _CH_BG, _CH_BA, _CH_ENC, _CH_SLIP, _CH_LM, _CH_GPS, _CH_MAG, _CH_INIT = range(10)


# -- analytic body trajectory -------------------------------------------------


def _smooth(u):
    """Quintic smoothstep, its derivative and its integral."""
    if u <= 0.0:
        return 0.0, 0.0, 0.0
    if u >= 1.0:
        return 1.0, 0.0, 0.5 + (u - 1.0)
    return (
        10 * u**3 - 15 * u**4 + 6 * u**5,
        30 * u**2 - 60 * u**3 + 30 * u**4,
        2.5 * u**4 - 3 * u**5 + u**6,
    )


class _Body:
    def __init__(self, spec: TrajectorySpec):
        self.s = spec
        self.w1 = math.pi / spec.step_period  # sway / roll / yaw (one cycle per stride)
        self.w2 = 2.0 * self.w1  # bob / pitch (one cycle per step)

    def forward(self, t):
        s = self.s
        dv = s.speed_end - s.speed_start
        Tr = max(s.ramp_duration, 1e-9)
        u = (t - s.ramp_start) / Tr
        S, dS, IS = _smooth(u)
        x = s.speed_start * t + dv * Tr * IS
        return x, s.speed_start + dv * S, dv * dS / Tr

    def position(self, t):
        """Position, velocity and acceleration in the world frame."""
        s = self.s
        x, xd, xdd = self.forward(t)
        y = s.sway * math.sin(self.w1 * t)
        yd = s.sway * self.w1 * math.cos(self.w1 * t)
        ydd = -s.sway * self.w1**2 * math.sin(self.w1 * t)
        z = s.body_height + s.bob * math.cos(self.w2 * t)
        zd = -s.bob * self.w2 * math.sin(self.w2 * t)
        zdd = -s.bob * self.w2**2 * math.cos(self.w2 * t)
        c, sn = math.cos(s.heading), math.sin(s.heading)
        rot = np.array([[c, -sn, 0.0], [sn, c, 0.0], [0.0, 0.0, 1.0]])
        return (
            rot @ np.array([x, y, z]),
            rot @ np.array([xd, yd, zd]),
            rot @ np.array([xdd, ydd, zdd]),
        )

    def euler(self, t):
        s = self.s
        yaw = s.heading + s.yaw_amp * math.sin(self.w1 * t)
        yawd = s.yaw_amp * self.w1 * math.cos(self.w1 * t)
        pitch = s.pitch_amp * math.sin(self.w2 * t)
        pitchd = s.pitch_amp * self.w2 * math.cos(self.w2 * t)
        roll = s.roll_amp * math.sin(self.w1 * t)
        rolld = s.roll_amp * self.w1 * math.cos(self.w1 * t)
        return (yaw, pitch, roll), (yawd, pitchd, rolld)

    def rotation(self, t):
        (y, p, r), _ = self.euler(t)
        return euler_to_rot(y, p, r)

    def imu(self, t, g):
        """True body angular rate and specific force at time ``t``."""
        (yaw, pitch, roll), (yd, pd, rd) = self.euler(t)
        sr, cr = math.sin(roll), math.cos(roll)
        sp, cp = math.sin(pitch), math.cos(pitch)
        w = np.array([rd - yd * sp, pd * cr + yd * cp * sr, -pd * sr + yd * cp * cr])
        R = euler_to_rot(yaw, pitch, roll)
        _, _, acc = self.position(t)
        return w, R.T @ (acc - g)


# -- gait ---------------------------------------------------------------------


class _Gait:
    """Stance intervals of the two feet."""

    def __init__(self, spec: TrajectorySpec):
        self.T = spec.step_period
        self.always = spec.stance_fraction >= 1.0
        self.Tst = spec.stance_fraction * 2.0 * self.T

    def interval(self, foot: int, n: int):
        c = (2 * n + foot + 0.5) * self.T
        return c - 0.5 * self.Tst, c + 0.5 * self.Tst

    def cycle_at(self, foot: int, t: float) -> int:
        """Index of the latest stance interval starting at or before ``t``."""
        n = math.floor((t + 0.5 * self.Tst) / (2 * self.T) - (foot + 0.5) / 2)
        while self.interval(foot, n + 1)[0] <= t:
            n += 1
        while self.interval(foot, n)[0] > t:
            n -= 1
        return n

    def in_stance(self, foot: int, t: float) -> bool:
        if self.always:
            return True
        s, e = self.interval(foot, self.cycle_at(foot, t))
        return s <= t <= e


@dataclass
class SensorLog:
    """Time-ordered sensor records with ground truth at the IMU ticks."""

    records: list
    truth: Truth
    spec: TrajectorySpec | None = None

    def __post_init__(self):
        ts = [r.t for r in self.records]
        if any(b < a for a, b in zip(ts, ts[1:])):
            raise ValueError("records are not time ordered")


def generate(spec: TrajectorySpec) -> SensorLog:
    """Simulate a walk and the resulting sensor streams.

    Raises
    ------
    IKError
        If a planned foot position is out of reach of the leg.
    """
    g = np.asarray(spec.gravity, float)
    body = _Body(spec)
    gait = _Gait(spec)
    legs = make_legs(spec)
    n = int(round(spec.duration * spec.imu_rate))
    dt = 1.0 / spec.imu_rate
    times = np.round(np.arange(n + 1) * dt, 9)
    enc_every = int(round(spec.imu_rate / spec.encoder_rate))
    noise = spec.noise

    rng_g = substream(spec.seed, _CH_GYRO)
    rng_a = substream(spec.seed, _CH_ACCEL)
    rng_bg = substream(spec.seed, _CH_BG)
    rng_ba = substream(spec.seed, _CH_BA)
    rng_enc = substream(spec.seed, _CH_ENC)
    rng_slip = substream(spec.seed, _CH_SLIP)
    rng_lm = substream(spec.seed, _CH_LM)
    rng_gps = substream(spec.seed, _CH_GPS)
    rng_mag = substream(spec.seed, _CH_MAG)

    # truth by zero-order-hold integration of midpoint IMU samples
    R = np.empty((n + 1, 3, 3))
    v = np.empty((n + 1, 3))
    p = np.empty((n + 1, 3))
    w_true = np.empty((n + 1, 3))
    a_true = np.empty((n + 1, 3))
    p[0], v[0], _ = body.position(0.0)
    R[0] = body.rotation(0.0)
    for k in range(n + 1):
        w_true[k], a_true[k] = body.imu(times[k] + 0.5 * dt, g)
        if k < n:
            R[k + 1], v[k + 1], p[k + 1] = _zoh(R[k], v[k], p[k], w_true[k], a_true[k], dt, g)

    bg = np.empty((n + 1, 3))
    ba = np.empty((n + 1, 3))
    bg[0], ba[0] = spec.bias_gyro, spec.bias_accel
    sq = math.sqrt(dt)
    for k in range(n):
        bg[k + 1] = bg[k] + noise.gyro_bias * sq * rng_bg.standard_normal(3)
        ba[k + 1] = ba[k] + noise.accel_bias * sq * rng_ba.standard_normal(3)

    # foot placement at mid-stance on flat ground at z = 0, ``stance_width``
    # outside the lateral hip link: the leg has no hip roll, so targets
    # closer than that link to the hip-yaw axis are out of reach
    def foothold(foot, n_cycle):
        s, e = gait.interval(foot, n_cycle)
        c = 0.5 * (s + e)
        pc, _, _ = body.position(c)
        yaw = spec.heading
        side = 1.0 if foot == 0 else -1.0
        lat = side * (spec.hip_offset[1] + spec.leg_lengths[0] + spec.stance_width)
        off = np.array([-math.sin(yaw) * lat, math.cos(yaw) * lat, 0.0])
        return np.array([pc[0], pc[1], 0.0]) + off

    footholds = {}

    def hold(foot, n_cycle):
        key = (foot, n_cycle)
        if key not in footholds:
            footholds[key] = foothold(foot, n_cycle)
        return footholds[key]

    def foot_position(foot, t):
        if gait.always:
            return hold(foot, 0 if foot == 0 else -1)
        m = gait.cycle_at(foot, t)
        s, e = gait.interval(foot, m)
        if t <= e:
            return hold(foot, m)
        s1, _ = gait.interval(foot, m + 1)
        tau = (t - e) / (s1 - e)
        a, b = hold(foot, m), hold(foot, m + 1)
        horiz = a + (b - a) * (tau - math.sin(2 * math.pi * tau) / (2 * math.pi))
        horiz[2] = spec.step_height * 0.5 * (1.0 - math.cos(2 * math.pi * tau))
        return horiz

    w_meas = w_true + bg + noise.gyro / sq * rng_g.standard_normal((n + 1, 3))
    a_meas = a_true + ba + noise.accel / sq * rng_a.standard_normal((n + 1, 3))

    feet = np.empty((n + 1, 2, 3))
    stance = np.zeros((n + 1, 2), bool)
    slip = np.zeros((2, 3))
    alpha_prev = [np.array([0.0, -0.3, 0.6]), np.array([0.0, -0.3, 0.6])]
    lm = np.asarray(spec.landmarks, float).reshape(-1, 3)
    lm_every = int(round(spec.imu_rate / spec.landmark_rate)) if spec.landmark_rate > 0 else 0
    gps_every = int(round(spec.imu_rate / spec.gps_rate)) if spec.gps_rate > 0 else 0
    mag_every = int(round(spec.imu_rate / spec.mag_rate)) if spec.mag_rate > 0 else 0
    mfield = np.asarray(spec.mag_field, float)

    records: list = []
    for k in range(n + 1):
        t = times[k]
        records.append(ImuRecord(t, w_meas[k], a_meas[k]))
        for f in range(2):
            st = gait.in_stance(f, t)
            stance[k, f] = st
            if st and spec.slip > 0.0 and k > 0:
                slip[f] += spec.slip * sq * rng_slip.standard_normal(3)
            elif not st:
                slip[f] = 0.0
            feet[k, f] = foot_position(f, t) + slip[f]
        if k % enc_every == 0:
            alphas = []
            for f, leg in enumerate(legs):
                target = R[k].T @ (feet[k, f] - p[k])
                alpha_prev[f] = inverse_kinematics(leg, target, alpha_prev[f])
                alphas.append(alpha_prev[f] + noise.encoder * rng_enc.standard_normal(leg.n_joints))
            for f in range(2):
                records.append(ContactRecord(t, f, bool(stance[k, f])))
            records.append(EncoderRecord(t, np.concatenate(alphas)))
        if lm_every and k % lm_every == 0:
            for i, l in enumerate(lm):
                y = R[k].T @ (l - p[k])
                if np.linalg.norm(y) <= spec.landmark_range:
                    records.append(LandmarkRecord(t, i, y + spec.landmark_noise * rng_lm.standard_normal(3)))
        if gps_every and k % gps_every == 0:
            records.append(GpsRecord(t, p[k] + spec.gps_noise * rng_gps.standard_normal(3)))
        if mag_every and k % mag_every == 0:
            records.append(MagRecord(t, R[k].T @ mfield + spec.mag_noise * rng_mag.standard_normal(3)))

    truth = Truth(times, R, v, p, bg, ba, feet, stance)
    return SensorLog(records, truth, spec)


# -- Monte Carlo --------------------------------------------------------------


@dataclass(frozen=True)
class uniform_init:
    """Initial-estimate sampler: Euler angles and velocity offset uniformly.

    Instances are plain data so they can be sent to worker processes.
    """

    euler_range_deg: float = 30.0
    vel_range: float = 1.0

    def __call__(self, rng: np.random.Generator, R0, v0, p0):
        rad = math.radians(self.euler_range_deg)
        yaw, pitch, roll = rot_to_euler(R0)
        dy, dp, dr = rng.uniform(-rad, rad, 3)
        R_hat = euler_to_rot(yaw + dy, pitch + dp, roll + dr)
        v_hat = v0 + rng.uniform(-self.vel_range, self.vel_range, 3)
        return R_hat, v_hat, np.array(p0, float)


@dataclass
class RunMetrics:
    """Error time series of one run.

    ``tilt`` holds absolute roll and pitch errors (rad), ``vel`` the body-frame
    velocity error norm (m/s) and ``pos`` the position error norm (m).
    """

    run: int
    t: NDArray
    tilt: NDArray
    vel: NDArray
    pos: NDArray
    time_to_converge: float

    def steady_tilt(self, window: float = 0.5) -> float:
        """Mean of the larger tilt error over the final ``window`` seconds."""
        m = self.t >= self.t[-1] - window
        return float(np.mean(np.max(self.tilt[m], axis=1)))


def monte_carlo(
    log: SensorLog,
    n_runs: int,
    init_sampler: Callable | None = None,
    filter_kind: str = "inekf-right",
    seed: int = 0,
    settings=None,
    tilt_tol_deg: float = 2.0,
    vel_tol: float = 0.05,
    hold: float = 0.2,
    jobs: int = 1,
) -> list[RunMetrics]:
    """Run a filter ``n_runs`` times on one log from sampled initial estimates.

    Run ``i`` draws its initial estimate from a generator derived from
    ``(seed, i)``, so results do not depend on ``jobs`` or on run order.
    """
    from .filters import FilterSettings

    init_sampler = init_sampler or uniform_init()
    settings = settings or FilterSettings()
    args = [(log, i, init_sampler, filter_kind, seed, settings, tilt_tol_deg, vel_tol, hold) for i in range(n_runs)]
    if jobs > 1 and n_runs > 1:
        from concurrent.futures import ProcessPoolExecutor

        with ProcessPoolExecutor(max_workers=jobs) as ex:
            return list(ex.map(_one_run, args))
    return [_one_run(a) for a in args]


def _one_run(args) -> RunMetrics:
    from .analysis import body_velocity_error, tilt_errors, time_to_converge
    from .filters import make_filter

    log, i, sampler, kind, seed, settings, tilt_tol_deg, vel_tol, hold = args
    tr = log.truth
    rng = substream(seed, _CH_INIT, i)
    R0, v0, p0 = sampler(rng, tr.R[0], tr.v[0], tr.p[0])
    flt = make_filter(kind, R0, v0, p0, settings)
    est = flt.run(log.records, keep_history=True)
    idx = np.searchsorted(tr.t, est.t)
    idx = np.clip(idx, 0, len(tr.t) - 1)
    tilt = np.array([tilt_errors(Rh, tr.R[j]) for Rh, j in zip(est.R, idx)])
    vel = np.array([body_velocity_error(Rh, vh, tr.R[j], tr.v[j]) for Rh, vh, j in zip(est.R, est.v, idx)])
    pos = np.linalg.norm(est.p - tr.p[idx], axis=1)
    ok = (np.max(tilt, axis=1) < math.radians(tilt_tol_deg)) & (vel < vel_tol)
    return RunMetrics(i, est.t, tilt, vel, pos, time_to_converge(est.t, ok, hold))


# -- covariance sampling ------------------------------------------------------


def covariance_samples(belief, n: int, rng: np.random.Generator | None = None) -> NDArray:
    """World positions drawn from an invariant filter's uncertainty.

    Draws ``xi ~ N(0, P)`` and maps it through the group: ``exp(xi) X`` for a
    right-frame belief, ``X exp(xi)`` for a left-frame one.  Robo-centric
    beliefs are converted to world-centric first.
    """
    from .analysis import robocentric_to_world
    from .state import Convention, ErrorFrame

    rng = rng or np.random.default_rng(0)
    if belief.convention is Convention.ROBO:
        belief = robocentric_to_world(belief)
    P = belief.P[:9, :9]
    L = _psd_factor(P)
    xi = rng.standard_normal((n, 9)) @ L.T
    phi, xp = xi[:, 0:3], xi[:, 6:9]
    G0, G1 = _batch_gamma01(phi)
    if belief.error_frame is ErrorFrame.RIGHT:
        return np.einsum("nij,j->ni", G0, belief.p) + np.einsum("nij,nj->ni", G1, xp)
    return belief.p + np.einsum("ij,nj->ni", belief.R, np.einsum("nij,nj->ni", G1, xp))


def qekf_position_samples(qbelief, n: int, rng: np.random.Generator | None = None) -> NDArray:
    """Additive Gaussian position samples of the quaternion EKF."""
    rng = rng or np.random.default_rng(0)
    L = _psd_factor(qbelief.P[6:9, 6:9])
    return qbelief.p + rng.standard_normal((n, 3)) @ L.T


def _psd_factor(P):
    lam, V = np.linalg.eigh(0.5 * (P + P.T))
    return V * np.sqrt(np.clip(lam, 0.0, None))


def _batch_gamma01(phi):
    """Batched ``Gamma_0`` and ``Gamma_1`` for an ``(n, 3)`` array."""
    th = np.linalg.norm(phi, axis=1)
    small = th < 1e-4
    ts = np.where(small, 1.0, th)
    a0 = np.where(small, 1 - th**2 / 6, np.sin(ts) / ts)
    b0 = np.where(small, 0.5 - th**2 / 24, (1 - np.cos(ts)) / ts**2)
    a1 = b0
    b1 = np.where(small, 1 / 6 - th**2 / 120, (ts - np.sin(ts)) / ts**3)
    K = np.zeros((phi.shape[0], 3, 3))
    K[:, 0, 1], K[:, 0, 2] = -phi[:, 2], phi[:, 1]
    K[:, 1, 0], K[:, 1, 2] = phi[:, 2], -phi[:, 0]
    K[:, 2, 0], K[:, 2, 1] = -phi[:, 1], phi[:, 0]
    K2 = K @ K
    I = np.eye(3)
    G0 = I + a0[:, None, None] * K + b0[:, None, None] * K2
    G1 = I + a1[:, None, None] * K + b1[:, None, None] * K2
    return G0, G1
