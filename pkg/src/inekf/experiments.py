"""Linearization-exactness and covariance-geometry experiments.

``linearization_sweep`` starts an estimate off the true trajectory with an
orientation error ``(s, s, s)`` and propagates, without noise, both the
nonlinear estimate and the linearized error of each filter.  For the
right-invariant filter the two agree to rounding error whatever ``s`` is;
the quaternion EKF's linearized error drifts from the true one.

``covariance_clouds`` runs both filters along a walk from a prior with a
huge yaw uncertainty and samples each filter's position belief.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, replace

import numpy as np
from numpy.typing import NDArray

from .analysis import qekf_to_invariant_matrix, ring_ratio
from .dynamics import GRAVITY, ImuSample, NoiseParams, _zoh, phi_right
from .filters import FilterSettings, make_filter
from .liegroup import SEK3, compose, exp_sek3, inverse, log_sek3
from .logio import ImuRecord
from .qekf import new_qekf_belief, qekf_error, qekf_predict, qekf_transition
from .sim import TrajectorySpec, covariance_samples, generate, qekf_position_samples, substream
from .state import BiasVector, new_belief

__all__ = [
    "LinearizationRow",
    "lintest_spec",
    "imu_samples",
    "linearization_sweep",
    "covsample_spec",
    "CovarianceClouds",
    "covariance_clouds",
]


def lintest_spec(duration: float = 1.0, rate: float = 1000.0, seed: int = 0) -> TrajectorySpec:
    """Noise-free, bias-free walk at 0.5 m/s for the exactness sweep."""
    return TrajectorySpec(
        duration=duration,
        imu_rate=rate,
        encoder_rate=rate / 10 if (rate / 10).is_integer() else rate,
        speed_start=0.5,
        speed_end=0.5,
        noise=NoiseParams(0.0, 0.0, 0.0, 0.0, 0.0, 0.0, 0.0),
        seed=seed,
    )


def imu_samples(records) -> list[ImuSample]:
    """IMU samples with ``dt`` to the next IMU record (the last one is dropped)."""
    imus = [r for r in records if isinstance(r, ImuRecord)]
    return [ImuSample(a.w, a.a, b.t - a.t) for a, b in zip(imus, imus[1:])]


@dataclass(frozen=True)
class LinearizationRow:
    """Worst deviation over time between true and linearly propagated errors."""

    s: float
    inekf: float
    qekf: float


def linearization_sweep(
    imus: list[ImuSample],
    R0: NDArray,
    v0: NDArray,
    p0: NDArray,
    s_values=(0.0, math.pi / 8, math.pi / 4, 3 * math.pi / 8, math.pi / 2),
    g=GRAVITY,
) -> list[LinearizationRow]:
    """Compare true and linearized error propagation for each offset ``s``.

    Both filters start from the same estimate ``R_hat = exp((s, s, s)) R0``
    with exact velocity and position.  Each filter's initial error is the
    exact error of that estimate in its own coordinates, propagated with its
    own transition matrices; the reported number is
    ``max_t |e_true(t) - e_lin(t)|``.
    """
    g = np.asarray(g, float)
    zero = BiasVector()
    noise = NoiseParams(0.0, 0.0, 0.0, 0.0, 0.0, 0.0, 0.0)
    rows = []
    for s in s_values:
        dphi = np.full(3, float(s))
        R_hat = exp_sek3(np.r_[dphi, 0.0, 0.0, 0.0, 0.0, 0.0, 0.0]).R @ R0

        # invariant filter: mean and linear error side by side
        X = SEK3(R0, np.vstack([v0, p0]))
        Xh = SEK3(R_hat, np.vstack([v0, p0]))
        xi = log_sek3(compose(Xh, inverse(X)))
        xi = np.r_[xi, np.zeros(6)]
        worst_inv = 0.0
        for imu in imus:
            X_next = SEK3(*_step(X, imu, g))
            Xh_next = SEK3(*_step(Xh, imu, g))
            Phi = phi_right(Xh_next, Xh, imu, zero, g)
            xi = Phi @ xi
            X, Xh = X_next, Xh_next
            true = log_sek3(compose(Xh, inverse(X)))
            worst_inv = max(worst_inv, float(np.linalg.norm(true - xi[:9])))

        # quaternion EKF
        qb = new_qekf_belief(R_hat, v0, p0, np.zeros(3), np.zeros(3), np.zeros((15, 15)))
        Rt, vt, pt = np.asarray(R0, float), np.asarray(v0, float), np.asarray(p0, float)
        dx = np.r_[qekf_error(qb, Rt, vt, pt), np.zeros(6)]
        worst_q = 0.0
        for imu in imus:
            Phi = qekf_transition(qb, imu)
            dx = Phi @ dx
            qb = qekf_predict(qb, imu, noise, g)
            Rt, vt, pt = _zoh(Rt, vt, pt, imu.w_meas, imu.a_meas, imu.dt, g)
            true = qekf_error(qb, Rt, vt, pt)
            worst_q = max(worst_q, float(np.linalg.norm(true - dx[:9])))
        rows.append(LinearizationRow(float(s), worst_inv, worst_q))
    return rows


def _step(X: SEK3, imu: ImuSample, g):
    R1, v1, p1 = _zoh(X.R, X.cols[0], X.cols[1], imu.w_meas, imu.a_meas, imu.dt, g)
    return R1, np.vstack([v1, p1])


def covsample_spec(duration: float = 8.0, speed: float = 1.0, seed: int = 0) -> TrajectorySpec:
    """Straight walk at ``speed`` m/s starting from rest at the world origin."""
    return TrajectorySpec(
        duration=duration,
        speed_start=0.0,
        speed_end=speed,
        ramp_start=0.0,
        ramp_duration=1.0,
        seed=seed,
    )


@dataclass
class CovarianceClouds:
    t: float
    p_true: NDArray
    inekf: NDArray
    qekf: NDArray
    inekf_ratio: float
    qekf_ratio: float


def covariance_clouds(
    log,
    t_sample: float = 8.0,
    yaw_std: float = 2 * math.pi,
    n: int = 10_000,
    seed: int = 0,
    settings: FilterSettings | None = None,
) -> CovarianceClouds:
    """Sample both filters' position beliefs at ``t_sample``.

    The filters start at the true state; the prior has standard deviation
    ``yaw_std`` about the vertical body axis and the configured values
    elsewhere.  Ring ratios are computed about the world origin in the
    horizontal plane.
    """
    settings = settings or FilterSettings()
    tr = log.truth
    recs = [r for r in log.records if r.t <= t_sample + 1e-12]
    clouds = {}
    for kind in ("inekf-right", "qekf"):
        flt = make_filter(kind, tr.R[0], tr.v[0], tr.p[0], settings)
        P0 = flt.belief.P.copy()
        # replace the prior's yaw variance before any processing
        if kind == "qekf":
            P0[2, 2] = yaw_std**2
            flt.belief = replace(flt.belief, P=P0)
        else:
            Pd = settings.P0()
            Pd[2, 2] = yaw_std**2
            T = np.eye(15)
            T[:9, :9] = qekf_to_invariant_matrix(flt.belief.X)
            flt.belief = replace(flt.belief, P=T @ Pd @ T.T)
        flt.run(recs, keep_history=False)
        rng = substream(seed, 100 + len(clouds))
        if kind == "qekf":
            clouds[kind] = qekf_position_samples(flt.belief, n, rng)
        else:
            clouds[kind] = covariance_samples(flt.belief, n, rng)
    k = int(np.searchsorted(tr.t, recs[-1].t))
    return CovarianceClouds(
        recs[-1].t,
        tr.p[k],
        clouds["inekf-right"],
        clouds["qekf"],
        ring_ratio(clouds["inekf-right"][:, :2]),
        ring_ratio(clouds["qekf"][:, :2]),
    )
