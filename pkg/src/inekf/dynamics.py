"""IMU propagation for the contact-aided invariant filter.

The mean is integrated in closed form under a zero-order hold on the IMU
samples.  The covariance uses the exact state transition matrix of the
linearized invariant error, ``Phi_l`` in left-invariant coordinates or
``Phi_r`` in right-invariant ones, and the discrete noise approximation
``Q_d = Phi Qbar Phi^T dt``.

Robo-centric beliefs hold the inverse of the world-centric state.  Inverting
the state swaps left- and right-invariant errors and flips their sign, so a
robo-centric belief is propagated by mapping it onto the equivalent world
belief, propagating that, and mapping back.
"""

from __future__ import annotations

from dataclasses import dataclass, replace
from functools import lru_cache
from math import sqrt

import numpy as np
from numpy.typing import ArrayLike, NDArray
from scipy.integrate import quad_vec
from scipy.linalg import expm

from .liegroup import SEK3, adjoint, gamma, gammas, inverse, skew, skew_stack
from .state import Convention, ErrorFrame, FilterBelief, PointKind, symmetrize

__all__ = [
    "GRAVITY",
    "MAX_DT",
    "ImuSample",
    "NoiseParams",
    "propagate_mean",
    "propagate_mean_robocentric",
    "psi1",
    "psi2",
    "phi_left",
    "phi_right",
    "phi_right_sandwich",
    "a_left",
    "a_right",
    "process_noise",
    "discrete_noise",
    "discrete_noise_exact",
    "propagate",
    "robo_world_flip",
]

GRAVITY = np.array([0.0, 0.0, -9.81])
MAX_DT = 0.1

# Below this value of |w| dt the Psi coefficients come from their Taylor
# series in theta^2; above it the closed forms lose at most ~1e-12 relative.
_PSI_SWITCH = 0.25


@dataclass(frozen=True)
class ImuSample:
    """Gyro and accelerometer reading held constant over ``dt`` seconds."""

    w_meas: NDArray
    a_meas: NDArray
    dt: float

    def __post_init__(self):
        w = np.array(self.w_meas, dtype=float).reshape(3)
        a = np.array(self.a_meas, dtype=float).reshape(3)
        dt = float(self.dt)
        if not (np.all(np.isfinite(w)) and np.all(np.isfinite(a)) and np.isfinite(dt)):
            raise ValueError("IMU sample has non-finite entries")
        if dt < 0.0 or dt > MAX_DT:
            raise ValueError(f"IMU dt={dt} outside [0, {MAX_DT}]")
        object.__setattr__(self, "w_meas", w)
        object.__setattr__(self, "a_meas", a)
        object.__setattr__(self, "dt", dt)


@dataclass(frozen=True)
class NoiseParams:
    """Noise standard deviations.

    The IMU and contact entries are continuous-time densities (per sqrt(s)),
    the encoder entry is a per-sample standard deviation in radians.
    Defaults are the values used for the legged-robot experiments.
    """

    gyro: float = 0.002
    accel: float = 0.04
    gyro_bias: float = 0.001
    accel_bias: float = 0.001
    contact: float = 0.05
    encoder: float = np.deg2rad(1.0)
    landmark: float = 0.0

    def __post_init__(self):
        for k, v in self.__dict__.items():
            if not v >= 0.0:
                raise ValueError(f"noise std {k} must be >= 0, got {v}")

    def without_bias(self) -> "NoiseParams":
        return replace(self, gyro_bias=0.0, accel_bias=0.0)


def _bias_corrected(imu: ImuSample, theta) -> tuple[NDArray, NDArray]:
    return imu.w_meas - theta.bg, imu.a_meas - theta.ba


def _zoh(R, v, p, w, a, dt, g, G=None):
    G0, G1, G2 = gammas(w * dt) if G is None else G[:3]
    R1 = R @ G0
    v1 = v + R @ (G1 @ a) * dt + g * dt
    p1 = p + v * dt + R @ (G2 @ a) * (dt * dt) + 0.5 * g * (dt * dt)
    return R1, v1, p1


def propagate_mean(belief: FilterBelief, imu: ImuSample, g: ArrayLike = GRAVITY, _G=None) -> FilterBelief:
    """Zero-order-hold mean propagation of a world-centric belief.

    Points and biases are constant; ``v`` and ``p`` pick up gravity exactly.
    """
    if belief.convention is not Convention.WORLD:
        raise ValueError("propagate_mean expects a world-centric belief")
    w, a = _bias_corrected(imu, belief.theta)
    R1, v1, p1 = _zoh(belief.R, belief.v, belief.p, w, a, imu.dt, np.asarray(g, float), _G)
    cols = belief.X.cols.copy()
    cols[0], cols[1] = v1, p1
    return replace(belief, X=SEK3(R1, cols))


def propagate_mean_robocentric(
    belief: FilterBelief, imu: ImuSample, g: ArrayLike = GRAVITY
) -> FilterBelief:
    """Mean propagation of a robo-centric belief.

    The body-frame dynamics are integrated by applying the world-centric
    closed form to the inverted state and inverting back, which is exact
    under the zero-order hold.
    """
    if belief.convention is not Convention.ROBO:
        raise ValueError("propagate_mean_robocentric expects a robo-centric belief")
    Xw = inverse(belief.X)
    w, a = _bias_corrected(imu, belief.theta)
    R1, v1, p1 = _zoh(Xw.R, Xw.cols[0], Xw.cols[1], w, a, imu.dt, np.asarray(g, float))
    cols = Xw.cols.copy()
    cols[0], cols[1] = v1, p1
    return replace(belief, X=inverse(SEK3(R1, cols)))


# Taylor coefficients, in powers of theta^2, of the scaled coefficient
# functions h_ij(theta) multiplying W^i A W^j (W = skew(w), A = skew(a)).
_PSI1_SERIES = {
    (1, 0): (1/3, -1/30, 1/840, -1/45360, 1/3991680, -1/518918400, 1/93405312000, -1/22230464256000),
    (1, 1): (-1/8, 1/48, -1/640, 17/241920, -31/14515200, 1/21288960, -5461/6974263296000, 257/25107347865600),
    (1, 2): (1/30, -13/2520, 1/3024, -251/19958400, 509/1556755200, -1363/217945728000, 2047/22230464256000, -851/789903249408000),
    (2, 0): (1/8, -1/144, 1/5760, -1/403200, 1/43545600, -1/6706022400, 1/1394852659200, -1/376610217984000),
    (2, 1): (-1/20, 1/168, -1/2880, 17/1330560, -31/94348800, 1/159667200, -5461/59281238016000, 257/238519804723200),
    (2, 2): (1/72, -1/720, 41/604800, -23/10886400, 157/3353011200, -31/39626496000, 1927/188305108992000, -3449/32011868528640000),
}
_PSI2_SERIES = {
    (1, 0): (1/12, -1/180, 1/6720, -1/453600, 1/47900160, -1/7264857600, 1/1494484992000, -1/400148356608000),
    (1, 1): (-1/40, 1/336, -1/5760, 17/2661120, -31/188697600, 1/319334400, -5461/118562476032000, 257/477039609446400),
    (1, 2): (1/180, -13/20160, 1/30240, -251/239500800, 509/21794572800, -1363/3487131648000, 2047/400148356608000, -851/15798064988160000),
    (2, 0): (1/40, -1/1008, 1/51840, -1/4435200, 1/566092800, -1/100590336000, 1/23712495206400, -1/7155594141696000),
    (2, 1): (-1/120, 1/1344, -1/28800, 17/15966720, -31/1320883200, 1/2554675200, -5461/1067062284288000, 257/4770396094464000),
    (2, 2): (1/504, -1/6480, 41/6652800, -23/141523200, 157/50295168000, -31/673650432000, 1927/3577797070848000, -3449/672249239101440000),
}
_KEYS = ((1, 0), (1, 1), (1, 2), (2, 0), (2, 1), (2, 2))


def _psi1_closed(t: float) -> tuple:
    s, c, s2, c2 = np.sin(t), np.cos(t), np.sin(2 * t), np.cos(2 * t)
    return (
        (s - t * c) / t**3,
        (4 * c - c2 - 3) / (4 * t**4),
        (4 * s + s2 - 4 * t * c - 2 * t) / (4 * t**5),
        (t * t - 2 * t * s - 2 * c + 2) / (2 * t**4),
        (8 * s - s2 - 6 * t) / (4 * t**5),
        (t - s) ** 2 / (2 * t**6),
    )


def _psi2_closed(t: float) -> tuple:
    s, c, s2, c2 = np.sin(t), np.cos(t), np.sin(2 * t), np.cos(2 * t)
    return (
        (2 - 2 * c - t * s) / t**4,
        (8 * s - s2 - 6 * t) / (8 * t**5),
        (17 - 2 * t * t - 8 * t * s - 16 * c - c2) / (8 * t**6),
        (t**3 + 6 * t - 12 * s + 6 * t * c) / (6 * t**5),
        (15 - 6 * t * t - 16 * c + c2) / (8 * t**6),
        (4 * t**3 + 6 * t - 24 * s - 3 * s2 + 24 * t * c) / (24 * t**7),
    )


# both orders stacked: rows 0..5 are psi1's h_ij, rows 6..11 psi2's
_PSI_COEF = np.array([_PSI1_SERIES[k] for k in _KEYS] + [_PSI2_SERIES[k] for k in _KEYS])
_PSI_EXP = np.array([i + j + o + 1 for o in (1, 2) for i, j in _KEYS], float)
_POW8 = np.arange(8)


def _psi_pair(w: ArrayLike, a: ArrayLike, dt: float, G23=None) -> tuple[NDArray, NDArray]:
    """``(psi1, psi2)``; ``G23`` optionally supplies ``Gamma_2, Gamma_3`` of ``w dt``."""
    w = np.asarray(w, dtype=float)
    A = skew(a)
    W = skew(w)
    theta = sqrt(float(w @ w)) * dt
    WA = W @ A
    WWA = W @ WA
    WAW = WA @ W
    WWAW = WWA @ W
    terms = np.array((WA, WAW, WAW @ W, WWA, WWAW, WWAW @ W)).reshape(6, 9)
    # Gamma_m(-phi) = Gamma_m(phi)^T
    G2, G3 = gammas(w * dt, (2, 3)) if G23 is None else G23
    if theta < _PSI_SWITCH:
        h = _PSI_COEF @ (theta * theta) ** _POW8
    else:
        h = np.array(_psi1_closed(theta) + _psi2_closed(theta))
    M = ((h * dt**_PSI_EXP).reshape(2, 6) @ terms).reshape(2, 3, 3)
    return A @ G2.T * (dt * dt) + M[0], A @ G3.T * (dt * dt * dt) + M[1]


def psi1(w: ArrayLike, a: ArrayLike, dt: float) -> NDArray:
    """Closed form of ``int_0^dt skew(Gamma_0(w s) a) Gamma_1(w s) s ds``.

    Together with ``Gamma_0(w dt)^T`` it gives the velocity/gyro-bias block of
    the left-invariant transition matrix.
    """
    return _psi_pair(w, a, dt)[0]


def psi2(w: ArrayLike, a: ArrayLike, dt: float) -> NDArray:
    """Closed form of ``int_0^dt psi1(w, a, s) ds`` (position/gyro-bias block)."""
    return _psi_pair(w, a, dt)[1]


def phi_left(imu: ImuSample, theta_hat, n_points: int = 1) -> NDArray:
    """World-centric left-invariant transition matrix ``expm(A_l dt)``.

    Parameters
    ----------
    imu : ImuSample
        Raw IMU sample; biases are removed with ``theta_hat``.
    theta_hat : BiasVector
        Bias estimate at the start of the step.
    n_points : int
        Number of tracked points (contacts and landmarks).

    Returns
    -------
    ndarray, shape (15 + 3 n_points, 15 + 3 n_points)
    """
    w, a = _bias_corrected(imu, theta_hat)
    dt = imu.dt
    G0, G1, G2, G3 = gammas(w * dt, (0, 1, 2, 3))
    G0t = G0.T
    n = 15 + 3 * n_points
    b = n - 6
    Phi = np.eye(n)
    for i in range(0, b, 3):
        Phi[i : i + 3, i : i + 3] = G0t
    Phi[3:6, 0:3] = -G0t @ skew(G1 @ a) * dt
    Phi[6:9, 0:3] = -G0t @ skew(G2 @ a) * (dt * dt)
    Phi[6:9, 3:6] = G0t * dt
    G0tG1dt = G0t @ G1 * dt
    Phi[0:3, b : b + 3] = -G0tG1dt
    P1, P2 = _psi_pair(w, a, dt, (G2, G3))
    Phi[3:6, b : b + 3] = G0t @ P1
    Phi[6:9, b : b + 3] = G0t @ P2
    Phi[3:6, b + 3 : b + 6] = -G0tG1dt
    Phi[6:9, b + 3 : b + 6] = -G0t @ G2 * (dt * dt)
    return Phi


def phi_right(
    X_next: SEK3, X_prev: SEK3, imu: ImuSample, theta_hat, g: ArrayLike = GRAVITY, _G=None
) -> NDArray:
    """World-centric right-invariant transition matrix, analytical blocks.

    ``X_prev`` and ``X_next`` are the means before and after
    :func:`propagate_mean`.  Without biases the matrix only depends on
    gravity and ``dt``.
    """
    w, a = _bias_corrected(imu, theta_hat)
    dt = imu.dt
    _, G1, G2, G3 = gammas(w * dt, (0, 1, 2, 3)) if _G is None else _G
    Rk = X_prev.R
    n = X_next.dim + 6
    b = n - 6
    Phi = _phi_right_base(n, dt, *np.asarray(g, dtype=float)).copy()
    RG1dt = Rk @ G1 * dt
    Phi[0:3, b : b + 3] = -RG1dt
    Phi[3:b, b : b + 3] = -(skew_stack(X_next.cols) @ RG1dt).reshape(b - 3, 3)
    P1, P2 = _psi_pair(w, a, dt, (G2, G3))
    Phi[3:6, b : b + 3] += Rk @ P1
    Phi[6:9, b : b + 3] += Rk @ P2
    Phi[3:6, b + 3 : b + 6] = -RG1dt
    Phi[6:9, b + 3 : b + 6] = -Rk @ G2 * (dt * dt)
    return Phi


@lru_cache(maxsize=64)
def _phi_right_base(n: int, dt: float, gx: float, gy: float, gz: float) -> NDArray:
    """State-independent part of the right-invariant transition matrix."""
    Phi = np.eye(n)
    Sg = skew((gx, gy, gz))
    Phi[3:6, 0:3] = Sg * dt
    Phi[6:9, 0:3] = 0.5 * Sg * (dt * dt)
    Phi[6:9, 3:6] = np.eye(3) * dt
    Phi.flags.writeable = False
    return Phi


def phi_right_sandwich(X_next: SEK3, X_prev: SEK3, imu: ImuSample, theta_hat) -> NDArray:
    """``blockdiag(Ad_{X_next}, I) Phi_l blockdiag(Ad_{X_prev}^-1, I)``."""
    Phi_l = phi_left(imu, theta_hat, X_prev.K - 2)
    n = X_prev.dim
    L = np.eye(n + 6)
    L[:n, :n] = adjoint(X_next)
    Rm = np.eye(n + 6)
    Rm[:n, :n] = adjoint(inverse(X_prev))
    return L @ Phi_l @ Rm


def a_left(imu: ImuSample, theta_hat, n_points: int = 1) -> NDArray:
    """Continuous world-centric left-invariant error dynamics (with biases)."""
    w, a = _bias_corrected(imu, theta_hat)
    n = 15 + 3 * n_points
    b = n - 6
    A = np.zeros((n, n))
    W = skew(w)
    for i in range(0, b, 3):
        A[i : i + 3, i : i + 3] = -W
    A[3:6, 0:3] = -skew(a)
    A[6:9, 3:6] = np.eye(3)
    A[0:3, b : b + 3] = -np.eye(3)
    A[3:6, b + 3 : b + 6] = -np.eye(3)
    return A


def a_right(X: SEK3, imu: ImuSample, theta_hat, g: ArrayLike = GRAVITY) -> NDArray:
    """Continuous world-centric right-invariant error dynamics (with biases)."""
    n = X.dim + 6
    b = n - 6
    A = np.zeros((n, n))
    R = X.R
    A[3:6, 0:3] = skew(np.asarray(g, float))
    A[6:9, 3:6] = np.eye(3)
    A[0:3, b : b + 3] = -R
    for i, c in enumerate(X.cols):
        A[3 + 3 * i : 6 + 3 * i, b : b + 3] = -skew(c) @ R
    A[3:6, b + 3 : b + 6] = -R
    return A


def process_noise(belief: FilterBelief, noise: NoiseParams) -> NDArray:
    """``Cov(w)`` in left-invariant (body) coordinates, diagonal.

    Contacts receive the contact-velocity noise; landmarks are static.
    With isotropic contact noise the rotation into the contact frame drops
    out.
    """
    diag = [noise.gyro**2] * 3 + [noise.accel**2] * 3 + [0.0] * 3
    for kind, _ in belief.registry:
        s = noise.contact if kind is PointKind.CONTACT else noise.landmark
        diag += [s**2] * 3
    diag += [noise.gyro_bias**2] * 3 + [noise.accel_bias**2] * 3
    return np.diag(diag)


def discrete_noise(phi: NDArray, Qbar: NDArray, dt: float) -> NDArray:
    """``Q_d ~= Phi Qbar Phi^T dt``."""
    return symmetrize(phi @ Qbar @ phi.T) * dt


def discrete_noise_exact(A: NDArray, Qbar: NDArray, dt: float) -> NDArray:
    """``int_0^dt expm(A s) Qbar expm(A s)^T ds`` by adaptive quadrature.

    Exact for a constant ``A``; meant for tests and comparison only.
    """
    if dt == 0.0:
        return np.zeros_like(Qbar)

    def f(s):
        E = expm(A * s)
        return E @ Qbar @ E.T

    Q, _ = quad_vec(f, 0.0, dt, epsabs=1e-14, epsrel=1e-12)
    return symmetrize(Q)


def robo_world_flip(belief: FilterBelief, convention: Convention) -> FilterBelief:
    """Reinterpret a belief across the state inversion ``X <-> X^-1``.

    Right-invariant errors of one convention are the negated left-invariant
    errors of the other, so the covariance only flips the sign of the
    state/bias cross blocks and the frame tag swaps.
    """
    if belief.convention is convention:
        return belief
    n = belief.X.dim
    P = belief.P.copy()
    P[:n, n:] *= -1.0
    P[n:, :n] *= -1.0
    return replace(
        belief,
        X=inverse(belief.X),
        P=P,
        error_frame=belief.error_frame.flipped(),
        convention=convention,
    )


def propagate(
    belief: FilterBelief,
    imu: ImuSample,
    noise: NoiseParams,
    g: ArrayLike = GRAVITY,
    exact_noise: bool = False,
) -> FilterBelief:
    """Propagate mean and covariance over one IMU sample.

    ``P+ = Phi P Phi^T + Q_d`` with ``Phi`` matching the belief's error frame.
    ``exact_noise`` swaps the ``Q_d`` approximation for quadrature (slow).
    """
    if belief.convention is Convention.ROBO:
        wb = robo_world_flip(belief, Convention.WORLD)
        wb = propagate(wb, imu, noise, g, exact_noise)
        return robo_world_flip(wb, Convention.ROBO)

    w, _ = _bias_corrected(imu, belief.theta)
    G = gammas(w * imu.dt, (0, 1, 2, 3))
    nxt = propagate_mean(belief, imu, g, G)
    Qc = process_noise(belief, noise)
    K = belief.K
    dt = imu.dt
    if belief.error_frame is ErrorFrame.LEFT:
        Phi = phi_left(imu, belief.theta, K)
        if exact_noise:
            Qd = discrete_noise_exact(a_left(imu, belief.theta, K), Qc, dt)
            P = Phi @ belief.P @ Phi.T + Qd
        else:
            P = Phi @ (belief.P + Qc * dt) @ Phi.T
    else:
        Phi = phi_right(nxt.X, belief.X, imu, belief.theta, g, G)
        n = belief.X.dim
        if exact_noise:
            J = np.eye(n + 6)
            J[:n, :n] = adjoint(nxt.X)
            Qd = J @ discrete_noise_exact(a_left(imu, belief.theta, K), Qc, dt) @ J.T
            P = Phi @ belief.P @ Phi.T + Qd
        else:
            # Qc is diagonal, so Ad Qc Ad^T is a scaled outer product
            Ad = adjoint(belief.X)
            q = np.diag(Qc)
            Qr = np.diag(q * dt)
            Qr[:n, :n] = (Ad * (q[:n] * dt)) @ Ad.T
            P = Phi @ (belief.P + Qr) @ Phi.T
    return replace(nxt, P=symmetrize(P))
