"""Lie group primitives for SO(3) and SE_K(3).

An element of SE_K(3) is a rotation ``R`` together with ``K`` translation-like
columns that all share that rotation.  As a dense matrix it reads::

    [ R  c_1 ... c_K ]
    [ 0   I_K        ]

Only ``R`` and the ``(K, 3)`` column array are stored.  Tangent vectors are flat
arrays ordered ``(phi, xi_1, ..., xi_K)`` of length ``3 + 3K``.
"""

from __future__ import annotations

from dataclasses import dataclass
from math import cos, factorial, sin, sqrt

import numpy as np
from numpy.typing import ArrayLike, NDArray

__all__ = [
    "SEK3",
    "skew",
    "vee",
    "gamma",
    "gammas",
    "skew_stack",
    "gamma_series",
    "so3_exp",
    "so3_log",
    "exp_sek3",
    "log_sek3",
    "adjoint",
    "compose",
    "inverse",
    "hat",
    "identity",
    "orthonormalize",
    "SMALL_ANGLE",
]

# Below this rotation angle the Gamma functions are evaluated by their power
# series.  The closed forms for m = 2, 3 cancel catastrophically well above
# 1e-5, so the switch sits much higher and the series carries enough terms.
SMALL_ANGLE = 0.25
_N_SERIES = 9
_LOG_LIMIT = np.pi - 1e-6


def skew(phi: ArrayLike) -> NDArray:
    """Skew-symmetric matrix such that ``skew(a) @ b == np.cross(a, b)``."""
    x, y, z = phi
    return np.array([[0.0, -z, y], [z, 0.0, -x], [-y, x, 0.0]], dtype=float)


def vee(S: NDArray) -> NDArray:
    """Inverse of :func:`skew` (uses the antisymmetric part)."""
    return 0.5 * np.array([S[2, 1] - S[1, 2], S[0, 2] - S[2, 0], S[1, 0] - S[0, 1]])


_I3 = np.eye(3)
_I3.setflags(write=False)

# power-series coefficients of c1 and c2 in -theta^2, per order m
_SERIES = {
    m: (
        tuple(1.0 / factorial(2 * j + 1 + m) for j in range(_N_SERIES))[::-1],
        tuple(1.0 / factorial(2 * j + 2 + m) for j in range(_N_SERIES))[::-1],
    )
    for m in range(4)
}
_INV_FACT = tuple(1.0 / factorial(m) for m in range(4))


def _horner(coeffs, x):
    acc = 0.0
    for c in coeffs:
        acc = acc * x + c
    return acc


def _gamma_coeffs(m: int, theta: float) -> tuple[float, float, float]:
    """Scalars ``(c0, c1, c2)`` with ``Gamma_m = c0 I + c1 K + c2 K^2``, ``K = skew(phi)``."""
    c0 = _INV_FACT[m]
    if theta < SMALL_ANGLE:
        t2 = -theta * theta
        s1, s2 = _SERIES[m]
        return c0, _horner(s1, t2), _horner(s2, t2)
    s, c = sin(theta), cos(theta)
    t2 = theta * theta
    if m == 0:
        return c0, s / theta, (1.0 - c) / t2
    if m == 1:
        return c0, (1.0 - c) / t2, (theta - s) / (t2 * theta)
    if m == 2:
        return c0, (theta - s) / (t2 * theta), (t2 + 2.0 * c - 2.0) / (2.0 * t2 * t2)
    # m == 3
    return (
        c0,
        (t2 + 2.0 * c - 2.0) / (2.0 * t2 * t2),
        (t2 * theta - 6.0 * theta + 6.0 * s) / (6.0 * t2 * t2 * theta),
    )


def gamma(m: int, phi: ArrayLike) -> NDArray:
    """Evaluate ``Gamma_m(phi) = sum_n skew(phi)^n / (n + m)!``.

    ``Gamma_0`` is the SO(3) exponential and ``Gamma_1`` its left Jacobian;
    ``Gamma_2`` and ``Gamma_3`` show up in the double and triple integrals of
    the zero-order-hold discretization.

    Parameters
    ----------
    m : int
        Order, one of 0, 1, 2, 3.
    phi : array_like, shape (3,)
        Rotation vector.

    Raises
    ------
    ValueError
        If ``m`` is not in ``{0, 1, 2, 3}``.
    """
    if m not in (0, 1, 2, 3):
        raise ValueError(f"gamma order must be 0..3, got {m}")
    x, y, z = (float(u) for u in phi)
    xx, yy, zz = x * x, y * y, z * z
    t2 = xx + yy + zz
    c0, c1, c2 = _gamma_coeffs(m, sqrt(t2))
    # K^2 = phi phi^T - theta^2 I
    xy, xz, yz = x * y * c2, x * z * c2, y * z * c2
    d = c0 - c2 * t2
    return np.array(
        [
            [d + c2 * xx, xy - c1 * z, xz + c1 * y],
            [xy + c1 * z, d + c2 * yy, yz - c1 * x],
            [xz - c1 * y, yz + c1 * x, d + c2 * zz],
        ]
    )


def gammas(phi: ArrayLike, orders=(0, 1, 2)) -> list[NDArray]:
    """Several ``Gamma_m(phi)`` sharing one angle evaluation."""
    x, y, z = (float(u) for u in phi)
    xx, yy, zz = x * x, y * y, z * z
    t2 = xx + yy + zz
    theta = sqrt(t2)
    out = []
    for m in orders:
        c0, c1, c2 = _gamma_coeffs(m, theta)
        xy, xz, yz = x * y * c2, x * z * c2, y * z * c2
        d = c0 - c2 * t2
        out.append(
            np.array(
                [
                    [d + c2 * xx, xy - c1 * z, xz + c1 * y],
                    [xy + c1 * z, d + c2 * yy, yz - c1 * x],
                    [xz - c1 * y, yz + c1 * x, d + c2 * zz],
                ]
            )
        )
    return out


def skew_stack(v: NDArray) -> NDArray:
    """``(n, 3, 3)`` skew matrices of the rows of an ``(n, 3)`` array."""
    v = np.asarray(v, dtype=float)
    S = np.zeros((v.shape[0], 3, 3))
    S[:, 0, 1], S[:, 0, 2] = -v[:, 2], v[:, 1]
    S[:, 1, 0], S[:, 1, 2] = v[:, 2], -v[:, 0]
    S[:, 2, 0], S[:, 2, 1] = -v[:, 1], v[:, 0]
    return S


def gamma_series(m: int, phi: ArrayLike, n_terms: int = 31) -> NDArray:
    """Truncated matrix series for ``Gamma_m``; a reference, not a fast path."""
    K = skew(phi)
    out = np.zeros((3, 3))
    Kn = np.eye(3)
    for n in range(n_terms):
        out += Kn / factorial(n + m)
        Kn = Kn @ K
    return out


def so3_exp(phi: ArrayLike) -> NDArray:
    return gamma(0, phi)


def so3_log(R: NDArray) -> NDArray:
    """Rotation vector of ``R`` (angle in ``[0, pi)``).

    Raises
    ------
    ValueError
        If the rotation angle is within 1e-6 of pi, where the axis sign is
        not determined by ``R``.
    """
    w = vee(R)  # sin(theta) * axis
    s = np.linalg.norm(w)
    c = 0.5 * (np.trace(R) - 1.0)
    theta = np.arctan2(s, c)
    if theta >= _LOG_LIMIT:
        raise ValueError(f"rotation angle {theta:.9f} too close to pi for log")
    if theta < 1e-4:
        t2 = theta * theta
        return (1.0 + t2 / 6.0 + 7.0 * t2 * t2 / 360.0) * w
    if theta < 2.5:
        return theta / s * w
    # Near pi the antisymmetric part is small; recover the axis from the
    # symmetric part and use w only for the sign.
    B = 0.5 * (R + R.T) - c * np.eye(3)
    k = int(np.argmax(np.diag(B)))
    axis = B[:, k] / np.sqrt(B[k, k])
    axis /= np.linalg.norm(axis)
    if axis @ w < 0.0:
        axis = -axis
    return theta * axis


@dataclass(frozen=True, eq=False)
class SEK3:
    """Element of SE_K(3): rotation ``R`` and a ``(K, 3)`` array of columns."""

    R: NDArray
    cols: NDArray

    def __post_init__(self):
        R = np.array(self.R, dtype=float)
        cols = np.array(self.cols, dtype=float).reshape(-1, 3)
        if R.shape != (3, 3):
            raise ValueError(f"R must be 3x3, got {R.shape}")
        R.flags.writeable = False
        cols.flags.writeable = False
        object.__setattr__(self, "R", R)
        object.__setattr__(self, "cols", cols)

    @property
    def K(self) -> int:
        return self.cols.shape[0]

    @property
    def dim(self) -> int:
        """Tangent-space dimension ``3 + 3K``."""
        return 3 + 3 * self.K

    def matrix(self) -> NDArray:
        """Dense ``(3+K) x (3+K)`` form, for oracles and debugging."""
        n = 3 + self.K
        M = np.eye(n)
        M[:3, :3] = self.R
        M[:3, 3:] = self.cols.T
        return M

    @classmethod
    def from_matrix(cls, M: NDArray) -> "SEK3":
        return cls(M[:3, :3], M[:3, 3:].T)

    def with_cols(self, cols: ArrayLike) -> "SEK3":
        return SEK3(self.R, cols)


def identity(K: int) -> SEK3:
    return SEK3(np.eye(3), np.zeros((K, 3)))


def hat(xi: ArrayLike) -> NDArray:
    """Dense Lie algebra element ``(3+K) x (3+K)`` of a tangent vector."""
    xi = np.asarray(xi, dtype=float)
    K = _k_of(xi)
    M = np.zeros((3 + K, 3 + K))
    M[:3, :3] = skew(xi[:3])
    M[:3, 3:] = xi[3:].reshape(K, 3).T
    return M


def _k_of(xi: NDArray) -> int:
    if xi.ndim != 1 or xi.size < 3 or xi.size % 3:
        raise ValueError(f"tangent vector must have length 3+3K, got shape {xi.shape}")
    return xi.size // 3 - 1


def exp_sek3(xi: ArrayLike) -> SEK3:
    """Exponential map: ``R = Gamma_0(phi)``, column ``i = Gamma_1(phi) xi_i``."""
    xi = np.asarray(xi, dtype=float)
    K = _k_of(xi)
    phi = xi[:3]
    cols = xi[3:].reshape(K, 3) @ gamma(1, phi).T
    return SEK3(gamma(0, phi), cols)


def log_sek3(X: SEK3) -> NDArray:
    """Logarithm of an SE_K(3) element.

    The rotation part comes from the SO(3) log and each column is mapped back
    through ``Gamma_1(phi)^{-1}``.

    Raises
    ------
    ValueError
        If the rotation angle is at or beyond ``pi - 1e-6``.
    """
    phi = so3_log(X.R)
    if X.K == 0:
        return phi
    xis = np.linalg.solve(gamma(1, phi), X.cols.T).T
    return np.concatenate([phi, xis.ravel()])


def adjoint(X: SEK3) -> NDArray:
    """Adjoint matrix, satisfying ``X hat(xi) X^-1 = hat(Ad_X xi)``."""
    K = X.K
    R = X.R
    n = 3 + 3 * K
    Ad = np.zeros((n, n))
    for i in range(0, n, 3):
        Ad[i : i + 3, i : i + 3] = R
    if K:
        Ad[3:, :3] = (skew_stack(X.cols) @ R).reshape(3 * K, 3)
    return Ad


def compose(X: SEK3, Y: SEK3) -> SEK3:
    """Group product ``X Y``."""
    if X.K != Y.K:
        raise ValueError(f"cannot compose SE_K(3) elements with K={X.K} and K={Y.K}")
    return SEK3(X.R @ Y.R, Y.cols @ X.R.T + X.cols)


def inverse(X: SEK3) -> SEK3:
    return SEK3(X.R.T, -(X.cols @ X.R))


def orthonormalize(R: NDArray) -> NDArray:
    """Nearest rotation matrix (symmetric orthogonalization)."""
    U, _, Vt = np.linalg.svd(R)
    Q = U @ Vt
    if np.linalg.det(Q) < 0.0:
        Q = U @ np.diag([1.0, 1.0, -1.0]) @ Vt
    return Q
