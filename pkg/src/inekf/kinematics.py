"""Forward kinematics of the legs.

Any object with ``n_joints``, ``position``, ``orientation`` and ``jacobian``
works as a kinematics model.  :class:`SerialLeg` is a revolute chain used by
the simulator; the default geometry is a hip-yaw, hip-pitch, knee-pitch leg.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Protocol, Sequence

from math import cos, sin

import numpy as np
from numpy.typing import ArrayLike, NDArray

__all__ = [
    "KinematicsModel",
    "SerialLeg",
    "IKError",
    "default_leg",
    "fk_position",
    "fk_orientation",
    "fk_jacobian",
    "position_jacobian",
    "numerical_jacobian",
    "inverse_kinematics",
]


class KinematicsModel(Protocol):
    n_joints: int

    def position(self, alpha: NDArray) -> NDArray: ...

    def orientation(self, alpha: NDArray) -> NDArray: ...

    def jacobian(self, alpha: NDArray) -> NDArray: ...


class IKError(RuntimeError):
    pass


def _rodrigues(ax, q):
    """Rotation by ``q`` about the unit axis ``ax``, as a row-major 9-tuple."""
    x, y, z = ax
    s, c = sin(q), cos(q)
    C = 1.0 - c
    return (
        c + x * x * C, x * y * C - z * s, x * z * C + y * s,
        y * x * C + z * s, c + y * y * C, y * z * C - x * s,
        z * x * C - y * s, z * y * C + x * s, c + z * z * C,
    )  # fmt: skip


def _mul(A, B):
    a0, a1, a2, a3, a4, a5, a6, a7, a8 = A
    b0, b1, b2, b3, b4, b5, b6, b7, b8 = B
    return (
        a0 * b0 + a1 * b3 + a2 * b6, a0 * b1 + a1 * b4 + a2 * b7, a0 * b2 + a1 * b5 + a2 * b8,
        a3 * b0 + a4 * b3 + a5 * b6, a3 * b1 + a4 * b4 + a5 * b7, a3 * b2 + a4 * b5 + a5 * b8,
        a6 * b0 + a7 * b3 + a8 * b6, a6 * b1 + a7 * b4 + a8 * b7, a6 * b2 + a7 * b5 + a8 * b8,
    )  # fmt: skip


def _apply(A, v):
    x, y, z = v
    return (A[0] * x + A[1] * y + A[2] * z, A[3] * x + A[4] * y + A[5] * z, A[6] * x + A[7] * y + A[8] * z)


@dataclass(frozen=True)
class SerialLeg:
    """Revolute serial chain expressed in the IMU (body) frame.

    Joint ``i`` rotates about ``axes[i]`` (in the frame of the previous link)
    and is followed by the link offset ``links[i]``.  With all joints at zero
    the contact point sits at ``base + sum(links)``.
    """

    base: NDArray
    axes: NDArray
    links: NDArray
    name: str = field(default="leg", compare=False)

    def __post_init__(self):
        base = np.asarray(self.base, float).reshape(3)
        axes = np.asarray(self.axes, float).reshape(-1, 3)
        links = np.asarray(self.links, float).reshape(-1, 3)
        if axes.shape != links.shape:
            raise ValueError("need one link offset per joint axis")
        axes = axes / np.linalg.norm(axes, axis=1, keepdims=True)
        object.__setattr__(self, "base", base)
        object.__setattr__(self, "axes", axes)
        object.__setattr__(self, "links", links)
        object.__setattr__(self, "_base_t", tuple(base.tolist()))
        object.__setattr__(self, "_axes_t", [tuple(a) for a in axes.tolist()])
        object.__setattr__(self, "_links_t", [tuple(l) for l in links.tolist()])

    @property
    def n_joints(self) -> int:
        return self.axes.shape[0]

    def _check(self, alpha) -> NDArray:
        alpha = np.asarray(alpha, float)
        if alpha.shape != (self.n_joints,):
            raise ValueError(f"expected {self.n_joints} joint angles, got shape {alpha.shape}")
        return alpha

    def _chain(self, alpha):
        """Joint origins, world-aligned joint axes, contact position and orientation.

        Works on plain float tuples (row-major 3x3): for chains this short the
        per-call overhead of numpy dominates the arithmetic.
        """
        R = (1.0, 0.0, 0.0, 0.0, 1.0, 0.0, 0.0, 0.0, 1.0)
        px, py, pz = self._base_t
        origins, axes = [], []
        for ax, link, q in zip(self._axes_t, self._links_t, alpha.tolist()):
            origins.append((px, py, pz))
            axes.append(_apply(R, ax))
            R = _mul(R, _rodrigues(ax, q))
            dx, dy, dz = _apply(R, link)
            px, py, pz = px + dx, py + dy, pz + dz
        return origins, axes, (px, py, pz), R

    def position(self, alpha: ArrayLike) -> NDArray:
        return np.array(self._chain(self._check(alpha))[2])

    def orientation(self, alpha: ArrayLike) -> NDArray:
        return np.array(self._chain(self._check(alpha))[3]).reshape(3, 3)

    def jacobian(self, alpha: ArrayLike) -> NDArray:
        return self.position_jacobian(alpha)[1]

    def position_jacobian(self, alpha: ArrayLike) -> tuple[NDArray, NDArray]:
        """Contact position and its Jacobian from one pass over the chain."""
        origins, axes, p, _ = self._chain(self._check(alpha))
        px, py, pz = p
        J = [[], [], []]
        # column i is z_i x (p - o_i)
        for (ox, oy, oz), (zx, zy, zz) in zip(origins, axes):
            dx, dy, dz = px - ox, py - oy, pz - oz
            J[0].append(zy * dz - zz * dy)
            J[1].append(zz * dx - zx * dz)
            J[2].append(zx * dy - zy * dx)
        return np.array(p), np.array(J)


def default_leg(
    side: int = 1,
    lengths: Sequence[float] = (0.12, 0.35, 0.40),
    hip: Sequence[float] = (0.0, 0.1, -0.05),
) -> SerialLeg:
    """Hip-yaw, hip-pitch, knee-pitch leg on side ``+1`` (left) or ``-1`` (right).

    The first link is a lateral hip offset, the other two hang straight down
    at zero joint angles.
    """
    if side not in (1, -1):
        raise ValueError("side must be +1 or -1")
    l1, l2, l3 = lengths
    base = np.array([hip[0], side * hip[1], hip[2]])
    axes = [[0, 0, 1], [0, 1, 0], [0, 1, 0]]
    links = [[0.0, side * l1, 0.0], [0.0, 0.0, -l2], [0.0, 0.0, -l3]]
    return SerialLeg(base, axes, links, name="left" if side > 0 else "right")


def position_jacobian(model: KinematicsModel, alpha: ArrayLike) -> tuple[NDArray, NDArray]:
    """``(h_p(alpha), J_p(alpha))``, in one chain pass when the model supports it."""
    f = getattr(model, "position_jacobian", None)
    if f is not None:
        return f(alpha)
    return model.position(alpha), model.jacobian(alpha)


def fk_position(model: KinematicsModel, alpha: ArrayLike) -> NDArray:
    return model.position(alpha)


def fk_orientation(model: KinematicsModel, alpha: ArrayLike) -> NDArray:
    return model.orientation(alpha)


def fk_jacobian(model: KinematicsModel, alpha: ArrayLike) -> NDArray:
    return model.jacobian(alpha)


def numerical_jacobian(model: KinematicsModel, alpha: ArrayLike, h: float = 1e-6) -> NDArray:
    """Central-difference Jacobian of the contact position."""
    alpha = np.asarray(alpha, float)
    J = np.empty((3, alpha.size))
    for i in range(alpha.size):
        e = np.zeros_like(alpha)
        e[i] = h
        J[:, i] = (model.position(alpha + e) - model.position(alpha - e)) / (2 * h)
    return J


def inverse_kinematics(
    model: KinematicsModel,
    target: ArrayLike,
    alpha0: ArrayLike | None = None,
    damping: float = 1e-4,
    tol: float = 1e-12,
    max_iter: int = 200,
    max_step: float = 0.5,
) -> NDArray:
    """Joint angles placing the contact point at ``target`` (body frame).

    Damped least squares, warm-started from ``alpha0``, with the joint step
    clipped to ``max_step`` radians.

    Raises
    ------
    IKError
        If the residual does not drop below ``sqrt(tol)`` (target out of
        reach or a bad starting point).
    """
    target = np.asarray(target, float)
    alpha = np.zeros(model.n_joints) if alpha0 is None else np.array(alpha0, float)
    lam2 = damping**2
    for _ in range(max_iter):
        h, J = position_jacobian(model, alpha)
        err = target - h
        e2 = err @ err
        if e2 < tol * tol:
            return alpha
        step = J.T @ np.linalg.solve(J @ J.T + lam2 * np.eye(3), err)
        norm = np.linalg.norm(step)
        if norm > max_step:
            step *= max_step / norm
        alpha = alpha + step
    err = target - model.position(alpha)
    if err @ err > tol:
        raise IKError(f"IK did not converge, residual {np.linalg.norm(err):.3e} m")
    return alpha
