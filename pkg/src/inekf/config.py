"""Run configuration: a flat ``key = value`` text file.

Every key has a default, so an empty file is a valid configuration.  Lines
are ``key = value``; ``#`` starts a comment; vectors are comma separated.
Angles whose key ends in ``_deg`` are given in degrees.

Noise densities and initial standard deviations default to the values used
for the legged-robot experiments (gyro 0.002 rad/s, accelerometer 0.04
m/s^2, contact 0.05 m/s, encoder 1 deg; initial orientation 30 deg,
velocity 1.0 m/s, position 0.1 m, gyro bias 0.005 rad/s, accelerometer bias
0.05 m/s^2).
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from pathlib import Path

from .dynamics import NoiseParams
from .filters import FilterSettings
from .sim import TrajectorySpec

__all__ = ["ConfigError", "Config", "DEFAULTS", "parse_config", "load_config", "default_config_text"]


class ConfigError(ValueError):
    """Malformed configuration; ``lineno`` is 1-based (0 when not line specific)."""

    def __init__(self, lineno: int, msg: str):
        super().__init__(f"line {lineno}: {msg}" if lineno else msg)
        self.lineno = lineno


def _bool(s: str) -> bool:
    v = s.strip().lower()
    if v in ("1", "true", "yes", "on"):
        return True
    if v in ("0", "false", "no", "off"):
        return False
    raise ValueError(f"expected a boolean, got {s!r}")


def _floats(n: int | None):
    def conv(s: str) -> tuple:
        parts = [p for p in s.replace(" ", "").split(",") if p]
        vals = tuple(float(p) for p in parts)
        if n is not None and len(vals) != n:
            raise ValueError(f"expected {n} comma-separated numbers, got {len(vals)}")
        return vals

    conv.__name__ = f"floats{n or ''}"
    return conv


def _nonneg(s: str) -> float:
    v = float(s)
    if not (v >= 0.0 and math.isfinite(v)):
        raise ValueError(f"expected a finite value >= 0, got {s!r}")
    return v


def _pos(s: str) -> float:
    v = float(s)
    if not (v > 0.0 and math.isfinite(v)):
        raise ValueError(f"expected a finite value > 0, got {s!r}")
    return v


def _optional_float(s: str):
    return None if s.strip().lower() in ("", "none", "off") else _pos(s)


# key -> (converter, default, help)
DEFAULTS: dict = {
    # sensor noise (continuous-time densities; encoder per sample)
    "noise.gyro": (_nonneg, 0.002, "gyroscope noise, rad/s"),
    "noise.accel": (_nonneg, 0.04, "accelerometer noise, m/s^2"),
    "noise.gyro_bias": (_nonneg, 0.001, "gyroscope bias random walk, rad/s^2"),
    "noise.accel_bias": (_nonneg, 0.001, "accelerometer bias random walk, m/s^3"),
    "noise.contact": (_nonneg, 0.05, "contact velocity noise, m/s"),
    "noise.encoder_deg": (_nonneg, 1.0, "joint encoder noise, deg"),
    # prior (decoupled coordinates, shared by all filters)
    "init.orientation_deg": (_nonneg, 30.0, "initial orientation std, deg"),
    "init.velocity": (_nonneg, 1.0, "initial velocity std, m/s"),
    "init.position": (_nonneg, 0.1, "initial position std, m"),
    "init.gyro_bias": (_nonneg, 0.005, "initial gyroscope bias std, rad/s"),
    "init.accel_bias": (_nonneg, 0.05, "initial accelerometer bias std, m/s^2"),
    "init.rpy_deg": (_floats(3), (0.0, 0.0, 0.0), "initial roll, pitch, yaw when no truth file is given"),
    "init.v": (_floats(3), (0.0, 0.0, 0.0), "initial velocity when no truth file is given"),
    "init.p": (_floats(3), (0.0, 0.0, 0.7), "initial position when no truth file is given"),
    # filter
    "filter.estimate_bias": (_bool, True, "augment the state with IMU biases"),
    "filter.gate": (_optional_float, None, "Mahalanobis gate on updates (none = off)"),
    "filter.n_confirm": (int, 2, "consecutive equal contact flags needed to switch"),
    "filter.reortho_every": (int, 256, "re-orthonormalize the rotation every N steps (0 = never)"),
    "filter.landmark_noise": (_nonneg, 0.05, "landmark measurement std, m"),
    "filter.gps_noise": (_nonneg, 0.5, "GPS position std, m"),
    "filter.mag_noise": (_nonneg, 0.01, "magnetometer std"),
    "filter.mag_field": (_floats(3), (0.2, 0.0, -0.4), "world magnetic field"),
    # physical setup
    "gravity": (_floats(3), (0.0, 0.0, -9.81), "gravity vector, m/s^2"),
    "leg.lengths": (_floats(3), (0.12, 0.35, 0.40), "hip offset, thigh and shin lengths, m"),
    "leg.hip_offset": (_floats(3), (0.0, 0.1, -0.05), "left hip position in the body frame (right is mirrored)"),
    # simulator
    "sim.duration": (_pos, 10.0, "s"),
    "sim.imu_rate": (_pos, 200.0, "Hz"),
    "sim.encoder_rate": (_pos, 200.0, "Hz, must divide the IMU rate"),
    "sim.step_period": (_pos, 0.4, "s per step"),
    "sim.stance_fraction": (_pos, 0.6, "fraction of the gait cycle a foot is down, in (0, 1]"),
    "sim.speed_start": (float, 0.0, "m/s"),
    "sim.speed_end": (float, 0.3, "m/s"),
    "sim.ramp_start": (_nonneg, 0.5, "s"),
    "sim.ramp_duration": (_nonneg, 2.0, "s"),
    "sim.heading_deg": (float, 0.0, "walking direction, deg"),
    "sim.body_height": (_pos, 0.7, "m"),
    "sim.step_height": (_nonneg, 0.06, "swing apex, m"),
    "sim.stance_width": (_nonneg, 0.05, "extra lateral foot offset, m"),
    "sim.sway": (_nonneg, 0.02, "lateral sway amplitude, m"),
    "sim.bob": (_nonneg, 0.01, "vertical bob amplitude, m"),
    "sim.roll_amp_deg": (_nonneg, math.degrees(0.03), "deg"),
    "sim.pitch_amp_deg": (_nonneg, math.degrees(0.03), "deg"),
    "sim.yaw_amp_deg": (_nonneg, math.degrees(0.02), "deg"),
    "sim.bias_gyro": (_floats(3), (0.0, 0.0, 0.0), "initial true gyroscope bias"),
    "sim.bias_accel": (_floats(3), (0.0, 0.0, 0.0), "initial true accelerometer bias"),
    "sim.bias_walk": (_bool, True, "let the true biases random-walk"),
    "sim.slip": (_nonneg, 0.0, "stance-foot slip velocity std, m/s"),
    "sim.landmark_rate": (_nonneg, 0.0, "Hz (0 = none)"),
    "sim.gps_rate": (_nonneg, 0.0, "Hz (0 = none)"),
    "sim.mag_rate": (_nonneg, 0.0, "Hz (0 = none)"),
    # experiments
    "seed": (int, 0, "base random seed"),
    "mc.runs": (int, 100, "Monte Carlo runs per filter"),
    "mc.euler_range_deg": (_nonneg, 30.0, "uniform initial Euler-angle offset, deg"),
    "mc.vel_range": (_nonneg, 1.0, "uniform initial velocity offset, m/s"),
    "mc.tilt_tol_deg": (_pos, 2.0, "roll/pitch convergence threshold, deg"),
    "mc.vel_tol": (_pos, 0.05, "body velocity convergence threshold, m/s"),
    "mc.hold": (_nonneg, 0.2, "time the thresholds must hold, s"),
    "mc.jobs": (int, 1, "worker processes"),
    "lintest.duration": (_pos, 1.0, "s"),
    "lintest.rate": (_pos, 1000.0, "IMU rate, Hz"),
    "lintest.s_values": (_floats(None), tuple(k * math.pi / 8 for k in range(5)), "orientation offsets, rad"),
    "covsample.t_sample": (_pos, 8.0, "sampling time, s"),
    "covsample.speed": (float, 1.0, "walking speed, m/s"),
    "covsample.yaw_std_deg": (_nonneg, 360.0, "initial yaw std, deg"),
    "covsample.n": (int, 10000, "samples per filter"),
}


@dataclass
class Config:
    """Parsed configuration; missing keys fall back to :data:`DEFAULTS`."""

    values: dict = field(default_factory=dict)

    def __getitem__(self, key: str):
        if key in self.values:
            return self.values[key]
        return DEFAULTS[key][1]

    def noise(self) -> NoiseParams:
        return NoiseParams(
            gyro=self["noise.gyro"],
            accel=self["noise.accel"],
            gyro_bias=self["noise.gyro_bias"],
            accel_bias=self["noise.accel_bias"],
            contact=self["noise.contact"],
            encoder=math.radians(self["noise.encoder_deg"]),
        )

    def settings(self) -> FilterSettings:
        return FilterSettings(
            noise=self.noise(),
            init_std_orientation=math.radians(self["init.orientation_deg"]),
            init_std_velocity=self["init.velocity"],
            init_std_position=self["init.position"],
            init_std_gyro_bias=self["init.gyro_bias"],
            init_std_accel_bias=self["init.accel_bias"],
            estimate_bias=self["filter.estimate_bias"],
            gravity=self["gravity"],
            leg_lengths=self["leg.lengths"],
            hip_offset=self["leg.hip_offset"],
            gate=self["filter.gate"],
            n_confirm=self["filter.n_confirm"],
            reortho_every=self["filter.reortho_every"],
            landmark_noise=self["filter.landmark_noise"],
            gps_noise=self["filter.gps_noise"],
            mag_field=self["filter.mag_field"],
            mag_noise=self["filter.mag_noise"],
        )

    def trajectory(self, **overrides) -> TrajectorySpec:
        noise = self.noise()
        if not self["sim.bias_walk"]:
            noise = noise.without_bias()
        kw = dict(
            duration=self["sim.duration"],
            imu_rate=self["sim.imu_rate"],
            encoder_rate=self["sim.encoder_rate"],
            step_period=self["sim.step_period"],
            stance_fraction=self["sim.stance_fraction"],
            speed_start=self["sim.speed_start"],
            speed_end=self["sim.speed_end"],
            ramp_start=self["sim.ramp_start"],
            ramp_duration=self["sim.ramp_duration"],
            heading=math.radians(self["sim.heading_deg"]),
            body_height=self["sim.body_height"],
            step_height=self["sim.step_height"],
            stance_width=self["sim.stance_width"],
            sway=self["sim.sway"],
            bob=self["sim.bob"],
            roll_amp=math.radians(self["sim.roll_amp_deg"]),
            pitch_amp=math.radians(self["sim.pitch_amp_deg"]),
            yaw_amp=math.radians(self["sim.yaw_amp_deg"]),
            leg_lengths=self["leg.lengths"],
            hip_offset=self["leg.hip_offset"],
            noise=noise,
            bias_gyro=self["sim.bias_gyro"],
            bias_accel=self["sim.bias_accel"],
            slip=self["sim.slip"],
            gravity=self["gravity"],
            landmark_rate=self["sim.landmark_rate"],
            landmark_noise=self["filter.landmark_noise"],
            gps_rate=self["sim.gps_rate"],
            gps_noise=self["filter.gps_noise"],
            mag_rate=self["sim.mag_rate"],
            mag_field=self["filter.mag_field"],
            mag_noise=self["filter.mag_noise"],
            seed=self["seed"],
        )
        kw.update(overrides)
        return TrajectorySpec(**kw)


def parse_config(text: str) -> Config:
    """Parse configuration text.

    Raises
    ------
    ConfigError
        Unknown key, repeated key, missing ``=`` or a bad value; the message
        carries the line number.
    """
    values: dict = {}
    for lineno, raw in enumerate(text.splitlines(), start=1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ConfigError(lineno, f"expected 'key = value', got {raw.strip()!r}")
        key, val = (x.strip() for x in line.split("=", 1))
        if key not in DEFAULTS:
            raise ConfigError(lineno, f"unknown key {key!r}")
        if key in values:
            raise ConfigError(lineno, f"duplicate key {key!r}")
        conv = DEFAULTS[key][0]
        try:
            values[key] = conv(val)
        except ValueError as e:
            raise ConfigError(lineno, f"{key}: {e}") from None
    cfg = Config(values)
    try:
        cfg.settings()
        cfg.trajectory()
    except ValueError as e:
        raise ConfigError(0, f"inconsistent configuration: {e}") from None
    return cfg


def load_config(path) -> Config:
    return parse_config(Path(path).read_text(encoding="utf-8"))


def _fmt(v) -> str:
    if isinstance(v, bool):
        return "true" if v else "false"
    if v is None:
        return "none"
    if isinstance(v, tuple):
        return ", ".join(repr(float(x)) for x in v)
    return repr(v)


def default_config_text() -> str:
    """Every key with its default, one per line, ready to edit."""
    lines = []
    for key, (_, default, help_) in DEFAULTS.items():
        lines.append(f"{key} = {_fmt(default)}  # {help_}")
    return "\n".join(lines) + "\n"
