"""Sensor records and their text formats.

A sensor log is UTF-8 CSV with the header ``#inekf-log v1`` and one record
per line::

    t,IMU,wx,wy,wz,ax,ay,az
    t,ENC,a1,...,aM
    t,CONTACT,id,flag
    t,LANDMARK,id,x,y,z
    t,GPS,x,y,z
    t,MAG,x,y,z

Timestamps carry 9 decimals; other floats are written with ``repr`` so a
write/read round trip is exact.  Blank lines and lines starting with ``#``
after the header are ignored.  Ground truth, when present, is written to a
separate CSV next to the log.
"""

from __future__ import annotations

import csv
import io
import math
from dataclasses import dataclass
from pathlib import Path
from typing import Iterable, Union

import numpy as np
from numpy.typing import NDArray

__all__ = [
    "LOG_HEADER",
    "LogFormatError",
    "ImuRecord",
    "EncoderRecord",
    "ContactRecord",
    "LandmarkRecord",
    "GpsRecord",
    "MagRecord",
    "SensorRecord",
    "Truth",
    "format_records",
    "parse_records",
    "write_log",
    "read_log",
    "write_truth",
    "read_truth",
]

LOG_HEADER = "#inekf-log v1"


class LogFormatError(ValueError):
    """Malformed log line; ``lineno`` is 1-based."""

    def __init__(self, lineno: int, msg: str):
        super().__init__(f"line {lineno}: {msg}")
        self.lineno = lineno


def _vec(x) -> NDArray:
    a = np.array(x, dtype=float).reshape(-1)
    a.setflags(write=False)
    return a


@dataclass(frozen=True, eq=False)
class _Vec3Record:
    t: float
    y: NDArray

    def __post_init__(self):
        object.__setattr__(self, "y", _vec(self.y))
        if self.y.shape != (3,):
            raise ValueError("expected a 3-vector")

    def __eq__(self, other):
        return type(other) is type(self) and self.t == other.t and np.array_equal(self.y, other.y)


@dataclass(frozen=True, eq=False)
class ImuRecord:
    t: float
    w: NDArray
    a: NDArray

    def __post_init__(self):
        object.__setattr__(self, "w", _vec(self.w))
        object.__setattr__(self, "a", _vec(self.a))

    def __eq__(self, other):
        return (
            isinstance(other, ImuRecord)
            and self.t == other.t
            and np.array_equal(self.w, other.w)
            and np.array_equal(self.a, other.a)
        )


@dataclass(frozen=True, eq=False)
class EncoderRecord:
    """Joint angles of all legs, concatenated in leg order."""

    t: float
    alpha: NDArray

    def __post_init__(self):
        object.__setattr__(self, "alpha", _vec(self.alpha))

    def __eq__(self, other):
        return isinstance(other, EncoderRecord) and self.t == other.t and np.array_equal(self.alpha, other.alpha)


@dataclass(frozen=True)
class ContactRecord:
    t: float
    id: int
    flag: bool


@dataclass(frozen=True, eq=False)
class LandmarkRecord:
    """Body-frame landmark position."""

    t: float
    id: int
    y: NDArray

    def __post_init__(self):
        object.__setattr__(self, "y", _vec(self.y))

    def __eq__(self, other):
        return (
            isinstance(other, LandmarkRecord)
            and self.t == other.t
            and self.id == other.id
            and np.array_equal(self.y, other.y)
        )


class GpsRecord(_Vec3Record):
    """World-frame position fix."""


class MagRecord(_Vec3Record):
    """Body-frame magnetic field."""


SensorRecord = Union[ImuRecord, EncoderRecord, ContactRecord, LandmarkRecord, GpsRecord, MagRecord]


@dataclass
class Truth:
    """Ground-truth states at the IMU ticks.

    ``feet`` is ``(N, L, 3)`` world foot positions and ``stance`` ``(N, L)``.
    """

    t: NDArray
    R: NDArray
    v: NDArray
    p: NDArray
    bg: NDArray
    ba: NDArray
    feet: NDArray
    stance: NDArray

    def __post_init__(self):
        if np.any(np.diff(self.t) <= 0):
            raise ValueError("truth timestamps must be strictly increasing")


def _f(x: float) -> str:
    return repr(float(x))


def _t(t: float) -> str:
    return f"{t:.9f}"


def format_records(records: Iterable[SensorRecord]) -> str:
    lines = [LOG_HEADER]
    for r in records:
        if isinstance(r, ImuRecord):
            body = ["IMU", *map(_f, r.w), *map(_f, r.a)]
        elif isinstance(r, EncoderRecord):
            body = ["ENC", *map(_f, r.alpha)]
        elif isinstance(r, ContactRecord):
            body = ["CONTACT", str(int(r.id)), "1" if r.flag else "0"]
        elif isinstance(r, LandmarkRecord):
            body = ["LANDMARK", str(int(r.id)), *map(_f, r.y)]
        elif isinstance(r, GpsRecord):
            body = ["GPS", *map(_f, r.y)]
        elif isinstance(r, MagRecord):
            body = ["MAG", *map(_f, r.y)]
        else:
            raise TypeError(f"unknown record {r!r}")
        lines.append(",".join([_t(r.t), *body]))
    return "\n".join(lines) + "\n"


def _floats(fields, n, lineno):
    if n is not None and len(fields) != n:
        raise LogFormatError(lineno, f"expected {n} values, got {len(fields)}")
    try:
        vals = [float(x) for x in fields]
    except ValueError as e:
        raise LogFormatError(lineno, str(e)) from None
    if not all(math.isfinite(x) for x in vals):
        raise LogFormatError(lineno, "non-finite value")
    return vals


def _int(s, lineno):
    try:
        return int(s)
    except ValueError:
        raise LogFormatError(lineno, f"bad id {s!r}") from None


def parse_records(text: str) -> list:
    """Parse log text.

    Raises
    ------
    LogFormatError
        On a missing header, an unknown tag, a wrong field count or
        decreasing timestamps.
    """
    lines = text.splitlines()
    if not lines or lines[0].strip() != LOG_HEADER:
        raise LogFormatError(1, f"missing header {LOG_HEADER!r}")
    out: list = []
    last = -math.inf
    for lineno, line in enumerate(lines[1:], start=2):
        s = line.strip()
        if not s or s.startswith("#"):
            continue
        f = [x.strip() for x in s.split(",")]
        if len(f) < 2:
            raise LogFormatError(lineno, "expected 't,TAG,...'")
        (t,) = _floats(f[:1], 1, lineno)
        if t < last:
            raise LogFormatError(lineno, f"timestamp {t} goes backwards")
        last = t
        tag, rest = f[1].upper(), f[2:]
        if tag == "IMU":
            v = _floats(rest, 6, lineno)
            out.append(ImuRecord(t, v[:3], v[3:]))
        elif tag == "ENC":
            if not rest:
                raise LogFormatError(lineno, "ENC needs at least one angle")
            out.append(EncoderRecord(t, _floats(rest, None, lineno)))
        elif tag == "CONTACT":
            if len(rest) != 2 or rest[1] not in ("0", "1"):
                raise LogFormatError(lineno, "CONTACT expects id,flag with flag 0 or 1")
            out.append(ContactRecord(t, _int(rest[0], lineno), rest[1] == "1"))
        elif tag == "LANDMARK":
            if len(rest) != 4:
                raise LogFormatError(lineno, "LANDMARK expects id,x,y,z")
            out.append(LandmarkRecord(t, _int(rest[0], lineno), _floats(rest[1:], 3, lineno)))
        elif tag == "GPS":
            out.append(GpsRecord(t, _floats(rest, 3, lineno)))
        elif tag == "MAG":
            out.append(MagRecord(t, _floats(rest, 3, lineno)))
        else:
            raise LogFormatError(lineno, f"unknown record type {f[1]!r}")
    return out


def write_log(path, records: Iterable[SensorRecord]) -> None:
    Path(path).write_text(format_records(records), encoding="utf-8")


def read_log(path) -> list:
    return parse_records(Path(path).read_text(encoding="utf-8"))


_TRUTH_COLS = ["t", "qw", "qx", "qy", "qz", "vx", "vy", "vz", "px", "py", "pz",
               "bgx", "bgy", "bgz", "bax", "bay", "baz"]  # fmt: skip


def write_truth(path, truth: Truth) -> None:
    """Truth CSV: time, attitude quaternion, v, p, biases, then per-foot xyz and stance."""
    from .qekf import rot_to_quat

    L = truth.feet.shape[1]
    cols = list(_TRUTH_COLS)
    for i in range(L):
        cols += [f"foot{i}_x", f"foot{i}_y", f"foot{i}_z", f"stance{i}"]
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(cols)
    for k in range(len(truth.t)):
        q = rot_to_quat(truth.R[k])
        row = [_t(truth.t[k])] + [_f(x) for x in (*q, *truth.v[k], *truth.p[k], *truth.bg[k], *truth.ba[k])]
        for i in range(L):
            row += [_f(x) for x in truth.feet[k, i]] + [str(int(truth.stance[k, i]))]
        w.writerow(row)
    Path(path).write_text(buf.getvalue(), encoding="utf-8")


def read_truth(path) -> Truth:
    from .qekf import quat_to_rot

    with open(path, encoding="utf-8", newline="") as fh:
        rows = list(csv.reader(fh))
    header, data = rows[0], np.array(rows[1:], dtype=float).reshape(-1, len(rows[0]))
    L = (len(header) - len(_TRUTH_COLS)) // 4
    R = np.array([quat_to_rot(q) for q in data[:, 1:5]])
    feet = np.empty((len(data), L, 3))
    stance = np.empty((len(data), L), bool)
    for i in range(L):
        c = len(_TRUTH_COLS) + 4 * i
        feet[:, i] = data[:, c : c + 3]
        stance[:, i] = data[:, c + 3] > 0.5
    return Truth(data[:, 0], R, data[:, 5:8], data[:, 8:11], data[:, 11:14], data[:, 14:17], feet, stance)
